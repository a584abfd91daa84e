//! Deterministic mini-batch SGD on a linear regressor.
//!
//! Weights are IEEE-754 binary64 and every update is a plain sequence of
//! adds and multiplies with no fused operations, so a stage output is
//! bit-identical everywhere. Weight blobs encode as a `u64` length followed
//! by each weight's `f64` bit pattern in big-endian order.

use serde::{Deserialize, Serialize};

use super::{UsefulWork, WorkError};
use crate::codec::{Reader, Writer};
use crate::hashcore::{derive_epoch_seed, hash, shuffle, Digest256, Seed, SplitMix64};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(pub Vec<f64>);

impl WeightVector {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u64(self.0.len() as u64);
        for v in &self.0 {
            w.f64(*v);
        }
        w.finish()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, WorkError> {
        let mut r = Reader::new(buf);
        let n = r.u64()? as usize;
        if n > buf.len() / 8 {
            return Err(WorkError::InvalidTask(format!("weight length {n} exceeds blob")));
        }
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            v.push(r.f64()?);
        }
        r.finish()?;
        Ok(WeightVector(v))
    }

    pub fn summary(&self) -> Digest256 {
        hash(&self.to_bytes())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Mean squared error.
    Mse,
}

/// Training environment: initial weights, learning rate, loss, batch count and epoch budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingEnv {
    pub w0: WeightVector,
    pub eta: f64,
    pub loss: Loss,
    /// Number of batches per epoch (a count, not a size).
    pub batches: u32,
    pub epochs: u32,
    pub tau: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlTaskSpec {
    pub dataset_id: Digest256,
    pub n_samples: u32,
    pub env: TrainingEnv,
}

impl MlTaskSpec {
    pub fn validate(&self) -> Result<(), WorkError> {
        let e = &self.env;
        if e.tau == 0 || e.epochs == 0 || e.epochs % e.tau != 0 {
            return Err(WorkError::InvalidTask(format!(
                "epochs ({}) must be a positive multiple of tau ({})",
                e.epochs, e.tau
            )));
        }
        if e.batches == 0 || self.n_samples < e.batches {
            return Err(WorkError::InvalidTask(format!(
                "need 1 <= batches ({}) <= n_samples ({})",
                e.batches, self.n_samples
            )));
        }
        if !e.eta.is_finite() || !e.w0.is_finite() {
            return Err(WorkError::InvalidTask("non-finite hyperparameters".into()));
        }
        Ok(())
    }

    pub fn stages(&self) -> u32 {
        self.env.epochs / self.env.tau
    }
}

/// Row-major regression dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.features..(i + 1) * self.features]
    }

    /// The fixed two-feature reference set: 64 points of `y = 1.5 x1 - 2 x2 + 0.5 + noise`.
    pub fn reference() -> Self {
        let mut rng = SplitMix64::new(0x5eed_da7a);
        let n = 64;
        let mut x = Vec::with_capacity(2 * n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let x1 = rng.next_f64() * 2.0 - 1.0;
            let x2 = rng.next_f64() * 2.0 - 1.0;
            let noise = (rng.next_f64() - 0.5) * 0.1;
            x.push(x1);
            x.push(x2);
            y.push(1.5 * x1 - 2.0 * x2 + 0.5 + noise);
        }
        Dataset { features: 2, x, y }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u64(self.len() as u64).u64(self.features as u64);
        for v in &self.x {
            w.f64(*v);
        }
        for v in &self.y {
            w.f64(*v);
        }
        w.finish()
    }

    pub fn id(&self) -> Digest256 {
        hash(&self.to_bytes())
    }
}

/// A training task: spec plus the dataset it refers to.
#[derive(Clone, Debug)]
pub struct MlTask {
    pub spec: MlTaskSpec,
    pub data: Dataset,
}

impl MlTask {
    pub fn new(spec: MlTaskSpec, data: Dataset) -> Result<Self, WorkError> {
        spec.validate()?;
        if spec.dataset_id != data.id() {
            return Err(WorkError::InvalidTask("dataset id does not match contents".into()));
        }
        if spec.n_samples as usize != data.len() {
            return Err(WorkError::InvalidTask("n_samples does not match dataset".into()));
        }
        if spec.env.w0.0.len() != data.features + 1 {
            return Err(WorkError::Shape(format!(
                "w0 has {} entries, model needs {}",
                spec.env.w0.0.len(),
                data.features + 1
            )));
        }
        Ok(MlTask { spec, data })
    }

    /// Reference task over [`Dataset::reference`] with the given epoch budget.
    pub fn reference(epochs: u32, tau: u32) -> Result<Self, WorkError> {
        let data = Dataset::reference();
        let spec = MlTaskSpec {
            dataset_id: data.id(),
            n_samples: data.len() as u32,
            env: TrainingEnv {
                w0: WeightVector(vec![0.0; data.features + 1]),
                eta: 0.05,
                loss: Loss::Mse,
                batches: 8,
                epochs,
                tau,
            },
        };
        MlTask::new(spec, data)
    }

    fn predict(&self, w: &[f64], i: usize) -> f64 {
        let row = self.data.row(i);
        let mut acc = w[self.data.features];
        for (wj, xj) in w.iter().zip(row) {
            acc += wj * xj;
        }
        acc
    }

    pub fn loss(&self, w: &WeightVector) -> f64 {
        let n = self.data.len();
        let mut total = 0.0;
        for i in 0..n {
            let r = self.predict(&w.0, i) - self.data.y[i];
            total += r * r;
        }
        total / n as f64
    }

    /// One stage: `tau` epochs; epoch `e` shuffles with `hash(seed || e)` and walks `b` batches.
    pub fn train_stage(&self, w_in: &WeightVector, seed: Seed) -> Result<WeightVector, WorkError> {
        let d = self.data.features;
        if w_in.0.len() != d + 1 {
            return Err(WorkError::Shape(format!(
                "weights have {} entries, model needs {}",
                w_in.0.len(),
                d + 1
            )));
        }
        let env = &self.spec.env;
        let n = self.data.len();
        let b = env.batches as usize;
        let mut w = w_in.0.clone();
        let mut grad = vec![0.0; d + 1];
        for epoch in 0..env.tau as u64 {
            let order = shuffle(n, derive_epoch_seed(seed, epoch));
            for k in 0..b {
                let batch = &order[k * n / b..(k + 1) * n / b];
                grad.iter_mut().for_each(|g| *g = 0.0);
                for &i in batch {
                    let r = self.predict(&w, i) - self.data.y[i];
                    for (g, xj) in grad.iter_mut().zip(self.data.row(i)) {
                        *g += r * xj;
                    }
                    grad[d] += r;
                }
                let scale = 2.0 / batch.len() as f64;
                for (wj, g) in w.iter_mut().zip(&grad) {
                    *wj -= env.eta * (scale * g);
                }
                if !w.iter().all(|v| v.is_finite()) {
                    return Err(WorkError::Diverged { epoch });
                }
            }
        }
        Ok(WeightVector(w))
    }
}

impl UsefulWork for MlTask {
    fn compute_stage(&self, input: &[u8], seed: Seed) -> Result<Vec<u8>, WorkError> {
        let w = WeightVector::from_bytes(input)?;
        Ok(self.train_stage(&w, seed)?.to_bytes())
    }
}
