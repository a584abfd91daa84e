//! Masked block matrix multiplication.
//!
//! The requester hides `X` and `Y` behind low-rank masks, `X' = X + E` and
//! `Y' = Y + F`, and the prover computes `Z' = X'Y'` by accumulating one
//! block-column/block-row product per step in an order fixed by the stage seed:
//!
//! ```text
//! Z'(0) = 0
//! Z'(l)[i][j] = Z'(l-1)[i][j] + X'[i][a_l] * Y'[a_l][j]      l = 1..m/r
//! ```
//!
//! The final product does not depend on the order, but every intermediate does,
//! which is what binds the recorded trace to a particular template block.

use std::fmt::Debug;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use super::{UsefulWork, WorkError};
use crate::codec::{DecodeError, Reader, Writer};
use crate::hashcore::{hash, shuffle, Digest256, Seed, SplitMix64};

pub trait Element:
    Copy + Debug + PartialEq + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self>
{
    fn zero() -> Self;
    fn encode(&self, w: &mut Writer);
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError>;
}

impl Element for i64 {
    fn zero() -> Self {
        0
    }
    fn encode(&self, w: &mut Writer) {
        w.u64(*self as u64);
    }
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(r.u64()? as i64)
    }
}

impl Element for f64 {
    fn zero() -> Self {
        0.0
    }
    fn encode(&self, w: &mut Writer) {
        w.f64(*self);
    }
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.f64()
    }
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Element> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, WorkError> {
        if data.len() != rows * cols {
            return Err(WorkError::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    fn same_shape(&self, other: &Self, what: &str) -> Result<(), WorkError> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(WorkError::Shape(format!(
                "{what}: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self, WorkError> {
        self.same_shape(other, "add")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| *a + *b).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    pub fn sub(&self, other: &Self) -> Result<Self, WorkError> {
        self.same_shape(other, "sub")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| *a - *b).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    /// Plain triple-loop product.
    pub fn matmul(&self, other: &Self) -> Result<Self, WorkError> {
        if self.cols != other.rows {
            return Err(WorkError::Shape(format!(
                "matmul: {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                for j in 0..other.cols {
                    let idx = i * other.cols + j;
                    out.data[idx] = out.data[idx] + a * other.get(k, j);
                }
            }
        }
        Ok(out)
    }

    pub fn encode(&self, w: &mut Writer) {
        w.u64(self.rows as u64).u64(self.cols as u64);
        for v in &self.data {
            v.encode(w);
        }
    }

    pub fn decode(r: &mut Reader<'_>) -> Result<Self, WorkError> {
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let n = rows
            .checked_mul(cols)
            .filter(|n| *n <= r.remaining() / 8)
            .ok_or_else(|| WorkError::Shape("matrix header exceeds blob".into()))?;
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(T::decode(r)?);
        }
        Ok(Matrix { rows, cols, data })
    }

    fn max_abs_diff(&self, other: &Self) -> Option<f64>
    where
        T: Into<f64>,
    {
        if self.same_shape(other, "").is_err() {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| ((*a).into() - (*b).into()).abs())
                .fold(0.0, f64::max),
        )
    }
}

impl Matrix<f64> {
    pub fn max_abs_error(&self, other: &Self) -> Option<f64> {
        self.max_abs_diff(other)
    }
}

/// `E = sum_k u_k v_k^T` kept in factored form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowRankMask<T> {
    pub dim: usize,
    pub left: Vec<Vec<T>>,
    pub right: Vec<Vec<T>>,
}

impl<T: Element> LowRankMask<T> {
    pub fn new(dim: usize, left: Vec<Vec<T>>, right: Vec<Vec<T>>) -> Result<Self, WorkError> {
        if left.len() != right.len() {
            return Err(WorkError::Shape("mask needs equal numbers of left/right factors".into()));
        }
        if left.iter().chain(&right).any(|v| v.len() != dim) {
            return Err(WorkError::Shape(format!("mask factors must have length {dim}")));
        }
        Ok(LowRankMask { dim, left, right })
    }

    pub fn zero(dim: usize) -> Self {
        LowRankMask { dim, left: Vec::new(), right: Vec::new() }
    }

    pub fn rank(&self) -> usize {
        self.left.len()
    }

    pub fn to_dense(&self) -> Matrix<T> {
        let mut out = Matrix::zeros(self.dim, self.dim);
        for (u, v) in self.left.iter().zip(&self.right) {
            for i in 0..self.dim {
                for j in 0..self.dim {
                    let idx = i * self.dim + j;
                    out.data[idx] = out.data[idx] + u[i] * v[j];
                }
            }
        }
        out
    }
}

impl LowRankMask<i64> {
    /// Random integer mask with entries in `[-range, range]`.
    pub fn random_int(dim: usize, rank: usize, range: i64, rng: &mut SplitMix64) -> Self {
        let mut draw = || -> Vec<i64> {
            (0..dim).map(|_| rng.next_below(2 * range as u64 + 1) as i64 - range).collect()
        };
        let mut left = Vec::with_capacity(rank);
        let mut right = Vec::with_capacity(rank);
        for _ in 0..rank {
            left.push(draw());
            right.push(draw());
        }
        LowRankMask { dim, left, right }
    }
}

/// `X' = X + E`, `Y' = Y + F`.
pub fn mask_inputs<T: Element>(
    x: &Matrix<T>,
    y: &Matrix<T>,
    e: &LowRankMask<T>,
    f: &LowRankMask<T>,
) -> Result<(Matrix<T>, Matrix<T>), WorkError> {
    let m = x.rows;
    if x.cols != m || y.rows != m || y.cols != m || e.dim != m || f.dim != m {
        return Err(WorkError::Shape("mask_inputs needs square matrices of one size".into()));
    }
    Ok((x.add(&e.to_dense())?, y.add(&f.to_dense())?))
}

/// Recover `Z = Z' - (X F + E Y')` using only factored products; returns the multiply-add count.
pub fn unmask_counted<T: Element>(
    zp: &Matrix<T>,
    x: &Matrix<T>,
    e: &LowRankMask<T>,
    yp: &Matrix<T>,
    f: &LowRankMask<T>,
) -> Result<(Matrix<T>, u64), WorkError> {
    let m = zp.rows;
    for (mat, name) in [(zp, "Z'"), (x, "X"), (yp, "Y'")] {
        if mat.rows != m || mat.cols != m {
            return Err(WorkError::Shape(format!("{name} must be {m}x{m}")));
        }
    }
    if e.dim != m || f.dim != m {
        return Err(WorkError::Shape("mask dimension mismatch".into()));
    }
    let mut z = zp.clone();
    let mut ops = 0u64;
    // X F = sum_k (X u_k) v_k^T
    for (u, v) in f.left.iter().zip(&f.right) {
        let mut xu = vec![T::zero(); m];
        for (i, slot) in xu.iter_mut().enumerate() {
            for (k, uk) in u.iter().enumerate() {
                *slot = *slot + x.get(i, k) * *uk;
            }
        }
        ops += (m * m) as u64;
        for i in 0..m {
            for j in 0..m {
                let idx = i * m + j;
                z.data[idx] = z.data[idx] - xu[i] * v[j];
            }
        }
        ops += (m * m) as u64;
    }
    // E Y' = sum_k u_k (v_k^T Y')
    for (u, v) in e.left.iter().zip(&e.right) {
        let mut vy = vec![T::zero(); m];
        for (j, slot) in vy.iter_mut().enumerate() {
            for (k, vk) in v.iter().enumerate() {
                *slot = *slot + *vk * yp.get(k, j);
            }
        }
        ops += (m * m) as u64;
        for i in 0..m {
            for j in 0..m {
                let idx = i * m + j;
                z.data[idx] = z.data[idx] - u[i] * vy[j];
            }
        }
        ops += (m * m) as u64;
    }
    Ok((z, ops))
}

pub fn unmask<T: Element>(
    zp: &Matrix<T>,
    x: &Matrix<T>,
    e: &LowRankMask<T>,
    yp: &Matrix<T>,
    f: &LowRankMask<T>,
) -> Result<Matrix<T>, WorkError> {
    unmask_counted(zp, x, e, yp, f).map(|(z, _)| z)
}

/// One MatMul task `t_s`: multiply the masked inputs in `r x r` blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatMulTaskSpec<T> {
    pub m: usize,
    pub r: usize,
    pub x_masked: Matrix<T>,
    pub y_masked: Matrix<T>,
    pub mask_rank: usize,
}

impl<T: Element> MatMulTaskSpec<T> {
    pub fn new(x_masked: Matrix<T>, y_masked: Matrix<T>, r: usize, mask_rank: usize) -> Result<Self, WorkError> {
        let spec = MatMulTaskSpec { m: x_masked.rows, r, x_masked, y_masked, mask_rank };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), WorkError> {
        if self.r == 0 || self.m == 0 || self.m % self.r != 0 {
            return Err(WorkError::InvalidTask(format!("block size {} must divide {}", self.r, self.m)));
        }
        for mat in [&self.x_masked, &self.y_masked] {
            if mat.rows != self.m || mat.cols != self.m {
                return Err(WorkError::Shape(format!("inputs must be {0}x{0}", self.m)));
            }
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        self.m / self.r
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u64(self.m as u64).u64(self.r as u64).u64(self.mask_rank as u64);
        self.x_masked.encode(&mut w);
        self.y_masked.encode(&mut w);
        w.finish()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, WorkError> {
        let mut r = Reader::new(buf);
        let m = r.u64()? as usize;
        let block = r.u64()? as usize;
        let mask_rank = r.u64()? as usize;
        let x_masked = Matrix::decode(&mut r)?;
        let y_masked = Matrix::decode(&mut r)?;
        r.finish()?;
        let spec = MatMulTaskSpec { m, r: block, x_masked, y_masked, mask_rank };
        spec.validate()?;
        Ok(spec)
    }

    pub fn summary(&self) -> Digest256 {
        hash(&self.to_bytes())
    }

    /// `Z'(l)[bi][bj] = Z'(l-1)[bi][bj] + X'[bi][a] Y'[a][bj]` on one block, in place.
    fn accumulate_block(&self, z: &mut Matrix<T>, a: usize, bi: usize, bj: usize) {
        let r = self.r;
        for i in bi * r..(bi + 1) * r {
            for k in a * r..(a + 1) * r {
                let xv = self.x_masked.get(i, k);
                for j in bj * r..(bj + 1) * r {
                    let idx = i * self.m + j;
                    z.data[idx] = z.data[idx] + xv * self.y_masked.get(k, j);
                }
            }
        }
    }
}

/// The recorded intermediates `Z'(1..=m/r)` and the block order that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct MatMulTrace<T> {
    pub permutation: Vec<usize>,
    pub intermediates: Vec<Matrix<T>>,
}

impl<T: Element> MatMulTrace<T> {
    pub fn final_product(&self) -> &Matrix<T> {
        self.intermediates.last().expect("trace has at least one step")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u64(self.permutation.len() as u64);
        for a in &self.permutation {
            w.u64(*a as u64);
        }
        for z in &self.intermediates {
            z.encode(&mut w);
        }
        w.finish()
    }

    pub fn summary(&self) -> Digest256 {
        hash(&self.to_bytes())
    }
}

pub fn matmul_trace<T: Element>(spec: &MatMulTaskSpec<T>, seed: Seed) -> MatMulTrace<T> {
    let steps = spec.steps();
    let permutation = shuffle(steps, seed);
    let mut z = Matrix::zeros(spec.m, spec.m);
    let mut intermediates = Vec::with_capacity(steps);
    for &a in &permutation {
        for bi in 0..steps {
            for bj in 0..steps {
                spec.accumulate_block(&mut z, a, bi, bj);
            }
        }
        intermediates.push(z.clone());
    }
    MatMulTrace { permutation, intermediates }
}

fn block_eq<T: Element>(x: &Matrix<T>, y: &Matrix<T>, r: usize, bi: usize, bj: usize) -> bool {
    (bi * r..(bi + 1) * r).all(|i| (bj * r..(bj + 1) * r).all(|j| x.get(i, j) == y.get(i, j)))
}

/// Check one block of one step (`step` is 1-based) against the recurrence.
pub fn verify_step<T: Element>(
    spec: &MatMulTaskSpec<T>,
    trace: &MatMulTrace<T>,
    step: usize,
    bi: usize,
    bj: usize,
) -> bool {
    let steps = spec.steps();
    if step == 0 || step > steps || bi >= steps || bj >= steps || trace.intermediates.len() != steps {
        return false;
    }
    let prev = if step == 1 {
        Matrix::zeros(spec.m, spec.m)
    } else {
        trace.intermediates[step - 2].clone()
    };
    let mut expect = prev;
    spec.accumulate_block(&mut expect, trace.permutation[step - 1], bi, bj);
    block_eq(&expect, &trace.intermediates[step - 1], spec.r, bi, bj)
}

/// Check that the permutation is the one the seed dictates and every step holds on every block.
pub fn verify_trace<T: Element>(spec: &MatMulTaskSpec<T>, trace: &MatMulTrace<T>, seed: Seed) -> bool {
    let steps = spec.steps();
    if trace.permutation != shuffle(steps, seed) || trace.intermediates.len() != steps {
        return false;
    }
    (1..=steps).all(|l| (0..steps).all(|bi| (0..steps).all(|bj| verify_step(spec, trace, l, bi, bj))))
}

/// Spot-check `samples` random (step, block) triples.
pub fn verify_trace_sampled<T: Element>(
    spec: &MatMulTaskSpec<T>,
    trace: &MatMulTrace<T>,
    seed: Seed,
    samples: usize,
    rng: &mut SplitMix64,
) -> bool {
    let steps = spec.steps();
    if trace.permutation != shuffle(steps, seed) || trace.intermediates.len() != steps {
        return false;
    }
    (0..samples).all(|_| {
        let l = 1 + rng.next_below(steps as u64) as usize;
        let bi = rng.next_below(steps as u64) as usize;
        let bj = rng.next_below(steps as u64) as usize;
        verify_step(spec, trace, l, bi, bj)
    })
}

/// Integer MatMul as a stage backend: input is an encoded task, output an encoded trace.
#[derive(Clone, Copy, Debug, Default)]
pub struct MatMulWork;

impl UsefulWork for MatMulWork {
    fn compute_stage(&self, input: &[u8], seed: Seed) -> Result<Vec<u8>, WorkError> {
        let spec: MatMulTaskSpec<i64> = MatMulTaskSpec::from_bytes(input)?;
        Ok(matmul_trace(&spec, seed).to_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn int_matrix(m: usize, rng: &mut SplitMix64) -> Matrix<i64> {
        Matrix::from_fn(m, m, |_, _| rng.next_below(21) as i64 - 10)
    }

    #[test]
    fn zero_masks_are_identity() {
        let mut rng = SplitMix64::new(1);
        let x = int_matrix(4, &mut rng);
        let y = int_matrix(4, &mut rng);
        let z0 = LowRankMask::zero(4);
        let (xp, yp) = mask_inputs(&x, &y, &z0, &z0).unwrap();
        assert_eq!(xp, x);
        assert_eq!(yp, y);
        let zp = xp.matmul(&yp).unwrap();
        assert_eq!(unmask(&zp, &x, &z0, &yp, &z0).unwrap(), zp);
    }

    #[test]
    fn rank_one_mask_is_elementwise_sum() {
        let x = Matrix::from_fn(4, 4, |i, j| (i * 4 + j) as i64);
        let e = LowRankMask::new(4, vec![vec![1, 0, 2, 0]], vec![vec![0, 1, 0, 3]]).unwrap();
        let (xp, _) = mask_inputs(&x, &x, &e, &LowRankMask::zero(4)).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(xp.get(i, j), x.get(i, j) + e.left[0][i] * e.right[0][j]);
            }
        }
    }

    #[test]
    fn unmask_recovers_product_integers() {
        let mut rng = SplitMix64::new(8);
        let x = int_matrix(8, &mut rng);
        let y = int_matrix(8, &mut rng);
        let e = LowRankMask::random_int(8, 2, 5, &mut rng);
        let f = LowRankMask::random_int(8, 1, 5, &mut rng);
        let (xp, yp) = mask_inputs(&x, &y, &e, &f).unwrap();
        let spec = MatMulTaskSpec::new(xp, yp.clone(), 2, 2).unwrap();
        let trace = matmul_trace(&spec, Seed(3));
        let (z, ops) = unmask_counted(trace.final_product(), &x, &e, &yp, &f).unwrap();
        assert_eq!(z, x.matmul(&y).unwrap());
        // two multiply-add passes of m^2 per rank-one factor
        assert_eq!(ops, 2 * 64 * 3);
    }

    #[test]
    fn unmask_real_within_tolerance() {
        let mut rng = SplitMix64::new(16);
        let m = 16;
        let mut real = || Matrix::from_fn(m, m, |_, _| rng.next_f64() * 2.0 - 1.0);
        let x = real();
        let y = real();
        let mut rng2 = SplitMix64::new(17);
        let mut vecs = || (0..m).map(|_| rng2.next_f64() - 0.5).collect::<Vec<f64>>();
        let e = LowRankMask::new(m, vec![vecs()], vec![vecs()]).unwrap();
        let f = LowRankMask::new(m, vec![vecs(), vecs()], vec![vecs(), vecs()]).unwrap();
        let (xp, yp) = mask_inputs(&x, &y, &e, &f).unwrap();
        let spec = MatMulTaskSpec::new(xp, yp.clone(), 4, 2).unwrap();
        let trace = matmul_trace(&spec, Seed(5));
        let z = unmask(trace.final_product(), &x, &e, &yp, &f).unwrap();
        let err = z.max_abs_error(&x.matmul(&y).unwrap()).unwrap();
        assert!(err <= 1e-9, "err {err}");
    }

    #[test]
    fn single_block_trace() {
        let mut rng = SplitMix64::new(2);
        let x = int_matrix(4, &mut rng);
        let y = int_matrix(4, &mut rng);
        let spec = MatMulTaskSpec::new(x.clone(), y.clone(), 4, 0).unwrap();
        let trace = matmul_trace(&spec, Seed(9));
        assert_eq!(trace.intermediates.len(), 1);
        assert_eq!(trace.final_product(), &x.matmul(&y).unwrap());
    }

    #[test]
    fn identity_inputs_give_identity() {
        let id = Matrix::from_fn(4, 4, |i, j| i64::from(i == j));
        let spec = MatMulTaskSpec::new(id.clone(), id.clone(), 2, 0).unwrap();
        let trace = matmul_trace(&spec, Seed(1));
        assert_eq!(trace.final_product(), &id);
        assert!(verify_trace(&spec, &trace, Seed(1)));
    }

    #[test]
    fn seeds_change_trace_not_product() {
        let mut rng = SplitMix64::new(4);
        let spec = MatMulTaskSpec::new(int_matrix(8, &mut rng), int_matrix(8, &mut rng), 2, 0).unwrap();
        let a = matmul_trace(&spec, Seed(1));
        let mut other = Seed(2);
        while shuffle(4, other) == a.permutation {
            other = Seed(other.0 + 1);
        }
        let b = matmul_trace(&spec, other);
        assert_eq!(a.final_product(), b.final_product());
        assert_ne!(a.intermediates, b.intermediates);
        assert_ne!(a.summary(), b.summary());
        assert!(!verify_trace(&spec, &a, other));
    }

    #[test]
    fn invalid_block_size() {
        let m = Matrix::<i64>::zeros(6, 6);
        assert!(MatMulTaskSpec::new(m.clone(), m, 4, 0).is_err());
        let a = Matrix::<i64>::zeros(4, 4);
        let b = Matrix::<i64>::zeros(3, 3);
        assert!(mask_inputs(&a, &b, &LowRankMask::zero(4), &LowRankMask::zero(4)).is_err());
    }

    #[test]
    fn stage_backend_roundtrip() {
        let mut rng = SplitMix64::new(6);
        let spec = MatMulTaskSpec::new(int_matrix(4, &mut rng), int_matrix(4, &mut rng), 2, 1).unwrap();
        let out = MatMulWork.compute_stage(&spec.to_bytes(), Seed(10)).unwrap();
        assert_eq!(hash(&out), matmul_trace(&spec, Seed(10)).summary());
        assert_eq!(MatMulTaskSpec::from_bytes(&spec.to_bytes()).unwrap(), spec);
    }
}
