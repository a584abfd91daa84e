use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use crate::config::ExperimentSpec;

/// Environment variable capping the number of replicas run at once.
pub const JOBS_ENV: &str = "POLCHAIN_JOBS";

/// One acceptance check: what was measured against what was expected.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub measured: String,
    pub expected: String,
    pub pass: bool,
}

impl Check {
    pub fn new(name: &str, measured: impl fmt::Display, expected: impl fmt::Display, pass: bool) -> Self {
        Check { name: name.into(), measured: measured.to_string(), expected: expected.to_string(), pass }
    }

    /// `|measured - target| <= tol`.
    pub fn within(name: &str, measured: f64, target: f64, tol: f64) -> Self {
        Check::new(name, format!("{measured:.4}"), format!("{target} ± {tol}"), (measured - target).abs() <= tol)
    }

    pub fn in_range(name: &str, measured: f64, lo: f64, hi: f64) -> Self {
        Check::new(name, format!("{measured:.4}"), format!("[{lo}, {hi}]"), (lo..=hi).contains(&measured))
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}: measured {}, expected {}", self.name, self.measured, self.expected)
    }
}

/// A named output file.
#[derive(Clone, Debug, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub artifacts: Vec<Artifact>,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// Add a CSV artifact with the reproducibility header.
    pub fn csv<T: Serialize>(&mut self, spec: &ExperimentSpec, name: &str, rows: &[T]) {
        self.artifacts.push(Artifact { name: name.into(), bytes: csv_bytes(spec, rows) });
    }

    pub fn raw(&mut self, name: &str, bytes: Vec<u8>) {
        self.artifacts.push(Artifact { name: name.into(), bytes });
    }
}

/// `# `-prefixed lines carrying the master seed and the full resolved spec.
pub fn header(spec: &ExperimentSpec) -> String {
    let mut h = format!("# polchain {} experiment {}\n# master_seed = {}\n", spec.mode.name(), spec.name, spec.sim.seed);
    for line in spec.to_toml().lines() {
        h.push_str("# ");
        h.push_str(line);
        h.push('\n');
    }
    h
}

pub fn csv_bytes<T: Serialize>(spec: &ExperimentSpec, rows: &[T]) -> Vec<u8> {
    let mut out = header(spec).into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        for r in rows {
            w.serialize(r).expect("rows serialize");
        }
        w.flush().expect("in-memory write");
    }
    out
}

/// Write every artifact plus `summary.csv` and `config.toml` into `dir`, each via a temp file and rename.
pub fn write_report(spec: &ExperimentSpec, report: &Report, dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let mut files = report.artifacts.clone();
    files.push(Artifact { name: "summary.csv".into(), bytes: csv_bytes(spec, &report.checks) });
    files.push(Artifact { name: "config.toml".into(), bytes: spec.to_toml().into_bytes() });
    for a in &files {
        write_atomic(&dir.join(&a.name), &a.bytes)?;
    }
    Ok(())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("artifact");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path)
}

/// Worker count: `POLCHAIN_JOBS` if set, else the available parallelism.
pub fn jobs() -> usize {
    std::env::var(JOBS_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|j: &usize| *j > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Map `f` over `items` on up to [`jobs`] threads; results come back in input order.
pub fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = jobs().min(items.len()).max(1);
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new(items.iter().map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("no worker panicked")[i] = Some(r);
            });
        }
    });
    slots.into_inner().expect("no worker panicked").into_iter().map(|r| r.expect("every slot filled")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn par_map_keeps_order() {
        let v: Vec<u64> = (0..50).collect();
        assert_eq!(par_map(&v, |x| x * x), v.iter().map(|x| x * x).collect::<Vec<_>>());
    }

    #[test]
    fn check_lines() {
        assert!(Check::within("w", 17.0, 17.3, 0.5).pass);
        assert!(!Check::in_range("r", 250.0, 200.0, 240.0).pass);
        assert!(Check::new("x", 1, 2, false).to_string().starts_with("[FAIL] x"));
    }
}
