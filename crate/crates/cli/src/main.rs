use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::Parser;
use polchain_cli::{run_experiment, validate_config, write_report, ExperimentSpec, Mode};

/// Run proof-of-learning protocol checks and simulation experiments.
#[derive(Parser, Debug)]
#[command(name = "polchain", version)]
struct Args {
    /// TOML experiment file; flags given alongside override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: out/<name>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; replica i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
}

fn resolve(args: &Args) -> anyhow::Result<ExperimentSpec> {
    let mut spec = match (&args.config, args.mode) {
        (Some(path), _) => {
            let raw = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            match validate_config(&raw) {
                Ok(s) => s,
                Err(errs) => {
                    for e in &errs {
                        eprintln!("config error: {e}");
                    }
                    bail!("{} invalid: {} error(s)", path.display(), errs.len());
                }
            }
        }
        (None, Some(mode)) => ExperimentSpec::defaults(mode),
        (None, None) => bail!("either --config or --mode is required"),
    };
    if let (Some(_), Some(mode)) = (&args.config, args.mode) {
        if mode != spec.mode {
            bail!("--mode {} conflicts with mode {} in the config file", mode.name(), spec.mode.name());
        }
    }
    if let Some(seed) = args.seed {
        spec.sim.seed = seed;
    }
    if let Some(r) = args.replicas {
        spec.replicas = r;
    }
    spec.out = args.out.clone().or(spec.out);
    if let Err(errs) = spec.validate() {
        for e in &errs {
            eprintln!("config error: {e}");
        }
        bail!("invalid experiment: {} error(s)", errs.len());
    }
    Ok(spec)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let spec = match resolve(&args) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let s = &spec.sim;
    eprintln!(
        "{} ({}): n={} g={} g_v={} tau={} p={} alpha={} gamma={} seed={} replicas={}",
        spec.name,
        spec.mode.name(),
        s.n,
        s.g,
        s.g_v,
        s.tau,
        s.p,
        s.alpha,
        s.gamma,
        s.seed,
        spec.replicas
    );
    let report = match run_experiment(&spec) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let dir = spec.out_dir();
    if let Err(e) = write_report(&spec, &report, &dir) {
        eprintln!("error: writing {}: {e}", dir.display());
        return ExitCode::from(2);
    }
    for c in &report.checks {
        println!("{c}");
    }
    println!("artifacts in {}", dir.display());
    if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
