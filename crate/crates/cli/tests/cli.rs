use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use polchain_cli::validate_config;
use proptest::prelude::*;

fn polchain(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polchain")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn missing_p_exits_nonzero_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "name = \"x\"\nmode = \"figure1\"\n[sim]\nn = 100\n");
    let out = polchain(&["--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.lines().any(|l| l.starts_with("config error: p:")), "{err}");
    assert!(!dir.path().join("o").exists());
}

#[test]
fn invariant_violations_are_all_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "mode = \"figure1\"\nreplicas = 0\n[sim]\np = 2.0\ng = 5\ng_v = 7\n");
    let out = polchain(&["--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for field in ["replicas:", "sim.g_v:", "sim.p:"] {
        assert!(err.contains(field), "missing {field} in {err}");
    }
}

#[test]
fn incentive_table_includes_the_one_over_31_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = polchain(&["--mode", "incentive-table", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let csv = fs::read_to_string(dir.path().join("gamma_sufficient.csv")).unwrap();
    assert!(csv.starts_with("# polchain incentive-table"));
    assert!(csv.lines().any(|l| l == "# master_seed = 1"));
    assert!(csv.lines().any(|l| l.starts_with("0.5,5,") && (l.split(',').nth(2).unwrap().parse::<f64>().unwrap() - 1.0 / 31.0).abs() < 1e-15));
    assert!(csv.lines().any(|l| l == "kappa,alpha,gamma_sufficient,hypothesis_met"));
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert!(summary.contains("name,measured,expected,pass"));
    assert!(!summary.contains(",false"));
}

#[test]
fn default_echo_includes_the_reference_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let out = polchain(&["--mode", "matmul-demo", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    let cfg = fs::read_to_string(dir.path().join("config.toml")).unwrap();
    for line in ["n = 1000", "g = 25", "g_v = 5", "tau = 4"] {
        assert!(cfg.lines().any(|l| l == line), "{line}");
    }
}

#[test]
fn figure2_sweep_is_byte_identical_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "f2.toml",
        "name = \"f2\"\nmode = \"figure2-sweep\"\nreplicas = 4\n[sim]\nn = 200\nhorizon = 8000\nwarmup = 1000\nmean_epochs = 800\n",
    );
    let runs: Vec<_> = ["a", "b"]
        .iter()
        .map(|d| {
            let out_dir = dir.path().join(d);
            let out = polchain(&["--config", &cfg, "--seed", "11", "--out", out_dir.to_str().unwrap()]);
            // A shortened sweep need not meet the acceptance tolerances; it must still run.
            assert!(matches!(out.status.code(), Some(0 | 1)), "{}", String::from_utf8_lossy(&out.stderr));
            fs::read(out_dir.join("figure2.csv")).unwrap()
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    let text = String::from_utf8(runs[0].clone()).unwrap();
    assert!(text.lines().any(|l| l == "# master_seed = 11"));
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "p,UBGR,UWR,fork_rate,block_interval,replicas");
    assert_eq!(rows.len(), 7);
    assert!(rows[1..].iter().all(|r| r.ends_with(",4")));
}

#[test]
fn conflicting_mode_flag_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "mode = \"matmul-demo\"\n");
    let out = polchain(&["--config", &cfg, "--mode", "figure1"]);
    assert_eq!(out.status.code(), Some(2));
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn group_sizes_validate_iff_verifiers_fit(g in 0usize..40, g_v in 0usize..40) {
        let raw = format!("mode = \"figure1\"\n[sim]\np = 1e-4\ng = {g}\ng_v = {g_v}\n");
        let fields: Vec<String> = validate_config(&raw).err().unwrap_or_default().into_iter().map(|e| e.field).collect();
        prop_assert_eq!(fields.contains(&"sim.g_v".to_string()), g_v == 0 || g_v >= g);
        prop_assert_eq!(fields.contains(&"sim.g".to_string()), g == 0);
    }
}
