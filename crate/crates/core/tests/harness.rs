use scglm_core::harness::{Command, ExperimentConfig};
use std::path::{Path, PathBuf};
use std::process::Command as Proc;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_scglm")
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string()
}

fn scglm(args: &[&str]) -> std::process::Output {
    Proc::new(bin()).args(args).output().unwrap()
}

#[test]
fn shipped_presets_parse() {
    for scale in ["desk", "full"] {
        for entry in std::fs::read_dir(configs_dir().join(scale)).unwrap() {
            let p = entry.unwrap().path();
            let cfg = ExperimentConfig::from_path(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            let expect_trials = if scale == "desk" { 20 } else { 100 };
            if !p.ends_with("figure2.toml") {
                assert_eq!(cfg.trials, expect_trials, "{}", p.display());
            }
        }
    }
    let desk = ExperimentConfig::from_path(&configs_dir().join("desk/figure3.toml")).unwrap();
    assert_eq!(desk.n, Some(10_000));
    let full = ExperimentConfig::from_path(&configs_dir().join("full/figure3.toml")).unwrap();
    assert_eq!(full.n, Some(20_000));
    let f4 = ExperimentConfig::from_path(&configs_dir().join("full/figure4.toml")).unwrap();
    assert_eq!(f4.block_size, Some(500));
}

#[test]
fn potential_cli_writes_schema_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out = scglm(&[
        "potential",
        "--delta",
        "0.5",
        "--delta",
        "0.9",
        "--grid-points",
        "40",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = dir.path().join("potential.csv");
    assert_eq!(header(&csv), "delta,x,U,is_stationary,is_global_min");
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 1 + 80);
    assert_eq!(
        header(&dir.path().join("potential_summary.csv")),
        "delta,global_min_x,largest_stationary_x,global_min_at_edge,stationary_x"
    );
    let side: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("potential.json")).unwrap()).unwrap();
    assert!(side["git_describe"].is_string());
    // The sidecar alone reproduces the config.
    let cfg = ExperimentConfig::parse_str(side["config_toml"].as_str().unwrap()).unwrap();
    assert_eq!(cfg.deltas, vec![0.5, 0.9]);
    assert_eq!(cfg.potential.points, 40);
}

#[test]
fn run_cli_is_reproducible_from_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let args = [
        "run",
        "--channel",
        "linear:0.01",
        "--design",
        "omega_lambda:2,4",
        "--delta",
        "0.7",
        "--n",
        "400",
        "--trials",
        "2",
        "--trace",
        "--out",
        d,
    ];
    let out = scglm(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = dir.path().join("run.csv");
    assert!(header(&csv).starts_with("delta,trial,iters,final_mse,"));
    assert!(header(&dir.path().join("run_trace.csv")).starts_with("delta,trial,iter,mse"));
    let first = std::fs::read_to_string(&csv).unwrap();

    let side: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run.json")).unwrap()).unwrap();
    assert_eq!(side["trial_seeds"].as_array().unwrap().len(), 2);
    assert_eq!(side["layouts"][0]["m"].as_u64().unwrap(), 280);
    let toml_path = dir.path().join("again.toml");
    let mut cfg = ExperimentConfig::parse_str(side["config_toml"].as_str().unwrap()).unwrap();
    cfg.output_stem = Some("again".into());
    std::fs::write(&toml_path, cfg.to_toml().unwrap()).unwrap();
    let out = scglm(&["run", "--config", toml_path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let second = std::fs::read_to_string(dir.path().join("again.csv")).unwrap();
    let strip = |s: &str| -> Vec<String> {
        // Wall time is the last column.
        s.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect()
    };
    assert_eq!(strip(&first), strip(&second));
}

#[test]
fn se_cli_schema_and_thresholds() {
    let dir = tempfile::tempdir().unwrap();
    let out = scglm(&[
        "se",
        "--channel",
        "relu",
        "--prior",
        "three_point:0.5",
        "--design",
        "iid",
        "--design",
        "omega_lambda:3,8",
        "--delta-grid",
        "0.8:1.2:0.2",
        "--threshold-mse",
        "0.01",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        header(&dir.path().join("se.csv")),
        "delta,iter,block,tau_q,tau_p,mse,design"
    );
    assert!(header(&dir.path().join("se_summary.csv")).starts_with("delta,design,"));
    let thr = std::fs::read_to_string(dir.path().join("se_thresholds.csv")).unwrap();
    assert_eq!(thr.lines().count(), 3);
}

#[test]
fn figure3_cli_schema() {
    let dir = tempfile::tempdir().unwrap();
    let out = scglm(&[
        "figure3",
        "--design",
        "iid",
        "--delta",
        "0.9",
        "--n",
        "300",
        "--trials",
        "1",
        "--grid-points",
        "20",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = dir.path().join("figure3.csv");
    assert!(header(&csv).starts_with("delta,design,mean_mse,std_mse,se_mse,global_min_mse,largest_stationary_mse"));
    let text = std::fs::read_to_string(&csv).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    // A single trial has a zero-height error bar.
    assert_eq!(row[3].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn figure4_rejects_dense_large_coupling() {
    let dir = tempfile::tempdir().unwrap();
    let out = scglm(&["figure4", "--backend", "dense", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dct"));
}

#[test]
fn bad_inputs_exit_nonzero_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    let mut text = ExperimentConfig::preset(Command::Run).to_toml().unwrap();
    text = text.replace(
        "[[designs]]\ntype = \"iid\"",
        "[[designs]]\ntype = \"omega_lambda\"\nomega_ = 6\nlambda = 40",
    );
    std::fs::write(&bad, text).unwrap();
    let out = scglm(&["run", "--config", bad.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("omega_") && err.contains("line"), "{err}");

    for args in [
        vec!["run", "--delta", "-0.5"],
        vec!["run", "--channel", "probit"],
        vec!["run", "--design", "omega_lambda:6,40", "--n", "10001"],
        vec!["potential", "--config", "/nonexistent/cfg.toml"],
    ] {
        let out = scglm(&args);
        assert!(!out.status.success(), "{args:?}");
        assert!(!out.stderr.is_empty(), "{args:?}");
    }
}
