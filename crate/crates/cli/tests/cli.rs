use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_honest-esp");

fn demo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/demo_panel.csv")
}

fn run(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("HONEST_ESP_THREADS", t),
        None => cmd.env_remove("HONEST_ESP_THREADS"),
    };
    cmd.output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn demo_input(extra: &[&str]) -> Vec<String> {
    let mut v: Vec<String> = vec![
        "--input".into(),
        demo().display().to_string(),
        "--unit".into(),
        "unit".into(),
        "--time".into(),
        "time".into(),
        "--outcome".into(),
        "outcome".into(),
        "--treat".into(),
        "treat".into(),
    ];
    v.extend(extra.iter().map(|s| s.to_string()));
    v
}

fn with_cmd<'a>(cmd: &'a [&'a str], rest: &'a [String]) -> Vec<&'a str> {
    cmd.iter().copied().chain(rest.iter().map(String::as_str)).collect()
}

#[test]
fn estimate_writes_beta_and_covariance() {
    let rest = demo_input(&[]);
    let v = stdout_json(&run(&with_cmd(&["estimate"], &rest), None));
    assert_eq!(v["design"], "binary");
    let beta = v["estimate"]["beta"].as_array().unwrap();
    assert_eq!(beta.len(), 11);
    assert_eq!(v["covariance"]["cov"].as_array().unwrap().len(), 11);

    let rest = demo_input(&["--format", "csv"]);
    let out = run(&with_cmd(&["estimate"], &rest), None);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("event_time,t,beta,variance,se\n"));
    assert_eq!(text.lines().count(), 12);
}

#[test]
fn missing_column_exits_2_naming_it() {
    let out = run(
        &[
            "estimate",
            "--input",
            demo().to_str().unwrap(),
            "--unit",
            "unit",
            "--time",
            "year",
            "--outcome",
            "outcome",
            "--treat",
            "treat",
        ],
        None,
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("year"));
}

#[test]
fn invalid_att_exits_2() {
    let out = run(&["simulate", "accuracy", "--att", "ATT9", "--reps", "2"], None);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["simulate", "panel", "--att", "nope"], None);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_2() {
    let rest = demo_input(&["--alpha", "0.7"]);
    assert_eq!(run(&with_cmd(&["bands"], &rest), None).status.code(), Some(2));
    let rest = demo_input(&["--b", "10"]);
    assert_eq!(run(&with_cmd(&["bands"], &rest), None).status.code(), Some(2));
    let rest = demo_input(&["--method", "kac-rice", "--side", "inf"]);
    assert_eq!(run(&with_cmd(&["bands"], &rest), None).status.code(), Some(2));
    assert_eq!(run(&["serve", "--port", "80"], None).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"], None).status.code(), Some(2));
    assert_eq!(run(&["--help"], None).status.code(), Some(0));
}

#[test]
fn numerical_error_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("flat.csv");
    let mut csv = String::from("unit,time,outcome,treat\n");
    for u in 0..6 {
        for t in -2..=2 {
            csv.push_str(&format!("u{u},{t},{},{}\n", t as f64 * 0.5, u % 2));
        }
    }
    std::fs::write(&path, csv).unwrap();
    let out = run(
        &[
            "bands",
            "--input",
            path.to_str().unwrap(),
            "--unit",
            "unit",
            "--time",
            "time",
            "--outcome",
            "outcome",
            "--treat",
            "treat",
            "--method",
            "pb",
            "--b",
            "200",
        ],
        None,
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn covariates_route_through_residualization() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cov.csv");
    let mut csv = String::from("unit,time,outcome,treat,w1,w2\n");
    for u in 0..40i64 {
        let d = u % 2;
        let w1 = ((u * 37) % 11) as f64 / 11.0;
        let w2 = ((u * 13) % 7) as f64 - 3.0;
        for t in -3..=3i64 {
            let y = 0.3 * t as f64 * w1 + 0.1 * w2 + if t > 0 { d as f64 * t as f64 } else { 0.0 }
                + ((u * 7 + t * 5) % 9) as f64 * 0.05;
            csv.push_str(&format!("u{u},{t},{y},{d},{w1},{w2}\n"));
        }
    }
    std::fs::write(&path, csv).unwrap();
    let base = [
        "estimate",
        "--input",
        path.to_str().unwrap(),
        "--unit",
        "unit",
        "--time",
        "time",
        "--outcome",
        "outcome",
        "--treat",
        "treat",
    ];
    let plain = stdout_json(&run(&base, None));
    let mut args = base.to_vec();
    args.extend(["--covariates", "w1,w2"]);
    let adjusted = stdout_json(&run(&args, None));
    assert_eq!(plain["design"], "binary");
    assert_eq!(adjusted["design"], "covariates");
    assert_ne!(plain["estimate"]["beta"], adjusted["estimate"]["beta"]);

    let mut args = base.to_vec();
    args.extend(["--covariates", "w1,w3"]);
    let out = run(&args, None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("w3"));
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    std::fs::write(
        &cfg,
        format!(
            "# demo run\ninput = {}\nunit = unit\ntime = time\noutcome = outcome\ntreat = treat\nmethod = mb\nb = 300\nseed = 9\n",
            demo().display()
        ),
    )
    .unwrap();
    let from_file = run(&["bands", "--config", cfg.to_str().unwrap()], None);
    let rest = demo_input(&["--method", "mb", "--b", "300", "--seed", "9"]);
    let from_flags = run(&with_cmd(&["bands"], &rest), None);
    assert!(from_file.status.success(), "{}", String::from_utf8_lossy(&from_file.stderr));
    assert_eq!(from_file.stdout, from_flags.stdout);

    let overridden = run(&["bands", "--config", cfg.to_str().unwrap(), "--seed", "10"], None);
    assert_ne!(overridden.stdout, from_file.stdout);
    let v = stdout_json(&overridden);
    assert_eq!(v["band"]["seed"], 10);
}

#[test]
fn report_emits_sup_and_inf_bands_and_plot_csv() {
    let dir = tempfile::tempdir().unwrap();
    let plot = dir.path().join("plot.csv");
    let rest = demo_input(&["--b", "500", "--seed", "4", "--plot-csv", plot.to_str().unwrap()]);
    let v = stdout_json(&run(&with_cmd(&["report"], &rest), None));
    let bands = v["bands"].as_array().unwrap();
    let levels: Vec<f64> = bands.iter().map(|b| b["level"].as_f64().unwrap()).collect();
    assert!(levels.contains(&0.95));
    assert!(levels.iter().any(|l| (l - 0.90).abs() < 1e-12));
    let text = std::fs::read_to_string(plot).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.starts_with("t,beta_hat,se,"));
    assert_eq!(text.lines().count(), 202);
}

fn assert_deterministic(args: &[&str]) {
    let reference = run(args, Some("1"));
    assert!(reference.status.success(), "{:?}: {}", args, String::from_utf8_lossy(&reference.stderr));
    assert!(!reference.stdout.is_empty());
    for threads in [None, Some("1"), Some("4"), Some("8")] {
        let out = run(args, threads);
        assert_eq!(out.stdout, reference.stdout, "{args:?} differs with threads {threads:?}");
    }
}

#[test]
fn seeded_commands_are_byte_identical_across_runs_and_threads() {
    for method in ["pb", "mb", "kr"] {
        let rest = demo_input(&["--method", method, "--b", "400", "--seed", "17"]);
        assert_deterministic(&with_cmd(&["bands"], &rest));
    }
    let rest = demo_input(&["--method", "mb", "--side", "inf", "--b", "400", "--seed", "3"]);
    assert_deterministic(&with_cmd(&["bands"], &rest));
    let rest = demo_input(&["--b", "300", "--seed", "8", "--refband", "union"]);
    assert_deterministic(&with_cmd(&["report"], &rest));
    assert_deterministic(&["simulate", "accuracy", "--n", "50", "--t", "11", "--reps", "6", "--seed", "2"]);
    assert_deterministic(&[
        "simulate", "power", "--n", "60", "--reps", "5", "--b", "200", "--effects", "0,0.3", "--seed", "5",
    ]);
    assert_deterministic(&[
        "simulate", "validation", "--n", "60", "--reps", "5", "--b", "200", "--s-values", "1,2", "--seed", "6",
    ]);
    assert_deterministic(&["simulate", "panel", "--n", "20", "--seed", "12"]);
}
