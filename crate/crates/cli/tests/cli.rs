//! End-to-end tests of the command-line interface: exit codes, file
//! formats, determinism, and the estimate/check round trips.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_curstat"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).expect("readable")
}

#[test]
fn gen_data_is_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let c = dir.path().join("c.csv");
    assert_eq!(
        code(&run(&[
            "gen-data",
            "--n",
            "50",
            "--seed",
            "4",
            "--out",
            a.to_str().unwrap()
        ])),
        0
    );
    assert_eq!(
        code(&run(&[
            "gen-data",
            "--n",
            "50",
            "--seed",
            "4",
            "--out",
            b.to_str().unwrap()
        ])),
        0
    );
    assert_eq!(
        code(&run(&[
            "gen-data",
            "--n",
            "50",
            "--seed",
            "5",
            "--out",
            c.to_str().unwrap()
        ])),
        0
    );
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    let body = read(&a);
    assert!(body.starts_with("t,cause\n"));
    assert_eq!(body.lines().count(), 51);
}

#[test]
fn gen_data_refuses_overwrite_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.csv");
    assert_eq!(
        code(&run(&[
            "gen-data",
            "--n",
            "5",
            "--seed",
            "1",
            "--out",
            out.to_str().unwrap()
        ])),
        0
    );
    let again = run(&[
        "gen-data",
        "--n",
        "5",
        "--seed",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&again), 2);
    assert_eq!(
        code(&run(&[
            "gen-data",
            "--n",
            "5",
            "--seed",
            "1",
            "--out",
            out.to_str().unwrap(),
            "--force"
        ])),
        0
    );
}

#[test]
fn single_cause_mle_and_naive_estimates_are_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    assert_eq!(
        code(&run(&[
            "gen-data",
            "--cause-probs",
            "1.0",
            "--cond-rates",
            "1.0",
            "--n",
            "80",
            "--seed",
            "9",
            "--out",
            data.to_str().unwrap()
        ])),
        0
    );
    let m = dir.path().join("mle.csv");
    let n = dir.path().join("naive.csv");
    assert_eq!(
        code(&run(&[
            "estimate",
            "--data",
            data.to_str().unwrap(),
            "--estimator",
            "mle",
            "--out",
            m.to_str().unwrap()
        ])),
        0
    );
    assert_eq!(
        code(&run(&[
            "estimate",
            "--data",
            data.to_str().unwrap(),
            "--estimator",
            "naive",
            "--out",
            n.to_str().unwrap()
        ])),
        0
    );
    assert_eq!(read(&m), read(&n));
}

#[test]
fn two_observation_dataset_estimates_the_calculus_solution() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("tiny.csv");
    fs::write(&data, "t,cause\n1,1\n2,3\n").unwrap();
    let out = dir.path().join("est.csv");
    assert_eq!(
        code(&run(&[
            "estimate",
            "--data",
            data.to_str().unwrap(),
            "--estimator",
            "mle",
            "--out",
            out.to_str().unwrap()
        ])),
        0
    );
    // Component 1 jumps to 1/2 at t = 1.
    let body = read(&out);
    let row = body
        .lines()
        .find(|l| l.starts_with("1,1,"))
        .expect("knot at t=1");
    let value: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
    assert!((value - 0.5).abs() < 1e-8, "value {value}");
    let cert: serde_json::Value =
        serde_json::from_str(&read(&dir.path().join("est.csv.cert.json"))).unwrap();
    assert_eq!(cert["converged"], serde_json::Value::Bool(true));
    assert!(cert["kkt_residual"].as_f64().unwrap() <= 1e-10);
}

#[test]
fn estimate_then_check_round_trips_for_every_estimator() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    assert_eq!(
        code(&run(&[
            "gen-data",
            "--n",
            "70",
            "--seed",
            "21",
            "--out",
            data.to_str().unwrap()
        ])),
        0
    );
    for est in ["mle", "naive", "scaled-naive", "truncated-naive"] {
        let out = dir.path().join(format!("{est}.csv"));
        assert_eq!(
            code(&run(&[
                "estimate",
                "--data",
                data.to_str().unwrap(),
                "--estimator",
                est,
                "--out",
                out.to_str().unwrap()
            ])),
            0,
            "estimate {est}"
        );
        let check = run(&[
            "check",
            "--data",
            data.to_str().unwrap(),
            "--estimate",
            out.to_str().unwrap(),
            "--estimator",
            est,
        ]);
        assert_eq!(code(&check), 0, "check {est}: {check:?}");
    }
}

#[test]
fn check_rejects_a_perturbed_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    fs::write(&data, "t,cause\n1,1\n1.2,3\n1.2,3\n1.4,1\n3,3\n").unwrap();
    let est = dir.path().join("bad.csv");
    // The fitted jump at 1.4 slid to 1.1, across the censored pair.
    fs::write(
        &est,
        "k,t,value\n1,1,0.3333333333333333\n1,1.1,0.5\n2,3,0\n",
    )
    .unwrap();
    let check = run(&[
        "check",
        "--data",
        data.to_str().unwrap(),
        "--estimate",
        est.to_str().unwrap(),
    ]);
    assert_eq!(code(&check), 3);
}

#[test]
fn check_missing_file_is_a_data_error() {
    let out = run(&[
        "check",
        "--data",
        "no-such.csv",
        "--estimate",
        "also-missing.csv",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&run(&["estimate", "--estimator", "bogus"])), 1);
    assert_eq!(code(&run(&["no-such-command"])), 1);
    let dir = tempfile::tempdir().unwrap();
    // reps below the minimum is a usage error.
    let out = run(&[
        "simulate-mse",
        "--sizes",
        "10",
        "--reps",
        "1",
        "--seed",
        "1",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
    // empty estimator list is a usage error.
    let out = run(&[
        "simulate-mse",
        "--sizes",
        "10",
        "--reps",
        "2",
        "--seed",
        "1",
        "--estimators",
        "",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn simulate_limit_rejects_degenerate_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let base = |extra: &[&str]| {
        let mut v = vec![
            "simulate-limit".to_string(),
            "--reps".into(),
            "1".into(),
            "--seed".into(),
            "1".into(),
            "--out-dir".into(),
            dir.path().join("x").to_str().unwrap().to_string(),
        ];
        v.extend(extra.iter().map(|s| s.to_string()));
        v
    };
    for extra in [
        vec!["--step", "0"],
        vec!["--step", "-0.1"],
        vec!["--damping", "0"],
        vec!["--damping", "1.5"],
        vec!["--sample-factor", "0.5"],
        vec!["--tol", "0"],
    ] {
        let argv = base(&extra);
        let argv: Vec<&str> = argv.iter().map(|s| s.as_str()).collect();
        assert_eq!(code(&run(&argv)), 1, "{extra:?}");
    }
}

#[test]
fn simulate_mse_is_deterministic_and_thread_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &str, threads: &str| {
        vec![
            "simulate-mse".to_string(),
            "--sizes".into(),
            "30".into(),
            "--reps".into(),
            "3".into(),
            "--seed".into(),
            "12".into(),
            "--estimators".into(),
            "naive,mle".into(),
            "--grid-end".into(),
            "1.0".into(),
            "--grid-step".into(),
            "0.5".into(),
            "--threads".into(),
            threads.into(),
            "--out-dir".into(),
            dir.path().join(out).to_str().unwrap().into(),
        ]
    };
    for (out, threads) in [("a", "1"), ("b", "1"), ("c", "3")] {
        let argv = args(out, threads);
        let argv: Vec<&str> = argv.iter().map(|s| s.as_str()).collect();
        assert_eq!(code(&run(&argv)), 0);
    }
    let a = read(&dir.path().join("a/mse_n30.csv"));
    assert_eq!(a, read(&dir.path().join("b/mse_n30.csv")));
    assert_eq!(a, read(&dir.path().join("c/mse_n30.csv")));
    assert!(a.starts_with("estimator,k,t,mse,relative_mse\n"));
    // config echo is written alongside.
    let cfg: serde_json::Value =
        serde_json::from_str(&read(&dir.path().join("a/mse_config.json"))).unwrap();
    assert_eq!(cfg["seed"], serde_json::json!(12));
}

#[test]
fn simulate_mse_accepts_config_file_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    fs::write(
        &cfg_path,
        r#"{
            "model": {"obs_rate": 1.0, "cause_probs": [0.3333333333333333, 0.6666666666666666], "cond_rates": [1.0, 2.0]},
            "sizes": [25],
            "reps": 2,
            "grid": {"start": 0.0, "step": 0.5, "end": 1.0},
            "estimators": ["naive"],
            "seed": 3
        }"#,
    )
    .unwrap();
    let out = run(&[
        "simulate-mse",
        "--config",
        cfg_path.to_str().unwrap(),
        "--reps",
        "3",
        "--out-dir",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{out:?}");
    let cfg: serde_json::Value =
        serde_json::from_str(&read(&dir.path().join("out/mse_config.json"))).unwrap();
    // The flag override wins over the file value.
    assert_eq!(cfg["reps"], serde_json::json!(3));
    assert_eq!(cfg["sizes"], serde_json::json!([25]));
}

#[test]
fn simulate_limit_zero_noise_gives_parabolas_and_single_cause_collapses() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "simulate-limit",
        "--reps",
        "1",
        "--seed",
        "2",
        "--step",
        "0.1",
        "--analysis-half",
        "1.0",
        "--zero-noise",
        "--out-dir",
        dir.path().join("z").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{out:?}");
    let body = read(&dir.path().join("z/paths_0000.csv"));
    let mut lines = body.lines();
    let header = lines.next().unwrap();
    assert_eq!(
        header,
        "t,V_1,V_2,Hhat_1,Hhat_2,Fhat_1,Fhat_2,Htilde_1,Htilde_2,Ftilde_1,Ftilde_2"
    );
    // At t = -1 the drift-only path V_1 is f01/2 with f01 = e^{-1}/3.
    let row: Vec<f64> = lines
        .find(|l| l.starts_with("-1,"))
        .unwrap()
        .split(',')
        .map(|x| x.parse().unwrap())
        .collect();
    let f01 = (-1.0f64).exp() / 3.0;
    assert!((row[1] - 0.5 * f01).abs() < 1e-12);

    // Single cause: the fitted and componentwise-minorant columns agree.
    let out = run(&[
        "simulate-limit",
        "--cause-probs",
        "0.5",
        "--cond-rates",
        "1.0",
        "--reps",
        "1",
        "--seed",
        "2",
        "--step",
        "0.1",
        "--analysis-half",
        "1.0",
        "--out-dir",
        dir.path().join("k1").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let body = read(&dir.path().join("k1/paths_0000.csv"));
    for line in body.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[2], f[4], "Hhat vs Htilde in {line}");
        assert_eq!(f[3], f[5], "Fhat vs Ftilde in {line}");
    }
}

#[test]
fn simulate_limit_accepts_direct_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let params = dir.path().join("params.json");
    fs::write(
        &params,
        r#"{"t0": 1.0, "subdist": [0.21, 0.58], "density": [0.12, 0.18], "obs_density": 0.37}"#,
    )
    .unwrap();
    let out = run(&[
        "simulate-limit",
        "--params-json",
        params.to_str().unwrap(),
        "--reps",
        "1",
        "--seed",
        "6",
        "--step",
        "0.05",
        "--analysis-half",
        "1.0",
        "--out-dir",
        dir.path().join("p").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{out:?}");
    assert!(dir.path().join("p/paths_0000.csv").exists());
}

#[test]
fn mse_grid_points_print_as_clean_decimals() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "simulate-mse",
        "--sizes",
        "20",
        "--reps",
        "2",
        "--seed",
        "1",
        "--estimators",
        "naive",
        "--grid-end",
        "0.3",
        "--grid-step",
        "0.01",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let body = read(&dir.path().join("mse_n20.csv"));
    assert!(
        body.contains("\nnaive,1,0.29,"),
        "grid point 0.29 prints exactly"
    );
    assert!(!body.contains("0.29000000000000004"));
}

#[test]
fn simulate_limit_reports_convergence_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "simulate-limit",
        "--reps",
        "4",
        "--seed",
        "31",
        "--step",
        "0.05",
        "--analysis-half",
        "1.5",
        "--threads",
        "2",
        "--out-dir",
        dir.path().join("s").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{out:?}");
    let summary: serde_json::Value =
        serde_json::from_str(&read(&dir.path().join("s/summary.json"))).unwrap();
    assert_eq!(summary["reps"], serde_json::json!(4));
    let converged = summary["converged"].as_u64().unwrap();
    assert!(converged >= 3);
    for rep in 0..4 {
        let d: serde_json::Value = serde_json::from_str(&read(
            &dir.path().join(format!("s/diagnostics_{rep:04}.json")),
        ))
        .unwrap();
        if d["converged"].as_bool().unwrap() {
            assert!(d["sum_excess"].as_f64().unwrap() <= 1e-6);
            assert!(d["order_excess"].as_f64().unwrap() <= 1e-6);
        }
    }
}
