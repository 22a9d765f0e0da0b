mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use advi::models::{simulate, MODEL_NAMES};
use tempfile::TempDir;

fn advi(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_advi"))
        .args(args)
        .current_dir(dir)
        .env_remove("ADVI_THREADS")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn write_json(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(str::to_string).collect())
        .collect();
    (header, rows)
}

fn numeric(rows: &[Vec<String>]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| r.iter().map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn weibull_poisson_fit_writes_positive_draws() {
    let dir = TempDir::new().unwrap();
    write_json(&dir, "wp.json", r#"{"x": [0, 1, 2]}"#);
    let out = advi(&["fit", "weibull_poisson", "--data", "wp.json", "--seed", "3"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let (header, rows) = read_csv(&dir.path().join("output_advi.csv"));
    assert_eq!(header, ["theta"]);
    assert_eq!(rows.len(), 1000);
    assert!(numeric(&rows).iter().all(|r| r[0] > 0.0));

    let (header, rows) = read_csv(&dir.path().join("elbo_advi.csv"));
    assert_eq!(header, ["iter", "elapsed_seconds", "elbo"]);
    let iters: Vec<usize> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(iters, (1..=rows.len()).collect::<Vec<_>>());
}

#[test]
fn seeds_control_the_draws() {
    let dir = TempDir::new().unwrap();
    write_json(&dir, "wp.json", r#"{"x": [3, 1, 4, 1, 5]}"#);
    let run = |seed: &str, name: &str| {
        let out = advi(
            &["fit", "weibull_poisson", "--data", "wp.json", "--seed", seed, "--no-clock", "--output", name],
            dir.path(),
        );
        assert_eq!(code(&out), 0);
        std::fs::read(dir.path().join(name)).unwrap()
    };
    let a = run("5", "a.csv");
    assert_eq!(a, run("5", "b.csv"));
    assert_ne!(a, run("6", "c.csv"));
}

#[test]
fn threads_do_not_change_results() {
    let dir = TempDir::new().unwrap();
    let data = simulate::logistic_regression(300, 4, 2).to_json_string();
    write_json(&dir, "lr.json", &data);
    let run = |threads: &str, name: &str| {
        let out = advi(
            &[
                "fit",
                "logistic_regression",
                "--data",
                "lr.json",
                "--grad-samples",
                "8",
                "--threads",
                threads,
                "--no-clock",
                "--diagnostic",
                name,
            ],
            dir.path(),
        );
        assert_eq!(code(&out), 0);
        std::fs::read(dir.path().join(name)).unwrap()
    };
    assert_eq!(run("1", "one.csv"), run("4", "four.csv"));
}

#[test]
fn error_exit_codes() {
    let dir = TempDir::new().unwrap();
    write_json(&dir, "wp.json", r#"{"x": [0, 1, 2]}"#);
    write_json(&dir, "bad.json", r#"{"x": [0, 1,"#);
    write_json(&dir, "neg.json", r#"{"x": [0, -1, 2]}"#);

    let cases: [(&[&str], i32); 7] = [
        (&["fit", "no_such_model", "--data", "wp.json"], 3),
        (&["fit", "weibull_poisson", "--data", "missing.json"], 5),
        (&["fit", "weibull_poisson", "--data", "bad.json"], 4),
        (&["fit", "weibull_poisson", "--data", "neg.json"], 4),
        (&["fit", "weibull_poisson", "--data", "wp.json", "--minibatch", "4"], 4),
        (
            &["fit", "weibull_poisson", "--data", "wp.json", "--output", "no/such/dir/out.csv"],
            5,
        ),
        (&["fit", "weibull_poisson", "--data", "wp.json", "--grad-samples", "0"], 4),
    ];
    for (args, want) in cases {
        let out = advi(args, dir.path());
        assert_eq!(code(&out), want, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(!out.stderr.is_empty());
    }
    assert_eq!(code(&advi(&["fit"], dir.path())), 2);
    assert_eq!(code(&advi(&["fit", "weibull_poisson", "--data", "wp.json", "--eta", "x"], dir.path())), 2);
}

#[test]
fn divergence_exits_six_and_keeps_the_trace() {
    let dir = TempDir::new().unwrap();
    write_json(&dir, "wp.json", r#"{"x": [0, 1, 2]}"#);
    let out = advi(
        &["fit", "weibull_poisson", "--data", "wp.json", "--eta", "1e300"],
        dir.path(),
    );
    assert_eq!(code(&out), 6, "{}", String::from_utf8_lossy(&out.stderr));
    let (_, rows) = read_csv(&dir.path().join("elbo_advi.csv"));
    assert!(!rows.is_empty());
}

#[test]
fn simulate_then_fit_every_model() {
    let dir = TempDir::new().unwrap();
    for &name in MODEL_NAMES {
        let json = format!("{name}.json");
        let out = advi(&["simulate", name, "--seed", "2", "--output", &json], dir.path());
        assert_eq!(code(&out), 0, "{name}: {}", String::from_utf8_lossy(&out.stderr));
        let samples = format!("{name}.csv");
        let out = advi(
            &[
                "fit", name, "--data", &json, "--max-iters", "300", "--draws", "50", "--output", &samples,
                "--diagnostic", "trace.csv",
            ],
            dir.path(),
        );
        assert_eq!(code(&out), 0, "{name}: {}", String::from_utf8_lossy(&out.stderr));
        let (header, rows) = read_csv(&dir.path().join(&samples));
        assert_eq!(rows.len(), 50);
        assert!(rows.iter().all(|r| r.len() == header.len()));
        assert!(numeric(&rows).iter().flatten().all(|v| v.is_finite()), "{name}");
    }
}

#[test]
fn simulate_to_stdout_is_valid_json() {
    let dir = TempDir::new().unwrap();
    let out = advi(&["simulate", "gmm", "--seed", "1"], dir.path());
    assert_eq!(code(&out), 0);
    let data = advi::data::Dataset::from_json_str(std::str::from_utf8(&out.stdout).unwrap()).unwrap();
    assert!(advi::models::build("gmm", &data).is_ok());
}

#[test]
fn models_lists_the_zoo() {
    let dir = TempDir::new().unwrap();
    let out = advi(&["models"], dir.path());
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    for name in MODEL_NAMES {
        assert!(text.contains(name), "{name} missing from listing");
    }
}

#[test]
fn predictive_matches_conjugate_posterior_predictive() {
    let dir = TempDir::new().unwrap();
    let rho = 0.5;
    let train = simulate::mvn_conjugate(40, &[0.5, -0.5], rho, 11);
    let held = simulate::mvn_conjugate(20, &[0.5, -0.5], rho, 12);
    write_json(&dir, "train.json", &train.to_json_string());
    write_json(&dir, "held.json", &held.to_json_string());
    let out = advi(
        &[
            "eval",
            "predictive",
            "mvn_conjugate",
            "--data",
            "train.json",
            "--held-out",
            "held.json",
            "--family",
            "fullrank",
            "--grad-samples",
            "10",
            "--tol",
            "1e-4",
            "--draws",
            "20000",
            "--seed",
            "4",
            "--output",
            "pred.csv",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_csv(&dir.path().join("pred.csv"));
    assert_eq!(header, ["model", "draws", "mean_log_predictive"]);
    let got: f64 = rows[0][2].parse().unwrap();

    // y* | y ~ N(m, Σ + S) for posterior N(m, S).
    let (m, s) = common::conjugate_mvn_posterior(train.values("y").unwrap(), 2, rho);
    let sigma = nalgebra::DMatrix::from_fn(2, 2, |i, j| if i == j { 1.0 } else { rho });
    let cov = sigma + s;
    let prec = cov.clone().try_inverse().unwrap();
    let y = held.values("y").unwrap();
    let exact = y
        .chunks(2)
        .map(|p| {
            let d = nalgebra::DVector::from_vec(vec![p[0] - m[0], p[1] - m[1]]);
            -0.5 * (d.transpose() * &prec * &d)[0]
                - 0.5 * cov.determinant().ln()
                - (2.0 * std::f64::consts::PI).ln()
        })
        .sum::<f64>()
        / 20.0;
    assert!((got - exact).abs() < 0.02, "predictive {got} vs exact {exact}");
}

#[test]
fn predictive_reads_saved_draws() {
    let dir = TempDir::new().unwrap();
    write_json(&dir, "wp.json", r#"{"x": [2, 3, 1]}"#);
    write_json(&dir, "held.json", r#"{"x": [2]}"#);
    assert_eq!(code(&advi(&["fit", "weibull_poisson", "--data", "wp.json"], dir.path())), 0);
    let out = advi(
        &[
            "eval", "predictive", "weibull_poisson", "--data", "wp.json", "--held-out", "held.json", "--samples",
            "output_advi.csv", "--output", "p.csv",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let (_, rows) = read_csv(&dir.path().join("p.csv"));
    assert_eq!(rows[0][1], "1000");
    let v: f64 = rows[0][2].parse().unwrap();
    assert!(v < 0.0 && v > -5.0);

    let out = advi(
        &[
            "eval", "predictive", "mvn_conjugate", "--data", "wp.json", "--held-out", "held.json", "--samples",
            "output_advi.csv", "--output", "p.csv",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 4);
}

#[test]
fn kl_study_writes_two_by_three_grid() {
    let dir = TempDir::new().unwrap();
    let out = advi(&["eval", "kl-study", "--seed", "1", "--output", "kl.csv"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_csv(&dir.path().join("kl.csv"));
    assert_eq!(header, ["transform", "gamma(1,2)", "gamma(2.5,4.2)", "gamma(10,10)"]);
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][0], "log");
    assert_eq!(rows[1][0], "softplus");
    for r in &rows {
        assert!(r[1..].iter().all(|v| v.parse::<f64>().unwrap() > 0.0));
    }
}

#[test]
fn variance_study_rows() {
    let dir = TempDir::new().unwrap();
    let out = advi(
        &[
            "eval",
            "variance-study",
            "--grad-samples",
            "1,4",
            "--replications",
            "200",
            "--output",
            "var.csv",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_csv(&dir.path().join("var.csv"));
    assert_eq!(
        header,
        ["estimator", "grad_samples", "replications", "coordinate", "mean", "variance"]
    );
    // Two estimators, two sizes, (μ, ω) of a scalar target.
    assert_eq!(rows.len(), 8);
    let keys: Vec<(&str, &str, &str)> = rows.iter().map(|r| (&*r[0], &*r[1], &*r[3])).collect();
    assert_eq!(keys[0], ("advi", "1", "mu.1"));
    assert_eq!(keys[1], ("advi", "1", "omega.1"));
    assert_eq!(keys[7], ("bbvi", "4", "omega.1"));
    assert!(rows.iter().all(|r| r[2] == "200" && r[5].parse::<f64>().unwrap() >= 0.0));
}

#[test]
fn covariance_of_saved_draws() {
    let dir = TempDir::new().unwrap();
    let csv = "a,b,c\n1,2,0\n2,4,0\n3,6,0\n4,8,1\n";
    std::fs::write(dir.path().join("s.csv"), csv).unwrap();
    let out = advi(
        &["eval", "covariance", "--samples", "s.csv", "--columns", "a,b", "--output", "cov.csv"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_csv(&dir.path().join("cov.csv"));
    assert_eq!(header, ["", "a", "b"]);
    let v: Vec<Vec<f64>> = rows.iter().map(|r| r[1..].iter().map(|x| x.parse().unwrap()).collect()).collect();
    let var_a = 5.0 / 3.0;
    assert!((v[0][0] - var_a).abs() < 1e-12);
    assert!((v[0][1] - 2.0 * var_a).abs() < 1e-12);
    assert!((v[1][1] - 4.0 * var_a).abs() < 1e-12);

    let out = advi(
        &["eval", "covariance", "--samples", "s.csv", "--columns", "z", "--output", "cov.csv"],
        dir.path(),
    );
    assert_eq!(code(&out), 4);
}
