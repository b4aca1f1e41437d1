use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mpml"))
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn run(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> std::process::Output {
    bin()
        .arg(cmd)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn report(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

#[test]
fn estimate_running_dataset() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "data.csv", "1.2\n0.8\n2.0\n1.0\n");
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"schema_version":1,"family":"normal","dataset":"data.csv"}"#,
    );
    let out = dir.path().join("out");
    let o = run("estimate", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 1);
    let r = report(&out);
    assert_eq!(r["schema_version"], 1);
    assert!(r["generated_unix"].is_u64());
    let v = &r["result"]["post_mean"]["value"];
    assert!((v[0].as_f64().unwrap() - 4.51807).abs() < 1e-5);
    assert!((v[1].as_f64().unwrap() - 3.61446).abs() < 1e-5);
    assert_eq!(r["dataset"]["n"], 4);
    assert_eq!(r["dataset"]["columns"][0]["role"], "observation");

    // tables round-trip to the report's numbers
    let mut rdr = csv::Reader::from_path(out.join("tables/estimate.csv")).unwrap();
    let rows: Vec<(String, String, f64)> = rdr.deserialize().map(|r| r.unwrap()).collect();
    let pm: Vec<f64> = rows.iter().filter(|r| r.0 == "post_mean").map(|r| r.2).collect();
    assert_eq!(pm, vec![v[0].as_f64().unwrap(), v[1].as_f64().unwrap()]);
}

#[test]
fn both_dataset_and_generator_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "data.csv", "1\n2\n3\n");
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"schema_version":1,"family":"normal","dataset":"data.csv","generator":{"truth":[0,1],"n":5}}"#,
    );
    let o = run("estimate", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.contains("not both"));
}

#[test]
fn unknown_names_list_the_vocabulary() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"schema_version":1,"family":"weibull","generator":{"truth":[0,1],"n":5}}"#,
    );
    let o = run("estimate", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("gamma") && err.contains("two-binomial"), "{err}");
}

#[test]
fn deterministic_reports_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"schema_version":1,"family":"gamma","seed":9,
            "risk":{"truth":[1,2],"n":5,"reps":300,"estimators":["mle","cml"],"loss":"kl-plugin"}}"#,
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run("risk-sim", &cfg, out, &["--deterministic"]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let ra = fs::read(a.join("report.json")).unwrap();
    assert_eq!(ra, fs::read(b.join("report.json")).unwrap());
    assert!(!String::from_utf8_lossy(&ra).contains("generated_unix"));
    for t in ["risk.csv", "paired.csv", "bias.csv"] {
        assert_eq!(fs::read(a.join("tables").join(t)).unwrap(), fs::read(b.join("tables").join(t)).unwrap());
    }
    // a different seed changes the numbers
    let c = dir.path().join("c");
    run("risk-sim", &cfg, &c, &["--deterministic", "--seed", "10"]);
    assert_ne!(ra, fs::read(c.join("report.json")).unwrap());
}

#[test]
fn order_check_writes_fit_tables() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"schema_version":1,"family":"normal","seed":3,
            "order_check":{"truth":[0.5,1],"ns":[8,16,32,64],"reps":4,"protocol":"mean-vs-conditional"}}"#,
    );
    let out = dir.path().join("o");
    let o = run("order-check", &cfg, &out, &["--deterministic"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("tables/order_check.csv")).unwrap();
    assert!(text.starts_with("n,coordinate,mean_abs_diff,reps_used\n"));
    assert_eq!(text.lines().count(), 1 + 4 * 2);
    let r = report(&out);
    assert_eq!(r["result"]["fits"][0]["exact"], true);
}

#[test]
fn predictor_kl_and_prior_eval() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "data.csv", "x\n1.2\n0.8\n2.0\n1.0\n");
    let cfg = write(
        dir.path(),
        "k.json",
        r#"{"schema_version":1,"family":"normal","dataset":"data.csv",
            "psi_grid":{"from":0.5,"to":6.0,"points":56}}"#,
    );
    let out = dir.path().join("k");
    let o = run("predictor-kl", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    let argmin = r["result"]["argmin"].as_f64().unwrap();
    assert!((argmin - 3.0 / 0.83).abs() <= 0.1);

    let cfg = write(
        dir.path(),
        "p.json",
        r#"{"schema_version":1,"family":"normal","dataset":"data.csv","prior":"pml",
            "points":[[0,1],[5,1],[0,2]]}"#,
    );
    let out = dir.path().join("p");
    let o = run("prior-eval", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = &report(&out)["result"]["values"];
    let lp = |i: usize| v[i]["log_prior"].as_f64().unwrap();
    assert_eq!(lp(0), lp(1));
    assert!((lp(2) - lp(0) + 0.5 * 2f64.ln()).abs() < 1e-12);
}

#[test]
fn stratified_csv_estimate() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "s.csv", "y,stratum\n1.0,0\n2.0,0\n0.5,1\n-0.5,1\n3.0,2\n3.3,2\n");
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"schema_version":1,"family":"strata:normal","dataset":"s.csv"}"#,
    );
    let out = dir.path().join("o");
    let o = run("estimate", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    assert_eq!(r["dataset"]["strata"]["k"], 3);
    // conditional MLE: (N - K) / Σ within-stratum SS
    let ss = 0.5 + 0.5 + 0.045;
    let cml = r["result"]["psi_cml"].as_f64().unwrap();
    assert!((cml - 3.0 / ss).abs() < 1e-8 * cml);
}

#[test]
fn zero_variance_covariate_is_rejected() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "d.csv", "x,z\n1,1\n0,1\n1,1\n");
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"schema_version":1,"family":"two-binomial","dataset":"d.csv"}"#,
    );
    let o = run("estimate", &cfg, &dir.path().join("o"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("zero variance"));
}
