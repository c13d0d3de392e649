use std::fs;
use std::io::BufReader;
use std::path::Path;
use std::process::{Command, Output};

use maxqnorm::io::{read_tns, write_observations, write_tns};
use maxqnorm::tensor::{random_low_rank, FactorKind};
use maxqnorm::{DenseTensor, ObservationSet, Shape};
use serde_json::Value;
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maxqnorm")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_string_lossy().into_owned()
}

fn save_tns(t: &DenseTensor, p: &str) {
    write_tns(t, fs::File::create(p).unwrap()).unwrap();
}

fn load_tns(p: &str) -> DenseTensor {
    read_tns(BufReader::new(fs::File::open(p).unwrap())).unwrap()
}

/// Drops the trailing `seconds` column.
fn without_seconds(p: &Path) -> Vec<String> {
    fs::read_to_string(p)
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect()
}

#[test]
fn complete_recovers_fully_observed_rank_one() {
    let dir = TempDir::new().unwrap();
    let shape = Shape::new(vec![5, 4, 3]).unwrap();
    let (_, truth) = random_low_rank(&shape, 1, FactorKind::Sign, 11).unwrap();
    let obs_path = path(&dir, "obs.csv");
    write_observations(&ObservationSet::full(&truth), fs::File::create(&obs_path).unwrap()).unwrap();
    let truth_path = path(&dir, "truth.tns");
    save_tns(&truth, &truth_path);
    let out_path = path(&dir, "rec.tns");
    let out = run(&[
        "complete", "--obs", &obs_path, "--shape", "5,4,3", "--lower", "0.5", "--upper", "4", "--solver", "pqn",
        "--seed", "3", "--max-iters", "300", "--truth", &truth_path, "--out", &out_path,
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&out);
    for key in ["chosen_R", "validation_rmse", "iterations"] {
        assert!(report[key].is_number(), "{report}");
    }
    let rec = load_tns(&out_path);
    let err = rec.sub(&truth).unwrap().frobenius().powi(2) / truth.frobenius().powi(2);
    assert!(err <= 1e-3, "{err}");
    assert!((report["relative_error"].as_f64().unwrap() - err).abs() < 1e-12);
}

#[test]
fn complete_input_errors() {
    let dir = TempDir::new().unwrap();
    let shape = Shape::new(vec![3, 3]).unwrap();
    let t = DenseTensor::new(shape, vec![1.0; 9]).unwrap();
    let obs_path = path(&dir, "obs.csv");
    write_observations(&ObservationSet::full(&t), fs::File::create(&obs_path).unwrap()).unwrap();
    let out_path = path(&dir, "rec.tns");
    let base = ["complete", "--obs", &obs_path, "--out", &out_path];
    let with = |extra: &[&str]| run(&[&base[..], extra].concat());
    assert_eq!(code(&with(&["--lower", "1", "--upper", "2"])), 2);
    assert_eq!(code(&with(&["--shape", "3,3", "--lower", "2", "--upper", "1"])), 2);
    assert_eq!(code(&with(&["--shape", "2,2", "--lower", "1", "--upper", "2"])), 2);
    assert_eq!(code(&with(&["--shape", "3,x", "--lower", "1", "--upper", "2"])), 2);
    assert_eq!(code(&with(&["--shape", "3,3", "--lower", "1", "--upper", "2", "--solver", "lbfgs"])), 2);
    let bad = path(&dir, "bad.csv");
    fs::write(&bad, "i1,i2,value\n1,1,oops\n").unwrap();
    let out = run(&["complete", "--obs", &bad, "--shape", "3,3", "--lower", "1", "--upper", "2", "--out", &out_path]);
    assert_eq!(code(&out), 2);
    assert!(!out.stderr.is_empty());
    assert!(!Path::new(&out_path).exists());
}

#[test]
fn maxqnorm_known_values() {
    let dir = TempDir::new().unwrap();
    let ones = path(&dir, "ones.tns");
    save_tns(&DenseTensor::new(Shape::new(vec![4, 4, 4]).unwrap(), vec![1.0; 64]).unwrap(), &ones);
    let out = run(&["maxqnorm", "--input", &ones, "--lower", "0.5", "--upper", "4.5"]);
    assert_eq!(code(&out), 0);
    let v = json(&out);
    assert!((v["estimate"].as_f64().unwrap() - 1.0).abs() <= 0.07, "{v}");
    assert!(v["resolution"].as_f64().unwrap() > 0.0);

    let fixture = path(&dir, "fixture.tns");
    fs::write(&fixture, "3\n2 2 2\n2\n1\n1\n1\n1\n1\n1\n1\n").unwrap();
    let v = json(&run(&["maxqnorm", "--input", &fixture, "--lower", "1", "--upper", "4"]));
    let est = v["estimate"].as_f64().unwrap();
    assert!(est > 2.0 && est <= 2.0 * 2f64.sqrt() + 0.1, "{v}");

    assert_eq!(code(&run(&["maxqnorm", "--input", &path(&dir, "missing.tns"), "--lower", "1", "--upper", "4"])), 2);
    assert_eq!(code(&run(&["maxqnorm", "--input", &ones, "--lower", "2", "--upper", "2"])), 2);
}

fn small_grid(dir: &TempDir) -> String {
    let cfg = path(dir, "grid.json");
    fs::write(
        &cfg,
        r#"{"shape": [6, 6, 6], "ranks": [1], "sample_rates": [0.5], "factor_kind": "sign",
            "trials": 2, "methods": ["maxq_pqn"], "master_seed": 5, "lower": 1, "upper": 4,
            "solver": {"max_iters": 100}}"#,
    )
    .unwrap();
    cfg
}

#[test]
fn grid_rows_and_determinism() {
    let dir = TempDir::new().unwrap();
    let cfg = small_grid(&dir);
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let out = run(&["grid", "--config", &cfg, "--out", a.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let detail = without_seconds(&a);
    assert_eq!(detail.len(), 3);
    assert_eq!(detail[0], "d,N,rank,sample_rate,noise_db,method,trial,rel_err_sq,chosen_R");
    let summary = fs::read_to_string(dir.path().join("a.summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2);
    let s2 = dir.path().join("s2.csv");
    let out = run(&["grid", "--config", &cfg, "--out", b.to_str().unwrap(), "--summary", s2.to_str().unwrap(), "--jobs", "1"]);
    assert_eq!(code(&out), 0);
    assert_eq!(without_seconds(&b), detail);
    assert!(s2.exists());
}

#[test]
fn grid_rejects_malformed_config() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "o.csv");
    for body in [
        "not json",
        r#"{"shape": [4, 4], "ranks": [], "sample_rates": [0.5], "factor_kind": "sign", "methods": ["maxq_pqn"]}"#,
        r#"{"shape": [4, 4], "ranks": [1], "sample_rates": [1.5], "factor_kind": "sign", "methods": ["maxq_pqn"]}"#,
        r#"{"shape": [4, 4], "ranks": [1], "sample_rates": [0.5], "factor_kind": "sign", "methods": ["fpca"]}"#,
        r#"{"shape": [4, 4], "ranks": [1], "sample_rates": [0.5], "factor_kind": "sign", "methods": ["maxq_pqn"], "trials": 0}"#,
        r#"{"shape": [4, 4], "ranks": [1], "sample_rates": [0.5], "factor_kind": "sign", "methods": ["maxq_pqn"], "colour": 1}"#,
    ] {
        let cfg = path(&dir, "bad.json");
        fs::write(&cfg, body).unwrap();
        assert_eq!(code(&run(&["grid", "--config", &cfg, "--out", &out])), 2, "{body}");
    }
    assert_eq!(code(&run(&["grid", "--config", &path(&dir, "none.json"), "--out", &out])), 2);
}

#[test]
fn norm_experiment_rank_one() {
    let dir = TempDir::new().unwrap();
    let cfg = path(&dir, "norm.json");
    fs::write(&cfg, r#"{"dims": [3], "sizes": [4], "ranks": [1], "factor_kind": "sign", "trials": 2}"#).unwrap();
    let out = path(&dir, "norm.csv");
    assert_eq!(code(&run(&["norm-experiment", "--config", &cfg, "--out", &out])), 0);
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("d,N,rank,factor_kind,trial,maxqnorm_est"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    for row in rows {
        let est: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
        assert!((est - 1.0).abs() <= 0.07, "{row}");
    }
}

#[test]
fn usage_exit_codes() {
    assert_eq!(code(&run(&["frobnicate"])), 2);
    assert_eq!(code(&run(&[])), 2);
    assert_eq!(code(&run(&["--help"])), 0);
}
