use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn forge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_forge"))
        .args(args)
        .env_remove("FORGE_SEED")
        .output()
        .expect("spawn forge")
}

fn ok(args: &[&str]) -> String {
    let out = forge(args);
    assert!(
        out.status.success(),
        "forge {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small toy dataset shared by the training tests.
fn toy(dir: &Path) -> PathBuf {
    let path = dir.join("toy.json");
    ok(&[
        "gen",
        "--family",
        "toy",
        "--dim-y",
        "4",
        "--instances",
        "60",
        "--seed",
        "3",
        "--out",
        p(&path),
    ]);
    path
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

#[test]
fn gen_is_deterministic_and_prints_summary() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let stdout = ok(&[
        "gen",
        "--family",
        "toy",
        "--dim-y",
        "64",
        "--seed",
        "1",
        "--out",
        p(&a),
    ]);
    assert!(stdout.contains("dim_y=64"), "{stdout}");
    ok(&[
        "gen",
        "--family",
        "toy",
        "--dim-y",
        "64",
        "--seed",
        "1",
        "--out",
        p(&b),
    ]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let c = dir.path().join("c.json");
    ok(&[
        "gen",
        "--family",
        "toy",
        "--dim-y",
        "64",
        "--seed",
        "2",
        "--out",
        p(&c),
    ]);
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn gen_rejects_fewer_sets_than_items() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("w.json");
    let res = forge(&[
        "gen",
        "--family",
        "wsmc",
        "--sets",
        "9",
        "--items",
        "10",
        "--out",
        p(&out),
    ]);
    assert!(!res.status.success());
    assert!(!out.exists());
}

#[test]
fn usage_and_runtime_errors_have_distinct_codes() {
    let res = forge(&["train", "--no-such-flag"]);
    assert_eq!(res.status.code(), Some(2));
    let res = forge(&[
        "train",
        "--data",
        "/nonexistent/forge.json",
        "--out",
        "/tmp",
    ]);
    assert_eq!(res.status.code(), Some(1));
    let res = forge(&["report"]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn train_three_seeds_writes_runs_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy(dir.path());
    let out = dir.path().join("runs");
    let stdout = ok(&[
        "train",
        "--data",
        p(&data),
        "--method",
        "gsl",
        "--seeds",
        "0,1,2",
        "--epochs",
        "3",
        "--out",
        p(&out),
    ]);
    assert!(stdout.contains("gsl"), "{stdout}");
    for s in 0..3 {
        let run = out.join("gsl").join(format!("seed-{s}"));
        for f in ["metrics.csv", "model.json", "config.json", "report.json"] {
            assert!(run.join(f).exists(), "missing {f} for seed {s}");
        }
        let (_, rows) = csv_rows(&run.join("metrics.csv"));
        assert!(!rows.is_empty() && rows.len() <= 3);
    }
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let row = &summary[0];
    for key in ["regret_mean", "regret_std", "calls_mean", "calls_std"] {
        assert!(row[key].is_number(), "summary lacks {key}");
    }
    assert_eq!(row["seeds"], serde_json::json!([0, 1, 2]));
}

#[test]
fn sfge_never_uses_the_surrogate() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy(dir.path());
    let out = dir.path().join("runs");
    ok(&[
        "train",
        "--data",
        p(&data),
        "--method",
        "sfge",
        "--seeds",
        "4",
        "--epochs",
        "3",
        "--out",
        p(&out),
    ]);
    let (header, rows) = csv_rows(&out.join("sfge/seed-4/metrics.csv"));
    let col = header
        .iter()
        .position(|h| h == "surrogate_hit_rate")
        .unwrap();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r[col].parse::<f64>().unwrap() == 0.0));
}

#[test]
fn identical_invocations_reproduce_the_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        ok(&[
            "train",
            "--data",
            p(&data),
            "--seeds",
            "5",
            "--epochs",
            "2",
            "--out",
            p(out),
        ]);
    }
    let model = |d: &Path| fs::read(d.join("gsl/seed-5/model.json")).unwrap();
    assert_eq!(model(&a), model(&b));
    let cfg: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("gsl/seed-5/config.json")).unwrap())
            .unwrap();
    assert_eq!(cfg["seeds"], serde_json::json!([5]));
}

#[test]
fn parallel_jobs_match_sequential_runs() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy(dir.path());
    let a = dir.path().join("seq");
    let b = dir.path().join("par");
    ok(&[
        "train",
        "--data",
        p(&data),
        "--seeds",
        "0,1",
        "--epochs",
        "2",
        "--out",
        p(&a),
    ]);
    ok(&[
        "train",
        "--data",
        p(&data),
        "--seeds",
        "0,1",
        "--epochs",
        "2",
        "--jobs",
        "2",
        "--out",
        p(&b),
    ]);
    for s in 0..2 {
        let rel = format!("gsl/seed-{s}/model.json");
        assert_eq!(
            fs::read(a.join(&rel)).unwrap(),
            fs::read(b.join(&rel)).unwrap()
        );
    }
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("env.json");
    let b = dir.path().join("flag.json");
    let status = Command::new(env!("CARGO_BIN_EXE_forge"))
        .args([
            "gen",
            "--family",
            "toy",
            "--dim-y",
            "3",
            "--instances",
            "20",
            "--out",
            p(&a),
        ])
        .env("FORGE_SEED", "9")
        .status()
        .unwrap();
    assert!(status.success());
    ok(&[
        "gen",
        "--family",
        "toy",
        "--dim-y",
        "3",
        "--instances",
        "20",
        "--seed",
        "9",
        "--out",
        p(&b),
    ]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn zero_time_limit_keeps_the_warm_start() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy(dir.path());
    let out = dir.path().join("runs");
    ok(&[
        "train",
        "--data",
        p(&data),
        "--seeds",
        "0",
        "--time-limit",
        "0",
        "--out",
        p(&out),
    ]);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("gsl/seed-0/report.json")).unwrap())
            .unwrap();
    assert_eq!(report["metrics"]["epochs_run"], 0);
    assert_eq!(report["metrics"]["stop_reason"], "time_limit");
}

#[test]
fn config_file_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy(dir.path());
    let cfg = dir.path().join("over.txt");
    fs::write(&cfg, "# trainer overrides\nepochs = 1\nbeta = 0.25\n").unwrap();
    let out = dir.path().join("runs");
    ok(&[
        "train",
        "--data",
        p(&data),
        "--seeds",
        "0",
        "--config",
        p(&cfg),
        "--out",
        p(&out),
    ]);
    let saved: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("gsl/seed-0/config.json")).unwrap())
            .unwrap();
    let text = saved.to_string();
    assert!(text.contains("\"beta\":0.25"), "{text}");
    let (_, rows) = csv_rows(&out.join("gsl/seed-0/metrics.csv"));
    assert_eq!(rows.len(), 1);

    fs::write(&cfg, "no_such_key = 3\n").unwrap();
    let res = forge(&[
        "train",
        "--data",
        p(&data),
        "--config",
        p(&cfg),
        "--out",
        p(&out),
    ]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn report_aggregates_methods_and_curves() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy(dir.path());
    let out = dir.path().join("runs");
    for m in ["gsl", "sfge"] {
        ok(&[
            "train",
            "--data",
            p(&data),
            "--method",
            m,
            "--seeds",
            "0,1,2",
            "--epochs",
            "2",
            "--out",
            p(&out),
        ]);
    }
    let table = dir.path().join("table.csv");
    let curves = dir.path().join("curves.csv");
    ok(&[
        "report",
        p(&out),
        "--out",
        p(&table),
        "--curves",
        p(&curves),
    ]);
    let (header, rows) = csv_rows(&table);
    assert_eq!(
        header,
        [
            "method",
            "regret_mean",
            "regret_std",
            "calls_mean",
            "calls_std",
            "runs"
        ]
    );
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r[5] == "3"));
    let (_, curve_rows) = csv_rows(&curves);
    assert!(curve_rows.len() >= 6);

    let single = ok(&["report", p(&out.join("gsl/seed-0"))]);
    let mut r = csv::Reader::from_reader(single.as_bytes());
    let rec = r.records().next().unwrap().unwrap();
    assert_eq!(rec[2].parse::<f64>().unwrap(), 0.0);
    assert_eq!(rec[4].parse::<f64>().unwrap(), 0.0);

    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    assert!(!forge(&["report", p(&empty)]).status.success());
}

#[test]
fn ablation_grid_has_five_rows() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy(dir.path());
    let out = dir.path().join("grid");
    ok(&[
        "train",
        "--data",
        p(&data),
        "--ablation-grid",
        "--seeds",
        "0",
        "--epochs",
        "1",
        "--out",
        p(&out),
    ]);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.as_array().unwrap().len(), 5);
    let stdout = ok(&["report", p(&out)]);
    assert_eq!(stdout.lines().count(), 6, "{stdout}");
}

#[test]
fn pfl_command_writes_a_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy(dir.path());
    let model = dir.path().join("pfl.json");
    ok(&[
        "pfl",
        "--data",
        p(&data),
        "--out",
        p(&model),
        "--epochs",
        "5",
    ]);
    let m = forge_core::predictor::PredictorModel::load(&model).unwrap();
    assert_eq!(m.forward(&[0.0; 5]).unwrap().len(), 4);
}
