use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn wdrank(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wdrank"))
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .env_remove("WDRANK_DATA_DIR")
        .output()
        .unwrap()
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"))
}

const SMALL: &str = "\
teacher_dim = 4
width = 24
epochs = 25
lr0 = 0.01
n_train = 80
n_test = 20
batch_size = 8
seed = 3
";

fn small_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("exp.cfg");
    fs::write(&path, format!("{SMALL}{extra}")).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn single_point_sweep_equals_train() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path(), "");
    let a = tmp.path().join("train");
    let b = tmp.path().join("sweep");
    assert!(wdrank(&a, &["train", "-c", &cfg]).status.success());
    let out = wdrank(&b, &["sweep", "-c", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let run = b.join("runs/mu_v-1_b-8_seed-3");
    for file in ["train_log.csv", "checkpoint.txt"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(run.join(file)).unwrap(), "{file}");
    }
    let summary = fs::read_to_string(b.join("sweep_summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(
        lines.next().unwrap(),
        "mu_v,batch_size,seed,final_stable_rank,train_mse,test_mse,gap,epsilon,cert_distance,cert_bound,cert_holds"
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&row[..3], &["1", "8", "3"]);
    let train_summary: Value = serde_json::from_slice(&fs::read(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(row[3].parse::<f64>().unwrap(), train_summary["final_stable_rank"].as_f64().unwrap());
    assert_eq!(row[10], "true");
}

#[test]
fn failed_grid_points_do_not_abort_the_sweep() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path(), "sweep_batch_size = 8, 500, 16\n");
    let out = wdrank(tmp.path(), &["sweep", "-c", &cfg]);
    assert!(out.status.success());
    let summary = fs::read_to_string(tmp.path().join("sweep_summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].ends_with(",true"));
    assert!(rows[1].starts_with("1,500,3,NaN") && rows[1].ends_with(",error"));
    assert!(!rows[2].ends_with(",error"));
    let errors: Value = serde_json::from_slice(&fs::read(tmp.path().join("sweep_errors.json")).unwrap()).unwrap();
    assert_eq!(errors.as_array().unwrap().len(), 1);
}

#[test]
fn config_errors_are_json_with_line_numbers() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path(), "batch_size = pony\n");
    let out = wdrank(tmp.path(), &["train", "-c", &cfg]);
    assert!(!out.status.success());
    let err = stderr_json(&out);
    assert_eq!(err["error"]["kind"], "duplicate_key");
    assert_eq!(err["error"]["line"], 9);

    let cfg = small_config(tmp.path(), "momentum = 0.9\n");
    let err = stderr_json(&wdrank(tmp.path(), &["train", "-c", &cfg]));
    assert_eq!(err["error"]["kind"], "unknown_key");
    assert_eq!(err["error"]["line"], 9);

    let path = tmp.path().join("pony.cfg");
    fs::write(&path, "teacher_dim = 3\nbatch_size = pony\n").unwrap();
    let err = stderr_json(&wdrank(tmp.path(), &["train", "-c", path.to_str().unwrap()]));
    assert_eq!(err["error"]["kind"], "type_mismatch");
    assert_eq!(err["error"]["line"], 2);
    assert!(err["error"]["message"].as_str().unwrap().contains("pony"));

    let out = wdrank(tmp.path(), &["train", "--profile", "housing"]);
    assert_eq!(stderr_json(&out)["error"]["kind"], "missing_key");
    assert_eq!(out.status.code(), Some(1));

    let out = wdrank(tmp.path(), &["frobnicate"]);
    assert_eq!(stderr_json(&out)["error"]["kind"], "usage");
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_errors_carry_the_library_kind() {
    let tmp = TempDir::new().unwrap();
    let ckpt = tmp.path().join("bad.txt");
    fs::write(&ckpt, "2 2\n1 2\n").unwrap();
    let out = wdrank(tmp.path(), &["spectrum", "--checkpoint", ckpt.to_str().unwrap()]);
    assert!(!out.status.success());
    assert_eq!(stderr_json(&out)["error"]["kind"], "checkpoint");

    let out = wdrank(tmp.path(), &["bounds", "--m", "8", "--n", "8", "--samples", "100", "--delta", "2"]);
    assert_eq!(stderr_json(&out)["error"]["kind"], "invalid_argument");
}

#[test]
fn data_dir_environment_variable_resolves_csv_paths() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    let out = wdrank(&data, &["gen-data", "--dim", "3", "--samples", "60", "--seed", "4"]);
    assert!(out.status.success());
    let header = fs::read_to_string(data.join("teacher.csv")).unwrap();
    assert!(header.starts_with("x1,x2,x3,y\n"));

    let cfg = tmp.path().join("csv.cfg");
    fs::write(
        &cfg,
        "csv = teacher.csv\ntarget_column = y\nnormalize = zscore\nwidth = 8\nepochs = 3\nn_train = 40\nn_test = 20\n",
    )
    .unwrap();
    let run = |env: Option<&Path>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_wdrank"));
        cmd.arg("--out-dir").arg(tmp.path().join("o")).args(["train", "-c", cfg.to_str().unwrap()]);
        cmd.env_remove("WDRANK_DATA_DIR");
        if let Some(dir) = env {
            cmd.env("WDRANK_DATA_DIR", dir);
        }
        cmd.output().unwrap()
    };
    let missing = run(None);
    assert!(!missing.status.success());
    assert_eq!(stderr_json(&missing)["error"]["kind"], "csv");
    let ok = run(Some(&data));
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    let summary: Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert_eq!(summary["epochs"], 3);

    let help = Command::new(env!("CARGO_BIN_EXE_wdrank")).arg("--help").output().unwrap();
    assert!(String::from_utf8_lossy(&help.stdout).contains("WDRANK_DATA_DIR"));
}

#[test]
fn analysis_subcommands_are_deterministic() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path(), "");
    assert!(wdrank(tmp.path(), &["train", "-c", &cfg]).status.success());
    let ckpt = tmp.path().join("checkpoint.txt");
    let ckpt = ckpt.to_str().unwrap();

    let mut first = Vec::new();
    for round in 0..2 {
        let dir = tmp.path().join(format!("round{round}"));
        let outs = [
            wdrank(&dir, &["census", "-c", &cfg, "--checkpoint", ckpt]),
            wdrank(&dir, &["census", "-c", &cfg, "--checkpoint", ckpt, "--family", "random", "--count", "50"]),
            wdrank(&dir, &["certify", "-c", &cfg, "--checkpoint", ckpt]),
            wdrank(&dir, &["spectrum", "--checkpoint", ckpt]),
            wdrank(&dir, &["bounds", "--m", "8192", "--n", "8", "--samples", "1800"]),
        ];
        let mut files = Vec::new();
        for out in &outs {
            assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
            files.push(out.stdout.clone());
        }
        for name in ["census.csv", "census_histogram.csv", "certificate.json", "spectrum.csv", "bounds.json"] {
            files.push(fs::read(dir.join(name)).unwrap());
        }
        if round == 0 {
            first = files;
        } else {
            assert_eq!(first, files);
        }
    }

    let cert = tmp.path().join("round0/certificate.json");
    let out = wdrank(tmp.path(), &["certify", "--verify", cert.to_str().unwrap()]);
    let check: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(check["holds_proof"], true);

    let census: Value = serde_json::from_slice(&first[0]).unwrap();
    assert_eq!(census["family"]["epoch"], 24);
    assert_eq!(census["batches"], 10);
}

#[test]
fn variable_decay_certificate_from_the_cli() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path(), "g = affine_y2\ng_a = 1\ng_c = 1\n");
    assert!(wdrank(tmp.path(), &["train", "-c", &cfg]).status.success());
    let ckpt = tmp.path().join("checkpoint.txt");
    let out = wdrank(tmp.path(), &["certify", "-c", &cfg, "--checkpoint", ckpt.to_str().unwrap()]);
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["mode"], "variable_g");
    assert_eq!(summary["rank_bound"], 2);
    assert_eq!(summary["holds_proof"], true);
}
