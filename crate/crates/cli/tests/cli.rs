//! The `rnc-lab` binary end to end on small configs.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use rnc_core::data::load_csv;

fn rnc_lab(args: &[&str], out_root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rnc-lab"))
        .args(args)
        .env("RNC_LAB_OUT", out_root)
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path, name: &str, regimes: &str, extra: &str) -> std::path::PathBuf {
    let text = format!(
        r#"name = "{name}"
regimes = {regimes}
seeds = [0]

[dataset]
kind = "synthetic"
n = 96
dim = 6
noise = 0.05

[model]
hidden = [12]
embed_dim = 4

[encoder_stage]
epochs = 4
batch_size = 16

[predictor_stage]
epochs = 4
batch_size = 16

[joint_stage]
epochs = 4
batch_size = 16
{extra}
"#
    );
    let path = dir.join(format!("{name}.toml"));
    std::fs::write(&path, text).unwrap();
    path
}

fn metrics(dir: &Path) -> BTreeMap<String, f64> {
    serde_json::from_str(&std::fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap()
}

#[test]
fn synth_writes_reproducible_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a.csv");
    let b = tmp.path().join("b.csv");
    for p in [&a, &b] {
        let out = rnc_lab(&["synth", "--n", "8", "--dim", "4", "--seed", "3", "--out", p.to_str().unwrap()], tmp.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).contains("8 rows"));
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 9);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let ds = load_csv(&a, "y").unwrap();
    let expected = rnc_core::data::generate_synthetic(8, 4, 0.05, 3).unwrap();
    assert_eq!(ds.features, expected.features);
    assert_eq!(ds.labels, expected.labels);
}

#[test]
fn synth_to_unwritable_path_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let target = blocker.join("data.csv");
    let out = rnc_lab(&["synth", "--n", "8", "--dim", "4", "--out", target.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_writes_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "small", r#"["l1", "rnc+l1"]"#, "");
    for (regime, slug) in [("l1", "l1"), ("rnc+l1", "rnc-l1")] {
        let out = rnc_lab(&["train", "--config", cfg.to_str().unwrap(), "--regime", regime], tmp.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let dir = tmp.path().join(format!("small-{slug}-seed0"));
        for f in ["config.toml", "train_loss.csv", "val_loss.csv", "metrics.json", "model.json"] {
            assert!(dir.join(f).is_file(), "{regime}: missing {f}");
        }
        let m = metrics(&dir);
        assert!(m.contains_key("val_mae"));
        assert_eq!(m.contains_key("final_encoder_rnc_loss"), regime == "rnc+l1");
        let train_csv = std::fs::read_to_string(dir.join("train_loss.csv")).unwrap();
        assert_eq!(train_csv.lines().next(), Some("epoch,loss"));
        assert_eq!(train_csv.lines().count(), 5);

        // The resolved copy alone reproduces the run.
        let copy = dir.join("config.toml");
        let again = tmp.path().join("again");
        let out = rnc_lab(&["train", "--config", copy.to_str().unwrap()], &again);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let redo = again.join(format!("small-{slug}-seed0"));
        for f in ["train_loss.csv", "val_loss.csv", "metrics.json"] {
            assert_eq!(std::fs::read(dir.join(f)).unwrap(), std::fs::read(redo.join(f)).unwrap(), "{f}");
        }
    }
}

#[test]
fn compare_summarizes_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(
        tmp.path(),
        "cmp",
        r#"["l1", "rnc+l1"]"#,
        "\n[split]\nkind = \"holdout_band\"\nval_fraction = 0.3\n",
    );
    let out = rnc_lab(&["compare", "--config", cfg.to_str().unwrap(), "--jobs", "2"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let rows: Vec<&str> = stdout.lines().filter(|l| l.starts_with("l1 ") || l.starts_with("rnc+l1 ")).collect();
    assert_eq!(rows.len(), 2, "{stdout}");

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("cmp/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["failed"], 0);
    for regime in ["l1", "rnc+l1"] {
        let r = &summary["regimes"][regime];
        assert!(r["val_mae_inband"]["median"].is_f64(), "{regime}");
        assert!(r["val_mae_outband"]["median"].is_f64(), "{regime}");
    }
    assert!(tmp.path().join("cmp/summary.txt").is_file());
    assert!(tmp.path().join("cmp/rnc-l1-seed0/metrics.json").is_file());
}

#[test]
fn compare_records_failed_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "broken", r#"["l1", "rnc+l1"]"#, "");
    // A joint batch larger than the training set fails only the l1 run.
    let text = std::fs::read_to_string(&cfg).unwrap().replace(
        "[joint_stage]\nepochs = 4\nbatch_size = 16",
        "[joint_stage]\nepochs = 4\nbatch_size = 500",
    );
    std::fs::write(&cfg, text).unwrap();
    let out = rnc_lab(&["compare", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("broken/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["failed"], 1);
    assert!(summary["regimes"]["rnc+l1"]["val_mae"]["median"].is_f64());
    assert!(summary["regimes"].get("l1").is_none());
}

#[test]
fn gradcheck_command() {
    let tmp = tempfile::tempdir().unwrap();
    let ok = rnc_lab(&["gradcheck", "--seed", "1"], tmp.path());
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stdout));
    let stdout = String::from_utf8_lossy(&ok.stdout).to_string();
    for loss in ["rnc", "l1", "supcon"] {
        assert!(stdout.lines().any(|l| l.starts_with(loss) && l.ends_with("ok")), "{stdout}");
    }
    let again = rnc_lab(&["gradcheck", "--seed", "1"], tmp.path());
    assert_eq!(String::from_utf8_lossy(&again.stdout), stdout);

    let strict = rnc_lab(&["gradcheck", "--seed", "1", "--tol", "1e-15"], tmp.path());
    assert_eq!(strict.status.code(), Some(2));
}

#[test]
fn usage_and_config_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(rnc_lab(&["train"], tmp.path()).status.code(), Some(1));
    assert_eq!(rnc_lab(&["frobnicate"], tmp.path()).status.code(), Some(1));
    let missing = tmp.path().join("nope.toml");
    assert_eq!(rnc_lab(&["train", "--config", missing.to_str().unwrap()], tmp.path()).status.code(), Some(1));

    let cfg = small_config(tmp.path(), "one", r#"["l1"]"#, "");
    assert_eq!(rnc_lab(&["compare", "--config", cfg.to_str().unwrap()], tmp.path()).status.code(), Some(1));

    let csv = tmp.path().join("csv.toml");
    std::fs::write(&csv, "name = \"c\"\nregimes = [\"l1\"]\nseeds = [0]\n[dataset]\nkind = \"csv\"\npath = \"absent.csv\"\n").unwrap();
    let out = rnc_lab(&["train", "--config", csv.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.csv"));

    assert_eq!(rnc_lab(&["--help"], tmp.path()).status.code(), Some(0));
}

#[test]
fn train_from_csv_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data.csv");
    let out = rnc_lab(&["synth", "--n", "80", "--dim", "5", "--out", data.to_str().unwrap()], tmp.path());
    assert!(out.status.success());
    let cfg = tmp.path().join("csv.toml");
    std::fs::write(
        &cfg,
        "name = \"fromcsv\"\nregimes = [\"supcon+l1\"]\nseeds = [4]\n[dataset]\nkind = \"csv\"\npath = \"data.csv\"\n\
         [model]\nhidden = [8]\nembed_dim = 3\n[encoder_stage]\nepochs = 3\nbatch_size = 16\n\
         [predictor_stage]\nepochs = 3\nbatch_size = 16\n",
    )
    .unwrap();
    let out = rnc_lab(&["train", "--config", cfg.to_str().unwrap()], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = metrics(&tmp.path().join("fromcsv-supcon-l1-seed4"));
    assert!(m.contains_key("final_encoder_supcon_loss"));
    assert!(!m.contains_key("final_encoder_rnc_loss"));
}
