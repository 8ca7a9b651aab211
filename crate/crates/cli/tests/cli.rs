use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &str = r#"{
  "dataset": {"count": 8, "val_count": 2, "size": 12},
  "model": {"layers": 2, "channels": 4},
  "loss": {"lambda": 0.1, "nets": [{"channels": 4}]},
  "optimizer": {"epochs": 2, "batch": 4},
  "seeds": [0, 1]
}"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_manifold-loss"));
    c.env_remove("MANIFOLD_LOSS_SEED");
    c
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("config.json");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn run(dir: &Path, config: &str, out: &str, extra: &[&str]) -> Output {
    let out = dir.join(out);
    bin()
        .args(["run", "--config", config, "--out", out.to_str().unwrap()])
        .args(extra)
        .output()
        .unwrap()
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

/// CSV text with the trailing seconds column removed.
fn without_seconds(path: &Path) -> String {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn two_cells_two_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let o = run(tmp.path(), &cfg, "a", &["--preset", "original", "--preset", "cdc"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(&tmp.path().join("a"));
    assert_eq!(s["runs"].as_array().unwrap().len(), 4);
    let cells = s["cells"].as_array().unwrap();
    assert_eq!(cells[0]["config_label"], "Original");
    assert_eq!(cells[0]["delta_psnr"], 0.0);
    assert_eq!(cells[1]["config_label"], "+CDC");
    let csv = fs::read_to_string(tmp.path().join("a/results.csv")).unwrap();
    assert!(csv.starts_with("config_label,seed,epoch,base_loss,prior_loss,total_loss,val_psnr,val_ssim,seconds\n"));
    assert_eq!(csv.lines().count(), 1 + 4 * 2);
    assert_eq!(fs::read_dir(tmp.path().join("a/runs")).unwrap().count(), 4);
}

#[test]
fn reruns_match_apart_from_timing_and_analyze_agrees() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let args = ["--preset", "original", "--preset", "inn+epochR"];
    assert!(run(tmp.path(), &cfg, "a", &args).status.success());
    assert!(run(tmp.path(), &cfg, "b", &[&args[..], &["--jobs", "2"]].concat()).status.success());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(without_seconds(&a.join("results.csv")), without_seconds(&b.join("results.csv")));

    let before = summary(&a);
    fs::remove_file(a.join("summary.json")).unwrap();
    let o = bin().args(["analyze", "--in", a.to_str().unwrap()]).output().unwrap();
    assert!(o.status.success());
    assert_eq!(summary(&a), before);
}

#[test]
fn unknown_preset_lists_names() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let o = run(tmp.path(), &cfg, "a", &["--preset", "cdc+sparkle"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("sparkle") && err.contains("number555") && err.contains("epochR"), "{err}");
}

#[test]
fn config_errors_name_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"loss":{"lambda":-1}}"#);
    let o = run(tmp.path(), &cfg, "a", &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("loss.lambda"));
}

#[test]
fn divergence_sets_exit_code_and_status() {
    let tmp = tempfile::tempdir().unwrap();
    let text = TINY.replace(r#""epochs": 2"#, r#""epochs": 3, "lr": 1e200"#);
    let cfg = write_config(tmp.path(), &text);
    let o = run(tmp.path(), &cfg, "a", &["--seed", "4"]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(&tmp.path().join("a"));
    assert_eq!(s["runs"][0]["status"], "aborted");
    assert_eq!(s["runs"][0]["seed"], 4);
    let csv = fs::read_to_string(tmp.path().join("a/results.csv")).unwrap();
    assert!(csv.lines().last().unwrap().contains("NaN"));
}

#[test]
fn seed_from_environment_and_image_dumps() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out = tmp.path().join("a");
    let o = bin()
        .args(["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--dump-images"])
        .env("MANIFOLD_LOSS_SEED", "77")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(&out);
    let runs = s["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 1);
    assert_eq!(runs[0]["seed"], 77);
    assert_eq!(runs[0]["config_label"], "custom");
    let images: Vec<_> = fs::read_dir(out.join("images/custom")).unwrap().collect();
    assert_eq!(images.len(), 2 * 3);
    let pgm = fs::read(out.join("images/custom/seed77_0_denoised.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n12 12\n255\n"));
}
