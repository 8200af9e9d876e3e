use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use convdec_cli::config::{DecoderKind, RunConfig};
use convdec_cli::manifest::Manifest;
use convdec_cli::pipeline::{curve_file, EVAL_SUMMARY, HARDWARE_FILE};
use convdec::sim::Basis;
use serde_json::Value;

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn convdec(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_convdec"))
        .args(args)
        .current_dir(cwd)
        .env_remove("CONVDEC_OUT")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn write_config(dir: &Path, config: &RunConfig) -> PathBuf {
    let p = dir.join("run.json");
    std::fs::write(&p, serde_json::to_string_pretty(config).unwrap()).unwrap();
    p
}

fn hardware_only() -> RunConfig {
    RunConfig::load(&workspace().join("configs/hardware.json")).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn shipped_configs_validate() {
    let mut n = 0;
    for entry in std::fs::read_dir(workspace().join("configs")).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 4);
}

#[test]
fn unknown_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"seed": 1, "hardwire": {}}"#).unwrap();
    let out = convdec(&["run", "--config", p(&cfg), "--out", p(&dir.path().join("o"))], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("hardwire"));
}

#[test]
fn stage_failure_exits_3_with_error_record() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = RunConfig::example();
    config.code.as_mut().unwrap().preset = Some("bb72".into());
    config.train = None;
    config.model = None;
    config.analysis = None;
    config.hardware = None;
    let eval = config.eval.as_mut().unwrap();
    eval.decoders = vec![DecoderKind::Ml];
    eval.shots = 100;
    eval.p_values = vec![0.05];
    let cfg = write_config(dir.path(), &config);
    let out_dir = dir.path().join("o");
    let out = convdec(&["run", "--config", p(&cfg), "--out", p(&out_dir)], dir.path());
    assert_eq!(out.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let err: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("error.json")).unwrap()).unwrap();
    assert_eq!(err["stage"], "eval");
    assert_eq!(err["config_hash"], config.hash());
    let manifest = Manifest::load(&out_dir).unwrap();
    assert!(manifest.stage("code").is_some());
    assert!(manifest.stage("eval").is_none());
}

#[test]
fn hardware_run_reports_only_hardware() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &hardware_only());
    let out_dir = dir.path().join("hw");
    ok(&convdec(&["run", "--config", p(&cfg), "--out", p(&out_dir)], dir.path()));
    ok(&convdec(&["report", p(&out_dir)], dir.path()));
    let md = std::fs::read_to_string(out_dir.join("report.md")).unwrap();
    let sections: Vec<&str> = md.lines().filter(|l| l.starts_with("## ")).collect();
    assert_eq!(sections, ["## Hardware"]);
    assert!(md.contains("77.1%"));
    assert!(md.contains("46208"));
    assert!(md.contains("7.393"));
}

#[test]
fn report_on_empty_directory_warns() {
    let dir = tempfile::tempdir().unwrap();
    let out = convdec(&["report", p(dir.path())], dir.path());
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    assert!(std::fs::read_to_string(dir.path().join("report.md")).unwrap().contains("Warning"));
}

#[test]
fn reruns_skip_until_an_output_changes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &hardware_only());
    let out_dir = dir.path().join("hw");
    let first = convdec(&["run", "--config", p(&cfg), "--out", p(&out_dir)], dir.path());
    assert!(String::from_utf8_lossy(&first.stderr).contains("[hardware] running"));
    let again = convdec(&["run", "--config", p(&cfg), "--out", p(&out_dir)], dir.path());
    let log = String::from_utf8_lossy(&again.stderr).to_string();
    assert!(log.contains("[hardware] unchanged, skipped"), "{log}");
    assert!(log.contains("[config] unchanged, skipped"), "{log}");

    std::fs::write(out_dir.join(HARDWARE_FILE), "{}").unwrap();
    let third = convdec(&["run", "--config", p(&cfg), "--out", p(&out_dir)], dir.path());
    let log = String::from_utf8_lossy(&third.stderr).to_string();
    assert!(log.contains("[hardware] running"), "{log}");
    ok(&convdec(&["report", p(&out_dir)], dir.path()));
    let md = std::fs::read_to_string(out_dir.join("report.md")).unwrap();
    assert!(md.contains("## Hardware") && !md.contains("Missing"));
}

#[test]
fn default_output_root_follows_environment() {
    let dir = tempfile::tempdir().unwrap();
    let config = hardware_only();
    let cfg = write_config(dir.path(), &config);
    let out = Command::new(env!("CARGO_BIN_EXE_convdec"))
        .args(["run", "--config", p(&cfg)])
        .env("CONVDEC_OUT", dir.path().join("root"))
        .current_dir(dir.path())
        .output()
        .unwrap();
    ok(&out);
    let expected = dir.path().join("root").join(&config.hash()[..12]);
    assert!(expected.join("manifest.json").exists());
}

#[test]
fn code_sample_decode_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let code = d.join("code.json");
    let info: Value = serde_json::from_str(&ok(&convdec(&["code", "build", "--preset", "surface:3", "--out", p(&code)], d))).unwrap();
    assert_eq!(info["n"], 9);
    let again: Value = serde_json::from_str(&ok(&convdec(&["code", "info", p(&code)], d))).unwrap();
    assert_eq!(info, again);

    let batch = d.join("batch.bin");
    ok(&convdec(
        &["sample", "--code", p(&code), "--rounds", "1", "--noise", "data:0.05", "--shots", "2000", "--seed", "4", "--out", p(&batch)],
        d,
    ));
    let preds = d.join("ml.preds");
    let summary: Value = serde_json::from_str(&ok(&convdec(
        &["decode", "--decoder", "ml", "--code", p(&code), "--batch", p(&batch), "--p", "0.05", "--out", p(&preds)],
        d,
    )))
    .unwrap();
    assert_eq!(summary["shots"], 2000);
    let rate = summary["block_error_rate"].as_f64().unwrap();
    assert!(rate > 0.0 && rate < 0.05, "{rate}");

    let cal = d.join("cal.json");
    ok(&convdec(&["analyze", "calibrate", "--preds", p(&preds), "--batch", p(&batch), "--out", p(&cal)], d));
    assert!(cal.exists());
}

#[test]
fn shipped_checkpoint_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("eval");
    ok(&convdec(&["run", "--config", "configs/eval_d3.json", "--out", p(&out_dir)], &workspace()));
    for basis in [Basis::Z, Basis::X] {
        for decoder in ["model", "ml"] {
            let csv = std::fs::read_to_string(out_dir.join(curve_file(decoder, basis))).unwrap();
            assert_eq!(csv.lines().count(), 6, "{decoder} {basis:?}");
        }
    }
    let rows: Vec<Value> = serde_json::from_str(&std::fs::read_to_string(out_dir.join(EVAL_SUMMARY)).unwrap()).unwrap();
    let rate = |dec: &str| {
        rows.iter()
            .filter(|r| r["decoder"] == dec && r["p"] == 0.1)
            .map(|r| r["block_error_rate"].as_f64().unwrap())
            .sum::<f64>()
            / 2.0
    };
    assert!(rate("model") < 1.5 * rate("ml"), "model {} ml {}", rate("model"), rate("ml"));
}

#[test]
fn gradcheck_and_hardware_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let report: Value = serde_json::from_str(&ok(&convdec(&["nn", "gradcheck"], d))).unwrap();
    assert!(report.is_object());
    let rows: Value =
        serde_json::from_str(&ok(&convdec(&["hw", "macs", "--n", "6840", "--hidden", "256"], d))).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 4);
    let ckpt = workspace().join("checkpoints/surface3_h32_l4.ckpt");
    ok(&convdec(&["hw", "fold", "--model", p(&ckpt), "--out", p(&d.join("f.ckpt"))], d));
    ok(&convdec(&["hw", "quantize", "--model", p(&ckpt), "--out", p(&d.join("q.ckpt"))], d));
    assert!(d.join("f.ckpt").exists() && d.join("q.ckpt").exists());
}
