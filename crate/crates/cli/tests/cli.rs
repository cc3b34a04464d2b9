use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use spo2dcac::formats::{self, DatasetManifest};
use spo2dcac::models::{build_model, ModelConfig, Variant};
use spo2dcac::stmap::{make_grid, FaceRect};
use spo2dcac::synth::{gen_subject, render_frames, SynthParams};
use spo2dcac::tensornet::layers::{load_state_dict, state_dict};
use spo2dcac::tensornet::Tensor;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spo2dcac"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn error_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"))
}

fn small_params(dir: &Path) -> String {
    let p = SynthParams { duration_s: 20.0, n_rois: 4, cycles: 0, ..Default::default() };
    let path = dir.join("params.json");
    fs::write(&path, serde_json::to_string(&p).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn synth_writes_the_file_contract_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let params = small_params(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let out = run(&["synth", "--subjects", "2", "--seed", "7", "--out", p(dir), "--params", &params]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let manifest: DatasetManifest = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(manifest.subjects.len(), 2);
    }
    for name in ["s000.stm", "s000_spo2.csv", "s001.stm", "s001_spo2.csv", "manifest.json"] {
        let (x, y) = (fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap());
        assert!(x == y, "{name} differs between identical runs");
    }
    let config = |dir: &Path| {
        let mut v: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("config.json")).unwrap()).unwrap();
        v["harness"]["out"] = serde_json::Value::Null;
        v
    };
    assert_eq!(config(&a), config(&b));
    let cfg = config(&a);
    assert_eq!(cfg["synth"]["seed"], 7);
    assert_eq!(cfg["model"]["alpha"], 0.1);
    let records = formats::load_dataset(&a).unwrap();
    assert_eq!(records[1].map.shape(), [3, 4, 600]);
}

#[test]
fn zero_subjects_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["synth", "--subjects", "0", "--out", p(&tmp.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"]["kind"], "usage");
}

#[test]
fn non_empty_output_needs_force() {
    let tmp = tempfile::tempdir().unwrap();
    let params = small_params(tmp.path());
    let out = run(&["synth", "--subjects", "1", "--out", p(tmp.path()), "--params", &params]);
    assert!(!out.status.success());
    assert_eq!(error_json(&out)["error"]["kind"], "refusal");
    let out = run(&["synth", "--subjects", "1", "--out", p(tmp.path()), "--params", &params, "--force"]);
    assert!(out.status.success());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let params = small_params(tmp.path());
    let data = tmp.path().join("data");
    assert!(run(&["synth", "--subjects", "5", "--out", p(&data), "--params", &params]).status.success());
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"model": {"alpah": 0.2}}"#).unwrap();
    let out = run(&["baseline", "--data", p(&data), "--method", "ror", "--config", p(&cfg), "--out", p(&tmp.path().join("m.json"))]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"]["kind"], "config");
}

#[test]
fn extract_reproduces_rendered_traces() {
    let tmp = tempfile::tempdir().unwrap();
    let rec = gen_subject(&SynthParams { duration_s: 1.0, n_rois: 224, ..Default::default() }, 0).unwrap();
    let grid = make_grid(FaceRect::new(3, 2, 40, 30).unwrap(), 14, 16).unwrap();
    let frames = render_frames(&rec.map, &grid, 48, 36).unwrap();
    let dump = tmp.path().join("frames");
    formats::write_frame_dump(&dump, &frames).unwrap();
    let stm = tmp.path().join("s000.stm");
    let out = run(&["extract", "--frames", p(&dump), "--rect", "3,2,40,30", "--out", p(&stm)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let map = formats::read_stm(&stm).unwrap();
    assert_eq!(map.subject_id, "s000");
    let worst = map.data().iter().zip(rec.map.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-6, "max deviation {worst}");
    assert!(tmp.path().join("s000.config.json").exists());

    fs::write(formats::frame_path(&dump, 17), [1u8, 2, 3]).unwrap();
    let out = run(&["extract", "--frames", p(&dump), "--rect", "3,2,40,30", "--out", p(&stm), "--force"]);
    let err = error_json(&out);
    assert_eq!(err["error"]["kind"], "input");
    assert!(err["error"]["message"].as_str().unwrap().contains("frame 17"));
}

/// Noiseless, driftless subjects, each holding a constant SpO2 level.
fn constant_dataset(dir: &Path, levels: &[f64]) {
    fs::create_dir_all(dir).unwrap();
    let subjects = levels
        .iter()
        .enumerate()
        .map(|(i, &level)| {
            let params = SynthParams { duration_s: 30.0, n_rois: 4, spo2_baseline: level, dip_depth: 0.0, drift_amp: 0.0, ..Default::default() };
            formats::write_subject(dir, &gen_subject(&params, i as u64).unwrap()).unwrap()
        })
        .collect();
    formats::write_json(&dir.join("manifest.json"), &DatasetManifest { subjects, params: None }).unwrap();
}

#[test]
fn ror_baseline_is_exact_on_noiseless_data() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    constant_dataset(&data, &[88.0, 90.0, 92.0, 93.0, 94.0, 95.0, 96.0, 97.0, 98.0, 99.0]);
    let metrics = tmp.path().join("out/metrics.json");
    let out = run(&["baseline", "--data", p(&data), "--fold", "1", "--method", "ror", "--out", p(&metrics)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m: serde_json::Value = serde_json::from_slice(&fs::read(&metrics).unwrap()).unwrap();
    assert!(m["mae"].as_f64().unwrap() < 0.05, "{m}");
    let model: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("out/metrics.model.json")).unwrap()).unwrap();
    assert_eq!(model["kind"], "ror");
    assert!(tmp.path().join("out/metrics.config.json").exists());
}

#[test]
fn eval_of_a_perfect_predictor_reports_zero_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    constant_dataset(&data, &[92.5; 5]);
    let cfg = ModelConfig { variant: Variant::Plain, stage_channels: vec![2, 2, 4, 4], ..Default::default() };
    let mut model = build_model(&cfg).unwrap();
    let state: Vec<(String, Tensor)> = state_dict(&mut model)
        .into_iter()
        .map(|(name, t)| match name.as_str() {
            "head.weight" => (name, Tensor::zeros(t.shape())),
            "head.bias" => (name, Tensor::full(t.shape(), 0.5)),
            _ => (name, t),
        })
        .collect();
    load_state_dict(&mut model, &state).unwrap();
    let ckpt = tmp.path().join("ckpt");
    formats::save_checkpoint(&ckpt, &mut model).unwrap();
    let (metrics, trace) = (tmp.path().join("metrics.json"), tmp.path().join("trace.csv"));
    let out = run(&["eval", "--model", p(&ckpt), "--data", p(&data), "--out", p(&metrics), "--trace-csv", p(&trace)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m: serde_json::Value = serde_json::from_slice(&fs::read(&metrics).unwrap()).unwrap();
    assert_eq!(m["mae"], 0.0);
    let csv = fs::read_to_string(&trace).unwrap();
    assert!(csv.starts_with("subject_id,t_s,pred_pct,gt_pct\n"));
    assert_eq!(csv.lines().count(), 1 + 30);
}

fn tiny_config(dir: &Path, epochs: usize) -> String {
    let path = dir.join("run.json");
    let cfg = serde_json::json!({
        "model": { "stage_channels": [2, 2, 4, 4], "dcac_kernel": 5 },
        "train": { "epochs": epochs, "batch_size": 4 },
    });
    fs::write(&path, cfg.to_string()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn train_then_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let params = small_params(tmp.path());
    let data = tmp.path().join("data");
    assert!(run(&["synth", "--subjects", "5", "--seed", "1", "--out", p(&data), "--params", &params]).status.success());
    let cfg = tiny_config(tmp.path(), 2);
    let ckpt = tmp.path().join("ckpt");
    let out = run(&["train", "--data", p(&data), "--variant", "filter", "--fold", "2", "--config", &cfg, "--out", p(&ckpt)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["model_config.json", "params.json", "params.bin", "history.json", "fold.json", "config.json"] {
        assert!(ckpt.join(f).exists(), "{f} missing");
    }
    let history: serde_json::Value = serde_json::from_slice(&fs::read(ckpt.join("history.json")).unwrap()).unwrap();
    assert_eq!(history["epochs"].as_array().unwrap().len(), 2);
    let resolved: serde_json::Value = serde_json::from_slice(&fs::read(ckpt.join("config.json")).unwrap()).unwrap();
    assert_eq!(resolved["model"]["variant"], "filter");
    assert_eq!(resolved["harness"]["fold"], 2);
    let metrics = tmp.path().join("metrics.json");
    let out = run(&["eval", "--model", p(&ckpt), "--data", p(&data), "--fold", "2", "--out", p(&metrics)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m: serde_json::Value = serde_json::from_slice(&fs::read(&metrics).unwrap()).unwrap();
    assert!(m["rmse"].as_f64().unwrap() >= m["mae"].as_f64().unwrap());
}

#[test]
fn sweep_writes_one_row_per_alpha_and_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let params = small_params(tmp.path());
    let data = tmp.path().join("data");
    assert!(run(&["synth", "--subjects", "5", "--out", p(&data), "--params", &params]).status.success());
    let cfg = tiny_config(tmp.path(), 1);
    let csv = tmp.path().join("sweep.csv");
    let out = run(&["sweep-alpha", "--data", p(&data), "--alphas", "0,0.1,1", "--seeds", "2", "--config", &cfg, "--out", p(&csv)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("alpha,seed,corrcoef,mae,rmse"));
    assert_eq!(lines.count(), 3 * 2);
}

#[test]
fn fold_out_of_range_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    constant_dataset(&data, &[90.0, 91.0, 92.0, 93.0, 94.0]);
    let out = run(&["baseline", "--data", p(&data), "--fold", "5", "--method", "lr", "--out", p(&tmp.path().join("m.json"))]);
    assert_eq!(out.status.code(), Some(2));
}
