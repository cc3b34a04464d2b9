use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use spo2dcac::formats::{self, DatasetManifest};
use spo2dcac::harness::{self, BaselineMethod, Fold, PredictionRow, WindowMode};
use spo2dcac::stmap::{make_grid, FaceRect, MapBuilder, DEFAULT_COLS, DEFAULT_ROWS};
use spo2dcac::synth::{gen_subject, SubjectRecord, SynthParams};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::{BaselineArgs, EvalArgs, ExtractArgs, FoldArgs, SweepArgs, SynthArgs, TrainArgs};

/// Refuses to write into a non-empty directory unless forced, then creates it.
fn prepare_dir(dir: &Path, force: bool) -> Result<(), CliError> {
    if dir.is_file() {
        return Err(CliError::Refusal(format!("{} exists and is a file", dir.display())));
    }
    if !force && dir.is_dir() && fs::read_dir(dir)?.next().is_some() {
        return Err(CliError::Refusal(format!("{} is not empty; pass --force to write into it", dir.display())));
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Refuses to replace an existing file unless forced; creates missing parents.
fn prepare_file(path: &Path, force: bool) -> Result<(), CliError> {
    if path.is_dir() {
        return Err(CliError::Refusal(format!("{} is a directory", path.display())));
    }
    if path.exists() && !force {
        return Err(CliError::Refusal(format!("{} exists; pass --force to overwrite it", path.display())));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(())
}

/// `<dir>/<stem>.config.json` next to a file output.
fn config_beside(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
    path.with_file_name(format!("{stem}.config.json"))
}

pub fn synth(a: SynthArgs) -> Result<(), CliError> {
    let mut params: SynthParams = match &a.params {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => SynthParams::default(),
    };
    params.seed = a.seed;
    params.validate()?;
    prepare_dir(&a.out, a.force)?;
    let mut subjects = Vec::with_capacity(a.subjects as usize);
    for i in 0..a.subjects {
        let record = gen_subject(&params, i)?;
        subjects.push(formats::write_subject(&a.out, &record)?);
        info!("wrote {}", record.subject_id);
    }
    let manifest = DatasetManifest { subjects, params: Some(params.clone()) };
    formats::write_json(&a.out.join(formats::DATASET_MANIFEST), &manifest)?;
    let mut cfg = RunConfig { command: "synth".into(), synth: params, ..Default::default() };
    cfg.harness.out = Some(a.out.clone());
    cfg.harness.subjects = Some(a.subjects as usize);
    formats::write_json(&a.out.join("config.json"), &cfg)?;
    println!("{}", serde_json::to_string_pretty(&manifest).expect("manifest serializes"));
    Ok(())
}

fn parse_rect(s: &str) -> Result<[usize; 4], CliError> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let bad = || CliError::Usage(format!("--rect expects x,y,w,h as non-negative integers, got {s:?}"));
    if parts.len() != 4 {
        return Err(bad());
    }
    let mut out = [0; 4];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse().map_err(|_| bad())?;
    }
    Ok(out)
}

pub fn extract(a: ExtractArgs) -> Result<(), CliError> {
    let [x, y, w, h] = parse_rect(&a.rect)?;
    let grid = make_grid(FaceRect::new(x, y, w, h)?, DEFAULT_ROWS, DEFAULT_COLS)?;
    let meta = formats::read_frame_meta(&a.frames)?;
    if meta.count == 0 {
        return Err(CliError::Input(format!("{} holds no frames", a.frames.display())));
    }
    prepare_file(&a.out, a.force)?;
    let subject = a.subject_id.clone().unwrap_or_else(|| a.out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
    let mut builder = MapBuilder::new(grid.len(), meta.fps, &subject);
    for i in 0..meta.count {
        builder.push(&formats::read_frame(&a.frames, &meta, i)?, &grid)?;
    }
    let map = builder.finish()?;
    formats::write_stm(&a.out, &map)?;
    let mut cfg = RunConfig { command: "extract".into(), ..Default::default() };
    cfg.synth.fps = meta.fps;
    cfg.synth.n_rois = grid.len();
    cfg.harness.frames = Some(a.frames.clone());
    cfg.harness.rect = Some([x, y, w, h]);
    cfg.harness.out = Some(a.out.clone());
    formats::write_json(&config_beside(&a.out), &cfg)?;
    Ok(())
}

/// Loads the dataset and resolves the requested fold, applying flag overrides to `cfg`.
fn load_fold(f: &FoldArgs, cfg: &mut RunConfig) -> Result<(Vec<SubjectRecord>, Fold), CliError> {
    if let Some(k) = f.k {
        cfg.harness.k = k;
    }
    if let Some(s) = f.split_seed {
        cfg.harness.split_seed = s;
    }
    cfg.harness.fold = f.fold;
    cfg.harness.data = Some(f.data.clone());
    let records = formats::load_dataset(&f.data)?;
    let ids: Vec<String> = records.iter().map(|r| r.subject_id.clone()).collect();
    let plan = harness::kfold_split(&ids, cfg.harness.k, cfg.harness.split_seed)?;
    let fold = plan
        .folds
        .get(f.fold)
        .cloned()
        .ok_or_else(|| CliError::Usage(format!("--fold {} is out of range for k = {}", f.fold, cfg.harness.k)))?;
    Ok((records, fold))
}

pub fn train(a: TrainArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(a.fold.config.as_deref())?;
    cfg.command = "train".into();
    if let Some(v) = &a.variant {
        cfg.model.variant = v.parse().map_err(|e: spo2dcac::Error| CliError::Usage(e.to_string()))?;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(lr) = a.lr {
        cfg.train.lr = lr;
    }
    if let Some(alpha) = a.alpha {
        cfg.model.alpha = alpha;
    }
    if let Some(s) = a.seed {
        cfg.model.seed = s;
        cfg.train.seed = s;
    }
    cfg.model.validate()?;
    cfg.harness.out = Some(a.out.clone());
    prepare_dir(&a.out, a.fold.force)?;
    let (records, fold) = load_fold(&a.fold, &mut cfg)?;
    let data = harness::prepare_fold(&records, &fold, cfg.model.variant)?;
    info!("fold {}: {} train / {} validation windows", fold.index, data.train.len(), data.validation.len());
    let mut outcome = harness::train(&cfg.model, &cfg.train, &data.train, &data.validation)?;
    formats::save_checkpoint(&a.out, &mut outcome.model)?;
    formats::write_json(&a.out.join("history.json"), &outcome.history)?;
    formats::write_json(&a.out.join("fold.json"), &fold)?;
    formats::write_json(&a.out.join("config.json"), &cfg)?;
    Ok(())
}

fn write_rows(path: &Path, rows: &[PredictionRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<(), CliError> {
    let saved = a.model.join("config.json");
    let mut cfg = match a.fold.config.as_deref() {
        Some(p) => RunConfig::load(Some(p))?,
        None if saved.exists() => RunConfig::load(Some(&saved))?,
        None => RunConfig::default(),
    };
    cfg.command = "eval".into();
    let mut model = formats::load_checkpoint(&a.model)?;
    cfg.model = model.config().clone();
    prepare_file(&a.out, a.fold.force)?;
    if let Some(t) = &a.trace_csv {
        prepare_file(t, a.fold.force)?;
    }
    let (records, fold) = load_fold(&a.fold, &mut cfg)?;
    let test = harness::prepare_subjects(&records, &fold.test, WindowMode::Test, model.variant())?;
    let evaluation = harness::evaluate(&mut model, &test)?;
    formats::write_json(&a.out, &evaluation.metrics)?;
    if let Some(t) = &a.trace_csv {
        write_rows(t, &evaluation.rows)?;
    }
    cfg.harness.model = Some(a.model.clone());
    cfg.harness.out = Some(a.out.clone());
    cfg.harness.trace_csv = a.trace_csv.clone();
    formats::write_json(&config_beside(&a.out), &cfg)?;
    Ok(())
}

pub fn baseline(a: BaselineArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(a.fold.config.as_deref())?;
    cfg.command = "baseline".into();
    let method: BaselineMethod = a.method.parse()?;
    cfg.harness.method = Some(method);
    prepare_file(&a.out, a.fold.force)?;
    let (records, fold) = load_fold(&a.fold, &mut cfg)?;
    let fit_ids: Vec<String> = fold.train.iter().chain(&fold.validation).cloned().collect();
    let train = harness::select(&records, &fit_ids)?;
    let test = harness::select(&records, &fold.test)?;
    let run = harness::run_baseline(method, &train, &test, cfg.harness.roi_mask.as_deref())?;
    if run.flagged_windows > 0 {
        log::warn!("{} degenerate windows skipped", run.flagged_windows);
    }
    formats::write_json(&a.out, &run.evaluation.metrics)?;
    let stem = a.out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "baseline".into());
    formats::write_json(&a.out.with_file_name(format!("{stem}.model.json")), &run.model)?;
    cfg.harness.out = Some(a.out.clone());
    formats::write_json(&config_beside(&a.out), &cfg)?;
    Ok(())
}

pub fn sweep_alpha(a: SweepArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(a.fold.config.as_deref())?;
    cfg.command = "sweep-alpha".into();
    if let Some(al) = a.alphas {
        cfg.harness.alphas = al;
    }
    if let Some(s) = a.seeds {
        cfg.harness.seeds = s;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if cfg.harness.alphas.is_empty() || cfg.harness.seeds == 0 {
        return Err(CliError::Usage("need at least one alpha and one seed".into()));
    }
    cfg.model.variant = spo2dcac::models::Variant::End2end;
    cfg.model.validate()?;
    prepare_file(&a.out, a.fold.force)?;
    let (records, fold) = load_fold(&a.fold, &mut cfg)?;
    let data = harness::prepare_fold(&records, &fold, cfg.model.variant)?;
    let seeds: Vec<u64> = (0..cfg.harness.seeds as u64).collect();
    let rows = harness::sweep_alpha(&cfg.model, &cfg.train, &data, &cfg.harness.alphas, &seeds)?;
    let mut w = csv::Writer::from_path(&a.out)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    cfg.harness.out = Some(a.out.clone());
    formats::write_json(&config_beside(&a.out), &cfg)?;
    Ok(())
}
