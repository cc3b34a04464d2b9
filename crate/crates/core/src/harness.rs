//! Dataset preparation, the training loop and evaluation metrics.
//!
//! Training windows are 10 s long and start every 2 s; test windows start
//! every 10 s. Training recordings are z-scored over their full length,
//! test windows causally, using only the samples seen so far.

use std::collections::HashMap;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{self, clamp_spo2, BaselineModel, SPO2_MAX, SPO2_MIN};
use crate::error::{Error, Result};
use crate::filters::DcAcSplitter;
use crate::models::{build_model, loss_end_to_end, loss_spo2, ModelConfig, ModelInput, SpO2Net, Variant};
use crate::stmap::{bottom_half_mask, normalize_test_causal, normalize_train, CausalStats, SpatioTemporalMap, CHANNELS, DEFAULT_COLS, DEFAULT_ROWS};
use crate::synth::{Spo2Trace, SubjectRecord};
use crate::tensornet::layers::{load_state_dict, state_dict, zero_grad};
use crate::tensornet::{Adam, Mode, Tensor};

pub const WINDOW_S: f64 = 10.0;
pub const TRAIN_STEP_S: f64 = 2.0;
pub const TEST_STEP_S: f64 = 10.0;

/// Resamples irregular `(t, %)` readings to integer seconds inside `[t_first, t_last]`.
pub fn interpolate_spo2(samples: &[(f64, f64)]) -> Result<Spo2Trace> {
    check_samples(samples)?;
    let first = samples[0].0.ceil();
    let last = samples[samples.len() - 1].0.floor();
    let mut values = Vec::new();
    let mut t = first;
    while t <= last {
        values.push(interpolate_at(samples, t)?);
        t += 1.0;
    }
    Ok(Spo2Trace { values, t0: first })
}

fn check_samples(samples: &[(f64, f64)]) -> Result<()> {
    if samples.len() < 2 {
        return Err(Error::Length(format!("need at least 2 SpO2 samples, got {}", samples.len())));
    }
    for (i, w) in samples.windows(2).enumerate() {
        if !(w[1].0 > w[0].0) {
            return Err(Error::Ordering(format!("sample {} at {} s does not follow {} s", i + 1, w[1].0, w[0].0)));
        }
    }
    Ok(())
}

/// Linear interpolation at `t`; no extrapolation.
pub fn interpolate_at(samples: &[(f64, f64)], t: f64) -> Result<f64> {
    check_samples(samples)?;
    let (t0, t1) = (samples[0].0, samples[samples.len() - 1].0);
    if !(t >= t0 && t <= t1) {
        return Err(Error::Range(format!("{t} s is outside the sampled range [{t0}, {t1}] s")));
    }
    let i = samples.partition_point(|s| s.0 <= t).clamp(1, samples.len() - 1);
    let ((ta, ya), (tb, yb)) = (samples[i - 1], samples[i]);
    if t == tb {
        return Ok(yb);
    }
    Ok(ya + (yb - ya) * (t - ta) / (tb - ta))
}

pub fn scale_spo2(y: f64) -> f64 {
    (y - SPO2_MIN) / (SPO2_MAX - SPO2_MIN)
}

pub fn unscale_spo2(s: f64) -> f64 {
    clamp_spo2(SPO2_MIN + (SPO2_MAX - SPO2_MIN) * s)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowMode {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowSample {
    /// Normalized `(3, N, T)` window.
    pub map_window: SpatioTemporalMap,
    /// Per-second SpO2 over the window, scaled to `[0, 1]`.
    pub target: Vec<f64>,
    pub target_pct: Vec<f64>,
    pub subject_id: String,
    pub t_start: f64,
}

/// A raw (unnormalized) window and its per-second ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct RawWindow {
    pub map: SpatioTemporalMap,
    pub spo2: Vec<f64>,
    pub t_start: f64,
}

fn frames_of(seconds: f64, fps: f64, what: &str) -> Result<usize> {
    let f = seconds * fps;
    let r = f.round();
    if r < 1.0 || (f - r).abs() > 1e-6 {
        return Err(Error::Parameter(format!("{what} of {seconds} s is not a whole number of frames at {fps} fps")));
    }
    Ok(r as usize)
}

/// Cuts `map` into 10 s windows every `step_s` seconds, pairing each with its
/// per-second SpO2 values at seconds `t_start .. t_start + 10`.
pub fn raw_windows(map: &SpatioTemporalMap, spo2: &Spo2Trace, step_s: f64) -> Result<Vec<RawWindow>> {
    let win = frames_of(WINDOW_S, map.fps, "window")?;
    let step = frames_of(step_s, map.fps, "step")?;
    if map.n_frames() < win {
        return Err(Error::Length(format!("{}: {} frames is shorter than one {win}-frame window", map.subject_id, map.n_frames())));
    }
    let per_window = WINDOW_S as usize;
    let mut out = Vec::new();
    for start in (0..=map.n_frames() - win).step_by(step) {
        let t_start = start as f64 / map.fps;
        let k0 = t_start - spo2.t0;
        if k0 < 0.0 || (k0 - k0.round()).abs() > 1e-9 {
            return Err(Error::Range(format!("window at {t_start} s does not align with the SpO2 trace starting at {} s", spo2.t0)));
        }
        let k0 = k0.round() as usize;
        let values = (k0..k0 + per_window)
            .map(|k| spo2.at(k).ok_or_else(|| Error::Range(format!("{}: no SpO2 value at {} s", map.subject_id, spo2.t0 + k as f64))))
            .collect::<Result<Vec<_>>>()?;
        out.push(RawWindow { map: map.window(start, win)?, spo2: values, t_start });
    }
    Ok(out)
}

pub fn window_dataset(record: &SubjectRecord, step_s: f64, mode: WindowMode) -> Result<Vec<WindowSample>> {
    let source = match mode {
        WindowMode::Train => normalize_train(&record.map),
        WindowMode::Test => record.map.clone(),
    };
    let mut history = CausalStats::new(record.subject_id.clone(), record.map.n_rois());
    let mut out = Vec::new();
    for w in raw_windows(&source, &record.spo2, step_s)? {
        let map_window = match mode {
            WindowMode::Train => w.map,
            WindowMode::Test => {
                let (m, h) = normalize_test_causal(&w.map, history)?;
                history = h;
                m
            }
        };
        out.push(WindowSample {
            map_window,
            target: w.spo2.iter().map(|&v| scale_spo2(v)).collect(),
            target_pct: w.spo2,
            subject_id: record.subject_id.clone(),
            t_start: w.t_start,
        });
    }
    Ok(out)
}

/// One window converted to the tensors a variant consumes, stored in `f32`
/// to keep whole folds in memory.
#[derive(Clone, Debug)]
pub struct ModelSample {
    pub subject_id: String,
    pub t_start: f64,
    pub target: Vec<f64>,
    pub target_pct: Vec<f64>,
    pub n_rois: usize,
    pub n_frames: usize,
    pub x: Option<Vec<f32>>,
    pub dc: Option<Vec<f32>>,
    pub ac: Option<Vec<f32>>,
}

fn to_f32(m: &SpatioTemporalMap) -> Vec<f32> {
    m.data().iter().map(|&v| v as f32).collect()
}

/// Adds the per-window DC/AC split where the variant needs it (as input or,
/// for `end2end`, as reconstruction targets).
pub fn prepare_samples(windows: Vec<WindowSample>, variant: Variant) -> Result<Vec<ModelSample>> {
    let mut splitters: HashMap<u64, DcAcSplitter> = HashMap::new();
    windows
        .into_iter()
        .map(|w| {
            let m = &w.map_window;
            let (dc, ac) = if variant == Variant::Plain {
                (None, None)
            } else {
                let key = m.fps.to_bits();
                if !splitters.contains_key(&key) {
                    splitters.insert(key, DcAcSplitter::new(m.fps)?);
                }
                let f = splitters[&key].split(m)?;
                (Some(to_f32(&f.dc)), Some(to_f32(&f.ac)))
            };
            let x = (!variant.uses_components()).then(|| to_f32(m));
            Ok(ModelSample {
                subject_id: w.subject_id,
                t_start: w.t_start,
                target: w.target,
                target_pct: w.target_pct,
                n_rois: m.n_rois(),
                n_frames: m.n_frames(),
                x,
                dc,
                ac,
            })
        })
        .collect()
}

fn stack_field(samples: &[&ModelSample], pick: impl Fn(&ModelSample) -> Option<&Vec<f32>>, what: &str) -> Result<Tensor> {
    let first = samples.first().ok_or_else(|| Error::Data("empty batch".into()))?;
    let (n, t) = (first.n_rois, first.n_frames);
    let mut data = Vec::with_capacity(samples.len() * CHANNELS * n * t);
    for s in samples {
        if (s.n_rois, s.n_frames) != (n, t) {
            return Err(Error::Shape(format!("batch mixes ({}, {}) and ({n}, {t}) windows", s.n_rois, s.n_frames)));
        }
        let v = pick(s).ok_or_else(|| Error::Data(format!("sample of {} lacks the {what} map", s.subject_id)))?;
        data.extend(v.iter().map(|&x| x as f64));
    }
    Tensor::from_vec(&[samples.len(), CHANNELS, n, t], data)
}

struct Batch {
    input: ModelInput,
    target: Tensor,
    components: Option<(Tensor, Tensor)>,
}

fn make_batch(samples: &[&ModelSample], variant: Variant, with_targets: bool) -> Result<Batch> {
    let d = samples[0].target.len();
    let target = Tensor::from_vec(&[samples.len(), d], samples.iter().flat_map(|s| s.target.iter().copied()).collect())?;
    let input = if variant.uses_components() {
        ModelInput::Components { dc: stack_field(samples, |s| s.dc.as_ref(), "dc")?, ac: stack_field(samples, |s| s.ac.as_ref(), "ac")? }
    } else {
        ModelInput::Map(stack_field(samples, |s| s.x.as_ref(), "x")?)
    };
    let components = if variant == Variant::End2end && with_targets {
        Some((stack_field(samples, |s| s.dc.as_ref(), "dc")?, stack_field(samples, |s| s.ac.as_ref(), "ac")?))
    } else {
        None
    };
    Ok(Batch { input, target, components })
}

/// Splits `0..n` into batches of `size`; a trailing batch of one joins its
/// predecessor so batch normalization always sees two or more samples.
pub fn batch_ranges(n: usize, size: usize) -> Vec<std::ops::Range<usize>> {
    let size = size.max(1);
    let mut out: Vec<std::ops::Range<usize>> = (0..n).step_by(size).map(|s| s..(s + size).min(n)).collect();
    if out.len() > 1 && out.last().map_or(false, |r| r.len() == 1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().end = last.end;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub test: Vec<String>,
    /// Subjects the model is fitted on (validation subjects excluded).
    pub train: Vec<String>,
    pub validation: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<Fold>,
}

pub const VALIDATION_FRACTION: f64 = 0.2;

/// Seeded shuffle, then `k` contiguous near-equal test folds; 20% of each
/// fold's remaining subjects are held out for validation.
pub fn kfold_split(subject_ids: &[String], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Parameter(format!("k must be >= 2, got {k}")));
    }
    if subject_ids.len() < k {
        return Err(Error::Data(format!("{} subjects cannot fill {k} folds", subject_ids.len())));
    }
    let mut ids = subject_ids.to_vec();
    ids.sort();
    ids.dedup();
    if ids.len() != subject_ids.len() {
        return Err(Error::Data("duplicate subject ids".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let (base, extra) = (ids.len() / k, ids.len() % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for index in 0..k {
        let len = base + usize::from(index < extra);
        let test = ids[start..start + len].to_vec();
        let mut rest: Vec<String> = ids[..start].iter().chain(&ids[start + len..]).cloned().collect();
        start += len;
        let n_val = if rest.len() >= 2 { ((rest.len() as f64 * VALIDATION_FRACTION).round() as usize).max(1) } else { 0 };
        rest.shuffle(&mut rng);
        let mut validation = rest.split_off(rest.len() - n_val);
        rest.sort();
        validation.sort();
        let mut test = test;
        test.sort();
        folds.push(Fold { index, test, train: rest, validation });
    }
    Ok(FoldPlan { k, seed, folds })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { epochs: 50, batch_size: 16, lr: 1e-4, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

pub struct TrainOutcome {
    pub model: SpO2Net,
    pub history: TrainHistory,
}

/// Loss of one batch for the model's variant; backpropagates when `train`.
fn batch_loss(model: &mut SpO2Net, batch: &Batch, mode: Mode) -> Result<f64> {
    let pred = model.forward(&batch.input, mode)?;
    let alpha = model.config().alpha;
    let backward = mode == Mode::Train;
    let loss = match &batch.components {
        Some((dc, ac)) => {
            let (l, g) = loss_end_to_end(&pred, &batch.target, dc, ac, alpha)?;
            if backward {
                model.backward(&g.dy, Some(&g.d_dc_hat), Some(&g.d_ac_hat))?;
            }
            l
        }
        None => {
            let (l, dy) = loss_spo2(&pred.y_out, &batch.target)?;
            if backward {
                model.backward(&dy, None, None)?;
            }
            l
        }
    };
    if !loss.is_finite() {
        return Err(Error::Data(format!("non-finite loss {loss}")));
    }
    Ok(loss)
}

/// Mean per-window loss over `samples` in eval mode.
pub fn validation_loss(model: &mut SpO2Net, samples: &[ModelSample], batch_size: usize) -> Result<f64> {
    let variant = model.variant();
    let mut total = 0.0;
    for r in batch_ranges(samples.len(), batch_size) {
        let refs: Vec<&ModelSample> = samples[r.clone()].iter().collect();
        total += batch_loss(model, &make_batch(&refs, variant, true)?, Mode::Eval)? * r.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// One optimizer step on a fixed batch; returns the pre-step loss.
pub fn train_step(model: &mut SpO2Net, samples: &[&ModelSample], opt: &Adam) -> Result<f64> {
    let batch = make_batch(samples, model.variant(), true)?;
    zero_grad(model);
    let loss = batch_loss(model, &batch, Mode::Train)?;
    opt.step(model);
    Ok(loss)
}

/// Trains with Adam and keeps the weights of the epoch with the lowest validation loss.
pub fn train(cfg: &ModelConfig, opts: &TrainOptions, train_set: &[ModelSample], val_set: &[ModelSample]) -> Result<TrainOutcome> {
    if train_set.len() < 2 {
        return Err(Error::Data(format!("training needs at least 2 windows, got {}", train_set.len())));
    }
    if val_set.is_empty() {
        return Err(Error::Data("empty validation set".into()));
    }
    if opts.epochs == 0 || opts.batch_size == 0 || !(opts.lr > 0.0) {
        return Err(Error::Config(format!("epochs, batch_size and lr must be positive: {opts:?}")));
    }
    let mut model = build_model(cfg)?;
    let opt = Adam::with_lr(opts.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::with_capacity(opts.epochs);
    let mut best: Option<(usize, f64, Vec<(String, Tensor)>)> = None;
    for epoch in 1..=opts.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for r in batch_ranges(order.len(), opts.batch_size) {
            let refs: Vec<&ModelSample> = order[r.clone()].iter().map(|&i| &train_set[i]).collect();
            total += train_step(&mut model, &refs, &opt)? * r.len() as f64;
        }
        let train_loss = total / order.len() as f64;
        let val_loss = validation_loss(&mut model, val_set, opts.batch_size)?;
        debug!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5}");
        if best.as_ref().map_or(true, |b| val_loss < b.1) {
            best = Some((epoch, val_loss, state_dict(&mut model)));
        }
        epochs.push(EpochRecord { epoch, train_loss, val_loss });
    }
    let (best_epoch, best_val_loss, state) = best.expect("at least one epoch");
    load_state_dict(&mut model, &state)?;
    info!("{} trained {} epochs, best epoch {best_epoch} (val {best_val_loss:.5})", cfg.variant.name(), opts.epochs);
    Ok(TrainOutcome { model, history: TrainHistory { epochs, best_epoch, best_val_loss } })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    pub corrcoef: f64,
    pub n_seconds: usize,
    pub n_subjects: usize,
}

/// One predicted second; the CSV row format of prediction traces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub subject_id: String,
    pub t_s: f64,
    pub pred_pct: f64,
    pub gt_pct: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub rows: Vec<PredictionRow>,
}

/// Pearson correlation, or 0 when either side has no variance.
pub fn corrcoef(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    if n < 2 {
        return 0.0;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (a, b) = (x[i] - mx, y[i] - my);
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    if sxx <= 1e-20 * (1.0 + mx * mx) * n as f64 || syy <= 1e-20 * (1.0 + my * my) * n as f64 {
        return 0.0;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// MAE and RMSE over all rows; CorrCoef per subject, then averaged.
pub fn metrics_from_rows(rows: &[PredictionRow]) -> Result<Metrics> {
    if rows.is_empty() {
        return Err(Error::Data("no predictions to score".into()));
    }
    let n = rows.len() as f64;
    let mae = rows.iter().map(|r| (r.pred_pct - r.gt_pct).abs()).sum::<f64>() / n;
    let rmse = (rows.iter().map(|r| (r.pred_pct - r.gt_pct).powi(2)).sum::<f64>() / n).sqrt();
    let mut by_subject: Vec<(&str, Vec<f64>, Vec<f64>)> = Vec::new();
    for r in rows {
        match by_subject.iter_mut().find(|s| s.0 == r.subject_id) {
            Some(s) => {
                s.1.push(r.pred_pct);
                s.2.push(r.gt_pct);
            }
            None => by_subject.push((&r.subject_id, vec![r.pred_pct], vec![r.gt_pct])),
        }
    }
    let corr = by_subject.iter().map(|(_, p, g)| corrcoef(p, g)).sum::<f64>() / by_subject.len() as f64;
    Ok(Metrics { mae, rmse: rmse.max(mae), corrcoef: corr, n_seconds: rows.len(), n_subjects: by_subject.len() })
}

/// Runs the model over test windows; predictions are clamped to `[0, 1]` and unscaled.
pub fn evaluate(model: &mut SpO2Net, samples: &[ModelSample]) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::Data("empty test set".into()));
    }
    let variant = model.variant();
    let mut rows = Vec::new();
    for chunk in samples.chunks(16) {
        let refs: Vec<&ModelSample> = chunk.iter().collect();
        let pred = model.forward(&make_batch(&refs, variant, false)?.input, Mode::Eval)?;
        pred.y_out.check_finite("prediction")?;
        let d = pred.y_out.shape()[1];
        for (i, s) in chunk.iter().enumerate() {
            for j in 0..d.min(s.target_pct.len()) {
                rows.push(PredictionRow {
                    subject_id: s.subject_id.clone(),
                    t_s: s.t_start + j as f64,
                    pred_pct: unscale_spo2(pred.y_out.data()[i * d + j].clamp(0.0, 1.0)),
                    gt_pct: s.target_pct[j],
                });
            }
        }
    }
    Ok(Evaluation { metrics: metrics_from_rows(&rows)?, rows })
}

/// Training, validation and test samples of one fold.
pub struct FoldData {
    pub train: Vec<ModelSample>,
    pub validation: Vec<ModelSample>,
    pub test: Vec<ModelSample>,
}

fn pick<'a>(records: &'a [SubjectRecord], ids: &[String]) -> Result<Vec<&'a SubjectRecord>> {
    ids.iter()
        .map(|id| records.iter().find(|r| &r.subject_id == id).ok_or_else(|| Error::Data(format!("subject {id} not in the dataset"))))
        .collect()
}

/// Windows of the named subjects: 2 s steps in train mode, 10 s steps in test mode.
pub fn prepare_subjects(records: &[SubjectRecord], ids: &[String], mode: WindowMode, variant: Variant) -> Result<Vec<ModelSample>> {
    let step = match mode {
        WindowMode::Train => TRAIN_STEP_S,
        WindowMode::Test => TEST_STEP_S,
    };
    let mut out = Vec::new();
    for r in pick(records, ids)? {
        out.extend(prepare_samples(window_dataset(r, step, mode)?, variant)?);
    }
    Ok(out)
}

pub fn prepare_fold(records: &[SubjectRecord], fold: &Fold, variant: Variant) -> Result<FoldData> {
    Ok(FoldData {
        train: prepare_subjects(records, &fold.train, WindowMode::Train, variant)?,
        validation: prepare_subjects(records, &fold.validation, WindowMode::Train, variant)?,
        test: prepare_subjects(records, &fold.test, WindowMode::Test, variant)?,
    })
}

/// The records named by `ids`, in that order.
pub fn select<'a>(records: &'a [SubjectRecord], ids: &[String]) -> Result<Vec<&'a SubjectRecord>> {
    pick(records, ids)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMethod {
    Ror,
    Lr,
}

impl std::str::FromStr for BaselineMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ror" => Ok(BaselineMethod::Ror),
            "lr" => Ok(BaselineMethod::Lr),
            _ => Err(Error::Config(format!("unknown baseline method {s:?}"))),
        }
    }
}

/// Bottom half of the default 14x16 grid, or of the most square grid that
/// tiles `n_rois` (all ROIs when `n_rois` is prime).
pub fn default_roi_mask(n_rois: usize) -> Vec<usize> {
    if n_rois == DEFAULT_ROWS * DEFAULT_COLS {
        return bottom_half_mask(DEFAULT_ROWS, DEFAULT_COLS);
    }
    let rows = (1..=n_rois).take_while(|r| r * r <= n_rois).filter(|r| n_rois % r == 0).last().unwrap_or(1);
    bottom_half_mask(rows, n_rois / rows)
}

pub struct BaselineRun {
    pub model: BaselineModel,
    pub evaluation: Evaluation,
    /// Windows skipped because their blue channel was flat.
    pub flagged_windows: usize,
}

fn window_target(w: &RawWindow) -> f64 {
    w.spo2.iter().sum::<f64>() / w.spo2.len() as f64
}

/// Fits a baseline on raw training windows (2 s step) and scores it on raw
/// test windows (10 s step); each window's estimate covers its 10 seconds.
pub fn run_baseline(method: BaselineMethod, train: &[&SubjectRecord], test: &[&SubjectRecord], roi_mask: Option<&[usize]>) -> Result<BaselineRun> {
    let first = train.first().ok_or_else(|| Error::Data("no training subjects".into()))?;
    if test.is_empty() {
        return Err(Error::Data("no test subjects".into()));
    }
    let mask = roi_mask.map(<[usize]>::to_vec).unwrap_or_else(|| default_roi_mask(first.map.n_rois()));
    let splitter = DcAcSplitter::new(first.map.fps)?;
    let mut flagged = 0;
    let predictor: Box<dyn Fn(&SpatioTemporalMap) -> Result<f64>>;
    let model: BaselineModel;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for r in train {
        for w in raw_windows(&r.map, &r.spo2, TRAIN_STEP_S)? {
            let feature = match method {
                BaselineMethod::Ror => baselines::window_ror(&w.map, &mask).map(|v| vec![v]),
                BaselineMethod::Lr => baselines::lr_features(&w.map, &mask, &splitter).map(|v| v.to_vec()),
            };
            match feature {
                Ok(f) => {
                    xs.push(f);
                    ys.push(window_target(&w));
                }
                Err(Error::Degenerate(_)) => flagged += 1,
                Err(e) => return Err(e),
            }
        }
    }
    match method {
        BaselineMethod::Ror => {
            let cal = baselines::fit_calibration(&xs.iter().map(|f| f[0]).collect::<Vec<_>>(), &ys)?;
            let m = mask.clone();
            predictor = Box::new(move |w| baselines::predict_ror(&cal, w, &m));
            model = cal.into();
        }
        BaselineMethod::Lr => {
            let feats: Vec<[f64; 3]> = xs.iter().map(|f| [f[0], f[1], f[2]]).collect();
            let lr = baselines::fit_lr(&feats, &ys)?;
            let (m, sp, lr2) = (mask.clone(), splitter.clone(), lr.clone());
            predictor = Box::new(move |w| Ok(baselines::predict_lr(&lr2, &baselines::lr_features(w, &m, &sp)?)));
            model = lr.into();
        }
    }
    let mut rows = Vec::new();
    for r in test {
        for w in raw_windows(&r.map, &r.spo2, TEST_STEP_S)? {
            let p = match predictor(&w.map) {
                Ok(p) => p,
                Err(Error::Degenerate(_)) => {
                    flagged += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            rows.extend(w.spo2.iter().enumerate().map(|(j, &g)| PredictionRow {
                subject_id: r.subject_id.clone(),
                t_s: w.t_start + j as f64,
                pred_pct: p,
                gt_pct: g,
            }));
        }
    }
    Ok(BaselineRun { model, evaluation: Evaluation { metrics: metrics_from_rows(&rows)?, rows }, flagged_windows: flagged })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub seed: u64,
    pub corrcoef: f64,
    pub mae: f64,
    pub rmse: f64,
}

/// Trains `end2end` once per `(alpha, seed)`; seed `s` offsets both the
/// initialization and the shuffle seed of the base configuration.
pub fn sweep_alpha(base: &ModelConfig, opts: &TrainOptions, data: &FoldData, alphas: &[f64], seeds: &[u64]) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(alphas.len() * seeds.len());
    for &alpha in alphas {
        for &seed in seeds {
            let cfg = ModelConfig { variant: Variant::End2end, alpha, seed: base.seed.wrapping_add(seed), ..base.clone() };
            let o = TrainOptions { seed: opts.seed.wrapping_add(seed), ..opts.clone() };
            let mut out = train(&cfg, &o, &data.train, &data.validation)?;
            let m = evaluate(&mut out.model, &data.test)?.metrics;
            info!("alpha {alpha} seed {seed}: mae {:.3} corr {:.3}", m.mae, m.corrcoef);
            rows.push(SweepRow { alpha, seed, corrcoef: m.corrcoef, mae: m.mae, rmse: m.rmse });
        }
    }
    Ok(rows)
}
