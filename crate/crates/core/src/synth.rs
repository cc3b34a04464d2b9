//! Synthetic subjects whose colour traces follow the ratio-of-ratios model
//! exactly, so downstream estimators have an analytic ground truth.
//!
//! For ROI `n` and channel `c`:
//!
//! ```text
//! x[c,n](t) = d[c,n] * (1 + drift[n](t)) + d[c,n] * rho[c](t) * p(t) + sigma * noise
//! ```
//!
//! `p` is one pulse waveform shared by all channels, so the standard
//! deviation ratio of red to blue AC is exactly `rho_red / rho_blue`, which
//! is set to `(spo2(t) - b_star) / a_star`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stmap::{Frame, FrameSequence, RoiGrid, SpatioTemporalMap};

/// Nominal red, green and blue base reflectance before per-subject and per-ROI scaling.
pub const BASE_LEVELS: [f64; 3] = [0.55, 0.40, 0.30];
const DRIFT_COMPONENTS: usize = 3;
const DRIFT_BAND_HZ: (f64, f64) = (0.02, 0.25);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub duration_s: f64,
    pub fps: f64,
    pub n_rois: usize,
    pub hr_hz: [f64; 2],
    pub spo2_baseline: f64,
    pub dip_depth: f64,
    pub hold_s: f64,
    pub rest_s: f64,
    pub cycles: usize,
    pub a_star: f64,
    pub b_star: f64,
    pub rho_blue: f64,
    pub rho_green: f64,
    pub drift_amp: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            duration_s: 180.0,
            fps: 30.0,
            n_rois: 224,
            hr_hz: [0.9, 2.3],
            spo2_baseline: 98.0,
            dip_depth: 6.0,
            hold_s: 30.0,
            rest_s: 30.0,
            cycles: 3,
            a_star: -30.0,
            b_star: 110.0,
            rho_blue: 0.002,
            rho_green: 0.004,
            drift_amp: 0.01,
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if !(self.duration_s > 0.0) || !(self.fps > 0.0) || self.n_rois == 0 {
            return bad(format!("need positive duration, fps and ROI count, got {} s, {} fps, {} ROIs", self.duration_s, self.fps, self.n_rois));
        }
        let [lo, hi] = self.hr_hz;
        if !(lo > 0.75 && hi < 2.5 && lo <= hi) {
            return bad(format!("heart-rate range [{lo}, {hi}] must lie inside (0.75, 2.5) Hz"));
        }
        if !(self.rho_blue > 0.0 && self.rho_green > 0.0) {
            return bad("pulsatile ratios must be positive".into());
        }
        if !(self.dip_depth >= 0.0) || self.spo2_baseline > 100.0 || self.spo2_baseline - self.dip_depth < 85.0 {
            return bad(format!("SpO2 profile {}..{} leaves [85, 100]", self.spo2_baseline - self.dip_depth, self.spo2_baseline));
        }
        if self.cycles > 0 && !(self.hold_s > 0.0 && self.rest_s > 0.0) {
            return bad("hold and rest durations must be positive".into());
        }
        if self.a_star == 0.0 || !self.a_star.is_finite() || !self.b_star.is_finite() {
            return bad("calibration slope must be finite and non-zero".into());
        }
        for s in [self.spo2_baseline, self.spo2_baseline - self.dip_depth] {
            let ror = (s - self.b_star) / self.a_star;
            if !(ror > 0.0) {
                return bad(format!("SpO2 {s} maps to non-positive RoR {ror}"));
            }
        }
        if !(self.drift_amp >= 0.0 && self.noise_sigma >= 0.0) {
            return bad("drift and noise amplitudes must be non-negative".into());
        }
        Ok(())
    }

    pub fn n_frames(&self) -> usize {
        (self.duration_s * self.fps).round() as usize
    }

    /// Nominal blue pulsatile amplitude `BASE_LEVELS[blue] * rho_blue`, the
    /// reference for expressing noise levels relative to the AC signal.
    pub fn blue_ac_amplitude(&self) -> f64 {
        BASE_LEVELS[2] * self.rho_blue
    }

    /// Ratio of ratios that encodes `spo2` under the synthetic calibration.
    pub fn target_ror(&self, spo2: f64) -> f64 {
        (spo2 - self.b_star) / self.a_star
    }
}

fn raised_cosine(u: f64) -> f64 {
    0.5 * (1.0 - (PI * u.clamp(0.0, 1.0)).cos())
}

/// Breath-hold SpO2 profile in percent.
///
/// Each cycle is a rest followed by a hold. The first rest sits at baseline;
/// during every hold SpO2 descends to `baseline - dip_depth` along a raised
/// cosine, and recovers along a raised cosine through the following rest.
pub fn spo2_profile(p: &SynthParams, t: f64) -> f64 {
    let base = p.spo2_baseline;
    if p.cycles == 0 || p.dip_depth == 0.0 {
        return base;
    }
    let period = p.rest_s + p.hold_s;
    let end = period * p.cycles as f64;
    let recovering = |u: f64| base - p.dip_depth * (1.0 - raised_cosine(u / p.rest_s));
    if t >= end {
        return recovering(t - end);
    }
    let k = (t.max(0.0) / period).floor();
    let u = t.max(0.0) - k * period;
    if u < p.rest_s {
        if k == 0.0 {
            base
        } else {
            recovering(u)
        }
    } else {
        base - p.dip_depth * raised_cosine((u - p.rest_s) / p.hold_s)
    }
}

/// Per-second SpO2 series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spo2Trace {
    pub values: Vec<f64>,
    pub t0: f64,
}

impl Spo2Trace {
    pub fn duration_s(&self) -> f64 {
        self.values.len() as f64
    }

    /// Value at integer second `t0 + k`.
    pub fn at(&self, k: usize) -> Option<f64> {
        self.values.get(k).copied()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub map: SpatioTemporalMap,
    pub spo2: Spo2Trace,
    pub meta: SynthParams,
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of subject `index`: `splitmix64(master ^ splitmix64(index))`.
pub fn subject_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}

pub fn subject_id(index: u64) -> String {
    format!("s{index:03}")
}

/// Generates subject `index` from `params`.
pub fn gen_subject(params: &SynthParams, index: u64) -> Result<SubjectRecord> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(subject_seed(params.seed, index));
    let n_rois = params.n_rois;
    let t_len = params.n_frames();
    let fs = params.fps;

    let skin = rng.gen_range(0.85..1.15);
    let levels: Vec<[f64; 3]> = (0..n_rois)
        .map(|_| {
            let mut l = [0.0; 3];
            for (c, v) in l.iter_mut().enumerate() {
                *v = BASE_LEVELS[c] * skin * rng.gen_range(0.93..1.07);
            }
            l
        })
        .collect();

    let [lo, hi] = params.hr_hz;
    let hr0 = rng.gen_range(lo..=hi);
    let hr_mod = 0.08f64.min(hr0 - lo).min(hi - hr0);
    let hr_period = rng.gen_range(20.0..40.0);
    let hr_phase = rng.gen_range(0.0..2.0 * PI);
    let harmonic_phase = rng.gen_range(0.0..2.0 * PI);
    let mut phase = rng.gen_range(0.0..2.0 * PI);
    let pulse: Vec<f64> = (0..t_len)
        .map(|i| {
            let t = i as f64 / fs;
            let p = phase.sin() + 0.3 * (2.0 * phase + harmonic_phase).sin();
            let hr = hr0 + hr_mod * (2.0 * PI * t / hr_period + hr_phase).sin();
            phase += 2.0 * PI * hr / fs;
            p
        })
        .collect();

    let ror: Vec<f64> = (0..t_len).map(|i| params.target_ror(spo2_profile(params, i as f64 / fs))).collect();

    let mut map = SpatioTemporalMap::zeros(n_rois, t_len, fs, subject_id(index));
    for (n, level) in levels.iter().enumerate() {
        let comps: Vec<(f64, f64, f64)> = (0..DRIFT_COMPONENTS)
            .map(|_| (rng.gen_range(DRIFT_BAND_HZ.0..DRIFT_BAND_HZ.1), rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.5..1.0)))
            .collect();
        let wsum: f64 = comps.iter().map(|c| c.2).sum();
        let drift: Vec<f64> = (0..t_len)
            .map(|i| {
                let t = i as f64 / fs;
                params.drift_amp * comps.iter().map(|&(f, ph, w)| w * (2.0 * PI * f * t + ph).sin()).sum::<f64>() / wsum
            })
            .collect();
        for (c, &d) in level.iter().enumerate() {
            let trace = map.trace_mut(c, n);
            for i in 0..t_len {
                let rho = match c {
                    0 => ror[i] * params.rho_blue,
                    1 => params.rho_green,
                    _ => params.rho_blue,
                };
                trace[i] = d * (1.0 + drift[i]) + d * rho * pulse[i];
            }
        }
    }
    if params.noise_sigma > 0.0 {
        for v in map.data_mut() {
            let e: f64 = StandardNormal.sample(&mut rng);
            *v += params.noise_sigma * e;
        }
    }

    let seconds = params.duration_s.floor() as usize;
    let spo2 = Spo2Trace { values: (0..seconds).map(|k| spo2_profile(params, k as f64)).collect(), t0: 0.0 };
    Ok(SubjectRecord { subject_id: subject_id(index), map, spo2, meta: params.clone() })
}

/// Subjects `0..count` generated from one master seed.
pub fn gen_cohort(params: &SynthParams, count: usize) -> Result<Vec<SubjectRecord>> {
    (0..count as u64).map(|i| gen_subject(params, i)).collect()
}

/// Paints every ROI block with its trace value at each frame; pixels outside
/// the face rectangle stay 0. Frames are `width x height`.
pub fn render_frames(map: &SpatioTemporalMap, grid: &RoiGrid, width: usize, height: usize) -> Result<FrameSequence> {
    if grid.len() != map.n_rois() {
        return Err(Error::Shape(format!("grid has {} ROIs, map has {}", grid.len(), map.n_rois())));
    }
    if grid.face.x0 + grid.face.width > width || grid.face.y0 + grid.face.height > height {
        return Err(Error::Bounds(format!("face rectangle does not fit a {width}x{height} frame")));
    }
    let mut frames = Vec::with_capacity(map.n_frames());
    for t in 0..map.n_frames() {
        let mut f = Frame::zeros(width, height);
        for (n, r) in grid.rects.iter().enumerate() {
            let rgb = [map.get(0, n, t) as f32, map.get(1, n, t) as f32, map.get(2, n, t) as f32];
            for y in r.y0..r.y0 + r.height {
                for x in r.x0..r.x0 + r.width {
                    f.set_pixel(x, y, rgb);
                }
            }
        }
        frames.push(f);
    }
    FrameSequence::new(frames, map.fps)
}
