//! Ratio-of-ratios estimator with linear calibration, and an ordinary
//! least-squares baseline on per-channel AC/DC ratios.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::DcAcSplitter;
use crate::stmap::SpatioTemporalMap;

pub const SPO2_MIN: f64 = 85.0;
pub const SPO2_MAX: f64 = 100.0;

pub fn clamp_spo2(v: f64) -> f64 {
    v.clamp(SPO2_MIN, SPO2_MAX)
}

/// `(mean, population standard deviation)` of a window.
pub fn window_dc_ac(trace: &[f64]) -> Result<(f64, f64)> {
    if trace.len() < 2 {
        return Err(Error::Length(format!("DC/AC needs at least 2 samples, got {}", trace.len())));
    }
    let n = trace.len() as f64;
    let dc = trace.iter().sum::<f64>() / n;
    let ac = (trace.iter().map(|v| (v - dc) * (v - dc)).sum::<f64>() / n).sqrt();
    Ok((dc, ac))
}

/// `(AC_red / DC_red) / (AC_blue / DC_blue)`.
pub fn compute_ror(red: &[f64], blue: &[f64]) -> Result<f64> {
    if red.len() != blue.len() {
        return Err(Error::Length(format!("red has {} samples, blue {}", red.len(), blue.len())));
    }
    let (dc_r, ac_r) = window_dc_ac(red)?;
    let (dc_b, ac_b) = window_dc_ac(blue)?;
    if dc_b == 0.0 || ac_b == 0.0 || dc_r == 0.0 {
        return Err(Error::Degenerate(format!("zero DC or AC (red dc {dc_r}, blue dc {dc_b}, blue ac {ac_b})")));
    }
    Ok((ac_r / dc_r) / (ac_b / dc_b))
}

/// `SpO2 = a * RoR + b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RorCalibration {
    pub a: f64,
    pub b: f64,
}

impl RorCalibration {
    pub fn apply(&self, ror: f64) -> f64 {
        self.a * ror + self.b
    }
}

/// Least-squares line through `(ror, spo2)` pairs.
pub fn fit_calibration(rors: &[f64], spo2: &[f64]) -> Result<RorCalibration> {
    if rors.len() != spo2.len() || rors.len() < 2 {
        return Err(Error::Length(format!("calibration needs >= 2 paired points, got {} / {}", rors.len(), spo2.len())));
    }
    let n = rors.len() as f64;
    let mx = rors.iter().sum::<f64>() / n;
    let my = spo2.iter().sum::<f64>() / n;
    let sxx: f64 = rors.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = rors.iter().zip(spo2).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx <= 1e-24 * n * mx.abs().max(1.0).powi(2) {
        return Err(Error::Rank("all RoR values are identical".into()));
    }
    let a = sxy / sxx;
    Ok(RorCalibration { a, b: my - a * mx })
}

/// RoR of the ROI-pooled red and blue traces of a window.
pub fn window_ror(window: &SpatioTemporalMap, roi_mask: &[usize]) -> Result<f64> {
    let [red, _, blue] = window.pooled_traces(roi_mask)?;
    compute_ror(&red, &blue)
}

/// Calibrated SpO2 of a window, clamped to `[85, 100]`.
pub fn predict_ror(cal: &RorCalibration, window: &SpatioTemporalMap, roi_mask: &[usize]) -> Result<f64> {
    if window.n_frames() < 2 {
        return Err(Error::Length("window needs at least 2 frames".into()));
    }
    Ok(clamp_spo2(cal.apply(window_ror(window, roi_mask)?)))
}

pub const LR_FEATURES: [&str; 3] = ["ac_dc_red", "ac_dc_green", "ac_dc_blue"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub feature_names: Vec<String>,
}

impl LinearModel {
    pub fn raw(&self, features: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(features).map(|(w, x)| w * x).sum::<f64>()
    }
}

/// `AC_c / DC_c` per channel from the filtered components of the ROI-pooled
/// window: DC is the mean of the low-pass output, AC the standard deviation
/// of the band-pass output.
pub fn lr_features(window: &SpatioTemporalMap, roi_mask: &[usize], splitter: &DcAcSplitter) -> Result<[f64; 3]> {
    let pooled = window.pooled_traces(roi_mask)?;
    let mut out = [0.0; 3];
    for (c, trace) in pooled.iter().enumerate() {
        let dc = crate::filters::filtfilt(&splitter.lowpass, trace)?;
        let ac = crate::filters::filtfilt(&splitter.bandpass, trace)?;
        let (dc_mean, _) = window_dc_ac(&dc)?;
        let (_, ac_std) = window_dc_ac(&ac)?;
        if dc_mean == 0.0 {
            return Err(Error::Degenerate(format!("channel {c} has zero DC")));
        }
        out[c] = ac_std / dc_mean;
    }
    Ok(out)
}

/// Ordinary least squares with intercept on the three ratio features.
pub fn fit_lr(features: &[[f64; 3]], spo2: &[f64]) -> Result<LinearModel> {
    if features.len() != spo2.len() {
        return Err(Error::Length(format!("{} feature rows for {} targets", features.len(), spo2.len())));
    }
    if features.len() < 4 {
        return Err(Error::Length(format!("LR fit needs at least 4 windows, got {}", features.len())));
    }
    let n = features.len() as f64;
    let mut mean = [0.0; 3];
    for f in features {
        for j in 0..3 {
            mean[j] += f[j] / n;
        }
    }
    let my = spo2.iter().sum::<f64>() / n;
    // Centred normal equations: S w = r.
    let mut s = [[0.0; 3]; 3];
    let mut r = [0.0; 3];
    for (f, y) in features.iter().zip(spo2) {
        let d = [f[0] - mean[0], f[1] - mean[1], f[2] - mean[2]];
        for i in 0..3 {
            r[i] += d[i] * (y - my);
            for j in 0..3 {
                s[i][j] += d[i] * d[j];
            }
        }
    }
    let w = solve3(s, r).ok_or_else(|| Error::Rank("LR design matrix is singular".into()))?;
    let bias = my - (0..3).map(|j| w[j] * mean[j]).sum::<f64>();
    Ok(LinearModel { weights: w.to_vec(), bias, feature_names: LR_FEATURES.iter().map(|s| s.to_string()).collect() })
}

pub fn predict_lr(model: &LinearModel, features: &[f64; 3]) -> f64 {
    clamp_spo2(model.raw(features))
}

/// Gaussian elimination with partial pivoting; `None` when singular.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return None;
    }
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() <= 1e-12 * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for i in (0..3).rev() {
        let s: f64 = (i + 1..3).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Some(x)
}

/// Serialized form of either baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BaselineModel {
    Ror { a: f64, b: f64 },
    Lr { weights: Vec<f64>, bias: f64, feature_names: Vec<String> },
}

impl From<RorCalibration> for BaselineModel {
    fn from(c: RorCalibration) -> Self {
        BaselineModel::Ror { a: c.a, b: c.b }
    }
}

impl From<LinearModel> for BaselineModel {
    fn from(m: LinearModel) -> Self {
        BaselineModel::Lr { weights: m.weights, bias: m.bias, feature_names: m.feature_names }
    }
}
