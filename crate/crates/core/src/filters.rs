//! Butterworth low-pass / band-pass design (bilinear transform with
//! pre-warping) and zero-phase forward-backward application.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stmap::SpatioTemporalMap;

pub const DC_CUTOFF_HZ: f64 = 0.3;
pub const AC_BAND_HZ: (f64, f64) = (0.75, 2.5);
pub const DEFAULT_ORDER: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Lowpass,
    Bandpass,
}

/// Second-order section `(b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn response(&self, z1: C64) -> C64 {
        let z2 = z1 * z1;
        let num = C64::real(self.b[0]) + z1.scale(self.b[1]) + z2.scale(self.b[2]);
        let den = C64::real(1.0) + z1.scale(self.a[0]) + z2.scale(self.a[1]);
        num / den
    }

    fn poles(&self) -> [C64; 2] {
        let (a1, a2) = (self.a[0], self.a[1]);
        let disc = a1 * a1 - 4.0 * a2;
        if disc >= 0.0 {
            let r = disc.sqrt();
            [C64::real((-a1 + r) / 2.0), C64::real((-a1 - r) / 2.0)]
        } else {
            let i = (-disc).sqrt() / 2.0;
            [C64::new(-a1 / 2.0, i), C64::new(-a1 / 2.0, -i)]
        }
    }

    /// Steady-state transposed direct-form-II state for a unit step input.
    fn step_state(&self) -> [f64; 2] {
        let gain = (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1]);
        let z1 = self.b[2] - self.a[1] * gain;
        let z0 = self.b[1] - self.a[0] * gain + z1;
        [z0, z1]
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }
}

/// A designed filter; immutable once built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub cutoffs: Vec<f64>,
    pub order: usize,
    pub sample_rate: f64,
    pub sections: Vec<Biquad>,
}

impl FilterSpec {
    /// Complex frequency response at `f` Hz.
    fn response(&self, f: f64) -> C64 {
        let w = 2.0 * PI * f / self.sample_rate;
        let z1 = C64::new(w.cos(), -w.sin());
        self.sections.iter().fold(C64::real(1.0), |acc, s| acc * s.response(z1))
    }

    /// Single-pass magnitude `|H(e^{jw})|` at `f` Hz.
    pub fn magnitude(&self, f: f64) -> f64 {
        self.response(f).abs()
    }

    pub fn poles(&self) -> Vec<(f64, f64)> {
        self.sections.iter().flat_map(|s| s.poles()).map(|p| (p.re, p.im)).collect()
    }

    pub fn is_stable(&self) -> bool {
        self.sections.iter().flat_map(|s| s.poles()).all(|p| p.abs() < 1.0)
    }

    /// Numerator of the full rational transfer function in powers of `z^-1`.
    pub fn numerator(&self) -> Vec<f64> {
        self.sections.iter().fold(vec![1.0], |acc, s| poly_mul(&acc, &s.b))
    }

    /// Denominator in powers of `z^-1`; leading coefficient is 1.
    pub fn denominator(&self) -> Vec<f64> {
        self.sections.iter().fold(vec![1.0], |acc, s| poly_mul(&acc, &[1.0, s.a[0], s.a[1]]))
    }

    /// Edge padding length used by [`filtfilt`].
    pub fn pad_len(&self) -> usize {
        3 * self.order
    }

    /// Causal single pass with steady-state initial conditions scaled by `x[0]`.
    pub fn lfilter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        let Some(&x0) = x.first() else { return y };
        let mut level = x0;
        for s in &self.sections {
            let zi = s.step_state();
            let mut z = [zi[0] * level, zi[1] * level];
            for v in y.iter_mut() {
                let xin = *v;
                let out = s.b[0] * xin + z[0];
                z[0] = s.b[1] * xin - s.a[0] * out + z[1];
                z[1] = s.b[2] * xin - s.a[1] * out;
                *v = out;
            }
            level *= s.dc_gain();
        }
        y
    }
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn check_band(name: &str, f: f64, fs: f64) -> Result<()> {
    if !(f > 0.0 && f < fs / 2.0) {
        return Err(Error::Parameter(format!("{name} {f} Hz must lie strictly inside (0, {}) Hz", fs / 2.0)));
    }
    Ok(())
}

/// Normalized analog Butterworth poles on the unit circle, left half plane.
fn prototype_poles(order: usize) -> Vec<C64> {
    (0..order)
        .map(|k| {
            let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            C64::new(theta.cos(), theta.sin())
        })
        .collect()
}

fn bilinear(s: C64, fs: f64) -> C64 {
    let k = C64::real(2.0 * fs);
    (k + s) / (k - s)
}

/// Groups digital poles into conjugate pairs (real poles pair with each other).
fn pair_poles(poles: &[C64]) -> Vec<[f64; 2]> {
    let mut complex: Vec<C64> = poles.iter().copied().filter(|p| p.im > 1e-12).collect();
    complex.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    let mut real: Vec<f64> = poles.iter().filter(|p| p.im.abs() <= 1e-12).map(|p| p.re).collect();
    real.sort_by(|a, b| a.total_cmp(b));
    let mut dens: Vec<[f64; 2]> = complex.iter().map(|p| [-2.0 * p.re, p.abs() * p.abs()]).collect();
    for pair in real.chunks(2) {
        match *pair {
            [r1, r2] => dens.push([-(r1 + r2), r1 * r2]),
            [r] => dens.push([-r, 0.0]),
            _ => unreachable!(),
        }
    }
    dens
}

fn check_order(order: usize) -> Result<()> {
    if order == 0 || order > 12 {
        return Err(Error::Parameter(format!("filter order {order} outside 1..=12")));
    }
    Ok(())
}

/// Butterworth low-pass; unit gain at DC, `1/sqrt(2)` at `cutoff`.
pub fn design_lowpass(cutoff: f64, fs: f64, order: usize) -> Result<FilterSpec> {
    check_order(order)?;
    check_band("cutoff", cutoff, fs)?;
    let warped = 2.0 * fs * (PI * cutoff / fs).tan();
    let poles: Vec<C64> = prototype_poles(order).into_iter().map(|p| bilinear(p.scale(warped), fs)).collect();
    let mut sections: Vec<Biquad> = pair_poles(&poles)
        .into_iter()
        .map(|a| if a[1] == 0.0 && order % 2 == 1 { Biquad { b: [1.0, 1.0, 0.0], a } } else { Biquad { b: [1.0, 2.0, 1.0], a } })
        .collect();
    // Odd orders leave one first-order section; every section gets unit DC gain.
    for s in &mut sections {
        let g = s.dc_gain();
        s.b.iter_mut().for_each(|b| *b /= g);
    }
    Ok(FilterSpec { kind: FilterKind::Lowpass, cutoffs: vec![cutoff], order, sample_rate: fs, sections })
}

/// Butterworth band-pass of prototype order `order` (transfer function of degree `2 * order`).
pub fn design_bandpass(low: f64, high: f64, fs: f64, order: usize) -> Result<FilterSpec> {
    check_order(order)?;
    check_band("low edge", low, fs)?;
    check_band("high edge", high, fs)?;
    if low >= high {
        return Err(Error::Parameter(format!("band edges must satisfy low < high, got {low} >= {high}")));
    }
    let w1 = 2.0 * fs * (PI * low / fs).tan();
    let w2 = 2.0 * fs * (PI * high / fs).tan();
    let bw = w2 - w1;
    let w0sq = w1 * w2;
    let mut poles = Vec::with_capacity(2 * order);
    for p in prototype_poles(order) {
        let half = p.scale(bw / 2.0);
        let root = (half * half - C64::real(w0sq)).sqrt();
        poles.push(bilinear(half + root, fs));
        poles.push(bilinear(half - root, fs));
    }
    let mut sections: Vec<Biquad> = pair_poles(&poles).into_iter().map(|a| Biquad { b: [1.0, 0.0, -1.0], a }).collect();
    // Unit gain at the centre frequency that the bilinear map sends from sqrt(w1 w2).
    let f0 = fs / PI * (w0sq.sqrt() / (2.0 * fs)).atan();
    let w = 2.0 * PI * f0 / fs;
    let z1 = C64::new(w.cos(), -w.sin());
    for s in &mut sections {
        let g = s.response(z1).abs();
        s.b.iter_mut().for_each(|b| *b /= g);
    }
    Ok(FilterSpec { kind: FilterKind::Bandpass, cutoffs: vec![low, high], order, sample_rate: fs, sections })
}

/// Zero-phase forward-backward filtering.
///
/// The series is extended at both ends by odd reflection of length
/// `3 * order`; each pass starts from the steady state of its first input
/// sample and the padding is removed from the result.
pub fn filtfilt(spec: &FilterSpec, x: &[f64]) -> Result<Vec<f64>> {
    let pad = spec.pad_len();
    if x.len() <= pad {
        return Err(Error::Length(format!("series of length {} too short for padding {}", x.len(), pad)));
    }
    let n = x.len();
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
    let mut y = spec.lfilter(&ext);
    y.reverse();
    let mut y = spec.lfilter(&y);
    y.reverse();
    Ok(y[pad..pad + n].to_vec())
}

/// Low-frequency (DC) and cardiac-band (AC) component maps.
#[derive(Clone, Debug, PartialEq)]
pub struct FilteredMaps {
    pub dc: SpatioTemporalMap,
    pub ac: SpatioTemporalMap,
}

/// Holds the two designed filters for one sample rate.
#[derive(Clone, Debug, PartialEq)]
pub struct DcAcSplitter {
    pub lowpass: FilterSpec,
    pub bandpass: FilterSpec,
}

impl DcAcSplitter {
    pub fn new(fs: f64) -> Result<Self> {
        Ok(Self {
            lowpass: design_lowpass(DC_CUTOFF_HZ, fs, DEFAULT_ORDER)?,
            bandpass: design_bandpass(AC_BAND_HZ.0, AC_BAND_HZ.1, fs, DEFAULT_ORDER)?,
        })
    }

    pub fn split(&self, map: &SpatioTemporalMap) -> Result<FilteredMaps> {
        let min = 12 * self.lowpass.order.max(self.bandpass.order);
        if map.n_frames() <= min {
            return Err(Error::Length(format!("map has {} frames, DC/AC split needs more than {}", map.n_frames(), min)));
        }
        Ok(FilteredMaps {
            dc: map.map_traces(|t| filtfilt(&self.lowpass, t))?,
            ac: map.map_traces(|t| filtfilt(&self.bandpass, t))?,
        })
    }
}

/// Splits every trace of `map` with the default 0.3 Hz low-pass and 0.75-2.5 Hz band-pass.
pub fn split_dc_ac(map: &SpatioTemporalMap) -> Result<FilteredMaps> {
    DcAcSplitter::new(map.fps)?.split(map)
}

/// Just enough complex arithmetic for pole placement and frequency response.
#[derive(Clone, Copy, Debug, PartialEq)]
struct C64 {
    re: f64,
    im: f64,
}

impl C64 {
    fn new(re: f64, im: f64) -> Self {
        Self { re, im }
    }
    fn real(re: f64) -> Self {
        Self { re, im: 0.0 }
    }
    fn scale(self, k: f64) -> Self {
        Self::new(self.re * k, self.im * k)
    }
    fn abs(self) -> f64 {
        self.re.hypot(self.im)
    }
    fn sqrt(self) -> Self {
        let r = self.abs();
        let re = ((r + self.re) / 2.0).max(0.0).sqrt();
        let im = ((r - self.re) / 2.0).max(0.0).sqrt().copysign(self.im);
        Self::new(re, im)
    }
}

impl std::ops::Add for C64 {
    type Output = C64;
    fn add(self, o: C64) -> C64 {
        C64::new(self.re + o.re, self.im + o.im)
    }
}

impl std::ops::Sub for C64 {
    type Output = C64;
    fn sub(self, o: C64) -> C64 {
        C64::new(self.re - o.re, self.im - o.im)
    }
}

impl std::ops::Mul for C64 {
    type Output = C64;
    fn mul(self, o: C64) -> C64 {
        C64::new(self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re)
    }
}

impl std::ops::Div for C64 {
    type Output = C64;
    fn div(self, o: C64) -> C64 {
        let d = o.re * o.re + o.im * o.im;
        C64::new((self.re * o.re + self.im * o.im) / d, (self.im * o.re - self.re * o.im) / d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Closed-form magnitude of a bilinear-transformed Butterworth design.
    fn oracle(kind: FilterKind, cutoffs: &[f64], fs: f64, order: usize, f: f64) -> f64 {
        let warp = |x: f64| (PI * x / fs).tan();
        let omega = match kind {
            FilterKind::Lowpass => warp(f) / warp(cutoffs[0]),
            FilterKind::Bandpass => {
                let (w1, w2, w) = (warp(cutoffs[0]), warp(cutoffs[1]), warp(f));
                (w * w - w1 * w2) / (w * (w2 - w1))
            }
        };
        1.0 / (1.0 + omega.powi(2 * order as i32)).sqrt()
    }

    #[test]
    fn lowpass_reference_gains() {
        let lp = design_lowpass(0.3, 30.0, 4).unwrap();
        assert!((lp.magnitude(0.0) - 1.0).abs() < 1e-9);
        assert!((lp.magnitude(0.3) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-3);
        assert!(lp.magnitude(1.2) <= 0.01);
        assert!(lp.is_stable());
        let den = lp.denominator();
        assert_eq!(den.len(), 5);
        assert_eq!(den[0], 1.0);
    }

    #[test]
    fn bandpass_reference_gains() {
        let bp = design_bandpass(0.75, 2.5, 30.0, 4).unwrap();
        assert!(bp.magnitude((0.75f64 * 2.5).sqrt()) >= 0.99);
        assert!((bp.magnitude(0.75) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-3);
        assert!((bp.magnitude(2.5) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-3);
        assert!(bp.magnitude(0.1) <= 0.01);
        assert_eq!(bp.numerator().len(), 9);
        assert!(bp.is_stable());
    }

    #[test]
    fn designs_match_closed_form_magnitude() {
        let lp = design_lowpass(0.3, 30.0, 4).unwrap();
        let bp = design_bandpass(0.75, 2.5, 30.0, 4).unwrap();
        let odd = design_lowpass(2.0, 30.0, 3).unwrap();
        for i in 0..150 {
            let f = 0.01 + i as f64 * 0.0999;
            assert!((lp.magnitude(f) - oracle(FilterKind::Lowpass, &[0.3], 30.0, 4, f)).abs() < 1e-9);
            assert!((bp.magnitude(f) - oracle(FilterKind::Bandpass, &[0.75, 2.5], 30.0, 4, f)).abs() < 1e-9);
            assert!((odd.magnitude(f) - oracle(FilterKind::Lowpass, &[2.0], 30.0, 3, f)).abs() < 1e-9);
        }
    }

    #[test]
    fn parameter_errors() {
        assert!(matches!(design_lowpass(0.0, 30.0, 4), Err(Error::Parameter(_))));
        assert!(matches!(design_lowpass(15.0, 30.0, 4), Err(Error::Parameter(_))));
        assert!(matches!(design_bandpass(2.5, 0.75, 30.0, 4), Err(Error::Parameter(_))));
        assert!(matches!(design_bandpass(0.75, 16.0, 30.0, 4), Err(Error::Parameter(_))));
    }

    #[test]
    fn constant_through_lowpass_is_unchanged() {
        let lp = design_lowpass(0.3, 30.0, 4).unwrap();
        let y = filtfilt(&lp, &vec![3.7; 400]).unwrap();
        assert!(y.iter().all(|v| (v - 3.7).abs() < 1e-6));
    }

    #[test]
    fn short_series_is_length_error() {
        let lp = design_lowpass(0.3, 30.0, 4).unwrap();
        assert!(matches!(filtfilt(&lp, &[1.0; 12]), Err(Error::Length(_))));
        assert!(filtfilt(&lp, &[1.0; 13]).is_ok());
    }
}
