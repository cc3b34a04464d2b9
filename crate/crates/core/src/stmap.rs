//! ROI grids over the facial rectangle and the `(3, N, T)` spatio-temporal map.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ROWS: usize = 14;
pub const DEFAULT_COLS: usize = 16;
pub const CHANNELS: usize = 3;

/// The rectangle below the eyes that the ROI grid tiles, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaceRect {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl FaceRect {
    pub fn new(x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        if width < DEFAULT_COLS {
            return Err(Error::Dimension { axis: "width", message: format!("face rectangle width {width} < {DEFAULT_COLS}") });
        }
        if height < DEFAULT_ROWS {
            return Err(Error::Dimension { axis: "height", message: format!("face rectangle height {height} < {DEFAULT_ROWS}") });
        }
        Ok(Self { x0, y0, width, height })
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x0 + self.width && y >= self.y0 && y < self.y0 + self.height
    }
}

/// One block of the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl Roi {
    pub fn area(&self) -> usize {
        self.width * self.height
    }
}

/// Row-major tiling of a [`FaceRect`] into `rows x cols` ROIs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiGrid {
    pub rects: Vec<Roi>,
    pub rows: usize,
    pub cols: usize,
    pub face: FaceRect,
}

impl RoiGrid {
    pub fn len(&self) -> usize {
        self.rects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rects.is_empty()
    }

    /// Same blocks in a different order: `order[k]` is the old index of the new block `k`.
    pub fn permuted(&self, order: &[usize]) -> RoiGrid {
        RoiGrid { rects: order.iter().map(|&i| self.rects[i]).collect(), ..self.clone() }
    }

    /// ROI indices of the bottom half of the grid (rows `rows/2..rows`).
    pub fn bottom_half(&self) -> Vec<usize> {
        bottom_half_mask(self.rows, self.cols)
    }
}

pub fn bottom_half_mask(rows: usize, cols: usize) -> Vec<usize> {
    (rows / 2 * cols..rows * cols).collect()
}

/// Splits `len` into `parts` blocks; the last block takes the remainder.
fn partition(len: usize, parts: usize) -> Vec<(usize, usize)> {
    let base = len / parts;
    (0..parts).map(|i| (i * base, if i + 1 == parts { len - base * (parts - 1) } else { base })).collect()
}

pub fn make_grid(rect: FaceRect, rows: usize, cols: usize) -> Result<RoiGrid> {
    if cols == 0 || rect.width < cols {
        return Err(Error::Dimension { axis: "width", message: format!("width {} cannot hold {} columns", rect.width, cols) });
    }
    if rows == 0 || rect.height < rows {
        return Err(Error::Dimension { axis: "height", message: format!("height {} cannot hold {} rows", rect.height, rows) });
    }
    let xs = partition(rect.width, cols);
    let ys = partition(rect.height, rows);
    let mut rects = Vec::with_capacity(rows * cols);
    for &(y, h) in &ys {
        for &(x, w) in &xs {
            rects.push(Roi { x0: rect.x0 + x, y0: rect.y0 + y, width: w, height: h });
        }
    }
    Ok(RoiGrid { rects, rows, cols, face: rect })
}

/// One RGB frame, row-major `(height, width, 3)`, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Frame {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height * 3] }
    }

    pub fn from_u8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != width * height * 3 {
            return Err(Error::Shape(format!("{}x{} RGB frame needs {} bytes, got {}", width, height, width * height * 3, bytes.len())));
        }
        Ok(Self { width, height, data: bytes.iter().map(|&b| b as f32 / 255.0).collect() })
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let o = (y * self.width + x) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let o = (y * self.width + x) * 3;
        self.data[o..o + 3].copy_from_slice(&rgb);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    pub frames: Vec<Frame>,
    pub fps: f64,
}

impl FrameSequence {
    pub fn new(frames: Vec<Frame>, fps: f64) -> Result<Self> {
        if !(fps > 0.0) {
            return Err(Error::Parameter(format!("fps must be positive, got {fps}")));
        }
        if let Some(f0) = frames.first() {
            if let Some(i) = frames.iter().position(|f| f.width != f0.width || f.height != f0.height) {
                return Err(Error::Shape(format!("frame {i} is {}x{}, expected {}x{}", frames[i].width, frames[i].height, f0.width, f0.height)));
            }
        }
        Ok(Self { frames, fps })
    }
}

/// Per-ROI mean RGB traces, layout `(channel, roi, time)` with channels red, green, blue.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatioTemporalMap {
    data: Vec<f64>,
    n_rois: usize,
    n_frames: usize,
    pub fps: f64,
    pub subject_id: String,
}

impl SpatioTemporalMap {
    pub fn zeros(n_rois: usize, n_frames: usize, fps: f64, subject_id: impl Into<String>) -> Self {
        Self { data: vec![0.0; CHANNELS * n_rois * n_frames], n_rois, n_frames, fps, subject_id: subject_id.into() }
    }

    pub fn from_data(data: Vec<f64>, n_rois: usize, n_frames: usize, fps: f64, subject_id: impl Into<String>) -> Result<Self> {
        if data.len() != CHANNELS * n_rois * n_frames {
            return Err(Error::Shape(format!("map data has {} values, expected 3x{}x{}", data.len(), n_rois, n_frames)));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite map entry at flat index {i}")));
        }
        Ok(Self { data, n_rois, n_frames, fps, subject_id: subject_id.into() })
    }

    pub fn shape(&self) -> [usize; 3] {
        [CHANNELS, self.n_rois, self.n_frames]
    }

    pub fn n_rois(&self) -> usize {
        self.n_rois
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn duration_s(&self) -> f64 {
        self.n_frames as f64 / self.fps
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, c: usize, n: usize, t: usize) -> f64 {
        self.data[(c * self.n_rois + n) * self.n_frames + t]
    }

    pub fn trace(&self, c: usize, n: usize) -> &[f64] {
        let o = (c * self.n_rois + n) * self.n_frames;
        &self.data[o..o + self.n_frames]
    }

    pub fn trace_mut(&mut self, c: usize, n: usize) -> &mut [f64] {
        let o = (c * self.n_rois + n) * self.n_frames;
        &mut self.data[o..o + self.n_frames]
    }

    /// Frames `start..start + len` of every trace.
    pub fn window(&self, start: usize, len: usize) -> Result<SpatioTemporalMap> {
        if start + len > self.n_frames {
            return Err(Error::Length(format!("window {}..{} exceeds {} frames", start, start + len, self.n_frames)));
        }
        let mut out = SpatioTemporalMap::zeros(self.n_rois, len, self.fps, self.subject_id.clone());
        for c in 0..CHANNELS {
            for n in 0..self.n_rois {
                out.trace_mut(c, n).copy_from_slice(&self.trace(c, n)[start..start + len]);
            }
        }
        Ok(out)
    }

    /// Mean over `rois` of each channel's trace.
    pub fn pooled_traces(&self, rois: &[usize]) -> Result<[Vec<f64>; 3]> {
        if rois.is_empty() {
            return Err(Error::Parameter("empty ROI mask".into()));
        }
        if let Some(&bad) = rois.iter().find(|&&n| n >= self.n_rois) {
            return Err(Error::Bounds(format!("ROI {bad} outside map with {} ROIs", self.n_rois)));
        }
        let mut out: [Vec<f64>; 3] = Default::default();
        for (c, o) in out.iter_mut().enumerate() {
            let mut acc = vec![0.0; self.n_frames];
            for &n in rois {
                for (a, v) in acc.iter_mut().zip(self.trace(c, n)) {
                    *a += v;
                }
            }
            acc.iter_mut().for_each(|a| *a /= rois.len() as f64);
            *o = acc;
        }
        Ok(out)
    }

    pub fn map_traces(&self, mut f: impl FnMut(&[f64]) -> Result<Vec<f64>>) -> Result<SpatioTemporalMap> {
        let mut out = self.clone();
        for c in 0..CHANNELS {
            for n in 0..self.n_rois {
                let y = f(self.trace(c, n))?;
                if y.len() != self.n_frames {
                    return Err(Error::Length(format!("trace map changed length {} -> {}", self.n_frames, y.len())));
                }
                out.trace_mut(c, n).copy_from_slice(&y);
            }
        }
        Ok(out)
    }
}

fn check_inside(grid: &RoiGrid, width: usize, height: usize) -> Result<()> {
    for (i, r) in grid.rects.iter().enumerate() {
        if r.area() == 0 || r.x0 + r.width > width || r.y0 + r.height > height {
            return Err(Error::Bounds(format!("ROI {i} ({},{} {}x{}) outside {}x{} frame", r.x0, r.y0, r.width, r.height, width, height)));
        }
    }
    Ok(())
}

/// Spatial means of each ROI in one frame, `[channel][roi]`.
pub fn roi_means(frame: &Frame, grid: &RoiGrid) -> Result<[Vec<f64>; 3]> {
    check_inside(grid, frame.width, frame.height)?;
    let mut out: [Vec<f64>; 3] = [vec![0.0; grid.len()], vec![0.0; grid.len()], vec![0.0; grid.len()]];
    for (n, r) in grid.rects.iter().enumerate() {
        let mut s = [0.0f64; 3];
        for y in r.y0..r.y0 + r.height {
            let row = &frame.data[(y * frame.width + r.x0) * 3..(y * frame.width + r.x0 + r.width) * 3];
            for px in row.chunks_exact(3) {
                s[0] += px[0] as f64;
                s[1] += px[1] as f64;
                s[2] += px[2] as f64;
            }
        }
        let area = r.area() as f64;
        for c in 0..3 {
            out[c][n] = s[c] / area;
        }
    }
    Ok(out)
}

/// Builds the map with one fixed grid for every frame.
pub fn build_map(frames: &FrameSequence, grid: &RoiGrid, subject_id: &str) -> Result<SpatioTemporalMap> {
    let mut b = MapBuilder::new(grid.len(), frames.fps, subject_id);
    for f in &frames.frames {
        b.push(f, grid)?;
    }
    b.finish()
}

/// Builds the map with a separate grid per frame (tracked face rectangle).
pub fn build_map_tracked(frames: &FrameSequence, grids: &[RoiGrid], subject_id: &str) -> Result<SpatioTemporalMap> {
    if grids.len() != frames.frames.len() {
        return Err(Error::Length(format!("{} grids for {} frames", grids.len(), frames.frames.len())));
    }
    let n = grids.first().map_or(0, RoiGrid::len);
    let mut b = MapBuilder::new(n, frames.fps, subject_id);
    for (f, g) in frames.frames.iter().zip(grids) {
        b.push(f, g)?;
    }
    b.finish()
}

/// Incremental map construction, one frame at a time.
pub struct MapBuilder {
    n_rois: usize,
    fps: f64,
    subject_id: String,
    columns: Vec<[Vec<f64>; 3]>,
}

impl MapBuilder {
    pub fn new(n_rois: usize, fps: f64, subject_id: &str) -> Self {
        Self { n_rois, fps, subject_id: subject_id.to_string(), columns: Vec::new() }
    }

    pub fn push(&mut self, frame: &Frame, grid: &RoiGrid) -> Result<()> {
        if grid.len() != self.n_rois {
            return Err(Error::Shape(format!("grid has {} ROIs, map has {}", grid.len(), self.n_rois)));
        }
        self.columns.push(roi_means(frame, grid)?);
        Ok(())
    }

    pub fn finish(self) -> Result<SpatioTemporalMap> {
        let t = self.columns.len();
        if t == 0 {
            return Err(Error::Length("no frames".into()));
        }
        let mut map = SpatioTemporalMap::zeros(self.n_rois, t, self.fps, self.subject_id);
        for (ti, col) in self.columns.iter().enumerate() {
            for (c, vals) in col.iter().enumerate() {
                for (n, &v) in vals.iter().enumerate() {
                    map.data[(c * self.n_rois + n) * t + ti] = v;
                }
            }
        }
        Ok(map)
    }
}

/// Running count, mean and sum of squared deviations of one trace.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn of(x: &[f64]) -> Self {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let m2 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
        Self { count: x.len() as u64, mean, m2 }
    }

    /// Pairwise (Chan et al.) merge.
    pub fn merge(&self, other: &Moments) -> Moments {
        if self.count == 0 {
            return *other;
        }
        if other.count == 0 {
            return *self;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let delta = other.mean - self.mean;
        Moments { count: self.count + other.count, mean: self.mean + delta * nb / n, m2: self.m2 + other.m2 + delta * delta * na * nb / n }
    }

    /// Population variance.
    pub fn variance(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.m2 / self.count as f64
        }
    }

    pub fn std(&self) -> f64 {
        self.variance().sqrt()
    }
}

fn is_zero_variance(m: &Moments) -> bool {
    m.variance() <= 1e-24 * m.mean.abs().max(1.0).powi(2)
}

fn zscore(x: &[f64], m: &Moments) -> Vec<f64> {
    if is_zero_variance(m) {
        return vec![0.0; x.len()];
    }
    let s = m.std();
    x.iter().map(|v| (v - m.mean) / s).collect()
}

/// Z-scores every `(channel, ROI)` trace over the whole recording.
pub fn normalize_train(map: &SpatioTemporalMap) -> SpatioTemporalMap {
    map.map_traces(|x| Ok(zscore(x, &Moments::of(x)))).expect("length preserved")
}

/// Causal per-`(channel, ROI)` statistics for test-time normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CausalStats {
    pub subject_id: String,
    pub n_rois: usize,
    pub moments: Vec<Moments>,
}

impl CausalStats {
    pub fn new(subject_id: impl Into<String>, n_rois: usize) -> Self {
        Self { subject_id: subject_id.into(), n_rois, moments: vec![Moments::default(); CHANNELS * n_rois] }
    }

    pub fn get(&self, c: usize, n: usize) -> &Moments {
        &self.moments[c * self.n_rois + n]
    }
}

/// Extends `history` with `window` and z-scores the window with the updated statistics.
pub fn normalize_test_causal(window: &SpatioTemporalMap, history: CausalStats) -> Result<(SpatioTemporalMap, CausalStats)> {
    if history.subject_id != window.subject_id {
        return Err(Error::Identity(format!("statistics of subject {} applied to subject {}", history.subject_id, window.subject_id)));
    }
    if history.n_rois != window.n_rois() {
        return Err(Error::Shape(format!("statistics for {} ROIs, window has {}", history.n_rois, window.n_rois())));
    }
    let mut stats = history;
    let mut out = window.clone();
    for c in 0..CHANNELS {
        for n in 0..window.n_rois() {
            let k = c * stats.n_rois + n;
            stats.moments[k] = stats.moments[k].merge(&Moments::of(window.trace(c, n)));
            let z = zscore(window.trace(c, n), &stats.moments[k]);
            out.trace_mut(c, n).copy_from_slice(&z);
        }
    }
    Ok((out, stats))
}
