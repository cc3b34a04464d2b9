//! On-disk formats: STM map files, SpO2 CSV traces, raw frame dumps,
//! model checkpoints and dataset directories.
//!
//! An STM file is the 8-byte magic `STMAP\0\0\x01`, a little-endian `u32`
//! header length, a UTF-8 JSON header and then `3 * n_rois * n_frames`
//! little-endian `f32` values in `(channel, roi, time)` order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::interpolate_spo2;
use crate::models::{build_model, ModelConfig, SpO2Net};
use crate::stmap::{Frame, FrameSequence, SpatioTemporalMap, CHANNELS};
use crate::synth::{Spo2Trace, SubjectRecord, SynthParams};
use crate::tensornet::layers::{load_state_dict, state_dict};
use crate::tensornet::serialize::{decode_params, encode_params, ParamManifest};

pub const STM_MAGIC: [u8; 8] = *b"STMAP\0\0\x01";
pub const STM_LAYOUT: &str = "c-roi-t";
pub const DTYPE_F32LE: &str = "f32le";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StmHeader {
    pub subject_id: String,
    pub channels: usize,
    pub n_rois: usize,
    pub n_frames: usize,
    pub fps: f64,
    pub layout: String,
    pub dtype: String,
}

pub fn encode_stm(map: &SpatioTemporalMap) -> Result<Vec<u8>> {
    let header = StmHeader {
        subject_id: map.subject_id.clone(),
        channels: CHANNELS,
        n_rois: map.n_rois(),
        n_frames: map.n_frames(),
        fps: map.fps,
        layout: STM_LAYOUT.into(),
        dtype: DTYPE_F32LE.into(),
    };
    let json = serde_json::to_vec(&header)?;
    let len = u32::try_from(json.len()).map_err(|_| Error::Format("STM header exceeds 4 GiB".into()))?;
    let mut out = Vec::with_capacity(12 + json.len() + 4 * map.data().len());
    out.extend_from_slice(&STM_MAGIC);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    for &v in map.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_stm(bytes: &[u8]) -> Result<SpatioTemporalMap> {
    if bytes.len() < 12 || bytes[..8] != STM_MAGIC {
        return Err(Error::Format("not an STM file (bad magic)".into()));
    }
    let len = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
    let json = bytes.get(12..12 + len).ok_or_else(|| Error::Format("truncated STM header".into()))?;
    let h: StmHeader = serde_json::from_slice(json)?;
    if h.channels != CHANNELS || h.layout != STM_LAYOUT || h.dtype != DTYPE_F32LE {
        return Err(Error::Format(format!("unsupported STM layout: {} channels, {}, {}", h.channels, h.layout, h.dtype)));
    }
    let body = &bytes[12 + len..];
    let expected = 4 * CHANNELS * h.n_rois * h.n_frames;
    if body.len() != expected {
        return Err(Error::Format(format!("STM body holds {} bytes, header implies {expected}", body.len())));
    }
    let data = body.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
    SpatioTemporalMap::from_data(data, h.n_rois, h.n_frames, h.fps, h.subject_id)
}

pub fn write_stm(path: &Path, map: &SpatioTemporalMap) -> Result<()> {
    Ok(fs::write(path, encode_stm(map)?)?)
}

pub fn read_stm(path: &Path) -> Result<SpatioTemporalMap> {
    decode_stm(&fs::read(path)?)
}

pub const SPO2_CSV_HEADER: [&str; 2] = ["t_s", "spo2_pct"];

pub fn write_spo2_csv(path: &Path, trace: &Spo2Trace) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(SPO2_CSV_HEADER).map_err(csv_err)?;
    for (k, v) in trace.values.iter().enumerate() {
        w.write_record([(trace.t0 + k as f64).to_string(), v.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `(t_s, spo2_pct)` rows and resamples them to integer seconds.
pub fn read_spo2_csv(path: &Path) -> Result<Spo2Trace> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().collect::<Vec<_>>() != SPO2_CSV_HEADER {
        return Err(Error::Format(format!("{}: expected header t_s,spo2_pct, got {:?}", path.display(), header)));
    }
    let mut samples = Vec::new();
    for (i, rec) in r.deserialize::<(f64, f64)>().enumerate() {
        samples.push(rec.map_err(|e| Error::Format(format!("{} row {}: {e}", path.display(), i + 1)))?);
    }
    interpolate_spo2(&samples)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameMeta {
    pub width: usize,
    pub height: usize,
    pub fps: f64,
    pub count: usize,
    pub dtype: String,
    pub layout: String,
}

pub fn frame_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("frame_{index:06}.raw"))
}

pub fn write_frame_dump(dir: &Path, frames: &FrameSequence) -> Result<FrameMeta> {
    let f0 = frames.frames.first().ok_or_else(|| Error::Data("no frames to write".into()))?;
    let meta = FrameMeta { width: f0.width, height: f0.height, fps: frames.fps, count: frames.frames.len(), dtype: DTYPE_F32LE.into(), layout: "hwc".into() };
    fs::create_dir_all(dir)?;
    write_json(&dir.join("meta.json"), &meta)?;
    for (i, f) in frames.frames.iter().enumerate() {
        let bytes: Vec<u8> = f.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(frame_path(dir, i), bytes)?;
    }
    Ok(meta)
}

pub fn read_frame_meta(dir: &Path) -> Result<FrameMeta> {
    let meta: FrameMeta = read_json(&dir.join("meta.json"))?;
    if meta.dtype != DTYPE_F32LE || meta.layout != "hwc" || meta.width == 0 || meta.height == 0 || !(meta.fps > 0.0) {
        return Err(Error::Format(format!("unsupported frame dump {meta:?}")));
    }
    Ok(meta)
}

/// Loads frame `index`; missing, short or non-finite frames are input errors naming the index.
pub fn read_frame(dir: &Path, meta: &FrameMeta, index: usize) -> Result<Frame> {
    let bad = |message: String| Error::Input { index, message };
    let bytes = fs::read(frame_path(dir, index)).map_err(|e| bad(e.to_string()))?;
    let expected = 4 * 3 * meta.width * meta.height;
    if bytes.len() != expected {
        return Err(bad(format!("{} bytes, expected {expected}", bytes.len())));
    }
    let data: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(bad("non-finite pixel value".into()));
    }
    Ok(Frame { width: meta.width, height: meta.height, data })
}

pub fn read_frame_dump(dir: &Path) -> Result<FrameSequence> {
    let meta = read_frame_meta(dir)?;
    let frames = (0..meta.count).map(|i| read_frame(dir, &meta, i)).collect::<Result<Vec<_>>>()?;
    FrameSequence::new(frames, meta.fps)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(fs::write(path, s)?)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub const CHECKPOINT_CONFIG: &str = "model_config.json";
pub const CHECKPOINT_MANIFEST: &str = "params.json";
pub const CHECKPOINT_BLOB: &str = "params.bin";

/// Writes `model_config.json`, `params.json` and `params.bin` into `dir`.
pub fn save_checkpoint(dir: &Path, model: &mut SpO2Net) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (blob, manifest) = encode_params(&state_dict(model));
    write_json(&dir.join(CHECKPOINT_CONFIG), model.config())?;
    write_json(&dir.join(CHECKPOINT_MANIFEST), &manifest)?;
    Ok(fs::write(dir.join(CHECKPOINT_BLOB), blob)?)
}

pub fn load_checkpoint(dir: &Path) -> Result<SpO2Net> {
    let cfg: ModelConfig = read_json(&dir.join(CHECKPOINT_CONFIG))?;
    let manifest: ParamManifest = read_json(&dir.join(CHECKPOINT_MANIFEST))?;
    let blob = fs::read(dir.join(CHECKPOINT_BLOB))?;
    let mut model = build_model(&cfg)?;
    load_state_dict(&mut model, &decode_params(&blob, &manifest)?)?;
    Ok(model)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub subject_id: String,
    pub stm: String,
    pub spo2_csv: String,
}

/// `manifest.json` of a dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub subjects: Vec<DatasetEntry>,
    #[serde(default)]
    pub params: Option<SynthParams>,
}

pub const DATASET_MANIFEST: &str = "manifest.json";

/// Writes `<id>.stm` and `<id>_spo2.csv` into `dir`.
pub fn write_subject(dir: &Path, record: &SubjectRecord) -> Result<DatasetEntry> {
    let entry = DatasetEntry { subject_id: record.subject_id.clone(), stm: format!("{}.stm", record.subject_id), spo2_csv: format!("{}_spo2.csv", record.subject_id) };
    write_stm(&dir.join(&entry.stm), &record.map)?;
    write_spo2_csv(&dir.join(&entry.spo2_csv), &record.spo2)?;
    Ok(entry)
}

/// Loads every subject of a dataset directory, from its manifest when present,
/// otherwise from each `<id>.stm` with a matching `<id>_spo2.csv`.
pub fn load_dataset(dir: &Path) -> Result<Vec<SubjectRecord>> {
    let manifest_path = dir.join(DATASET_MANIFEST);
    let manifest = if manifest_path.exists() {
        read_json::<DatasetManifest>(&manifest_path)?
    } else {
        let mut subjects = Vec::new();
        for e in fs::read_dir(dir)? {
            let name = e?.file_name().to_string_lossy().into_owned();
            if let Some(id) = name.strip_suffix(".stm") {
                subjects.push(DatasetEntry { subject_id: id.into(), stm: name.clone(), spo2_csv: format!("{id}_spo2.csv") });
            }
        }
        subjects.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
        DatasetManifest { subjects, params: None }
    };
    if manifest.subjects.is_empty() {
        return Err(Error::Data(format!("{} holds no subjects", dir.display())));
    }
    manifest
        .subjects
        .iter()
        .map(|e| {
            let map = read_stm(&dir.join(&e.stm))?;
            if map.subject_id != e.subject_id {
                return Err(Error::Identity(format!("{} holds subject {}, manifest says {}", e.stm, map.subject_id, e.subject_id)));
            }
            let spo2 = read_spo2_csv(&dir.join(&e.spo2_csv))?;
            let meta = manifest.params.clone().unwrap_or_else(|| SynthParams { duration_s: map.duration_s(), fps: map.fps, n_rois: map.n_rois(), ..Default::default() });
            Ok(SubjectRecord { subject_id: e.subject_id.clone(), map, spo2, meta })
        })
        .collect()
}
