//! Parameter blobs: little-endian `f32` values per tensor plus a JSON manifest.

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset of the tensor's first value inside the blob.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamManifest {
    pub dtype: String,
    pub tensors: Vec<ManifestEntry>,
}

pub fn encode_params(state: &[(String, Tensor)]) -> (Vec<u8>, ParamManifest) {
    let mut blob = Vec::new();
    let mut tensors = Vec::with_capacity(state.len());
    for (name, t) in state {
        tensors.push(ManifestEntry { name: name.clone(), shape: t.shape().to_vec(), offset: blob.len() });
        for &v in t.data() {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    (blob, ParamManifest { dtype: "f32le".into(), tensors })
}

pub fn decode_params(blob: &[u8], manifest: &ParamManifest) -> Result<Vec<(String, Tensor)>> {
    if manifest.dtype != "f32le" {
        return Err(Error::Format(format!("unsupported dtype {}", manifest.dtype)));
    }
    let mut out = Vec::with_capacity(manifest.tensors.len());
    for e in &manifest.tensors {
        let n: usize = e.shape.iter().product();
        let end = e.offset + 4 * n;
        let bytes = blob
            .get(e.offset..end)
            .ok_or_else(|| Error::Format(format!("tensor {} overruns the blob ({} > {})", e.name, end, blob.len())))?;
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
        out.push((e.name.clone(), Tensor::from_vec(&e.shape, data)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_decode_exact_for_f32_values() {
        let state = vec![
            ("a.weight".to_string(), Tensor::from_vec(&[2, 2], vec![0.5, -1.25, 3.0, 0.0]).unwrap()),
            ("a.bias".to_string(), Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap()),
        ];
        let (blob, manifest) = encode_params(&state);
        assert_eq!(blob.len(), 24);
        assert_eq!(manifest.tensors[1].offset, 16);
        assert_eq!(decode_params(&blob, &manifest).unwrap(), state);
        assert!(decode_params(&blob[..20], &manifest).is_err());
    }
}
