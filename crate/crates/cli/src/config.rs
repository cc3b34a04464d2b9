//! The run configuration persisted beside every command's outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spo2dcac::harness::{BaselineMethod, TrainOptions};
use spo2dcac::models::ModelConfig;
use spo2dcac::synth::SynthParams;

use crate::error::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: String,
    pub model: ModelConfig,
    pub synth: SynthParams,
    pub train: TrainOptions,
    pub harness: HarnessOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessOptions {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub fold: usize,
    pub k: usize,
    /// Seeds the subject shuffle of the fold plan.
    pub split_seed: u64,
    pub subjects: Option<usize>,
    pub frames: Option<PathBuf>,
    pub rect: Option<[usize; 4]>,
    pub model: Option<PathBuf>,
    pub trace_csv: Option<PathBuf>,
    pub method: Option<BaselineMethod>,
    pub roi_mask: Option<Vec<usize>>,
    pub alphas: Vec<f64>,
    pub seeds: usize,
}

impl Default for HarnessOptions {
    fn default() -> Self {
        Self {
            data: None,
            out: None,
            fold: 0,
            k: 5,
            split_seed: 0,
            subjects: None,
            frames: None,
            rect: None,
            model: None,
            trace_csv: None,
            method: None,
            roi_mask: None,
            alphas: vec![0.0, 0.01, 0.05, 0.1, 0.5, 1.0],
            seeds: 3,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
            }
        }
    }
}
