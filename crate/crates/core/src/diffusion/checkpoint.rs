use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DenoiserConfig, DenoiserModel, NoiseSchedule, ScheduleKind};
use crate::error::{DscoError, Result};
use crate::tensor::TensorBlock;

const KIND: &str = "denoiser";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    kind: String,
    schedule: ScheduleKind,
    steps: usize,
    seed: u64,
    input_dim: usize,
    n_classes: usize,
    config: DenoiserConfig,
    layers: Vec<(String, Vec<usize>)>,
}

/// A trained denoiser with the schedule it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: DenoiserModel,
    pub schedule: NoiseSchedule,
    pub seed: u64,
}

impl Checkpoint {
    /// Parameters are stored as `f32`; a model straight out of
    /// [`super::train_denoiser`] is already rounded, so the round trip is exact.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let manifest = Manifest {
            kind: KIND.into(),
            schedule: self.schedule.kind(),
            steps: self.schedule.steps(),
            seed: self.seed,
            input_dim: self.model.input_dim(),
            n_classes: self.model.n_classes(),
            config: self.model.config().clone(),
            layers: self.model.layer_shapes(),
        };
        let flat: Vec<f32> = self.model.flat_params().iter().map(|&v| v as f32).collect();
        let block = TensorBlock::new(vec![flat.len()], flat)?;
        let json =
            serde_json::to_string(&manifest).map_err(|e| DscoError::Format(e.to_string()))?;
        block.save(path, &json)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (block, json) = TensorBlock::load(path)?;
        let m: Manifest =
            serde_json::from_str(&json).map_err(|e| DscoError::Format(e.to_string()))?;
        if m.kind != KIND {
            return Err(DscoError::Format(format!(
                "expected a {KIND} checkpoint, found {}",
                m.kind
            )));
        }
        let flat: Vec<f64> = block.data().iter().map(|&v| f64::from(v)).collect();
        let model = DenoiserModel::from_flat(m.config, m.input_dim, m.n_classes, &flat)?;
        if model.layer_shapes() != m.layers {
            return Err(DscoError::Format(
                "layer shapes disagree with the manifest".into(),
            ));
        }
        Ok(Self {
            model,
            schedule: NoiseSchedule::new(m.steps, m.schedule)?,
            seed: m.seed,
        })
    }
}
