//! Dataset concentration on a self-contained toy diffusion stack.
//!
//! The pipeline trains a small class-conditional denoiser, synthesizes
//! surrogate samples with optimized initial and per-step noise, and
//! optionally dopes the surrogate set with the real samples a student finds
//! most confusing.

pub mod bias_lab;
pub mod diffusion;
pub mod doping;
pub mod error;
pub mod evalbench;
pub mod nn;
pub mod nopt;
pub mod projector;
pub mod rng;
pub mod tensor;

pub use diffusion::{
    DenoiserConfig, DenoiserModel, LabeledSet, NoiseSchedule, ScheduleKind, TrainConfig,
};
pub use doping::{ConcentratedDataset, ConfusionRecord, MarginalGainCurve};
pub use error::{DscoError, Result};
pub use nopt::{AlignMode, NOptConfig};
pub use projector::{ProjectorConfig, RandomProjector, Shape3};
pub use tensor::TensorBlock;
