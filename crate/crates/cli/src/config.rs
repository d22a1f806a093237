//! Run configuration: one flat TOML table, every key typed, unknown keys
//! rejected.

use std::path::{Path, PathBuf};

use dsco_core::diffusion::{DenoiserConfig, ScheduleKind, TrainConfig};
use dsco_core::evalbench::{ClassifierConfig, MixtureSpec};
use dsco_core::nn::Activation;
use dsco_core::nopt::{AlignMode, NOptConfig};
use dsco_core::projector::{ProjectorConfig, Shape3};
use dsco_core::{DscoError, Result};
use serde::{Deserialize, Serialize};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "DSCO_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: AlignMode,
    /// Empty means `$DSCO_OUTPUT_ROOT`, else `dsco-runs`.
    pub output_dir: String,
    pub seed: u64,

    pub n_classes: usize,
    pub modes_per_class: usize,
    pub n_per_class: usize,
    pub dim: usize,
    pub mode_std: f64,
    pub spread: f64,
    pub outlier_frac: f64,
    pub dataset_seed: u64,
    pub test_per_class: usize,

    pub schedule: ScheduleKind,
    pub steps: usize,
    pub denoiser_hidden: usize,
    pub denoiser_depth: usize,
    pub denoiser_time_dim: usize,
    pub train_iterations: usize,
    pub train_batch: usize,
    pub train_lr: f64,
    pub mse_threshold: f64,

    pub projector_seed: u64,
    pub projector_widths: Vec<usize>,
    pub projector_groups: usize,

    pub lambda_align: f64,
    pub lambda_stats: f64,
    pub lambda_maxoc: f64,
    pub inner_steps: usize,
    pub inner_lr: f64,
    pub inner_momentum: f64,
    pub min_diff_ratio: usize,
    pub n_temp: usize,
    pub step_stride: usize,

    /// Designated items per class.
    pub ipc: usize,
    pub dope: bool,
    /// IPC points at which the marginal recognition gain is measured.
    pub dope_schedule: Vec<usize>,

    pub classifier_hidden: usize,
    pub classifier_depth: usize,
    pub classifier_epochs: usize,
    pub classifier_batch: usize,
    pub classifier_lr: f64,
    pub temperature: f64,
    pub eval_seeds: usize,
    pub n_groups: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mix = MixtureSpec::hard();
        let den = DenoiserConfig::default();
        let train = TrainConfig::default();
        let nopt = NOptConfig::default();
        let cls = ClassifierConfig::default();
        Self {
            mode: AlignMode::DataAccessible,
            output_dir: String::new(),
            seed: 0,
            n_classes: mix.n_classes,
            modes_per_class: mix.modes_per_class,
            n_per_class: mix.n_per_class,
            dim: mix.dim,
            mode_std: mix.mode_std,
            spread: mix.spread,
            outlier_frac: 0.05,
            dataset_seed: 0,
            test_per_class: 500,
            schedule: ScheduleKind::Linear,
            steps: 50,
            denoiser_hidden: den.hidden,
            denoiser_depth: den.depth,
            denoiser_time_dim: den.time_dim,
            train_iterations: train.iterations,
            train_batch: train.batch_size,
            train_lr: train.lr,
            mse_threshold: train.mse_threshold,
            projector_seed: 0,
            projector_widths: vec![32, 64, 128, 256],
            projector_groups: 16,
            lambda_align: nopt.lambda_align,
            lambda_stats: nopt.lambda_stats,
            lambda_maxoc: nopt.lambda_maxoc,
            inner_steps: nopt.inner_steps,
            inner_lr: nopt.inner_lr,
            inner_momentum: nopt.inner_momentum,
            min_diff_ratio: nopt.min_diff_ratio,
            n_temp: nopt.n_temp,
            step_stride: nopt.step_stride,
            ipc: 50,
            dope: true,
            dope_schedule: vec![10, 50, 100, 150],
            classifier_hidden: cls.hidden,
            classifier_depth: cls.depth,
            classifier_epochs: cls.epochs,
            classifier_batch: cls.batch_size,
            classifier_lr: cls.lr,
            temperature: 1.0,
            eval_seeds: 5,
            n_groups: 5,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> DscoError {
    DscoError::Config(e.to_string())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(config_err)
    }

    /// Reads `path` (or the defaults) and applies `key=value` overrides,
    /// each value parsed as a TOML literal, with bare words taken as strings.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| DscoError::Config(format!("cannot read {}: {e}", p.display())))?;
                toml::from_str(&text).map_err(config_err)?
            }
            None => toml::Table::new(),
        };
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| DscoError::Config(format!("override `{item}` is not key=value")))?;
            let value = parse_value(raw.trim());
            table.insert(key.trim().to_string(), value);
        }
        let cfg: Self = table.try_into().map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.nopt().validate()?;
        self.projector().validate()?;
        let checks = [
            (self.n_classes >= 2, "n_classes must be >= 2"),
            (self.steps >= 1, "steps must be >= 1"),
            (self.ipc >= 1, "ipc must be >= 1"),
            (self.temperature > 0.0, "temperature must be positive"),
            (self.eval_seeds >= 1, "eval_seeds must be >= 1"),
            (self.n_groups >= 1, "n_groups must be >= 1"),
            (self.test_per_class >= 1, "test_per_class must be >= 1"),
            (
                self.dope_schedule.windows(2).all(|w| w[0] < w[1]),
                "dope_schedule must be strictly increasing",
            ),
            (
                !self.dope || self.dope_schedule.len() >= 2,
                "doping needs at least two schedule points",
            ),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(DscoError::Config((*msg).into())),
            None => Ok(()),
        }
    }

    pub fn output_root(&self) -> PathBuf {
        if !self.output_dir.is_empty() {
            return PathBuf::from(&self.output_dir);
        }
        std::env::var_os(OUTPUT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("dsco-runs"))
    }

    pub fn mixture(&self) -> MixtureSpec {
        MixtureSpec {
            n_classes: self.n_classes,
            modes_per_class: self.modes_per_class,
            n_per_class: self.n_per_class,
            dim: self.dim,
            seed: self.dataset_seed,
            outlier_frac: self.outlier_frac,
            mode_std: self.mode_std,
            spread: self.spread,
        }
    }

    pub fn denoiser(&self) -> DenoiserConfig {
        DenoiserConfig {
            hidden: self.denoiser_hidden,
            depth: self.denoiser_depth,
            time_dim: self.denoiser_time_dim,
            activation: Activation::Silu,
        }
    }

    pub fn training(&self) -> TrainConfig {
        TrainConfig {
            iterations: self.train_iterations,
            batch_size: self.train_batch,
            lr: self.train_lr,
            seed: self.seed,
            mse_threshold: self.mse_threshold,
            ..TrainConfig::default()
        }
    }

    pub fn projector(&self) -> ProjectorConfig {
        ProjectorConfig {
            input: Shape3::for_dim(self.dim),
            widths: self.projector_widths.clone(),
            groups: self.projector_groups,
        }
    }

    pub fn nopt(&self) -> NOptConfig {
        NOptConfig {
            lambda_align: self.lambda_align,
            lambda_stats: self.lambda_stats,
            lambda_maxoc: self.lambda_maxoc,
            inner_steps: self.inner_steps,
            inner_lr: self.inner_lr,
            inner_momentum: self.inner_momentum,
            min_diff_ratio: self.min_diff_ratio,
            n_temp: self.n_temp,
            step_stride: self.step_stride,
            mode: self.mode,
        }
    }

    pub fn classifier(&self, seed: u64) -> ClassifierConfig {
        ClassifierConfig {
            hidden: self.classifier_hidden,
            depth: self.classifier_depth,
            epochs: self.classifier_epochs,
            batch_size: self.classifier_batch,
            lr: self.classifier_lr,
            seed,
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
