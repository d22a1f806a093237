//! Noise optimization: per-step alignment losses, the inner momentum-SGD
//! loop over noise tensors, and the full optimized denoising procedure.

mod losses;
mod optimize;
mod reference;

pub use losses::{
    absn2, absn2_grad, loss_align_da, loss_align_df, loss_channel_align, loss_maxoc, loss_reality,
    loss_stats, LossGrad,
};
pub use optimize::{
    nopt_objective, optimize_noise_step, surrogate_pooled, AlignTarget, InnerRecord, LossBreakdown,
    NoiseBatch,
};
pub use reference::{build_diffused_reference, repeat_count, DiffusedReference};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::diffusion::{
    denoise_step, predict_stats, sample_ddpm_trajectory, DenoiserModel, NoiseSchedule, StepStats,
};
use crate::error::{DscoError, Result};
use crate::projector::{channel_stats, ChannelStats, RandomProjector, Shape3};
use crate::rng::{self, derive_seed, streams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignMode {
    DataAccessible,
    DataFree,
}

impl std::str::FromStr for AlignMode {
    type Err = DscoError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "data_accessible" => Ok(Self::DataAccessible),
            "data_free" => Ok(Self::DataFree),
            other => Err(DscoError::Config(format!("unknown mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for AlignMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::DataAccessible => "data_accessible",
            Self::DataFree => "data_free",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NOptConfig {
    pub lambda_align: f64,
    pub lambda_stats: f64,
    pub lambda_maxoc: f64,
    pub inner_steps: usize,
    pub inner_lr: f64,
    pub inner_momentum: f64,
    pub min_diff_ratio: usize,
    pub n_temp: usize,
    pub step_stride: usize,
    pub mode: AlignMode,
}

impl Default for NOptConfig {
    fn default() -> Self {
        Self {
            lambda_align: 5e-4,
            lambda_stats: 1e-3,
            lambda_maxoc: 10.0,
            inner_steps: 200,
            inner_lr: 0.1,
            inner_momentum: 0.9,
            min_diff_ratio: 5,
            n_temp: 200,
            step_stride: 1,
            mode: AlignMode::DataAccessible,
        }
    }
}

impl NOptConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.lambda_align, self.lambda_stats, self.lambda_maxoc];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(DscoError::Config(
                "loss weights must be finite and >= 0".into(),
            ));
        }
        if !(self.inner_lr.is_finite() && self.inner_lr >= 0.0) {
            return Err(DscoError::Config("inner_lr must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.inner_momentum) {
            return Err(DscoError::Config(
                "inner_momentum must lie in [0, 1)".into(),
            ));
        }
        if self.min_diff_ratio < 5 {
            return Err(DscoError::Config("min_diff_ratio must be >= 5".into()));
        }
        if self.step_stride == 0 {
            return Err(DscoError::Config("step_stride must be >= 1".into()));
        }
        if self.n_temp < 2 {
            return Err(DscoError::Config("n_temp must be >= 2".into()));
        }
        Ok(())
    }
}

/// One CSV row of the per-run diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticRow {
    pub class: usize,
    pub t: usize,
    pub inner_iter: usize,
    pub l_real: f64,
    pub l_align: f64,
    pub l_total: f64,
}

pub const DIAGNOSTICS_HEADER: &str = "class,t,inner_iter,L_real,L_align,L_total";

impl DiagnosticRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{:e},{:e},{:e}",
            self.class, self.t, self.inner_iter, self.l_real, self.l_align, self.l_total
        )
    }
}

/// Everything that happened at one optimized denoising step.
pub struct StepReport<'a> {
    pub t: usize,
    pub stats: &'a StepStats,
    pub target: &'a AlignTarget,
    pub eps_before: &'a Array2<f64>,
    pub eps_after: &'a Array2<f64>,
    pub records: &'a [InnerRecord],
}

#[derive(Debug, Clone)]
pub struct Synthesis {
    pub samples: Array2<f64>,
    pub diagnostics: Vec<DiagnosticRow>,
}

/// Template feature statistics for every step of one DDPM rollout.
pub fn template_stats(
    model: &DenoiserModel,
    schedule: &NoiseSchedule,
    projector: &RandomProjector,
    class_id: usize,
    n_temp: usize,
    seed: u64,
) -> Result<Vec<ChannelStats>> {
    let traj = sample_ddpm_trajectory(model, n_temp, class_id, schedule, seed)?;
    let j = projector.output_shape().c;
    traj[..schedule.steps()]
        .iter()
        .map(|zt| channel_stats(&projector.project_pooled(zt)?, Shape3::new(j, 1, 1)))
        .collect()
}

pub struct SynthesisRequest<'a> {
    pub model: &'a DenoiserModel,
    pub schedule: &'a NoiseSchedule,
    pub projector: &'a RandomProjector,
    pub class_id: usize,
    pub n_surrogate: usize,
    pub cfg: &'a NOptConfig,
    /// Target rows of this class; read only in data-accessible mode.
    pub targets: Option<&'a Array2<f64>>,
    pub seed: u64,
}

pub fn nopt_synthesize(req: &SynthesisRequest<'_>) -> Result<Synthesis> {
    nopt_synthesize_observed(req, |_| {})
}

/// Runs the optimized denoising loop, calling `observer` after every
/// optimized step.
///
/// `z_T` and each step's initial noise come from the same stream as
/// [`crate::diffusion::sample_ddpm`]; reference noise and templates use
/// separate streams, so zero inner steps reproduces plain DDPM exactly.
pub fn nopt_synthesize_observed(
    req: &SynthesisRequest<'_>,
    mut observer: impl FnMut(&StepReport<'_>),
) -> Result<Synthesis> {
    let cfg = req.cfg;
    cfg.validate()?;
    if req.n_surrogate == 0 {
        return Err(DscoError::Argument("surrogate count must be >= 1".into()));
    }
    let d = req.model.input_dim();
    if req.projector.input_shape().len() != d {
        return Err(DscoError::Shape(format!(
            "projector input {:?} does not hold {d} latent values",
            req.projector.input_shape()
        )));
    }
    let optimizing = cfg.inner_steps > 0;
    let steps = req.schedule.steps();
    if cfg.step_stride != 1 {
        log::warn!(
            "step_stride = {} thins the optimized steps",
            cfg.step_stride
        );
    }

    let targets = match cfg.mode {
        AlignMode::DataAccessible if optimizing => Some(req.targets.ok_or_else(|| {
            DscoError::Argument("data-accessible mode requires target samples".into())
        })?),
        _ => None,
    };
    if let Some(t) = targets {
        if t.ncols() != d {
            return Err(DscoError::Shape(format!(
                "targets have {} columns, latent has {d}",
                t.ncols()
            )));
        }
    }
    let templates = match cfg.mode {
        AlignMode::DataFree if optimizing => {
            if req.n_surrogate < 2 {
                return Err(DscoError::Argument(
                    "data-free alignment needs at least 2 surrogates".into(),
                ));
            }
            Some(template_stats(
                req.model,
                req.schedule,
                req.projector,
                req.class_id,
                cfg.n_temp,
                derive_seed(req.seed, streams::TEMPLATES),
            )?)
        }
        _ => None,
    };

    let mut sampler = rng::stream(req.seed, streams::SAMPLER);
    let mut ref_rng = rng::stream(req.seed, streams::REFERENCE);
    let mut diagnostics = Vec::new();
    let mut z = rng::gaussian_matrix(&mut sampler, req.n_surrogate, d);
    for t in (0..steps).rev() {
        let stats = predict_stats(req.model, &z, t, req.class_id, req.schedule)?;
        let mut eps = rng::gaussian_matrix(&mut sampler, req.n_surrogate, d);
        if optimizing && (steps - 1 - t) % cfg.step_stride == 0 {
            let target = match (&templates, targets) {
                (Some(tpl), _) => AlignTarget::Templates(tpl[t].clone()),
                (None, Some(tg)) => AlignTarget::Diffused(build_diffused_reference(
                    tg,
                    t,
                    req.n_surrogate,
                    cfg.min_diff_ratio,
                    req.schedule,
                    req.projector,
                    &mut ref_rng,
                )?),
                (None, None) => unreachable!("alignment target resolved above"),
            };
            let (batch, records) = optimize_noise_step(
                NoiseBatch::new(eps.clone()),
                &stats,
                &target,
                req.projector,
                cfg,
                t,
            )?;
            observer(&StepReport {
                t,
                stats: &stats,
                target: &target,
                eps_before: &eps,
                eps_after: &batch.eps,
                records: &records,
            });
            diagnostics.extend(records.iter().map(|r| DiagnosticRow {
                class: req.class_id,
                t,
                inner_iter: r.inner_iter,
                l_real: r.loss.real,
                l_align: r.loss.align,
                l_total: r.loss.total(),
            }));
            eps = batch.eps;
        }
        z = denoise_step(&stats, &eps)?;
    }
    Ok(Synthesis {
        samples: z,
        diagnostics,
    })
}
