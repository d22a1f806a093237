use ndarray::Array2;
use rayon::prelude::*;

use super::losses::{loss_align_da, loss_align_df, loss_reality, LossGrad};
use super::reference::DiffusedReference;
use super::NOptConfig;
use crate::diffusion::{denoise_step, StepStats};
use crate::error::{DscoError, Result};
use crate::projector::{gap_pool, ChannelStats, ProjectionTrace, RandomProjector};

/// Noise rows being optimized plus their momentum buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBatch {
    pub eps: Array2<f64>,
    pub velocity: Array2<f64>,
}

impl NoiseBatch {
    pub fn new(eps: Array2<f64>) -> Self {
        let velocity = Array2::zeros(eps.raw_dim());
        Self { eps, velocity }
    }
}

/// What the surrogate features are aligned to at one step.
#[derive(Debug, Clone)]
pub enum AlignTarget {
    /// Data-accessible: diffused target features.
    Diffused(DiffusedReference),
    /// Data-free: pooled template feature statistics.
    Templates(ChannelStats),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub real: f64,
    pub align: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.real + self.align
    }
}

/// Loss record for one inner iteration; iteration `inner_steps` is the
/// evaluation after the last update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerRecord {
    pub inner_iter: usize,
    pub loss: LossBreakdown,
}

/// Pooled features of `mu + sigma * eps` together with the traces needed to
/// backpropagate into the noise.
pub fn surrogate_pooled(
    stats: &StepStats,
    eps: &Array2<f64>,
    projector: &RandomProjector,
) -> Result<(Array2<f64>, Vec<ProjectionTrace>)> {
    let z = denoise_step(stats, eps)?;
    let rows: Vec<Vec<f64>> = z.rows().into_iter().map(|r| r.to_vec()).collect();
    let traces = rows
        .par_iter()
        .map(|r| projector.trace(r))
        .collect::<Result<Vec<_>>>()?;
    let out = projector.output_shape();
    let mut pooled = Array2::zeros((z.nrows(), out.c));
    for (i, tr) in traces.iter().enumerate() {
        pooled.row_mut(i).assign(&gap_pool(tr.output(), out)?);
    }
    Ok((pooled, traces))
}

fn align_loss(pooled: &Array2<f64>, target: &AlignTarget, cfg: &NOptConfig) -> Result<LossGrad> {
    match target {
        AlignTarget::Diffused(reference) => loss_align_da(pooled, reference, cfg.lambda_align),
        AlignTarget::Templates(stats) => {
            loss_align_df(pooled, stats, cfg.lambda_stats, cfg.lambda_maxoc)
        }
    }
}

/// Total noise-optimization loss and its gradient with respect to the noise.
pub fn nopt_objective(
    eps: &Array2<f64>,
    stats: &StepStats,
    target: &AlignTarget,
    projector: &RandomProjector,
    cfg: &NOptConfig,
) -> Result<(LossBreakdown, Array2<f64>)> {
    let real = loss_reality(eps);
    let (pooled, traces) = surrogate_pooled(stats, eps, projector)?;
    let align = align_loss(&pooled, target, cfg)?;
    let mut grad = real.grad;
    if stats.sigma != 0.0 && align.grad.iter().any(|&g| g != 0.0) {
        let out = projector.output_shape();
        let area = out.spatial() as f64;
        let dz = traces
            .par_iter()
            .enumerate()
            .map(|(s, tr)| {
                let upstream: Vec<f64> = align
                    .grad
                    .row(s)
                    .iter()
                    .flat_map(|&gj| std::iter::repeat_n(gj / area, out.spatial()))
                    .collect();
                projector.backward_from(tr, &upstream)
            })
            .collect::<Result<Vec<_>>>()?;
        for (s, row) in dz.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                grad[[s, k]] += stats.sigma * v;
            }
        }
    }
    Ok((
        LossBreakdown {
            real: real.value,
            align: align.value,
        },
        grad,
    ))
}

/// Momentum SGD on the noise rows with `(mu, sigma)` held fixed.
///
/// `step` is only used to label errors.
pub fn optimize_noise_step(
    mut batch: NoiseBatch,
    stats: &StepStats,
    target: &AlignTarget,
    projector: &RandomProjector,
    cfg: &NOptConfig,
    step: usize,
) -> Result<(NoiseBatch, Vec<InnerRecord>)> {
    if batch.eps.shape() != stats.mu.shape() {
        return Err(DscoError::Shape(format!(
            "noise {:?} vs mean {:?}",
            batch.eps.shape(),
            stats.mu.shape()
        )));
    }
    let mut records = Vec::with_capacity(cfg.inner_steps + 1);
    if cfg.inner_steps == 0 {
        return Ok((batch, records));
    }
    for it in 0..=cfg.inner_steps {
        let (loss, grad) = nopt_objective(&batch.eps, stats, target, projector, cfg)?;
        if !loss.total().is_finite() {
            return Err(DscoError::Numerical {
                step,
                detail: format!(
                    "non-finite loss at inner iteration {it} (real {}, align {})",
                    loss.real, loss.align
                ),
            });
        }
        records.push(InnerRecord {
            inner_iter: it,
            loss,
        });
        if it == cfg.inner_steps {
            break;
        }
        let m = cfg.inner_momentum;
        batch.velocity.zip_mut_with(&grad, |v, &g| *v = m * *v + g);
        let lr = cfg.inner_lr;
        batch
            .eps
            .zip_mut_with(&batch.velocity, |e, &v| *e -= lr * v);
    }
    Ok((batch, records))
}
