//! Desk-scale DDPM stack: schedule, forward diffusion, posterior step
//! statistics, the sampling step, and the toy denoiser.

mod checkpoint;
mod denoiser;
mod schedule;

pub use checkpoint::Checkpoint;
pub use denoiser::{
    holdout_mse, row_mean, train_denoiser, DenoiserConfig, DenoiserModel, LabeledSet, TrainConfig,
    TrainReport,
};
pub use schedule::{NoiseSchedule, ScheduleKind};

use ndarray::{Array, Array2, Dimension};

use crate::error::{DscoError, Result};
use crate::rng::{self, streams};

/// `sqrt(alpha_bar_t) * z0 + sqrt(1 - alpha_bar_t) * eps`.
pub fn diffuse<D: Dimension>(
    z0: &Array<f64, D>,
    t: usize,
    eps: &Array<f64, D>,
    schedule: &NoiseSchedule,
) -> Result<Array<f64, D>> {
    if z0.shape() != eps.shape() {
        return Err(DscoError::Shape(format!(
            "diffuse: z0 {:?} vs eps {:?}",
            z0.shape(),
            eps.shape()
        )));
    }
    if t > schedule.steps() {
        return Err(DscoError::Argument(format!(
            "step {t} beyond schedule length {}",
            schedule.steps()
        )));
    }
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let mut out = z0.clone();
    out.zip_mut_with(eps, |z, &e| *z = a * *z + b * e);
    Ok(out)
}

/// Mean and standard deviation of `z_t` for a batch of `z_{t+1}` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub mu: Array2<f64>,
    pub sigma: f64,
}

/// Maps an eps-prediction for `z_{t+1}` to the DDPM posterior mean of `z_t`.
pub fn posterior_mean(
    z_next: &Array2<f64>,
    eps_hat: &Array2<f64>,
    t: usize,
    schedule: &NoiseSchedule,
) -> Array2<f64> {
    let ab_next = schedule.alpha_bar(t + 1);
    let beta = schedule.beta(t + 1);
    let alpha = 1.0 - beta;
    let coef = beta / (1.0 - ab_next).sqrt();
    let scale = 1.0 / alpha.sqrt();
    let mut mu = z_next.clone();
    mu.zip_mut_with(eps_hat, |z, &e| *z = scale * (*z - coef * e));
    mu
}

/// Statistics of step `t` (`0 <= t < T`) from the model's prediction at
/// `z_{t+1}`; sigma comes from the schedule.
pub fn predict_stats(
    model: &DenoiserModel,
    z_next: &Array2<f64>,
    t: usize,
    class_id: usize,
    schedule: &NoiseSchedule,
) -> Result<StepStats> {
    if t >= schedule.steps() {
        return Err(DscoError::Argument(format!(
            "step {t} has no successor in a {}-step schedule",
            schedule.steps()
        )));
    }
    let n = z_next.nrows();
    let eps_hat = model.predict_eps(z_next, &vec![t + 1; n], &vec![class_id; n])?;
    if eps_hat.iter().any(|v| !v.is_finite()) {
        return Err(DscoError::Numerical {
            step: t,
            detail: "denoiser produced a non-finite eps prediction".into(),
        });
    }
    Ok(StepStats {
        mu: posterior_mean(z_next, &eps_hat, t, schedule),
        sigma: schedule.sigma(t),
    })
}

/// `mu + sigma * eps`.
pub fn denoise_step(stats: &StepStats, eps: &Array2<f64>) -> Result<Array2<f64>> {
    if stats.mu.shape() != eps.shape() {
        return Err(DscoError::Shape(format!(
            "denoise_step: mu {:?} vs eps {:?}",
            stats.mu.shape(),
            eps.shape()
        )));
    }
    let mut out = stats.mu.clone();
    let s = stats.sigma;
    out.zip_mut_with(eps, |m, &e| *m += s * e);
    Ok(out)
}

/// Plain DDPM ancestral sampling of `n` rows for one class.
///
/// `z_T` and every step's eps come from the sampler stream of `seed`, in
/// that order; the noise-optimization loop consumes the same stream.
pub fn sample_ddpm(
    model: &DenoiserModel,
    n: usize,
    class_id: usize,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<Array2<f64>> {
    Ok(sample_ddpm_trajectory(model, n, class_id, schedule, seed)?.swap_remove(0))
}

/// Like [`sample_ddpm`] but returns every intermediate `z_t`, indexed by
/// `t = 0..=T` (entry `T` is the initial Gaussian draw).
pub fn sample_ddpm_trajectory(
    model: &DenoiserModel,
    n: usize,
    class_id: usize,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<Vec<Array2<f64>>> {
    if n == 0 {
        return Err(DscoError::Argument("sample count must be >= 1".into()));
    }
    let d = model.input_dim();
    let steps = schedule.steps();
    let mut rng = rng::stream(seed, streams::SAMPLER);
    let mut traj = vec![Array2::zeros((0, d)); steps + 1];
    let mut z = rng::gaussian_matrix(&mut rng, n, d);
    for t in (0..steps).rev() {
        let stats = predict_stats(model, &z, t, class_id, schedule)?;
        let eps = rng::gaussian_matrix(&mut rng, n, d);
        let next = denoise_step(&stats, &eps)?;
        traj[t + 1] = std::mem::replace(&mut z, next);
    }
    traj[0] = z;
    Ok(traj)
}
