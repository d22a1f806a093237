//! Small class-conditional noise-prediction network and its trainer.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{diffuse, NoiseSchedule};
use crate::error::{DscoError, Result};
use crate::nn::{Activation, Adam, Dense};
use crate::rng::{self, gaussian, streams, Rng};
use rand::Rng as _;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub hidden: usize,
    /// Number of hidden-to-hidden layers after the conditioned input layer.
    pub depth: usize,
    pub time_dim: usize,
    pub activation: Activation,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            depth: 2,
            time_dim: 16,
            activation: Activation::Silu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub holdout_size: usize,
    /// Held-out eps-MSE that counts as converged.
    pub mse_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 3000,
            batch_size: 256,
            lr: 2e-3,
            seed: 0,
            holdout_size: 2048,
            mse_threshold: 0.3,
        }
    }
}

/// `eps_hat = out(act(hidden(...act(x W_in + temb W_t + class[c] + b)...)))`
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserModel {
    cfg: DenoiserConfig,
    input_dim: usize,
    n_classes: usize,
    input: Dense,
    time: Dense,
    class_embed: Array2<f64>,
    hidden: Vec<Dense>,
    output: Dense,
}

struct Cache {
    pre: Vec<Array2<f64>>,
    post: Vec<Array2<f64>>,
    temb: Array2<f64>,
}

impl DenoiserModel {
    pub fn init(
        cfg: DenoiserConfig,
        input_dim: usize,
        n_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        if input_dim == 0 || n_classes == 0 || cfg.hidden == 0 || cfg.time_dim < 2 {
            return Err(DscoError::Config(
                "denoiser dimensions must be positive".into(),
            ));
        }
        let mut rng = rng::stream(seed, streams::INIT);
        let h = cfg.hidden;
        let input = Dense::init(&mut rng, input_dim, h);
        let time = Dense::init(&mut rng, cfg.time_dim, h);
        let class_embed = Array2::from_shape_simple_fn((n_classes, h), || gaussian(&mut rng) * 0.1);
        let hidden = (0..cfg.depth)
            .map(|_| Dense::init(&mut rng, h, h))
            .collect();
        let mut output = Dense::init(&mut rng, h, input_dim);
        output.w.mapv_inplace(|v| v * 0.1);
        Ok(Self {
            cfg,
            input_dim,
            n_classes,
            input,
            time,
            class_embed,
            hidden,
            output,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.cfg
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Sinusoidal embedding of a diffusion level.
    fn time_embedding(&self, level: usize) -> Array1<f64> {
        let half = self.cfg.time_dim / 2;
        let mut e = Array1::zeros(self.cfg.time_dim);
        for i in 0..half {
            let freq = (-(1000f64).ln() * i as f64 / half as f64).exp();
            let arg = level as f64 * freq;
            e[i] = arg.sin();
            e[half + i] = arg.cos();
        }
        e
    }

    fn check_inputs(&self, z: &Array2<f64>, levels: &[usize], classes: &[usize]) -> Result<()> {
        if z.ncols() != self.input_dim {
            return Err(DscoError::Shape(format!(
                "denoiser expects {} inputs, got {}",
                self.input_dim,
                z.ncols()
            )));
        }
        if levels.len() != z.nrows() || classes.len() != z.nrows() {
            return Err(DscoError::Shape(
                "levels/classes must have one entry per row".into(),
            ));
        }
        if let Some(&c) = classes.iter().find(|&&c| c >= self.n_classes) {
            return Err(DscoError::Argument(format!(
                "class {c} out of range for {} classes",
                self.n_classes
            )));
        }
        Ok(())
    }

    fn forward_cached(
        &self,
        z: &Array2<f64>,
        levels: &[usize],
        classes: &[usize],
    ) -> (Array2<f64>, Cache) {
        let act = self.cfg.activation;
        let n = z.nrows();
        let mut temb = Array2::zeros((n, self.cfg.time_dim));
        for (i, &k) in levels.iter().enumerate() {
            temb.row_mut(i).assign(&self.time_embedding(k));
        }
        let mut pre0 = self.input.forward(z) + self.time.forward(&temb);
        for (i, &c) in classes.iter().enumerate() {
            let mut row = pre0.row_mut(i);
            row += &self.class_embed.row(c);
        }
        let mut pre = vec![pre0];
        let mut post = vec![pre[0].mapv(|v| act.apply(v))];
        for layer in &self.hidden {
            let p = layer.forward(post.last().expect("non-empty"));
            post.push(p.mapv(|v| act.apply(v)));
            pre.push(p);
        }
        let out = self.output.forward(post.last().expect("non-empty"));
        (out, Cache { pre, post, temb })
    }

    /// Predicts the noise for each row of `z` at diffusion level `levels[i]`
    /// (`1..=T`) and class `classes[i]`.
    pub fn predict_eps(
        &self,
        z: &Array2<f64>,
        levels: &[usize],
        classes: &[usize],
    ) -> Result<Array2<f64>> {
        self.check_inputs(z, levels, classes)?;
        Ok(self.forward_cached(z, levels, classes).0)
    }

    /// Mean squared eps error and its parameter gradient.
    fn loss_and_grad(
        &self,
        z: &Array2<f64>,
        levels: &[usize],
        classes: &[usize],
        eps: &Array2<f64>,
    ) -> (f64, DenoiserModel) {
        let act = self.cfg.activation;
        let (out, cache) = self.forward_cached(z, levels, classes);
        let diff = &out - eps;
        let count = diff.len() as f64;
        let loss = diff.mapv(|v| v * v).sum() / count;
        let mut grad = self.zeros_like();
        let mut up = diff * (2.0 / count);
        up = self
            .output
            .backward(cache.post.last().expect("non-empty"), &up, &mut grad.output);
        for (k, layer) in self.hidden.iter().enumerate().rev() {
            let d = &up * &cache.pre[k + 1].mapv(|v| act.derivative(v));
            up = layer.backward(&cache.post[k], &d, &mut grad.hidden[k]);
        }
        let d0 = &up * &cache.pre[0].mapv(|v| act.derivative(v));
        self.input.backward(z, &d0, &mut grad.input);
        self.time.backward(&cache.temb, &d0, &mut grad.time);
        for (i, &c) in classes.iter().enumerate() {
            let mut row = grad.class_embed.row_mut(c);
            row += &d0.row(i);
        }
        (loss, grad)
    }

    fn zeros_like(&self) -> Self {
        Self {
            cfg: self.cfg.clone(),
            input_dim: self.input_dim,
            n_classes: self.n_classes,
            input: self.input.zeros_like(),
            time: self.time.zeros_like(),
            class_embed: Array2::zeros(self.class_embed.raw_dim()),
            hidden: self.hidden.iter().map(Dense::zeros_like).collect(),
            output: self.output.zeros_like(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::new();
        v.extend(self.input.params_mut());
        v.extend(self.time.params_mut());
        v.push(self.class_embed.as_slice_mut().expect("standard layout"));
        for h in &mut self.hidden {
            v.extend(h.params_mut());
        }
        v.extend(self.output.params_mut());
        v
    }

    fn params(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = Vec::new();
        v.extend(self.input.params());
        v.extend(self.time.params());
        v.push(self.class_embed.as_slice().expect("standard layout"));
        for h in &self.hidden {
            v.extend(h.params());
        }
        v.extend(self.output.params());
        v
    }

    /// Named parameter shapes in persistence order.
    pub fn layer_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = vec![
            ("input.w".to_string(), self.input.w.shape().to_vec()),
            ("input.b".to_string(), self.input.b.shape().to_vec()),
            ("time.w".to_string(), self.time.w.shape().to_vec()),
            ("time.b".to_string(), self.time.b.shape().to_vec()),
            ("class_embed".to_string(), self.class_embed.shape().to_vec()),
        ];
        for (k, h) in self.hidden.iter().enumerate() {
            out.push((format!("hidden{k}.w"), h.w.shape().to_vec()));
            out.push((format!("hidden{k}.b"), h.b.shape().to_vec()));
        }
        out.push(("output.w".to_string(), self.output.w.shape().to_vec()));
        out.push(("output.b".to_string(), self.output.b.shape().to_vec()));
        out
    }

    /// All parameters concatenated in [`Self::layer_shapes`] order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.params().into_iter().flatten().copied().collect()
    }

    /// Rebuilds a model from flat parameters produced by [`Self::flat_params`].
    pub fn from_flat(
        cfg: DenoiserConfig,
        input_dim: usize,
        n_classes: usize,
        flat: &[f64],
    ) -> Result<Self> {
        let mut model = Self::init(cfg, input_dim, n_classes, 0)?;
        let total: usize = model.params().iter().map(|p| p.len()).sum();
        if total != flat.len() {
            return Err(DscoError::Shape(format!(
                "checkpoint holds {} parameters, architecture needs {total}",
                flat.len()
            )));
        }
        let mut offset = 0;
        for p in model.params_mut() {
            p.copy_from_slice(&flat[offset..offset + p.len()]);
            offset += p.len();
        }
        if !model.is_finite() {
            return Err(DscoError::Format(
                "checkpoint contains non-finite parameters".into(),
            ));
        }
        Ok(model)
    }

    pub fn is_finite(&self) -> bool {
        self.params()
            .iter()
            .all(|p| p.iter().all(|v| v.is_finite()))
    }

    /// Rounds every parameter to the nearest `f32` so the in-memory model is
    /// exactly what a checkpoint stores.
    fn round_to_f32(&mut self) {
        for p in self.params_mut() {
            for v in p.iter_mut() {
                *v = f64::from(*v as f32);
            }
        }
    }
}

/// A labeled training set: rows of `samples` with `labels[i]` in `0..n_classes`.
#[derive(Debug, Clone)]
pub struct LabeledSet<'a> {
    pub samples: &'a Array2<f64>,
    pub labels: &'a [usize],
    pub n_classes: usize,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub loss_curve: Vec<f64>,
    pub holdout_mse: f64,
}

/// Draws a batch of `(z_k, k, class, eps)` training tuples.
fn draw_batch(
    rng: &mut Rng,
    data: &LabeledSet<'_>,
    schedule: &NoiseSchedule,
    size: usize,
    fixed_level: Option<usize>,
) -> (Array2<f64>, Vec<usize>, Vec<usize>, Array2<f64>) {
    let d = data.samples.ncols();
    let mut z = Array2::zeros((size, d));
    let mut levels = Vec::with_capacity(size);
    let mut classes = Vec::with_capacity(size);
    let eps = rng::gaussian_matrix(rng, size, d);
    for i in 0..size {
        let idx = rng.random_range(0..data.samples.nrows());
        let k = fixed_level.unwrap_or_else(|| rng.random_range(1..=schedule.steps()));
        let zk = diffuse(
            &data.samples.row(idx).to_owned(),
            k,
            &eps.row(i).to_owned(),
            schedule,
        )
        .expect("shapes agree by construction");
        z.row_mut(i).assign(&zk);
        levels.push(k);
        classes.push(data.labels[idx]);
    }
    (z, levels, classes, eps)
}

/// Held-out eps-MSE over fresh draws; `level` pins the diffusion level.
pub fn holdout_mse(
    model: &DenoiserModel,
    data: &LabeledSet<'_>,
    schedule: &NoiseSchedule,
    size: usize,
    level: Option<usize>,
    seed: u64,
) -> Result<f64> {
    let mut rng = rng::stream(seed, streams::HOLDOUT);
    let (z, levels, classes, eps) = draw_batch(&mut rng, data, schedule, size, level);
    let pred = model.predict_eps(&z, &levels, &classes)?;
    Ok((&pred - &eps).mapv(|v| v * v).mean().unwrap_or(f64::NAN))
}

/// Trains a fresh denoiser with the eps-MSE objective.
pub fn train_denoiser(
    data: &LabeledSet<'_>,
    schedule: &NoiseSchedule,
    model_cfg: DenoiserConfig,
    cfg: &TrainConfig,
) -> Result<(DenoiserModel, TrainReport)> {
    if data.samples.nrows() == 0 {
        return Err(DscoError::Argument("training set is empty".into()));
    }
    if data.labels.len() != data.samples.nrows() {
        return Err(DscoError::Shape("one label per sample required".into()));
    }
    if data.labels.iter().any(|&l| l >= data.n_classes) {
        return Err(DscoError::Argument("label out of range".into()));
    }
    let mut model = DenoiserModel::init(model_cfg, data.samples.ncols(), data.n_classes, cfg.seed)?;
    let mut rng = rng::stream(cfg.seed, streams::TRAINING);
    let mut adam = Adam::new(cfg.lr);
    let mut curve = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        // Linear decay to a tenth of the base rate.
        let frac = it as f64 / cfg.iterations.max(1) as f64;
        adam.set_lr(cfg.lr * (1.0 - 0.9 * frac));
        let (z, levels, classes, eps) = draw_batch(&mut rng, data, schedule, cfg.batch_size, None);
        let (loss, grad) = model.loss_and_grad(&z, &levels, &classes, &eps);
        if !loss.is_finite() {
            return Err(DscoError::TrainingFailure {
                epochs: it,
                final_loss: loss,
                loss_curve: curve,
            });
        }
        curve.push(loss);
        adam.update(model.params_mut(), grad.params());
    }
    model.round_to_f32();
    let mse = holdout_mse(&model, data, schedule, cfg.holdout_size, None, cfg.seed)?;
    if !(mse <= cfg.mse_threshold) {
        return Err(DscoError::TrainingFailure {
            epochs: cfg.iterations,
            final_loss: mse,
            loss_curve: curve,
        });
    }
    log::info!("denoiser trained: held-out eps-MSE {mse:.4}");
    Ok((
        model,
        TrainReport {
            loss_curve: curve,
            holdout_mse: mse,
        },
    ))
}

/// Batch-mean of a row set, used by tests and diagnostics.
pub fn row_mean(samples: &Array2<f64>) -> Array1<f64> {
    samples
        .mean_axis(Axis(0))
        .unwrap_or_else(|| Array1::zeros(samples.ncols()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::ScheduleKind;

    fn tiny_cfg() -> DenoiserConfig {
        DenoiserConfig {
            hidden: 16,
            depth: 1,
            time_dim: 8,
            activation: Activation::Silu,
        }
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let schedule = NoiseSchedule::new(20, ScheduleKind::Linear).unwrap();
        let samples = rng::gaussian_matrix(&mut rng::stream(1, 0), 6, 3);
        let labels = [0, 1, 0, 1, 1, 0];
        let data = LabeledSet {
            samples: &samples,
            labels: &labels,
            n_classes: 2,
        };
        let mut r = rng::stream(2, 0);
        let (z, levels, classes, eps) = draw_batch(&mut r, &data, &schedule, 5, None);
        let model = DenoiserModel::init(tiny_cfg(), 3, 2, 9).unwrap();
        let (_, grad) = model.loss_and_grad(&z, &levels, &classes, &eps);
        let analytic = grad.flat_params();
        let base = model.flat_params();
        let h = 1e-6;
        for idx in (0..base.len()).step_by(7) {
            let mut plus = base.clone();
            plus[idx] += h;
            let mut minus = base.clone();
            minus[idx] -= h;
            let mp = DenoiserModel::from_flat(tiny_cfg(), 3, 2, &plus).unwrap();
            let mm = DenoiserModel::from_flat(tiny_cfg(), 3, 2, &minus).unwrap();
            let fd = (mp.loss_and_grad(&z, &levels, &classes, &eps).0
                - mm.loss_and_grad(&z, &levels, &classes, &eps).0)
                / (2.0 * h);
            assert!(
                (fd - analytic[idx]).abs() <= 1e-6 + 1e-4 * fd.abs(),
                "param {idx}: {fd} vs {}",
                analytic[idx]
            );
        }
    }

    #[test]
    fn flat_round_trip_preserves_model() {
        let model = DenoiserModel::init(tiny_cfg(), 2, 3, 4).unwrap();
        let back = DenoiserModel::from_flat(tiny_cfg(), 2, 3, &model.flat_params()).unwrap();
        assert_eq!(model, back);
        let shapes: usize = model
            .layer_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum();
        assert_eq!(shapes, model.flat_params().len());
    }

    #[test]
    fn rejects_wrong_width() {
        let model = DenoiserModel::init(tiny_cfg(), 2, 1, 0).unwrap();
        let z = Array2::zeros((1, 3));
        assert!(matches!(
            model.predict_eps(&z, &[1], &[0]),
            Err(DscoError::Shape(_))
        ));
    }
}
