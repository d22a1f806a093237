use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{DscoError, Result};
use crate::nn::{softmax_rows, Activation, Adam, Dense};
use crate::rng::{self, streams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub depth: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            depth: 2,
            epochs: 1500,
            batch_size: 128,
            lr: 5e-3,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn fingerprint(&self) -> String {
        format!(
            "mlp-h{}-d{}-e{}-b{}-lr{}-s{}",
            self.hidden, self.depth, self.epochs, self.batch_size, self.lr, self.seed
        )
    }
}

/// Training targets: hard class indices or per-row distributions.
#[derive(Debug, Clone, Copy)]
pub enum Targets<'a> {
    Hard(&'a [usize]),
    Soft(&'a Array2<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    n_classes: usize,
    input_dim: usize,
    layers: Vec<Dense>,
    fingerprint: String,
}

#[derive(Debug, Clone, Default)]
pub struct TrainingCurves {
    pub loss: Vec<f64>,
    pub accuracy: Vec<f64>,
}

pub fn one_hot(labels: &[usize], n_classes: usize) -> Array2<f64> {
    let mut out = Array2::zeros((labels.len(), n_classes));
    for (i, &l) in labels.iter().enumerate() {
        out[[i, l]] = 1.0;
    }
    out
}

/// Mean cross-entropy of `logits` against target distributions, and its
/// gradient with respect to the logits.
pub fn cross_entropy(logits: &Array2<f64>, targets: &Array2<f64>) -> (f64, Array2<f64>) {
    let p = softmax_rows(logits, 1.0);
    let n = logits.nrows() as f64;
    let mut loss = 0.0;
    for (prow, trow) in p.rows().into_iter().zip(targets.rows()) {
        for (&pv, &tv) in prow.iter().zip(trow.iter()) {
            if tv != 0.0 {
                loss -= tv * pv.max(1e-300).ln();
            }
        }
    }
    ((loss / n), (p - targets) / n)
}

impl Classifier {
    fn init(input_dim: usize, n_classes: usize, cfg: &ClassifierConfig) -> Self {
        let mut rng = rng::stream(cfg.seed, streams::INIT);
        let mut layers = Vec::with_capacity(cfg.depth + 1);
        let mut fan_in = input_dim;
        for _ in 0..cfg.depth {
            layers.push(Dense::init(&mut rng, fan_in, cfg.hidden));
            fan_in = cfg.hidden;
        }
        layers.push(Dense::init(&mut rng, fan_in, n_classes));
        Self {
            n_classes,
            input_dim,
            layers,
            fingerprint: cfg.fingerprint(),
        }
    }

    /// Predicts `class` for every input.
    pub fn constant(class: usize, n_classes: usize, input_dim: usize) -> Self {
        let mut out = Dense {
            w: Array2::zeros((input_dim, n_classes)),
            b: Array1::zeros(n_classes),
        };
        out.b[class] = 1.0;
        Self {
            n_classes,
            input_dim,
            layers: vec![out],
            fingerprint: format!("constant-{class}"),
        }
    }

    /// Outputs the same distribution for every input.
    pub fn uniform(n_classes: usize, input_dim: usize) -> Self {
        let out = Dense {
            w: Array2::zeros((input_dim, n_classes)),
            b: Array1::zeros(n_classes),
        };
        Self {
            n_classes,
            input_dim,
            layers: vec![out],
            fingerprint: "uniform".into(),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    fn forward_cached(&self, x: &Array2<f64>) -> (Vec<Array2<f64>>, Vec<Array2<f64>>) {
        let mut inputs = vec![x.clone()];
        let mut pres = Vec::with_capacity(self.layers.len());
        for (k, layer) in self.layers.iter().enumerate() {
            let pre = layer.forward(inputs.last().expect("non-empty"));
            if k + 1 < self.layers.len() {
                inputs.push(pre.mapv(|v| Activation::Relu.apply(v)));
            }
            pres.push(pre);
        }
        (inputs, pres)
    }

    pub fn logits(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim {
            return Err(DscoError::Shape(format!(
                "classifier expects {} features, got {}",
                self.input_dim,
                x.ncols()
            )));
        }
        let (_, mut pres) = self.forward_cached(x);
        Ok(pres.pop().expect("at least one layer"))
    }

    pub fn predict_proba(&self, x: &Array2<f64>, temperature: f64) -> Result<Array2<f64>> {
        Ok(softmax_rows(&self.logits(x)?, temperature))
    }

    pub fn predict(&self, x: &Array2<f64>) -> Result<Vec<usize>> {
        let logits = self.logits(x)?;
        Ok(logits
            .rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                        if v > best.1 {
                            (i, v)
                        } else {
                            best
                        }
                    })
                    .0
            })
            .collect())
    }

    fn loss_and_grad(&self, x: &Array2<f64>, targets: &Array2<f64>) -> (f64, Vec<Dense>) {
        let (inputs, pres) = self.forward_cached(x);
        let (loss, mut up) = cross_entropy(pres.last().expect("non-empty"), targets);
        let mut grads: Vec<Dense> = self.layers.iter().map(Dense::zeros_like).collect();
        for k in (0..self.layers.len()).rev() {
            if k + 1 < self.layers.len() {
                up = &up * &pres[k].mapv(|v| Activation::Relu.derivative(v));
            }
            up = self.layers[k].backward(&inputs[k], &up, &mut grads[k]);
        }
        (loss, grads)
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| {
                l.params()
                    .into_iter()
                    .flatten()
                    .copied()
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    /// Rebuilds an MLP trained under `cfg` from [`Classifier::flat_params`].
    pub fn from_flat(
        cfg: &ClassifierConfig,
        input_dim: usize,
        n_classes: usize,
        flat: &[f64],
    ) -> Result<Self> {
        let mut model = Self::init(input_dim, n_classes, cfg);
        let expected: usize = model.layers.iter().map(|l| l.w.len() + l.b.len()).sum();
        if flat.len() != expected {
            return Err(DscoError::Shape(format!(
                "classifier needs {expected} parameters, got {}",
                flat.len()
            )));
        }
        let mut rest = flat;
        for layer in &mut model.layers {
            for p in layer.params_mut() {
                let (head, tail) = rest.split_at(p.len());
                p.copy_from_slice(head);
                rest = tail;
            }
        }
        Ok(model)
    }
}

/// Trains an MLP classifier with Adam on cross-entropy.
pub fn train_classifier(
    data: &Array2<f64>,
    targets: Targets<'_>,
    n_classes: usize,
    cfg: &ClassifierConfig,
) -> Result<(Classifier, TrainingCurves)> {
    let n = data.nrows();
    if n == 0 {
        return Err(DscoError::Argument(
            "classifier training set is empty".into(),
        ));
    }
    let dist = match targets {
        Targets::Hard(labels) => {
            if labels.len() != n || labels.iter().any(|&l| l >= n_classes) {
                return Err(DscoError::Argument(
                    "hard labels must cover rows and lie in range".into(),
                ));
            }
            one_hot(labels, n_classes)
        }
        Targets::Soft(p) => {
            if p.dim() != (n, n_classes) {
                return Err(DscoError::Shape(format!(
                    "soft labels {:?} vs ({n}, {n_classes})",
                    p.dim()
                )));
            }
            p.clone()
        }
    };
    let hard: Vec<usize> = dist
        .rows()
        .into_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |b, (i, &v)| if v > b.1 { (i, v) } else { b },
                )
                .0
        })
        .collect();

    let mut model = Classifier::init(data.ncols(), n_classes, cfg);
    let mut adam = Adam::new(cfg.lr);
    let mut rng = rng::stream(cfg.seed, streams::TRAINING);
    let mut order: Vec<usize> = (0..n).collect();
    let mut curves = TrainingCurves::default();
    let batch = cfg.batch_size.max(1);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let x = data.select(Axis(0), chunk);
            let t = dist.select(Axis(0), chunk);
            let (loss, grads) = model.loss_and_grad(&x, &t);
            if !loss.is_finite() {
                return Err(DscoError::TrainingFailure {
                    epochs: epoch,
                    final_loss: loss,
                    loss_curve: curves.loss,
                });
            }
            epoch_loss += loss * chunk.len() as f64;
            let params: Vec<&mut [f64]> = model
                .layers
                .iter_mut()
                .flat_map(|l| l.params_mut())
                .collect();
            let g: Vec<&[f64]> = grads.iter().flat_map(|l| l.params()).collect();
            adam.update(params, g);
        }
        curves.loss.push(epoch_loss / n as f64);
        if epoch + 1 == cfg.epochs || epoch % 10 == 0 {
            let pred = model.predict(data)?;
            let acc = pred.iter().zip(&hard).filter(|(a, b)| a == b).count() as f64 / n as f64;
            curves.accuracy.push(acc);
        }
    }
    Ok((model, curves))
}

/// Top-1 accuracy against hard labels.
pub fn evaluate(classifier: &Classifier, x: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    if labels.len() != x.nrows() {
        return Err(DscoError::Shape("one label per test row required".into()));
    }
    if labels.is_empty() {
        return Err(DscoError::Argument("empty test set".into()));
    }
    let pred = classifier.predict(x)?;
    Ok(pred.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / labels.len() as f64)
}

/// Teacher softmax outputs at `temperature` for every sample.
pub fn relabel(
    teacher: &Classifier,
    samples: &Array2<f64>,
    temperature: f64,
) -> Result<Array2<f64>> {
    if !(temperature > 0.0) {
        return Err(DscoError::Argument("temperature must be positive".into()));
    }
    teacher.predict_proba(samples, temperature)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    fn separable() -> (Array2<f64>, Vec<usize>) {
        let mut r = rng::stream(1, 0);
        let mut x = rng::gaussian_matrix(&mut r, 100, 2) * 0.3;
        let mut labels = Vec::new();
        for (i, mut row) in x.rows_mut().into_iter().enumerate() {
            let c = i % 2;
            row[0] += if c == 0 { -2.0 } else { 2.0 };
            labels.push(c);
        }
        (x, labels)
    }

    #[test]
    fn separable_set_is_learned() {
        let (x, y) = separable();
        let cfg = ClassifierConfig {
            epochs: 100,
            ..Default::default()
        };
        let (c, curves) = train_classifier(&x, Targets::Hard(&y), 2, &cfg).unwrap();
        assert!(evaluate(&c, &x, &y).unwrap() >= 0.99);
        assert!(curves.loss.last().unwrap() < &curves.loss[0]);
    }

    #[test]
    fn one_hot_soft_labels_match_hard_labels() {
        let (x, y) = separable();
        let logits = arr2(&[[0.3, -1.2], [2.0, 0.5]]);
        let t = one_hot(&[1, 0], 2);
        let (a, _) = cross_entropy(&logits, &t);
        let manual = -(softmax_rows(&logits, 1.0)[[0, 1]].ln()
            + softmax_rows(&logits, 1.0)[[1, 0]].ln())
            / 2.0;
        assert!((a - manual).abs() < 1e-12);

        let cfg = ClassifierConfig {
            epochs: 5,
            ..Default::default()
        };
        let soft = one_hot(&y, 2);
        let (h, hc) = train_classifier(&x, Targets::Hard(&y), 2, &cfg).unwrap();
        let (s, sc) = train_classifier(&x, Targets::Soft(&soft), 2, &cfg).unwrap();
        assert_eq!(h.flat_params(), s.flat_params());
        for (a, b) in hc.loss.iter().zip(&sc.loss) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn flat_round_trip() {
        let (x, y) = separable();
        let cfg = ClassifierConfig {
            epochs: 5,
            ..Default::default()
        };
        let (c, _) = train_classifier(&x, Targets::Hard(&y), 2, &cfg).unwrap();
        let back = Classifier::from_flat(&cfg, 2, 2, &c.flat_params()).unwrap();
        assert_eq!(back.logits(&x).unwrap(), c.logits(&x).unwrap());
        assert!(Classifier::from_flat(&cfg, 2, 2, &[0.0; 3]).is_err());
    }

    #[test]
    fn training_is_seeded() {
        let (x, y) = separable();
        let cfg = ClassifierConfig {
            epochs: 3,
            seed: 5,
            ..Default::default()
        };
        let a = train_classifier(&x, Targets::Hard(&y), 2, &cfg).unwrap().0;
        let b = train_classifier(&x, Targets::Hard(&y), 2, &cfg).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn constant_predictor_scores_class_fraction() {
        let x = Array2::zeros((5, 2));
        let y = [1, 1, 1, 0, 2];
        let c = Classifier::constant(1, 3, 2);
        assert!((evaluate(&c, &x, &y).unwrap() - 0.6).abs() < 1e-12);
        assert_eq!(evaluate(&c, &x, &[1, 1, 1, 1, 1]).unwrap(), 1.0);
    }

    #[test]
    fn relabel_rows_are_distributions() {
        let x = rng::gaussian_matrix(&mut rng::stream(2, 0), 7, 2);
        let u = relabel(&Classifier::uniform(4, 2), &x, 1.0).unwrap();
        assert!(u.iter().all(|&v| (v - 0.25).abs() < 1e-12));
        let (xs, ys) = separable();
        let (teacher, _) = train_classifier(
            &xs,
            Targets::Hard(&ys),
            2,
            &ClassifierConfig {
                epochs: 20,
                ..Default::default()
            },
        )
        .unwrap();
        for temperature in [1.0, 20.0] {
            let soft = relabel(&teacher, &xs, temperature).unwrap();
            assert!(soft
                .rows()
                .into_iter()
                .all(|r| (r.sum() - 1.0).abs() < 1e-6));
            let argmax: Vec<usize> = soft
                .rows()
                .into_iter()
                .map(|r| if r[1] > r[0] { 1 } else { 0 })
                .collect();
            assert_eq!(argmax, teacher.predict(&xs).unwrap());
        }
    }
}
