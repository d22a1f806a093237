use ndarray::{Array1, Array2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{DscoError, Result};
use crate::rng::{self, gaussian, streams, Rng};

const MAX_ATTEMPTS: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub n_classes: usize,
    pub modes_per_class: usize,
    pub n_per_class: usize,
    pub dim: usize,
    pub seed: u64,
    /// Fraction of each class replaced by planted far-apart samples.
    pub outlier_frac: f64,
    pub mode_std: f64,
    /// Mode centers are drawn from `[-spread, spread]^dim`.
    pub spread: f64,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        Self {
            n_classes: 2,
            modes_per_class: 2,
            n_per_class: 200,
            dim: 2,
            seed: 0,
            outlier_frac: 0.0,
            mode_std: 0.25,
            spread: 2.0,
        }
    }
}

impl MixtureSpec {
    /// Three classes of four modes each on a wider square: the benchmark
    /// mixture, where 32 random draws per class often cover modes unevenly.
    pub fn hard() -> Self {
        Self {
            n_classes: 3,
            modes_per_class: 4,
            spread: 3.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    pub samples: Array2<f64>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub spec: MixtureSpec,
    /// `(class, center)` of every mode.
    pub centers: Vec<(usize, Array1<f64>)>,
    pub planted: Vec<usize>,
    /// Recognition radius the planted samples were isolated against.
    pub r_planted: f64,
}

impl ToyDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }

    /// Rows belonging to `class`, in index order.
    pub fn class_indices(&self, class: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.labels[i] == class)
            .collect()
    }

    pub fn class_samples(&self, class: usize) -> Array2<f64> {
        self.samples
            .select(ndarray::Axis(0), &self.class_indices(class))
    }

    pub fn is_planted(&self, index: usize) -> bool {
        self.planted.binary_search(&index).is_ok()
    }

    /// Fresh draws from the same modes, plus jittered copies of the planted
    /// samples at the same per-class fraction.
    pub fn held_out(&self, n_per_class: usize, seed: u64) -> ToyDataset {
        let mut rng = rng::stream(seed, streams::HOLDOUT);
        let spec = MixtureSpec {
            n_per_class,
            seed,
            ..self.spec.clone()
        };
        let n_out = planted_per_class(&spec);
        let mut samples = Vec::new();
        let mut labels = Vec::new();
        let mut planted = Vec::new();
        for c in 0..self.n_classes {
            let modes: Vec<&Array1<f64>> = self
                .centers
                .iter()
                .filter(|(k, _)| *k == c)
                .map(|(_, m)| m)
                .collect();
            for _ in 0..n_per_class - n_out {
                let m = modes[rng.random_range(0..modes.len())];
                samples.push(m.mapv(|v| v + gaussian(&mut rng) * spec.mode_std));
                labels.push(c);
            }
            let sources: Vec<usize> = self
                .planted
                .iter()
                .copied()
                .filter(|&i| self.labels[i] == c)
                .collect();
            if sources.is_empty() {
                continue;
            }
            for k in 0..n_out {
                let src = self.samples.row(sources[k % sources.len()]);
                planted.push(samples.len());
                samples.push(src.mapv(|v| v + gaussian(&mut rng) * self.r_planted / 4.0));
                labels.push(c);
            }
        }
        ToyDataset {
            samples: stack_rows(&samples, self.dim()),
            labels,
            n_classes: self.n_classes,
            spec,
            centers: self.centers.clone(),
            planted,
            r_planted: self.r_planted,
        }
    }
}

fn planted_per_class(spec: &MixtureSpec) -> usize {
    (spec.outlier_frac * spec.n_per_class as f64).round() as usize
}

fn stack_rows(rows: &[Array1<f64>], dim: usize) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), dim));
    for (i, r) in rows.iter().enumerate() {
        out.row_mut(i).assign(r);
    }
    out
}

fn dist(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn random_direction(rng: &mut Rng, dim: usize) -> Array1<f64> {
    loop {
        let v = Array1::from_shape_simple_fn(dim, || gaussian(rng));
        let n = v.dot(&v).sqrt();
        if n > 1e-12 {
            return v / n;
        }
    }
}

fn uniform_point(rng: &mut Rng, dim: usize, half: f64) -> Array1<f64> {
    Array1::from_shape_simple_fn(dim, || rng.random_range(-half..=half))
}

/// Labeled Gaussian mixture, optionally with planted far-apart samples.
///
/// A planted sample of class `c` lies at least `2 * r_planted` from every
/// ordinary sample of `c`, at least `r_planted` from every other sample,
/// and its nearest ordinary sample belongs to another class.
pub fn make_gaussian_mixture(spec: &MixtureSpec) -> Result<ToyDataset> {
    if spec.dim < 2 || spec.n_classes == 0 || spec.modes_per_class == 0 || spec.n_per_class == 0 {
        return Err(DscoError::Argument(
            "mixture needs dim >= 2 and positive counts".into(),
        ));
    }
    if !(0.0..1.0).contains(&spec.outlier_frac) {
        return Err(DscoError::Argument(
            "outlier_frac must lie in [0, 1)".into(),
        ));
    }
    let mut rng = rng::stream(spec.seed, streams::DATASET);
    let min_sep = 6.0 * spec.mode_std;
    let mut centers: Vec<(usize, Array1<f64>)> = Vec::new();
    for c in 0..spec.n_classes {
        for _ in 0..spec.modes_per_class {
            let mut placed = false;
            for _ in 0..MAX_ATTEMPTS {
                let cand = uniform_point(&mut rng, spec.dim, spec.spread);
                if centers
                    .iter()
                    .all(|(_, m)| dist(m.view(), cand.view()) >= min_sep)
                {
                    centers.push((c, cand));
                    placed = true;
                    break;
                }
            }
            if !placed {
                return Err(DscoError::Generation(
                    "cannot separate mode centers; raise spread".into(),
                ));
            }
        }
    }

    let n_out = planted_per_class(spec);
    let n_regular = spec.n_per_class - n_out;
    let mut rows = Vec::with_capacity(spec.n_classes * spec.n_per_class);
    let mut labels = Vec::with_capacity(rows.capacity());
    for c in 0..spec.n_classes {
        let modes: Vec<&Array1<f64>> = centers
            .iter()
            .filter(|(k, _)| *k == c)
            .map(|(_, m)| m)
            .collect();
        for _ in 0..n_regular {
            let m = modes[rng.random_range(0..modes.len())];
            rows.push(m.mapv(|v| v + gaussian(&mut rng) * spec.mode_std));
            labels.push(c);
        }
    }

    let r_planted = 2.0 * spec.mode_std;
    let n_ordinary = rows.len();
    let mut planted = Vec::new();
    for c in 0..spec.n_classes {
        let hosts: Vec<&Array1<f64>> = centers
            .iter()
            .filter(|(k, _)| *k != c)
            .map(|(_, m)| m)
            .collect();
        if n_out > 0 && hosts.is_empty() {
            return Err(DscoError::Generation(
                "planting needs at least two classes".into(),
            ));
        }
        for _ in 0..n_out {
            let mut placed = false;
            for _ in 0..MAX_ATTEMPTS {
                // On the rim of a mode of another class, where a model that
                // has only seen typical samples answers with the host class.
                let host = hosts[rng.random_range(0..hosts.len())];
                let radius = spec.mode_std * rng.random_range(2.0..5.0);
                let cand = host + &(random_direction(&mut rng, spec.dim) * radius);
                let mut nearest = (f64::INFINITY, c);
                let mut ok = true;
                for (i, r) in rows.iter().enumerate() {
                    let d = dist(r.view(), cand.view());
                    let label = labels[i];
                    let ordinary = i < n_ordinary;
                    if (ordinary && label == c && d < 2.0 * r_planted) || d < r_planted {
                        ok = false;
                        break;
                    }
                    if ordinary && d < nearest.0 {
                        nearest = (d, label);
                    }
                }
                if ok && nearest.1 != c {
                    planted.push(rows.len());
                    rows.push(cand);
                    labels.push(c);
                    placed = true;
                    break;
                }
            }
            if !placed {
                return Err(DscoError::Generation(format!(
                    "could not plant an isolated sample for class {c}"
                )));
            }
        }
    }

    Ok(ToyDataset {
        samples: stack_rows(&rows, spec.dim),
        labels,
        n_classes: spec.n_classes,
        spec: spec.clone(),
        centers,
        planted,
        r_planted,
    })
}
