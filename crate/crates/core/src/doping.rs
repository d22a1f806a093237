//! Dope Trigger evaluation, confusion scoring, far-apart selection, and
//! composition of mixed concentrated datasets.

use std::path::Path;

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DscoError, Result};
use crate::evalbench::{train_classifier, Classifier, ClassifierConfig, Targets};
use crate::tensor::TensorBlock;

const NORMALIZATION_TOL: f64 = 1e-6;

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// `max_{c != c_T} p_S^c - p_S^{c_T}` with `c_T = argmax p_T`.
///
/// Positive exactly when the student's hard prediction disagrees with the
/// teacher's.
pub fn confusion_score(p_teacher: &[f64], p_student: &[f64]) -> Result<f64> {
    if p_teacher.len() != p_student.len() {
        return Err(DscoError::Argument(format!(
            "probability vectors of length {} and {}",
            p_teacher.len(),
            p_student.len()
        )));
    }
    if p_teacher.len() < 2 {
        return Err(DscoError::Argument(
            "confusion needs at least 2 classes".into(),
        ));
    }
    for (name, p) in [("teacher", p_teacher), ("student", p_student)] {
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > NORMALIZATION_TOL || p.iter().any(|v| !(*v >= 0.0)) {
            return Err(DscoError::Argument(format!(
                "{name} probabilities sum to {s}"
            )));
        }
    }
    let c_t = argmax(p_teacher);
    let rival = p_student
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != c_t)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(rival - p_student[c_t])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionRecord {
    pub index: usize,
    /// Teacher's hard label.
    pub class: usize,
    pub score: f64,
}

impl ConfusionRecord {
    pub fn to_csv(&self) -> String {
        format!("{},{},{}", self.index, self.class, self.score)
    }
}

pub const CONFUSION_HEADER: &str = "index,class,score";

/// Scores every row of `samples` given teacher and student probabilities
/// at `temperature`.
pub fn confusion_records(
    teacher: &Classifier,
    student: &Classifier,
    samples: &Array2<f64>,
    temperature: f64,
) -> Result<Vec<ConfusionRecord>> {
    let p_t = teacher.predict_proba(samples, temperature)?;
    let p_s = student.predict_proba(samples, temperature)?;
    (0..samples.nrows())
        .into_par_iter()
        .map(|i| {
            let pt = p_t.row(i).to_vec();
            let ps = p_s.row(i).to_vec();
            Ok(ConfusionRecord {
                index: i,
                class: argmax(&pt),
                score: confusion_score(&pt, &ps)?,
            })
        })
        .collect()
}

/// Number of targets on which the student's hard prediction matches the
/// teacher's label.
pub fn recognized_count(
    student: &Classifier,
    targets: &Array2<f64>,
    teacher_labels: &[usize],
) -> Result<usize> {
    if targets.nrows() != teacher_labels.len() {
        return Err(DscoError::Shape(format!(
            "{} targets but {} teacher labels",
            targets.nrows(),
            teacher_labels.len()
        )));
    }
    let pred = student.predict(targets)?;
    Ok(pred
        .iter()
        .zip(teacher_labels)
        .filter(|(a, b)| a == b)
        .count())
}

/// Student for confusion scoring and recognition counts: trained on the
/// surrogate set with the teacher's hard labels.
pub fn train_student(
    teacher: &Classifier,
    surrogate: &Array2<f64>,
    cfg: &ClassifierConfig,
) -> Result<Classifier> {
    let labels = teacher.predict(surrogate)?;
    Ok(train_classifier(surrogate, Targets::Hard(&labels), teacher.n_classes(), cfg)?.0)
}

pub fn marginal_gain(n1: usize, n2: usize, m1: usize, m2: usize) -> Result<f64> {
    if m2 <= m1 {
        return Err(DscoError::Argument(format!(
            "surrogate sizes must increase, got {m1} then {m2}"
        )));
    }
    Ok((n2 as f64 - n1 as f64) / (m2 - m1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalGainCurve {
    sizes: Vec<usize>,
    recognized: Vec<usize>,
}

/// The interval `sizes[from] -> sizes[to]` where doping kicks in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerPoint {
    pub from: usize,
    pub to: usize,
    pub gain: f64,
}

impl MarginalGainCurve {
    /// `sizes` are total surrogate counts M_i, `recognized` the matching N_i.
    pub fn new(sizes: Vec<usize>, recognized: Vec<usize>) -> Result<Self> {
        if sizes.len() != recognized.len() {
            return Err(DscoError::Argument(
                "one recognized count per schedule point".into(),
            ));
        }
        if sizes.len() < 2 {
            return Err(DscoError::Argument(
                "a gain curve needs at least 2 points".into(),
            ));
        }
        if sizes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(DscoError::Argument(format!(
                "schedule {sizes:?} is not strictly increasing"
            )));
        }
        Ok(Self { sizes, recognized })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn recognized(&self) -> &[usize] {
        &self.recognized
    }

    pub fn gains(&self) -> Vec<f64> {
        (1..self.sizes.len())
            .map(|i| {
                marginal_gain(
                    self.recognized[i - 1],
                    self.recognized[i],
                    self.sizes[i - 1],
                    self.sizes[i],
                )
                .expect("sizes checked increasing")
            })
            .collect()
    }
}

/// First interval whose marginal gain is at most 1, if any.
pub fn dope_trigger(curve: &MarginalGainCurve) -> Option<TriggerPoint> {
    curve
        .gains()
        .into_iter()
        .enumerate()
        .find(|(_, g)| *g <= 1.0)
        .map(|(i, gain)| TriggerPoint {
            from: curve.sizes[i],
            to: curve.sizes[i + 1],
            gain,
        })
}

/// Top-`k` records by descending score, ties by ascending index. With
/// `per_class`, `k` is taken from every class present.
pub fn select_far_apart(
    records: &[ConfusionRecord],
    k: usize,
    per_class: bool,
) -> Result<Vec<usize>> {
    let mut sorted: Vec<&ConfusionRecord> = records.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.index.cmp(&b.index)));
    if !per_class {
        if k > sorted.len() {
            return Err(DscoError::Argument(format!(
                "asked for {k} of {} samples",
                sorted.len()
            )));
        }
        return Ok(sorted[..k].iter().map(|r| r.index).collect());
    }
    let mut classes: Vec<usize> = records.iter().map(|r| r.class).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut out = Vec::with_capacity(k * classes.len());
    for c in classes {
        let picked: Vec<usize> = sorted
            .iter()
            .filter(|r| r.class == c)
            .take(k)
            .map(|r| r.index)
            .collect();
        if picked.len() < k {
            return Err(DscoError::Argument(format!(
                "class {c} has {} samples, asked for {k}",
                picked.len()
            )));
        }
        out.extend(picked);
    }
    Ok(out)
}

/// A concentrated dataset: synthetic rows first, then doped real rows.
/// Samples are stored at `f32` precision so persistence is exact.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentratedDataset {
    samples: Array2<f64>,
    labels: Vec<usize>,
    n_synthetic: usize,
    doped_indices: Vec<usize>,
    sample_shape: Vec<usize>,
    n_classes: usize,
    provenance: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    kind: String,
    n_classes: usize,
    n_synthetic: usize,
    labels: Vec<usize>,
    doped_indices: Vec<usize>,
    sample_shape: Vec<usize>,
    provenance: serde_json::Value,
}

const MANIFEST_KIND: &str = "concentrated_dataset";

pub struct Composition<'a> {
    pub synthetic: &'a Array2<f64>,
    pub synthetic_labels: &'a [usize],
    pub doped_indices: &'a [usize],
    pub real: &'a Array2<f64>,
    /// Labels attached to doped rows (teacher or ground-truth, caller's
    /// choice), indexed like `real`.
    pub real_labels: &'a [usize],
    pub n_classes: usize,
    pub sample_shape: &'a [usize],
    /// Required total size, e.g. IPC x classes.
    pub expected_total: Option<usize>,
    pub provenance: serde_json::Value,
}

fn round_f32(a: &Array2<f64>) -> Array2<f64> {
    a.mapv(|v| f64::from(v as f32))
}

pub fn compose_concentrated(c: Composition<'_>) -> Result<ConcentratedDataset> {
    let dim: usize = c.sample_shape.iter().product();
    if c.synthetic.ncols() != dim || c.real.ncols() != dim {
        return Err(DscoError::Shape(format!(
            "sample shape {:?} vs synthetic width {} and real width {}",
            c.sample_shape,
            c.synthetic.ncols(),
            c.real.ncols()
        )));
    }
    if c.synthetic.nrows() != c.synthetic_labels.len() || c.real.nrows() != c.real_labels.len() {
        return Err(DscoError::Composition(
            "label count differs from sample count".into(),
        ));
    }
    let mut seen = c.doped_indices.to_vec();
    seen.sort_unstable();
    if let Some(w) = seen.windows(2).find(|w| w[0] == w[1]) {
        return Err(DscoError::Composition(format!(
            "doped index {} appears twice",
            w[0]
        )));
    }
    if let Some(&bad) = seen.last().filter(|&&i| i >= c.real.nrows()) {
        return Err(DscoError::Composition(format!(
            "doped index {bad} outside the real set"
        )));
    }
    let total = c.synthetic.nrows() + c.doped_indices.len();
    if let Some(expected) = c.expected_total {
        if total != expected {
            return Err(DscoError::Composition(format!(
                "composed {total} samples, designated size is {expected}"
            )));
        }
    }
    let mut labels = c.synthetic_labels.to_vec();
    labels.extend(c.doped_indices.iter().map(|&i| c.real_labels[i]));
    if let Some(&bad) = labels.iter().find(|&&l| l >= c.n_classes) {
        return Err(DscoError::Composition(format!(
            "label {bad} outside {} classes",
            c.n_classes
        )));
    }
    let doped = c.real.select(Axis(0), c.doped_indices);
    let samples = ndarray::concatenate(Axis(0), &[c.synthetic.view(), doped.view()])
        .map_err(|e| DscoError::Shape(e.to_string()))?;
    Ok(ConcentratedDataset {
        samples: round_f32(&samples),
        labels,
        n_synthetic: c.synthetic.nrows(),
        doped_indices: c.doped_indices.to_vec(),
        sample_shape: c.sample_shape.to_vec(),
        n_classes: c.n_classes,
        provenance: c.provenance,
    })
}

impl ConcentratedDataset {
    pub fn samples(&self) -> &Array2<f64> {
        &self.samples
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_synthetic(&self) -> usize {
        self.n_synthetic
    }

    pub fn doped_indices(&self) -> &[usize] {
        &self.doped_indices
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    pub fn provenance(&self) -> &serde_json::Value {
        &self.provenance
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let block = TensorBlock::from_samples(&self.samples, &self.sample_shape)?;
        let manifest = Manifest {
            kind: MANIFEST_KIND.into(),
            n_classes: self.n_classes,
            n_synthetic: self.n_synthetic,
            labels: self.labels.clone(),
            doped_indices: self.doped_indices.clone(),
            sample_shape: self.sample_shape.clone(),
            provenance: self.provenance.clone(),
        };
        let json =
            serde_json::to_string(&manifest).map_err(|e| DscoError::Format(e.to_string()))?;
        block.save(path, &json)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (block, json) = TensorBlock::load(path)?;
        let m: Manifest =
            serde_json::from_str(&json).map_err(|e| DscoError::Format(e.to_string()))?;
        if m.kind != MANIFEST_KIND {
            return Err(DscoError::Format(format!(
                "expected a {MANIFEST_KIND}, found {}",
                m.kind
            )));
        }
        let samples = block.to_samples()?;
        if block.shape()[1..] != m.sample_shape[..]
            || samples.nrows() != m.labels.len()
            || m.n_synthetic + m.doped_indices.len() != m.labels.len()
        {
            return Err(DscoError::Format(
                "manifest disagrees with the stored tensor".into(),
            ));
        }
        Ok(Self {
            samples,
            labels: m.labels,
            n_synthetic: m.n_synthetic,
            doped_indices: m.doped_indices,
            sample_shape: m.sample_shape,
            n_classes: m.n_classes,
            provenance: m.provenance,
        })
    }
}
