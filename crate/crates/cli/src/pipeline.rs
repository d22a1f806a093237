//! The commands behind the `dsco` binary. Each one reads and writes a fixed
//! set of files under the run's output root.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dsco_core::bias_lab::{bias_row, mc_occupancy, BIAS_HEADER};
use dsco_core::diffusion::{train_denoiser, Checkpoint, LabeledSet, NoiseSchedule};
use dsco_core::doping::{
    compose_concentrated, confusion_records, dope_trigger, recognized_count, select_far_apart,
    train_student, Composition, ConcentratedDataset, ConfusionRecord, MarginalGainCurve,
    TriggerPoint, CONFUSION_HEADER,
};
use dsco_core::evalbench::{
    evaluate, make_gaussian_mixture, median_bandwidth, mmd2_unbiased, mutual_l2_by_group, relabel,
    train_classifier, Classifier, MetricRow, Targets, ToyDataset, METRICS_HEADER,
};
use dsco_core::nopt::{
    nopt_synthesize, AlignMode, DiagnosticRow, SynthesisRequest, DIAGNOSTICS_HEADER,
};
use dsco_core::projector::RandomProjector;
use dsco_core::rng::{self, derive_seed};
use dsco_core::tensor::TensorBlock;
use dsco_core::{DscoError, Result};
use ndarray::{Array2, Axis};
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const DENOISER_FILE: &str = "denoiser.dsco";
pub const TEACHER_FILE: &str = "teacher.dsco";
pub const TARGETS_FILE: &str = "targets.dsco";
pub const TRAIN_LOSS_FILE: &str = "train_loss.csv";
pub const SYNTHETIC_FILE: &str = "synthetic.dsco";
pub const CONCENTRATED_FILE: &str = "concentrated.dsco";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const GAIN_FILE: &str = "gain_curve.csv";
pub const CONFUSION_FILE: &str = "confusion_scores.csv";
pub const DOPED_FILE: &str = "doped.dsco";
pub const DOPED_CONFUSION_FILE: &str = "doped_confusion_scores.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const GROUPS_FILE: &str = "group_distances.csv";
pub const BIAS_FILE: &str = "bias.csv";

/// Stream offsets for seeds derived from the run seed.
mod seeds {
    pub const CLASS_BASE: u64 = 100;
    pub const TEACHER: u64 = 1;
    pub const STUDENT: u64 = 2;
    pub const EVAL_BASE: u64 = 1000;
    pub const TEST_SET: u64 = 3;
}

/// Output root plus overwrite policy.
#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
    force: bool,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>, force: bool) -> Self {
        Self {
            root: root.into(),
            force,
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Fails unless every output is absent or `force` is set.
    fn claim(&self, outputs: &[&str]) -> Result<()> {
        if !self.force {
            if let Some(existing) = outputs.iter().map(|n| self.path(n)).find(|p| p.exists()) {
                return Err(DscoError::Refusal(format!(
                    "{} exists; pass --force to overwrite",
                    existing.display()
                )));
            }
        }
        std::fs::create_dir_all(&self.root)?;
        Ok(())
    }

    fn require(&self, name: &str, producer: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if !p.exists() {
            return Err(DscoError::Argument(format!(
                "{} not found; run `dsco {producer}` first",
                p.display()
            )));
        }
        Ok(p)
    }

    fn write(&self, name: &str, text: &str) -> Result<()> {
        std::fs::write(self.path(name), text)?;
        Ok(())
    }
}

fn csv<T>(header: &str, rows: impl IntoIterator<Item = T>, line: impl Fn(T) -> String) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for r in rows {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

fn json_err(e: serde_json::Error) -> DscoError {
    DscoError::Format(e.to_string())
}

#[derive(Serialize, Deserialize)]
struct TargetsManifest {
    kind: String,
    n_classes: usize,
    labels: Vec<usize>,
    planted: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct TeacherManifest {
    kind: String,
    input_dim: usize,
    n_classes: usize,
    config: dsco_core::evalbench::ClassifierConfig,
}

/// Everything a run shares: the target set, its held-out split, and the
/// fixed projector.
pub struct Context {
    pub cfg: RunConfig,
    pub data: ToyDataset,
    pub projector: RandomProjector,
}

impl Context {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        let data = make_gaussian_mixture(&cfg.mixture())?;
        let projector = RandomProjector::new(cfg.projector_seed, cfg.projector())?;
        Ok(Self {
            cfg,
            data,
            projector,
        })
    }

    pub fn test_set(&self) -> ToyDataset {
        self.data.held_out(
            self.cfg.test_per_class,
            derive_seed(self.cfg.dataset_seed, seeds::TEST_SET),
        )
    }

    fn teacher_config(&self) -> dsco_core::evalbench::ClassifierConfig {
        self.cfg
            .classifier(derive_seed(self.cfg.seed, seeds::TEACHER))
    }

    fn student_config(&self) -> dsco_core::evalbench::ClassifierConfig {
        self.cfg
            .classifier(derive_seed(self.cfg.seed, seeds::STUDENT))
    }
}

/// Trains a teacher on the full target set, rounded to what its file holds.
pub fn train_teacher(ctx: &Context) -> Result<Classifier> {
    let cfg = ctx.teacher_config();
    let (teacher, _) = train_classifier(
        &ctx.data.samples,
        Targets::Hard(&ctx.data.labels),
        ctx.data.n_classes,
        &cfg,
    )?;
    let rounded: Vec<f64> = teacher
        .flat_params()
        .iter()
        .map(|&v| f64::from(v as f32))
        .collect();
    Classifier::from_flat(&cfg, ctx.data.dim(), ctx.data.n_classes, &rounded)
}

fn save_teacher(ctx: &Context, teacher: &Classifier, path: &Path) -> Result<()> {
    let flat: Vec<f32> = teacher.flat_params().iter().map(|&v| v as f32).collect();
    let manifest = TeacherManifest {
        kind: "teacher".into(),
        input_dim: teacher.input_dim(),
        n_classes: teacher.n_classes(),
        config: ctx.teacher_config(),
    };
    TensorBlock::new(vec![flat.len()], flat)?
        .save(path, &serde_json::to_string(&manifest).map_err(json_err)?)
}

fn load_teacher(path: &Path) -> Result<Classifier> {
    let (block, json) = TensorBlock::load(path)?;
    let m: TeacherManifest = serde_json::from_str(&json).map_err(json_err)?;
    if m.kind != "teacher" {
        return Err(DscoError::Format(format!(
            "{} is not a teacher file",
            path.display()
        )));
    }
    let flat: Vec<f64> = block.data().iter().map(|&v| f64::from(v)).collect();
    Classifier::from_flat(&m.config, m.input_dim, m.n_classes, &flat)
}

fn save_targets(data: &ToyDataset, path: &Path) -> Result<()> {
    let manifest = TargetsManifest {
        kind: "targets".into(),
        n_classes: data.n_classes,
        labels: data.labels.clone(),
        planted: data.planted.clone(),
    };
    let block = TensorBlock::from_samples(&data.samples, &[data.dim()])?;
    block.save(path, &serde_json::to_string(&manifest).map_err(json_err)?)
}

/// The regenerated target set must match the one the model was trained on.
fn check_targets(ctx: &Context, ws: &Workspace) -> Result<()> {
    let (block, json) = TensorBlock::load(ws.require(TARGETS_FILE, "train-diffusion")?)?;
    let m: TargetsManifest = serde_json::from_str(&json).map_err(json_err)?;
    let stored = TensorBlock::from_samples(&ctx.data.samples, &[ctx.data.dim()])?;
    if block != stored || m.labels != ctx.data.labels {
        return Err(DscoError::Config(
            "dataset settings differ from the ones used by train-diffusion".into(),
        ));
    }
    Ok(())
}

pub struct TrainOutcome {
    pub holdout_mse: f64,
    pub teacher_accuracy: f64,
}

pub fn cmd_train_diffusion(cfg: RunConfig, ws: &Workspace) -> Result<TrainOutcome> {
    ws.claim(&[DENOISER_FILE, TEACHER_FILE, TARGETS_FILE, TRAIN_LOSS_FILE])?;
    let ctx = Context::new(cfg)?;
    let schedule = NoiseSchedule::new(ctx.cfg.steps, ctx.cfg.schedule)?;
    let set = LabeledSet {
        samples: &ctx.data.samples,
        labels: &ctx.data.labels,
        n_classes: ctx.data.n_classes,
    };
    log::info!(
        "training denoiser on {} samples, T = {}",
        ctx.data.len(),
        schedule.steps()
    );
    let (model, report) = train_denoiser(&set, &schedule, ctx.cfg.denoiser(), &ctx.cfg.training())?;
    Checkpoint {
        model,
        schedule,
        seed: ctx.cfg.seed,
    }
    .save(ws.path(DENOISER_FILE))?;
    log::info!("training teacher classifier");
    let teacher = train_teacher(&ctx)?;
    save_teacher(&ctx, &teacher, &ws.path(TEACHER_FILE))?;
    save_targets(&ctx.data, &ws.path(TARGETS_FILE))?;
    ws.write(
        TRAIN_LOSS_FILE,
        &csv(
            "iteration,loss",
            report.loss_curve.iter().enumerate(),
            |(i, l)| format!("{i},{l}"),
        ),
    )?;
    Ok(TrainOutcome {
        holdout_mse: report.holdout_mse,
        teacher_accuracy: evaluate(&teacher, &ctx.data.samples, &ctx.data.labels)?,
    })
}

/// NOpt surrogates for every class, `ipc` each, rows grouped by class.
pub fn synthesize_classes(
    ctx: &Context,
    checkpoint: &Checkpoint,
    ipc: usize,
) -> Result<(Array2<f64>, Vec<usize>, Vec<DiagnosticRow>)> {
    let cfg = ctx.cfg.nopt();
    let per_class: Vec<_> = (0..ctx.data.n_classes)
        .into_par_iter()
        .map(|c| {
            let targets = ctx.data.class_samples(c);
            let req = SynthesisRequest {
                model: &checkpoint.model,
                schedule: &checkpoint.schedule,
                projector: &ctx.projector,
                class_id: c,
                n_surrogate: ipc,
                cfg: &cfg,
                targets: match cfg.mode {
                    AlignMode::DataAccessible => Some(&targets),
                    AlignMode::DataFree => None,
                },
                seed: derive_seed(ctx.cfg.seed, seeds::CLASS_BASE + c as u64),
            };
            nopt_synthesize(&req)
        })
        .collect::<Result<_>>()?;
    let views: Vec<_> = per_class.iter().map(|s| s.samples.view()).collect();
    let samples =
        ndarray::concatenate(Axis(0), &views).map_err(|e| DscoError::Shape(e.to_string()))?;
    let labels = (0..ctx.data.n_classes)
        .flat_map(|c| std::iter::repeat_n(c, ipc))
        .collect();
    let diagnostics = per_class.into_iter().flat_map(|s| s.diagnostics).collect();
    Ok((samples, labels, diagnostics))
}

#[derive(Debug, Clone, Serialize)]
pub struct GainPoint {
    pub ipc: usize,
    pub total: usize,
    pub recognized: usize,
}

pub struct ConcentrateOutcome {
    pub dataset: ConcentratedDataset,
    pub trigger: Option<TriggerPoint>,
    pub gains: Vec<GainPoint>,
}

fn provenance(ctx: &Context, stage: &str, extra: serde_json::Value) -> Result<serde_json::Value> {
    Ok(serde_json::json!({
        "stage": stage,
        "mode": ctx.cfg.mode,
        "seed": ctx.cfg.seed,
        "ipc": ctx.cfg.ipc,
        "config": ctx.cfg.to_toml()?,
        "details": extra,
    }))
}

/// Picks the `per_class` most confusing targets of every class.
fn dope_targets(
    ctx: &Context,
    teacher: &Classifier,
    synthetic: &Array2<f64>,
    per_class: usize,
) -> Result<(Vec<usize>, Vec<ConfusionRecord>)> {
    let student = train_student(teacher, synthetic, &ctx.student_config())?;
    let records = confusion_records(teacher, &student, &ctx.data.samples, ctx.cfg.temperature)?;
    let picked = select_far_apart(&records, per_class, true)?;
    Ok((picked, records))
}

fn compose(
    ctx: &Context,
    teacher: &Classifier,
    synthetic: &Array2<f64>,
    labels: &[usize],
    doped: &[usize],
    total: usize,
    details: serde_json::Value,
    stage: &str,
) -> Result<ConcentratedDataset> {
    let teacher_labels = teacher.predict(&ctx.data.samples)?;
    compose_concentrated(Composition {
        synthetic,
        synthetic_labels: labels,
        doped_indices: doped,
        real: &ctx.data.samples,
        real_labels: &teacher_labels,
        n_classes: ctx.data.n_classes,
        sample_shape: &[ctx.data.dim()],
        expected_total: Some(total),
        provenance: provenance(ctx, stage, details)?,
    })
}

fn refuse_data_free_doping(cfg: &RunConfig) -> Result<()> {
    if cfg.mode == AlignMode::DataFree {
        return Err(DscoError::Refusal(
            "doping selects real target samples, which data-free mode cannot read; \
             set dope = false or use data_accessible"
                .into(),
        ));
    }
    Ok(())
}

pub fn cmd_concentrate(cfg: RunConfig, ws: &Workspace) -> Result<ConcentrateOutcome> {
    if cfg.dope {
        refuse_data_free_doping(&cfg)?;
    }
    ws.claim(&[
        SYNTHETIC_FILE,
        CONCENTRATED_FILE,
        DIAGNOSTICS_FILE,
        GAIN_FILE,
        CONFUSION_FILE,
    ])?;
    let ctx = Context::new(cfg)?;
    check_targets(&ctx, ws)?;
    let checkpoint = Checkpoint::load(ws.require(DENOISER_FILE, "train-diffusion")?)?;
    let teacher = load_teacher(&ws.require(TEACHER_FILE, "train-diffusion")?)?;
    let ipc = ctx.cfg.ipc;
    let k = ctx.data.n_classes;

    let mut cache: BTreeMap<usize, (Array2<f64>, Vec<usize>, Vec<DiagnosticRow>)> = BTreeMap::new();
    let mut gains = Vec::new();
    let mut trigger = None;
    if ctx.cfg.dope {
        let teacher_labels = teacher.predict(&ctx.data.samples)?;
        let mut points: Vec<usize> = Vec::new();
        for &m in &ctx.cfg.dope_schedule {
            points.push(m);
            if m >= ipc {
                break;
            }
        }
        for &m in &points {
            log::info!("measuring recognition at {m} IPC");
            let set = synthesize_classes(&ctx, &checkpoint, m)?;
            let student = train_student(&teacher, &set.0, &ctx.student_config())?;
            gains.push(GainPoint {
                ipc: m,
                total: m * k,
                recognized: recognized_count(&student, &ctx.data.samples, &teacher_labels)?,
            });
            cache.insert(m, set);
        }
        if gains.len() >= 2 {
            let curve = MarginalGainCurve::new(
                gains.iter().map(|g| g.total).collect(),
                gains.iter().map(|g| g.recognized).collect(),
            )?;
            trigger = dope_trigger(&curve);
            let rows = gains.iter().enumerate().map(|(i, g)| {
                let gain = if i == 0 {
                    String::new()
                } else {
                    curve.gains()[i - 1].to_string()
                };
                format!("{},{},{},{gain}", g.ipc, g.total, g.recognized)
            });
            ws.write(GAIN_FILE, &csv("ipc,total,recognized,gain", rows, |r| r))?;
        } else {
            log::warn!("fewer than two schedule points up to {ipc} IPC; the trigger cannot fire");
        }
    }

    let n_syn = match trigger {
        Some(t) if t.from / k < ipc => t.from / k,
        _ => ipc,
    };
    let (synthetic, labels, diagnostics) = match cache.remove(&n_syn) {
        Some(set) => set,
        None => synthesize_classes(&ctx, &checkpoint, n_syn)?,
    };
    ws.write(
        DIAGNOSTICS_FILE,
        &csv(DIAGNOSTICS_HEADER, &diagnostics, |d| d.to_csv()),
    )?;
    let details = serde_json::json!({
        "trigger": trigger,
        "gains": gains,
        "synthetic_per_class": n_syn,
    });
    let pure = compose(
        &ctx,
        &teacher,
        &synthetic,
        &labels,
        &[],
        n_syn * k,
        details.clone(),
        "synthetic",
    )?;
    pure.save(ws.path(SYNTHETIC_FILE))?;

    let dataset = if n_syn < ipc {
        log::info!(
            "dope trigger fired; selecting {} real samples per class",
            ipc - n_syn
        );
        let (doped, records) = dope_targets(&ctx, &teacher, &synthetic, ipc - n_syn)?;
        ws.write(
            CONFUSION_FILE,
            &csv(CONFUSION_HEADER, &records, |r| r.to_csv()),
        )?;
        compose(
            &ctx,
            &teacher,
            &synthetic,
            &labels,
            &doped,
            ipc * k,
            details,
            "concentrated",
        )?
    } else {
        pure
    };
    dataset.save(ws.path(CONCENTRATED_FILE))?;
    Ok(ConcentrateOutcome {
        dataset,
        trigger,
        gains,
    })
}

/// Dopes the synthetic set from `concentrate` up to the designated IPC,
/// whether or not the trigger fired.
pub fn cmd_dope(cfg: RunConfig, ws: &Workspace) -> Result<ConcentratedDataset> {
    refuse_data_free_doping(&cfg)?;
    ws.claim(&[DOPED_FILE, DOPED_CONFUSION_FILE])?;
    let ctx = Context::new(cfg)?;
    check_targets(&ctx, ws)?;
    let teacher = load_teacher(&ws.require(TEACHER_FILE, "train-diffusion")?)?;
    let synthetic = ConcentratedDataset::load(ws.require(SYNTHETIC_FILE, "concentrate")?)?;
    let k = ctx.data.n_classes;
    let per_class = synthetic.len() / k;
    if per_class >= ctx.cfg.ipc {
        return Err(DscoError::Argument(format!(
            "synthetic set already holds {per_class} per class; raise ipc above it to dope"
        )));
    }
    let (doped, records) =
        dope_targets(&ctx, &teacher, synthetic.samples(), ctx.cfg.ipc - per_class)?;
    ws.write(
        DOPED_CONFUSION_FILE,
        &csv(CONFUSION_HEADER, &records, |r| r.to_csv()),
    )?;
    let details = serde_json::json!({ "synthetic_per_class": per_class });
    let out = compose(
        &ctx,
        &teacher,
        synthetic.samples(),
        synthetic.labels(),
        &doped,
        ctx.cfg.ipc * k,
        details,
        "doped",
    )?;
    out.save(ws.path(DOPED_FILE))?;
    Ok(out)
}

/// Mean over classes of the unbiased MMD^2 to the class targets, each class
/// at the median within-target distance.
pub fn class_mmd(ctx: &Context, samples: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for c in 0..ctx.data.n_classes {
        let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        let targets = ctx.data.class_samples(c);
        let h = median_bandwidth(&targets, &targets);
        total += mmd2_unbiased(&samples.select(Axis(0), &rows), &targets, h)?;
    }
    Ok(total / ctx.data.n_classes as f64)
}

/// A random real subset with `per_class` rows from every class.
pub fn random_subset(data: &ToyDataset, per_class: usize, seed: u64) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for c in 0..data.n_classes {
        let idx = data.class_indices(c);
        if per_class > idx.len() {
            return Err(DscoError::Argument(format!(
                "class {c} has only {} samples",
                idx.len()
            )));
        }
        let mut r = rng::stream(seed, rng::streams::SELECTION + c as u64);
        out.extend(
            sample(&mut r, idx.len(), per_class)
                .into_iter()
                .map(|i| idx[i]),
        );
    }
    Ok(out)
}

/// Downstream accuracy of a classifier trained on teacher soft labels.
pub fn downstream_accuracy(
    teacher: &Classifier,
    samples: &Array2<f64>,
    test: &ToyDataset,
    cfg: &dsco_core::evalbench::ClassifierConfig,
    temperature: f64,
) -> Result<f64> {
    let soft = relabel(teacher, samples, temperature)?;
    let (c, _) = train_classifier(samples, Targets::Soft(&soft), teacher.n_classes(), cfg)?;
    evaluate(&c, &test.samples, &test.labels)
}

pub struct EvalOutcome {
    pub metrics: Vec<MetricRow>,
    pub groups: Array2<f64>,
}

pub fn cmd_eval(cfg: RunConfig, ws: &Workspace, dataset: Option<&Path>) -> Result<EvalOutcome> {
    ws.claim(&[METRICS_FILE, GROUPS_FILE])?;
    let ctx = Context::new(cfg)?;
    check_targets(&ctx, ws)?;
    let teacher = load_teacher(&ws.require(TEACHER_FILE, "train-diffusion")?)?;
    let path = match dataset {
        Some(p) => p.to_path_buf(),
        None => ws.require(CONCENTRATED_FILE, "concentrate")?,
    };
    let set = ConcentratedDataset::load(&path)?;
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset")
        .to_string();
    let test = ctx.test_set();
    let per_class = set.len() / ctx.data.n_classes;

    let set_mmd = class_mmd(&ctx, set.samples(), set.labels())?;
    let metrics: Vec<Vec<MetricRow>> = (0..ctx.cfg.eval_seeds as u64)
        .into_par_iter()
        .map(|s| {
            let seed = derive_seed(ctx.cfg.seed, seeds::EVAL_BASE + s);
            let ccfg = ctx.cfg.classifier(seed);
            let subset = random_subset(&ctx.data, per_class, seed)?;
            let rand_x = ctx.data.samples.select(Axis(0), &subset);
            let rand_y: Vec<usize> = subset.iter().map(|&i| ctx.data.labels[i]).collect();
            let row = |metric: &str, dataset: &str, value| MetricRow {
                metric: metric.into(),
                dataset: dataset.into(),
                seed: s,
                value,
            };
            Ok(vec![
                row(
                    "accuracy",
                    &name,
                    downstream_accuracy(
                        &teacher,
                        set.samples(),
                        &test,
                        &ccfg,
                        ctx.cfg.temperature,
                    )?,
                ),
                row(
                    "accuracy",
                    "random",
                    downstream_accuracy(&teacher, &rand_x, &test, &ccfg, ctx.cfg.temperature)?,
                ),
                row("mmd2", &name, set_mmd),
                row("mmd2", "random", class_mmd(&ctx, &rand_x, &rand_y)?),
            ])
        })
        .collect::<Result<_>>()?;
    let metrics: Vec<MetricRow> = metrics.into_iter().flatten().collect();
    ws.write(METRICS_FILE, &csv(METRICS_HEADER, &metrics, |m| m.to_csv()))?;

    let student = train_student(&teacher, set.samples(), &ctx.student_config())?;
    let records = confusion_records(&teacher, &student, &ctx.data.samples, ctx.cfg.temperature)?;
    let groups = mutual_l2_by_group(&ctx.data.samples, &records, ctx.cfg.n_groups)?;
    let header = (0..ctx.cfg.n_groups)
        .map(|g| format!("g{g}"))
        .collect::<Vec<_>>()
        .join(",");
    let rows = groups.rows().into_iter().enumerate().map(|(g, r)| {
        let mut line = format!("g{g}");
        for v in r {
            let _ = write!(line, ",{v}");
        }
        line
    });
    ws.write(GROUPS_FILE, &csv(&format!("group,{header}"), rows, |r| r))?;
    Ok(EvalOutcome { metrics, groups })
}

pub fn cmd_bias_demo(ws: &Workspace, n_exp: usize, sizes: &[usize], seed: u64) -> Result<String> {
    if sizes.is_empty() {
        return Err(DscoError::Config("at least one size is required".into()));
    }
    ws.claim(&[BIAS_FILE])?;
    let results = sizes
        .iter()
        .map(|&n| mc_occupancy(n_exp, n, derive_seed(seed, n as u64)))
        .collect::<Result<Vec<_>>>()?;
    let text = csv(BIAS_HEADER, &results, bias_row);
    ws.write(BIAS_FILE, &text)?;
    Ok(text)
}
