//! Desk-scale evaluation: toy mixtures, downstream classifiers, teacher
//! relabeling, distribution metrics, and the confusion-group diagnostic.

mod classifier;
mod groups;
mod metrics;
mod toy;

pub use classifier::{
    cross_entropy, evaluate, one_hot, relabel, train_classifier, Classifier, ClassifierConfig,
    Targets, TrainingCurves,
};
pub use groups::mutual_l2_by_group;
pub use metrics::{median_bandwidth, mmd, mmd2_unbiased, wasserstein1d};
pub use toy::{make_gaussian_mixture, MixtureSpec, ToyDataset};

/// One row of a metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    pub dataset: String,
    pub seed: u64,
    pub value: f64,
}

pub const METRICS_HEADER: &str = "metric,dataset,seed,value";

impl MetricRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{}",
            self.metric, self.dataset, self.seed, self.value
        )
    }
}
