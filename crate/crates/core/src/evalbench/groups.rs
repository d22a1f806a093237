use ndarray::Array2;

use crate::doping::ConfusionRecord;
use crate::error::{DscoError, Result};

/// Average intra-class nearest-neighbour L2 distance between confusion
/// groups.
///
/// Records are sorted by descending score (ties by index) and split into
/// `n_groups` contiguous groups, group 0 holding the most confused samples.
/// Entry `(a, b)` averages, over samples of `a`, the distance to the nearest
/// other same-class sample of `b`, symmetrized with the `(b, a)` direction.
/// Entries with no same-class pair are NaN.
pub fn mutual_l2_by_group(
    latents: &Array2<f64>,
    records: &[ConfusionRecord],
    n_groups: usize,
) -> Result<Array2<f64>> {
    if n_groups == 0 {
        return Err(DscoError::Argument("need at least one group".into()));
    }
    if records.iter().any(|r| r.index >= latents.nrows()) {
        return Err(DscoError::Argument(
            "confusion record indexes past the latent set".into(),
        ));
    }
    let n = records.len();
    if n / n_groups < 2 {
        return Err(DscoError::Argument(format!(
            "{n} samples give groups smaller than 2 for {n_groups} groups"
        )));
    }
    let mut sorted: Vec<&ConfusionRecord> = records.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.index.cmp(&b.index)));
    let groups: Vec<&[&ConfusionRecord]> = (0..n_groups)
        .map(|g| &sorted[g * n / n_groups..(g + 1) * n / n_groups])
        .collect();

    let directed = |from: &[&ConfusionRecord], to: &[&ConfusionRecord]| -> (f64, usize) {
        let mut sum = 0.0;
        let mut count = 0;
        for a in from {
            let best = to
                .iter()
                .filter(|b| b.index != a.index && b.class == a.class)
                .map(|b| {
                    latents
                        .row(a.index)
                        .iter()
                        .zip(latents.row(b.index).iter())
                        .map(|(x, y)| (x - y).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            if best.is_finite() {
                sum += best;
                count += 1;
            }
        }
        (sum, count)
    };

    let mut out = Array2::from_elem((n_groups, n_groups), f64::NAN);
    for a in 0..n_groups {
        for b in a..n_groups {
            let (s1, c1) = directed(groups[a], groups[b]);
            let (s2, c2) = if a == b {
                (0.0, 0)
            } else {
                directed(groups[b], groups[a])
            };
            let means: Vec<f64> = [(s1, c1), (s2, c2)]
                .iter()
                .filter(|(_, c)| *c > 0)
                .map(|(s, c)| s / *c as f64)
                .collect();
            if !means.is_empty() {
                let v = means.iter().sum::<f64>() / means.len() as f64;
                out[[a, b]] = v;
                out[[b, a]] = v;
            }
        }
    }
    Ok(out)
}
