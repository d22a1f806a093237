use ndarray::Array2;

use crate::diffusion::{diffuse, NoiseSchedule};
use crate::error::{DscoError, Result};
use crate::projector::{
    channel_stats, cross_normalize_rows, ChannelStats, RandomProjector, Shape3,
};
use crate::rng::{gaussian_matrix, Rng};

/// Smallest repeat count `r` with `r * n_targets` divisible by `n_surrogate`
/// and `r * n_targets / n_surrogate >= min_ratio`.
pub fn repeat_count(n_targets: usize, n_surrogate: usize, min_ratio: usize) -> Result<usize> {
    if n_targets == 0 || n_surrogate == 0 {
        return Err(DscoError::Argument(
            "target and surrogate counts must be >= 1".into(),
        ));
    }
    let mut r = 1;
    loop {
        let total = r * n_targets;
        if total % n_surrogate == 0 && total / n_surrogate >= min_ratio {
            return Ok(r);
        }
        r += 1;
    }
}

/// Normalized pooled features of the diffused targets at one step, with the
/// per-rank chunk means the surrogates are matched against.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusedReference {
    normalized: Array2<f64>,
    stats: ChannelStats,
    n_surrogate: usize,
    /// `[rank][channel]` mean of the rank-th ascending chunk.
    chunk_means: Array2<f64>,
}

impl DiffusedReference {
    /// Takes raw pooled features (`N_Diff x J`), normalizes them by their own
    /// channel statistics, and chunks each channel.
    pub fn from_pooled(pooled: Array2<f64>, n_surrogate: usize) -> Result<Self> {
        let stats = channel_stats(&pooled, Shape3::new(pooled.ncols(), 1, 1))?;
        let normalized = cross_normalize_rows(&pooled, &stats)?;
        Self::build(normalized, stats, n_surrogate)
    }

    /// Uses already-normalized values as-is (identity statistics).
    pub fn from_normalized(normalized: Array2<f64>, n_surrogate: usize) -> Result<Self> {
        let j = normalized.ncols();
        let stats = ChannelStats {
            mean: ndarray::Array1::zeros(j),
            std: ndarray::Array1::ones(j),
        };
        Self::build(normalized, stats, n_surrogate)
    }

    fn build(normalized: Array2<f64>, stats: ChannelStats, n_surrogate: usize) -> Result<Self> {
        let n_diff = normalized.nrows();
        if n_surrogate == 0 || n_diff == 0 || n_diff % n_surrogate != 0 {
            return Err(DscoError::Argument(format!(
                "{n_diff} reference rows cannot be chunked for {n_surrogate} surrogates"
            )));
        }
        let chunk = n_diff / n_surrogate;
        let j = normalized.ncols();
        let mut chunk_means = Array2::zeros((n_surrogate, j));
        let mut col = Vec::with_capacity(n_diff);
        for c in 0..j {
            col.clear();
            col.extend(normalized.column(c).iter().copied());
            col.sort_by(f64::total_cmp);
            for (rank, group) in col.chunks_exact(chunk).enumerate() {
                chunk_means[[rank, c]] = group.iter().sum::<f64>() / chunk as f64;
            }
        }
        Ok(Self {
            normalized,
            stats,
            n_surrogate,
            chunk_means,
        })
    }

    pub fn normalized(&self) -> &Array2<f64> {
        &self.normalized
    }

    pub fn stats(&self) -> &ChannelStats {
        &self.stats
    }

    pub fn channels(&self) -> usize {
        self.normalized.ncols()
    }

    pub fn n_surrogate(&self) -> usize {
        self.n_surrogate
    }

    pub fn n_diff(&self) -> usize {
        self.normalized.nrows()
    }

    pub fn n_chunk(&self) -> usize {
        self.n_diff() / self.n_surrogate
    }

    pub fn chunk_means(&self) -> &Array2<f64> {
        &self.chunk_means
    }
}

/// Diffuses every target `r` times to step `t` with fresh noise from `rng`,
/// projects and pools the results, and builds the normalized reference.
pub fn build_diffused_reference(
    targets: &Array2<f64>,
    t: usize,
    n_surrogate: usize,
    min_ratio: usize,
    schedule: &NoiseSchedule,
    projector: &RandomProjector,
    rng: &mut Rng,
) -> Result<DiffusedReference> {
    if targets.nrows() == 0 {
        return Err(DscoError::Argument(
            "reference needs at least one target".into(),
        ));
    }
    let r = repeat_count(targets.nrows(), n_surrogate, min_ratio)?;
    let (n, d) = targets.dim();
    let mut stacked = Array2::zeros((n * r, d));
    for k in 0..r {
        let eps = gaussian_matrix(rng, n, d);
        let zt = diffuse(targets, t, &eps, schedule)?;
        stacked
            .slice_mut(ndarray::s![k * n..(k + 1) * n, ..])
            .assign(&zt);
    }
    let pooled = projector.project_pooled(&stacked)?;
    DiffusedReference::from_pooled(pooled, n_surrogate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::ScheduleKind;
    use crate::projector::ProjectorConfig;
    use crate::rng::stream;

    #[test]
    fn repeat_count_examples() {
        assert_eq!(repeat_count(10, 10, 5).unwrap(), 5);
        assert_eq!(repeat_count(3, 2, 5).unwrap(), 4);
        assert_eq!(repeat_count(400, 32, 5).unwrap(), 2);
        assert!(repeat_count(0, 2, 5).is_err());
    }

    #[test]
    fn built_reference_sizes_and_normalization() {
        let schedule = NoiseSchedule::new(20, ScheduleKind::Linear).unwrap();
        let projector = RandomProjector::new(
            1,
            ProjectorConfig {
                input: Shape3::for_dim(2),
                widths: vec![16, 32, 64],
                groups: 8,
            },
        )
        .unwrap();
        let targets = gaussian_matrix(&mut stream(2, 0), 3, 2);
        let r =
            build_diffused_reference(&targets, 7, 2, 5, &schedule, &projector, &mut stream(3, 0))
                .unwrap();
        assert_eq!(r.n_diff(), 12);
        assert_eq!(r.n_chunk(), 6);
        let check = channel_stats(r.normalized(), Shape3::new(r.channels(), 1, 1)).unwrap();
        for j in 0..r.channels() {
            assert!(check.mean[j].abs() < 1e-9);
            assert!(
                (check.std[j] - 1.0).abs() < 1e-9
                    || r.stats().std[j] == crate::projector::STD_FLOOR
            );
        }
        let empty = Array2::zeros((0, 2));
        assert!(build_diffused_reference(
            &empty,
            7,
            2,
            5,
            &schedule,
            &projector,
            &mut stream(3, 0)
        )
        .is_err());
    }
}
