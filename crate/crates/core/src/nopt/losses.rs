//! Noise-optimization losses. Each returns its value together with the
//! gradient with respect to its (row-per-sample) input.

use ndarray::{Array1, Array2, Axis};

use super::reference::DiffusedReference;
use crate::error::{DscoError, Result};
use crate::projector::{cross_normalize_rows, ChannelStats};

/// A scalar loss and its gradient, shaped like the differentiated input.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Array2<f64>,
}

impl LossGrad {
    fn zero(rows: usize, cols: usize) -> Self {
        Self {
            value: 0.0,
            grad: Array2::zeros((rows, cols)),
        }
    }

    fn scaled(mut self, k: f64) -> Self {
        self.value *= k;
        self.grad *= k;
        self
    }
}

/// `|x| + x^2`.
pub fn absn2(x: f64) -> f64 {
    x.abs() + x * x
}

/// Unsigned key whose integer order matches `f64::total_cmp`.
fn order_key(v: f64) -> u64 {
    let b = v.to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | 1 << 63
    }
}

/// `sign(x) * (1 + 2|x|)`, defined as 0 at `x = 0`.
pub fn absn2_grad(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.signum() * (1.0 + 2.0 * x.abs())
    }
}

/// Reality constraint `sum_s absn2(||eps_s|| - sqrt(d))` over noise rows.
///
/// An all-zero row has no defined norm gradient; it receives a zero
/// subgradient.
pub fn loss_reality(eps: &Array2<f64>) -> LossGrad {
    let d = eps.ncols();
    let target = (d as f64).sqrt();
    let mut out = LossGrad::zero(eps.nrows(), d);
    for (s, row) in eps.rows().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        let gap = norm - target;
        out.value += absn2(gap);
        if norm == 0.0 {
            log::debug!("reality: noise row {s} is all zeros; using zero subgradient");
            continue;
        }
        let k = absn2_grad(gap) / norm;
        out.grad.row_mut(s).assign(&(&row * k));
    }
    out
}

/// Sorted-quantile alignment of normalized surrogate features against the
/// reference's chunk means, summed over channels.
pub fn loss_channel_align(f_hat: &Array2<f64>, reference: &DiffusedReference) -> Result<LossGrad> {
    let n_s = reference.n_surrogate();
    let j = reference.channels();
    if f_hat.ncols() != j {
        return Err(DscoError::Shape(format!(
            "{} surrogate channels vs {j} reference channels",
            f_hat.ncols()
        )));
    }
    if f_hat.nrows() != n_s {
        return Err(DscoError::Shape(format!(
            "reference was chunked for {n_s} surrogates, got {}",
            f_hat.nrows()
        )));
    }
    let weight = n_s as f64;
    let chunk_means = reference.chunk_means();
    let mut out = LossGrad::zero(n_s, j);
    let cols = f_hat.t().as_standard_layout().into_owned();
    let means = chunk_means.t().as_standard_layout().into_owned();
    let mut grad_t = Array2::zeros((j, n_s));
    let mut keys: Vec<u128> = Vec::with_capacity(n_s);
    for c in 0..j {
        let col = cols.row(c);
        keys.clear();
        keys.extend(
            col.iter()
                .enumerate()
                .map(|(s, &v)| (order_key(v) as u128) << 64 | s as u128),
        );
        keys.sort_unstable();
        let m = means.row(c);
        let mut g = grad_t.row_mut(c);
        for (rank, &k) in keys.iter().enumerate() {
            let s = k as u64 as usize;
            let diff = col[s] - m[rank];
            out.value += weight * absn2(diff);
            g[s] = weight * absn2_grad(diff);
        }
    }
    out.grad.assign(&grad_t.t());
    Ok(out)
}

/// Data-accessible alignment: normalize raw pooled features by the
/// reference statistics, then `lambda * sum_j L_ch,j`.
pub fn loss_align_da(
    pooled: &Array2<f64>,
    reference: &DiffusedReference,
    lambda: f64,
) -> Result<LossGrad> {
    if lambda == 0.0 {
        return Ok(LossGrad::zero(pooled.nrows(), pooled.ncols()));
    }
    let stats = reference.stats();
    let f_hat = cross_normalize_rows(pooled, stats)?;
    let mut lg = loss_channel_align(&f_hat, reference)?.scaled(lambda);
    lg.grad /= &stats.std;
    Ok(lg)
}

fn cosine_grad(u: &Array1<f64>, v: &Array1<f64>) -> (f64, Array1<f64>, Array1<f64>) {
    let (nu, nv) = (u.dot(u).sqrt(), v.dot(v).sqrt());
    let dot = u.dot(v);
    let cos = dot / (nu * nv);
    let du = v / (nu * nv) - u * (cos / (nu * nu));
    let dv = u / (nu * nv) - v * (cos / (nv * nv));
    (cos, du, dv)
}

/// Maximal occupation: `sum_s cos(f_s, nn(f_s))`, where `nn` is the most
/// cosine-similar other row. Minimizing it spreads the rows apart.
pub fn loss_maxoc(features: &Array2<f64>) -> Result<LossGrad> {
    let n = features.nrows();
    if n < 2 {
        return Err(DscoError::Argument(
            "maximal occupation needs at least 2 samples".into(),
        ));
    }
    let norms: Vec<f64> = features
        .rows()
        .into_iter()
        .map(|r| r.dot(&r).sqrt())
        .collect();
    if let Some(s) = norms.iter().position(|&v| v == 0.0 || !v.is_finite()) {
        return Err(DscoError::Numerical {
            step: s,
            detail: "feature with zero or non-finite norm in maximal occupation".into(),
        });
    }
    let gram = features.dot(&features.t());
    let mut out = LossGrad::zero(n, features.ncols());
    for s in 0..n {
        let nn = (0..n)
            .filter(|&o| o != s)
            .max_by(|&a, &b| {
                let ca = gram[[s, a]] / norms[a];
                let cb = gram[[s, b]] / norms[b];
                // Lowest index wins ties.
                ca.total_cmp(&cb).then(b.cmp(&a))
            })
            .expect("n >= 2");
        let (u, v) = (features.row(s).to_owned(), features.row(nn).to_owned());
        let (cos, du, dv) = cosine_grad(&u, &v);
        out.value += cos;
        let mut gs = out.grad.row_mut(s);
        gs += &du;
        let mut gn = out.grad.row_mut(nn);
        gn += &dv;
    }
    Ok(out)
}

/// `sum_j absn2(mean_j) + absn2(std_j - 1)` over population channel
/// statistics of already cross-normalized rows.
pub fn loss_stats(features: &Array2<f64>) -> Result<LossGrad> {
    let n = features.nrows();
    if n < 2 {
        return Err(DscoError::Argument(
            "statistics loss needs at least 2 samples".into(),
        ));
    }
    let nf = n as f64;
    let mean = features.mean_axis(Axis(0)).expect("n >= 2");
    let centered = features - &mean;
    let std = centered
        .mapv(|v| v * v)
        .mean_axis(Axis(0))
        .expect("n >= 2")
        .mapv(f64::sqrt);
    let mut out = LossGrad::zero(n, features.ncols());
    for j in 0..features.ncols() {
        out.value += absn2(mean[j]) + absn2(std[j] - 1.0);
        let g_mean = absn2_grad(mean[j]) / nf;
        let g_std = if std[j] > 0.0 {
            absn2_grad(std[j] - 1.0) / (nf * std[j])
        } else {
            0.0
        };
        for s in 0..n {
            out.grad[[s, j]] = g_mean + g_std * centered[[s, j]];
        }
    }
    Ok(out)
}

/// Data-free alignment: cross-normalize raw pooled features by template
/// statistics, then `lambda_stats * L_stats + lambda_maxoc * L_maxoc`.
pub fn loss_align_df(
    pooled: &Array2<f64>,
    template: &ChannelStats,
    lambda_stats: f64,
    lambda_maxoc: f64,
) -> Result<LossGrad> {
    let mut total = LossGrad::zero(pooled.nrows(), pooled.ncols());
    if lambda_stats == 0.0 && lambda_maxoc == 0.0 {
        return Ok(total);
    }
    let f_bar = cross_normalize_rows(pooled, template)?;
    if lambda_stats != 0.0 {
        let s = loss_stats(&f_bar)?.scaled(lambda_stats);
        total.value += s.value;
        total.grad += &s.grad;
    }
    if lambda_maxoc != 0.0 {
        let m = loss_maxoc(&f_bar)?.scaled(lambda_maxoc);
        total.value += m.value;
        total.grad += &m.grad;
    }
    total.grad /= &template.std;
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projector::channel_stats;
    use crate::projector::Shape3;
    use crate::rng::{gaussian_matrix, stream};
    use ndarray::arr2;

    #[test]
    fn absn2_hand_values() {
        assert_eq!(absn2(0.0), 0.0);
        assert_eq!(absn2_grad(0.0), 0.0);
        assert_eq!(absn2(2.0), 6.0);
        assert_eq!(absn2(-1.0), 2.0);
        assert_eq!(absn2_grad(-1.0), -3.0);
    }

    #[test]
    fn reality_on_shell_and_off_shell() {
        assert_eq!(loss_reality(&arr2(&[[1.0, 1.0, 1.0, 1.0]])).value, 0.0);
        assert_eq!(loss_reality(&arr2(&[[3.0, 0.0, 0.0, 0.0]])).value, 2.0);
        let zero = loss_reality(&arr2(&[[0.0, 0.0]]));
        assert_eq!(zero.value, absn2(-(2f64).sqrt()));
        assert!(zero.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn channel_align_hand_value_and_zero_case() {
        let r = DiffusedReference::from_normalized(arr2(&[[0.2], [0.4], [0.6]]), 1).unwrap();
        let lg = loss_channel_align(&arr2(&[[0.5]]), &r).unwrap();
        assert!((lg.value - 0.11).abs() < 1e-12);

        let r = DiffusedReference::from_normalized(arr2(&[[3.0], [1.0], [2.0], [0.0]]), 2).unwrap();
        let lg = loss_channel_align(&arr2(&[[2.5], [0.5]]), &r).unwrap();
        assert_eq!(lg.value, 0.0);
        assert!(loss_channel_align(&arr2(&[[2.5, 1.0], [0.5, 1.0]]), &r).is_err());
    }

    #[test]
    fn align_da_scales_linearly_with_lambda() {
        let mut rng = stream(1, 0);
        let r = DiffusedReference::from_pooled(gaussian_matrix(&mut rng, 12, 3), 4).unwrap();
        let f = gaussian_matrix(&mut rng, 4, 3);
        let zero = loss_align_da(&f, &r, 0.0).unwrap();
        assert_eq!(zero.value, 0.0);
        assert!(zero.grad.iter().all(|&g| g == 0.0));
        let a = loss_align_da(&f, &r, 5e-4).unwrap();
        let b = loss_align_da(&f, &r, 1e-3).unwrap();
        assert!((b.value - 2.0 * a.value).abs() < 1e-15);
        assert!((&b.grad - &(&a.grad * 2.0)).iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn maxoc_hand_values() {
        let same = loss_maxoc(&arr2(&[[1.0, 2.0], [1.0, 2.0]])).unwrap();
        assert!((same.value - 2.0).abs() < 1e-12);
        let ortho = loss_maxoc(&arr2(&[[1.0, 0.0], [0.0, 3.0]])).unwrap();
        assert!(ortho.value.abs() < 1e-12);
        let anti = loss_maxoc(&arr2(&[[1.0, 1.0], [-2.0, -2.0]])).unwrap();
        assert!((anti.value + 2.0).abs() < 1e-12);
        assert!(matches!(
            loss_maxoc(&arr2(&[[1.0, 0.0]])),
            Err(DscoError::Argument(_))
        ));
        assert!(matches!(
            loss_maxoc(&arr2(&[[1.0, 0.0], [0.0, 0.0]])),
            Err(DscoError::Numerical { .. })
        ));
    }

    #[test]
    fn maxoc_ignores_positive_rescaling() {
        let mut rng = stream(2, 0);
        let f = gaussian_matrix(&mut rng, 6, 5);
        let mut scaled = f.clone();
        for (s, mut row) in scaled.rows_mut().into_iter().enumerate() {
            row *= 0.1 + s as f64 * 1.7;
        }
        let a = loss_maxoc(&f).unwrap().value;
        let b = loss_maxoc(&scaled).unwrap().value;
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn stats_hand_values() {
        let standard = arr2(&[[-1.0, 1.0], [1.0, -1.0]]);
        assert!(loss_stats(&standard).unwrap().value.abs() < 1e-12);
        // Channel 0 has mean 1, std 1; channel 1 is standard.
        let shifted = arr2(&[[0.0, 1.0], [2.0, -1.0]]);
        assert!((loss_stats(&shifted).unwrap().value - 2.0).abs() < 1e-12);
        assert!(loss_stats(&arr2(&[[0.0, 1.0]])).is_err());
    }

    #[test]
    fn align_df_cases() {
        let mut rng = stream(3, 0);
        let templates = gaussian_matrix(&mut rng, 20, 4) * 2.0 + 0.5;
        let stats = channel_stats(&templates, Shape3::new(4, 1, 1)).unwrap();
        assert_eq!(
            loss_align_df(&templates, &stats, 0.0, 0.0).unwrap().value,
            0.0
        );
        let only_stats = loss_align_df(&templates, &stats, 1.0, 0.0).unwrap();
        assert!(only_stats.value.abs() < 1e-12);
    }
}
