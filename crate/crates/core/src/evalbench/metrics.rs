use ndarray::Array2;

use crate::error::{DscoError, Result};

fn sq_dist(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Median pairwise distance over the pooled sample (median heuristic).
pub fn median_bandwidth(x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let rows: Vec<_> = x.rows().into_iter().chain(y.rows()).collect();
    let mut d = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            d.push(sq_dist(rows[i], rows[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d[d.len() / 2];
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

/// Unbiased Gaussian-kernel MMD^2, `k(a, b) = exp(-|a-b|^2 / (2 h^2))`.
/// May be negative.
pub fn mmd2_unbiased(x: &Array2<f64>, y: &Array2<f64>, bandwidth: f64) -> Result<f64> {
    if x.ncols() != y.ncols() {
        return Err(DscoError::Shape(format!(
            "MMD between {}-d and {}-d sets",
            x.ncols(),
            y.ncols()
        )));
    }
    let (m, n) = (x.nrows(), y.nrows());
    if m < 2 || n < 2 {
        return Err(DscoError::Argument(
            "unbiased MMD needs at least 2 samples per set".into(),
        ));
    }
    if !(bandwidth > 0.0) {
        return Err(DscoError::Argument("bandwidth must be positive".into()));
    }
    let gamma = 1.0 / (2.0 * bandwidth * bandwidth);
    let k = |a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>| {
        (-gamma * sq_dist(a, b)).exp()
    };
    let within = |s: &Array2<f64>| {
        let rows: Vec<_> = s.rows().into_iter().collect();
        let mut acc = 0.0;
        for i in 0..rows.len() {
            for j in i + 1..rows.len() {
                acc += 2.0 * k(rows[i], rows[j]);
            }
        }
        acc / (rows.len() * (rows.len() - 1)) as f64
    };
    let mut cross = 0.0;
    for a in x.rows() {
        for b in y.rows() {
            cross += k(a, b);
        }
    }
    Ok(within(x) + within(y) - 2.0 * cross / (m * n) as f64)
}

/// MMD^2 clamped at zero; `bandwidth = None` uses the median heuristic.
pub fn mmd(x: &Array2<f64>, y: &Array2<f64>, bandwidth: Option<f64>) -> Result<f64> {
    let h = bandwidth.unwrap_or_else(|| median_bandwidth(x, y));
    Ok(mmd2_unbiased(x, y, h)?.max(0.0))
}

/// Exact 1-D Wasserstein-1 distance between two empirical distributions,
/// integrating the gap between their quantile functions.
pub fn wasserstein1d(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(DscoError::Argument(
            "Wasserstein distance of an empty set".into(),
        ));
    }
    let mut a = x.to_vec();
    let mut b = y.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut u = 0.0;
    let mut total = 0.0;
    while i < n && j < m {
        let next_a = (i + 1) as f64 / n as f64;
        let next_b = (j + 1) as f64 / m as f64;
        let next = next_a.min(next_b);
        total += (next - u) * (a[i] - b[j]).abs();
        u = next;
        if next_a <= next {
            i += 1;
        }
        if next_b <= next {
            j += 1;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{gaussian_matrix, stream};

    #[test]
    fn wasserstein_hand_values() {
        assert_eq!(wasserstein1d(&[1.0, 2.0], &[2.0, 1.0]).unwrap(), 0.0);
        assert_eq!(wasserstein1d(&[0.0], &[1.0]).unwrap(), 1.0);
        assert!((wasserstein1d(&[0.0, 2.0], &[1.0, 3.0]).unwrap() - 1.0).abs() < 1e-12);
        // Unequal sizes: {0, 1} vs {0.5}: each half of the mass moves 0.5.
        assert!((wasserstein1d(&[0.0, 1.0], &[0.5]).unwrap() - 0.5).abs() < 1e-12);
        assert!(wasserstein1d(&[], &[1.0]).is_err());
    }

    #[test]
    fn mmd_is_symmetric_and_separates_shifted_sets() {
        let mut r = stream(1, 0);
        let x = gaussian_matrix(&mut r, 60, 1);
        let y = gaussian_matrix(&mut r, 50, 1) + 5.0;
        let a = mmd(&x, &y, Some(1.0)).unwrap();
        let b = mmd(&y, &x, Some(1.0)).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(a > 0.5);
        assert_eq!(mmd(&x, &x, None).unwrap(), 0.0);
        assert!(mmd(&x, &gaussian_matrix(&mut r, 5, 2), None).is_err());
    }
}
