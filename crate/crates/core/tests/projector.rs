use dsco_core::projector::{
    channel_correlation, gap_pool, ProjectorConfig, RandomProjector, Shape3,
};
use dsco_core::rng::{gaussian_matrix, stream};
use ndarray::{Array2, Array3};

/// Smooth random bump confined to a 12x12 patch at `(top, left)` of a 32x32
/// canvas; zero elsewhere.
fn patch(seed: u64, top: usize, left: usize) -> Array3<f64> {
    let noise = gaussian_matrix(&mut stream(seed, 0), 14, 14);
    Array3::from_shape_fn((1, 32, 32), |(_, i, j)| {
        if !(top..top + 12).contains(&i) || !(left..left + 12).contains(&j) {
            return 0.0;
        }
        let (a, b) = (i - top, j - left);
        (0..3)
            .flat_map(|di| (0..3).map(move |dj| (di, dj)))
            .map(|(di, dj)| noise[[a + di, b + dj]])
            .sum::<f64>()
            / 3.0
    })
}

#[test]
fn pooled_features_tolerate_stride_aligned_shifts() {
    let cfg = ProjectorConfig::desk(Shape3::new(1, 32, 32));
    let out = {
        let p = RandomProjector::new(0, cfg.clone()).unwrap();
        p.output_shape()
    };
    // One stride-1 layer followed by three stride-2 layers.
    let shift = 8;
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let p = RandomProjector::new(seed, cfg.clone()).unwrap();
        let z = patch(100 + seed, 4, 4);
        let a = gap_pool(&p.project(z.as_slice().unwrap()).unwrap(), out).unwrap();
        let shifted = patch(100 + seed, 4 + shift, 4 + shift);
        let b = gap_pool(&p.project(shifted.as_slice().unwrap()).unwrap(), out).unwrap();
        let rel = (&a - &b).mapv(|v| v * v).sum().sqrt() / a.mapv(|v| v * v).sum().sqrt();
        worst = worst.max(rel);
    }
    println!("worst relative pooled change under shift: {worst:.4}");
    assert!(worst < 0.10, "{worst}");
}

fn mean_abs_correlation(width: usize, seed: u64, inputs: &Array2<f64>) -> f64 {
    let cfg = ProjectorConfig {
        input: Shape3::new(1, 4, 4),
        widths: vec![width / 4, width / 2, width],
        groups: 4,
    };
    let p = RandomProjector::new(seed, cfg).unwrap();
    channel_correlation(&p.project_pooled(inputs).unwrap())
        .unwrap()
        .mean_abs_off_diagonal()
}

#[test]
fn channel_correlation_shrinks_with_width() {
    let inputs = gaussian_matrix(&mut stream(9, 0), 1000, 16);
    let mut monotone = 0;
    for seed in 0..5 {
        let curve: Vec<f64> = [32, 128, 512]
            .iter()
            .map(|&w| mean_abs_correlation(w, seed, &inputs))
            .collect();
        println!("seed {seed}: {curve:?}");
        if curve.windows(2).all(|p| p[1] <= p[0]) {
            monotone += 1;
        }
    }
    assert!(monotone >= 4, "{monotone}/5 seeds monotone");
}

#[test]
fn backward_matches_finite_differences_on_small_instances() {
    let cfg = ProjectorConfig {
        input: Shape3::new(1, 5, 5),
        widths: vec![8, 16, 32],
        groups: 4,
    };
    let mut rng = stream(3, 1);
    for seed in 0..5 {
        let p = RandomProjector::new(seed, cfg.clone()).unwrap();
        let z = gaussian_matrix(&mut rng, 1, 25).row(0).to_vec();
        let u = gaussian_matrix(&mut rng, 1, p.output_shape().len())
            .row(0)
            .to_vec();
        let phi = |x: &[f64]| {
            p.project(x)
                .unwrap()
                .iter()
                .zip(&u)
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        let g = p.project_backward(&z, &u).unwrap();
        let h = 1e-6;
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..z.len() {
            let (mut a, mut b) = (z.clone(), z.clone());
            a[k] += h;
            b[k] -= h;
            let fd = (phi(&a) - phi(&b)) / (2.0 * h);
            num += (fd - g[k]).powi(2);
            den += fd * fd;
        }
        assert!((num / den).sqrt() < 1e-4);
    }
}
