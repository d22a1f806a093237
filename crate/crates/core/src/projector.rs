//! Fixed random grouped-convolution feature projector.
//!
//! Stacks 3x3 convolutions with leaky-rectifier activations and no
//! normalization or final linear layer. The first layer has stride 1 and
//! mixes all input channels; later layers use stride 2 and `groups`
//! independent channel groups. Desk-scale widths are the reference
//! `(256, 512, 1024, 2048)` divided by 8.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{DscoError, Result};
use crate::rng::{self, gaussian, streams};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const STD_FLOOR: f64 = 1e-6;
const KERNEL: usize = 3;

/// `(channels, height, width)` of a latent or feature tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape3 {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape3 {
    pub const fn new(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w }
    }

    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spatial(&self) -> usize {
        self.h * self.w
    }

    /// Single-channel layout for a flat vector of `dim` values, as square as
    /// the factorization allows.
    pub fn for_dim(dim: usize) -> Self {
        let mut h = (dim as f64).sqrt().floor() as usize;
        while h > 1 && dim % h != 0 {
            h -= 1;
        }
        let h = h.max(1);
        Self::new(1, h, dim / h)
    }

    pub fn as_vec(&self) -> Vec<usize> {
        vec![self.c, self.h, self.w]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectorConfig {
    pub input: Shape3,
    pub widths: Vec<usize>,
    pub groups: usize,
}

impl ProjectorConfig {
    /// Desk-scale default: widths `(32, 64, 128, 256)`, 16 groups.
    pub fn desk(input: Shape3) -> Self {
        Self {
            input,
            widths: vec![32, 64, 128, 256],
            groups: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input.is_empty() {
            return Err(DscoError::Config(
                "projector input shape has a zero dimension".into(),
            ));
        }
        if !(3..=4).contains(&self.widths.len()) {
            return Err(DscoError::Config(format!(
                "projector needs 3 or 4 layers, got {}",
                self.widths.len()
            )));
        }
        if self.groups == 0 {
            return Err(DscoError::Config("group count must be >= 1".into()));
        }
        if let Some(w) = self
            .widths
            .iter()
            .find(|&&w| w == 0 || w % self.groups != 0)
        {
            return Err(DscoError::Config(format!(
                "width {w} is not a positive multiple of {} groups",
                self.groups
            )));
        }
        if self.widths[self.widths.len() - 1] <= self.input.c {
            return Err(DscoError::Config(
                "output channels must exceed input channels".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ConvLayer {
    in_shape: Shape3,
    out_shape: Shape3,
    groups: usize,
    stride: usize,
    /// `[out][in_per_group][ky][kx]`
    weights: Vec<f64>,
    bias: Vec<f64>,
    taps: Vec<Vec<(usize, usize)>>,
    packed: Vec<f64>,
}

impl ConvLayer {
    fn in_per_group(&self) -> usize {
        self.in_shape.c / self.groups
    }

    fn out_per_group(&self) -> usize {
        self.out_shape.c / self.groups
    }

    /// Input coordinate for output `y` and kernel tap `k`, if inside.
    fn source(&self, y: usize, k: usize, limit: usize) -> Option<usize> {
        let pos = (y * self.stride + k) as isize - (KERNEL / 2) as isize;
        (pos >= 0 && (pos as usize) < limit).then_some(pos as usize)
    }

    /// `(tap, input spatial offset)` pairs inside the input for every output
    /// position, row-major.
    fn taps(&self) -> Vec<Vec<(usize, usize)>> {
        let (ins, outs) = (self.in_shape, self.out_shape);
        let mut all = Vec::with_capacity(outs.spatial());
        for y in 0..outs.h {
            for xo in 0..outs.w {
                let mut taps = Vec::with_capacity(KERNEL * KERNEL);
                for ky in 0..KERNEL {
                    let Some(iy) = self.source(y, ky, ins.h) else {
                        continue;
                    };
                    for kx in 0..KERNEL {
                        let Some(ix) = self.source(xo, kx, ins.w) else {
                            continue;
                        };
                        taps.push((ky * KERNEL + kx, iy * ins.w + ix));
                    }
                }
                all.push(taps);
            }
        }
        all
    }

    /// Weights regrouped as `[out][tap][in_per_group]` for the inner loops.
    fn pack(&self) -> Vec<f64> {
        let ipg = self.in_per_group();
        let taps = KERNEL * KERNEL;
        let mut packed = vec![0.0; self.weights.len()];
        for o in 0..self.out_shape.c {
            for ic in 0..ipg {
                for k in 0..taps {
                    packed[(o * taps + k) * ipg + ic] = self.weights[(o * ipg + ic) * taps + k];
                }
            }
        }
        packed
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let (ins, outs) = (self.in_shape, self.out_shape);
        let (ipg, opg) = (self.in_per_group(), self.out_per_group());
        let (in_hw, out_hw) = (ins.spatial(), outs.spatial());
        // Channel-last copy so every tap reads a contiguous channel run.
        let xt = to_channel_last(x, ins.c, in_hw);
        let mut out = vec![0.0; outs.len()];
        for o in 0..outs.c {
            let base = (o / opg) * ipg;
            for (pos, taps) in self.taps.iter().enumerate() {
                let mut acc = self.bias[o];
                for &(k, off) in taps {
                    let w = &self.packed[(o * KERNEL * KERNEL + k) * ipg..][..ipg];
                    let xs = &xt[off * ins.c + base..][..ipg];
                    acc += w.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>();
                }
                out[o * out_hw + pos] = acc;
            }
        }
        out
    }

    /// Gradient w.r.t. the layer input given the gradient w.r.t. its
    /// pre-activation output.
    fn backward(&self, grad_out: &[f64]) -> Vec<f64> {
        let (ins, outs) = (self.in_shape, self.out_shape);
        let (ipg, opg) = (self.in_per_group(), self.out_per_group());
        let (in_hw, out_hw) = (ins.spatial(), outs.spatial());
        let mut dxt = vec![0.0; ins.len()];
        for o in 0..outs.c {
            let base = (o / opg) * ipg;
            for (pos, taps) in self.taps.iter().enumerate() {
                let g = grad_out[o * out_hw + pos];
                if g == 0.0 {
                    continue;
                }
                for &(k, off) in taps {
                    let w = &self.packed[(o * KERNEL * KERNEL + k) * ipg..][..ipg];
                    for (d, wi) in dxt[off * ins.c + base..][..ipg].iter_mut().zip(w) {
                        *d += wi * g;
                    }
                }
            }
        }
        let mut dx = vec![0.0; ins.len()];
        for (p, chunk) in dxt.chunks_exact(ins.c).enumerate() {
            for (c, &v) in chunk.iter().enumerate() {
                dx[c * in_hw + p] = v;
            }
        }
        dx
    }
}

fn to_channel_last(x: &[f64], c: usize, hw: usize) -> Vec<f64> {
    if hw == 1 {
        return x.to_vec();
    }
    let mut out = vec![0.0; x.len()];
    for ch in 0..c {
        for p in 0..hw {
            out[p * c + ch] = x[ch * hw + p];
        }
    }
    out
}

fn leaky(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

fn leaky_grad(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// Immutable random projector; weights are a pure function of `(seed, cfg)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomProjector {
    cfg: ProjectorConfig,
    seed: u64,
    layers: Vec<ConvLayer>,
}

/// Pre-activations recorded by a forward pass, reused by the backward pass.
#[derive(Debug, Clone)]
pub struct ProjectionTrace {
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl ProjectionTrace {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

impl RandomProjector {
    pub fn new(seed: u64, cfg: ProjectorConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng::stream(seed, streams::INIT);
        let mut layers = Vec::with_capacity(cfg.widths.len());
        let mut in_shape = cfg.input;
        for (l, &width) in cfg.widths.iter().enumerate() {
            let (groups, stride) = if l == 0 { (1, 1) } else { (cfg.groups, 2) };
            let out_shape = Shape3::new(
                width,
                (in_shape.h - 1) / stride + 1,
                (in_shape.w - 1) / stride + 1,
            );
            let ipg = in_shape.c / groups;
            let fan_in = (ipg * KERNEL * KERNEL) as f64;
            let scale = (2.0 / ((1.0 + LEAKY_SLOPE * LEAKY_SLOPE) * fan_in)).sqrt();
            let weights = (0..width * ipg * KERNEL * KERNEL)
                .map(|_| gaussian(&mut rng) * scale)
                .collect();
            let mut layer = ConvLayer {
                in_shape,
                out_shape,
                groups,
                stride,
                weights,
                bias: vec![0.0; width],
                taps: Vec::new(),
                packed: Vec::new(),
            };
            layer.taps = layer.taps();
            layer.packed = layer.pack();
            layers.push(layer);
            in_shape = out_shape;
        }
        Ok(Self { cfg, seed, layers })
    }

    pub fn config(&self) -> &ProjectorConfig {
        &self.cfg
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_shape(&self) -> Shape3 {
        self.cfg.input
    }

    pub fn output_shape(&self) -> Shape3 {
        self.layers.last().expect("validated non-empty").out_shape
    }

    /// Every weight, layer by layer.
    pub fn weights(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().copied())
            .collect()
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.cfg.input.len() {
            return Err(DscoError::Shape(format!(
                "projector expects {:?} ({} values), got {len}",
                self.cfg.input,
                self.cfg.input.len()
            )));
        }
        Ok(())
    }

    pub fn trace(&self, z: &[f64]) -> Result<ProjectionTrace> {
        self.check_input(z.len())?;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = z.to_vec();
        for layer in &self.layers {
            let p = layer.forward(&x);
            x = p.iter().map(|&v| leaky(v)).collect();
            pre.push(p);
        }
        Ok(ProjectionTrace { pre, output: x })
    }

    /// Feature `(J, K, L)` flattened channel-major.
    pub fn project(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.trace(z)?.output)
    }

    pub fn backward_from(&self, trace: &ProjectionTrace, upstream: &[f64]) -> Result<Vec<f64>> {
        if upstream.len() != trace.output.len() {
            return Err(DscoError::Shape(format!(
                "upstream has {} values, feature has {}",
                upstream.len(),
                trace.output.len()
            )));
        }
        let mut g = upstream.to_vec();
        for (layer, pre) in self.layers.iter().zip(&trace.pre).rev() {
            for (gi, &p) in g.iter_mut().zip(pre) {
                *gi *= leaky_grad(p);
            }
            g = layer.backward(&g);
        }
        Ok(g)
    }

    /// Gradient of `<upstream, project(z)>` with respect to `z`.
    pub fn project_backward(&self, z: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        let trace = self.trace(z)?;
        self.backward_from(&trace, upstream)
    }

    /// Pooled features (`N x J`) for every row of `z`.
    pub fn project_pooled(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        let out = self.output_shape();
        let mut pooled = Array2::zeros((z.nrows(), out.c));
        for (i, row) in z.rows().into_iter().enumerate() {
            let f = self.project(&row.to_vec())?;
            pooled.row_mut(i).assign(&gap_pool(&f, out)?);
        }
        Ok(pooled)
    }
}

/// Per-channel spatial mean of a `(J, K, L)` feature.
pub fn gap_pool(f: &[f64], shape: Shape3) -> Result<Array1<f64>> {
    if f.len() != shape.len() {
        return Err(DscoError::Shape(format!(
            "feature of {} values does not match {shape:?}",
            f.len()
        )));
    }
    let area = shape.spatial();
    Ok(f.chunks_exact(area)
        .map(|c| c.iter().sum::<f64>() / area as f64)
        .collect())
}

/// Channel-wise mean and floored population std.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl ChannelStats {
    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

/// Statistics over all samples and spatial positions of each channel.
/// Rows of `features` are flattened `(J, K, L)` tensors of `shape`.
pub fn channel_stats(features: &Array2<f64>, shape: Shape3) -> Result<ChannelStats> {
    if features.nrows() == 0 {
        return Err(DscoError::Argument(
            "channel statistics of an empty set".into(),
        ));
    }
    if features.ncols() != shape.len() {
        return Err(DscoError::Shape(format!(
            "features have {} columns, shape {shape:?} needs {}",
            features.ncols(),
            shape.len()
        )));
    }
    let area = shape.spatial();
    let count = (features.nrows() * area) as f64;
    let mut mean = Array1::zeros(shape.c);
    let mut std = Array1::zeros(shape.c);
    for j in 0..shape.c {
        let block = features.slice(ndarray::s![.., j * area..(j + 1) * area]);
        let m = block.sum() / count;
        let var = block.iter().map(|v| (v - m).powi(2)).sum::<f64>() / count;
        mean[j] = m;
        std[j] = var.sqrt().max(STD_FLOOR);
    }
    Ok(ChannelStats { mean, std })
}

/// `(f - mean_j) / std_j` for every element of channel `j`.
pub fn cross_normalize(
    f: ArrayView1<'_, f64>,
    stats: &ChannelStats,
    shape: Shape3,
) -> Result<Array1<f64>> {
    if shape.c != stats.channels() || f.len() != shape.len() {
        return Err(DscoError::Shape(format!(
            "cannot normalize {} values of {shape:?} with {}-channel stats",
            f.len(),
            stats.channels()
        )));
    }
    let area = shape.spatial();
    Ok(f.iter()
        .enumerate()
        .map(|(i, &v)| {
            let j = i / area;
            (v - stats.mean[j]) / stats.std[j]
        })
        .collect())
}

/// Normalizes every row of a pooled set (`N x J`).
pub fn cross_normalize_rows(pooled: &Array2<f64>, stats: &ChannelStats) -> Result<Array2<f64>> {
    if pooled.ncols() != stats.channels() {
        return Err(DscoError::Shape(format!(
            "{} pooled channels vs {}-channel stats",
            pooled.ncols(),
            stats.channels()
        )));
    }
    Ok((pooled - &stats.mean) / &stats.std)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub matrix: Array2<f64>,
    /// Channels whose variance vanished; their rows/columns are zero.
    pub degenerate: Vec<usize>,
}

impl CorrelationMatrix {
    pub fn mean_abs_off_diagonal(&self) -> f64 {
        let j = self.matrix.nrows();
        if j < 2 {
            return 0.0;
        }
        let total: f64 = self
            .matrix
            .indexed_iter()
            .filter(|((a, b), _)| a != b)
            .map(|(_, v)| v.abs())
            .sum();
        total / (j * (j - 1)) as f64
    }
}

/// Pearson correlation between pooled channels (`N x J` input).
pub fn channel_correlation(pooled: &Array2<f64>) -> Result<CorrelationMatrix> {
    let n = pooled.nrows();
    if n < 2 {
        return Err(DscoError::Argument(
            "correlation needs at least 2 samples".into(),
        ));
    }
    let mean = pooled.mean_axis(Axis(0)).expect("n >= 2");
    let centered = pooled - &mean;
    let cov = centered.t().dot(&centered) / n as f64;
    let j = cov.nrows();
    let sd: Vec<f64> = (0..j).map(|k| cov[[k, k]].max(0.0).sqrt()).collect();
    let degenerate: Vec<usize> = (0..j).filter(|&k| sd[k] <= f64::EPSILON).collect();
    if !degenerate.is_empty() {
        log::warn!("{} zero-variance channels in correlation", degenerate.len());
    }
    let mut matrix = Array2::zeros((j, j));
    for a in 0..j {
        for b in 0..j {
            if sd[a] > f64::EPSILON && sd[b] > f64::EPSILON {
                matrix[[a, b]] = if a == b {
                    1.0
                } else {
                    cov[[a, b]] / (sd[a] * sd[b])
                };
            }
        }
    }
    Ok(CorrelationMatrix { matrix, degenerate })
}
