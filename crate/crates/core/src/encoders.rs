//! Video-level representations of a [`SliceFeatureMatrix`]: the spectral
//! graph (one vertex per feature channel), the sequential graph (one vertex
//! per slice) and the flat baselines built from the same ingredients.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::corpus::SliceFeatureMatrix;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Points of the common frequency grid over `[0, 0.5]`.
    pub grid_bins: usize,
    /// Leading grid bins kept as vertex features.
    pub top_k: usize,
    /// Sequential-graph time windows.
    pub windows: Vec<usize>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            grid_bins: 128,
            top_k: 24,
            windows: vec![1, 2, 4, 8],
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_bins < 2 {
            return Err(Error::config("grid_bins must be at least 2"));
        }
        if self.top_k == 0 || self.top_k > self.grid_bins {
            return Err(Error::config("top_k must lie in 1..=grid_bins"));
        }
        if self.windows.is_empty() || self.windows.contains(&0) {
            return Err(Error::config("windows must be a non-empty list of positive integers"));
        }
        Ok(())
    }
}

/// Normalised frequency of grid bin `b` out of `bins`.
pub fn grid_frequency(b: usize, bins: usize) -> f64 {
    0.5 * b as f64 / (bins - 1) as f64
}

/// Linear interpolation through `(xs, ys)` (sorted `xs`), held constant
/// outside the sampled range.
fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    let last = xs.len() - 1;
    if x >= xs[last] {
        return ys[last];
    }
    let hi = xs.partition_point(|&v| v < x);
    let lo = hi - 1;
    let t = (x - xs[lo]) / (xs[hi] - xs[lo]);
    ys[lo] + t * (ys[hi] - ys[lo])
}

fn amplitudes(series: &[f64], fft: &Arc<dyn Fft<f64>>) -> Vec<f64> {
    let s = series.len();
    let mut buf: Vec<Complex<f64>> = series.iter().map(|&x| Complex::new(x, 0.0)).collect();
    fft.process(&mut buf);
    buf[..=s / 2].iter().map(|c| c.norm() / s as f64).collect()
}

fn resample_spectrum(amp: &[f64], s: usize, bins: usize, top_k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(top_k);
    out.push(amp[0]);
    let freqs: Vec<f64> = (1..amp.len()).map(|k| k as f64 / s as f64).collect();
    for b in 1..top_k {
        out.push(interpolate(&freqs, &amp[1..], grid_frequency(b, bins)));
    }
    out
}

/// Amplitude spectrum of `series` resampled onto the common frequency grid.
///
/// Bin 0 is the DC amplitude `|X_0|/S`. The remaining bins linearly
/// interpolate the AC amplitudes `|X_k|/S` at `k/S`, `1 ≤ k ≤ S/2`, and hold
/// the nearest one outside that range. Returns the first `top_k` bins.
pub fn spectral_encode_series(series: &[f64], grid_bins: usize, top_k: usize) -> Result<Vec<f64>> {
    if series.len() < 2 {
        return Err(Error::domain(format!(
            "spectral encoding needs at least 2 samples, got {}",
            series.len()
        )));
    }
    if grid_bins < 2 || top_k == 0 || top_k > grid_bins {
        return Err(Error::config(format!("invalid grid ({grid_bins} bins, top {top_k})")));
    }
    let fft = FftPlanner::new().plan_fft_forward(series.len());
    let amp = amplitudes(series, &fft);
    Ok(resample_spectrum(&amp, series.len(), grid_bins, top_k))
}

fn spectral_rows(feats: &SliceFeatureMatrix, grid_bins: usize, top_k: usize) -> Result<Tensor> {
    let s = feats.slices();
    if s < 2 {
        return Err(Error::domain(format!(
            "spectral encoding of `{}` needs at least 2 slices, got {s}",
            feats.parent_id
        )));
    }
    if grid_bins < 2 || top_k == 0 || top_k > grid_bins {
        return Err(Error::config(format!("invalid grid ({grid_bins} bins, top {top_k})")));
    }
    let fft = FftPlanner::new().plan_fft_forward(s);
    let m = feats.dim();
    let mut data = Vec::with_capacity(m * top_k);
    for c in 0..m {
        let amp = amplitudes(&feats.column(c), &fft);
        data.extend(resample_spectrum(&amp, s, grid_bins, top_k));
    }
    Tensor::new(vec![m, top_k], data)
}

/// A directed edge; `kind` is the time window for sequential graphs and 0
/// for spectral graphs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub kind: usize,
}

/// One vertex per feature channel carrying its low-frequency amplitudes;
/// every pair of distinct vertices is connected.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralGraph {
    /// `[M × K_f]`.
    pub vertex_features: Tensor,
    pub channel_ids: Vec<usize>,
}

impl SpectralGraph {
    pub fn num_vertices(&self) -> usize {
        self.vertex_features.shape()[0]
    }

    /// Row-major `M × M` adjacency: complete, no self-loops.
    pub fn adjacency(&self) -> Vec<bool> {
        let m = self.num_vertices();
        (0..m * m).map(|i| i / m != i % m).collect()
    }

    pub fn edges(&self) -> Vec<Edge> {
        let m = self.num_vertices();
        let mut out = Vec::with_capacity(m * m.saturating_sub(1));
        for src in 0..m {
            for dst in 0..m {
                if src != dst {
                    out.push(Edge { src, dst, kind: 0 });
                }
            }
        }
        out
    }
}

/// One vertex per thin slice; edges `i → i + w` for each window `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequentialGraph {
    /// `[S × M]`.
    pub vertex_features: Tensor,
    pub edges: Vec<Edge>,
    pub window_set: Vec<usize>,
}

impl SequentialGraph {
    pub fn num_vertices(&self) -> usize {
        self.vertex_features.shape()[0]
    }
}

/// Either graph kind, as consumed by the attention head.
#[derive(Debug, Clone, PartialEq)]
pub enum VideoGraph {
    Spectral(SpectralGraph),
    Sequential(SequentialGraph),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphKind {
    Spectral,
    Sequential,
}

impl VideoGraph {
    pub fn kind(&self) -> GraphKind {
        match self {
            VideoGraph::Spectral(_) => GraphKind::Spectral,
            VideoGraph::Sequential(_) => GraphKind::Sequential,
        }
    }

    pub fn vertex_features(&self) -> &Tensor {
        match self {
            VideoGraph::Spectral(g) => &g.vertex_features,
            VideoGraph::Sequential(g) => &g.vertex_features,
        }
    }

    pub fn num_vertices(&self) -> usize {
        self.vertex_features().shape()[0]
    }

    pub fn feature_dim(&self) -> usize {
        self.vertex_features().shape()[1]
    }

    pub fn edges(&self) -> Vec<Edge> {
        match self {
            VideoGraph::Spectral(g) => g.edges(),
            VideoGraph::Sequential(g) => g.edges.clone(),
        }
    }
}

pub fn build_spg(feats: &SliceFeatureMatrix, grid_bins: usize, top_k: usize) -> Result<SpectralGraph> {
    let vertex_features = spectral_rows(feats, grid_bins, top_k)?;
    Ok(SpectralGraph {
        channel_ids: (0..feats.dim()).collect(),
        vertex_features,
    })
}

pub fn build_seg(feats: &SliceFeatureMatrix, windows: &[usize]) -> Result<SequentialGraph> {
    if windows.is_empty() || windows.contains(&0) {
        return Err(Error::config("windows must be a non-empty list of positive integers"));
    }
    let s = feats.slices();
    let mut edges = Vec::new();
    for &w in windows {
        for src in 0..s.saturating_sub(w) {
            edges.push(Edge { src, dst: src + w, kind: w });
        }
    }
    Ok(SequentialGraph {
        vertex_features: feats.values().clone(),
        edges,
        window_set: windows.to_vec(),
    })
}

/// Average of the slice-level predictions.
pub fn aggregate_atp(slice_predictions: &[f64]) -> Result<f64> {
    if slice_predictions.is_empty() {
        return Err(Error::domain("cannot average an empty prediction list"));
    }
    Ok(slice_predictions.iter().sum::<f64>() / slice_predictions.len() as f64)
}

pub const STA_STATISTICS: [&str; 12] = [
    "mean",
    "std",
    "min",
    "max",
    "range",
    "median",
    "skewness",
    "kurtosis",
    "rms",
    "autocorrelation",
    "mean_abs_diff",
    "slope",
];

/// The twelve summary statistics of one series, in [`STA_STATISTICS`] order.
/// Population moments; kurtosis is excess kurtosis. Shape statistics and the
/// autocorrelation are 0 for a constant series.
pub fn series_statistics(x: &[f64]) -> [f64; 12] {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let central = |p: i32| x.iter().map(|v| (v - mean).powi(p)).sum::<f64>() / n;
    let var = central(2);
    let std = var.sqrt();
    let min = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    };
    let (skew, kurt, acf) = if var > 0.0 {
        let lag: f64 = x.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
        (central(3) / var.powf(1.5), central(4) / (var * var) - 3.0, lag / (var * n))
    } else {
        (0.0, 0.0, 0.0)
    };
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    let mad = x.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (n - 1.0);
    let t_mean = (n - 1.0) / 2.0;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, v) in x.iter().enumerate() {
        let dt = t as f64 - t_mean;
        sxy += dt * (v - mean);
        sxx += dt * dt;
    }
    let slope = sxy / sxx;
    [mean, std, min, max, max - min, median, skew, kurt, rms, acf, mad, slope]
}

/// The twelve statistics of every column, column after column.
pub fn aggregate_sta(feats: &SliceFeatureMatrix) -> Result<Vec<f64>> {
    if feats.slices() < 2 {
        return Err(Error::domain(format!(
            "statistics of `{}` need at least 2 slices",
            feats.parent_id
        )));
    }
    Ok((0..feats.dim()).flat_map(|c| series_statistics(&feats.column(c))).collect())
}

/// Spectral graph vertex features flattened in channel order.
pub fn aggregate_spv(feats: &SliceFeatureMatrix, grid_bins: usize, top_k: usize) -> Result<Vec<f64>> {
    Ok(spectral_rows(feats, grid_bins, top_k)?.into_data())
}

/// Spectral features as an `[M × K_f]` image.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralHeatmap {
    pub values: Tensor,
}

pub fn aggregate_sph(feats: &SliceFeatureMatrix, grid_bins: usize, top_k: usize) -> Result<SpectralHeatmap> {
    Ok(SpectralHeatmap {
        values: spectral_rows(feats, grid_bins, top_k)?,
    })
}
