//! Multi-scale temporal behavioural feature extractor.
//!
//! The backbone runs `K` independent branches over one thin slice. Branch
//! `k` rescales the frames spatially, applies a small 3D convolution stack,
//! aligns channel counts with a point-wise "spatial encoding" convolution
//! followed by adaptive area pooling, downsamples time by its own factor
//! `T_k`, encodes the remaining temporal dynamics with a temporal convolution
//! averaged over time, and projects the result to a `D`-dimensional vector.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::autograd::{Conv3dSpec, Tape, Var};
use crate::error::{Error, Result};
use crate::params::{glorot, he, Params};
use crate::tensor::Tensor;

/// A positive rational spatial scale factor such as `1/2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub num: u32,
    pub den: u32,
}

impl Ratio {
    pub const ONE: Ratio = Ratio { num: 1, den: 1 };

    pub fn new(num: u32, den: u32) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::config(format!("invalid scale {num}/{den}")));
        }
        Ok(Self { num, den })
    }

    /// `round(n · num / den)`, never below one.
    pub fn apply(self, n: usize) -> usize {
        let scaled = (n as u64 * self.num as u64 * 2 + self.den as u64) / (2 * self.den as u64);
        (scaled as usize).max(1)
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for Ratio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parse = |x: &str| {
            x.trim()
                .parse::<u32>()
                .map_err(|_| Error::config(format!("invalid scale `{s}`")))
        };
        match s.split_once('/') {
            Some((n, d)) => Ratio::new(parse(n)?, parse(d)?),
            None => Ratio::new(parse(s)?, 1),
        }
    }
}

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Ratio {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MtbConfig {
    /// Frames per thin slice.
    pub slice_length: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Per-branch spatial rescaling factors.
    pub spatial_scales: Vec<Ratio>,
    /// Per-branch temporal downsampling factors `T_1 < … < T_K`.
    pub temporal_factors: Vec<usize>,
    /// Per-branch width of the 3D convolution stack.
    pub branch_widths: Vec<usize>,
    /// Number of 3×3×3 convolutions per branch.
    pub conv_depth: usize,
    /// Common channel count after the spatial encoding stage.
    pub aligned_channels: usize,
    /// Side of the pooled spatial grid after the spatial encoding stage.
    pub pooled_size: usize,
    /// Output feature dimension `D` of every branch.
    pub output_dim: usize,
}

impl Default for MtbConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl MtbConfig {
    /// Desk-scale preset for 32×32 grayscale clips.
    pub fn toy() -> Self {
        Self {
            slice_length: 30,
            height: 32,
            width: 32,
            channels: 1,
            spatial_scales: vec![Ratio::ONE, Ratio { num: 1, den: 2 }, Ratio { num: 1, den: 4 }],
            temporal_factors: vec![1, 3, 10],
            branch_widths: vec![6, 6, 6],
            conv_depth: 1,
            aligned_channels: 8,
            pooled_size: 4,
            output_dim: 64,
        }
    }

    /// Dimensions of the full-size backbone: three branches on 112×112 RGB
    /// faces, 1024 aligned maps of 4×4 and 2048-dimensional outputs.
    pub fn reference() -> Self {
        Self {
            slice_length: 30,
            height: 112,
            width: 112,
            channels: 3,
            spatial_scales: vec![Ratio { num: 1, den: 4 }, Ratio { num: 1, den: 8 }, Ratio { num: 1, den: 28 }],
            temporal_factors: vec![1, 3, 5],
            branch_widths: vec![256, 512, 2048],
            conv_depth: 1,
            aligned_channels: 1024,
            pooled_size: 4,
            output_dim: 2048,
        }
    }

    pub fn num_branches(&self) -> usize {
        self.temporal_factors.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_branches();
        if k < 2 {
            return Err(Error::config("the backbone needs at least two branches"));
        }
        if self.spatial_scales.len() != k || self.branch_widths.len() != k {
            return Err(Error::config("per-branch lists must all have K entries"));
        }
        if !self.temporal_factors.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::config("temporal factors must be strictly increasing"));
        }
        for &f in &self.temporal_factors {
            if f == 0 || !self.slice_length.is_multiple_of(f) {
                return Err(Error::config(format!(
                    "temporal factor {f} does not divide slice length {}",
                    self.slice_length
                )));
            }
        }
        if self.output_dim == 0
            || self.aligned_channels == 0
            || self.pooled_size == 0
            || self.conv_depth == 0
            || self.branch_widths.contains(&0)
        {
            return Err(Error::config("backbone widths must be positive"));
        }
        if self.height == 0 || self.width == 0 || self.channels == 0 || self.slice_length == 0 {
            return Err(Error::config("input dimensions must be positive"));
        }
        Ok(())
    }

    fn branch(&self, k: usize) -> BranchConfig {
        BranchConfig {
            channels: self.channels,
            height: self.height,
            width: self.width,
            scale: self.spatial_scales[k],
            temporal_factor: self.temporal_factors[k],
            width_channels: self.branch_widths[k],
            conv_depth: self.conv_depth,
            aligned_channels: self.aligned_channels,
            pooled_size: self.pooled_size,
            output_dim: self.output_dim,
        }
    }
}

/// The per-branch slice of [`MtbConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct BranchConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub scale: Ratio,
    pub temporal_factor: usize,
    pub width_channels: usize,
    pub conv_depth: usize,
    pub aligned_channels: usize,
    pub pooled_size: usize,
    pub output_dim: usize,
}

impl BranchConfig {
    fn flat_dim(&self) -> usize {
        self.aligned_channels * self.pooled_size * self.pooled_size
    }
}

/// One `D`-vector per temporal scale.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiScaleFeatures {
    pub per_scale: Vec<Vec<f64>>,
}

/// Area-averaging resampling matrix `[n_out × n_in]`; rows sum to one.
pub fn area_resample_matrix(n_in: usize, n_out: usize) -> Tensor {
    let mut m = Tensor::zeros(&[n_out, n_in]);
    let ratio = n_in as f64 / n_out as f64;
    for i in 0..n_out {
        let (lo, hi) = (i as f64 * ratio, (i + 1) as f64 * ratio);
        for j in (lo.floor() as usize)..(hi.ceil() as usize).min(n_in) {
            let overlap = (hi.min(j as f64 + 1.0) - lo.max(j as f64)).max(0.0);
            m.data_mut()[i * n_in + j] = overlap / ratio;
        }
    }
    m
}

/// Mean of consecutive groups of `factor` frames along the leading axis.
pub fn temporal_downsample(seq: &Tensor, factor: usize) -> Result<Tensor> {
    if seq.rank() == 0 {
        return Err(Error::Shape("temporal_downsample needs a sequence".into()));
    }
    let mut shape = vec![1];
    shape.extend_from_slice(seq.shape());
    let lifted = seq.clone().reshape(&shape)?;
    let pooled = crate::autograd::mean_pool_axis1_value(&lifted, factor)?;
    let out_shape = pooled.shape()[1..].to_vec();
    pooled.reshape(&out_shape)
}

fn branch_prefix(k: usize) -> String {
    format!("mtb.b{k}")
}

/// Initialises the parameters of branch `k` under `mtb.b{k}.*`.
pub fn init_branch(params: &mut Params, k: usize, cfg: &BranchConfig, rng: &mut impl Rng) {
    let p = branch_prefix(k);
    let mut cin = cfg.channels;
    for i in 0..cfg.conv_depth {
        let fan_in = cin * 27;
        params.insert(
            format!("{p}.conv{i}.w"),
            he(&[cfg.width_channels, cin, 3, 3, 3], fan_in, rng),
        );
        params.insert(format!("{p}.conv{i}.b"), Tensor::zeros(&[cfg.width_channels]));
        cin = cfg.width_channels;
    }
    let c = cfg.aligned_channels;
    params.insert(format!("{p}.spatial.w"), he(&[c, cin, 1, 1, 1], cin, rng));
    params.insert(format!("{p}.spatial.b"), Tensor::zeros(&[c]));
    params.insert(format!("{p}.temporal.w"), he(&[c, c, 3, 1, 1], c * 3, rng));
    params.insert(format!("{p}.temporal.b"), Tensor::zeros(&[c]));
    let flat = cfg.flat_dim();
    params.insert(
        format!("{p}.proj.w"),
        glorot(&[cfg.output_dim, flat], flat, cfg.output_dim, rng),
    );
    params.insert(format!("{p}.proj.b"), Tensor::zeros(&[cfg.output_dim]));
}

pub fn init(cfg: &MtbConfig, rng: &mut impl Rng) -> Result<Params> {
    cfg.validate()?;
    let mut params = Params::new();
    for k in 0..cfg.num_branches() {
        init_branch(&mut params, k, &cfg.branch(k), rng);
    }
    Ok(params)
}

/// Forward pass of branch `k` on a `[C, L, H, W]` input.
pub fn branch_forward(
    tape: &mut Tape,
    params: &Params,
    k: usize,
    cfg: &BranchConfig,
    input: Var,
) -> Result<Var> {
    let p = branch_prefix(k);
    let s = tape.shape(input).to_vec();
    if s.len() != 4 || s[0] != cfg.channels || s[2] != cfg.height || s[3] != cfg.width {
        return Err(Error::Shape(format!(
            "branch {k} expects [{}, L, {}, {}], got {s:?}",
            cfg.channels, cfg.height, cfg.width
        )));
    }
    let (h, w) = (cfg.scale.apply(cfg.height), cfg.scale.apply(cfg.width));
    let mut x = if (h, w) == (cfg.height, cfg.width) {
        input
    } else {
        let rows = area_resample_matrix(cfg.height, h);
        let cols = area_resample_matrix(cfg.width, w);
        tape.resample(input, rows, cols)?
    };

    for i in 0..cfg.conv_depth {
        let wv = tape.param(params, &format!("{p}.conv{i}.w"))?;
        let bv = tape.param(params, &format!("{p}.conv{i}.b"))?;
        x = tape.conv3d(x, wv, bv, Conv3dSpec::same([3, 3, 3]))?;
        x = tape.relu(x);
        tape.check_finite(x, &format!("{p}.conv{i}"))?;
    }

    let wv = tape.param(params, &format!("{p}.spatial.w"))?;
    let bv = tape.param(params, &format!("{p}.spatial.b"))?;
    x = tape.conv3d(x, wv, bv, Conv3dSpec::same([1, 1, 1]))?;
    x = tape.relu(x);
    let ps = cfg.pooled_size;
    if (h, w) != (ps, ps) {
        x = tape.resample(x, area_resample_matrix(h, ps), area_resample_matrix(w, ps))?;
    }
    tape.check_finite(x, &format!("{p}.spatial"))?;

    x = tape.mean_pool_axis1(x, cfg.temporal_factor)?;

    let wv = tape.param(params, &format!("{p}.temporal.w"))?;
    let bv = tape.param(params, &format!("{p}.temporal.b"))?;
    x = tape.conv3d(x, wv, bv, Conv3dSpec::same([3, 1, 1]))?;
    x = tape.relu(x);
    let frames = tape.shape(x)[1];
    x = tape.mean_pool_axis1(x, frames)?;
    tape.check_finite(x, &format!("{p}.temporal"))?;

    let flat = tape.reshape(x, &[cfg.flat_dim()])?;
    let wv = tape.param(params, &format!("{p}.proj.w"))?;
    let bv = tape.param(params, &format!("{p}.proj.b"))?;
    let out = tape.linear(flat, wv, bv)?;
    tape.check_finite(out, &format!("{p}.proj"))?;
    Ok(out)
}

/// Records the backbone on `tape` for a `[C, L, H, W]` slice tensor and
/// returns one node per branch.
pub fn forward(tape: &mut Tape, params: &Params, cfg: &MtbConfig, input: Var) -> Result<Vec<Var>> {
    let s = tape.shape(input);
    if s.len() != 4 || s[1] != cfg.slice_length {
        return Err(Error::Shape(format!(
            "slice of shape {s:?} does not match slice length {}",
            cfg.slice_length
        )));
    }
    (0..cfg.num_branches())
        .map(|k| branch_forward(tape, params, k, &cfg.branch(k), input))
        .collect()
}

/// Runs the backbone on one thin slice.
pub fn mtb_forward(slice: &crate::corpus::ThinSlice, params: &Params, cfg: &MtbConfig) -> Result<MultiScaleFeatures> {
    let [_, h, w, c] = slice.frames.shape();
    if (h, w, c) != (cfg.height, cfg.width, cfg.channels) {
        return Err(Error::Shape(format!(
            "slice frames {h}×{w}×{c} do not match backbone {}×{}×{}",
            cfg.height, cfg.width, cfg.channels
        )));
    }
    let mut tape = Tape::new();
    let input = tape.leaf(slice.frames.to_channels_first());
    let outs = forward(&mut tape, params, cfg, input)?;
    Ok(MultiScaleFeatures {
        per_scale: outs.iter().map(|&v| tape.value(v).data().to_vec()).collect(),
    })
}
