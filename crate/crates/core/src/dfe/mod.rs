//! Depression feature enhancement: mutual temporal attention and noise
//! separation on top of the multi-scale backbone, their joint short-term
//! training, and per-slice feature extraction.

mod loss;
mod mta;
mod ns;
mod train;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::corpus::{self, SliceFeatureMatrix, ThinSlice, VideoSample};
use crate::error::{Error, Result};
use crate::mtb::{self, MtbConfig};
use crate::optim::AdamConfig;
use crate::params::Params;

pub use loss::{compute_losses, BatchMember, LossBreakdown, LossWeights};
pub(crate) use loss::MemberVars;
pub use mta::{mta_forward, mutual_attention, EnhancedFeature};
pub use ns::{ns_forward, DisentangledPair, NsConfig};
pub use train::{loss_and_gradients, train_short_term, ShortTermModel, StepRecord, TrainingSlice};

/// Model shape and training schedule of the short-term stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShortTermConfig {
    pub mtb: MtbConfig,
    pub ns: NsConfig,
    pub weights: LossWeights,
    pub optimizer: AdamConfig,
    /// Slices per category-homogeneous batch.
    pub batch_size: usize,
    pub steps: usize,
    /// Distance between slice starts; defaults to the slice length.
    pub slice_stride: Option<usize>,
    /// Labels are divided by this before entering the losses, and
    /// predictions are multiplied back.
    pub target_scale: f64,
}

impl Default for ShortTermConfig {
    fn default() -> Self {
        Self {
            mtb: MtbConfig::toy(),
            ns: NsConfig::toy(),
            weights: LossWeights::default(),
            optimizer: AdamConfig::default(),
            batch_size: 5,
            steps: 200,
            slice_stride: None,
            target_scale: 63.0,
        }
    }
}

impl ShortTermConfig {
    pub fn stride(&self) -> usize {
        self.slice_stride.unwrap_or(self.mtb.slice_length)
    }

    /// Width of the enhanced feature `F`.
    pub fn feature_dim(&self) -> usize {
        self.mtb.num_branches() * self.mtb.output_dim
    }

    pub fn validate(&self) -> Result<()> {
        self.mtb.validate()?;
        self.ns.validate()?;
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if self.stride() == 0 {
            return Err(Error::config("slice_stride must be positive"));
        }
        if !(self.target_scale.is_finite() && self.target_scale > 0.0) {
            return Err(Error::config("target_scale must be positive"));
        }
        Ok(())
    }
}

/// Fresh parameters for backbone, attention and noise separation. Both
/// regression heads start at `label_mean` (in BDI units).
pub fn init_params(cfg: &ShortTermConfig, label_mean: f64, rng: &mut impl Rng) -> Result<Params> {
    cfg.validate()?;
    let mut params = mtb::init(&cfg.mtb, rng)?;
    let target = label_mean / cfg.target_scale;
    mta::init(&mut params, cfg.mtb.num_branches(), cfg.mtb.output_dim, target, rng);
    ns::init(&mut params, &cfg.ns, cfg.feature_dim(), target, rng);
    Ok(params)
}

/// Records the full short-term model on `tape` for a `[C, L, H, W]` input.
pub(crate) fn record_slice(tape: &mut Tape, params: &Params, cfg: &ShortTermConfig, input: Var) -> Result<MemberVars> {
    let scales = mtb::forward(tape, params, &cfg.mtb, input)?;
    let (f, p_mta) = mta::forward(tape, params, &scales)?;
    let out = ns::forward(tape, params, &cfg.ns, f)?;
    Ok(MemberVars {
        p_ns: out.p_ns,
        p_mta,
        f,
        f_dep: out.f_dep,
        f_non: out.f_non,
        f_dec: out.f_dec,
    })
}

/// Everything the short-term model produces for one slice; predictions are
/// in BDI units.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceOutput {
    pub f: EnhancedFeature,
    pub p_mta: f64,
    pub pair: DisentangledPair,
}

pub fn dfe_forward(slice: &ThinSlice, params: &Params, cfg: &ShortTermConfig) -> Result<SliceOutput> {
    let [_, h, w, c] = slice.frames.shape();
    if (h, w, c) != (cfg.mtb.height, cfg.mtb.width, cfg.mtb.channels) {
        return Err(Error::Shape(format!(
            "slice frames {h}×{w}×{c} do not match backbone {}×{}×{}",
            cfg.mtb.height, cfg.mtb.width, cfg.mtb.channels
        )));
    }
    let mut tape = Tape::new();
    let input = tape.leaf(slice.frames.to_channels_first());
    let v = record_slice(&mut tape, params, cfg, input)?;
    let vec = |x| tape.value(x).data().to_vec();
    Ok(SliceOutput {
        f: EnhancedFeature { values: vec(v.f) },
        p_mta: tape.value(v.p_mta).item() * cfg.target_scale,
        pair: DisentangledPair {
            f_dep: vec(v.f_dep),
            f_non: vec(v.f_non),
            f_dec: vec(v.f_dec),
            p_ns: tape.value(v.p_ns).item() * cfg.target_scale,
        },
    })
}

/// Per-slice outputs of one video in temporal order.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceExtraction {
    /// `F_dep` rows, rounded to 32-bit floats as they are stored on disk.
    pub features: SliceFeatureMatrix,
    /// Slice-level severity predictions `p_ns`.
    pub predictions: Vec<f64>,
    pub non_depression: Vec<Vec<f64>>,
}

/// Runs the trained short-term model over every thin slice of `video`
/// (missing frames imputed from their nearest valid neighbour).
pub fn extract_slice_features(video: &VideoSample, params: &Params, cfg: &ShortTermConfig) -> Result<SliceExtraction> {
    let (len, stride) = (cfg.mtb.slice_length, cfg.stride());
    let count = corpus::slice_count(video.num_frames(), len, stride)?;
    let source = corpus::nearest_valid_indices(&video.frame_valid)
        .map_err(|_| Error::domain(format!("video `{}` has no valid frame", video.id)))?;
    let outputs = (0..count)
        .into_par_iter()
        .map(|i| dfe_forward(&corpus::imputed_slice(video, &source, i, len, stride), params, cfg))
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<Vec<f64>> = outputs.iter().map(|o| o.pair.f_dep.clone()).collect();
    Ok(SliceExtraction {
        features: SliceFeatureMatrix::from_rows(video.id.clone(), &rows)?.quantized(),
        predictions: outputs.iter().map(|o| o.pair.p_ns).collect(),
        non_depression: outputs.into_iter().map(|o| o.pair.f_non).collect(),
    })
}
