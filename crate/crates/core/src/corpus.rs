//! Video samples, severity bucketing, thin-slice tiling, missing-frame
//! imputation and the synthetic corpus generator.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAX_BDI: u32 = 63;
pub const DEFAULT_SLICE_LENGTH: usize = 30;

/// BDI-II severity band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeverityCategory {
    Minimal,
    Mild,
    Moderate,
    Severe,
}

impl SeverityCategory {
    pub const ALL: [SeverityCategory; 4] = [
        SeverityCategory::Minimal,
        SeverityCategory::Mild,
        SeverityCategory::Moderate,
        SeverityCategory::Severe,
    ];

    /// Inclusive BDI-II score range of the band.
    pub fn bdi_range(self) -> (u32, u32) {
        match self {
            SeverityCategory::Minimal => (0, 13),
            SeverityCategory::Mild => (14, 19),
            SeverityCategory::Moderate => (20, 28),
            SeverityCategory::Severe => (29, MAX_BDI),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for SeverityCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SeverityCategory::Minimal => "minimal",
            SeverityCategory::Mild => "mild",
            SeverityCategory::Moderate => "moderate",
            SeverityCategory::Severe => "severe",
        };
        f.write_str(s)
    }
}

/// Maps a BDI-II score onto its severity band (0–13, 14–19, 20–28, 29–63).
pub fn bucket_severity(bdi: u32) -> Result<SeverityCategory> {
    match bdi {
        0..=13 => Ok(SeverityCategory::Minimal),
        14..=19 => Ok(SeverityCategory::Mild),
        20..=28 => Ok(SeverityCategory::Moderate),
        29..=MAX_BDI => Ok(SeverityCategory::Severe),
        _ => Err(Error::domain(format!("BDI-II score {bdi} outside [0, {MAX_BDI}]"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" | "dev" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::domain(format!("unknown split `{other}`"))),
        }
    }
}

/// Frames stored as `[T, H, W, C]` single-precision pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frames {
    shape: [usize; 4],
    data: Vec<f32>,
}

impl Frames {
    pub fn new(shape: [usize; 4], data: Vec<f32>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "frames {shape:?} need {} values, got {}",
                shape.iter().product::<usize>(),
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: [usize; 4], value: f32) -> Self {
        Self {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.shape[0]
    }

    pub fn is_empty(&self) -> bool {
        self.shape[0] == 0
    }

    fn frame_size(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.frame_size();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f32] {
        let n = self.frame_size();
        &mut self.data[t * n..(t + 1) * n]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Frames `[start, start+len)` as a new tensor.
    pub fn window(&self, start: usize, len: usize) -> Frames {
        let n = self.frame_size();
        Frames {
            shape: [len, self.shape[1], self.shape[2], self.shape[3]],
            data: self.data[start * n..(start + len) * n].to_vec(),
        }
    }

    /// Channel-first `[C, T, H, W]` copy in double precision, the layout the
    /// convolutional backbone consumes.
    pub fn to_channels_first(&self) -> Tensor {
        let [t, h, w, c] = self.shape;
        let mut out = vec![0.0; self.data.len()];
        for ti in 0..t {
            for yi in 0..h {
                for xi in 0..w {
                    for ci in 0..c {
                        out[((ci * t + ti) * h + yi) * w + xi] =
                            self.data[((ti * h + yi) * w + xi) * c + ci] as f64;
                    }
                }
            }
        }
        Tensor::new(vec![c, t, h, w], out).expect("frame tensor shape")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoSample {
    pub id: String,
    pub frames: Frames,
    pub frame_valid: Vec<bool>,
    pub bdi_score: u32,
    pub category: SeverityCategory,
}

impl VideoSample {
    /// Builds a sample, deriving the category and checking invariants.
    pub fn new(id: impl Into<String>, frames: Frames, frame_valid: Vec<bool>, bdi_score: u32) -> Result<Self> {
        let category = bucket_severity(bdi_score)?;
        if frame_valid.len() != frames.len() {
            return Err(Error::Shape(format!(
                "mask length {} for {} frames",
                frame_valid.len(),
                frames.len()
            )));
        }
        Ok(Self {
            id: id.into(),
            frames,
            frame_valid,
            bdi_score,
            category,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThinSlice {
    pub frames: Frames,
    pub parent_id: String,
    pub index: usize,
}

/// Number of slices `slice_video` yields for a video of `frames` frames.
pub fn slice_count(frames: usize, slice_length: usize, stride: usize) -> Result<usize> {
    if slice_length == 0 || stride == 0 {
        return Err(Error::domain("slice length and stride must be positive"));
    }
    if frames < slice_length {
        return Err(Error::domain(format!(
            "video of {frames} frames is shorter than one slice of {slice_length}"
        )));
    }
    Ok((frames - slice_length) / stride + 1)
}

/// Tiles a video into consecutive thin slices of `slice_length` frames whose
/// start frames are `stride` apart.
pub fn slice_video(v: &VideoSample, slice_length: usize, stride: usize) -> Result<Vec<ThinSlice>> {
    let n = slice_count(v.num_frames(), slice_length, stride)?;
    Ok((0..n)
        .map(|index| ThinSlice {
            frames: v.frames.window(index * stride, slice_length),
            parent_id: v.id.clone(),
            index,
        })
        .collect())
}

/// For every frame, the index of the nearest valid frame (itself when
/// valid); on equal distance the earlier frame wins.
pub fn nearest_valid_indices(mask: &[bool]) -> Result<Vec<usize>> {
    let t = mask.len();
    if !mask.iter().any(|&ok| ok) {
        return Err(Error::domain("video has no valid frame"));
    }
    let mut prev = vec![None; t];
    let mut last = None;
    for i in 0..t {
        if mask[i] {
            last = Some(i);
        }
        prev[i] = last;
    }
    let mut next = vec![None; t];
    let mut last = None;
    for i in (0..t).rev() {
        if mask[i] {
            last = Some(i);
        }
        next[i] = last;
    }
    Ok((0..t)
        .map(|i| match (prev[i], next[i]) {
            (Some(p), Some(n)) => {
                if i - p <= n - i {
                    p
                } else {
                    n
                }
            }
            (Some(p), None) => p,
            (None, Some(n)) => n,
            (None, None) => unreachable!("at least one valid frame"),
        })
        .collect())
}

/// Replaces each invalid frame with its nearest valid frame; on equal
/// distance the earlier frame wins.
pub fn impute_missing_frames(v: &VideoSample) -> Result<VideoSample> {
    let source = nearest_valid_indices(&v.frame_valid)
        .map_err(|_| Error::domain(format!("video `{}` has no valid frame", v.id)))?;
    let mut out = v.clone();
    for (i, &src) in source.iter().enumerate() {
        if src != i {
            out.frames.frame_mut(i).copy_from_slice(v.frames.frame(src));
        }
    }
    out.frame_valid = vec![true; v.num_frames()];
    Ok(out)
}

/// Slice `index` of `slice_video(impute_missing_frames(v), ..)`, without
/// copying the whole video.
pub fn imputed_slice(
    v: &VideoSample,
    source: &[usize],
    index: usize,
    slice_length: usize,
    stride: usize,
) -> ThinSlice {
    let start = index * stride;
    let [_, h, w, c] = v.frames.shape();
    let mut data = Vec::with_capacity(slice_length * h * w * c);
    for &src in &source[start..start + slice_length] {
        data.extend_from_slice(v.frames.frame(src));
    }
    ThinSlice {
        frames: Frames::new([slice_length, h, w, c], data).expect("slice shape"),
        parent_id: v.id.clone(),
        index,
    }
}

/// Per-slice depression features of one video, `[S × M]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceFeatureMatrix {
    pub parent_id: String,
    values: Tensor,
}

impl SliceFeatureMatrix {
    pub fn new(parent_id: impl Into<String>, values: Tensor) -> Result<Self> {
        if values.rank() != 2 || values.shape()[0] == 0 || values.shape()[1] == 0 {
            return Err(Error::Shape(format!(
                "feature matrix must be non-empty S×M, got {:?}",
                values.shape()
            )));
        }
        if !values.is_finite() {
            return Err(Error::domain("feature matrix has non-finite entries"));
        }
        Ok(Self {
            parent_id: parent_id.into(),
            values,
        })
    }

    pub fn from_rows(parent_id: impl Into<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::Shape("ragged feature rows".into()));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(parent_id, Tensor::new(vec![rows.len(), m], data)?)
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn slices(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        self.values.row(s)
    }

    /// Column `m` as a time series over slices.
    pub fn column(&self, m: usize) -> Vec<f64> {
        (0..self.slices()).map(|s| self.values.get2(s, m)).collect()
    }

    /// Rounds every entry to single precision, the precision features are
    /// stored at on disk.
    pub fn quantized(mut self) -> Self {
        for v in self.values.data_mut() {
            *v = *v as f32 as f64;
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub samples: Vec<VideoSample>,
    pub split: BTreeMap<String, Split>,
    pub generation_seed: Option<u64>,
}

impl Corpus {
    /// Checks id uniqueness and that every sample has exactly one split.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for s in &self.samples {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::domain(format!("duplicate video id `{}`", s.id)));
            }
            if !self.split.contains_key(&s.id) {
                return Err(Error::domain(format!("video `{}` has no split", s.id)));
            }
            if s.category != bucket_severity(s.bdi_score)? {
                return Err(Error::domain(format!("video `{}` category mismatch", s.id)));
            }
        }
        if self.split.len() != self.samples.len() {
            return Err(Error::domain("split map names unknown videos"));
        }
        Ok(())
    }

    pub fn samples_in(&self, split: Split) -> impl Iterator<Item = &VideoSample> {
        self.samples
            .iter()
            .filter(move |s| self.split.get(&s.id) == Some(&split))
    }

    pub fn split_of(&self, id: &str) -> Option<Split> {
        self.split.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&VideoSample> {
        self.samples.iter().find(|s| s.id == id)
    }
}

/// Parameters of the synthetic corpus generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Relative frequency of minimal, mild, moderate and severe videos.
    pub severity_weights: [f64; 4],
    /// Fraction of frames marked as failed face detections.
    pub missing_frame_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            train: 80,
            validation: 20,
            test: 20,
            min_frames: 480,
            max_frames: 960,
            height: 32,
            width: 32,
            channels: 1,
            severity_weights: [1.0, 1.0, 1.0, 1.0],
            missing_frame_rate: 0.01,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.train == 0 || self.validation == 0 || self.test == 0 {
            return Err(Error::domain("every split needs at least one video"));
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return Err(Error::domain("invalid frame-count range"));
        }
        if self.height < 8 || self.width < 8 || self.channels == 0 {
            return Err(Error::domain("frames must be at least 8×8 with one channel"));
        }
        if self.severity_weights.iter().any(|w| w.is_nan() || *w < 0.0) || self.severity_weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::domain("severity weights must be non-negative with positive sum"));
        }
        if !(0.0..1.0).contains(&self.missing_frame_rate) {
            return Err(Error::domain("missing_frame_rate must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Short, medium and slow periods (in frames) of the severity-driven motion.
const FAST_PERIOD: f64 = 6.0;
const MEDIUM_PERIOD: f64 = 20.0;
const ENVELOPE_PERIOD: (f64, f64) = (360.0, 600.0);

/// Generates a labelled corpus of synthetic face-like clips.
///
/// Each clip shows a static, subject-specific textured background with a
/// global brightness flicker (identity and recording nuisance, independent of
/// the label) and a bright blob whose displacement oscillates at a fast and a
/// medium period. Both oscillation amplitudes grow with the BDI-II score, and
/// a slow envelope, whose depth also grows with the score, modulates them
/// across the whole video. The blob keeps its total brightness, so the
/// label is carried by motion over time rather than by any single frame.
pub fn generate_synthetic_corpus(config: &SynthConfig, seed: u64) -> Result<Corpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corpus = Corpus {
        generation_seed: Some(seed),
        ..Corpus::default()
    };
    let weights = config.severity_weights;
    for (split, count) in [
        (Split::Train, config.train),
        (Split::Validation, config.validation),
        (Split::Test, config.test),
    ] {
        let mut categories: Vec<SeverityCategory> = SeverityCategory::ALL
            .iter()
            .copied()
            .filter(|c| weights[c.index()] > 0.0)
            .take(count)
            .collect();
        while categories.len() < count {
            categories.push(sample_category(&weights, &mut rng));
        }
        categories.shuffle(&mut rng);
        for (i, category) in categories.into_iter().enumerate() {
            let (lo, hi) = category.bdi_range();
            let bdi = rng.random_range(lo..=hi);
            let video_seed: u64 = rng.random();
            let id = format!("{split}_{i:04}");
            let sample = synth_video(&id, bdi, config, video_seed)?;
            corpus.split.insert(id, split);
            corpus.samples.push(sample);
        }
    }
    Ok(corpus)
}

fn sample_category(weights: &[f64; 4], rng: &mut impl Rng) -> SeverityCategory {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for c in SeverityCategory::ALL {
        u -= weights[c.index()];
        if u < 0.0 {
            return c;
        }
    }
    SeverityCategory::Severe
}

fn synth_video(id: &str, bdi: u32, config: &SynthConfig, seed: u64) -> Result<VideoSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w, c) = (config.height, config.width, config.channels);
    let t = rng.random_range(config.min_frames..=config.max_frames);
    let severity = bdi as f64 / MAX_BDI as f64;
    let scale = h.min(w) as f64 / 32.0;

    // Subject appearance: base brightness plus a smooth random texture.
    let base = rng.random_range(0.25..0.45);
    let waves: Vec<[f64; 4]> = (0..3)
        .map(|_| {
            [
                rng.random_range(0.5..3.0) * 2.0 * PI / h as f64,
                rng.random_range(0.5..3.0) * 2.0 * PI / w as f64,
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.01..0.04),
            ]
        })
        .collect();
    let channel_gain: Vec<f64> = (0..c).map(|_| rng.random_range(0.85..1.15)).collect();
    let mut background = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            background[y * w + x] = base
                + waves
                    .iter()
                    .map(|[fy, fx, ph, a]| a * (fy * y as f64 + fx * x as f64 + ph).sin())
                    .sum::<f64>();
        }
    }
    let flicker_amp = rng.random_range(0.0..0.04);
    let flicker_freq = rng.random_range(0.01..0.3);
    let flicker_phase = rng.random_range(0.0..2.0 * PI);

    // Severity-driven motion.
    let jitter = |rng: &mut ChaCha8Rng| 1.0 + 0.08 * rng.sample::<f64, _>(StandardNormal);
    let fast_amp = (0.5 + 4.5 * severity) * scale * jitter(&mut rng);
    let medium_amp = (0.3 + 2.7 * severity) * scale * jitter(&mut rng);
    let fast_freq = rng.random_range(0.9..1.1) / FAST_PERIOD;
    let medium_freq = rng.random_range(0.9..1.1) / MEDIUM_PERIOD;
    let phases: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.0..2.0 * PI));
    let envelope_depth = 0.1 + 0.5 * severity;
    let envelope_period = rng.random_range(ENVELOPE_PERIOD.0..ENVELOPE_PERIOD.1);
    let envelope_phase = rng.random_range(0.0..2.0 * PI);
    let sigma = 2.5 * scale;
    let peak = 0.35;
    let (cy, cx) = (h as f64 / 2.0 - 0.5, w as f64 / 2.0 - 0.5);

    let mut data = vec![0f32; t * h * w * c];
    let mut valid = vec![true; t];
    for ti in 0..t {
        let tf = ti as f64;
        let env = 1.0 + envelope_depth * (2.0 * PI * tf / envelope_period + envelope_phase).sin();
        let fast = 2.0 * PI * fast_freq * tf;
        let medium = 2.0 * PI * medium_freq * tf;
        let dx = env * (fast_amp * (fast + phases[0]).sin() + medium_amp * (medium + phases[1]).sin());
        let dy = env * (fast_amp * (fast + phases[2]).cos() + medium_amp * (medium + phases[3]).sin());
        let flicker = flicker_amp * (2.0 * PI * flicker_freq * tf + flicker_phase).sin();
        let frame = &mut data[ti * h * w * c..(ti + 1) * h * w * c];
        for y in 0..h {
            let ey = (y as f64 - cy - dy).powi(2);
            for x in 0..w {
                let ex = (x as f64 - cx - dx).powi(2);
                let blob = peak * (-(ey + ex) / (2.0 * sigma * sigma)).exp();
                let v = background[y * w + x] + flicker + blob;
                for (ci, g) in channel_gain.iter().enumerate() {
                    frame[(y * w + x) * c + ci] = (v * g).clamp(0.0, 1.0) as f32;
                }
            }
        }
    }
    if config.missing_frame_rate > 0.0 {
        for (ti, ok) in valid.iter_mut().enumerate() {
            if rng.random::<f64>() < config.missing_frame_rate {
                *ok = false;
                data[ti * h * w * c..(ti + 1) * h * w * c].fill(0.0);
            }
        }
        if !valid.iter().any(|&v| v) {
            valid[0] = true;
        }
    }
    VideoSample::new(id, Frames::new([t, h, w, c], data)?, valid, bdi)
}
