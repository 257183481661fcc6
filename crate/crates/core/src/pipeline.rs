//! End-to-end orchestration with on-disk stage caches.
//!
//! Every stage writes into `<out_dir>/<stage>/<key>/`, where the key is a
//! fingerprint of everything the stage depends on. A directory holding a
//! `.complete` marker is reused as is; any other directory is stale and is
//! rebuilt. A failing stage leaves a `STALE` marker and returns an error
//! tagged with the stage name.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{fingerprint, fingerprint_hex, Checkpoint, Fingerprint, RngState};
use crate::config::{Representation, RunConfig};
use crate::corpus::{generate_synthetic_corpus, Corpus, SliceFeatureMatrix, Split};
use crate::dfe::{extract_slice_features, train_short_term, StepRecord};
use crate::encoders::{aggregate_atp, aggregate_sph, aggregate_spv, aggregate_sta, build_seg, build_spg, VideoGraph};
use crate::error::{Error, Result};
use crate::io::{self, read_to_string, write_atomic};
use crate::metrics::{compute_metrics, MetricsReport};
use crate::params::Params;
use crate::regressor::{train_head, HeadInput, HeadKind, HeadLog, TrainedHead};
use crate::report::{emit_report, emit_scatter_plot, Prediction, RunReport};
use crate::tensor::Tensor;

const COMPLETE: &str = ".complete";
const STALE: &str = "STALE";

/// Per-slice outputs of one video kept next to its feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceSummary {
    /// Slice-level severity predictions.
    pub predictions: Vec<f64>,
    /// |cosine| between the depression and non-depression codes per slice.
    pub code_cosines: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedVideo {
    pub id: String,
    pub split: Split,
    pub label: f64,
    pub features: SliceFeatureMatrix,
    pub summary: SliceSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedVideo {
    pub id: String,
    pub split: Split,
    pub label: f64,
    /// `None` for the averaged-prediction baseline.
    pub input: Option<HeadInput>,
    pub atp: f64,
}

pub fn abs_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).abs()
    }
}

fn quantize(t: &Tensor) -> Tensor {
    t.map(|v| v as f32 as f64)
}

fn ext(repr: Representation) -> &'static str {
    match repr {
        Representation::Spg => "spg",
        Representation::Seg => "seg",
        Representation::Spv | Representation::Sta => "vec.sfm",
        Representation::Sph => "hm.sfm",
        Representation::Atp => "atp",
    }
}

pub struct Pipeline {
    pub cfg: RunConfig,
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    fn key<T: Serialize + ?Sized>(&self, value: &T) -> Fingerprint {
        fingerprint(value)
    }

    /// Fingerprint of everything that determines the results; the output
    /// directory is excluded.
    pub fn run_key(&self) -> Fingerprint {
        let mut cfg = self.cfg.clone();
        cfg.out_dir = PathBuf::new();
        self.key(&cfg)
    }

    fn corpus_key(&self) -> Fingerprint {
        match &self.cfg.corpus.manifest {
            Some(m) => self.key(&("manifest", m, fs::read_to_string(m).unwrap_or_default())),
            None => self.key(&("synth", &self.cfg.corpus.synth, self.cfg.corpus_seed())),
        }
    }

    pub fn short_term_key(&self) -> Fingerprint {
        self.key(&("short_term", self.corpus_key(), &self.cfg.short_term, self.cfg.seed))
    }

    pub fn extract_key(&self) -> Fingerprint {
        self.key(&("extract", self.short_term_key()))
    }

    pub fn encode_key(&self, repr: Representation) -> Fingerprint {
        self.key(&("encode", self.extract_key(), &self.cfg.encoder, repr))
    }

    pub fn head_key(&self, repr: Representation) -> Fingerprint {
        self.key(&("head", self.encode_key(repr), &self.cfg.head, self.cfg.seed, self.cfg.untrained_head))
    }

    fn stage_dir(&self, parts: &[&str], key: &Fingerprint) -> PathBuf {
        let mut dir = self.cfg.out_dir.clone();
        for p in parts {
            dir.push(p);
        }
        dir.push(&fingerprint_hex(key)[..16]);
        dir
    }

    /// Reuses `dir` when complete, otherwise rebuilds it with `compute`.
    fn stage<T>(
        &self,
        name: &str,
        dir: &Path,
        load: impl FnOnce(&Path) -> Result<T>,
        compute: impl FnOnce(&Path) -> Result<T>,
    ) -> Result<T> {
        if dir.join(COMPLETE).exists() {
            log::info!("{name}: reusing {}", dir.display());
            return load(dir).map_err(|e| e.in_stage(name));
        }
        if dir.exists() {
            log::info!("{name}: discarding stale {}", dir.display());
            fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e).in_stage(name))?;
        }
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e).in_stage(name))?;
        log::info!("{name}: computing into {}", dir.display());
        match compute(dir) {
            Ok(v) => {
                write_atomic(&dir.join(COMPLETE), b"").map_err(|e| e.in_stage(name))?;
                Ok(v)
            }
            Err(e) => {
                let _ = fs::write(dir.join(STALE), e.to_string());
                Err(e.in_stage(name))
            }
        }
    }

    pub fn corpus(&self) -> Result<Corpus> {
        let corpus = match &self.cfg.corpus.manifest {
            Some(m) => io::load_corpus(m),
            None => generate_synthetic_corpus(&self.cfg.corpus.synth, self.cfg.corpus_seed()),
        };
        corpus.map_err(|e| e.in_stage("corpus"))
    }

    /// Trains (or reloads) the short-term model.
    pub fn train_short_term(&self, corpus: &Corpus) -> Result<Params> {
        let key = self.short_term_key();
        let dir = self.stage_dir(&["short_term"], &key);
        self.stage(
            "train-short",
            &dir,
            |d| Ok(Checkpoint::load(&d.join("params.ckpt"), &key)?.params),
            |d| {
                let model = train_short_term(corpus, &self.cfg.short_term, self.cfg.seed)?;
                io::write_lines(&d.join("train.log"), model.log.iter().map(StepRecord::to_string))?;
                Checkpoint {
                    params: model.params.clone(),
                    fingerprint: key,
                    rng: model.rng,
                }
                .save(&d.join("params.ckpt"))?;
                Ok(model.params)
            },
        )
    }

    fn extract_videos(&self, corpus: &Corpus, params: &Params, splits: &[Split]) -> Result<Vec<ExtractedVideo>> {
        let mut out = Vec::new();
        for v in &corpus.samples {
            let Some(split) = corpus.split_of(&v.id).filter(|s| splits.contains(s)) else {
                continue;
            };
            let x = extract_slice_features(v, params, &self.cfg.short_term)?;
            let code_cosines = x
                .features
                .values()
                .data()
                .chunks(x.features.dim())
                .zip(&x.non_depression)
                .map(|(dep, non)| abs_cosine(dep, non))
                .collect();
            out.push(ExtractedVideo {
                id: v.id.clone(),
                split,
                label: v.bdi_score as f64,
                features: x.features,
                summary: SliceSummary {
                    predictions: x.predictions,
                    code_cosines,
                },
            });
        }
        Ok(out)
    }

    /// Per-slice features of every video (or reloads them).
    pub fn extract(&self, corpus: &Corpus, params: &Params) -> Result<Vec<ExtractedVideo>> {
        let dir = self.stage_dir(&["features"], &self.extract_key());
        self.stage(
            "extract",
            &dir,
            load_extracted,
            |d| {
                let videos = self.extract_videos(corpus, params, &Split::ALL)?;
                save_extracted(d, &videos)?;
                Ok(videos)
            },
        )
    }

    pub fn encode(&self, videos: &[ExtractedVideo], repr: Representation) -> Result<Vec<EncodedVideo>> {
        let dir = self.stage_dir(&["encoded", repr.name()], &self.encode_key(repr));
        self.stage(
            "encode",
            &dir,
            |d| load_encoded(d, videos, repr),
            |d| {
                let encoded = encode_videos(videos, repr, &self.cfg)?;
                save_encoded(d, &encoded, repr)?;
                Ok(encoded)
            },
        )
    }

    /// Trains the head for `repr`; `None` for the averaged-prediction
    /// baseline.
    pub fn train_head(&self, encoded: &[EncodedVideo], repr: Representation) -> Result<Option<TrainedHead>> {
        if repr == Representation::Atp {
            return Ok(None);
        }
        let key = self.head_key(repr);
        let dir = self.stage_dir(&["head", repr.name()], &key);
        let kind = head_kind(repr);
        self.stage(
            "train-head",
            &dir,
            |d| load_head(&d.join("head.ckpt"), &key, kind).map(Some),
            |d| {
                let items = |split: Split| -> Vec<(HeadInput, f64)> {
                    encoded
                        .iter()
                        .filter(|e| e.split == split)
                        .filter_map(|e| e.input.clone().map(|x| (x, e.label)))
                        .collect()
                };
                let mut head_cfg = self.cfg.head.clone();
                if self.cfg.untrained_head {
                    head_cfg.epochs = 0;
                }
                let (head, log) = train_head(&items(Split::Train), &items(Split::Validation), &head_cfg, self.cfg.seed)?;
                write_head_log(&d.join("head.log"), &log)?;
                save_head(&d.join("head.ckpt"), &head, key, log.rng)?;
                Ok(Some(head))
            },
        )
    }

    fn predict(&self, head: Option<&TrainedHead>, e: &EncodedVideo) -> Result<f64> {
        match (head, &e.input) {
            (Some(h), Some(x)) => h.predict(x, &self.cfg.head),
            _ => Ok(e.atp),
        }
    }

    fn split_metrics(&self, head: Option<&TrainedHead>, encoded: &[EncodedVideo], split: Split) -> Result<(MetricsReport, Vec<Prediction>)> {
        let mut preds = Vec::new();
        for e in encoded.iter().filter(|e| e.split == split) {
            preds.push(Prediction {
                id: e.id.clone(),
                label: e.label,
                prediction: self.predict(head, e)?,
            });
        }
        let p: Vec<f64> = preds.iter().map(|x| x.prediction).collect();
        let g: Vec<f64> = preds.iter().map(|x| x.label).collect();
        Ok((compute_metrics(&p, &g)?, preds))
    }

    /// Scores validation and test splits and writes `report.json`,
    /// `predictions.tsv` and `scatter.png` into the output directory.
    pub fn evaluate(
        &self,
        videos: &[ExtractedVideo],
        encoded: &[EncodedVideo],
        head: Option<&TrainedHead>,
        repr: Representation,
    ) -> Result<RunReport> {
        let run = || -> Result<RunReport> {
            let (validation, _) = self.split_metrics(head, encoded, Split::Validation)?;
            let (test, test_predictions) = self.split_metrics(head, encoded, Split::Test)?;
            let (atp_test, _) = self.split_metrics(None, encoded, Split::Test)?;
            let cos: Vec<f64> = videos
                .iter()
                .filter(|v| v.split == Split::Test)
                .flat_map(|v| v.summary.code_cosines.iter().copied())
                .collect();
            let report = RunReport {
                representation: repr,
                config_fingerprint: fingerprint_hex(&self.run_key()),
                test,
                validation,
                atp_test,
                test_code_cosine: cos.iter().sum::<f64>() / cos.len().max(1) as f64,
                test_predictions,
            };
            let out = &self.cfg.out_dir;
            emit_report(&report, &out.join("report.json"))?;
            io::write_lines(
                &out.join("predictions.tsv"),
                std::iter::once("id\tlabel\tprediction".to_string()).chain(
                    report
                        .test_predictions
                        .iter()
                        .map(|p| format!("{}\t{}\t{}", p.id, p.label, p.prediction)),
                ),
            )?;
            let p: Vec<f64> = report.test_predictions.iter().map(|x| x.prediction).collect();
            let g: Vec<f64> = report.test_predictions.iter().map(|x| x.label).collect();
            emit_scatter_plot(&p, &g, &out.join("scatter.png"))?;
            Ok(report)
        };
        run().map_err(|e| e.in_stage("eval"))
    }

    pub fn run(&self) -> Result<RunReport> {
        let repr = self.cfg.representation;
        let corpus = self.corpus()?;
        let params = self.train_short_term(&corpus)?;
        let videos = self.extract(&corpus, &params)?;
        let encoded = self.encode(&videos, repr)?;
        let head = self.train_head(&encoded, repr)?;
        self.evaluate(&videos, &encoded, head.as_ref(), repr)
    }

    /// The trained short-term parameters; fails unless the stage completed.
    pub fn trained_short_term(&self) -> Result<Params> {
        let key = self.short_term_key();
        let dir = self.stage_dir(&["short_term"], &key);
        if !dir.join(COMPLETE).exists() {
            return Err(Error::config(format!(
                "no trained short-term model for this configuration under {}",
                self.cfg.out_dir.display()
            )));
        }
        Ok(Checkpoint::load(&dir.join("params.ckpt"), &key)?.params)
    }

    /// The trained head for the configured representation; fails unless the
    /// stage completed.
    pub fn trained_head(&self) -> Result<Option<TrainedHead>> {
        let repr = self.cfg.representation;
        if repr == Representation::Atp {
            return Ok(None);
        }
        let key = self.head_key(repr);
        let dir = self.stage_dir(&["head", repr.name()], &key);
        if !dir.join(COMPLETE).exists() {
            return Err(Error::config(format!(
                "no trained {repr} head for this configuration under {}",
                self.cfg.out_dir.display()
            )));
        }
        load_head(&dir.join("head.ckpt"), &key, head_kind(repr)).map(Some)
    }

    /// Predictions for `split` of another corpus from the trained models,
    /// without any parameter update.
    pub fn cross_split_predictions(&self, corpus: &Corpus, split: Split) -> Result<Vec<Prediction>> {
        let run = || -> Result<Vec<Prediction>> {
            let params = self.trained_short_term()?;
            let head = self.trained_head()?;
            let mtb = &self.cfg.short_term.mtb;
            if let Some(v) = corpus.samples.first() {
                let [_, h, w, c] = v.frames.shape();
                if (h, w, c) != (mtb.height, mtb.width, mtb.channels) {
                    return Err(Error::config(format!(
                        "corpus frames are {h}×{w}×{c}, model expects {}×{}×{}",
                        mtb.height, mtb.width, mtb.channels
                    )));
                }
            }
            let videos = self.extract_videos(corpus, &params, &[split])?;
            let encoded = encode_videos(&videos, self.cfg.representation, &self.cfg)?;
            encoded
                .iter()
                .map(|e| {
                    Ok(Prediction {
                        id: e.id.clone(),
                        label: e.label,
                        prediction: self.predict(head.as_ref(), e)?,
                    })
                })
                .collect()
        };
        run().map_err(|e| e.in_stage("cross-eval"))
    }

    /// Scores `split` of another corpus with the trained models.
    pub fn cross_split_evaluate(&self, corpus: &Corpus, split: Split) -> Result<MetricsReport> {
        let preds = self.cross_split_predictions(corpus, split)?;
        let p: Vec<f64> = preds.iter().map(|x| x.prediction).collect();
        let g: Vec<f64> = preds.iter().map(|x| x.label).collect();
        compute_metrics(&p, &g).map_err(|e| e.in_stage("cross-eval"))
    }
}

pub fn run_pipeline(cfg: RunConfig) -> Result<RunReport> {
    Pipeline::new(cfg)?.run()
}

pub fn head_kind(repr: Representation) -> HeadKind {
    match repr {
        Representation::Spg | Representation::Seg => HeadKind::Gat,
        Representation::Sph => HeadKind::Cnn,
        Representation::Spv | Representation::Sta | Representation::Atp => HeadKind::Mlp,
    }
}

/// Builds the representation of one feature matrix, rounded to the single
/// precision it is stored at.
pub fn encode_features(feats: &SliceFeatureMatrix, repr: Representation, cfg: &RunConfig) -> Result<Option<HeadInput>> {
    let enc = &cfg.encoder;
    let vector = |v: Vec<f64>| HeadInput::Vector(v.into_iter().map(|x| x as f32 as f64).collect());
    Ok(Some(match repr {
        Representation::Spg => {
            let mut g = build_spg(feats, enc.grid_bins, enc.top_k)?;
            g.vertex_features = quantize(&g.vertex_features);
            HeadInput::Graph(VideoGraph::Spectral(g))
        }
        Representation::Seg => {
            let mut g = build_seg(feats, &enc.windows)?;
            g.vertex_features = quantize(&g.vertex_features);
            HeadInput::Graph(VideoGraph::Sequential(g))
        }
        Representation::Spv => vector(aggregate_spv(feats, enc.grid_bins, enc.top_k)?),
        Representation::Sta => vector(aggregate_sta(feats)?),
        Representation::Sph => HeadInput::Heatmap(quantize(&aggregate_sph(feats, enc.grid_bins, enc.top_k)?.values)),
        Representation::Atp => return Ok(None),
    }))
}

fn encode_videos(videos: &[ExtractedVideo], repr: Representation, cfg: &RunConfig) -> Result<Vec<EncodedVideo>> {
    videos
        .par_iter()
        .map(|v| {
            Ok(EncodedVideo {
                id: v.id.clone(),
                split: v.split,
                label: v.label,
                input: encode_features(&v.features, repr, cfg)?,
                atp: aggregate_atp(&v.summary.predictions)?,
            })
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct ExtractIndexEntry {
    id: String,
    split: Split,
    label: f64,
    summary: SliceSummary,
}

fn save_extracted(dir: &Path, videos: &[ExtractedVideo]) -> Result<()> {
    let mut index = Vec::with_capacity(videos.len());
    for v in videos {
        io::write_feature_matrix(&dir.join(format!("{}.sfm", v.id)), &v.features)?;
        index.push(ExtractIndexEntry {
            id: v.id.clone(),
            split: v.split,
            label: v.label,
            summary: v.summary.clone(),
        });
    }
    let json = serde_json::to_vec_pretty(&index).expect("index serialises");
    write_atomic(&dir.join("index.json"), &json)
}

fn load_extracted(dir: &Path) -> Result<Vec<ExtractedVideo>> {
    let path = dir.join("index.json");
    let index: Vec<ExtractIndexEntry> =
        serde_json::from_str(&read_to_string(&path)?).map_err(|e| Error::format(&path, e.to_string()))?;
    index
        .into_iter()
        .map(|e| {
            Ok(ExtractedVideo {
                features: io::read_feature_matrix(&dir.join(format!("{}.sfm", e.id)))?,
                id: e.id,
                split: e.split,
                label: e.label,
                summary: e.summary,
            })
        })
        .collect()
}

fn save_encoded(dir: &Path, encoded: &[EncodedVideo], repr: Representation) -> Result<()> {
    for e in encoded {
        let path = dir.join(format!("{}.{}", e.id, ext(repr)));
        match &e.input {
            Some(HeadInput::Graph(g)) => io::write_graph(&path, g)?,
            Some(HeadInput::Vector(v)) => {
                let m = SliceFeatureMatrix::new(e.id.clone(), Tensor::new(vec![1, v.len()], v.clone())?)?;
                io::write_feature_matrix(&path, &m)?
            }
            Some(HeadInput::Heatmap(h)) => io::write_feature_matrix(&path, &SliceFeatureMatrix::new(e.id.clone(), h.clone())?)?,
            None => {}
        }
    }
    Ok(())
}

fn load_encoded(dir: &Path, videos: &[ExtractedVideo], repr: Representation) -> Result<Vec<EncodedVideo>> {
    videos
        .iter()
        .map(|v| {
            let path = dir.join(format!("{}.{}", v.id, ext(repr)));
            let input = match repr {
                Representation::Atp => None,
                Representation::Spg | Representation::Seg => Some(HeadInput::Graph(io::read_graph(&path)?)),
                Representation::Spv | Representation::Sta => {
                    Some(HeadInput::Vector(io::read_feature_matrix(&path)?.values().data().to_vec()))
                }
                Representation::Sph => Some(HeadInput::Heatmap(io::read_feature_matrix(&path)?.values().clone())),
            };
            Ok(EncodedVideo {
                id: v.id.clone(),
                split: v.split,
                label: v.label,
                input,
                atp: aggregate_atp(&v.summary.predictions)?,
            })
        })
        .collect()
}

fn save_head(path: &Path, head: &TrainedHead, key: Fingerprint, rng: RngState) -> Result<()> {
    let mut params = head.params.clone();
    params.insert("meta.input_mean", Tensor::vector(head.input_mean.clone()));
    params.insert("meta.input_std", Tensor::vector(head.input_std.clone()));
    params.insert("meta.label", Tensor::vector(vec![head.label_mean, head.label_std]));
    Checkpoint {
        params,
        fingerprint: key,
        rng,
    }
    .save(path)
}

fn load_head(path: &Path, key: &Fingerprint, kind: HeadKind) -> Result<TrainedHead> {
    let ck = Checkpoint::load(path, key)?;
    let mut params = Params::new();
    let mut meta = BTreeMap::new();
    for (name, t) in ck.params.into_inner() {
        match name.strip_prefix("meta.") {
            Some(m) => {
                meta.insert(m.to_string(), t.into_data());
            }
            None => params.insert(name, t),
        }
    }
    let mut take = |k: &str| meta.remove(k).ok_or_else(|| Error::format(path, format!("missing `meta.{k}`")));
    let (input_mean, input_std, label) = (take("input_mean")?, take("input_std")?, take("label")?);
    if label.len() != 2 {
        return Err(Error::format(path, "bad label statistics"));
    }
    Ok(TrainedHead {
        kind,
        params,
        input_mean,
        input_std,
        label_mean: label[0],
        label_std: label[1],
    })
}

fn write_head_log(path: &Path, log: &HeadLog) -> Result<()> {
    io::write_lines(
        path,
        log.epochs.iter().map(|e| {
            format!(
                "epoch={} train_mse={:.6e} validation_mse={}",
                e.epoch,
                e.train_mse,
                e.validation_mse.map_or("-".to_string(), |v| format!("{v:.6e}"))
            )
        }),
    )
}

/// Scores one graph file with the trained head of `cfg`.
pub fn predict_graph_file(cfg: RunConfig, path: &Path) -> Result<f64> {
    let pipeline = Pipeline::new(cfg)?;
    let graph = io::read_graph(path)?;
    let head = pipeline
        .trained_head()?
        .ok_or_else(|| Error::config("the averaged-prediction baseline has no head to score graphs with"))?;
    head.predict(&HeadInput::Graph(graph), &pipeline.cfg.head)
}
