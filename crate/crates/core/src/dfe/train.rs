//! Short-term training on category-homogeneous slice batches.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::loss::{self, LossBreakdown, MemberVars};
use super::{init_params, record_slice, ShortTermConfig};
use crate::autograd::Tape;
use crate::checkpoint::RngState;
use crate::corpus::{self, Corpus, SeverityCategory, Split, ThinSlice, VideoSample};
use crate::error::{Error, Result};
use crate::optim::{accumulate_grads, Adam};
use crate::params::Params;
use crate::tensor::Tensor;

/// One labelled slice of a training batch.
#[derive(Debug, Clone)]
pub struct TrainingSlice {
    pub slice: ThinSlice,
    pub bdi: f64,
    pub category: SeverityCategory,
}

/// One optimiser step's log entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub category: SeverityCategory,
    pub losses: LossBreakdown,
}

impl fmt::Display for StepRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let l = &self.losses;
        write!(
            f,
            "step={} category={} l_ns={:.6e} l_mta={:.6e} l_sim={:.6e} l_dsim={:.6e} l_rec={:.6e} l_short={:.6e}",
            self.step, self.category, l.l_ns, l.l_mta, l.l_sim, l.l_dsim, l.l_rec, l.l_short
        )
    }
}

#[derive(Debug, Clone)]
pub struct ShortTermModel {
    pub params: Params,
    pub log: Vec<StepRecord>,
    /// Sampler position after the last step.
    pub rng: RngState,
}

/// `L_short` of one batch and its gradient with respect to every parameter.
///
/// Each slice runs on its own tape (in parallel); the loss is recorded on a
/// separate tape over the per-slice outputs, and its gradients seed the
/// per-slice reverse passes. Gradients are summed in batch order.
pub fn loss_and_gradients(
    params: &Params,
    cfg: &ShortTermConfig,
    batch: &[TrainingSlice],
) -> Result<(LossBreakdown, BTreeMap<String, Tensor>)> {
    loss::check_homogeneous(batch.iter().map(|b| b.category))?;
    let forwards = batch
        .par_iter()
        .map(|item| {
            let mut tape = Tape::new();
            let input = tape.leaf(item.slice.frames.to_channels_first());
            let vars = record_slice(&mut tape, params, cfg, input)?;
            Ok((tape, vars))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut loss_tape = Tape::new();
    let members: Vec<MemberVars> = forwards
        .iter()
        .map(|(tape, v)| {
            let mut leaf = |x| loss_tape.leaf(tape.value(x).clone());
            MemberVars {
                p_ns: leaf(v.p_ns),
                p_mta: leaf(v.p_mta),
                f: leaf(v.f),
                f_dep: leaf(v.f_dep),
                f_non: leaf(v.f_non),
                f_dec: leaf(v.f_dec),
            }
        })
        .collect();
    let labels: Vec<f64> = batch.iter().map(|b| b.bdi / cfg.target_scale).collect();
    let vars = loss::record(&mut loss_tape, &members, &labels, cfg.weights)?;
    let breakdown = vars.breakdown(&loss_tape, cfg.weights);
    let upstream = loss_tape.backward_scalar(vars.l_short)?;

    let per_slice = forwards
        .par_iter()
        .zip(&members)
        .map(|((tape, v), m)| {
            let pairs = [
                (v.p_ns, m.p_ns),
                (v.p_mta, m.p_mta),
                (v.f, m.f),
                (v.f_dep, m.f_dep),
                (v.f_non, m.f_non),
                (v.f_dec, m.f_dec),
            ];
            let seeds: Vec<_> = pairs
                .iter()
                .filter_map(|&(local, leaf)| upstream.get(leaf).map(|g| (local, g.clone())))
                .collect();
            Ok(tape.backward(&seeds)?.params(params))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grads = BTreeMap::new();
    for g in per_slice {
        accumulate_grads(&mut grads, g);
    }
    Ok((breakdown, grads))
}

struct Pool<'a> {
    video: &'a VideoSample,
    source: Vec<usize>,
    slices: usize,
}

/// Trains backbone, attention and noise separation on the training split.
pub fn train_short_term(corpus: &Corpus, cfg: &ShortTermConfig, seed: u64) -> Result<ShortTermModel> {
    cfg.validate()?;
    let (len, stride) = (cfg.mtb.slice_length, cfg.stride());
    let train: Vec<&VideoSample> = corpus.samples_in(Split::Train).collect();
    if train.is_empty() {
        return Err(Error::domain("training split is empty"));
    }

    let mut pools: BTreeMap<SeverityCategory, Vec<Pool>> = BTreeMap::new();
    for v in &train {
        let Ok(slices) = corpus::slice_count(v.num_frames(), len, stride) else {
            continue;
        };
        let Ok(source) = corpus::nearest_valid_indices(&v.frame_valid) else {
            continue;
        };
        pools.entry(v.category).or_default().push(Pool {
            video: v,
            source,
            slices,
        });
    }
    let mut cycle = Vec::new();
    for c in SeverityCategory::ALL {
        if pools.contains_key(&c) {
            cycle.push(c);
        } else {
            log::warn!("no training slices for category {c}; skipping it");
        }
    }
    if cycle.is_empty() {
        return Err(Error::domain("no training video is long enough for one slice"));
    }

    let label_mean = train.iter().map(|v| v.bdi_score as f64).sum::<f64>() / train.len() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = init_params(cfg, label_mean, &mut rng)?;
    let mut adam = Adam::new(cfg.optimizer);
    let mut log = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let category = cycle[step % cycle.len()];
        let pool = &pools[&category];
        let picks: Vec<usize> = if pool.len() >= cfg.batch_size {
            sample(&mut rng, pool.len(), cfg.batch_size).into_vec()
        } else {
            (0..cfg.batch_size).map(|_| rng.random_range(0..pool.len())).collect()
        };
        let batch: Vec<TrainingSlice> = picks
            .into_iter()
            .map(|i| {
                let p = &pool[i];
                let index = rng.random_range(0..p.slices);
                TrainingSlice {
                    slice: corpus::imputed_slice(p.video, &p.source, index, len, stride),
                    bdi: p.video.bdi_score as f64,
                    category,
                }
            })
            .collect();
        let (losses, grads) = loss_and_gradients(&params, cfg, &batch)?;
        adam.step(&mut params, &grads)?;
        let record = StepRecord { step, category, losses };
        log::debug!("{record}");
        log.push(record);
    }
    Ok(ShortTermModel {
        params,
        log,
        rng: RngState::capture(&rng),
    })
}
