//! Video-level regression heads: a graph attention network over spectral or
//! sequential graphs, plus the MLP and 1D-CNN heads used for the flat
//! baselines.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Conv3dSpec, Tape, Var};
use crate::checkpoint::RngState;
use crate::encoders::{GraphKind, VideoGraph};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::params::{glorot, he, Params};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatConfig {
    pub heads: usize,
    pub hidden_dim: usize,
    pub fc_widths: Vec<usize>,
    pub leaky_slope: f64,
}

impl Default for GatConfig {
    fn default() -> Self {
        Self {
            heads: 1,
            hidden_dim: 32,
            fc_widths: vec![64, 32, 1],
            leaky_slope: 0.2,
        }
    }
}

impl GatConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.hidden_dim == 0 {
            return Err(Error::config("gat heads and hidden_dim must be positive"));
        }
        validate_widths(&self.fc_widths, 3)
    }
}

fn validate_widths(widths: &[usize], layers: usize) -> Result<()> {
    if widths.len() != layers {
        return Err(Error::config(format!("expected {layers} fully connected widths, got {}", widths.len())));
    }
    if widths.contains(&0) || widths.last() != Some(&1) {
        return Err(Error::config("fully connected widths must be positive and end in 1"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub widths: Vec<usize>,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self { widths: vec![64, 32, 1] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnConfig {
    /// Output channels of the two convolution layers.
    pub channels: Vec<usize>,
    pub kernel: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            channels: vec![16, 16],
            kernel: 3,
        }
    }
}

impl CnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.len() != 2 || self.channels.contains(&0) {
            return Err(Error::config("the 1D-CNN head needs two positive channel counts"));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::config("the 1D-CNN kernel must be odd"));
        }
        Ok(())
    }
}

/// Head architectures and their shared training schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    pub gat: GatConfig,
    pub mlp: MlpConfig,
    pub cnn: CnnConfig,
    pub optimizer: AdamConfig,
    pub epochs: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            gat: GatConfig::default(),
            mlp: MlpConfig::default(),
            cnn: CnnConfig::default(),
            optimizer: AdamConfig {
                learning_rate: 1e-3,
                ..AdamConfig::default()
            },
            epochs: 40,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        self.gat.validate()?;
        validate_widths(&self.mlp.widths, 3)?;
        self.cnn.validate()
    }
}

/// Attention neighbourhoods of one relation: `mask[i * n + j]` is true when
/// vertex `i` attends to vertex `j`. Self-loops are always present.
#[derive(Debug, Clone, PartialEq)]
pub struct Relation {
    pub key: usize,
    pub mask: Vec<bool>,
}

fn self_loops(n: usize) -> Vec<bool> {
    (0..n * n).map(|i| i / n == i % n).collect()
}

/// Spectral graphs form one relation over the complete graph; sequential
/// graphs get one relation per time window, with messages flowing along
/// edge direction.
pub fn relations(graph: &VideoGraph) -> Vec<Relation> {
    let n = graph.num_vertices();
    match graph {
        VideoGraph::Spectral(g) => {
            let mut mask = g.adjacency();
            for i in 0..n {
                mask[i * n + i] = true;
            }
            vec![Relation { key: 0, mask }]
        }
        VideoGraph::Sequential(g) => g
            .window_set
            .iter()
            .map(|&w| {
                let mut mask = self_loops(n);
                for e in g.edges.iter().filter(|e| e.kind == w) {
                    mask[e.dst * n + e.src] = true;
                }
                Relation { key: w, mask }
            })
            .collect(),
    }
}

fn relation_keys(graph: &VideoGraph) -> Vec<usize> {
    match graph {
        VideoGraph::Spectral(_) => vec![0],
        VideoGraph::Sequential(g) => g.window_set.clone(),
    }
}

/// Initialises the attention layer for relations `keys` and the three FC
/// layers behind the readout.
pub fn init_gat(cfg: &GatConfig, in_dim: usize, keys: &[usize], rng: &mut impl Rng) -> Result<Params> {
    cfg.validate()?;
    let h = cfg.hidden_dim;
    let mut p = Params::new();
    for &k in keys {
        for head in 0..cfg.heads {
            let prefix = format!("gat.r{k}.h{head}");
            p.insert(format!("{prefix}.w"), glorot(&[h, in_dim], in_dim, h, rng));
            p.insert(format!("{prefix}.a_dst"), glorot(&[h, 1], 2 * h, 1, rng));
            p.insert(format!("{prefix}.a_src"), glorot(&[h, 1], 2 * h, 1, rng));
        }
    }
    p.insert("gat.b", Tensor::zeros(&[h]));
    init_fc(&mut p, "fc", h, &cfg.fc_widths, rng);
    Ok(p)
}

fn init_fc(p: &mut Params, prefix: &str, mut fan_in: usize, widths: &[usize], rng: &mut impl Rng) {
    for (i, &w) in widths.iter().enumerate() {
        let weight = if i + 1 < widths.len() {
            he(&[w, fan_in], fan_in, rng)
        } else {
            glorot(&[w, fan_in], fan_in, w, rng)
        };
        p.insert(format!("{prefix}{i}.w"), weight);
        p.insert(format!("{prefix}{i}.b"), Tensor::zeros(&[w]));
        fan_in = w;
    }
}

fn record_fc(tape: &mut Tape, params: &Params, prefix: &str, layers: usize, mut x: Var) -> Result<Var> {
    for i in 0..layers {
        let w = tape.param(params, &format!("{prefix}{i}.w"))?;
        let b = tape.param(params, &format!("{prefix}{i}.b"))?;
        if tape.shape(w)[1] != tape.value(x).len() {
            return Err(Error::config(format!(
                "layer `{prefix}{i}` expects {} inputs, got {}",
                tape.shape(w)[1],
                tape.value(x).len()
            )));
        }
        x = tape.linear(x, w, b)?;
        if i + 1 < layers {
            x = tape.relu(x);
        }
    }
    tape.check_finite(x, prefix)?;
    Ok(x)
}

struct LayerVars {
    out: Var,
    attention: Vec<Var>,
}

fn record_gat_layer(tape: &mut Tape, params: &Params, cfg: &GatConfig, x: Var, rels: &[Relation]) -> Result<LayerVars> {
    let (n, in_dim) = (tape.shape(x)[0], tape.shape(x)[1]);
    if n == 0 {
        return Err(Error::domain("graph has no vertices"));
    }
    let mut heads = Vec::with_capacity(cfg.heads);
    let mut attention = Vec::new();
    for head in 0..cfg.heads {
        let mut acc: Option<Var> = None;
        for rel in rels {
            if rel.mask.len() != n * n {
                return Err(Error::Shape(format!("relation {} mask does not match {n} vertices", rel.key)));
            }
            let prefix = format!("gat.r{}.h{head}", rel.key);
            let w = tape.param(params, &format!("{prefix}.w"))?;
            if tape.shape(w)[1] != in_dim {
                return Err(Error::config(format!(
                    "`{prefix}.w` expects {}-dimensional vertices, graph has {in_dim}",
                    tape.shape(w)[1]
                )));
            }
            let wt = tape.transpose(w)?;
            let z = tape.matmul(x, wt)?;
            let a_dst = tape.param(params, &format!("{prefix}.a_dst"))?;
            let a_src = tape.param(params, &format!("{prefix}.a_src"))?;
            let s_dst = tape.matmul(z, a_dst)?;
            let s_dst = tape.reshape(s_dst, &[n])?;
            let s_src = tape.matmul(z, a_src)?;
            let s_src = tape.reshape(s_src, &[n])?;
            let logits = tape.outer_sum(s_dst, s_src);
            let logits = tape.leaky_relu(logits, cfg.leaky_slope);
            let att = tape.masked_softmax_rows(logits, &rel.mask)?;
            attention.push(att);
            let msg = tape.matmul(att, z)?;
            acc = Some(match acc {
                None => msg,
                Some(a) => tape.add(a, msg)?,
            });
        }
        heads.push(acc.ok_or_else(|| Error::config("graph attention needs at least one relation"))?);
    }
    let mut sum = heads[0];
    for &h in &heads[1..] {
        sum = tape.add(sum, h)?;
    }
    let avg = tape.scale(sum, 1.0 / cfg.heads as f64);
    let b = tape.param(params, "gat.b")?;
    let out = tape.add_row(avg, b)?;
    let out = tape.relu(out);
    tape.check_finite(out, "gat")?;
    Ok(LayerVars { out, attention })
}

/// Output of one attention layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GatLayerOutput {
    /// `[n × hidden]`.
    pub features: Tensor,
    /// Attention matrices, relation-major within each head.
    pub attention: Vec<Tensor>,
}

pub fn gat_layer(features: &Tensor, rels: &[Relation], params: &Params, cfg: &GatConfig) -> Result<GatLayerOutput> {
    if features.rank() != 2 {
        return Err(Error::Shape("vertex features must be a matrix".into()));
    }
    let mut tape = Tape::new();
    let x = tape.leaf(features.clone());
    let out = record_gat_layer(&mut tape, params, cfg, x, rels)?;
    Ok(GatLayerOutput {
        features: tape.value(out.out).clone(),
        attention: out.attention.iter().map(|&a| tape.value(a).clone()).collect(),
    })
}

pub fn readout_mean(features: &Tensor) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let x = tape.leaf(features.clone());
    let m = tape.mean_rows(x)?;
    Ok(tape.value(m).data().to_vec())
}

fn record_gat(tape: &mut Tape, params: &Params, cfg: &GatConfig, graph: &VideoGraph, x: Var) -> Result<Var> {
    let layer = record_gat_layer(tape, params, cfg, x, &relations(graph))?;
    let pooled = tape.mean_rows(layer.out)?;
    record_fc(tape, params, "fc", cfg.fc_widths.len(), pooled)
}

/// Attention layer, mean readout and FC stack.
pub fn gat_predict(graph: &VideoGraph, params: &Params, cfg: &GatConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let x = tape.leaf(graph.vertex_features().clone());
    let out = record_gat(&mut tape, params, cfg, graph, x)?;
    Ok(tape.value(out).item())
}

/// Prediction and its gradient with respect to every head parameter.
pub fn gat_gradients(graph: &VideoGraph, params: &Params, cfg: &GatConfig) -> Result<(f64, BTreeMap<String, Tensor>)> {
    let mut tape = Tape::new();
    let x = tape.constant(graph.vertex_features().clone());
    let out = record_gat(&mut tape, params, cfg, graph, x)?;
    let y = tape.value(out).item();
    let sum = tape.sum(out);
    Ok((y, tape.backward_scalar(sum)?.params(params)))
}

pub fn init_mlp(cfg: &MlpConfig, in_dim: usize, rng: &mut impl Rng) -> Result<Params> {
    validate_widths(&cfg.widths, cfg.widths.len().max(1))?;
    let mut p = Params::new();
    init_fc(&mut p, "mlp", in_dim, &cfg.widths, rng);
    Ok(p)
}

pub fn mlp_head(input: &[f64], params: &Params, cfg: &MlpConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(input.to_vec()));
    let out = record_fc(&mut tape, params, "mlp", cfg.widths.len(), x)?;
    Ok(tape.value(out).item())
}

pub fn init_cnn(cfg: &CnnConfig, channels: usize, length: usize, rng: &mut impl Rng) -> Result<Params> {
    cfg.validate()?;
    let mut p = Params::new();
    let mut cin = channels;
    for (i, &c) in cfg.channels.iter().enumerate() {
        p.insert(format!("cnn.c{i}.w"), he(&[c, cin, cfg.kernel, 1, 1], cin * cfg.kernel, rng));
        p.insert(format!("cnn.c{i}.b"), Tensor::zeros(&[c]));
        cin = c;
    }
    let flat = cin * length;
    p.insert("cnn.fc.w", glorot(&[1, flat], flat, 1, rng));
    p.insert("cnn.fc.b", Tensor::zeros(&[1]));
    Ok(p)
}

fn record_cnn(tape: &mut Tape, params: &Params, cfg: &CnnConfig, heatmap: Var) -> Result<Var> {
    let (m, k) = (tape.shape(heatmap)[0], tape.shape(heatmap)[1]);
    let mut x = tape.reshape(heatmap, &[m, k, 1, 1])?;
    for i in 0..cfg.channels.len() {
        let w = tape.param(params, &format!("cnn.c{i}.w"))?;
        let b = tape.param(params, &format!("cnn.c{i}.b"))?;
        if tape.shape(w)[1] != tape.shape(x)[0] {
            return Err(Error::config(format!(
                "`cnn.c{i}` expects {} input channels, got {}",
                tape.shape(w)[1],
                tape.shape(x)[0]
            )));
        }
        x = tape.conv3d(x, w, b, Conv3dSpec::same([cfg.kernel, 1, 1]))?;
        x = tape.relu(x);
    }
    let flat_len = tape.value(x).len();
    let flat = tape.reshape(x, &[flat_len])?;
    let w = tape.param(params, "cnn.fc.w")?;
    let b = tape.param(params, "cnn.fc.b")?;
    if tape.shape(w)[1] != flat_len {
        return Err(Error::config(format!(
            "`cnn.fc` expects {} inputs, got {flat_len}",
            tape.shape(w)[1]
        )));
    }
    let out = tape.linear(flat, w, b)?;
    tape.check_finite(out, "cnn")?;
    Ok(out)
}

/// Two 1D convolutions along the frequency axis (channels are the rows of
/// the heatmap) followed by one FC layer.
pub fn conv1d_head(heatmap: &Tensor, params: &Params, cfg: &CnnConfig) -> Result<f64> {
    if heatmap.rank() != 2 {
        return Err(Error::Shape("heatmap must be a matrix".into()));
    }
    let mut tape = Tape::new();
    let x = tape.leaf(heatmap.clone());
    let out = record_cnn(&mut tape, params, cfg, x)?;
    Ok(tape.value(out).item())
}

/// Input of a video-level head.
#[derive(Debug, Clone, PartialEq)]
pub enum HeadInput {
    Graph(VideoGraph),
    Vector(Vec<f64>),
    Heatmap(Tensor),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Gat,
    Mlp,
    Cnn,
}

impl HeadInput {
    pub fn head_kind(&self) -> HeadKind {
        match self {
            HeadInput::Graph(_) => HeadKind::Gat,
            HeadInput::Vector(_) => HeadKind::Mlp,
            HeadInput::Heatmap(_) => HeadKind::Cnn,
        }
    }

    fn graph_kind(&self) -> Option<GraphKind> {
        match self {
            HeadInput::Graph(g) => Some(g.kind()),
            _ => None,
        }
    }

    /// Values standardised per input dimension: vertex-feature columns for
    /// graphs, entries for vectors and heatmaps.
    fn columns(&self) -> (usize, Vec<&[f64]>) {
        match self {
            HeadInput::Graph(g) => {
                let f = g.vertex_features();
                let d = f.shape()[1];
                (d, f.data().chunks(d).collect())
            }
            HeadInput::Vector(v) => (v.len(), vec![v.as_slice()]),
            HeadInput::Heatmap(h) => (h.len(), vec![h.data()]),
        }
    }

    fn standardized(&self, mean: &[f64], std: &[f64]) -> Result<HeadInput> {
        let (d, _) = self.columns();
        if d != mean.len() {
            return Err(Error::config(format!(
                "head was trained on {}-dimensional inputs, got {d}",
                mean.len()
            )));
        }
        let apply = |t: &Tensor| {
            let mut t = t.clone();
            for (i, v) in t.data_mut().iter_mut().enumerate() {
                let c = i % d;
                *v = (*v - mean[c]) / std[c];
            }
            t
        };
        Ok(match self {
            HeadInput::Graph(VideoGraph::Spectral(g)) => HeadInput::Graph(VideoGraph::Spectral(crate::encoders::SpectralGraph {
                vertex_features: apply(&g.vertex_features),
                channel_ids: g.channel_ids.clone(),
            })),
            HeadInput::Graph(VideoGraph::Sequential(g)) => HeadInput::Graph(VideoGraph::Sequential(crate::encoders::SequentialGraph {
                vertex_features: apply(&g.vertex_features),
                edges: g.edges.clone(),
                window_set: g.window_set.clone(),
            })),
            HeadInput::Vector(v) => HeadInput::Vector(apply(&Tensor::vector(v.clone())).into_data()),
            HeadInput::Heatmap(h) => HeadInput::Heatmap(apply(h)),
        })
    }
}

fn record_head(tape: &mut Tape, params: &Params, cfg: &HeadConfig, input: &HeadInput) -> Result<Var> {
    match input {
        HeadInput::Graph(g) => {
            let x = tape.leaf(g.vertex_features().clone());
            record_gat(tape, params, &cfg.gat, g, x)
        }
        HeadInput::Vector(v) => {
            let x = tape.leaf(Tensor::vector(v.clone()));
            record_fc(tape, params, "mlp", cfg.mlp.widths.len(), x)
        }
        HeadInput::Heatmap(h) => {
            let x = tape.leaf(h.clone());
            record_cnn(tape, params, &cfg.cnn, x)
        }
    }
}

/// Raw network output for an already standardised input.
pub fn head_forward(input: &HeadInput, params: &Params, cfg: &HeadConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let out = record_head(&mut tape, params, cfg, input)?;
    Ok(tape.value(out).item())
}

/// A trained head together with the input and label standardisation it was
/// trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedHead {
    pub kind: HeadKind,
    pub params: Params,
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub label_mean: f64,
    pub label_std: f64,
}

impl TrainedHead {
    /// Severity prediction in label units.
    pub fn predict(&self, input: &HeadInput, cfg: &HeadConfig) -> Result<f64> {
        if input.head_kind() != self.kind {
            return Err(Error::config(format!(
                "a {:?} head cannot score {:?} input",
                self.kind,
                input.head_kind()
            )));
        }
        let x = input.standardized(&self.input_mean, &self.input_std)?;
        Ok(self.label_mean + self.label_std * head_forward(&x, &self.params, cfg)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub validation_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct HeadLog {
    /// Squared error of every optimiser step, in standardised label units.
    pub step_losses: Vec<f64>,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    /// Shuffler position after the last epoch.
    pub rng: RngState,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count().max(1) as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 1e-12 { std } else { 1.0 })
}

fn check_kinds(items: &[(HeadInput, f64)]) -> Result<(HeadKind, Option<GraphKind>)> {
    let first = items.first().ok_or_else(|| Error::domain("head training set is empty"))?;
    let (kind, graph) = (first.0.head_kind(), first.0.graph_kind());
    for (x, _) in items {
        if x.head_kind() != kind || x.graph_kind() != graph {
            return Err(Error::config("head inputs mix representation kinds"));
        }
    }
    Ok((kind, graph))
}

fn init_head(cfg: &HeadConfig, items: &[(HeadInput, f64)], rng: &mut impl Rng) -> Result<Params> {
    match &items[0].0 {
        HeadInput::Graph(g) => {
            let keys: BTreeSet<usize> = items
                .iter()
                .filter_map(|(x, _)| match x {
                    HeadInput::Graph(g) => Some(relation_keys(g)),
                    _ => None,
                })
                .flatten()
                .collect();
            let keys: Vec<usize> = keys.into_iter().collect();
            init_gat(&cfg.gat, g.feature_dim(), &keys, rng)
        }
        HeadInput::Vector(v) => init_mlp(&cfg.mlp, v.len(), rng),
        HeadInput::Heatmap(h) => init_cnn(&cfg.cnn, h.shape()[0], h.shape()[1], rng),
    }
}

fn mse(head: &TrainedHead, cfg: &HeadConfig, items: &[(HeadInput, f64)]) -> Result<f64> {
    let mut acc = 0.0;
    for (x, y) in items {
        let e = (head.predict(x, cfg)? - y) / head.label_std;
        acc += e * e;
    }
    Ok(acc / items.len() as f64)
}

/// Trains a head with one input per optimiser step and mean squared error.
///
/// Inputs and labels are standardised with training-set statistics. When a
/// validation set is given, the parameters of the epoch with the lowest
/// validation error are kept; otherwise the final ones.
pub fn train_head(
    train: &[(HeadInput, f64)],
    validation: &[(HeadInput, f64)],
    cfg: &HeadConfig,
    seed: u64,
) -> Result<(TrainedHead, HeadLog)> {
    cfg.validate()?;
    let (kind, graph_kind) = check_kinds(train)?;
    if !validation.is_empty() && check_kinds(validation)? != (kind, graph_kind) {
        return Err(Error::config("validation inputs differ in kind from training inputs"));
    }
    let (dim, _) = train[0].0.columns();
    let mut input_mean = Vec::with_capacity(dim);
    let mut input_std = Vec::with_capacity(dim);
    for c in 0..dim {
        let column = train.iter().flat_map(|(x, _)| {
            let (d, rows) = x.columns();
            if d != dim {
                return Vec::new();
            }
            rows.into_iter().map(|r| r[c]).collect::<Vec<_>>()
        });
        let (m, s) = mean_std(column);
        input_mean.push(m);
        input_std.push(s);
    }
    let (label_mean, label_std) = mean_std(train.iter().map(|(_, y)| *y));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = init_head(cfg, train, &mut rng)?;
    let mut head = TrainedHead {
        kind,
        params,
        input_mean,
        input_std,
        label_mean,
        label_std,
    };
    let standardized = train
        .iter()
        .map(|(x, y)| Ok((x.standardized(&head.input_mean, &head.input_std)?, (y - label_mean) / label_std)))
        .collect::<Result<Vec<_>>>()?;

    let mut adam = Adam::new(cfg.optimizer);
    let mut log = HeadLog::default();
    let mut best: Option<(f64, Params)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for &i in &order {
            let (x, y) = &standardized[i];
            let mut tape = Tape::new();
            let out = record_head(&mut tape, &head.params, cfg, x)?;
            let target = tape.constant(Tensor::vector(vec![*y]));
            let e = tape.sub(out, target)?;
            let sq = tape.mul(e, e)?;
            let loss = tape.sum(sq);
            let l = tape.value(loss).item();
            let grads = tape.backward_scalar(loss)?.params(&head.params);
            adam.step(&mut head.params, &grads)?;
            log.step_losses.push(l);
            epoch_loss += l;
        }
        let validation_mse = if validation.is_empty() {
            None
        } else {
            Some(mse(&head, cfg, validation)?)
        };
        log.epochs.push(EpochRecord {
            epoch,
            train_mse: epoch_loss / train.len() as f64,
            validation_mse,
        });
        if let Some(v) = validation_mse {
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, head.params.clone()));
                log.best_epoch = epoch;
            }
        } else {
            log.best_epoch = epoch;
        }
    }
    if let Some((_, params)) = best {
        head.params = params;
    }
    log.rng = RngState::capture(&rng);
    Ok((head, log))
}

/// [`train_head`] restricted to graph inputs of a single kind.
pub fn train_graph_head(
    train: &[(VideoGraph, f64)],
    validation: &[(VideoGraph, f64)],
    cfg: &HeadConfig,
    seed: u64,
) -> Result<(TrainedHead, HeadLog)> {
    let wrap = |items: &[(VideoGraph, f64)]| -> Vec<(HeadInput, f64)> {
        items.iter().map(|(g, y)| (HeadInput::Graph(g.clone()), *y)).collect()
    };
    train_head(&wrap(train), &wrap(validation), cfg, seed)
}
