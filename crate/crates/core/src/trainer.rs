//! Decoder head, joint loss `β₁L₁ + β₂L₂`, mini-batch training, model
//! selection and checkpoints.

use std::path::Path;
use std::sync::Arc;

use indexmap::IndexMap;
use log::{debug, info};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::diff::{bce_loss, linear, relu, sigmoid_scalar, Adam, AdamConfig, Matrix, ParamId, ParamRegistry, Tape, TensorRecord, Var};
use crate::encoders::{multi_channel_encode, ChannelEncoderParams, Dropout, EncoderDims, EncoderKind, Frame};
use crate::error::{Error, Result};
use crate::eval;
use crate::graph::{BipartiteGraph, ChannelKind, ChannelSpec, Side, Split, SplitAssignment};
use crate::restore::{embedding_param_name, tape_channel_loss, EdgeWeightStore};
use crate::seed;

/// Model family: a plain baseline encoder or the joint restoration model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Mlp,
    Gcn,
    Sage,
    Gat,
    JmmfrMc,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [ModelKind::Mlp, ModelKind::Gcn, ModelKind::Sage, ModelKind::Gat, ModelKind::JmmfrMc];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Mlp => "mlp",
            ModelKind::Gcn => "gcn",
            ModelKind::Sage => "sage",
            ModelKind::Gat => "gat",
            ModelKind::JmmfrMc => "jmmfr-mc",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown encoder kind {s:?} (expected mlp|gcn|sage|gat|jmmfr-mc)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub encoder: ModelKind,
    /// Channel encoder used inside `jmmfr-mc`.
    pub backbone: EncoderKind,
    /// Overrides whether feature restoration runs; by default only `jmmfr-mc` restores.
    pub restoration: Option<bool>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    pub seed: u64,
    pub decoder_hidden: usize,
    pub depth: usize,
    pub proj_dim: usize,
    pub channel_dim: usize,
    /// Fraction of nodes blanked before training (see [`prepare_graph`]).
    pub missing_ratio: Option<f64>,
    /// Evaluate L₁ over every observed node instead of the batch nodes.
    pub full_graph_l1: bool,
    /// Node side whose validation AP selects the checkpoint.
    pub select_side: Side,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let dims = EncoderDims::default();
        ExperimentConfig {
            encoder: ModelKind::JmmfrMc,
            backbone: EncoderKind::Sage,
            restoration: None,
            batch_size: 1000,
            learning_rate: 0.001,
            dropout: 0.5,
            beta1: 1.0,
            beta2: 1.0,
            epochs: 100,
            patience: 20,
            seed: 7,
            decoder_hidden: 32,
            depth: dims.depth,
            proj_dim: dims.proj_dim,
            channel_dim: dims.out_dim,
            missing_ratio: None,
            full_graph_l1: false,
            select_side: Side::Member,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.beta1 >= 0.0 && self.beta2 >= 0.0 && self.beta1.is_finite() && self.beta2.is_finite()) {
            return bad("beta1 and beta2 must be non-negative".into());
        }
        if self.depth == 0 || self.depth > 2 {
            return bad(format!("depth {} outside 1..=2", self.depth));
        }
        if self.decoder_hidden == 0 || self.proj_dim == 0 || self.channel_dim == 0 {
            return bad("dims must be positive".into());
        }
        if let Some(r) = self.missing_ratio {
            if !(0.0..=1.0).contains(&r) {
                return bad(format!("missing_ratio {r} outside [0, 1]"));
            }
        }
        if self.encoder == ModelKind::JmmfrMc && self.backbone == EncoderKind::Gat || self.encoder == ModelKind::Gat {
            if self.channel_dim % crate::encoders::GAT_HEADS != 0 {
                return bad("GAT needs an even channel_dim".into());
            }
        }
        Ok(())
    }

    pub fn encoder_kind(&self) -> EncoderKind {
        match self.encoder {
            ModelKind::Mlp => EncoderKind::Mlp,
            ModelKind::Gcn => EncoderKind::Gcn,
            ModelKind::Sage => EncoderKind::Sage,
            ModelKind::Gat => EncoderKind::Gat,
            ModelKind::JmmfrMc => self.backbone,
        }
    }

    pub fn restoration_enabled(&self) -> bool {
        self.restoration.unwrap_or(self.encoder == ModelKind::JmmfrMc)
    }

    pub fn dims(&self) -> EncoderDims {
        EncoderDims {
            proj_dim: self.proj_dim,
            out_dim: self.channel_dim,
            depth: self.depth,
        }
    }
}

/// Applies `cfg.missing_ratio` (if any) with a seed derived from `cfg.seed`.
/// Returns the masked graph and the newly blanked nodes (flat ids).
pub fn prepare_graph(g: &BipartiteGraph, cfg: &ExperimentConfig) -> Result<(BipartiteGraph, Vec<usize>)> {
    match cfg.missing_ratio {
        Some(r) => {
            let (m, nodes) = g.apply_missing_mask(r, seed::derive(cfg.seed, "mask"))?;
            let flat = nodes.iter().map(|&n| g.flat(n)).collect::<Result<Vec<_>>>()?;
            Ok((m, flat))
        }
        None => Ok((g.clone(), Vec::new())),
    }
}

/// Assembled model: parameter handles plus the structural choices.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ExperimentConfig,
    pub specs: Vec<ChannelSpec>,
    pub store: Option<EdgeWeightStore>,
    pub channels: Vec<ChannelEncoderParams>,
    /// `[hidden W, hidden b, out W, out b]`.
    pub decoder: [ParamId; 4],
    graph_layers: usize,
}

/// Tape values of one forward pass over a frame's targets.
pub struct Forward {
    pub probs: Var,
    pub embedding: Var,
    /// Restoration weight tensors as placed on the tape, per channel.
    pub weights: Vec<Option<Var>>,
}

impl Model {
    /// Registers all parameters in a fixed order: embeddings, restoration
    /// weights, channel encoders, decoder.
    pub fn build(g: &BipartiteGraph, cfg: &ExperimentConfig) -> Result<(Model, ParamRegistry)> {
        cfg.validate()?;
        let specs = g.channel_specs();
        let kind = cfg.encoder_kind();
        let restore = cfg.restoration_enabled();
        let mut reg = ParamRegistry::new();
        let mut rng = seed::rng(cfg.seed, "init");
        for s in specs.iter().filter(|s| s.kind == ChannelKind::EmbeddingLookup) {
            reg.glorot(&embedding_param_name(&s.name), s.vocab, s.dim, &mut rng)?;
        }
        let names: Vec<String> = specs.iter().map(|s| s.name.clone()).collect();
        let store = if restore {
            Some(EdgeWeightStore::register(&mut reg, g, &names)?)
        } else {
            None
        };
        let dims = cfg.dims();
        let channels = specs
            .iter()
            .map(|s| {
                let width = if restore { 2 * s.dim } else { s.dim };
                ChannelEncoderParams::register(&mut reg, &s.name, kind, width, &dims, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let m = cfg.channel_dim * specs.len();
        let d = cfg.decoder_hidden;
        let decoder = [
            reg.glorot("dec/hidden/w", d, m, &mut rng)?,
            reg.zeros("dec/hidden/b", &[d])?,
            reg.glorot("dec/out/w", 1, d, &mut rng)?,
            reg.zeros("dec/out/b", &[1])?,
        ];
        let model = Model {
            config: cfg.clone(),
            specs,
            store,
            channels,
            decoder,
            graph_layers: kind.graph_layers(cfg.depth),
        };
        Ok((model, reg))
    }

    pub fn frame(&self, g: &BipartiteGraph, targets: &[u32]) -> Result<Frame> {
        Frame::build(g, targets, self.graph_layers)
    }

    pub fn embedding_dim(&self) -> usize {
        self.channels.iter().map(|c| c.out_dim).sum()
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        reg: &ParamRegistry,
        g: &BipartiteGraph,
        frame: &Frame,
        drop: &mut Dropout,
    ) -> Result<Forward> {
        let weights: Vec<Option<Var>> = self
            .channels
            .iter()
            .map(|c| {
                self.store
                    .as_ref()
                    .map(|s| s.param(&c.channel).map(|id| tape.param(reg, id)))
                    .transpose()
            })
            .collect::<Result<_>>()?;
        let embedding = multi_channel_encode(tape, reg, g, frame, &self.channels, &weights, drop)?;
        let [hw, hb, ow, ob] = self.decoder.map(|id| tape.param(reg, id));
        let h = tape.linear(embedding, hw, Some(hb))?;
        let h = tape.relu(h);
        let h = drop.apply(tape, h)?;
        let logit = tape.linear(h, ow, Some(ob))?;
        let probs = tape.sigmoid(logit);
        Ok(Forward {
            probs,
            embedding,
            weights,
        })
    }

    /// L₁ on the tape: mean over eligible channels of the restoration loss
    /// over `receivers` observed on that channel. `None` without restoration
    /// or when no receiver is observed.
    pub fn restoration_loss(
        &self,
        tape: &mut Tape,
        g: &BipartiteGraph,
        fw: &Forward,
        receivers: &[u32],
    ) -> Result<Option<Var>> {
        if self.store.is_none() {
            return Ok(None);
        }
        let mut terms = Vec::new();
        for (c, w) in self.channels.iter().zip(&fw.weights) {
            let ch = g.channel(&c.channel)?;
            if !ch.spec.in_restoration_loss {
                continue;
            }
            let observed: Vec<u32> = receivers.iter().copied().filter(|&f| ch.is_observed(f as usize)).collect();
            if let Some(l) = tape_channel_loss(tape, g, &c.channel, w.expect("restoration weights"), &observed)? {
                terms.push(l);
            }
        }
        if terms.is_empty() {
            return Ok(None);
        }
        let k = terms.len() as f64;
        let terms: Vec<(Var, f64)> = terms.into_iter().map(|t| (t, 1.0 / k)).collect();
        tape.lin_comb(&terms).map(Some)
    }

    /// Deterministic remoteness probabilities for `nodes`, evaluated in chunks
    /// of the configured batch size.
    pub fn predict(&self, reg: &ParamRegistry, g: &BipartiteGraph, nodes: &[u32]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(nodes.len());
        for chunk in nodes.chunks(self.config.batch_size.max(1)) {
            let frame = self.frame(g, chunk)?;
            let mut tape = Tape::new();
            let fw = self.forward(&mut tape, reg, g, &frame, &mut Dropout::off())?;
            out.extend_from_slice(&tape.value(fw.probs).data);
        }
        Ok(out)
    }

    /// Concatenated channel embeddings for `nodes` (rows in the given order).
    pub fn embed(&self, reg: &ParamRegistry, g: &BipartiteGraph, nodes: &[u32]) -> Result<Matrix> {
        let mut data = Vec::with_capacity(nodes.len() * self.embedding_dim());
        for chunk in nodes.chunks(self.config.batch_size.max(1)) {
            let frame = self.frame(g, chunk)?;
            let mut tape = Tape::new();
            let fw = self.forward(&mut tape, reg, g, &frame, &mut Dropout::off())?;
            data.extend_from_slice(&tape.value(fw.embedding).data);
        }
        Matrix::from_vec(nodes.len(), self.embedding_dim(), data)
    }

    /// Evaluation-mode L₂ over labeled `nodes`.
    pub fn task_loss(&self, reg: &ParamRegistry, g: &BipartiteGraph, nodes: &[u32]) -> Result<f64> {
        let p = self.predict(reg, g, nodes)?;
        let y = labels_of(g, nodes)?;
        task_loss(&p, &y)
    }
}

fn labels_of(g: &BipartiteGraph, nodes: &[u32]) -> Result<Vec<f64>> {
    nodes
        .iter()
        .map(|&f| {
            g.label(f as usize)
                .map(f64::from)
                .ok_or_else(|| Error::InvalidNode(format!("node {} has no label", g.id(f as usize))))
        })
        .collect()
}

/// Decoder on a single embedding: `sigmoid(W₂ relu(W₁ z + b₁) + b₂)`.
pub fn decode(reg: &ParamRegistry, model: &Model, z: &[f64]) -> Result<f64> {
    let [hw, hb, ow, ob] = model.decoder.map(|id| reg.get(id));
    let h = relu(&linear(z, hw, hb)?);
    Ok(sigmoid_scalar(linear(&h, ow, ob)?[0]))
}

/// Mean BCE of predictions against labels.
pub fn task_loss(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    bce_loss(predictions, labels, &vec![true; labels.len()])
}

pub fn total_loss(l1: f64, l2: f64, beta1: f64, beta2: f64) -> f64 {
    beta1 * l1 + beta2 * l2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Size-weighted mean over batches; absent without restoration.
    pub l1: Option<f64>,
    pub l2: f64,
    pub total: f64,
    pub val_metric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SideMetrics {
    pub n: usize,
    pub accuracy: f64,
    /// Absent when the node set has no positive label.
    pub average_precision: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub member: Option<SideMetrics>,
    pub job: Option<SideMetrics>,
}

impl SplitMetrics {
    pub fn side(&self, side: Side) -> Option<&SideMetrics> {
        match side {
            Side::Member => self.member.as_ref(),
            Side::Job => self.job.as_ref(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub encoder: ModelKind,
    pub seed: u64,
    pub history: Vec<EpochRecord>,
    /// Epoch of the selected checkpoint; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
    pub val: SplitMetrics,
    pub test: SplitMetrics,
}

/// Everything needed to rebuild a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub channels: Vec<ChannelSpec>,
    pub n_members: usize,
    pub n_jobs: usize,
    pub n_edges: usize,
    pub params: IndexMap<String, TensorRecord>,
}

impl Checkpoint {
    pub fn new(model: &Model, reg: &ParamRegistry, g: &BipartiteGraph) -> Self {
        Checkpoint {
            config: model.config.clone(),
            channels: model.specs.clone(),
            n_members: g.n_members(),
            n_jobs: g.n_jobs(),
            n_edges: g.n_edges(),
            params: reg.to_records(),
        }
    }

    /// Rebuilds the model on `g`, which must have the same node/edge counts
    /// and channel schema as the training graph.
    pub fn model(&self, g: &BipartiteGraph) -> Result<(Model, ParamRegistry)> {
        let here = (g.n_members(), g.n_jobs(), g.n_edges());
        let there = (self.n_members, self.n_jobs, self.n_edges);
        if here != there {
            return Err(Error::Incompatible(format!(
                "checkpoint was trained on (members, jobs, edges) = {there:?}, graph has {here:?}"
            )));
        }
        if g.channel_specs() != self.channels {
            return Err(Error::Incompatible(format!(
                "channel schema differs: checkpoint {:?}, graph {:?}",
                self.channels,
                g.channel_specs()
            )));
        }
        let (model, mut reg) = Model::build(g, &self.config)?;
        reg.load_values_from(&ParamRegistry::from_records(&self.params)?)?;
        Ok((model, reg))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string(self)?;
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&body)?)
    }
}

/// Metrics of the model on the labeled nodes of `split`, per side.
pub fn evaluate(model: &Model, reg: &ParamRegistry, g: &BipartiteGraph, split: &SplitAssignment, which: Split) -> Result<SplitMetrics> {
    let side_metrics = |side: Side| -> Result<Option<SideMetrics>> {
        let nodes: Vec<u32> = split.nodes_on_side(which, side).into_iter().map(|f| f as u32).collect();
        if nodes.is_empty() {
            return Ok(None);
        }
        let p = model.predict(reg, g, &nodes)?;
        let y: Vec<u8> = nodes.iter().map(|&f| g.label(f as usize).unwrap()).collect();
        Ok(Some(SideMetrics {
            n: nodes.len(),
            accuracy: eval::accuracy(&p, &y, 0.5)?,
            average_precision: eval::average_precision(&p, &y).ok(),
        }))
    };
    Ok(SplitMetrics {
        member: side_metrics(Side::Member)?,
        job: side_metrics(Side::Job)?,
    })
}

/// Selection metric: validation AP on the configured side, falling back to
/// accuracy when that side has no positive label.
fn selection_metric(m: &SplitMetrics, side: Side) -> f64 {
    m.side(side)
        .map(|s| s.average_precision.unwrap_or(s.accuracy))
        .unwrap_or(0.0)
}

/// Per-batch loss terms.
pub struct BatchLoss {
    pub total: Var,
    pub l1: Option<Var>,
    pub l2: Var,
}

/// Builds `β₁L₁ + β₂L₂` for one batch of labeled target nodes.
pub fn batch_loss(
    model: &Model,
    tape: &mut Tape,
    reg: &ParamRegistry,
    g: &BipartiteGraph,
    batch: &[u32],
    drop: &mut Dropout,
) -> Result<BatchLoss> {
    let cfg = &model.config;
    let frame = model.frame(g, batch)?;
    let fw = model.forward(tape, reg, g, &frame, drop)?;
    let l2 = tape.bce(fw.probs, Arc::new(labels_of(g, batch)?))?;
    let l1 = if cfg.full_graph_l1 {
        let all: Vec<u32> = (0..g.n_nodes() as u32).collect();
        model.restoration_loss(tape, g, &fw, &all)?
    } else {
        model.restoration_loss(tape, g, &fw, batch)?
    };
    let mut terms = vec![(l2, cfg.beta2)];
    if let Some(l1) = l1 {
        terms.push((l1, cfg.beta1));
    }
    let total = tape.lin_comb(&terms)?;
    Ok(BatchLoss { total, l1, l2 })
}

pub struct TrainOutcome {
    pub report: TrainReport,
    pub model: Model,
    pub params: ParamRegistry,
    pub checkpoint: Checkpoint,
}

/// Trains on the labeled train nodes of `split` and returns the checkpoint
/// with the best validation metric, evaluated once on val and test.
pub fn train(g: &BipartiteGraph, split: &SplitAssignment, cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    if split.len() != g.n_nodes() {
        return Err(Error::Incompatible("split does not belong to this graph".into()));
    }
    let (model, mut reg) = Model::build(g, cfg)?;
    info!(
        "training {} (backbone {}, restoration {}) on {} nodes, seed {}",
        cfg.encoder,
        cfg.encoder_kind(),
        cfg.restoration_enabled(),
        g.n_nodes(),
        cfg.seed
    );
    let mut train_nodes: Vec<u32> = split.nodes(Split::Train).into_iter().map(|f| f as u32).collect();
    if train_nodes.is_empty() && cfg.epochs > 0 {
        return Err(Error::Empty("no labeled training nodes".into()));
    }
    let mut adam = Adam::new(AdamConfig { lr: cfg.learning_rate, ..AdamConfig::default() }, &reg);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, Vec<f64>)> = None;
    let mut since_best = 0usize;
    for epoch in 0..cfg.epochs {
        train_nodes.sort_unstable();
        train_nodes.shuffle(&mut seed::rng_indexed(cfg.seed, "epoch-order", epoch as u64));
        let (mut s1, mut s2, mut st, mut n1) = (0.0, 0.0, 0.0, 0usize);
        for (b, batch) in train_nodes.chunks(cfg.batch_size).enumerate() {
            let mut drop = Dropout::train(
                cfg.dropout,
                seed::rng_indexed(cfg.seed, "dropout", ((epoch as u64) << 32) | b as u64),
            );
            let mut tape = Tape::new();
            let loss = batch_loss(&model, &mut tape, &reg, g, batch, &mut drop)?;
            let total = tape.scalar(loss.total);
            if !total.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            reg.zero_grads();
            tape.backward(loss.total, &mut reg)?;
            adam.step(&mut reg)?;
            let w = batch.len() as f64;
            st += w * total;
            s2 += w * tape.scalar(loss.l2);
            if let Some(l1) = loss.l1 {
                s1 += w * tape.scalar(l1);
                n1 += batch.len();
            }
        }
        let n = train_nodes.len() as f64;
        let val = evaluate(&model, &reg, g, split, Split::Val)?;
        let metric = selection_metric(&val, cfg.select_side);
        let rec = EpochRecord {
            epoch,
            l1: (n1 > 0).then(|| s1 / n1 as f64),
            l2: s2 / n,
            total: st / n,
            val_metric: metric,
        };
        debug!("epoch {epoch}: total {:.6} l2 {:.6} l1 {:?} val {:.4}", rec.total, rec.l2, rec.l1, metric);
        history.push(rec);
        if best.as_ref().is_none_or(|(_, m, _)| metric > *m) {
            best = Some((epoch, metric, reg.flat_values()));
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience > 0 && since_best >= cfg.patience {
                debug!("early stop at epoch {epoch}");
                break;
            }
        }
    }
    let best_epoch = best.as_ref().map(|(e, _, _)| *e);
    if let Some((_, _, values)) = &best {
        reg.set_flat_values(values)?;
    }
    let val = evaluate(&model, &reg, g, split, Split::Val)?;
    let test = evaluate(&model, &reg, g, split, Split::Test)?;
    let checkpoint = Checkpoint::new(&model, &reg, g);
    Ok(TrainOutcome {
        report: TrainReport {
            encoder: cfg.encoder,
            seed: cfg.seed,
            history,
            best_epoch,
            val,
            test,
        },
        model,
        params: reg,
        checkpoint,
    })
}

/// Probabilities for `nodes` from a checkpoint.
pub fn predict(g: &BipartiteGraph, checkpoint: &Checkpoint, nodes: &[u32]) -> Result<Vec<f64>> {
    let (model, reg) = checkpoint.model(g)?;
    model.predict(&reg, g, nodes)
}
