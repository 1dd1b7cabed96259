//! Feature restoration: a node's channel features are estimated as a weighted
//! sum of its first-hop neighbours' features, with one learnable scalar per
//! edge, channel and direction.
//!
//! Weights of channel `c` live in the tensor `restore/{c}/weights` of shape
//! `2 x |E|`: row 0 holds `w_{job→member}`, row 1 `w_{member→job}`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use crate::diff::{sigmoid_scalar, softplus, AggPlan, Matrix, ParamId, ParamRegistry, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{BipartiteGraph, ChannelKind, Side};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    JobToMember = 0,
    MemberToJob = 1,
}

impl Direction {
    /// Direction of messages arriving at a node of `side`.
    pub fn into_side(side: Side) -> Direction {
        match side {
            Side::Member => Direction::JobToMember,
            Side::Job => Direction::MemberToJob,
        }
    }
}

pub fn weight_param_name(channel: &str) -> String {
    format!("restore/{channel}/weights")
}

/// Name of the embedding table of a lookup channel.
pub fn embedding_param_name(channel: &str) -> String {
    format!("embed/{channel}")
}

/// Handles to the restoration weights of every restored channel.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeWeightStore {
    channels: Vec<String>,
    ids: Vec<ParamId>,
    n_edges: usize,
}

impl EdgeWeightStore {
    /// Registers weights for `channels`, initialised to `1/|N(receiver)|`.
    pub fn register(reg: &mut ParamRegistry, g: &BipartiteGraph, channels: &[String]) -> Result<Self> {
        let ne = g.n_edges();
        let mut init = vec![0.0; 2 * ne];
        for (e, &(m, j)) in g.edges().iter().enumerate() {
            init[e] = 1.0 / g.degree(m as usize) as f64;
            init[ne + e] = 1.0 / g.degree(g.n_members() + j as usize) as f64;
        }
        let mut ids = Vec::with_capacity(channels.len());
        for c in channels {
            g.channel(c)?;
            ids.push(reg.register(&weight_param_name(c), &[2, ne], init.clone())?);
        }
        Ok(EdgeWeightStore {
            channels: channels.to_vec(),
            ids,
            n_edges: ne,
        })
    }

    /// Re-attaches to weights already present in `reg`.
    pub fn attach(reg: &ParamRegistry, g: &BipartiteGraph, channels: &[String]) -> Result<Self> {
        let ne = g.n_edges();
        let mut ids = Vec::with_capacity(channels.len());
        for c in channels {
            let name = weight_param_name(c);
            let id = reg
                .id(&name)
                .ok_or_else(|| Error::Incompatible(format!("no tensor {name:?}")))?;
            if reg.get(id).shape != [2, ne] {
                return Err(Error::Incompatible(format!(
                    "{name:?} has shape {:?}, graph has {ne} edges",
                    reg.get(id).shape
                )));
            }
            ids.push(id);
        }
        Ok(EdgeWeightStore {
            channels: channels.to_vec(),
            ids,
            n_edges: ne,
        })
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    /// Total scalar count, `2 · N_c · |E|`.
    pub fn num_scalars(&self) -> usize {
        2 * self.channels.len() * self.n_edges
    }

    pub fn param(&self, channel: &str) -> Result<ParamId> {
        self.channels
            .iter()
            .position(|c| c == channel)
            .map(|i| self.ids[i])
            .ok_or_else(|| Error::UnknownChannel(channel.to_string()))
    }

    /// Flat offset of `(edge, dir)` inside a channel's tensor.
    pub fn offset(&self, edge: usize, dir: Direction) -> usize {
        dir as usize * self.n_edges + edge
    }

    pub fn get(&self, reg: &ParamRegistry, edge: usize, channel: &str, dir: Direction) -> Result<f64> {
        Ok(reg.get(self.param(channel)?).values[self.offset(edge, dir)])
    }

    pub fn set(&self, reg: &mut ParamRegistry, edge: usize, channel: &str, dir: Direction, w: f64) -> Result<()> {
        let off = self.offset(edge, dir);
        reg.get_mut(self.param(channel)?).values[off] = w;
        Ok(())
    }
}

/// Restored raw scores of one channel for every node (flat order).
#[derive(Clone, Debug, PartialEq)]
pub struct RestoredChannel {
    pub channel: String,
    pub scores: Matrix,
}

/// Dense per-node view of a channel: indicator rows for multi-hot channels,
/// embedding rows for lookup channels (read from `embed/{c}` in `reg`).
/// Unobserved nodes get zero rows.
pub fn dense_features(g: &BipartiteGraph, channel: &str, reg: &ParamRegistry) -> Result<Matrix> {
    let ch = g.channel(channel)?;
    let w = ch.dense_width();
    let mut out = Matrix::zeros(g.n_nodes(), w);
    match ch.spec.kind {
        ChannelKind::MultiHot => {
            let rows = ch.sparse().expect("multi-hot channel");
            for f in 0..g.n_nodes() {
                rows.scatter_row(f, out.row_mut(f));
            }
        }
        ChannelKind::EmbeddingLookup => {
            let name = embedding_param_name(channel);
            let table = reg
                .by_name(&name)
                .ok_or_else(|| Error::Incompatible(format!("no tensor {name:?}")))?;
            if table.shape != [ch.spec.vocab, w] {
                return Err(Error::Incompatible(format!("{name:?} has shape {:?}", table.shape)));
            }
            for f in 0..g.n_nodes() {
                if let Some(t) = ch.lookup_id(f) {
                    let t = t as usize;
                    out.row_mut(f).copy_from_slice(&table.values[t * w..(t + 1) * w]);
                }
            }
        }
    }
    Ok(out)
}

/// Aggregation plan over the first-hop neighbourhoods of `receivers`; entry
/// sources are `source_row(neighbour_flat)` and weight offsets follow
/// [`EdgeWeightStore::offset`].
pub fn restoration_plan(g: &BipartiteGraph, receivers: &[u32], mut source_row: impl FnMut(usize) -> u32) -> AggPlan {
    let ne = g.n_edges() as u32;
    let mut plan = AggPlan::new();
    for &r in receivers {
        let r = r as usize;
        let dir = Direction::into_side(g.side(r)) as u32;
        for (&v, &e) in g.neighbors_flat(r).iter().zip(g.incident_edges(r)) {
            plan.push(source_row(v as usize), dir * ne + e);
        }
        plan.finish_row();
    }
    plan
}

/// `x̄_u = Σ_{v ∈ N(u)} w_{v→u} · dense(x_v)` for every node.
pub fn restore_channel(
    g: &BipartiteGraph,
    channel: &str,
    store: &EdgeWeightStore,
    reg: &ParamRegistry,
) -> Result<RestoredChannel> {
    let w = &reg.get(store.param(channel)?).values;
    let x = dense_features(g, channel, reg)?;
    let all: Vec<u32> = (0..g.n_nodes() as u32).collect();
    let plan = restoration_plan(g, &all, |v| v as u32);
    let mut scores = Matrix::zeros(g.n_nodes(), x.cols);
    crate::par::for_each_row(&mut scores.data, x.cols, |r, out| {
        for k in plan.segment(r) {
            crate::diff::axpy(out, w[plan.widx[k] as usize], x.row(plan.src[k] as usize));
        }
    });
    Ok(RestoredChannel {
        channel: channel.to_string(),
        scores,
    })
}

/// Mean over eligible channels of the logistic cross-entropy between restored
/// scores and true indicators, each averaged over observed nodes and entries.
pub fn restoration_loss(restored: &[RestoredChannel], g: &BipartiteGraph) -> Result<f64> {
    let mut per_channel = Vec::new();
    for r in restored {
        let ch = g.channel(&r.channel)?;
        if !ch.spec.in_restoration_loss {
            continue;
        }
        let rows = ch.sparse().expect("eligible channels are multi-hot");
        let mut sum = 0.0;
        let mut nodes = 0usize;
        for f in (0..g.n_nodes()).filter(|&f| ch.is_observed(f)) {
            let z = r.scores.row(f);
            sum += z.iter().map(|&v| softplus(v)).sum::<f64>();
            for (c, y) in rows.row(f) {
                sum -= y * z[c];
            }
            nodes += 1;
        }
        if nodes > 0 {
            per_channel.push(sum / (nodes * r.scores.cols) as f64);
        }
    }
    if per_channel.is_empty() {
        return Err(Error::Empty("no observed node on any restoration-loss channel".into()));
    }
    Ok(per_channel.iter().sum::<f64>() / per_channel.len() as f64)
}

/// Per node: `[original (zeros if unobserved) ∥ restored]`.
pub fn concat_restored(
    g: &BipartiteGraph,
    restored: &RestoredChannel,
    reg: &ParamRegistry,
) -> Result<Matrix> {
    let x = dense_features(g, &restored.channel, reg)?;
    let w = x.cols;
    if restored.scores.rows != x.rows || restored.scores.cols != w {
        return Err(Error::Shape("restored scores do not match the channel".into()));
    }
    let mut out = Matrix::zeros(x.rows, 2 * w);
    for f in 0..x.rows {
        let row = out.row_mut(f);
        row[..w].copy_from_slice(x.row(f));
        row[w..].copy_from_slice(restored.scores.row(f));
    }
    Ok(out)
}

#[derive(Serialize)]
struct RestoredRecord<'a> {
    id: &'a str,
    channel: &'a str,
    scores: Vec<f64>,
}

/// Writes one JSONL line per node and channel. Multi-hot scores are written
/// as probabilities, lookup-channel scores as raw embedding-space values.
pub fn export_restored(g: &BipartiteGraph, restored: &[RestoredChannel], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for f in 0..g.n_nodes() {
        for r in restored {
            let probs = g.channel(&r.channel)?.spec.kind == ChannelKind::MultiHot;
            let row = r.scores.row(f);
            let rec = RestoredRecord {
                id: g.id(f),
                channel: &r.channel,
                scores: if probs {
                    row.iter().map(|&v| sigmoid_scalar(v)).collect()
                } else {
                    row.to_vec()
                },
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Tape version of an eligible channel's loss term over `receivers` (flat ids,
/// all observed on the channel). Returns `None` when `receivers` is empty.
pub fn tape_channel_loss(
    tape: &mut Tape,
    g: &BipartiteGraph,
    channel: &str,
    weights: Var,
    receivers: &[u32],
) -> Result<Option<Var>> {
    if receivers.is_empty() {
        return Ok(None);
    }
    let ch = g.channel(channel)?;
    let rows = ch
        .sparse()
        .ok_or_else(|| Error::Config(format!("channel {channel:?} is not multi-hot")))?
        .clone();
    let plan = Arc::new(restoration_plan(g, receivers, |v| v as u32));
    let logits = tape.sparse_edge_agg(rows.clone(), weights, plan)?;
    tape.bce_logits_sparse(logits, rows, Arc::new(receivers.to_vec()))
        .map(Some)
}
