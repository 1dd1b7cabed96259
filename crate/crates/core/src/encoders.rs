//! Type-specific projections and per-channel encoders.
//!
//! Every forward pass runs over a [`Frame`]: the target rows plus, for a depth
//! `L` graph encoder, the nested neighbourhood sets
//! `S_L = targets`, `S_{l-1} = S_l ∪ N(S_l)`. Each set starts with the set
//! above it, so a node's own row in layer `l-1` is its row index in layer `l`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diff::{linear, AggPlan, LinInput, Matrix, ParamId, ParamRegistry, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{BipartiteGraph, ChannelKind, Side};
use crate::restore::{embedding_param_name, restoration_plan};
use crate::seed;

pub const GAT_HEADS: usize = 2;
pub const GAT_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Mlp,
    Gcn,
    Sage,
    Gat,
}

impl EncoderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EncoderKind::Mlp => "mlp",
            EncoderKind::Gcn => "gcn",
            EncoderKind::Sage => "sage",
            EncoderKind::Gat => "gat",
        }
    }

    /// Number of graph layers a frame needs for this encoder at `depth`.
    pub fn graph_layers(self, depth: usize) -> usize {
        match self {
            EncoderKind::Mlp => 0,
            _ => depth,
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EncoderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(EncoderKind::Mlp),
            "gcn" => Ok(EncoderKind::Gcn),
            "sage" => Ok(EncoderKind::Sage),
            "gat" => Ok(EncoderKind::Gat),
            other => Err(Error::Config(format!("unknown encoder kind {other:?}"))),
        }
    }
}

/// Aggregation structure between two consecutive frame layers.
#[derive(Clone, Debug)]
pub struct LayerPlan {
    /// Row of each upper-layer node in the lower layer.
    pub self_rows: Arc<Vec<u32>>,
    /// Neighbours only, with mean coefficients `1/|N(i)|`.
    pub neigh: Arc<AggPlan>,
    pub neigh_mean: Arc<Matrix>,
    /// Self first, then neighbours, with symmetric GCN coefficients.
    pub with_self: Arc<AggPlan>,
    pub gcn_coef: Arc<Matrix>,
}

#[derive(Clone, Debug)]
pub struct Frame {
    /// `layers[0]` is the input set, `layers[L]` the targets.
    pub layers: Vec<Arc<Vec<u32>>>,
    pub plans: Vec<LayerPlan>,
    /// Neighbours of the input set, in ascending order.
    pub sources: Arc<Vec<u32>>,
    /// Restoration plan over the input set reading rows of `sources`.
    pub restore: Arc<AggPlan>,
}

impl Frame {
    /// Builds a frame for `targets` (distinct flat ids, kept in order).
    pub fn build(g: &BipartiteGraph, targets: &[u32], graph_layers: usize) -> Result<Frame> {
        let n = g.n_nodes();
        let mut seen = vec![false; n];
        for &t in targets {
            if t as usize >= n || std::mem::replace(&mut seen[t as usize], true) {
                return Err(Error::InvalidNode(format!("target {t} out of range or repeated")));
            }
        }
        let mut layers = vec![Arc::new(targets.to_vec())];
        for _ in 0..graph_layers {
            let upper = layers.last().unwrap();
            let mut lower: Vec<u32> = upper.to_vec();
            let mut extra = Vec::new();
            for &u in upper.iter() {
                for &v in g.neighbors_flat(u as usize) {
                    if !seen[v as usize] {
                        seen[v as usize] = true;
                        extra.push(v);
                    }
                }
            }
            extra.sort_unstable();
            lower.extend(extra);
            layers.push(Arc::new(lower));
        }
        layers.reverse();

        let mut pos = vec![u32::MAX; n];
        let mut plans = Vec::with_capacity(graph_layers);
        for l in 1..=graph_layers {
            for (k, &v) in layers[l - 1].iter().enumerate() {
                pos[v as usize] = k as u32;
            }
            let upper = &layers[l];
            let mut neigh = AggPlan::new();
            let mut with_self = AggPlan::new();
            let mut mean = Vec::new();
            let mut gcn = Vec::new();
            for &u in upper.iter() {
                let u = u as usize;
                let du = g.degree(u) as f64;
                with_self.push(pos[u], with_self.entries() as u32);
                gcn.push(1.0 / (du + 1.0));
                for &v in g.neighbors_flat(u) {
                    let dv = g.degree(v as usize) as f64;
                    neigh.push(pos[v as usize], neigh.entries() as u32);
                    mean.push(1.0 / du);
                    with_self.push(pos[v as usize], with_self.entries() as u32);
                    gcn.push(1.0 / ((du + 1.0) * (dv + 1.0)).sqrt());
                }
                neigh.finish_row();
                with_self.finish_row();
            }
            let self_rows = (0..upper.len() as u32).collect();
            plans.push(LayerPlan {
                self_rows: Arc::new(self_rows),
                neigh_mean: Arc::new(Matrix::from_vec(mean.len(), 1, mean)?),
                neigh: Arc::new(neigh),
                gcn_coef: Arc::new(Matrix::from_vec(gcn.len(), 1, gcn)?),
                with_self: Arc::new(with_self),
            });
        }

        let input = &layers[0];
        let mut mark = vec![false; n];
        let mut sources = Vec::new();
        for &u in input.iter() {
            for &v in g.neighbors_flat(u as usize) {
                if !std::mem::replace(&mut mark[v as usize], true) {
                    sources.push(v);
                }
            }
        }
        sources.sort_unstable();
        for (k, &v) in sources.iter().enumerate() {
            pos[v as usize] = k as u32;
        }
        let restore = restoration_plan(g, input, |v| pos[v]);
        Ok(Frame {
            layers,
            plans,
            sources: Arc::new(sources),
            restore: Arc::new(restore),
        })
    }

    /// Frame whose targets are all nodes.
    pub fn full(g: &BipartiteGraph, graph_layers: usize) -> Result<Frame> {
        let all: Vec<u32> = (0..g.n_nodes() as u32).collect();
        Frame::build(g, &all, graph_layers)
    }

    pub fn input(&self) -> &Arc<Vec<u32>> {
        &self.layers[0]
    }

    pub fn targets(&self) -> &Arc<Vec<u32>> {
        self.layers.last().unwrap()
    }
}

/// Inverted dropout on hidden activations; a no-op in evaluation mode.
pub struct Dropout {
    rate: f64,
    rng: Option<seed::Rng>,
}

impl Dropout {
    pub fn off() -> Self {
        Dropout { rate: 0.0, rng: None }
    }

    pub fn train(rate: f64, rng: seed::Rng) -> Self {
        Dropout { rate, rng: Some(rng) }
    }

    pub fn apply(&mut self, tape: &mut Tape, v: Var) -> Result<Var> {
        match &mut self.rng {
            Some(rng) => tape.dropout(v, self.rate, rng),
            None => Ok(v),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderDims {
    /// Projection width `N_out`.
    pub proj_dim: usize,
    /// Per-channel embedding width `d_c`.
    pub out_dim: usize,
    /// Graph layers `L`.
    pub depth: usize,
}

impl Default for EncoderDims {
    fn default() -> Self {
        EncoderDims {
            proj_dim: 64,
            out_dim: 32,
            depth: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GatHead {
    pub w: ParamId,
    pub a_dst: ParamId,
    pub a_src: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerParams {
    Mlp { w1: ParamId, b1: ParamId, w2: ParamId, b2: ParamId },
    Gcn { w: ParamId, b: ParamId },
    Sage { w: ParamId, b: ParamId },
    Gat { heads: Vec<GatHead> },
}

/// Parameters of one channel's projection and encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelEncoderParams {
    pub channel: String,
    pub kind: EncoderKind,
    /// Projection input width (`2w` with restoration, `w` without).
    pub input_width: usize,
    /// `[member, job]` projections.
    pub proj_w: [ParamId; 2],
    pub proj_b: [ParamId; 2],
    pub layers: Vec<LayerParams>,
    pub out_dim: usize,
}

impl ChannelEncoderParams {
    pub fn register(
        reg: &mut ParamRegistry,
        channel: &str,
        kind: EncoderKind,
        input_width: usize,
        dims: &EncoderDims,
        rng: &mut seed::Rng,
    ) -> Result<Self> {
        if dims.proj_dim == 0 || dims.out_dim == 0 {
            return Err(Error::Config("encoder dims must be positive".into()));
        }
        if kind != EncoderKind::Mlp && dims.depth == 0 {
            return Err(Error::Config("graph encoders need depth >= 1".into()));
        }
        if kind == EncoderKind::Gat && dims.out_dim % GAT_HEADS != 0 {
            return Err(Error::Config(format!("GAT output dim must be divisible by {GAT_HEADS}")));
        }
        let p = format!("enc/{channel}");
        let mut proj_w = [ParamId(0); 2];
        let mut proj_b = [ParamId(0); 2];
        for (k, side) in [Side::Member, Side::Job].into_iter().enumerate() {
            proj_w[k] = reg.glorot(&format!("{p}/proj/{side}/w"), dims.proj_dim, input_width, rng)?;
            proj_b[k] = reg.zeros(&format!("{p}/proj/{side}/b"), &[dims.proj_dim])?;
        }
        let d = dims.out_dim;
        let mut layers = Vec::new();
        match kind {
            EncoderKind::Mlp => layers.push(LayerParams::Mlp {
                w1: reg.glorot(&format!("{p}/mlp/fc1/w"), d, dims.proj_dim, rng)?,
                b1: reg.zeros(&format!("{p}/mlp/fc1/b"), &[d])?,
                w2: reg.glorot(&format!("{p}/mlp/fc2/w"), d, d, rng)?,
                b2: reg.zeros(&format!("{p}/mlp/fc2/b"), &[d])?,
            }),
            _ => {
                for l in 0..dims.depth {
                    let d_in = if l == 0 { dims.proj_dim } else { d };
                    let q = format!("{p}/{kind}{}", l + 1);
                    layers.push(match kind {
                        EncoderKind::Gcn => LayerParams::Gcn {
                            w: reg.glorot(&format!("{q}/w"), d, d_in, rng)?,
                            b: reg.zeros(&format!("{q}/b"), &[d])?,
                        },
                        EncoderKind::Sage => LayerParams::Sage {
                            w: reg.glorot(&format!("{q}/w"), d, 2 * d_in, rng)?,
                            b: reg.zeros(&format!("{q}/b"), &[d])?,
                        },
                        _ => {
                            let hd = d / GAT_HEADS;
                            let mut heads = Vec::new();
                            for h in 0..GAT_HEADS {
                                heads.push(GatHead {
                                    w: reg.glorot(&format!("{q}/h{h}/w"), hd, d_in, rng)?,
                                    a_dst: reg.glorot(&format!("{q}/h{h}/a_dst"), 1, hd, rng)?,
                                    a_src: reg.glorot(&format!("{q}/h{h}/a_src"), 1, hd, rng)?,
                                });
                            }
                            LayerParams::Gat { heads }
                        }
                    });
                }
            }
        }
        Ok(ChannelEncoderParams {
            channel: channel.to_string(),
            kind,
            input_width,
            proj_w,
            proj_b,
            layers,
            out_dim: d,
        })
    }
}

/// Single-vector projection with the side's own matrix.
pub fn project(reg: &ParamRegistry, p: &ChannelEncoderParams, side: Side, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != p.input_width {
        return Err(Error::Shape(format!(
            "projection of {:?} expects width {}, got {}",
            p.channel,
            p.input_width,
            x.len()
        )));
    }
    let k = (side == Side::Job) as usize;
    linear(x, reg.get(p.proj_w[k]), reg.get(p.proj_b[k]))
}

fn side_flags(g: &BipartiteGraph, nodes: &[u32], side: Side) -> Arc<Vec<bool>> {
    Arc::new(nodes.iter().map(|&f| g.side(f as usize) == side).collect())
}

fn channel_input(tape: &mut Tape, reg: &ParamRegistry, g: &BipartiteGraph, channel: &str, nodes: &Arc<Vec<u32>>) -> Result<LinInput> {
    let ch = g.channel(channel)?;
    Ok(match ch.spec.kind {
        ChannelKind::MultiHot => LinInput::Sparse {
            rows: ch.sparse().expect("multi-hot").clone(),
            select: nodes.clone(),
        },
        ChannelKind::EmbeddingLookup => {
            let name = embedding_param_name(channel);
            let id = reg
                .id(&name)
                .ok_or_else(|| Error::Incompatible(format!("no tensor {name:?}")))?;
            let table = tape.param(reg, id);
            let ids = nodes.iter().map(|&f| ch.lookup_id(f as usize)).collect();
            LinInput::Dense(tape.lookup(table, Arc::new(ids))?)
        }
    })
}

/// Projects the frame's input rows of one channel. With `restore_weights`
/// the input is `[x ∥ x̄]`; the restored half is computed as
/// `Σ_v w_{v→i} · W_side(i)[:, w..2w] x_v`, which equals projecting the
/// restored vector.
pub fn project_channel(
    tape: &mut Tape,
    reg: &ParamRegistry,
    g: &BipartiteGraph,
    frame: &Frame,
    p: &ChannelEncoderParams,
    restore_weights: Option<Var>,
) -> Result<Var> {
    let w = g.channel(&p.channel)?.dense_width();
    let expected = if restore_weights.is_some() { 2 * w } else { w };
    if p.input_width != expected {
        return Err(Error::Shape(format!(
            "channel {:?}: projection width {} but input width {expected}",
            p.channel, p.input_width
        )));
    }
    let pw = [tape.param(reg, p.proj_w[0]), tape.param(reg, p.proj_w[1])];
    let pb = [Some(tape.param(reg, p.proj_b[0])), Some(tape.param(reg, p.proj_b[1]))];
    let input = frame.input();
    let x = channel_input(tape, reg, g, &p.channel, input)?;
    let own = tape.side_linear(x, pw, pb, side_flags(g, input, Side::Job), 0)?;
    let Some(weights) = restore_weights else {
        return Ok(own);
    };
    // sources feed receivers on the opposite side
    let xs = channel_input(tape, reg, g, &p.channel, &frame.sources)?;
    let q = tape.side_linear(xs, pw, [None, None], side_flags(g, &frame.sources, Side::Member), w)?;
    let restored = tape.edge_agg(q, weights, frame.restore.clone())?;
    tape.add(own, restored)
}

/// Runs the channel encoder over projected input rows; returns target rows.
pub fn encode(
    tape: &mut Tape,
    reg: &ParamRegistry,
    frame: &Frame,
    p: &ChannelEncoderParams,
    input: Var,
    drop: &mut Dropout,
) -> Result<Var> {
    encode_traced(tape, reg, frame, p, input, drop).map(|(z, _)| z)
}

/// As [`encode`], also returning the attention coefficients of every GAT
/// layer and head (entries ordered as in [`LayerPlan::with_self`]).
pub fn encode_traced(
    tape: &mut Tape,
    reg: &ParamRegistry,
    frame: &Frame,
    p: &ChannelEncoderParams,
    input: Var,
    drop: &mut Dropout,
) -> Result<(Var, Vec<Var>)> {
    let mut attention = Vec::new();
    let mut z = input;
    if p.kind == EncoderKind::Mlp {
        let LayerParams::Mlp { w1, b1, w2, b2 } = &p.layers[0] else {
            unreachable!("mlp params");
        };
        let (w1, b1, w2, b2) = (tape.param(reg, *w1), tape.param(reg, *b1), tape.param(reg, *w2), tape.param(reg, *b2));
        let h = tape.linear(z, w1, Some(b1))?;
        let h = tape.relu(h);
        let h = drop.apply(tape, h)?;
        return Ok((tape.linear(h, w2, Some(b2))?, attention));
    }
    if frame.plans.len() != p.layers.len() {
        return Err(Error::Shape(format!(
            "frame has {} graph layers, encoder has {}",
            frame.plans.len(),
            p.layers.len()
        )));
    }
    for (plan, layer) in frame.plans.iter().zip(&p.layers) {
        let pre = match layer {
            LayerParams::Gcn { w, b } => {
                let coef = tape.constant((*plan.gcn_coef).clone());
                let agg = tape.edge_agg(z, coef, plan.with_self.clone())?;
                let (w, b) = (tape.param(reg, *w), tape.param(reg, *b));
                tape.linear(agg, w, Some(b))?
            }
            LayerParams::Sage { w, b } => {
                let own = tape.gather_rows(z, plan.self_rows.clone())?;
                let coef = tape.constant((*plan.neigh_mean).clone());
                let mean = tape.edge_agg(z, coef, plan.neigh.clone())?;
                let cat = tape.col_concat(&[own, mean])?;
                let (w, b) = (tape.param(reg, *w), tape.param(reg, *b));
                tape.linear(cat, w, Some(b))?
            }
            LayerParams::Gat { heads } => {
                let mut outs = Vec::with_capacity(heads.len());
                for h in heads {
                    let w = tape.param(reg, h.w);
                    let hz = tape.linear(z, w, None)?;
                    let own = tape.gather_rows(hz, plan.self_rows.clone())?;
                    let a_dst = tape.param(reg, h.a_dst);
                    let a_src = tape.param(reg, h.a_src);
                    let s_dst = tape.row_dot(own, a_dst)?;
                    let s_src = tape.row_dot(hz, a_src)?;
                    let e = tape.edge_logits(s_dst, s_src, plan.with_self.clone())?;
                    let e = tape.leaky_relu(e, GAT_SLOPE);
                    let alpha = tape.segment_softmax(e, plan.with_self.clone())?;
                    attention.push(alpha);
                    outs.push(tape.edge_agg(hz, alpha, plan.with_self.clone())?);
                }
                tape.col_concat(&outs)?
            }
            LayerParams::Mlp { .. } => unreachable!("mlp layer in graph encoder"),
        };
        let act = tape.relu(pre);
        z = drop.apply(tape, act)?;
    }
    Ok((z, attention))
}

/// Projects and encodes every channel independently and concatenates the
/// per-channel embeddings in registration order. `restore_weights[c]` is the
/// restoration weight tensor of channel `c`, if restoration is on.
pub fn multi_channel_encode(
    tape: &mut Tape,
    reg: &ParamRegistry,
    g: &BipartiteGraph,
    frame: &Frame,
    params: &[ChannelEncoderParams],
    restore_weights: &[Option<Var>],
    drop: &mut Dropout,
) -> Result<Var> {
    if params.len() != restore_weights.len() {
        return Err(Error::Shape("one restoration slot per channel expected".into()));
    }
    let mut blocks = Vec::with_capacity(params.len());
    for (p, &w) in params.iter().zip(restore_weights) {
        let x = project_channel(tape, reg, g, frame, p, w)?;
        blocks.push(encode(tape, reg, frame, p, x, drop)?);
    }
    tape.col_concat(&blocks)
}
