//! Bipartite member-job graph with multi-channel node features.
//!
//! Nodes are addressed externally by [`NodeId`] and internally by a flat index:
//! members occupy `0..n_members`, jobs `n_members..n_members + n_jobs`.
//! Adjacency is kept as per-node sorted neighbor lists; no adjacency matrix is
//! ever built.

mod io;
mod split;

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::diff::SparseRows;
use crate::error::{Error, Result};
use crate::seed;

pub use io::{load_graph, save_graph, EdgeRecord, NodeRecord};
pub use split::{Split, SplitAssignment, SplitFractions};

/// Default multi-hot widths of the member-job schema.
pub const DEFAULT_SKILL_DIM: usize = 3826;
pub const DEFAULT_INDUSTRY_DIM: usize = 151;
pub const DEFAULT_TITLE_EMBED_DIM: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Member,
    Job,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Member => Side::Job,
            Side::Job => Side::Member,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Member => "member",
            Side::Job => "job",
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId {
    pub side: Side,
    pub index: usize,
}

impl NodeId {
    pub fn member(index: usize) -> Self {
        NodeId {
            side: Side::Member,
            index,
        }
    }

    pub fn job(index: usize) -> Self {
        NodeId {
            side: Side::Job,
            index,
        }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.side, self.index)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelKind {
    EmbeddingLookup,
    MultiHot,
}

/// One feature channel. For lookup channels `dim` is the embedding width and
/// `vocab` the number of distinct ids; for multi-hot channels `dim` is the
/// indicator width and `vocab` is unused (0).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub name: String,
    pub kind: ChannelKind,
    pub dim: usize,
    #[serde(default)]
    pub vocab: usize,
    pub in_restoration_loss: bool,
}

impl ChannelSpec {
    pub fn lookup(name: &str, dim: usize, vocab: usize) -> Self {
        ChannelSpec {
            name: name.to_string(),
            kind: ChannelKind::EmbeddingLookup,
            dim,
            vocab,
            in_restoration_loss: false,
        }
    }

    pub fn multi_hot(name: &str, dim: usize) -> Self {
        ChannelSpec {
            name: name.to_string(),
            kind: ChannelKind::MultiHot,
            dim,
            vocab: 0,
            in_restoration_loss: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config(format!("channel {:?} has zero dim", self.name)));
        }
        if self.in_restoration_loss && self.kind != ChannelKind::MultiHot {
            return Err(Error::Config(format!(
                "channel {:?}: only multi-hot channels can enter the restoration loss",
                self.name
            )));
        }
        if self.kind == ChannelKind::EmbeddingLookup && self.vocab == 0 {
            return Err(Error::Config(format!("lookup channel {:?} has empty vocabulary", self.name)));
        }
        Ok(())
    }
}

/// The title/skills/industries schema. A `title_vocab` of 0 asks the loader to
/// infer the vocabulary from the largest id seen.
pub fn default_channels(title_vocab: usize) -> Vec<ChannelSpec> {
    vec![
        ChannelSpec::lookup("title", DEFAULT_TITLE_EMBED_DIM, title_vocab),
        ChannelSpec::multi_hot("skills", DEFAULT_SKILL_DIM),
        ChannelSpec::multi_hot("industries", DEFAULT_INDUSTRY_DIM),
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub enum ChannelValues {
    Lookup(Vec<Option<u32>>),
    MultiHot(Arc<SparseRows>),
}

/// Raw channel values for every node (flat order) plus the observed flags.
/// Unobserved nodes always hold empty values.
#[derive(Clone, Debug, PartialEq)]
pub struct Channel {
    pub spec: ChannelSpec,
    values: ChannelValues,
    observed: Vec<bool>,
}

impl Channel {
    pub fn lookup(spec: ChannelSpec, ids: Vec<Option<u32>>) -> Result<Self> {
        if spec.kind != ChannelKind::EmbeddingLookup {
            return Err(Error::Config(format!("channel {:?} is not a lookup channel", spec.name)));
        }
        let observed = ids.iter().map(Option::is_some).collect();
        Ok(Channel {
            spec,
            values: ChannelValues::Lookup(ids),
            observed,
        })
    }

    /// `sets[i]` is `None` for an unobserved node, otherwise its index set
    /// (sorted and de-duplicated here).
    pub fn multi_hot(spec: ChannelSpec, sets: Vec<Option<Vec<u32>>>) -> Result<Self> {
        if spec.kind != ChannelKind::MultiHot {
            return Err(Error::Config(format!("channel {:?} is not multi-hot", spec.name)));
        }
        let mut rows = SparseRows::new(spec.dim);
        let mut observed = Vec::with_capacity(sets.len());
        for (node, set) in sets.into_iter().enumerate() {
            match set {
                Some(mut s) => {
                    s.sort_unstable();
                    s.dedup();
                    if let Some(&bad) = s.iter().find(|&&c| c as usize >= spec.dim) {
                        return Err(Error::IndexOutOfRange {
                            node: format!("flat#{node}"),
                            channel: spec.name.clone(),
                            index: bad as usize,
                            dim: spec.dim,
                        });
                    }
                    rows.push_row(s.iter().map(|&c| (c, 1.0)));
                    observed.push(true);
                }
                None => {
                    rows.push_row(std::iter::empty());
                    observed.push(false);
                }
            }
        }
        Ok(Channel {
            spec,
            values: ChannelValues::MultiHot(Arc::new(rows)),
            observed,
        })
    }

    pub fn values(&self) -> &ChannelValues {
        &self.values
    }

    pub fn is_observed(&self, flat: usize) -> bool {
        self.observed[flat]
    }

    pub fn observed_flags(&self) -> &[bool] {
        &self.observed
    }

    pub fn len(&self) -> usize {
        self.observed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }

    /// Width of the dense per-node view (indicator width or embedding width).
    pub fn dense_width(&self) -> usize {
        self.spec.dim
    }

    /// Multi-hot rows in flat order; `None` for lookup channels.
    pub fn sparse(&self) -> Option<&Arc<SparseRows>> {
        match &self.values {
            ChannelValues::MultiHot(rows) => Some(rows),
            ChannelValues::Lookup(_) => None,
        }
    }

    pub fn lookup_ids(&self) -> Option<&[Option<u32>]> {
        match &self.values {
            ChannelValues::Lookup(ids) => Some(ids),
            ChannelValues::MultiHot(_) => None,
        }
    }

    /// Index set of a node on a multi-hot channel (empty when unobserved).
    pub fn indices(&self, flat: usize) -> &[u32] {
        match &self.values {
            ChannelValues::MultiHot(rows) => rows.row_indices(flat),
            ChannelValues::Lookup(_) => &[],
        }
    }

    pub fn lookup_id(&self, flat: usize) -> Option<u32> {
        match &self.values {
            ChannelValues::Lookup(ids) => ids[flat],
            ChannelValues::MultiHot(_) => None,
        }
    }

    /// Per-node value as an owned option (used for rebuilding channels).
    fn node_value(&self, flat: usize) -> NodeValue {
        if !self.observed[flat] {
            return NodeValue::Missing;
        }
        match &self.values {
            ChannelValues::Lookup(ids) => NodeValue::Id(ids[flat].expect("observed lookup has id")),
            ChannelValues::MultiHot(rows) => NodeValue::Set(rows.row_indices(flat).to_vec()),
        }
    }

    fn rebuild(spec: ChannelSpec, values: Vec<NodeValue>) -> Result<Self> {
        match spec.kind {
            ChannelKind::EmbeddingLookup => Channel::lookup(
                spec,
                values
                    .into_iter()
                    .map(|v| match v {
                        NodeValue::Id(id) => Some(id),
                        _ => None,
                    })
                    .collect(),
            ),
            ChannelKind::MultiHot => Channel::multi_hot(
                spec,
                values
                    .into_iter()
                    .map(|v| match v {
                        NodeValue::Set(s) => Some(s),
                        _ => None,
                    })
                    .collect(),
            ),
        }
    }
}

enum NodeValue {
    Missing,
    Id(u32),
    Set(Vec<u32>),
}

/// Which channels a missing-feature mask blanks.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum MaskScope {
    #[default]
    AllChannels,
    Channels(Vec<String>),
}

/// Everything needed to build a [`BipartiteGraph`].
#[derive(Clone, Debug, Default)]
pub struct GraphParts {
    pub n_members: usize,
    pub n_jobs: usize,
    /// (member index, job index) pairs.
    pub edges: Vec<(u32, u32)>,
    pub channels: Vec<Channel>,
    /// Flat-order labels (1 = remote, 0 = onsite).
    pub labels: Vec<Option<u8>>,
    /// Flat-order external ids; generated as `m{i}` / `j{i}` when empty.
    pub ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BipartiteGraph {
    n_members: usize,
    n_jobs: usize,
    ids: Vec<String>,
    edges: Vec<(u32, u32)>,
    adj_offsets: Vec<usize>,
    adj_nodes: Vec<u32>,
    adj_edges: Vec<u32>,
    channels: Vec<Channel>,
    labels: Vec<Option<u8>>,
}

impl BipartiteGraph {
    pub fn from_parts(parts: GraphParts) -> Result<Self> {
        let GraphParts {
            n_members,
            n_jobs,
            mut edges,
            channels,
            labels,
            ids,
        } = parts;
        let n = n_members + n_jobs;
        for &(m, j) in &edges {
            if m as usize >= n_members || j as usize >= n_jobs {
                return Err(Error::InvalidNode(format!("edge ({m}, {j}) outside node range")));
            }
        }
        edges.sort_unstable();
        if let Some(w) = edges.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::DuplicateEdge {
                member: format!("m{}", w[0].0),
                job: format!("j{}", w[0].1),
            });
        }
        let mut names = HashSet::new();
        for c in &channels {
            c.spec.validate()?;
            if c.len() != n {
                return Err(Error::Shape(format!(
                    "channel {:?} has {} nodes, graph has {n}",
                    c.spec.name,
                    c.len()
                )));
            }
            if !names.insert(c.spec.name.clone()) {
                return Err(Error::Config(format!("duplicate channel {:?}", c.spec.name)));
            }
            if let Some(ids) = c.lookup_ids() {
                if let Some(bad) = ids.iter().flatten().find(|&&id| id as usize >= c.spec.vocab) {
                    return Err(Error::IndexOutOfRange {
                        node: "?".into(),
                        channel: c.spec.name.clone(),
                        index: *bad as usize,
                        dim: c.spec.vocab,
                    });
                }
            }
        }
        let labels = if labels.is_empty() { vec![None; n] } else { labels };
        if labels.len() != n {
            return Err(Error::Shape(format!("{} labels for {n} nodes", labels.len())));
        }
        if labels.iter().flatten().any(|&l| l > 1) {
            return Err(Error::Config("labels must be 0 or 1".into()));
        }
        let ids = if ids.is_empty() {
            (0..n_members)
                .map(|i| format!("m{i}"))
                .chain((0..n_jobs).map(|j| format!("j{j}")))
                .collect()
        } else {
            ids
        };
        if ids.len() != n {
            return Err(Error::Shape(format!("{} ids for {n} nodes", ids.len())));
        }

        // CSR adjacency. Edges are sorted by (member, job), so member lists
        // come out sorted; job lists are filled in member order, also sorted.
        let mut degree = vec![0usize; n];
        for &(m, j) in &edges {
            degree[m as usize] += 1;
            degree[n_members + j as usize] += 1;
        }
        let mut adj_offsets = Vec::with_capacity(n + 1);
        adj_offsets.push(0);
        for d in &degree {
            adj_offsets.push(adj_offsets.last().unwrap() + d);
        }
        let mut fill = adj_offsets[..n].to_vec();
        let mut adj_nodes = vec![0u32; edges.len() * 2];
        let mut adj_edges = vec![0u32; edges.len() * 2];
        for (e, &(m, j)) in edges.iter().enumerate() {
            let (mf, jf) = (m as usize, n_members + j as usize);
            adj_nodes[fill[mf]] = jf as u32;
            adj_edges[fill[mf]] = e as u32;
            fill[mf] += 1;
            adj_nodes[fill[jf]] = mf as u32;
            adj_edges[fill[jf]] = e as u32;
            fill[jf] += 1;
        }
        Ok(BipartiteGraph {
            n_members,
            n_jobs,
            ids,
            edges,
            adj_offsets,
            adj_nodes,
            adj_edges,
            channels,
            labels,
        })
    }

    pub fn n_members(&self) -> usize {
        self.n_members
    }

    pub fn n_jobs(&self) -> usize {
        self.n_jobs
    }

    pub fn n_nodes(&self) -> usize {
        self.n_members + self.n_jobs
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Edges as (member index, job index), sorted; position is the edge id.
    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn channel(&self, name: &str) -> Result<&Channel> {
        self.channels
            .iter()
            .find(|c| c.spec.name == name)
            .ok_or_else(|| Error::UnknownChannel(name.to_string()))
    }

    pub fn channel_index(&self, name: &str) -> Result<usize> {
        self.channels
            .iter()
            .position(|c| c.spec.name == name)
            .ok_or_else(|| Error::UnknownChannel(name.to_string()))
    }

    pub fn channel_specs(&self) -> Vec<ChannelSpec> {
        self.channels.iter().map(|c| c.spec.clone()).collect()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, flat: usize) -> &str {
        &self.ids[flat]
    }

    pub fn flat(&self, n: NodeId) -> Result<usize> {
        match n.side {
            Side::Member if n.index < self.n_members => Ok(n.index),
            Side::Job if n.index < self.n_jobs => Ok(self.n_members + n.index),
            _ => Err(Error::InvalidNode(n.to_string())),
        }
    }

    pub fn node_id(&self, flat: usize) -> NodeId {
        if flat < self.n_members {
            NodeId::member(flat)
        } else {
            NodeId::job(flat - self.n_members)
        }
    }

    pub fn side(&self, flat: usize) -> Side {
        if flat < self.n_members {
            Side::Member
        } else {
            Side::Job
        }
    }

    pub fn side_range(&self, side: Side) -> std::ops::Range<usize> {
        match side {
            Side::Member => 0..self.n_members,
            Side::Job => self.n_members..self.n_nodes(),
        }
    }

    /// Sorted flat indices of the first-hop neighbors of `flat`.
    pub fn neighbors_flat(&self, flat: usize) -> &[u32] {
        &self.adj_nodes[self.adj_offsets[flat]..self.adj_offsets[flat + 1]]
    }

    /// Edge ids aligned with [`Self::neighbors_flat`].
    pub fn incident_edges(&self, flat: usize) -> &[u32] {
        &self.adj_edges[self.adj_offsets[flat]..self.adj_offsets[flat + 1]]
    }

    pub fn degree(&self, flat: usize) -> usize {
        self.adj_offsets[flat + 1] - self.adj_offsets[flat]
    }

    /// First-hop neighbors of `n`, sorted by index.
    pub fn neighbors(&self, n: NodeId) -> Result<Vec<NodeId>> {
        let flat = self.flat(n)?;
        Ok(self
            .neighbors_flat(flat)
            .iter()
            .map(|&f| self.node_id(f as usize))
            .collect())
    }

    pub fn labels(&self) -> &[Option<u8>] {
        &self.labels
    }

    pub fn label(&self, flat: usize) -> Option<u8> {
        self.labels[flat]
    }

    /// True when the node is unobserved on every channel.
    pub fn is_empty_node(&self, flat: usize) -> bool {
        self.channels.iter().all(|c| !c.is_observed(flat))
    }

    pub fn empty_nodes(&self) -> usize {
        (0..self.n_nodes()).filter(|&f| self.is_empty_node(f)).count()
    }

    /// Fraction of nodes unobserved on every channel.
    pub fn missing_ratio(&self) -> f64 {
        if self.n_nodes() == 0 {
            0.0
        } else {
            self.empty_nodes() as f64 / self.n_nodes() as f64
        }
    }

    pub(crate) fn with_channels(&self, channels: Vec<Channel>) -> Self {
        BipartiteGraph {
            channels,
            ..self.clone()
        }
    }

    /// Blanks whole nodes until `⌊ratio · n⌋` nodes are empty. Nodes already
    /// empty count toward the target; the extra nodes are drawn uniformly from
    /// the non-empty ones. Returns the new graph and the newly masked nodes.
    pub fn apply_missing_mask(&self, ratio: f64, seed: u64) -> Result<(BipartiteGraph, Vec<NodeId>)> {
        self.apply_missing_mask_scoped(ratio, seed, &MaskScope::AllChannels)
    }

    pub fn apply_missing_mask_scoped(
        &self,
        ratio: f64,
        seed: u64,
        scope: &MaskScope,
    ) -> Result<(BipartiteGraph, Vec<NodeId>)> {
        if !(0.0..=1.0).contains(&ratio) {
            return Err(Error::Config(format!("missing ratio {ratio} outside [0, 1]")));
        }
        let in_scope: Vec<bool> = self
            .channels
            .iter()
            .map(|c| match scope {
                MaskScope::AllChannels => true,
                MaskScope::Channels(names) => names.contains(&c.spec.name),
            })
            .collect();
        if let MaskScope::Channels(names) = scope {
            for name in names {
                self.channel(name)?;
            }
        }
        let n = self.n_nodes();
        let is_empty = |f: usize| {
            self.channels
                .iter()
                .zip(&in_scope)
                .filter(|(_, &s)| s)
                .all(|(c, _)| !c.is_observed(f))
        };
        let mut candidates: Vec<usize> = (0..n).filter(|&f| !is_empty(f)).collect();
        let already = n - candidates.len();
        let target = (ratio * n as f64 + 1e-9).floor() as usize;
        let needed = target.saturating_sub(already).min(candidates.len());
        if needed == 0 {
            return Ok((self.clone(), Vec::new()));
        }
        let mut rng = seed::rng(seed, "missing-mask");
        candidates.shuffle(&mut rng);
        let mut chosen: Vec<usize> = candidates[..needed].to_vec();
        chosen.sort_unstable();
        let mut masked = vec![false; n];
        for &f in &chosen {
            masked[f] = true;
        }
        let channels = self
            .channels
            .iter()
            .zip(&in_scope)
            .map(|(c, &s)| {
                if !s {
                    return Ok(c.clone());
                }
                let values = (0..n)
                    .map(|f| if masked[f] { NodeValue::Missing } else { c.node_value(f) })
                    .collect();
                Channel::rebuild(c.spec.clone(), values)
            })
            .collect::<Result<Vec<_>>>()?;
        let nodes = chosen.into_iter().map(|f| self.node_id(f)).collect();
        Ok((self.with_channels(channels), nodes))
    }

    /// Keeps only the `top_k` most frequently owned skills.
    pub fn restrict_skill_space(&self, top_k: usize) -> Result<BipartiteGraph> {
        self.restrict_channel("skills", top_k)
    }

    /// Keeps the `top_k` indices of a multi-hot channel ranked by the number of
    /// nodes owning them (ties to the lower index) and renumbers them by rank.
    pub fn restrict_channel(&self, name: &str, top_k: usize) -> Result<BipartiteGraph> {
        let ci = self.channel_index(name)?;
        let c = &self.channels[ci];
        if c.spec.kind != ChannelKind::MultiHot {
            return Err(Error::Config(format!("channel {name:?} is not multi-hot")));
        }
        let dim = c.spec.dim;
        if top_k == 0 || top_k > dim {
            return Err(Error::Config(format!("top_k {top_k} outside 1..={dim}")));
        }
        let mut counts = vec![0usize; dim];
        for f in 0..self.n_nodes() {
            for &s in c.indices(f) {
                counts[s as usize] += 1;
            }
        }
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
        let mut remap = vec![u32::MAX; dim];
        for (rank, &old) in order[..top_k].iter().enumerate() {
            remap[old] = rank as u32;
        }
        let mut spec = c.spec.clone();
        spec.dim = top_k;
        let values = (0..self.n_nodes())
            .map(|f| match c.node_value(f) {
                NodeValue::Set(s) => NodeValue::Set(
                    s.into_iter()
                        .map(|i| remap[i as usize])
                        .filter(|&i| i != u32::MAX)
                        .collect(),
                ),
                other => other,
            })
            .collect();
        let mut channels = self.channels.clone();
        channels[ci] = Channel::rebuild(spec, values)?;
        Ok(self.with_channels(channels))
    }

    /// Splits labeled nodes of each side independently.
    pub fn split_nodes(&self, fractions: SplitFractions, seed: u64) -> Result<SplitAssignment> {
        split::split(self, fractions, seed, false)
    }

    /// As [`Self::split_nodes`], additionally stratified by label within each side.
    pub fn split_nodes_stratified(&self, fractions: SplitFractions, seed: u64) -> Result<SplitAssignment> {
        split::split(self, fractions, seed, true)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::Rng;

    /// Small random graph with two multi-hot channels and a title channel.
    pub(crate) fn random_graph(n_members: usize, n_jobs: usize, p_edge: f64, seed: u64) -> BipartiteGraph {
        let mut rng = seed::rng(seed, "test-graph");
        let mut edges = Vec::new();
        for m in 0..n_members {
            for j in 0..n_jobs {
                if rng.gen_bool(p_edge) {
                    edges.push((m as u32, j as u32));
                }
            }
        }
        let n = n_members + n_jobs;
        let mut skills = Vec::new();
        let mut inds = Vec::new();
        let mut titles = Vec::new();
        for _ in 0..n {
            if rng.gen_bool(0.15) {
                skills.push(None);
                inds.push(None);
                titles.push(None);
                continue;
            }
            skills.push(Some((0..8u32).filter(|_| rng.gen_bool(0.3)).collect()));
            inds.push(Some((0..4u32).filter(|_| rng.gen_bool(0.4)).collect()));
            titles.push(Some(rng.gen_range(0..5u32)));
        }
        let labels = (0..n).map(|_| Some(rng.gen_range(0..2u8))).collect();
        BipartiteGraph::from_parts(GraphParts {
            n_members,
            n_jobs,
            edges,
            channels: vec![
                Channel::lookup(ChannelSpec::lookup("title", 3, 5), titles).unwrap(),
                Channel::multi_hot(ChannelSpec::multi_hot("skills", 8), skills).unwrap(),
                Channel::multi_hot(ChannelSpec::multi_hot("industries", 4), inds).unwrap(),
            ],
            labels,
            ids: Vec::new(),
        })
        .unwrap()
    }

    fn tiny(edges: Vec<(u32, u32)>, n_members: usize, n_jobs: usize) -> BipartiteGraph {
        let n = n_members + n_jobs;
        BipartiteGraph::from_parts(GraphParts {
            n_members,
            n_jobs,
            edges,
            channels: vec![Channel::multi_hot(
                ChannelSpec::multi_hot("skills", 3),
                vec![Some(vec![0]); n],
            )
            .unwrap()],
            labels: vec![Some(1); n],
            ids: Vec::new(),
        })
        .unwrap()
    }

    #[test]
    fn neighbors_sorted_and_isolated_empty() {
        let g = tiny(vec![(0, 3), (0, 1)], 2, 4);
        assert_eq!(g.neighbors(NodeId::member(0)).unwrap(), vec![NodeId::job(1), NodeId::job(3)]);
        assert!(g.neighbors(NodeId::member(1)).unwrap().is_empty());
        assert!(g.neighbors(NodeId::job(9)).is_err());
    }

    #[test]
    fn duplicate_edges_rejected() {
        let r = BipartiteGraph::from_parts(GraphParts {
            n_members: 1,
            n_jobs: 1,
            edges: vec![(0, 0), (0, 0)],
            ..Default::default()
        });
        assert!(matches!(r, Err(Error::DuplicateEdge { .. })));
    }

    #[test]
    fn neighbors_match_dense_matrix() {
        let g = random_graph(8, 12, 0.3, 3);
        let n = g.n_nodes();
        let mut dense = vec![vec![false; n]; n];
        for &(m, j) in g.edges() {
            let (a, b) = (m as usize, g.n_members() + j as usize);
            dense[a][b] = true;
            dense[b][a] = true;
        }
        for f in 0..n {
            let expect: Vec<u32> = (0..n).filter(|&k| dense[f][k]).map(|k| k as u32).collect();
            assert_eq!(g.neighbors_flat(f), expect.as_slice());
        }
        let member_deg: usize = g.side_range(Side::Member).map(|f| g.degree(f)).sum();
        let job_deg: usize = g.side_range(Side::Job).map(|f| g.degree(f)).sum();
        assert_eq!(member_deg, g.n_edges());
        assert_eq!(job_deg, g.n_edges());
    }

    #[test]
    fn mask_identity_and_saturation() {
        let g = random_graph(10, 10, 0.2, 1);
        let (same, masked) = g.apply_missing_mask(0.0, 5).unwrap();
        assert_eq!(same, g);
        assert!(masked.is_empty());
        let (full, _) = g.apply_missing_mask(1.0, 5).unwrap();
        for f in 0..full.n_nodes() {
            assert!(full.is_empty_node(f));
        }
        assert_eq!(full.labels(), g.labels());
        assert!(g.apply_missing_mask(1.5, 0).is_err());
    }

    #[test]
    fn mask_exact_count_and_deterministic() {
        let g = tiny(vec![], 500, 500);
        let (a, set_a) = g.apply_missing_mask(0.25, 11).unwrap();
        let (b, set_b) = g.apply_missing_mask(0.25, 11).unwrap();
        assert_eq!(set_a.len(), 250);
        assert_eq!(set_a, set_b);
        assert_eq!(a, b);
        let (_, other) = g.apply_missing_mask(0.25, 12).unwrap();
        assert_ne!(set_a, other);
    }

    #[test]
    fn mask_tops_up_already_empty() {
        let g = random_graph(20, 20, 0.2, 2);
        let before = g.empty_nodes();
        let (m, set) = g.apply_missing_mask(0.5, 3).unwrap();
        assert_eq!(m.empty_nodes(), 20);
        assert_eq!(set.len(), 20 - before);
        // unmasked nodes untouched
        for f in 0..g.n_nodes() {
            if !set.contains(&g.node_id(f)) {
                for (a, b) in g.channels().iter().zip(m.channels()) {
                    assert_eq!(a.is_observed(f), b.is_observed(f));
                    assert_eq!(a.indices(f), b.indices(f));
                    assert_eq!(a.lookup_id(f), b.lookup_id(f));
                }
            }
        }
    }

    #[test]
    fn per_channel_mask_leaves_other_channels() {
        let g = random_graph(20, 20, 0.2, 2);
        let (m, _) = g
            .apply_missing_mask_scoped(0.5, 3, &MaskScope::Channels(vec!["skills".into()]))
            .unwrap();
        assert_eq!(m.channel("title").unwrap(), g.channel("title").unwrap());
        assert_ne!(m.channel("skills").unwrap(), g.channel("skills").unwrap());
    }

    #[test]
    fn restrict_ties_by_index() {
        // skill counts: 0 -> 5, 1 -> 5, 2 -> 1
        let n = 6;
        let sets = vec![
            Some(vec![0, 1]),
            Some(vec![0, 1]),
            Some(vec![0, 1, 2]),
            Some(vec![0, 1]),
            Some(vec![0, 1]),
            None,
        ];
        let g = BipartiteGraph::from_parts(GraphParts {
            n_members: 3,
            n_jobs: 3,
            edges: vec![(0, 0), (1, 2)],
            channels: vec![Channel::multi_hot(ChannelSpec::multi_hot("skills", 3), sets).unwrap()],
            labels: vec![None; n],
            ids: Vec::new(),
        })
        .unwrap();
        let r = g.restrict_skill_space(2).unwrap();
        let c = r.channel("skills").unwrap();
        assert_eq!(c.spec.dim, 2);
        assert_eq!(c.indices(2), &[0, 1]);
        assert!(!c.is_observed(5));
        assert_eq!(r.edges(), g.edges());
        assert!(g.restrict_skill_space(0).is_err());
        assert!(g.restrict_skill_space(4).is_err());
    }

    #[test]
    fn restrict_full_dim_is_relabeling() {
        let g = random_graph(10, 10, 0.3, 9);
        let r = g.restrict_skill_space(8).unwrap();
        let (a, b) = (g.channel("skills").unwrap(), r.channel("skills").unwrap());
        for f in 0..g.n_nodes() {
            assert_eq!(a.indices(f).len(), b.indices(f).len());
        }
        assert_eq!(g.channel("industries").unwrap(), r.channel("industries").unwrap());
        assert_eq!(g.channel("title").unwrap(), r.channel("title").unwrap());
    }
}
