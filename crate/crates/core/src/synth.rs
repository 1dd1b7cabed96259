//! Synthetic member-job application graphs with planted cluster structure.
//!
//! Every node gets a latent cluster. Clusters own a random share of the skill,
//! industry and title vocabularies; nodes draw features preferentially from
//! their cluster's share, apply preferentially to jobs of their own cluster,
//! and are remote with a cluster-dependent probability.

use std::collections::HashSet;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    save_graph, BipartiteGraph, Channel, ChannelSpec, GraphParts, DEFAULT_INDUSTRY_DIM, DEFAULT_SKILL_DIM,
    DEFAULT_TITLE_EMBED_DIM,
};
use crate::seed;

fn default_p_in() -> f64 {
    0.3
}
fn default_p_bg() -> f64 {
    0.01
}
fn default_title_in() -> f64 {
    0.8
}
fn default_title_dim() -> usize {
    DEFAULT_TITLE_EMBED_DIM
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_members: usize,
    pub n_jobs: usize,
    pub n_edges: usize,
    pub skill_dim: usize,
    pub industry_dim: usize,
    pub n_titles: usize,
    pub n_clusters: usize,
    /// Probability that a node of a remote cluster is remote (and that a node
    /// of an onsite cluster is onsite).
    pub remote_cluster_bias: f64,
    /// Weight multiplier for jobs in the member's own cluster.
    pub within_cluster_edge_prob_boost: f64,
    pub base_missing_ratio: f64,
    pub seed: u64,
    /// Inclusion probability of each skill/industry preferred by the node's cluster.
    #[serde(default = "default_p_in")]
    pub p_in: f64,
    /// Inclusion probability of every other skill/industry.
    #[serde(default = "default_p_bg")]
    pub p_bg: f64,
    /// Probability that the title comes from the cluster's own titles.
    #[serde(default = "default_title_in")]
    pub title_in_prob: f64,
    #[serde(default = "default_title_dim")]
    pub title_embed_dim: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl SynthConfig {
    /// 1000 members, 4000 jobs, 6000 edges: mean member degree 6.
    pub fn desk() -> Self {
        SynthConfig {
            n_members: 1000,
            n_jobs: 4000,
            n_edges: 6000,
            skill_dim: 400,
            industry_dim: 30,
            n_titles: 50,
            n_clusters: 6,
            remote_cluster_bias: 0.9,
            within_cluster_edge_prob_boost: 30.0,
            base_missing_ratio: 0.025,
            seed: 7,
            p_in: default_p_in(),
            p_bg: default_p_bg(),
            title_in_prob: default_title_in(),
            title_embed_dim: DEFAULT_TITLE_EMBED_DIM,
        }
    }

    /// Counts and widths of the production member-job dataset.
    pub fn large() -> Self {
        SynthConfig {
            n_members: 7106,
            n_jobs: 42061,
            n_edges: 47990,
            skill_dim: DEFAULT_SKILL_DIM,
            industry_dim: DEFAULT_INDUSTRY_DIM,
            n_titles: 500,
            n_clusters: 12,
            base_missing_ratio: 0.025,
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "large" => Ok(Self::large()),
            other => Err(Error::Config(format!("unknown preset {other:?} (expected desk or large)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.skill_dim == 0 || self.industry_dim == 0 || self.n_titles == 0 || self.title_embed_dim == 0 {
            return bad("all feature dims must be positive".into());
        }
        if self.n_clusters == 0 {
            return bad("n_clusters must be positive".into());
        }
        if !(0.5..=1.0).contains(&self.remote_cluster_bias) {
            return bad(format!("remote_cluster_bias {} outside [0.5, 1]", self.remote_cluster_bias));
        }
        if !(self.within_cluster_edge_prob_boost >= 1.0) {
            return bad("within_cluster_edge_prob_boost must be >= 1".into());
        }
        for (name, p) in [
            ("base_missing_ratio", self.base_missing_ratio),
            ("p_in", self.p_in),
            ("p_bg", self.p_bg),
            ("title_in_prob", self.title_in_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} {p} outside [0, 1]"));
            }
        }
        let capacity = self.n_members as u128 * self.n_jobs as u128;
        if self.n_edges as u128 > capacity {
            return bad(format!(
                "infeasible edge count {} for {} x {} nodes",
                self.n_edges, self.n_members, self.n_jobs
            ));
        }
        Ok(())
    }

    /// Channel schema of generated graphs.
    pub fn channels(&self) -> Vec<ChannelSpec> {
        vec![
            ChannelSpec::lookup("title", self.title_embed_dim, self.n_titles),
            ChannelSpec::multi_hot("skills", self.skill_dim),
            ChannelSpec::multi_hot("industries", self.industry_dim),
        ]
    }

    /// Clusters whose nodes lean remote: the first ⌈n_clusters / 2⌉.
    pub fn is_remote_cluster(&self, c: usize) -> bool {
        c < self.n_clusters.div_ceil(2)
    }
}

/// A generated graph together with the latent cluster of every node.
#[derive(Clone, Debug)]
pub struct SynthGraph {
    pub graph: BipartiteGraph,
    /// Flat-order latent clusters.
    pub clusters: Vec<usize>,
}

/// Subset of `items` where each is kept independently with probability `p`,
/// via geometric skips.
fn bernoulli_subset(items: &[u32], p: f64, rng: &mut seed::Rng, out: &mut Vec<u32>) {
    if p <= 0.0 || items.is_empty() {
        return;
    }
    if p >= 1.0 {
        out.extend_from_slice(items);
        return;
    }
    let log_q = (1.0 - p).ln();
    let mut i = 0usize;
    loop {
        let u: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
        let skip = (u.ln() / log_q).floor();
        if skip >= (items.len() - i) as f64 {
            return;
        }
        i += skip as usize;
        out.push(items[i]);
        i += 1;
        if i >= items.len() {
            return;
        }
    }
}

/// Partitions `0..dim` among clusters uniformly at random.
fn partition(dim: usize, n_clusters: usize, rng: &mut seed::Rng) -> Vec<Vec<u32>> {
    let mut parts = vec![Vec::new(); n_clusters];
    for i in 0..dim {
        parts[rng.gen_range(0..n_clusters)].push(i as u32);
    }
    parts
}

fn complement(dim: usize, part: &[u32]) -> Vec<u32> {
    let set: HashSet<u32> = part.iter().copied().collect();
    (0..dim as u32).filter(|i| !set.contains(i)).collect()
}

fn draw_set(pref: &[u32], rest: &[u32], cfg: &SynthConfig, rng: &mut seed::Rng) -> Vec<u32> {
    let mut out = Vec::new();
    bernoulli_subset(pref, cfg.p_in, rng, &mut out);
    bernoulli_subset(rest, cfg.p_bg, rng, &mut out);
    out.sort_unstable();
    out
}

pub fn generate(cfg: &SynthConfig) -> Result<BipartiteGraph> {
    generate_with_clusters(cfg).map(|s| s.graph)
}

pub fn generate_with_clusters(cfg: &SynthConfig) -> Result<SynthGraph> {
    cfg.validate()?;
    let n = cfg.n_members + cfg.n_jobs;
    let k = cfg.n_clusters;

    let mut rng = seed::rng(cfg.seed, "synth/clusters");
    let clusters: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();

    let mut rng = seed::rng(cfg.seed, "synth/vocab");
    let skill_parts = partition(cfg.skill_dim, k, &mut rng);
    let ind_parts = partition(cfg.industry_dim, k, &mut rng);
    let title_parts = partition(cfg.n_titles, k, &mut rng);
    let skill_rest: Vec<Vec<u32>> = skill_parts.iter().map(|p| complement(cfg.skill_dim, p)).collect();
    let ind_rest: Vec<Vec<u32>> = ind_parts.iter().map(|p| complement(cfg.industry_dim, p)).collect();

    let mut rng = seed::rng(cfg.seed, "synth/features");
    let mut skills = Vec::with_capacity(n);
    let mut industries = Vec::with_capacity(n);
    let mut titles = Vec::with_capacity(n);
    for &c in &clusters {
        skills.push(Some(draw_set(&skill_parts[c], &skill_rest[c], cfg, &mut rng)));
        industries.push(Some(draw_set(&ind_parts[c], &ind_rest[c], cfg, &mut rng)));
        let own = &title_parts[c];
        let title = if !own.is_empty() && rng.gen_bool(cfg.title_in_prob) {
            own[rng.gen_range(0..own.len())]
        } else {
            rng.gen_range(0..cfg.n_titles as u32)
        };
        titles.push(Some(title));
    }

    let edges = sample_edges(cfg, &clusters)?;

    let mut rng = seed::rng(cfg.seed, "synth/labels");
    let labels = clusters
        .iter()
        .map(|&c| {
            let p = if cfg.is_remote_cluster(c) {
                cfg.remote_cluster_bias
            } else {
                1.0 - cfg.remote_cluster_bias
            };
            Some(u8::from(rng.gen_bool(p)))
        })
        .collect();

    let specs = cfg.channels();
    let graph = BipartiteGraph::from_parts(GraphParts {
        n_members: cfg.n_members,
        n_jobs: cfg.n_jobs,
        edges,
        channels: vec![
            Channel::lookup(specs[0].clone(), titles)?,
            Channel::multi_hot(specs[1].clone(), skills)?,
            Channel::multi_hot(specs[2].clone(), industries)?,
        ],
        labels,
        ids: Vec::new(),
    })?;
    let (graph, _) = graph.apply_missing_mask(cfg.base_missing_ratio, seed::derive(cfg.seed, "synth/base-mask"))?;
    Ok(SynthGraph { graph, clusters })
}

fn sample_edges(cfg: &SynthConfig, clusters: &[usize]) -> Result<Vec<(u32, u32)>> {
    let (nm, nj) = (cfg.n_members, cfg.n_jobs);
    if cfg.n_edges == 0 {
        return Ok(Vec::new());
    }
    let job_cluster = &clusters[nm..];
    let mut rng = seed::rng(cfg.seed, "synth/edges");
    let boost = cfg.within_cluster_edge_prob_boost;
    let capacity = nm as u128 * nj as u128;

    if cfg.n_edges as u128 * 2 > capacity {
        // Dense regime: weighted sampling without replacement over all pairs
        // (Efraimidis-Spirakis keys u^(1/w)).
        let mut keyed: Vec<(f64, u32, u32)> = Vec::with_capacity(nm * nj);
        for m in 0..nm {
            for j in 0..nj {
                let w = if clusters[m] == job_cluster[j] { boost } else { 1.0 };
                let u: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
                keyed.push((u.ln() / w, m as u32, j as u32));
            }
        }
        keyed.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then((a.1, a.2).cmp(&(b.1, b.2))));
        return Ok(keyed.into_iter().take(cfg.n_edges).map(|(_, m, j)| (m, j)).collect());
    }

    let mut jobs_by_cluster = vec![Vec::new(); cfg.n_clusters];
    for (j, &c) in job_cluster.iter().enumerate() {
        jobs_by_cluster[c].push(j as u32);
    }
    let sizes: Vec<f64> = jobs_by_cluster.iter().map(|v| v.len() as f64).collect();
    let total: f64 = sizes.iter().sum();
    let mut seen = HashSet::with_capacity(cfg.n_edges * 2);
    let mut edges = Vec::with_capacity(cfg.n_edges);
    while edges.len() < cfg.n_edges {
        let m = rng.gen_range(0..nm);
        let own = clusters[m];
        let mass = total + (boost - 1.0) * sizes[own];
        let mut x = rng.gen::<f64>() * mass;
        let mut pick = own;
        for (c, &s) in sizes.iter().enumerate() {
            let w = if c == own { boost * s } else { s };
            if x < w {
                pick = c;
                break;
            }
            x -= w;
        }
        let pool = &jobs_by_cluster[pick];
        if pool.is_empty() {
            continue;
        }
        let j = pool[rng.gen_range(0..pool.len())];
        if seen.insert((m as u32, j)) {
            edges.push((m as u32, j));
        }
    }
    Ok(edges)
}

/// Writes the generated graph as `nodes.jsonl` / `edges.jsonl`.
pub fn save(g: &BipartiteGraph, nodes_path: &Path, edges_path: &Path) -> Result<()> {
    save_graph(g, nodes_path, edges_path)
}
