//! Metrics, robustness sweeps, restoration evaluation and embedding export.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::diff::{sigmoid_scalar, Matrix, ParamRegistry};
use crate::error::{Error, Result};
use crate::graph::{BipartiteGraph, ChannelKind, Side, SplitAssignment, SplitFractions};
use crate::restore::restore_channel;
use crate::trainer::{prepare_graph, train, ExperimentConfig, Model, ModelKind, SplitMetrics};
use crate::{par, seed};

/// Fraction of entries where `score >= threshold` agrees with the label.
pub fn accuracy(scores: &[f64], labels: &[u8], threshold: f64) -> Result<f64> {
    check_aligned(scores, labels)?;
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &y)| (s >= threshold) == (y == 1))
        .count();
    Ok(hits as f64 / scores.len() as f64)
}

/// `Σ_k (R_k − R_{k−1}) P_k` over the descending-score ranking. Tied scores
/// keep their input order.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_aligned(scores, labels)?;
    let positives = labels.iter().filter(|&&y| y == 1).count();
    if positives == 0 {
        return Err(Error::Empty("average precision needs at least one positive label".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut tp = 0usize;
    let mut sum = 0.0;
    for (k, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            tp += 1;
            sum += tp as f64 / (k + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

fn check_aligned(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::Empty("no scores".into()));
    }
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores vs {} labels", scores.len(), labels.len())));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestorationEval {
    pub channel: String,
    pub nodes: usize,
    pub pairs: usize,
    pub positive_rate: f64,
    /// Micro-averaged AP over all (node, feature) pairs of the holdout.
    pub average_precision: f64,
    /// Mean AP of the same scores against permuted targets.
    pub permutation_ap: f64,
}

const PERMUTATIONS: u64 = 5;

/// Scores holdout nodes' restored features (post-sigmoid) against their true
/// indicators in `original`. `masked` is the graph the model was trained on.
pub fn eval_restoration(
    original: &BipartiteGraph,
    masked: &BipartiteGraph,
    model: &Model,
    reg: &ParamRegistry,
    holdout: &[usize],
    channel: &str,
    seed_: u64,
) -> Result<RestorationEval> {
    let store = model
        .store
        .as_ref()
        .ok_or_else(|| Error::Config("model has no restoration weights".into()))?;
    let truth = original.channel(channel)?;
    if truth.spec.kind != ChannelKind::MultiHot {
        return Err(Error::Config(format!("channel {channel:?} is not multi-hot")));
    }
    let nodes: Vec<usize> = holdout.iter().copied().filter(|&f| truth.is_observed(f)).collect();
    if nodes.is_empty() {
        return Err(Error::Empty(format!("no holdout node observed on {channel:?}")));
    }
    let restored = restore_channel(masked, channel, store, reg)?;
    let w = truth.spec.dim;
    let mut scores = Vec::with_capacity(nodes.len() * w);
    let mut labels = vec![0u8; nodes.len() * w];
    for (r, &f) in nodes.iter().enumerate() {
        scores.extend(restored.scores.row(f).iter().map(|&z| sigmoid_scalar(z)));
        for &i in truth.indices(f) {
            labels[r * w + i as usize] = 1;
        }
    }
    let positives = labels.iter().filter(|&&y| y == 1).count();
    let ap = average_precision(&scores, &labels)?;
    let mut perm_sum = 0.0;
    let mut shuffled = labels.clone();
    for k in 0..PERMUTATIONS {
        shuffled.shuffle(&mut seed::rng_indexed(seed_, "restore-permutation", k));
        perm_sum += average_precision(&scores, &shuffled)?;
    }
    Ok(RestorationEval {
        channel: channel.to_string(),
        nodes: nodes.len(),
        pairs: labels.len(),
        positive_rate: positives as f64 / labels.len() as f64,
        average_precision: ap,
        permutation_ap: perm_sum / PERMUTATIONS as f64,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Missing,
    Skills,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Missing => "missing",
            SweepAxis::Skills => "skills",
        }
    }
}

pub const MISSING_RATIOS: [f64; 6] = [0.025, 0.08, 0.125, 0.25, 0.5, 0.75];

/// Skill-space sizes of the full-scale grid.
pub const LARGE_SKILL_DIMS: [usize; 6] = [3826, 2300, 1036, 516, 252, 69];

/// The full-scale grid scaled to `full` (first point is `full` itself).
pub fn proportional_skill_dims(full: usize) -> Vec<usize> {
    let top = LARGE_SKILL_DIMS[0] as f64;
    let mut dims: Vec<usize> = LARGE_SKILL_DIMS
        .iter()
        .map(|&d| ((d as f64 / top * full as f64).round() as usize).max(1))
        .collect();
    dims.dedup();
    dims
}

/// One trained cell of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub value: f64,
    pub model: ModelKind,
    pub seed: u64,
    pub best_epoch: Option<usize>,
    pub test: SplitMetrics,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub restoration: Vec<RestorationEval>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Option<Summary> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Summary { mean, std, n: xs.len() })
    }
}

/// Seed-aggregated metrics for one (value, model) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub model: ModelKind,
    pub member_accuracy: Option<Summary>,
    pub member_ap: Option<Summary>,
    pub job_accuracy: Option<Summary>,
    pub job_ap: Option<Summary>,
    /// Restoration AP and permutation baseline per multi-hot channel.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub restoration: Vec<(String, Summary, Summary)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub models: Vec<ModelKind>,
    pub seeds: Vec<u64>,
    pub cells: Vec<SweepCell>,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn row(&self, value: f64, model: ModelKind) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.value == value && r.model == model)
    }

    /// Member-side test accuracies of `model` at `value`, in seed order.
    pub fn member_accuracies(&self, value: f64, model: ModelKind) -> Vec<f64> {
        self.cells
            .iter()
            .filter(|c| c.value == value && c.model == model)
            .filter_map(|c| c.test.member.as_ref().map(|m| m.accuracy))
            .collect()
    }

    pub fn to_table(&self) -> String {
        let fmt = |s: &Option<Summary>| match s {
            Some(s) => format!("{:.4} ± {:.4}", s.mean, s.std),
            None => "-".to_string(),
        };
        let mut header = vec![
            self.axis.as_str().to_string(),
            "model".into(),
            "member acc".into(),
            "member AP".into(),
            "job acc".into(),
            "job AP".into(),
        ];
        let channels: Vec<String> = self
            .rows
            .iter()
            .flat_map(|r| r.restoration.iter().map(|(c, _, _)| c.clone()))
            .fold(Vec::new(), |mut acc, c| {
                if !acc.contains(&c) {
                    acc.push(c);
                }
                acc
            });
        for c in &channels {
            header.push(format!("{c} restore AP"));
            header.push(format!("{c} perm AP"));
        }
        let mut rows = vec![header];
        for r in &self.rows {
            let mut line = vec![
                trim_value(r.value),
                r.model.to_string(),
                fmt(&r.member_accuracy),
                fmt(&r.member_ap),
                fmt(&r.job_accuracy),
                fmt(&r.job_ap),
            ];
            for c in &channels {
                match r.restoration.iter().find(|(n, _, _)| n == c) {
                    Some((_, ap, perm)) => {
                        line.push(fmt(&Some(*ap)));
                        line.push(fmt(&Some(*perm)));
                    }
                    None => line.extend(["-".to_string(), "-".to_string()]),
                }
            }
            rows.push(line);
        }
        let ncol = rows[0].len();
        let widths: Vec<usize> = (0..ncol)
            .map(|j| rows.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for r in &rows {
            let cells: Vec<String> = r
                .iter()
                .zip(&widths)
                .map(|(c, &w)| format!("{c:<w$}"))
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }
}

fn trim_value(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v}")
    }
}

/// Grid of values, models and seeds to train.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPlan<'a> {
    pub values: &'a [f64],
    pub models: &'a [ModelKind],
    pub seeds: &'a [u64],
}

/// Frozen split used by every sweep cell.
pub fn sweep_split(g: &BipartiteGraph, cfg: &ExperimentConfig) -> Result<SplitAssignment> {
    g.split_nodes(SplitFractions::default(), cfg.seed)
}

fn run_cells<F>(axis: SweepAxis, plan: &SweepPlan<'_>, cell: F) -> Result<SweepResult>
where
    F: Fn(f64, ModelKind, u64) -> Result<SweepCell> + Sync + Send,
{
    if plan.values.is_empty() || plan.models.is_empty() || plan.seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one value, model and seed".into()));
    }
    let jobs: Vec<(f64, ModelKind, u64)> = plan
        .values
        .iter()
        .flat_map(|&v| plan.models.iter().flat_map(move |&m| plan.seeds.iter().map(move |&s| (v, m, s))))
        .collect();
    let cells = par::map(&jobs, |&(v, m, s)| cell(v, m, s))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for &v in plan.values {
        for &m in plan.models {
            let these: Vec<&SweepCell> = cells.iter().filter(|c| c.value == v && c.model == m).collect();
            let pick = |side: Side, ap: bool| {
                let xs: Vec<f64> = these
                    .iter()
                    .filter_map(|c| c.test.side(side))
                    .filter_map(|s| if ap { s.average_precision } else { Some(s.accuracy) })
                    .collect();
                Summary::of(&xs)
            };
            let mut restoration = Vec::new();
            if let Some(first) = these.first() {
                for r in &first.restoration {
                    let of = |f: fn(&RestorationEval) -> f64| {
                        let xs: Vec<f64> = these
                            .iter()
                            .filter_map(|c| c.restoration.iter().find(|x| x.channel == r.channel))
                            .map(f)
                            .collect();
                        Summary::of(&xs).unwrap()
                    };
                    restoration.push((r.channel.clone(), of(|x| x.average_precision), of(|x| x.permutation_ap)));
                }
            }
            rows.push(SweepRow {
                value: v,
                model: m,
                member_accuracy: pick(Side::Member, false),
                member_ap: pick(Side::Member, true),
                job_accuracy: pick(Side::Job, false),
                job_ap: pick(Side::Job, true),
                restoration,
            });
        }
    }
    Ok(SweepResult {
        axis,
        values: plan.values.to_vec(),
        models: plan.models.to_vec(),
        seeds: plan.seeds.to_vec(),
        cells,
        rows,
    })
}

fn cell_config(base: &ExperimentConfig, model: ModelKind, seed_: u64) -> ExperimentConfig {
    ExperimentConfig {
        encoder: model,
        seed: seed_,
        ..base.clone()
    }
}

/// Trains every (ratio, model, seed) cell on `g` masked to the ratio. The
/// test split is computed once from `base.seed` before any masking. Models
/// with restoration also report holdout restoration AP for each multi-hot
/// channel that lost nodes.
pub fn sweep_missing(g: &BipartiteGraph, base: &ExperimentConfig, plan: &SweepPlan<'_>) -> Result<SweepResult> {
    if plan.values.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Config("missing ratios must be sorted ascending".into()));
    }
    let split = sweep_split(g, base)?;
    run_cells(SweepAxis::Missing, plan, |ratio, model, s| {
        let cfg = ExperimentConfig {
            missing_ratio: Some(ratio),
            ..cell_config(base, model, s)
        };
        let (masked, holdout) = prepare_graph(g, &cfg)?;
        let out = train(&masked, &split, &cfg)?;
        let mut restoration = Vec::new();
        if out.model.store.is_some() && !holdout.is_empty() {
            for spec in g.channel_specs().iter().filter(|c| c.in_restoration_loss) {
                match eval_restoration(g, &masked, &out.model, &out.params, &holdout, &spec.name, s) {
                    Ok(r) => restoration.push(r),
                    Err(Error::Empty(_)) => {}
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(SweepCell {
            value: ratio,
            model,
            seed: s,
            best_epoch: out.report.best_epoch,
            test: out.report.test,
            restoration,
        })
    })
}

/// Trains every (dim, model, seed) cell on `g` with the skills channel cut
/// to its `dim` most frequent entries (`base.missing_ratio` still applies).
pub fn sweep_skill_dims(g: &BipartiteGraph, base: &ExperimentConfig, plan: &SweepPlan<'_>) -> Result<SweepResult> {
    if plan.values.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::Config("skill dims must be sorted descending".into()));
    }
    if let Some(v) = plan.values.iter().find(|v| v.fract() != 0.0 || **v < 1.0) {
        return Err(Error::Config(format!("skill dim {v} is not a positive integer")));
    }
    let skills = g.channel("skills")?;
    let full = skills.spec.dim;
    let split = sweep_split(g, base)?;
    let restricted: Vec<(f64, BipartiteGraph)> = plan
        .values
        .iter()
        .map(|&v| {
            let k = v as usize;
            let r = if k == full { g.clone() } else { g.restrict_channel("skills", k)? };
            Ok((v, r))
        })
        .collect::<Result<_>>()?;
    run_cells(SweepAxis::Skills, plan, |dim, model, s| {
        let gr = &restricted.iter().find(|(v, _)| *v == dim).unwrap().1;
        let cfg = cell_config(base, model, s);
        let (masked, _) = prepare_graph(gr, &cfg)?;
        let out = train(&masked, &split, &cfg)?;
        Ok(SweepCell {
            value: dim,
            model,
            seed: s,
            best_epoch: out.report.best_epoch,
            test: out.report.test,
            restoration: Vec::new(),
        })
    })
}

/// Writes `id, side, z_0..z_{m-1}, skills` for every node as TSV.
pub fn export_embeddings(g: &BipartiteGraph, model: &Model, reg: &ParamRegistry, path: &Path) -> Result<()> {
    let m = model.embedding_dim();
    let nodes: Vec<u32> = (0..g.n_nodes() as u32).collect();
    let z = if nodes.is_empty() {
        Matrix::zeros(0, m)
    } else {
        model.embed(reg, g, &nodes)?
    };
    let skills = g.channel("skills").ok().filter(|c| c.spec.kind == ChannelKind::MultiHot);
    let mut out = String::new();
    out.push_str("id\tside");
    for k in 0..m {
        let _ = write!(out, "\tz{k}");
    }
    out.push_str("\tskills\n");
    for f in 0..g.n_nodes() {
        let _ = write!(out, "{}\t{}", g.id(f), g.side(f).as_str());
        for v in z.row(f) {
            let _ = write!(out, "\t{v}");
        }
        out.push('\t');
        if let Some(c) = skills {
            let idx: Vec<String> = c.indices(f).iter().map(u32::to_string).collect();
            out.push_str(&idx.join(";"));
        }
        out.push('\n');
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Mean member embedding per requested skill. `embeddings` has one row per
/// node in flat order; members owning several skills count toward each.
pub fn skill_centroids(embeddings: &Matrix, g: &BipartiteGraph, skills: &[u32]) -> Result<Matrix> {
    if embeddings.rows != g.n_nodes() {
        return Err(Error::Shape(format!("{} embedding rows for {} nodes", embeddings.rows, g.n_nodes())));
    }
    let ch = g.channel("skills")?;
    let mut sums = Matrix::zeros(skills.len(), embeddings.cols);
    let mut counts = vec![0usize; skills.len()];
    for f in g.side_range(Side::Member) {
        for &s in ch.indices(f) {
            if let Some(k) = skills.iter().position(|&q| q == s) {
                counts[k] += 1;
                crate::diff::axpy(sums.row_mut(k), 1.0, embeddings.row(f));
            }
        }
    }
    for (k, &n) in counts.iter().enumerate() {
        if n == 0 {
            return Err(Error::Empty(format!("no member has skill {}", skills[k])));
        }
        sums.row_mut(k).iter_mut().for_each(|v| *v /= n as f64);
    }
    Ok(sums)
}
