use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use jmmfr_core::eval::{
    eval_restoration, export_embeddings, proportional_skill_dims, sweep_missing, sweep_skill_dims, sweep_split,
    SweepPlan, MISSING_RATIOS,
};
use jmmfr_core::graph::{load_graph, BipartiteGraph, ChannelSpec, Split};
use jmmfr_core::restore::{export_restored, restore_channel};
use jmmfr_core::synth::{self, SynthConfig};
use jmmfr_core::trainer::{evaluate, prepare_graph, train, Checkpoint, ExperimentConfig, Model, ModelKind};
use jmmfr_core::diff::ParamRegistry;
use jmmfr_core::encoders::EncoderKind;

#[derive(Parser, Debug)]
#[command(name = "jmmfr", version, about = "Remoteness prediction with missing-feature restoration on member-job graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic member-job graph.
    Generate(GenerateArgs),
    /// Train a model and write its checkpoint and report.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the val or test split.
    Eval(EvalArgs),
    /// Run a missing-ratio or skill-dimension sweep.
    Sweep(SweepArgs),
    /// Export node embeddings (TSV) or restored features (JSONL).
    Export(ExportArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Generator config (JSON with SynthConfig fields).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset used when no config is given: desk or large.
    #[arg(long, default_value = "desk")]
    preset: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: PathBuf,
}

/// Experiment overrides; each flag beats the config file value.
#[derive(Args, Debug, Default)]
struct ExperimentFlags {
    /// Experiment config (JSON with ExperimentConfig fields).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    encoder: Option<ModelKind>,
    #[arg(long)]
    backbone: Option<EncoderKind>,
    /// Force restoration on or off.
    #[arg(long)]
    restoration: Option<bool>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    depth: Option<usize>,
    /// Fraction of nodes blanked before training.
    #[arg(long)]
    missing_ratio: Option<f64>,
    /// Evaluate the restoration loss on all observed nodes every batch.
    #[arg(long)]
    full_graph_l1: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data_dir: PathBuf,
    #[command(flatten)]
    exp: ExperimentFlags,
    /// Output directory for checkpoint.json and report.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Test,
    Val,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Also write the metrics JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AxisArg {
    Missing,
    Skills,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long, value_enum)]
    axis: AxisArg,
    #[arg(long)]
    data_dir: PathBuf,
    #[command(flatten)]
    exp: ExperimentFlags,
    /// Comma-separated model kinds.
    #[arg(long, value_delimiter = ',', default_value = "mlp,jmmfr-mc")]
    models: Vec<ModelKind>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    seeds: Vec<u64>,
    /// Axis values; defaults to the standard grid for the axis.
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
    /// Worker threads for sweep cells.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory for sweep.json and sweep.txt.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ExportWhat {
    Embeddings,
    Restored,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long, value_enum)]
    what: ExportWhat,
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("JMMFR_LOG", "info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Export(a) => cmd_export(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let body = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&body).with_context(|| format!("parsing {}", path.display()))
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => read_json::<SynthConfig>(p)?,
        None => SynthConfig::preset(&a.preset)?,
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let manifest = serde_json::to_string_pretty(&cfg)?;
    info!("resolved generator config: {}", serde_json::to_string(&cfg)?);
    info!("seed {}", cfg.seed);
    let g = synth::generate(&cfg)?;
    create_dir(&a.out_dir)?;
    synth::save(&g, &a.out_dir.join("nodes.jsonl"), &a.out_dir.join("edges.jsonl"))?;
    write_file(&a.out_dir.join("manifest.json"), &manifest)?;
    info!(
        "wrote {} members, {} jobs, {} edges to {}",
        g.n_members(),
        g.n_jobs(),
        g.n_edges(),
        a.out_dir.display()
    );
    Ok(())
}

/// Channel schema of a data directory: `schema.json` if present, otherwise
/// the channels implied by the generator `manifest.json`.
fn load_data(dir: &Path) -> Result<BipartiteGraph> {
    if !dir.is_dir() {
        bail!("data directory {} does not exist", dir.display());
    }
    let schema_path = dir.join("schema.json");
    let schema: Vec<ChannelSpec> = if schema_path.exists() {
        read_json(&schema_path)?
    } else {
        let manifest = dir.join("manifest.json");
        if !manifest.exists() {
            bail!("{} has neither schema.json nor manifest.json", dir.display());
        }
        read_json::<SynthConfig>(&manifest)?.channels()
    };
    let g = load_graph(&dir.join("nodes.jsonl"), &dir.join("edges.jsonl"), &schema)
        .with_context(|| format!("loading graph from {}", dir.display()))?;
    Ok(g)
}

fn resolve_config(f: &ExperimentFlags) -> Result<ExperimentConfig> {
    let mut cfg = match &f.config {
        Some(p) => read_json::<ExperimentConfig>(p)?,
        None => ExperimentConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = f.$field {
                cfg.$field = v;
            }
        )*};
    }
    set!(encoder, backbone, seed, epochs, patience, batch_size, learning_rate, dropout, beta1, beta2, depth);
    if f.restoration.is_some() {
        cfg.restoration = f.restoration;
    }
    if f.missing_ratio.is_some() {
        cfg.missing_ratio = f.missing_ratio;
    }
    if f.full_graph_l1 {
        cfg.full_graph_l1 = true;
    }
    cfg.validate()?;
    info!("resolved config: {}", serde_json::to_string(&cfg)?);
    info!("seed {}", cfg.seed);
    Ok(cfg)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let g = load_data(&a.data_dir)?;
    let cfg = resolve_config(&a.exp)?;
    let split = sweep_split(&g, &cfg)?;
    let (masked, _) = prepare_graph(&g, &cfg)?;
    let out = train(&masked, &split, &cfg)?;
    create_dir(&a.out)?;
    out.checkpoint.save(&a.out.join("checkpoint.json"))?;
    write_file(&a.out.join("report.json"), &serde_json::to_string_pretty(&out.report)?)?;
    if let Some(m) = &out.report.test.member {
        info!("test member accuracy {:.4}", m.accuracy);
    }
    Ok(())
}

/// Rebuilds the graph a checkpoint was trained on and its model.
fn restore_run(data_dir: &Path, checkpoint: &Path) -> Result<(BipartiteGraph, BipartiteGraph, Vec<usize>, Model, ParamRegistry)> {
    let g = load_data(data_dir)?;
    let ck = Checkpoint::load(checkpoint).with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    info!("resolved config: {}", serde_json::to_string(&ck.config)?);
    info!("seed {}", ck.config.seed);
    let (masked, holdout) = prepare_graph(&g, &ck.config)?;
    let (model, reg) = ck.model(&masked)?;
    Ok((g, masked, holdout, model, reg))
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let (g, masked, holdout, model, reg) = restore_run(&a.data_dir, &a.checkpoint)?;
    let which = match a.split {
        SplitArg::Test => Split::Test,
        SplitArg::Val => Split::Val,
    };
    let split = sweep_split(&g, &model.config)?;
    let metrics = evaluate(&model, &reg, &masked, &split, which)?;
    let mut restoration = Vec::new();
    if model.store.is_some() && !holdout.is_empty() {
        for spec in masked.channel_specs().iter().filter(|c| c.in_restoration_loss) {
            if let Ok(r) = eval_restoration(&g, &masked, &model, &reg, &holdout, &spec.name, model.config.seed) {
                restoration.push(r);
            }
        }
    }
    let body = serde_json::to_string_pretty(&serde_json::json!({
        "split": format!("{which:?}").to_lowercase(),
        "metrics": metrics,
        "restoration": restoration,
    }))?;
    println!("{body}");
    if let Some(p) = &a.out {
        write_file(p, &body)?;
    }
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let g = load_data(&a.data_dir)?;
    let cfg = resolve_config(&a.exp)?;
    info!(
        "sweep {:?}: models {:?}, seeds {:?}",
        a.axis,
        a.models.iter().map(|m| m.as_str()).collect::<Vec<_>>(),
        a.seeds
    );
    let values = match (&a.values, a.axis) {
        (Some(v), _) => v.clone(),
        (None, AxisArg::Missing) => MISSING_RATIOS.to_vec(),
        (None, AxisArg::Skills) => proportional_skill_dims(g.channel("skills")?.spec.dim)
            .into_iter()
            .map(|d| d as f64)
            .collect(),
    };
    let plan = SweepPlan {
        values: &values,
        models: &a.models,
        seeds: &a.seeds,
    };
    let run = || match a.axis {
        AxisArg::Missing => sweep_missing(&g, &cfg, &plan),
        AxisArg::Skills => sweep_skill_dims(&g, &cfg, &plan),
    };
    let result = with_workers(a.jobs, run)??;
    create_dir(&a.out)?;
    write_file(&a.out.join("sweep.json"), &serde_json::to_string_pretty(&result)?)?;
    let table = result.to_table();
    write_file(&a.out.join("sweep.txt"), &table)?;
    print!("{table}");
    Ok(())
}

#[cfg(feature = "parallel")]
fn with_workers<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build()?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

#[cfg(not(feature = "parallel"))]
fn with_workers<T>(_jobs: Option<usize>, f: impl FnOnce() -> T) -> Result<T> {
    Ok(f())
}

fn cmd_export(a: ExportArgs) -> Result<()> {
    let (_, masked, _, model, reg) = restore_run(&a.data_dir, &a.checkpoint)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    match a.what {
        ExportWhat::Embeddings => export_embeddings(&masked, &model, &reg, &a.out)?,
        ExportWhat::Restored => {
            let Some(store) = &model.store else {
                bail!("checkpoint was trained without restoration; nothing to export");
            };
            let restored = store
                .channels()
                .iter()
                .map(|c| restore_channel(&masked, c, store, &reg))
                .collect::<jmmfr_core::Result<Vec<_>>>()?;
            export_restored(&masked, &restored, &a.out)?;
        }
    }
    info!("wrote {}", a.out.display());
    Ok(())
}
