//! Command-line interface.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use trajmatch_core::baseline::HmmConfig;
use trajmatch_core::roadnet::make_grid_network;
use trajmatch_core::trajgen::{generate_corpus, generate_pseudo_real, GenerationConfig, DEFAULT_ROUTE_CAP};
use trajmatch_model::{load_checkpoint, AdamConfig, ComponentMask, ModelConfig, TrainConfig};

use crate::error::HarnessError;
use crate::experiment::{run_experiment, ExperimentManifest};
use crate::manifest::RunManifest;
use crate::pipeline::{
    ensure_parent, export_attention, init_model, read_network, read_predictions, read_trajectories, save_model,
    score_predictions, score_routes, train_model, write_loss_log, write_predictions, write_table, write_trajectories,
    Engine, TableRow,
};

#[derive(Debug, Parser)]
#[command(
    name = "trajmatch",
    version,
    about = "Map matching with a Transformer and an HMM baseline"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a directed grid road network.
    GenNet(GenNetArgs),
    /// Generate labeled trajectories on a network.
    GenTraj(GenTrajArgs),
    /// Train a model from scratch.
    Pretrain(PretrainArgs),
    /// Continue training a checkpoint with some components frozen.
    Finetune(FinetuneArgs),
    /// Match trajectories with the HMM or a trained model.
    Match(MatchArgs),
    /// Score predictions against labeled trajectories.
    Eval(EvalArgs),
    /// Export attention matrices and threshold ranges for one trajectory.
    Attn(AttnArgs),
    /// Run the full pipeline from a manifest.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
pub struct GenNetArgs {
    #[arg(long, default_value_t = 5)]
    pub rows: usize,
    #[arg(long, default_value_t = 5)]
    pub cols: usize,
    /// Vertex spacing in meters.
    #[arg(long, default_value_t = 200.0)]
    pub spacing: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenTrajArgs {
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long)]
    pub count: usize,
    /// Segments per route.
    #[arg(long, default_value_t = 4)]
    pub route_length: usize,
    /// Distance between candidate points along an edge, meters.
    #[arg(long, default_value_t = 30.0)]
    pub spacing: f64,
    #[arg(long, default_value_t = 2)]
    pub select_min: usize,
    #[arg(long, default_value_t = 6)]
    pub select_max: usize,
    /// Noise standard deviation per axis, meters.
    #[arg(long, default_value_t = 15.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Allow routes that reverse along the same street.
    #[arg(long)]
    pub allow_uturn: bool,
    /// Irregular sampling and heavier-tailed noise.
    #[arg(long)]
    pub pseudo_real: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Desk,
    Full,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub ffn: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub max_len: Option<usize>,
}

impl ModelArgs {
    pub fn config(&self) -> ModelConfig {
        let mut c = match self.preset {
            Preset::Desk => ModelConfig::desk(2),
            Preset::Full => ModelConfig::full(2),
        };
        c.d_model = self.d_model.unwrap_or(c.d_model);
        c.n_heads = self.heads.unwrap_or(c.n_heads);
        c.n_layers = self.layers.unwrap_or(c.n_layers);
        c.d_ffn = self.ffn.unwrap_or(c.d_ffn);
        c.dropout = self.dropout.unwrap_or(c.dropout);
        c.max_len = self.max_len.unwrap_or(c.max_len);
        c
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 7e-4)]
    pub lr: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    #[arg(long, default_value_t = 1.0)]
    pub clip: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl TrainArgs {
    pub fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            seed,
            clip_norm: (self.clip > 0.0).then_some(self.clip),
        }
    }
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-step loss CSV; defaults to `<out>.loss.csv`.
    #[arg(long)]
    pub loss_log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Components to train: `full` or `+`-joined names from
    /// output, norm, encoder, decoder, embedding.
    #[arg(long, conflicts_with = "sweep")]
    pub mask: Option<String>,
    /// Fine-tune once per standard mask and write a comparison CSV.
    #[arg(long, requires = "eval")]
    pub sweep: bool,
    /// Labeled trajectories scored after each sweep run.
    #[arg(long)]
    pub eval: Option<PathBuf>,
    /// Use only the first `count` trajectories of the corpus.
    #[arg(long)]
    pub count: Option<usize>,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Checkpoint path, or the CSV path with `--sweep`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EngineKind {
    Hmm,
    Transformer,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    #[arg(long, value_enum)]
    pub engine: EngineKind,
    /// Required for the transformer engine.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Include per-point edge probabilities (transformer only).
    #[arg(long)]
    pub probs: bool,
    #[arg(long, default_value_t = HmmConfig::default().sigma_emission_m)]
    pub hmm_sigma: f64,
    #[arg(long, default_value_t = HmmConfig::default().beta_transition)]
    pub hmm_beta: f64,
    #[arg(long, default_value_t = HmmConfig::default().k_candidates)]
    pub hmm_k: usize,
    #[arg(long, default_value_t = HmmConfig::default().radius_m)]
    pub hmm_radius: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Row label in the output CSV.
    #[arg(long, default_value = "model")]
    pub name: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AttnArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Trajectory to export; defaults to the first in the corpus.
    #[arg(long)]
    pub traj_id: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Overrides the manifest's output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::GenNet(a) => gen_net(&a),
        Command::GenTraj(a) => gen_traj(&a),
        Command::Pretrain(a) => pretrain(&a),
        Command::Finetune(a) => finetune(&a),
        Command::Match(a) => match_cmd(&a),
        Command::Eval(a) => eval(&a),
        Command::Attn(a) => attn(&a),
        Command::Experiment(a) => experiment(&a),
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<serde_json::Value, HarnessError> {
    serde_json::to_value(v).map_err(|e| HarnessError::Internal(e.to_string()))
}

pub fn gen_net(a: &GenNetArgs) -> Result<(), HarnessError> {
    let net = make_grid_network(a.rows, a.cols, a.spacing).map_err(|e| HarnessError::Usage(e.to_string()))?;
    ensure_parent(&a.out)?;
    net.save(&a.out)?;
    let mut m = RunManifest::new(
        "gen-net",
        json!({"rows": a.rows, "cols": a.cols, "spacing_m": a.spacing, "edges": net.edge_count()}),
    );
    m.output(&a.out)?;
    m.write_beside(&a.out)?;
    Ok(())
}

pub fn gen_traj(a: &GenTrajArgs) -> Result<(), HarnessError> {
    let net = read_network(&a.net)?;
    let cfg = GenerationConfig {
        route_length: a.route_length,
        spacing_m: a.spacing,
        select_range: (a.select_min, a.select_max),
        sigma_m: a.sigma,
        seed: a.seed,
        exclude_uturn: !a.allow_uturn,
        route_cap: DEFAULT_ROUTE_CAP,
    };
    let corpus = if a.pseudo_real {
        generate_pseudo_real(&net, &cfg, a.count)?
    } else {
        generate_corpus(&net, &cfg, a.count)?
    };
    write_trajectories(&a.out, &corpus)?;
    let mut m = RunManifest::new(
        "gen-traj",
        json!({"generation": to_json(&cfg)?, "count": a.count, "pseudo_real": a.pseudo_real}),
    );
    m.input(&a.net)?;
    m.output(&a.out)?;
    m.write_beside(&a.out)?;
    Ok(())
}

fn non_empty<T>(corpus: &[T], path: &Path) -> Result<(), HarnessError> {
    if corpus.is_empty() {
        Err(HarnessError::Usage(format!("corpus {} is empty", path.display())))
    } else {
        Ok(())
    }
}

pub fn pretrain(a: &PretrainArgs) -> Result<(), HarnessError> {
    let net = read_network(&a.net)?;
    let corpus = read_trajectories(&a.corpus)?;
    non_empty(&corpus, &a.corpus)?;
    let mut model = init_model(&net, a.model.config(), a.train.seed)?;
    let cfg = a.train.config(a.train.seed);
    let log = train_model(&mut model, &net, &corpus, &ComponentMask::full(), &cfg)?;
    save_model(&a.out, &model)?;
    let loss_path = a.loss_log.clone().unwrap_or_else(|| suffixed(&a.out, ".loss.csv"));
    write_loss_log(&loss_path, &log)?;
    let mut m = RunManifest::new(
        "pretrain",
        json!({"model": to_json(model.config())?, "train": to_json(&cfg)?}),
    );
    m.input(&a.net)?;
    m.input(&a.corpus)?;
    m.output(&a.out)?;
    m.output(&loss_path)?;
    m.write_beside(&a.out)?;
    Ok(())
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn parse_mask(s: &str) -> Result<ComponentMask, HarnessError> {
    ComponentMask::parse(s).map_err(|e| HarnessError::Usage(format!("mask {s:?}: {e}")))
}

pub fn finetune(a: &FinetuneArgs) -> Result<(), HarnessError> {
    let net = read_network(&a.net)?;
    let base = load_checkpoint(&a.checkpoint)?;
    let mut corpus = read_trajectories(&a.corpus)?;
    if let Some(n) = a.count {
        corpus.truncate(n);
    }
    non_empty(&corpus, &a.corpus)?;
    let cfg = a.train.config(a.train.seed);
    let mut m = RunManifest::new("finetune", json!({"train": to_json(&cfg)?, "count": corpus.len()}));
    m.input(&a.checkpoint)?;
    m.input(&a.net)?;
    m.input(&a.corpus)?;

    if a.sweep {
        let eval_path = a
            .eval
            .as_ref()
            .ok_or_else(|| HarnessError::Usage("--sweep needs --eval".into()))?;
        let eval_set = read_trajectories(eval_path)?;
        non_empty(&eval_set, eval_path)?;
        m.input(eval_path)?;
        let mut rows = Vec::new();
        for mask in ComponentMask::sweep() {
            let mut model = base.clone();
            train_model(&mut model, &net, &corpus, &mask, &cfg)?;
            let routes = Engine::Transformer(&model).routes(&net, &eval_set)?;
            rows.push(TableRow::new(mask.label(), &score_routes(routes, &eval_set)?));
        }
        write_table(&a.out, &rows)?;
        m.config["masks"] = json!(ComponentMask::sweep()
            .iter()
            .map(ComponentMask::label)
            .collect::<Vec<_>>());
    } else {
        let mask = parse_mask(a.mask.as_deref().unwrap_or("full"))?;
        let mut model = base;
        let log = train_model(&mut model, &net, &corpus, &mask, &cfg)?;
        save_model(&a.out, &model)?;
        let loss_path = suffixed(&a.out, ".loss.csv");
        write_loss_log(&loss_path, &log)?;
        m.config["mask"] = json!(mask.label());
        m.output(&loss_path)?;
    }
    m.output(&a.out)?;
    m.write_beside(&a.out)?;
    Ok(())
}

pub fn match_cmd(a: &MatchArgs) -> Result<(), HarnessError> {
    let net = read_network(&a.net)?;
    let trajs = read_trajectories(&a.input)?;
    let mut m;
    let lines = match a.engine {
        EngineKind::Hmm => {
            if a.probs {
                return Err(HarnessError::Usage("--probs requires --engine transformer".into()));
            }
            let cfg = HmmConfig {
                sigma_emission_m: a.hmm_sigma,
                beta_transition: a.hmm_beta,
                k_candidates: a.hmm_k,
                radius_m: a.hmm_radius,
            };
            cfg.validate()?;
            m = RunManifest::new("match", json!({"engine": "hmm", "hmm": to_json(&cfg)?}));
            Engine::Hmm(cfg).predictions(&net, &trajs, false)?
        }
        EngineKind::Transformer => {
            let path = a
                .checkpoint
                .as_ref()
                .ok_or_else(|| HarnessError::Usage("--engine transformer needs --checkpoint".into()))?;
            let model = load_checkpoint(path)?;
            m = RunManifest::new("match", json!({"engine": "transformer", "probs": a.probs}));
            m.input(path)?;
            Engine::Transformer(&model).predictions(&net, &trajs, a.probs)?
        }
    };
    write_predictions(&a.out, &lines)?;
    m.input(&a.net)?;
    m.input(&a.input)?;
    m.output(&a.out)?;
    m.write_beside(&a.out)?;
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<(), HarnessError> {
    let preds = read_predictions(&a.predictions)?;
    let truth = read_trajectories(&a.truth)?;
    let report = score_predictions(&preds, &truth)?;
    write_table(&a.out, &[TableRow::new(a.name.clone(), &report)])?;
    let mut m = RunManifest::new("eval", json!({"name": a.name}));
    m.input(&a.predictions)?;
    m.input(&a.truth)?;
    m.output(&a.out)?;
    m.write_beside(&a.out)?;
    Ok(())
}

pub fn attn(a: &AttnArgs) -> Result<(), HarnessError> {
    let net = read_network(&a.net)?;
    let model = load_checkpoint(&a.checkpoint)?;
    let corpus = read_trajectories(&a.corpus)?;
    let traj = match &a.traj_id {
        Some(id) => corpus
            .iter()
            .find(|t| &t.traj_id == id)
            .ok_or_else(|| HarnessError::Usage(format!("no trajectory {id} in {}", a.corpus.display())))?,
        None => corpus
            .first()
            .ok_or_else(|| HarnessError::Usage("corpus is empty".into()))?,
    };
    let (_, files) = export_attention(&model, &net, traj, &a.out)?;
    let mut m = RunManifest::new("attn", json!({"traj_id": traj.traj_id}));
    m.input(&a.checkpoint)?;
    m.input(&a.net)?;
    m.input(&a.corpus)?;
    for f in &files {
        m.output(f)?;
    }
    m.write_to(&a.out.join("attn.manifest.json"))?;
    Ok(())
}

pub fn experiment(a: &ExperimentArgs) -> Result<(), HarnessError> {
    let manifest = ExperimentManifest::load(&a.manifest)?;
    let outcome = run_experiment(&manifest, a.out.as_deref(), &mut |line| {
        eprintln!("[experiment] {line}")
    })?;
    println!("{}", outcome.run_manifest.display());
    Ok(())
}
