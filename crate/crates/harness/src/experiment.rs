//! Manifest-driven pipeline: generate, split, pre-train, fine-tune, match,
//! evaluate and export attention in one reproducible run.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use trajmatch_core::baseline::HmmConfig;
use trajmatch_core::roadnet::make_grid_network;
use trajmatch_core::seed::derive_named;
use trajmatch_core::trajgen::{generate_corpus, generate_pseudo_real, GenerationConfig, DEFAULT_ROUTE_CAP};
use trajmatch_core::{GpsTrajectory, RoadNetwork};
use trajmatch_model::{AdamConfig, ComponentMask, ModelConfig, TrainConfig, Transformer};

use crate::error::HarnessError;
use crate::manifest::{verify_hash, FileRecord, RunManifest};
use crate::pipeline::{
    export_attention, init_model, read_network, save_model, score_routes, train_model, write_loss_log,
    write_predictions, write_table, write_trajectories, Engine, TableRow,
};
use crate::split::SplitSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NetworkSource {
    Grid { rows: usize, cols: usize, spacing_m: f64 },
    File { path: PathBuf, sha256: Option<String> },
}

impl Default for NetworkSource {
    fn default() -> Self {
        NetworkSource::Grid {
            rows: 5,
            cols: 5,
            spacing_m: 200.0,
        }
    }
}

/// Route and sampling settings shared by every generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RouteSpec {
    pub route_length: usize,
    pub spacing_m: f64,
    pub select_range: (usize, usize),
    pub exclude_uturn: bool,
}

impl Default for RouteSpec {
    fn default() -> Self {
        let g = GenerationConfig::default();
        Self {
            route_length: g.route_length,
            spacing_m: g.spacing_m,
            select_range: g.select_range,
            exclude_uturn: g.exclude_uturn,
        }
    }
}

impl RouteSpec {
    pub fn generation(&self, sigma_m: f64, seed: u64) -> GenerationConfig {
        GenerationConfig {
            route_length: self.route_length,
            spacing_m: self.spacing_m,
            select_range: self.select_range,
            sigma_m,
            seed,
            exclude_uturn: self.exclude_uturn,
            route_cap: DEFAULT_ROUTE_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PseudoRealSpec {
    pub count: usize,
    pub sigma_m: f64,
}

impl Default for PseudoRealSpec {
    fn default() -> Self {
        Self {
            count: 1331,
            sigma_m: 15.0,
        }
    }
}

/// Model size; the class count follows from the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ffn: usize,
    pub dropout: f64,
    pub max_len: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        let d = ModelConfig::desk(2);
        Self {
            d_model: d.d_model,
            n_heads: d.n_heads,
            n_layers: d.n_layers,
            d_ffn: d.d_ffn,
            dropout: d.dropout,
            max_len: d.max_len,
        }
    }
}

impl ModelSpec {
    pub fn config(&self, net: &RoadNetwork) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_layers: self.n_layers,
            d_ffn: self.d_ffn,
            n_classes: net.edge_count() + 1,
            dropout: self.dropout,
            max_len: self.max_len,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: Option<f64>,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            lr: AdamConfig::default().lr,
            clip_norm: Some(1.0),
        }
    }
}

impl Schedule {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            seed,
            clip_norm: self.clip_norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSpec {
    /// Noise level of the pre-trained model that gets fine-tuned.
    pub base_sigma: f64,
    /// Use only the first `count` trajectories of the pseudo-real training split.
    pub count: Option<usize>,
    pub masks: Vec<String>,
    pub schedule: Schedule,
}

/// Step size for fine-tuning; the pre-training rate overshoots on small sets.
pub const FINETUNE_LR: f64 = 1e-4;

impl Default for FinetuneSpec {
    fn default() -> Self {
        Self {
            base_sigma: 100.0,
            count: None,
            masks: ComponentMask::sweep().iter().map(ComponentMask::label).collect(),
            schedule: Schedule {
                lr: FINETUNE_LR,
                ..Schedule::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentManifest {
    pub seed: u64,
    pub network: NetworkSource,
    pub routes: RouteSpec,
    /// Trajectories generated per noise level, before the split.
    pub synthetic_count: usize,
    /// Noise levels of the pre-trained models compared on pseudo-real data.
    pub noise_levels: Vec<f64>,
    /// Noise level of the model compared against the HMM.
    pub matched_sigma: f64,
    pub pseudo_real: PseudoRealSpec,
    pub model: ModelSpec,
    pub pretrain: Schedule,
    pub finetune: FinetuneSpec,
    pub train_fraction: f64,
    pub hmm: HmmConfig,
    /// Pseudo-real test trajectories whose attention is exported.
    pub attn_samples: usize,
    pub output_dir: PathBuf,
}

impl Default for ExperimentManifest {
    fn default() -> Self {
        Self {
            seed: 2024,
            network: NetworkSource::default(),
            routes: RouteSpec::default(),
            synthetic_count: 8000,
            noise_levels: vec![0.0, 15.0, 30.0, 60.0, 100.0],
            matched_sigma: 15.0,
            pseudo_real: PseudoRealSpec::default(),
            model: ModelSpec::default(),
            pretrain: Schedule::default(),
            finetune: FinetuneSpec::default(),
            train_fraction: 0.7,
            hmm: HmmConfig::default(),
            attn_samples: 3,
            output_dir: PathBuf::from("experiment_out"),
        }
    }
}

impl ExperimentManifest {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn masks(&self) -> Result<Vec<ComponentMask>, HarnessError> {
        self.finetune
            .masks
            .iter()
            .map(|m| ComponentMask::parse(m).map_err(|e| HarnessError::Usage(format!("mask {m:?}: {e}"))))
            .collect()
    }

    /// Every noise level that needs a pre-trained model, sorted and deduplicated.
    pub fn model_sigmas(&self) -> Vec<f64> {
        let mut all = self.noise_levels.clone();
        all.push(self.matched_sigma);
        all.push(self.finetune.base_sigma);
        all.sort_by(f64::total_cmp);
        all.dedup();
        all
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.split().validate()?;
        self.masks()?;
        self.hmm.validate()?;
        if self.synthetic_count < 2 || self.pseudo_real.count < 2 {
            return Err(HarnessError::Usage(
                "corpora need at least two trajectories to split".into(),
            ));
        }
        if self.model_sigmas().iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(HarnessError::Usage(
                "noise levels must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    fn split(&self) -> SplitSpec {
        SplitSpec {
            train_fraction: self.train_fraction,
            seed: derive_named(self.seed, "split"),
        }
    }
}

pub fn sigma_label(sigma: f64) -> String {
    format!("sigma_{sigma}m")
}

/// Results of a finished experiment.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub output_dir: PathBuf,
    /// Matched-noise transformer and HMM on synthetic and pseudo-real test data.
    pub matched: Vec<TableRow>,
    /// One row per noise level, on the pseudo-real test split.
    pub noise: Vec<TableRow>,
    /// Un-tuned base model followed by one row per fine-tuning mask.
    pub finetune: Vec<TableRow>,
    pub run_manifest: PathBuf,
}

pub const MATCHED_TABLE: &str = "tables/matched.csv";
pub const NOISE_TABLE: &str = "tables/noise.csv";
pub const FINETUNE_TABLE: &str = "tables/finetune.csv";

pub fn checkpoint_path(dir: &Path, name: &str) -> PathBuf {
    dir.join("checkpoints").join(format!("{name}.ckpt"))
}

/// Runs every stage in order, writing artifacts under `out` (or the
/// manifest's `output_dir`). `progress` receives one line per stage.
pub fn run_experiment(
    manifest: &ExperimentManifest,
    out: Option<&Path>,
    progress: &mut dyn FnMut(&str),
) -> Result<ExperimentOutcome, HarnessError> {
    manifest.validate()?;
    let dir = out.unwrap_or(&manifest.output_dir).to_path_buf();
    fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
    let seed = manifest.seed;
    let mut outputs: Vec<PathBuf> = Vec::new();
    let mut inputs: Vec<FileRecord> = Vec::new();

    let net = match &manifest.network {
        NetworkSource::Grid { rows, cols, spacing_m } => {
            make_grid_network(*rows, *cols, *spacing_m).map_err(|e| HarnessError::Usage(e.to_string()))?
        }
        NetworkSource::File { path, sha256 } => {
            if let Some(h) = sha256 {
                verify_hash(path, h)?;
            }
            inputs.push(FileRecord::of(path, None)?);
            read_network(path)?
        }
    };
    let net_path = dir.join("network.json");
    net.save(&net_path)?;
    outputs.push(net_path);
    progress(&format!("network: {} edges", net.edge_count()));

    let split = manifest.split();
    let synth_seed = derive_named(seed, "synthetic");
    let mut synthetic: Vec<(f64, Vec<GpsTrajectory>, Vec<GpsTrajectory>)> = Vec::new();
    for sigma in manifest.model_sigmas() {
        let corpus = generate_corpus(
            &net,
            &manifest.routes.generation(sigma, synth_seed),
            manifest.synthetic_count,
        )?;
        let (train, test) = split.apply(&corpus)?;
        for (part, data) in [("train", &train), ("test", &test)] {
            let p = dir
                .join("corpora")
                .join(format!("synthetic_{}_{part}.jsonl", sigma_label(sigma)));
            write_trajectories(&p, data)?;
            outputs.push(p);
        }
        synthetic.push((sigma, train, test));
    }
    let pseudo_cfg = manifest
        .routes
        .generation(manifest.pseudo_real.sigma_m, derive_named(seed, "pseudo_real"));
    let pseudo = generate_pseudo_real(&net, &pseudo_cfg, manifest.pseudo_real.count)?;
    let (pseudo_train, pseudo_test) = split.apply(&pseudo)?;
    for (part, data) in [("train", &pseudo_train), ("test", &pseudo_test)] {
        let p = dir.join("corpora").join(format!("pseudo_real_{part}.jsonl"));
        write_trajectories(&p, data)?;
        outputs.push(p);
    }
    progress(&format!(
        "corpora: {} synthetic per level, pseudo-real {}/{}",
        manifest.synthetic_count,
        pseudo_train.len(),
        pseudo_test.len()
    ));

    let model_cfg = manifest.model.config(&net);
    let mut models: Vec<(f64, Transformer)> = Vec::new();
    for (sigma, train, _) in &synthetic {
        let label = sigma_label(*sigma);
        let stage = format!("pretrain/{label}");
        let mut model = init_model(&net, model_cfg.clone(), derive_named(seed, &stage))?;
        let cfg = manifest.pretrain.train_config(derive_named(seed, &stage));
        let log = train_model(&mut model, &net, train, &ComponentMask::full(), &cfg)?;
        let ckpt = checkpoint_path(&dir, &label);
        save_model(&ckpt, &model)?;
        let loss = dir.join("logs").join(format!("{label}_loss.csv"));
        write_loss_log(&loss, &log)?;
        outputs.extend([ckpt, loss]);
        let last = log.epoch_means().last().copied().unwrap_or(f64::NAN);
        progress(&format!("pretrained {label}: final epoch loss {last:.4}"));
        models.push((*sigma, model));
    }
    let model_at = |s: f64| -> &Transformer {
        &models
            .iter()
            .find(|(x, _)| *x == s)
            .expect("every needed level is trained")
            .1
    };

    let matched_model = model_at(manifest.matched_sigma);
    let matched_test = &synthetic
        .iter()
        .find(|(s, _, _)| *s == manifest.matched_sigma)
        .expect("matched level is generated")
        .2;
    let hmm = Engine::Hmm(manifest.hmm);
    let transformer = Engine::Transformer(matched_model);
    let mut matched = Vec::new();
    for (data_name, data) in [("synthetic", matched_test), ("pseudo_real", &pseudo_test)] {
        for engine in [&transformer, &hmm] {
            let preds = engine.predictions(&net, data, false)?;
            let p = dir
                .join("predictions")
                .join(format!("{}_{data_name}.jsonl", engine.name()));
            write_predictions(&p, &preds)?;
            outputs.push(p);
            let routes = preds.into_iter().map(|l| l.route.into()).collect();
            let report = score_routes(routes, data)?;
            matched.push(TableRow::new(format!("{}@{data_name}", engine.name()), &report));
        }
    }
    let p = dir.join(MATCHED_TABLE);
    write_table(&p, &matched)?;
    outputs.push(p);
    progress("matched-noise table written");

    let mut noise = Vec::new();
    for &sigma in &manifest.noise_levels {
        let routes = Engine::Transformer(model_at(sigma)).routes(&net, &pseudo_test)?;
        noise.push(TableRow::new(sigma_label(sigma), &score_routes(routes, &pseudo_test)?));
    }
    let p = dir.join(NOISE_TABLE);
    write_table(&p, &noise)?;
    outputs.push(p);
    progress("noise table written");

    let base = model_at(manifest.finetune.base_sigma);
    let tune_set = match manifest.finetune.count {
        Some(n) => &pseudo_train[..n.min(pseudo_train.len())],
        None => &pseudo_train[..],
    };
    let routes = Engine::Transformer(base).routes(&net, &pseudo_test)?;
    let mut finetune = vec![TableRow::new("origin", &score_routes(routes, &pseudo_test)?)];
    for mask in manifest.masks()? {
        let label = mask.label();
        let stage = format!("finetune/{label}");
        let mut model = base.clone();
        let cfg = manifest.finetune.schedule.train_config(derive_named(seed, &stage));
        let log = train_model(&mut model, &net, tune_set, &mask, &cfg)?;
        let name = format!("finetune_{}", label.replace('+', "_"));
        let ckpt = checkpoint_path(&dir, &name);
        save_model(&ckpt, &model)?;
        let loss = dir.join("logs").join(format!("{name}_loss.csv"));
        write_loss_log(&loss, &log)?;
        outputs.extend([ckpt, loss]);
        let routes = Engine::Transformer(&model).routes(&net, &pseudo_test)?;
        finetune.push(TableRow::new(label, &score_routes(routes, &pseudo_test)?));
    }
    let p = dir.join(FINETUNE_TABLE);
    write_table(&p, &finetune)?;
    outputs.push(p);
    progress("fine-tuning table written");

    for traj in pseudo_test.iter().take(manifest.attn_samples) {
        let (_, files) = export_attention(matched_model, &net, traj, &dir.join("attn").join(&traj.traj_id))?;
        outputs.extend(files);
    }

    let mut run = RunManifest::new(
        "experiment",
        serde_json::to_value(manifest).map_err(|e| HarnessError::Internal(e.to_string()))?,
    );
    run.inputs = inputs;
    for p in &outputs {
        run.outputs.push(FileRecord::of(p, Some(&dir))?);
    }
    let run_manifest = dir.join("run_manifest.json");
    run.write_to(&run_manifest)?;
    progress("done");

    Ok(ExperimentOutcome {
        output_dir: dir,
        matched,
        noise,
        finetune,
        run_manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_manifest_takes_defaults() {
        let m: ExperimentManifest = serde_json::from_str("{}").unwrap();
        assert_eq!(m, ExperimentManifest::default());
        assert_eq!(m.masks().unwrap().len(), 6);
        assert_eq!(m.model_sigmas(), vec![0.0, 15.0, 30.0, 60.0, 100.0]);
    }

    #[test]
    fn rejects_unknown_fields_and_bad_masks() {
        assert!(serde_json::from_str::<ExperimentManifest>(r#"{"pretrain": {"epoch": 3}}"#).is_err());
        let m = ExperimentManifest {
            finetune: FinetuneSpec {
                masks: vec!["output+wings".into()],
                ..Default::default()
            },
            ..Default::default()
        };
        assert!(matches!(m.validate(), Err(HarnessError::Usage(_))));
    }

    #[test]
    fn labels() {
        assert_eq!(sigma_label(15.0), "sigma_15m");
        assert_eq!(sigma_label(7.5), "sigma_7.5m");
    }
}
