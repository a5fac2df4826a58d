//! Building blocks shared by the CLI commands and the experiment driver.

use std::collections::{HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use trajmatch_core::baseline::{viterbi_match, HmmConfig, HmmError};
use trajmatch_core::metrics::{evaluate_corpus, MetricReport};
use trajmatch_core::roadnet::load_network;
use trajmatch_core::seed::{derive_named, rng};
use trajmatch_core::trajgen::{read_corpus, write_corpus};
use trajmatch_core::{GpsTrajectory, PointRoute, RoadNetwork};
use trajmatch_model::TrainLog;
use trajmatch_model::{
    attention_ranges, examples, fine_tune, predict, predict_routes, save_checkpoint, AttentionRanges, ComponentMask,
    ModelConfig, TrainConfig, Transformer,
};

use crate::error::HarnessError;

/// Cross-attention threshold reported for the reference study, kept next to
/// our own value in attention reports.
pub const REFERENCE_THRESHOLD: f64 = -3.15;

/// Times the HMM search radius is doubled when a point has no candidate.
const RADIUS_RETRIES: usize = 4;

/// Trajectories scored per forward pass during evaluation.
pub const EVAL_BATCH: usize = 64;

pub fn read_network(path: &Path) -> Result<RoadNetwork, HarnessError> {
    Ok(load_network(path)?)
}

pub fn read_trajectories(path: &Path) -> Result<Vec<GpsTrajectory>, HarnessError> {
    Ok(read_corpus(path)?)
}

pub fn write_trajectories(path: &Path, corpus: &[GpsTrajectory]) -> Result<(), HarnessError> {
    ensure_parent(path)?;
    Ok(write_corpus(path, corpus)?)
}

pub fn ensure_parent(path: &Path) -> Result<(), HarnessError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e)),
        _ => Ok(()),
    }
}

/// Fresh model sized for `net`, initialized from the `init` stream of `seed`.
pub fn init_model(net: &RoadNetwork, mut config: ModelConfig, seed: u64) -> Result<Transformer, HarnessError> {
    config.n_classes = net.edge_count() + 1;
    Ok(Transformer::init(config, &mut rng(derive_named(seed, "init")))?)
}

/// Trains `model` on `corpus` with `mask` and rounds the weights to the
/// precision stored in checkpoints, so an in-memory model and its reloaded
/// file behave identically.
pub fn train_model(
    model: &mut Transformer,
    net: &RoadNetwork,
    corpus: &[GpsTrajectory],
    mask: &ComponentMask,
    cfg: &TrainConfig,
) -> Result<TrainLog, HarnessError> {
    let data = examples(corpus, &net.bounds())?;
    let log = fine_tune(model, &data, mask, cfg)?;
    model.round_to_f32();
    Ok(log)
}

pub fn save_model(path: &Path, model: &Transformer) -> Result<(), HarnessError> {
    ensure_parent(path)?;
    Ok(save_checkpoint(model, path)?)
}

pub fn write_loss_log(path: &Path, log: &TrainLog) -> Result<(), HarnessError> {
    ensure_parent(path)?;
    let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let mut w = BufWriter::new(file);
    log.write_csv(&mut w).map_err(|e| HarnessError::io(path, e))?;
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Viterbi matching that widens the search radius when some point has no
/// candidate edge, so every trajectory receives a route.
pub fn hmm_match(traj: &GpsTrajectory, net: &RoadNetwork, cfg: &HmmConfig) -> Result<PointRoute, HmmError> {
    let mut cfg = *cfg;
    for _ in 0..RADIUS_RETRIES {
        match viterbi_match(traj, net, &cfg) {
            Err(HmmError::NoCandidates { .. }) => cfg.radius_m *= 2.0,
            other => return other,
        }
    }
    viterbi_match(traj, net, &cfg)
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionLine {
    pub traj_id: String,
    pub route: Vec<usize>,
    /// Per point, the probability of each edge id in order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<Vec<f64>>>,
}

pub enum Engine<'a> {
    Hmm(HmmConfig),
    Transformer(&'a Transformer),
}

impl Engine<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Engine::Hmm(_) => "hmm",
            Engine::Transformer(_) => "transformer",
        }
    }

    pub fn routes(&self, net: &RoadNetwork, trajs: &[GpsTrajectory]) -> Result<Vec<PointRoute>, HarnessError> {
        match self {
            Engine::Hmm(cfg) => Ok(trajs.iter().map(|t| hmm_match(t, net, cfg)).collect::<Result<_, _>>()?),
            Engine::Transformer(model) => Ok(predict_routes(model, trajs, &net.bounds(), EVAL_BATCH)?),
        }
    }

    /// Prediction lines for `trajs`; `with_probs` needs the transformer.
    pub fn predictions(
        &self,
        net: &RoadNetwork,
        trajs: &[GpsTrajectory],
        with_probs: bool,
    ) -> Result<Vec<PredictionLine>, HarnessError> {
        if !with_probs {
            let routes = self.routes(net, trajs)?;
            return Ok(trajs
                .iter()
                .zip(routes)
                .map(|(t, r)| PredictionLine {
                    traj_id: t.traj_id.clone(),
                    route: r.0,
                    probs: None,
                })
                .collect());
        }
        let Engine::Transformer(model) = self else {
            return Err(HarnessError::Usage("--probs requires the transformer engine".into()));
        };
        let bounds = net.bounds();
        trajs
            .iter()
            .map(|t| {
                let p = predict(model, t, &bounds)?;
                let probs = p
                    .probs
                    .rows()
                    .into_iter()
                    .map(|row| row.iter().skip(1).copied().collect())
                    .collect();
                Ok(PredictionLine {
                    traj_id: t.traj_id.clone(),
                    route: p.route.0,
                    probs: Some(probs),
                })
            })
            .collect()
    }
}

pub fn write_predictions(path: &Path, lines: &[PredictionLine]) -> Result<(), HarnessError> {
    ensure_parent(path)?;
    let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for line in lines {
        serde_json::to_writer(&mut w, line).map_err(|e| HarnessError::json(path, e))?;
        w.write_all(b"\n").map_err(|e| HarnessError::io(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionLine>, HarnessError> {
    let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| HarnessError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| HarnessError::json(path, e))?);
    }
    Ok(out)
}

/// Scores routes given in the same order as `truth`.
pub fn score_routes(routes: Vec<PointRoute>, truth: &[GpsTrajectory]) -> Result<MetricReport, HarnessError> {
    let pairs = routes
        .into_iter()
        .zip(truth)
        .map(|(r, t)| {
            let labels = t
                .truth
                .clone()
                .ok_or_else(|| HarnessError::MissingTruth(t.traj_id.clone()))?;
            Ok((r, labels))
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok(evaluate_corpus(&pairs)?)
}

/// Joins predictions to truth by trajectory id and scores them in truth order.
pub fn score_predictions(preds: &[PredictionLine], truth: &[GpsTrajectory]) -> Result<MetricReport, HarnessError> {
    let mut by_id: HashMap<&str, &PredictionLine> = HashMap::with_capacity(preds.len());
    for p in preds {
        if by_id.insert(p.traj_id.as_str(), p).is_some() {
            return Err(HarnessError::DuplicateId(p.traj_id.clone()));
        }
    }
    let mut truth_ids = HashSet::with_capacity(truth.len());
    for t in truth {
        if !truth_ids.insert(t.traj_id.as_str()) {
            return Err(HarnessError::DuplicateId(t.traj_id.clone()));
        }
    }
    let missing_predictions: Vec<String> = truth
        .iter()
        .filter(|t| !by_id.contains_key(t.traj_id.as_str()))
        .map(|t| t.traj_id.clone())
        .collect();
    let missing_truth: Vec<String> = preds
        .iter()
        .filter(|p| !truth_ids.contains(p.traj_id.as_str()))
        .map(|p| p.traj_id.clone())
        .collect();
    if !missing_predictions.is_empty() || !missing_truth.is_empty() {
        return Err(HarnessError::Join {
            missing_predictions,
            missing_truth,
        });
    }
    let routes = truth
        .iter()
        .map(|t| PointRoute(by_id[t.traj_id.as_str()].route.clone()))
        .collect();
    score_routes(routes, truth)
}

/// One row of a results table: both levels for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub model: String,
    pub ahd_point: f64,
    pub f_point: f64,
    pub bleu_point: f64,
    pub ahd_segment: f64,
    pub f_segment: f64,
    pub bleu_segment: f64,
    pub n_traj: usize,
}

impl TableRow {
    pub fn new(model: impl Into<String>, r: &MetricReport) -> Self {
        Self {
            model: model.into(),
            ahd_point: r.ahd_point,
            f_point: r.f_point,
            bleu_point: r.bleu_point,
            ahd_segment: r.ahd_segment,
            f_segment: r.f_segment,
            bleu_segment: r.bleu_segment,
            n_traj: r.n_trajectories,
        }
    }
}

pub fn write_table(path: &Path, rows: &[TableRow]) -> Result<(), HarnessError> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn read_table(path: &Path) -> Result<Vec<TableRow>, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

/// Writes one CSV per attention head plus the averaged cross-attention log
/// weights and the threshold-range report into `dir`.
pub fn export_attention(
    model: &Transformer,
    net: &RoadNetwork,
    traj: &GpsTrajectory,
    dir: &Path,
) -> Result<(AttentionRanges, Vec<PathBuf>), HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let pred = predict(model, traj, &net.bounds())?;
    let mut files = Vec::new();
    for rec in &pred.records {
        let path = dir.join(format!(
            "{}_layer{}_head{}.csv",
            rec.stage.as_str(),
            rec.layer,
            rec.head
        ));
        write_matrix(&path, rec.weights.rows().into_iter().map(|r| r.to_vec()))?;
        files.push(path);
    }
    let ranges = attention_ranges(&pred.records)?;
    let path = dir.join("cross_log_weights.csv");
    write_matrix(&path, ranges.log_weights.rows().into_iter().map(|r| r.to_vec()))?;
    files.push(path);

    let path = dir.join("ranges.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["position", "predicted_edge", "first", "last"])?;
    for (i, &(a, b)) in ranges.intervals.iter().enumerate() {
        w.write_record([i.to_string(), pred.route.0[i].to_string(), a.to_string(), b.to_string()])?;
    }
    w.flush().map_err(|e| HarnessError::io(&path, e))?;
    files.push(path);

    let report = serde_json::json!({
        "traj_id": traj.traj_id,
        "threshold": ranges.threshold,
        "reference_threshold": REFERENCE_THRESHOLD,
        "intervals": ranges.intervals,
    });
    let path = dir.join("ranges.json");
    let text = serde_json::to_string_pretty(&report).map_err(|e| HarnessError::json(&path, e))?;
    fs::write(&path, text + "\n").map_err(|e| HarnessError::io(&path, e))?;
    files.push(path);
    Ok((ranges, files))
}

fn write_matrix(path: &Path, rows: impl Iterator<Item = Vec<f64>>) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for row in rows {
        w.write_record(row.iter().map(|x| x.to_string()))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}
