//! Prediction and attention-range analysis.

use ndarray::Array2;
use trajmatch_core::roadnet::GeoBounds;
use trajmatch_core::{GpsTrajectory, PointRoute};

use crate::input::{normalize, NormalizedTrajectory};
use crate::network::{forward, forward_batch, softmax_rows, AttentionRecord, Stage};
use crate::params::Transformer;
use crate::ModelError;

pub use trajmatch_core::SegmentRoute;

#[derive(Debug, Clone)]
pub struct Prediction {
    pub route: PointRoute,
    /// Softmax over all classes for each point; column `c` is edge `c - 1`.
    pub probs: Array2<f64>,
    pub records: Vec<AttentionRecord>,
}

/// Edge id per row: argmax over classes 1.., padding excluded.
fn decode(logits: &Array2<f64>) -> PointRoute {
    PointRoute(
        logits
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 1;
                for c in 2..row.len() {
                    if row[c] > row[best] {
                        best = c;
                    }
                }
                best - 1
            })
            .collect(),
    )
}

/// Matches one trajectory and keeps probabilities and attention weights.
pub fn predict(model: &Transformer, traj: &GpsTrajectory, bounds: &GeoBounds) -> Result<Prediction, ModelError> {
    let input = normalize(traj, bounds)?;
    let out = forward(model, &input, true)?;
    Ok(Prediction {
        route: decode(&out.logits),
        probs: softmax_rows(&out.logits),
        records: out.records,
    })
}

/// Matches many trajectories, `batch` at a time, without capture.
pub fn predict_routes(
    model: &Transformer,
    trajs: &[GpsTrajectory],
    bounds: &GeoBounds,
    batch: usize,
) -> Result<Vec<PointRoute>, ModelError> {
    let inputs: Vec<NormalizedTrajectory> = trajs.iter().map(|t| normalize(t, bounds)).collect::<Result<_, _>>()?;
    let mut out = Vec::with_capacity(trajs.len());
    for chunk in inputs.chunks(batch.max(1)) {
        let refs: Vec<&NormalizedTrajectory> = chunk.iter().collect();
        out.extend(forward_batch(model, &refs)?.iter().map(decode));
    }
    Ok(out)
}

/// Order-preserving removal of consecutive duplicates.
pub fn collapse(route: &PointRoute) -> SegmentRoute {
    route.collapse()
}

/// Weights at or above the threshold within this distance count as above.
const BOUNDARY_TOLERANCE: f64 = 1e-12;

/// Threshold intervals derived from cross-attention.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRanges {
    /// Natural log of the cross-attention weights averaged over heads and layers.
    pub log_weights: Array2<f64>,
    /// Mean of the mean and the median of all log weights.
    pub threshold: f64,
    /// Inclusive `(first, last)` input index per output position.
    pub intervals: Vec<(usize, usize)>,
}

/// For each output position, the smallest contiguous input interval that
/// covers every key whose log weight reaches the threshold.
pub fn attention_ranges(records: &[AttentionRecord]) -> Result<AttentionRanges, ModelError> {
    let cross: Vec<&AttentionRecord> = records.iter().filter(|r| r.stage == Stage::DecoderCross).collect();
    let first = cross.first().ok_or(ModelError::NoCapture)?;
    let mut avg = Array2::<f64>::zeros(first.weights.raw_dim());
    for r in &cross {
        if r.weights.raw_dim() != avg.raw_dim() {
            return Err(ModelError::ShapeMismatch("attention records differ in shape".into()));
        }
        avg += &r.weights;
    }
    avg /= cross.len() as f64;
    let log_weights = avg.mapv(|w| w.max(f64::MIN_POSITIVE).ln());

    let mut all: Vec<f64> = log_weights.iter().copied().collect();
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    all.sort_by(f64::total_cmp);
    let mid = all.len() / 2;
    let median = if all.len() % 2 == 1 {
        all[mid]
    } else {
        (all[mid - 1] + all[mid]) / 2.0
    };
    let threshold = (mean + median) / 2.0;

    let intervals = log_weights
        .rows()
        .into_iter()
        .map(|row| {
            let above: Vec<usize> = (0..row.len())
                .filter(|&j| row[j] >= threshold - BOUNDARY_TOLERANCE)
                .collect();
            match (above.first(), above.last()) {
                (Some(&a), Some(&b)) => (a, b),
                _ => {
                    let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
                    (best, best)
                }
            }
        })
        .collect();
    Ok(AttentionRanges {
        log_weights,
        threshold,
        intervals,
    })
}
