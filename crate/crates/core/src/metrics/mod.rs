//! Accuracy (AHD), macro F-score and BLEU at point and segment level.
//!
//! Point-level metrics compare routes position by position. Segment-level
//! metrics first collapse both routes and align them with Needleman-Wunsch,
//! then score the aligned columns.

mod align;

use std::collections::{BTreeSet, HashMap};
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use align::{needleman_wunsch, Alignment, Column, Scoring};

use crate::route::{PointRoute, SegmentRoute};

/// n-gram order used for evaluation.
pub const BLEU_ORDER: usize = 3;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("length mismatch: predicted {pred}, truth {truth}")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("reference of length {len} is shorter than n = {n}")]
    ReferenceTooShort { len: usize, n: usize },
    #[error("n-gram order must be >= 1")]
    InvalidOrder,
    #[error("cannot evaluate an empty corpus")]
    EmptyCorpus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Point,
    Segment,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Point => "point",
            Level::Segment => "segment",
        }
    }
}

/// Fraction of positions holding the same symbol.
pub fn ahd_point<T: PartialEq>(pred: &[T], truth: &[T]) -> Result<f64, MetricError> {
    if pred.len() != truth.len() {
        return Err(MetricError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    if truth.is_empty() {
        return Ok(1.0);
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Matched columns over alignment length.
pub fn ahd_segment<T: PartialEq + Clone>(pred: &[T], truth: &[T]) -> f64 {
    let al = needleman_wunsch(pred, truth, Scoring::default());
    if al.is_empty() {
        return 1.0;
    }
    al.matches() as f64 / al.len() as f64
}

/// Macro-averaged F1 over every class present in either sequence.
///
/// At point level true positives are positional matches; at segment level
/// they are matched columns of the alignment. Precision and recall use the
/// class's occurrence counts in `pred` and `truth` respectively.
pub fn f_score<T: Eq + Hash + Ord + Clone>(pred: &[T], truth: &[T], level: Level) -> Result<f64, MetricError> {
    let matched: Vec<T> = match level {
        Level::Point => {
            if pred.len() != truth.len() {
                return Err(MetricError::LengthMismatch {
                    pred: pred.len(),
                    truth: truth.len(),
                });
            }
            pred.iter()
                .zip(truth)
                .filter(|(a, b)| a == b)
                .map(|(a, _)| a.clone())
                .collect()
        }
        Level::Segment => needleman_wunsch(pred, truth, Scoring::default())
            .pairs
            .into_iter()
            .filter_map(|(a, b)| match (a, b) {
                (Some(a), Some(b)) if a == b => Some(a),
                _ => None,
            })
            .collect(),
    };
    Ok(macro_f1(pred, truth, &matched))
}

fn counts<T: Eq + Hash + Clone>(xs: &[T]) -> HashMap<T, usize> {
    let mut m = HashMap::new();
    for x in xs {
        *m.entry(x.clone()).or_insert(0) += 1;
    }
    m
}

fn macro_f1<T: Eq + Hash + Ord + Clone>(pred: &[T], truth: &[T], matched: &[T]) -> f64 {
    let classes: BTreeSet<&T> = pred.iter().chain(truth).collect();
    if classes.is_empty() {
        return 1.0;
    }
    let (pc, tc, mc) = (counts(pred), counts(truth), counts(matched));
    let total: f64 = classes
        .iter()
        .map(|&c| {
            let tp = *mc.get(c).unwrap_or(&0) as f64;
            let np = *pc.get(c).unwrap_or(&0) as f64;
            let nt = *tc.get(c).unwrap_or(&0) as f64;
            if tp == 0.0 || np == 0.0 || nt == 0.0 {
                return 0.0;
            }
            let (p, r) = (tp / np, tp / nt);
            2.0 * p * r / (p + r)
        })
        .sum();
    total / classes.len() as f64
}

/// Sentence BLEU against a single reference with clipped n-gram counts and
/// brevity penalty `min(1, |pred| / |truth|)`.
pub fn bleu<T: Eq + Hash + Clone>(pred: &[T], truth: &[T], n: usize) -> Result<f64, MetricError> {
    if n == 0 {
        return Err(MetricError::InvalidOrder);
    }
    if truth.len() < n {
        return Err(MetricError::ReferenceTooShort { len: truth.len(), n });
    }
    let mut log_sum = 0.0;
    for order in 1..=n {
        if pred.len() < order {
            return Ok(0.0);
        }
        let mut reference: HashMap<&[T], usize> = HashMap::new();
        for g in truth.windows(order) {
            *reference.entry(g).or_insert(0) += 1;
        }
        let mut candidate: HashMap<&[T], usize> = HashMap::new();
        for g in pred.windows(order) {
            *candidate.entry(g).or_insert(0) += 1;
        }
        let clipped: usize = candidate
            .iter()
            .map(|(g, &c)| c.min(*reference.get(g).unwrap_or(&0)))
            .sum();
        if clipped == 0 {
            return Ok(0.0);
        }
        let total = pred.len() + 1 - order;
        log_sum += (clipped as f64 / total as f64).ln();
    }
    let brevity = (pred.len() as f64 / truth.len() as f64).min(1.0);
    Ok(brevity * (log_sum / n as f64).exp())
}

/// Per-trajectory scores at one level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub ahd: f64,
    pub fscore: f64,
    pub bleu: f64,
}

/// BLEU order used for a reference of length `len`: the evaluation order,
/// lowered when the reference is shorter.
fn bleu_order_for(len: usize) -> usize {
    BLEU_ORDER.min(len).max(1)
}

pub fn point_scores(pred: &PointRoute, truth: &PointRoute) -> Result<Scores, MetricError> {
    Ok(Scores {
        ahd: ahd_point(pred, truth)?,
        fscore: f_score(pred, truth, Level::Point)?,
        bleu: bleu(pred, truth, bleu_order_for(truth.len()))?,
    })
}

pub fn segment_scores(pred: &SegmentRoute, truth: &SegmentRoute) -> Result<Scores, MetricError> {
    Ok(Scores {
        ahd: ahd_segment(pred, truth),
        fscore: f_score(pred, truth, Level::Segment)?,
        bleu: bleu(pred, truth, bleu_order_for(truth.len()))?,
    })
}

/// Corpus means of the three metrics at both levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ahd_point: f64,
    pub f_point: f64,
    pub bleu_point: f64,
    pub ahd_segment: f64,
    pub f_segment: f64,
    pub bleu_segment: f64,
    pub n_trajectories: usize,
}

impl MetricReport {
    pub fn level(&self, level: Level) -> Scores {
        match level {
            Level::Point => Scores {
                ahd: self.ahd_point,
                fscore: self.f_point,
                bleu: self.bleu_point,
            },
            Level::Segment => Scores {
                ahd: self.ahd_segment,
                fscore: self.f_segment,
                bleu: self.bleu_segment,
            },
        }
    }

    /// Two rows of `model,level,ahd,fscore,bleu,n_traj`.
    pub fn csv_rows(&self, model: &str) -> Vec<MetricRow> {
        [Level::Point, Level::Segment]
            .into_iter()
            .map(|level| {
                let s = self.level(level);
                MetricRow {
                    model: model.to_string(),
                    level: level.as_str().to_string(),
                    ahd: s.ahd,
                    fscore: s.fscore,
                    bleu: s.bleu,
                    n_traj: self.n_trajectories,
                }
            })
            .collect()
    }
}

/// One line of a metric table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub model: String,
    pub level: String,
    pub ahd: f64,
    pub fscore: f64,
    pub bleu: f64,
    pub n_traj: usize,
}

/// Scores every `(pred, truth)` pair at both levels and averages.
pub fn evaluate_corpus(pairs: &[(PointRoute, PointRoute)]) -> Result<MetricReport, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let mut sums = [0.0f64; 6];
    for (pred, truth) in pairs {
        let p = point_scores(pred, truth)?;
        let s = segment_scores(&pred.collapse(), &truth.collapse())?;
        for (acc, v) in sums.iter_mut().zip([p.ahd, p.fscore, p.bleu, s.ahd, s.fscore, s.bleu]) {
            *acc += v;
        }
    }
    let n = pairs.len() as f64;
    Ok(MetricReport {
        ahd_point: sums[0] / n,
        f_point: sums[1] / n,
        bleu_point: sums[2] / n,
        ahd_segment: sums[3] / n,
        f_segment: sums[4] / n,
        bleu_segment: sums[5] / n,
        n_trajectories: pairs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ahd_point_cases() {
        assert_eq!(ahd_point(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert!((ahd_point(&[1, 2, 3], &[1, 2, 4]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(ahd_point(&[1, 2], &[3, 4]).unwrap(), 0.0);
        assert_eq!(
            ahd_point(&[1], &[1, 2]),
            Err(MetricError::LengthMismatch { pred: 1, truth: 2 })
        );
    }

    #[test]
    fn ahd_segment_cases() {
        assert_eq!(ahd_segment(&[7, 8, 9], &[7, 8, 9, 10]), 0.75);
        assert_eq!(ahd_segment(&[7, 8, 9], &[7, 8, 9]), 1.0);
        assert_eq!(ahd_segment::<u32>(&[], &[1, 2]), 0.0);
    }

    #[test]
    fn f_score_cases() {
        assert_eq!(f_score(&[1, 2, 3], &[1, 2, 3], Level::Point).unwrap(), 1.0);
        let f = f_score(&[1, 1, 1], &[1, 1, 2], Level::Point).unwrap();
        assert!((f - 0.4).abs() < 1e-12, "{f}");
        assert_eq!(f_score(&[1, 1], &[2, 2], Level::Point).unwrap(), 0.0);
        assert_eq!(f_score(&[4, 5], &[6, 7, 8], Level::Segment).unwrap(), 0.0);
        assert!(f_score(&[1], &[1, 2], Level::Point).is_err());
    }

    #[test]
    fn bleu_cases() {
        assert_eq!(bleu(&[7, 8, 9], &[7, 8, 9, 10], 3).unwrap(), 0.75);
        let b = bleu(&[7, 7, 7], &[7, 8, 9], 1).unwrap();
        assert!((b - 1.0 / 3.0).abs() < 1e-15, "{b}");
        assert_eq!(bleu(&[1, 2, 3, 4], &[1, 2, 3, 4], 3).unwrap(), 1.0);
        assert_eq!(
            bleu(&[1, 2], &[1, 2], 3),
            Err(MetricError::ReferenceTooShort { len: 2, n: 3 })
        );
        // no shared trigram
        assert_eq!(bleu(&[1, 2, 9, 3], &[1, 2, 3, 4], 3).unwrap(), 0.0);
    }

    #[test]
    fn corpus_averaging() {
        let perfect = (PointRoute(vec![1, 1, 2, 3]), PointRoute(vec![1, 1, 2, 3]));
        let r = evaluate_corpus(std::slice::from_ref(&perfect)).unwrap();
        for v in [
            r.ahd_point,
            r.f_point,
            r.bleu_point,
            r.ahd_segment,
            r.f_segment,
            r.bleu_segment,
        ] {
            assert_eq!(v, 1.0);
        }
        let half = (PointRoute(vec![1, 1, 9, 9]), PointRoute(vec![1, 1, 2, 3]));
        let r = evaluate_corpus(&[perfect.clone(), half.clone()]).unwrap();
        assert_eq!(r.ahd_point, 0.75);
        let swapped = evaluate_corpus(&[half, perfect]).unwrap();
        assert_eq!(r, swapped);
        assert_eq!(evaluate_corpus(&[]), Err(MetricError::EmptyCorpus));
    }
}
