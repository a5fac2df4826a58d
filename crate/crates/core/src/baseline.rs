//! Rule-based HMM map matcher decoded with Viterbi.
//!
//! Hidden states are candidate positions on nearby edges. Emission is a
//! Gaussian in the point-to-edge distance; transition penalizes the gap
//! between straight-line and along-network distance of consecutive
//! candidates.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{LonLat, Meters};
use crate::roadnet::{EdgeHit, EdgeId, RoadNetwork};
use crate::route::PointRoute;
use crate::trajgen::GpsTrajectory;

#[derive(Debug, Error, PartialEq)]
pub enum HmmError {
    #[error("no candidate edge within radius for point {index}")]
    NoCandidates { index: usize },
    #[error("invalid HMM config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HmmConfig {
    pub sigma_emission_m: f64,
    pub beta_transition: f64,
    pub k_candidates: usize,
    pub radius_m: f64,
}

impl Default for HmmConfig {
    fn default() -> Self {
        Self {
            sigma_emission_m: 15.0,
            beta_transition: 50.0,
            k_candidates: 4,
            radius_m: 100.0,
        }
    }
}

impl HmmConfig {
    pub fn validate(&self) -> Result<(), HmmError> {
        let ok =
            self.sigma_emission_m > 0.0 && self.beta_transition > 0.0 && self.k_candidates > 0 && self.radius_m > 0.0;
        if ok {
            Ok(())
        } else {
            Err(HmmError::InvalidConfig(format!(
                "all fields must be positive: {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub edge: EdgeId,
    pub point: LonLat,
    pub point_m: Meters,
    pub offset_m: f64,
    pub distance_m: f64,
}

impl From<EdgeHit> for Candidate {
    fn from(h: EdgeHit) -> Self {
        Self {
            edge: h.edge,
            point: h.point,
            point_m: h.point_m,
            offset_m: h.offset_m,
            distance_m: h.distance_m,
        }
    }
}

pub fn emission_logp(c: &Candidate, cfg: &HmmConfig) -> f64 {
    let s = cfg.sigma_emission_m;
    let d = c.distance_m;
    -d * d / (2.0 * s * s) - (s * (2.0 * std::f64::consts::PI).sqrt()).ln()
}

/// Along-network distance from `c1` to `c2`, given the vertex distance
/// lookup `between(from_edge, to_edge)`.
fn route_distance(
    c1: &Candidate,
    c2: &Candidate,
    net: &RoadNetwork,
    between: impl FnOnce(EdgeId, EdgeId) -> Option<f64>,
) -> Option<f64> {
    if c1.edge == c2.edge && c2.offset_m >= c1.offset_m {
        return Some(c2.offset_m - c1.offset_m);
    }
    let rest = net.edge_length(c1.edge).ok()? - c1.offset_m;
    between(c1.edge, c2.edge).map(|d| rest + d + c2.offset_m)
}

fn transition_from(straight: f64, route: Option<f64>, cfg: &HmmConfig) -> f64 {
    match route {
        Some(r) => -(straight - r).abs() / cfg.beta_transition,
        None => f64::NEG_INFINITY,
    }
}

/// `-|d_straight - d_route| / beta`, or `-inf` when `c2` is unreachable.
pub fn transition_logp(c1: &Candidate, c2: &Candidate, net: &RoadNetwork, cfg: &HmmConfig) -> f64 {
    let straight = c1.point_m.distance(c2.point_m);
    let route = route_distance(c1, c2, net, |a, b| net.shortest_path_length(a, b).ok().flatten());
    transition_from(straight, route, cfg)
}

/// Memoizes single-source vertex distances for one decode.
struct DistanceCache<'a> {
    net: &'a RoadNetwork,
    rows: HashMap<usize, Vec<f64>>,
}

impl<'a> DistanceCache<'a> {
    fn new(net: &'a RoadNetwork) -> Self {
        Self {
            net,
            rows: HashMap::new(),
        }
    }

    fn transition(&mut self, c1: &Candidate, c2: &Candidate, cfg: &HmmConfig) -> f64 {
        let straight = c1.point_m.distance(c2.point_m);
        let net = self.net;
        let rows = &mut self.rows;
        let route = route_distance(c1, c2, net, |a, b| {
            let src = net.edges()[a].end;
            let dst = net.edges()[b].start;
            let d = rows.entry(src).or_insert_with(|| net.vertex_distances(src))[dst];
            d.is_finite().then_some(d)
        });
        transition_from(straight, route, cfg)
    }
}

/// Candidates for every point, nearest first.
pub fn candidates(traj: &GpsTrajectory, net: &RoadNetwork, cfg: &HmmConfig) -> Result<Vec<Vec<Candidate>>, HmmError> {
    traj.points
        .iter()
        .enumerate()
        .map(|(index, &p)| {
            let hits = net.nearest_edges(p, cfg.k_candidates, cfg.radius_m);
            if hits.is_empty() {
                Err(HmmError::NoCandidates { index })
            } else {
                Ok(hits.into_iter().map(Candidate::from).collect())
            }
        })
        .collect()
}

/// Best state sequence and its log score.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    /// Index into each step's candidate list.
    pub states: Vec<usize>,
    pub edges: Vec<EdgeId>,
    pub score: f64,
}

/// Viterbi over a candidate lattice.
///
/// Among equal-scoring paths the lexicographically smallest edge sequence
/// wins. If every transition into a step is impossible, the chain restarts
/// from the best path so far with emission scores only.
pub fn viterbi_decode(lattice: &[Vec<Candidate>], net: &RoadNetwork, cfg: &HmmConfig) -> Option<Decoded> {
    let first = lattice.first()?;
    if lattice.iter().any(|step| step.is_empty()) {
        return None;
    }
    let mut cache = DistanceCache::new(net);
    let mut scores: Vec<f64> = first.iter().map(|c| emission_logp(c, cfg)).collect();
    let mut paths: Vec<Vec<usize>> = (0..first.len()).map(|i| vec![i]).collect();

    let edges_of = |step_paths: &[usize]| -> Vec<EdgeId> {
        step_paths
            .iter()
            .enumerate()
            .map(|(t, &s)| lattice[t][s].edge)
            .collect()
    };
    // lexicographic comparison on edge ids of two state paths of equal length
    let lex_less = |a: &[usize], b: &[usize]| edges_of(a) < edges_of(b);

    for t in 1..lattice.len() {
        let prev = &lattice[t - 1];
        let cur = &lattice[t];
        let mut next_scores = Vec::with_capacity(cur.len());
        let mut next_paths = Vec::with_capacity(cur.len());
        for c in cur.iter() {
            let emit = emission_logp(c, cfg);
            let mut best: Option<(f64, usize)> = None;
            for (i, p) in prev.iter().enumerate() {
                let s = scores[i] + cache.transition(p, c, cfg);
                if s == f64::NEG_INFINITY {
                    continue;
                }
                best = match best {
                    None => Some((s, i)),
                    Some((bs, bi)) if outscores(s, bs) || (ties(s, bs) && lex_less(&paths[i], &paths[bi])) => {
                        Some((s, i))
                    }
                    keep => keep,
                };
            }
            match best {
                Some((s, i)) => {
                    next_scores.push(s + emit);
                    let mut path = paths[i].clone();
                    path.push(next_paths.len());
                    next_paths.push(path);
                }
                None => {
                    next_scores.push(f64::NEG_INFINITY);
                    next_paths.push(Vec::new());
                }
            }
        }
        if next_scores.iter().all(|&s| s == f64::NEG_INFINITY) {
            let (bs, bi) = best_state(&scores, &paths, &lex_less);
            next_scores = cur.iter().map(|c| bs + emission_logp(c, cfg)).collect();
            next_paths = (0..cur.len())
                .map(|j| {
                    let mut p = paths[bi].clone();
                    p.push(j);
                    p
                })
                .collect();
        }
        scores = next_scores;
        paths = next_paths;
    }
    let (score, best) = best_state(&scores, &paths, &lex_less);
    let states = paths[best].clone();
    let edges = edges_of(&states);
    Some(Decoded { states, edges, score })
}

/// Relative tolerance under which two path scores count as tied. Equal-cost
/// alternatives reached through different sums can differ in the last bits.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// True when `a` and `b` are equal up to [`TIE_TOLERANCE`].
pub fn ties(a: f64, b: f64) -> bool {
    if a == b {
        return true;
    }
    if !a.is_finite() || !b.is_finite() {
        return false;
    }
    (a - b).abs() <= TIE_TOLERANCE * a.abs().max(b.abs()).max(1.0)
}

fn outscores(a: f64, b: f64) -> bool {
    a > b && !ties(a, b)
}

fn best_state(scores: &[f64], paths: &[Vec<usize>], lex_less: &impl Fn(&[usize], &[usize]) -> bool) -> (f64, usize) {
    let mut best = 0;
    for i in 1..scores.len() {
        let better = outscores(scores[i], scores[best])
            || (ties(scores[i], scores[best]) && !paths[i].is_empty() && lex_less(&paths[i], &paths[best]));
        if better || (paths[best].is_empty() && !paths[i].is_empty()) {
            best = i;
        }
    }
    (scores[best], best)
}

/// Matches every point of `traj` to an edge.
pub fn viterbi_match(traj: &GpsTrajectory, net: &RoadNetwork, cfg: &HmmConfig) -> Result<PointRoute, HmmError> {
    cfg.validate()?;
    let lattice = candidates(traj, net, cfg)?;
    let decoded = viterbi_decode(&lattice, net, cfg).ok_or(HmmError::NoCandidates { index: 0 })?;
    Ok(PointRoute(decoded.edges))
}
