//! Synthetic labeled trajectories.
//!
//! Generation runs in four steps: enumerate every connected route of `N`
//! segments, lay points along each edge at a constant spacing, pick a random
//! increasing subset of points per segment, then add Gaussian noise in the
//! meter plane. The pseudo-real variant shifts noise and sampling statistics
//! to stand in for field data the synthetic corpus was not drawn from.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{LonLat, Meters};
use crate::roadnet::{EdgeId, NetworkError, RoadNetwork};
use crate::route::{PointRoute, SegmentRoute};
use crate::seed::{derive_indexed, rng, Rng};

/// Shortest trajectory accepted anywhere in the toolkit (trigram BLEU).
pub const MIN_TRAJECTORY_LEN: usize = 3;

/// Default cap on the number of enumerated routes.
pub const DEFAULT_ROUTE_CAP: usize = 10_000_000;

/// Fraction of pseudo-real points that receive heavy-tailed noise.
pub const HEAVY_TAIL_FRACTION: f64 = 0.1;
/// Heavy-tailed points use this multiple of the trajectory's sigma.
pub const HEAVY_TAIL_SCALE: f64 = 4.0;
/// Lower bound on the sigma that the heavy-tail multiple is applied to.
pub const HEAVY_TAIL_FLOOR_M: f64 = 5.0;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("more than {cap} routes of length {n}; lower N or raise the cap")]
    ExplosionGuard { n: usize, cap: usize },
    #[error("edge {edge} has {available} points, fewer than the {required} required")]
    InsufficientPoints {
        edge: EdgeId,
        available: usize,
        required: usize,
    },
    #[error("invalid generation config: {0}")]
    InvalidConfig(String),
    #[error("trajectory {traj_id}: {reason}")]
    InvalidTrajectory { traj_id: String, reason: String },
    #[error("network has no route of length {0}")]
    NoRoutes(usize),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

/// A generated point with its segment label and position along the segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledPoint {
    pub position: LonLat,
    pub edge: EdgeId,
    pub ordinal: usize,
}

/// Chronologically ordered GPS points, optionally with per-point edge labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpsTrajectory {
    pub traj_id: String,
    pub points: Vec<LonLat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<PointRoute>,
}

impl GpsTrajectory {
    pub fn new(traj_id: impl Into<String>, points: Vec<LonLat>, truth: Option<PointRoute>) -> Result<Self, GenError> {
        let t = Self {
            traj_id: traj_id.into(),
            points,
            truth,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), GenError> {
        let fail = |reason: String| GenError::InvalidTrajectory {
            traj_id: self.traj_id.clone(),
            reason,
        };
        if self.points.len() < MIN_TRAJECTORY_LEN {
            return Err(fail(format!(
                "{} points, need at least {MIN_TRAJECTORY_LEN}",
                self.points.len()
            )));
        }
        if let Some(truth) = &self.truth {
            if truth.len() != self.points.len() {
                return Err(fail(format!("{} labels for {} points", truth.len(), self.points.len())));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    /// Segments per route (N).
    pub route_length: usize,
    /// Spacing between generated points along an edge (D), meters.
    pub spacing_m: f64,
    /// Inclusive per-segment point-count range.
    pub select_range: (usize, usize),
    /// Gaussian noise standard deviation per axis, meters.
    pub sigma_m: f64,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub exclude_uturn: bool,
    #[serde(default = "default_route_cap")]
    pub route_cap: usize,
}

fn default_true() -> bool {
    true
}

fn default_route_cap() -> usize {
    DEFAULT_ROUTE_CAP
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            route_length: 4,
            spacing_m: 30.0,
            select_range: (2, 6),
            sigma_m: 15.0,
            seed: 0,
            exclude_uturn: true,
            route_cap: DEFAULT_ROUTE_CAP,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        let (r1, r2) = self.select_range;
        let err = |m: &str| Err(GenError::InvalidConfig(m.into()));
        if self.route_length < 1 {
            return err("route_length must be >= 1");
        }
        if !(self.spacing_m > 0.0 && self.spacing_m.is_finite()) {
            return err("spacing_m must be > 0");
        }
        if r1 < 1 || r1 > r2 {
            return err("select_range must satisfy 1 <= r1 <= r2");
        }
        if !(self.sigma_m >= 0.0 && self.sigma_m.is_finite()) {
            return err("sigma_m must be >= 0");
        }
        Ok(())
    }
}

/// Every connected route of exactly `n` segments, in lexicographic order.
pub fn enumerate_routes(
    net: &RoadNetwork,
    n: usize,
    exclude_uturn: bool,
    cap: usize,
) -> Result<Vec<SegmentRoute>, GenError> {
    if n < 1 {
        return Err(GenError::InvalidConfig("route length must be >= 1".into()));
    }
    let table = net.connection_table(exclude_uturn);
    let mut routes = Vec::new();
    let mut path = Vec::with_capacity(n);
    // (edge, index of next successor to try)
    let mut stack: Vec<(EdgeId, usize)> = Vec::with_capacity(n);
    for first in 0..net.edge_count() {
        path.push(first);
        stack.push((first, 0));
        while let Some(top) = stack.last_mut() {
            if path.len() == n {
                if routes.len() == cap {
                    return Err(GenError::ExplosionGuard { n, cap });
                }
                routes.push(SegmentRoute(path.clone()));
                stack.pop();
                path.pop();
                continue;
            }
            let (edge, next) = *top;
            match table[edge].get(next) {
                Some(&succ) => {
                    top.1 += 1;
                    path.push(succ);
                    stack.push((succ, 0));
                }
                None => {
                    stack.pop();
                    path.pop();
                }
            }
        }
    }
    Ok(routes)
}

/// Points at arc offsets `0, D, 2D, ...` strictly before the edge end.
pub fn generate_points(net: &RoadNetwork, edge: EdgeId, spacing_m: f64) -> Result<Vec<LabeledPoint>, GenError> {
    if !(spacing_m > 0.0) {
        return Err(GenError::InvalidConfig("spacing must be > 0".into()));
    }
    let geom = net.geometry(edge)?;
    // tolerance keeps an offset that lands on the end vertex from sneaking in
    let limit = geom.length() - 1e-9;
    let mut points = Vec::new();
    let mut ordinal = 0;
    loop {
        let offset = ordinal as f64 * spacing_m;
        if ordinal > 0 && offset >= limit {
            break;
        }
        points.push(LabeledPoint {
            position: net.unproject(geom.point_at(offset)),
            edge,
            ordinal,
        });
        ordinal += 1;
    }
    Ok(points)
}

/// Picks `c ~ U[r1, min(r2, available)]` points per segment, emitted in
/// increasing ordinal order; segments stay in route order.
pub fn select_points(
    route_points: &[Vec<LabeledPoint>],
    range: (usize, usize),
    rng: &mut Rng,
) -> Result<Vec<LabeledPoint>, GenError> {
    select_inner(route_points, range, false, rng)
}

fn select_inner(
    route_points: &[Vec<LabeledPoint>],
    (r1, r2): (usize, usize),
    clamp_low: bool,
    rng: &mut Rng,
) -> Result<Vec<LabeledPoint>, GenError> {
    if r1 > r2 {
        return Err(GenError::InvalidConfig("select range r1 > r2".into()));
    }
    let mut out = Vec::new();
    for seg in route_points {
        let available = seg.len();
        let lo = if clamp_low { r1.min(available) } else { r1 };
        if available < lo || available == 0 {
            return Err(GenError::InsufficientPoints {
                edge: seg.first().map_or(usize::MAX, |p| p.edge),
                available,
                required: r1,
            });
        }
        let hi = r2.min(available);
        let count = rng.random_range(lo..=hi);
        let mut picked = sample(rng, available, count).into_vec();
        picked.sort_unstable();
        out.extend(picked.into_iter().map(|i| seg[i]));
    }
    Ok(out)
}

fn jitter(net: &RoadNetwork, p: LonLat, sigma_m: f64, rng: &mut Rng) -> LonLat {
    if sigma_m == 0.0 {
        return p;
    }
    let normal = Normal::new(0.0, sigma_m).expect("sigma is finite and positive");
    let m = net.project(p);
    let dx = normal.sample(rng);
    let dy = normal.sample(rng);
    net.unproject(Meters::new(m.x + dx, m.y + dy))
}

/// Independent zero-mean Gaussian noise on each axis of every point.
pub fn add_noise(net: &RoadNetwork, traj: &GpsTrajectory, sigma_m: f64, rng: &mut Rng) -> GpsTrajectory {
    let points = traj.points.iter().map(|&p| jitter(net, p, sigma_m, rng)).collect();
    GpsTrajectory {
        traj_id: traj.traj_id.clone(),
        points,
        truth: traj.truth.clone(),
    }
}

/// Shared state for corpus generation over one network and config.
struct Generator<'a> {
    net: &'a RoadNetwork,
    cfg: &'a GenerationConfig,
    routes: Vec<SegmentRoute>,
    edge_points: Vec<Vec<LabeledPoint>>,
}

impl<'a> Generator<'a> {
    fn new(net: &'a RoadNetwork, cfg: &'a GenerationConfig) -> Result<Self, GenError> {
        cfg.validate()?;
        let routes = enumerate_routes(net, cfg.route_length, cfg.exclude_uturn, cfg.route_cap)?;
        if routes.is_empty() {
            return Err(GenError::NoRoutes(cfg.route_length));
        }
        let edge_points = (0..net.edge_count())
            .map(|e| generate_points(net, e, cfg.spacing_m))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            net,
            cfg,
            routes,
            edge_points,
        })
    }

    fn ground_truth(
        &self,
        rng: &mut Rng,
        range: (usize, usize),
        clamp_low: bool,
    ) -> Result<Vec<LabeledPoint>, GenError> {
        let route = &self.routes[rng.random_range(0..self.routes.len())];
        let per_segment: Vec<Vec<LabeledPoint>> = route.iter().map(|&e| self.edge_points[e].clone()).collect();
        select_inner(&per_segment, range, clamp_low, rng)
    }

    fn synthetic(&self, index: usize) -> Result<GpsTrajectory, GenError> {
        let mut rng = rng(derive_indexed(self.cfg.seed, index as u64));
        let picked = self.ground_truth(&mut rng, self.cfg.select_range, false)?;
        let clean = labeled_to_trajectory(format!("syn-{index:06}"), &picked)?;
        Ok(add_noise(self.net, &clean, self.cfg.sigma_m, &mut rng))
    }

    fn pseudo_real(&self, index: usize) -> Result<GpsTrajectory, GenError> {
        let mut rng = rng(derive_indexed(self.cfg.seed, index as u64));
        let (r1, r2) = self.cfg.select_range;
        let picked = self.ground_truth(&mut rng, (r1 + 1, r2 + 2), true)?;
        let clean = labeled_to_trajectory(format!("real-{index:06}"), &picked)?;
        let sigma = self.cfg.sigma_m * rng.random_range(0.5..=2.0);
        let heavy = HEAVY_TAIL_SCALE * sigma.max(HEAVY_TAIL_FLOOR_M);
        let points = clean
            .points
            .iter()
            .map(|&p| {
                let s = if rng.random_bool(HEAVY_TAIL_FRACTION) {
                    heavy
                } else {
                    sigma
                };
                jitter(self.net, p, s, &mut rng)
            })
            .collect();
        Ok(GpsTrajectory { points, ..clean })
    }
}

fn labeled_to_trajectory(traj_id: String, points: &[LabeledPoint]) -> Result<GpsTrajectory, GenError> {
    GpsTrajectory::new(
        traj_id,
        points.iter().map(|p| p.position).collect(),
        Some(PointRoute(points.iter().map(|p| p.edge).collect())),
    )
}

/// `count` labeled noisy trajectories; trajectory `i` uses its own RNG
/// stream derived from `(cfg.seed, i)`.
pub fn generate_corpus(
    net: &RoadNetwork,
    cfg: &GenerationConfig,
    count: usize,
) -> Result<Vec<GpsTrajectory>, GenError> {
    if count == 0 {
        cfg.validate()?;
        return Ok(Vec::new());
    }
    let generator = Generator::new(net, cfg)?;
    (0..count).map(|i| generator.synthetic(i)).collect()
}

/// Like [`generate_corpus`] but with a per-trajectory sigma drawn from
/// `[0.5σ, 2σ]`, heavy-tailed noise on about 10% of points and per-segment
/// counts drawn from `[r1 + 1, r2 + 2]` (clamped to what the edge holds).
pub fn generate_pseudo_real(
    net: &RoadNetwork,
    cfg: &GenerationConfig,
    count: usize,
) -> Result<Vec<GpsTrajectory>, GenError> {
    if count == 0 {
        cfg.validate()?;
        return Ok(Vec::new());
    }
    let generator = Generator::new(net, cfg)?;
    (0..count).map(|i| generator.pseudo_real(i)).collect()
}

/// Writes one JSON object per line.
pub fn write_corpus(path: &Path, corpus: &[GpsTrajectory]) -> Result<(), GenError> {
    let mut w = BufWriter::new(File::create(path)?);
    for t in corpus {
        serde_json::to_writer(&mut w, t).map_err(|source| GenError::Json { line: 0, source })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a JSON Lines corpus; blank lines are skipped.
pub fn read_corpus(path: &Path) -> Result<Vec<GpsTrajectory>, GenError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t: GpsTrajectory = serde_json::from_str(&line).map_err(|source| GenError::Json { line: i + 1, source })?;
        t.validate()?;
        out.push(t);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roadnet::{make_grid_network, EdgeRecord, NetworkFile, Vertex};

    fn chain() -> RoadNetwork {
        let vs: Vec<Vertex> = (0..3)
            .map(|i| Vertex {
                id: i,
                x: 127.0 + 0.001 * i as f64,
                y: 37.5,
            })
            .collect();
        let es = (0..2)
            .map(|i| EdgeRecord {
                id: i,
                start: i,
                end: i + 1,
                polyline: vec![vs[i as usize].position(), vs[i as usize + 1].position()],
            })
            .collect();
        RoadNetwork::from_file_format(NetworkFile {
            vertices: vs,
            edges: es,
            meta: None,
        })
        .unwrap()
    }

    /// Straight 100 m edge plus an L-shaped 60 m edge (40 m east, 20 m north).
    /// Vertices are placed so their centroid is the projection origin.
    fn shapes() -> RoadNetwork {
        let proj = crate::geo::Projection::new(LonLat::new(127.0, 37.5));
        let at = |x: f64, y: f64| proj.unproject(Meters::new(x - 80.0, y - 20.0 / 3.0));
        let vs = vec![
            Vertex {
                id: 0,
                x: at(0.0, 0.0).lon,
                y: at(0.0, 0.0).lat,
            },
            Vertex {
                id: 1,
                x: at(100.0, 0.0).lon,
                y: at(100.0, 0.0).lat,
            },
            Vertex {
                id: 2,
                x: at(140.0, 20.0).lon,
                y: at(140.0, 20.0).lat,
            },
        ];
        let es = vec![
            EdgeRecord {
                id: 0,
                start: 0,
                end: 1,
                polyline: vec![vs[0].position(), vs[1].position()],
            },
            EdgeRecord {
                id: 1,
                start: 1,
                end: 2,
                polyline: vec![vs[1].position(), at(140.0, 0.0), vs[2].position()],
            },
        ];
        RoadNetwork::from_file_format(NetworkFile {
            vertices: vs,
            edges: es,
            meta: None,
        })
        .unwrap()
    }

    fn offsets(net: &RoadNetwork, edge: EdgeId, pts: &[LabeledPoint]) -> Vec<f64> {
        let g = net.geometry(edge).unwrap();
        pts.iter().map(|p| g.project(net.project(p.position)).1).collect()
    }

    #[test]
    fn chain_routes() {
        let net = chain();
        assert_eq!(
            enumerate_routes(&net, 2, true, 100).unwrap(),
            vec![SegmentRoute(vec![0, 1])]
        );
        assert_eq!(enumerate_routes(&net, 1, true, 100).unwrap().len(), 2);
    }

    #[test]
    fn route_cap_trips() {
        let net = make_grid_network(3, 3, 100.0).unwrap();
        assert!(matches!(
            enumerate_routes(&net, 3, false, 10),
            Err(GenError::ExplosionGuard { .. })
        ));
    }

    #[test]
    fn straight_edge_points() {
        let net = shapes();
        let len = net.edge_length(0).unwrap();
        assert!((len - 100.0).abs() < 1e-6);
        let pts = generate_points(&net, 0, 25.0).unwrap();
        let offs = offsets(&net, 0, &pts);
        assert_eq!(pts.len(), 4);
        for (o, want) in offs.iter().zip([0.0, 25.0, 50.0, 75.0]) {
            assert!((o - want).abs() < 1e-6, "{o} vs {want}");
        }
        assert_eq!(pts.iter().map(|p| p.ordinal).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        assert_eq!(generate_points(&net, 0, 500.0).unwrap().len(), 1);
    }

    #[test]
    fn l_shaped_edge_points() {
        let net = shapes();
        let pts = generate_points(&net, 1, 20.0).unwrap();
        assert_eq!(pts.len(), 3);
        let m: Vec<Meters> = pts.iter().map(|p| net.project(p.position)).collect();
        // Origin of this projection is the vertex centroid, so compare relative
        // to the edge start: 0 m, 20 m east, then 40 m east on the corner.
        let s = m[0];
        assert!(((m[1].x - s.x) - 20.0).abs() < 1e-6 && (m[1].y - s.y).abs() < 1e-6);
        assert!(((m[2].x - s.x) - 40.0).abs() < 1e-6 && (m[2].y - s.y).abs() < 1e-6);
        let pts = generate_points(&net, 1, 15.0).unwrap();
        // 0, 15, 30 on the east leg; 45 is 5 m up the north leg
        let last = net.project(pts[3].position);
        assert!(((last.x - s.x) - 40.0).abs() < 1e-6 && ((last.y - s.y) - 5.0).abs() < 1e-6);
    }

    #[test]
    fn select_all_and_one() {
        let net = make_grid_network(3, 3, 100.0).unwrap();
        let segs: Vec<Vec<LabeledPoint>> = [0, 2]
            .iter()
            .map(|&e| generate_points(&net, e, 30.0).unwrap())
            .collect();
        let mut r = rng(1);
        let all = select_points(&segs, (4, 4), &mut r).unwrap();
        let flat: Vec<LabeledPoint> = segs.iter().flatten().copied().collect();
        assert_eq!(all, flat);
        let one = select_points(&segs, (1, 1), &mut r).unwrap();
        assert_eq!(one.iter().map(|p| p.edge).collect::<Vec<_>>(), vec![0, 2]);
        assert!(matches!(
            select_points(&segs, (5, 6), &mut r),
            Err(GenError::InsufficientPoints { available: 4, .. })
        ));
    }

    #[test]
    fn zero_sigma_is_identity() {
        let net = make_grid_network(3, 3, 100.0).unwrap();
        let cfg = GenerationConfig {
            sigma_m: 0.0,
            route_length: 2,
            ..Default::default()
        };
        let t = &generate_corpus(&net, &cfg, 1).unwrap()[0];
        let noisy = add_noise(&net, t, 0.0, &mut rng(3));
        assert_eq!(&noisy, t);
    }

    #[test]
    fn empty_corpus_and_determinism() {
        let net = make_grid_network(3, 3, 100.0).unwrap();
        let cfg = GenerationConfig {
            route_length: 3,
            ..Default::default()
        };
        assert!(generate_corpus(&net, &cfg, 0).unwrap().is_empty());
        let a = generate_corpus(&net, &cfg, 20).unwrap();
        let b = generate_corpus(&net, &cfg, 20).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pseudo_real_with_zero_sigma_still_moves_points() {
        let net = make_grid_network(5, 5, 200.0).unwrap();
        let cfg = GenerationConfig {
            sigma_m: 0.0,
            ..Default::default()
        };
        let corpus = generate_pseudo_real(&net, &cfg, 50).unwrap();
        let mut moved = 0;
        let mut total = 0;
        for t in &corpus {
            for (p, &e) in t.points.iter().zip(t.truth.as_ref().unwrap().iter()) {
                total += 1;
                let d = net.geometry(e).unwrap().project(net.project(*p)).2;
                if d > 1e-6 {
                    moved += 1;
                }
            }
        }
        let frac = moved as f64 / total as f64;
        assert!(frac > 0.03 && frac < 0.2, "moved fraction {frac}");
    }

    #[test]
    fn jsonl_round_trip() {
        let net = make_grid_network(3, 3, 100.0).unwrap();
        let cfg = GenerationConfig {
            route_length: 3,
            ..Default::default()
        };
        let corpus = generate_corpus(&net, &cfg, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        write_corpus(&path, &corpus).unwrap();
        assert_eq!(read_corpus(&path).unwrap(), corpus);
        let first = std::fs::read_to_string(&path).unwrap();
        assert!(first.starts_with("{\"traj_id\":\"syn-000000\",\"points\":[["));
    }

    #[test]
    fn short_trajectories_are_rejected() {
        let p = LonLat::new(127.0, 37.5);
        assert!(GpsTrajectory::new("a", vec![p, p], None).is_err());
        assert!(GpsTrajectory::new("a", vec![p; 3], Some(PointRoute(vec![0, 0]))).is_err());
        assert!(GpsTrajectory::new("a", vec![p; 3], Some(PointRoute(vec![0; 3]))).is_ok());
    }
}
