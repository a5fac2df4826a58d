//! Directed road networks: loading, validation, connectivity, candidate
//! search and shortest paths.
//!
//! Vertex and edge ids from the file are remapped to dense indices
//! `0..n` (sorted by original id) so that edge ids double as class indices.
//! The original ids are kept and written back on save.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{project_on_segment, LonLat, Meters, Projection, EARTH_RADIUS_M};
use crate::route::SegmentRoute;

/// Dense edge index, `0..|E|`.
pub type EdgeId = usize;

/// Endpoint tolerance between polylines and their vertices, in degrees.
const ENDPOINT_TOLERANCE_DEG: f64 = 1e-9;

/// Default anchor for generated grids (south-west corner).
const GRID_ANCHOR: LonLat = LonLat::new(127.02, 37.49);

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed network file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid network: {0}")]
    Validation(String),
    #[error("unknown edge id {0}")]
    UnknownEdge(EdgeId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub id: i64,
    /// Longitude, degrees.
    pub x: f64,
    /// Latitude, degrees.
    pub y: f64,
}

impl Vertex {
    pub fn position(&self) -> LonLat {
        LonLat::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub id: i64,
    pub start: i64,
    pub end: i64,
    pub polyline: Vec<LonLat>,
}

/// On-disk network layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkFile {
    pub vertices: Vec<Vertex>,
    pub edges: Vec<EdgeRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<serde_json::Value>,
}

#[derive(Debug, Clone)]
pub struct Edge {
    pub id: EdgeId,
    pub original_id: i64,
    /// Dense vertex index.
    pub start: usize,
    /// Dense vertex index.
    pub end: usize,
    pub polyline: Vec<LonLat>,
}

/// Edge polyline in the meter plane with cumulative arc lengths.
#[derive(Debug, Clone)]
pub struct EdgeGeometry {
    points: Vec<Meters>,
    cumulative: Vec<f64>,
}

impl EdgeGeometry {
    fn new(points: Vec<Meters>) -> Self {
        let mut cumulative = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in points.windows(2) {
            acc += w[0].distance(w[1]);
            cumulative.push(acc);
        }
        Self { points, cumulative }
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap_or(&0.0)
    }

    pub fn points(&self) -> &[Meters] {
        &self.points
    }

    /// Point at arc-length `offset` (clamped to the edge).
    pub fn point_at(&self, offset: f64) -> Meters {
        let offset = offset.clamp(0.0, self.length());
        let leg = match self.cumulative.partition_point(|&c| c <= offset).checked_sub(1) {
            Some(i) => i.min(self.points.len() - 2),
            None => 0,
        };
        let leg_len = self.cumulative[leg + 1] - self.cumulative[leg];
        if leg_len == 0.0 {
            return self.points[leg];
        }
        let t = (offset - self.cumulative[leg]) / leg_len;
        self.points[leg].lerp(self.points[leg + 1], t)
    }

    /// Closest point on the polyline: (point, arc offset, distance).
    pub fn project(&self, p: Meters) -> (Meters, f64, f64) {
        let mut best = (self.points[0], 0.0, f64::INFINITY);
        for (i, w) in self.points.windows(2).enumerate() {
            let (q, t) = project_on_segment(p, w[0], w[1]);
            let d = p.distance(q);
            if d < best.2 {
                let offset = self.cumulative[i] + t * (self.cumulative[i + 1] - self.cumulative[i]);
                best = (q, offset, d);
            }
        }
        best
    }
}

/// Axis-aligned WGS84 bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoBounds {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

/// A candidate location on an edge for a query point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeHit {
    pub edge: EdgeId,
    pub point: LonLat,
    pub point_m: Meters,
    /// Arc-length offset of `point_m` from the edge start.
    pub offset_m: f64,
    pub distance_m: f64,
}

/// Uniform bucket grid over edge bounding boxes in the meter plane.
#[derive(Debug, Clone)]
struct SpatialIndex {
    min: Meters,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<EdgeId>>,
}

impl SpatialIndex {
    fn build(geometry: &[EdgeGeometry]) -> Self {
        let (mut min, mut max) = (
            Meters::new(f64::INFINITY, f64::INFINITY),
            Meters::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
        );
        for p in geometry.iter().flat_map(|g| g.points.iter()) {
            min = Meters::new(min.x.min(p.x), min.y.min(p.y));
            max = Meters::new(max.x.max(p.x), max.y.max(p.y));
        }
        let extent = (max.x - min.x).max(max.y - min.y);
        let cell = (extent / 64.0).max(10.0);
        let nx = ((max.x - min.x) / cell).floor() as usize + 1;
        let ny = ((max.y - min.y) / cell).floor() as usize + 1;
        let mut index = Self {
            min,
            cell,
            nx,
            ny,
            buckets: vec![Vec::new(); nx * ny],
        };
        for (id, g) in geometry.iter().enumerate() {
            for w in g.points.windows(2) {
                let lo = Meters::new(w[0].x.min(w[1].x), w[0].y.min(w[1].y));
                let hi = Meters::new(w[0].x.max(w[1].x), w[0].y.max(w[1].y));
                let (x0, y0) = index.cell_of(lo);
                let (x1, y1) = index.cell_of(hi);
                for cy in y0..=y1 {
                    for cx in x0..=x1 {
                        let bucket = &mut index.buckets[cy * nx + cx];
                        if bucket.last() != Some(&id) {
                            bucket.push(id);
                        }
                    }
                }
            }
        }
        index
    }

    fn cell_of(&self, p: Meters) -> (usize, usize) {
        let cx = ((p.x - self.min.x) / self.cell).floor();
        let cy = ((p.y - self.min.y) / self.cell).floor();
        (
            cx.clamp(0.0, (self.nx - 1) as f64) as usize,
            cy.clamp(0.0, (self.ny - 1) as f64) as usize,
        )
    }

    /// Edges whose bucket overlaps the square of half-width `radius` at `p`.
    fn near(&self, p: Meters, radius: f64) -> Vec<EdgeId> {
        let lo = Meters::new(p.x - radius, p.y - radius);
        let hi = Meters::new(p.x + radius, p.y + radius);
        let max_x = self.min.x + self.cell * self.nx as f64;
        let max_y = self.min.y + self.cell * self.ny as f64;
        if hi.x < self.min.x || hi.y < self.min.y || lo.x > max_x || lo.y > max_y {
            return Vec::new();
        }
        let (x0, y0) = self.cell_of(lo);
        let (x1, y1) = self.cell_of(hi);
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for cy in y0..=y1 {
            for cx in x0..=x1 {
                for &e in &self.buckets[cy * self.nx + cx] {
                    if seen.insert(e) {
                        out.push(e);
                    }
                }
            }
        }
        out
    }
}

/// Immutable directed road graph.
#[derive(Debug, Clone)]
pub struct RoadNetwork {
    vertices: Vec<Vertex>,
    edges: Vec<Edge>,
    geometry: Vec<EdgeGeometry>,
    projection: Projection,
    outgoing: Vec<Vec<EdgeId>>,
    index: SpatialIndex,
    meta: Option<serde_json::Value>,
}

impl RoadNetwork {
    /// Validates and indexes a parsed network file.
    pub fn from_file_format(file: NetworkFile) -> Result<Self, NetworkError> {
        let NetworkFile {
            mut vertices,
            mut edges,
            meta,
        } = file;
        if vertices.is_empty() {
            return Err(NetworkError::Validation("no vertices".into()));
        }
        if edges.is_empty() {
            return Err(NetworkError::Validation("network has no edges".into()));
        }
        vertices.sort_by_key(|v| v.id);
        edges.sort_by_key(|e| e.id);
        for w in vertices.windows(2) {
            if w[0].id == w[1].id {
                return Err(NetworkError::Validation(format!("duplicate vertex id {}", w[0].id)));
            }
        }
        for w in edges.windows(2) {
            if w[0].id == w[1].id {
                return Err(NetworkError::Validation(format!("duplicate edge id {}", w[0].id)));
            }
        }
        for v in &vertices {
            if !(-180.0..=180.0).contains(&v.x) || !(-90.0..=90.0).contains(&v.y) {
                return Err(NetworkError::Validation(format!("vertex {} out of WGS84 range", v.id)));
            }
        }
        let vertex_index: HashMap<i64, usize> = vertices.iter().enumerate().map(|(i, v)| (v.id, i)).collect();

        let n = vertices.len() as f64;
        let origin = LonLat::new(
            vertices.iter().map(|v| v.x).sum::<f64>() / n,
            vertices.iter().map(|v| v.y).sum::<f64>() / n,
        );
        let projection = Projection::new(origin);

        let mut dense = Vec::with_capacity(edges.len());
        let mut geometry = Vec::with_capacity(edges.len());
        for (id, rec) in edges.into_iter().enumerate() {
            let lookup = |vid: i64| {
                vertex_index.get(&vid).copied().ok_or_else(|| {
                    NetworkError::Validation(format!("edge {} references missing vertex {}", rec.id, vid))
                })
            };
            let start = lookup(rec.start)?;
            let end = lookup(rec.end)?;
            if rec.polyline.len() < 2 {
                return Err(NetworkError::Validation(format!(
                    "edge {} polyline has fewer than 2 points",
                    rec.id
                )));
            }
            let near = |a: LonLat, b: LonLat| {
                (a.lon - b.lon).abs() <= ENDPOINT_TOLERANCE_DEG && (a.lat - b.lat).abs() <= ENDPOINT_TOLERANCE_DEG
            };
            if !near(rec.polyline[0], vertices[start].position())
                || !near(*rec.polyline.last().unwrap(), vertices[end].position())
            {
                return Err(NetworkError::Validation(format!(
                    "edge {} polyline endpoints do not match its vertices",
                    rec.id
                )));
            }
            let geom = EdgeGeometry::new(rec.polyline.iter().map(|&p| projection.project(p)).collect());
            if geom.length() <= 0.0 {
                return Err(NetworkError::Validation(format!("edge {} has zero length", rec.id)));
            }
            geometry.push(geom);
            dense.push(Edge {
                id,
                original_id: rec.id,
                start,
                end,
                polyline: rec.polyline,
            });
        }

        let mut outgoing = vec![Vec::new(); vertices.len()];
        for e in &dense {
            outgoing[e.start].push(e.id);
        }
        let index = SpatialIndex::build(&geometry);
        Ok(Self {
            vertices,
            edges: dense,
            geometry,
            projection,
            outgoing,
            index,
            meta,
        })
    }

    pub fn to_file_format(&self) -> NetworkFile {
        NetworkFile {
            vertices: self.vertices.clone(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeRecord {
                    id: e.original_id,
                    start: self.vertices[e.start].id,
                    end: self.vertices[e.end].id,
                    polyline: e.polyline.clone(),
                })
                .collect(),
            meta: self.meta.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), NetworkError> {
        let mut text = serde_json::to_string_pretty(&self.to_file_format())?;
        text.push('\n');
        fs::write(path, text).map_err(|source| NetworkError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn meta(&self) -> Option<&serde_json::Value> {
        self.meta.as_ref()
    }

    pub fn edge(&self, id: EdgeId) -> Result<&Edge, NetworkError> {
        self.edges.get(id).ok_or(NetworkError::UnknownEdge(id))
    }

    pub fn geometry(&self, id: EdgeId) -> Result<&EdgeGeometry, NetworkError> {
        self.geometry.get(id).ok_or(NetworkError::UnknownEdge(id))
    }

    pub fn edge_length(&self, id: EdgeId) -> Result<f64, NetworkError> {
        Ok(self.geometry(id)?.length())
    }

    /// Original (file) id for each dense edge id.
    pub fn edge_id_map(&self) -> Vec<i64> {
        self.edges.iter().map(|e| e.original_id).collect()
    }

    pub fn projection(&self) -> &Projection {
        &self.projection
    }

    pub fn projection_origin(&self) -> LonLat {
        self.projection.origin()
    }

    pub fn project(&self, p: LonLat) -> Meters {
        self.projection.project(p)
    }

    pub fn unproject(&self, m: Meters) -> LonLat {
        self.projection.unproject(m)
    }

    pub fn bounds(&self) -> GeoBounds {
        let mut b = GeoBounds {
            lat_min: f64::INFINITY,
            lat_max: f64::NEG_INFINITY,
            lon_min: f64::INFINITY,
            lon_max: f64::NEG_INFINITY,
        };
        for p in self.edges.iter().flat_map(|e| e.polyline.iter()) {
            b.lat_min = b.lat_min.min(p.lat);
            b.lat_max = b.lat_max.max(p.lat);
            b.lon_min = b.lon_min.min(p.lon);
            b.lon_max = b.lon_max.max(p.lon);
        }
        b
    }

    /// Successor edges of every edge. With `exclude_uturn`, the edge running
    /// exactly back along the same vertex pair is dropped.
    pub fn connection_table(&self, exclude_uturn: bool) -> Vec<Vec<EdgeId>> {
        self.edges
            .iter()
            .map(|e| {
                self.outgoing[e.end]
                    .iter()
                    .copied()
                    .filter(|&s| !(exclude_uturn && self.edges[s].end == e.start))
                    .collect()
            })
            .collect()
    }

    /// True iff consecutive edges share the connecting vertex.
    pub fn validate_route(&self, route: &SegmentRoute) -> Result<bool, NetworkError> {
        for &id in route.iter() {
            self.edge(id)?;
        }
        Ok(route.windows(2).all(|w| self.edges[w[0]].end == self.edges[w[1]].start))
    }

    /// Up to `k` edges within `radius_m` of `p`, nearest first (ties by id).
    pub fn nearest_edges(&self, p: LonLat, k: usize, radius_m: f64) -> Vec<EdgeHit> {
        let pm = self.projection.project(p);
        let mut hits: Vec<EdgeHit> = self
            .index
            .near(pm, radius_m)
            .into_iter()
            .filter_map(|edge| {
                let (q, offset_m, distance_m) = self.geometry[edge].project(pm);
                (distance_m <= radius_m).then(|| EdgeHit {
                    edge,
                    point: self.projection.unproject(q),
                    point_m: q,
                    offset_m,
                    distance_m,
                })
            })
            .collect();
        hits.sort_by(|a, b| a.distance_m.total_cmp(&b.distance_m).then(a.edge.cmp(&b.edge)));
        hits.truncate(k);
        hits
    }

    /// Shortest network distance from vertex `source` to every vertex.
    pub fn vertex_distances(&self, source: usize) -> Vec<f64> {
        #[derive(PartialEq)]
        struct State(f64, usize);
        impl Eq for State {}
        impl Ord for State {
            fn cmp(&self, other: &Self) -> Ordering {
                other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
            }
        }
        impl PartialOrd for State {
            fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
                Some(self.cmp(other))
            }
        }

        let mut dist = vec![f64::INFINITY; self.vertices.len()];
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(State(0.0, source));
        while let Some(State(d, v)) = heap.pop() {
            if d > dist[v] {
                continue;
            }
            for &e in &self.outgoing[v] {
                let next = self.edges[e].end;
                let nd = d + self.geometry[e].length();
                if nd < dist[next] {
                    dist[next] = nd;
                    heap.push(State(nd, next));
                }
            }
        }
        dist
    }

    /// Network distance from the end of `from` to the start of `to`;
    /// `None` when unreachable.
    pub fn shortest_path_length(&self, from: EdgeId, to: EdgeId) -> Result<Option<f64>, NetworkError> {
        let a = self.edge(from)?.end;
        let b = self.edge(to)?.start;
        let d = self.vertex_distances(a)[b];
        Ok(d.is_finite().then_some(d))
    }
}

/// Reads and validates a network JSON file.
pub fn load_network(path: &Path) -> Result<RoadNetwork, NetworkError> {
    let text = fs::read_to_string(path).map_err(|source| NetworkError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let file: NetworkFile = serde_json::from_str(&text)?;
    RoadNetwork::from_file_format(file)
}

/// Builds a `rows` x `cols` grid with two directed edges per orthogonal
/// neighbor pair.
///
/// Vertex `r * cols + c` sits in row `r` (south to north) and column `c`
/// (west to east). Vertices are visited in id order; for each vertex the
/// eastward pair (`v -> east`, `east -> v`) is emitted first, then the
/// northward pair (`v -> north`, `north -> v`), and edge ids count up in
/// that order.
pub fn make_grid_network(rows: usize, cols: usize, spacing_m: f64) -> Result<RoadNetwork, NetworkError> {
    if rows < 2 || cols < 2 {
        return Err(NetworkError::Validation(format!(
            "grid needs at least 2 rows and 2 columns, got {rows}x{cols}"
        )));
    }
    if !(spacing_m > 0.0 && spacing_m.is_finite()) {
        return Err(NetworkError::Validation(format!(
            "grid spacing must be positive, got {spacing_m}"
        )));
    }
    let dlat = (spacing_m / EARTH_RADIUS_M).to_degrees();
    let center_lat = GRID_ANCHOR.lat + dlat * (rows - 1) as f64 / 2.0;
    let dlon = (spacing_m / (EARTH_RADIUS_M * center_lat.to_radians().cos())).to_degrees();

    let vertices: Vec<Vertex> = (0..rows * cols)
        .map(|v| Vertex {
            id: v as i64,
            x: GRID_ANCHOR.lon + dlon * (v % cols) as f64,
            y: GRID_ANCHOR.lat + dlat * (v / cols) as f64,
        })
        .collect();
    let mut edges = Vec::new();
    let mut push = |a: usize, b: usize| {
        edges.push(EdgeRecord {
            id: edges.len() as i64,
            start: a as i64,
            end: b as i64,
            polyline: vec![vertices[a].position(), vertices[b].position()],
        });
    };
    for v in 0..rows * cols {
        let (r, c) = (v / cols, v % cols);
        if c + 1 < cols {
            push(v, v + 1);
            push(v + 1, v);
        }
        if r + 1 < rows {
            push(v, v + cols);
            push(v + cols, v);
        }
    }
    let meta = serde_json::json!({
        "generator": "grid",
        "rows": rows,
        "cols": cols,
        "spacing_m": spacing_m,
        "id_scheme": "vertex id = row * cols + col (row 0 south, col 0 west); \
            vertices in id order emit east pair (v->east, east->v) then north pair \
            (v->north, north->v); edge ids count up in emission order",
    });
    RoadNetwork::from_file_format(NetworkFile {
        vertices,
        edges,
        meta: Some(meta),
    })
}
