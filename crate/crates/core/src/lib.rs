//! Road networks, synthetic GPS trajectories, the HMM/Viterbi baseline and
//! the sequence metrics used to score map-matching output.
//!
//! Everything here is pure data processing; the learned matcher lives in the
//! `trajmatch-model` crate and the CLI in `trajmatch`.

pub mod baseline;
pub mod geo;
pub mod metrics;
pub mod roadnet;
pub mod route;
pub mod seed;
pub mod trajgen;

pub use geo::{LonLat, Projection};
pub use roadnet::{EdgeId, NetworkError, RoadNetwork};
pub use route::{PointRoute, SegmentRoute};
pub use trajgen::{GenerationConfig, GpsTrajectory};
