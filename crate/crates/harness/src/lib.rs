//! Command-line pipeline around the trajmatch crates: data generation,
//! training, matching, scoring and attention export, each run leaving a
//! manifest with content hashes of what it read and wrote.

pub mod cli;
pub mod error;
pub mod experiment;
pub mod manifest;
pub mod pipeline;
pub mod split;

pub use error::HarnessError;
pub use experiment::{run_experiment, ExperimentManifest, ExperimentOutcome};
pub use split::SplitSpec;
