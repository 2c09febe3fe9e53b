//! Data ingestion, synthetic generators, and experiment orchestration.

mod dataset;
pub mod experiment;
pub mod synth;

pub use dataset::{load_csv, load_points, Dataset, Provenance};
