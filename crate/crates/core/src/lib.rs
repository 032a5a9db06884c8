//! Road-intersection detection from vehicle trajectories: ingestion,
//! geohash tiling, rasterization, datasets, classifiers and evaluation.

pub mod classifier;
pub mod dataset;
pub mod error;
pub mod geocell;
pub mod geodesy;
pub mod ingest;
pub mod metrics;
pub mod pipeline;
pub mod raster;
pub mod seed;
pub mod simgen;
pub mod tiler;

pub use error::{Error, Result};
