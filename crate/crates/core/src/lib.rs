//! Spectrum demand mapping on a multi-resolution Web-Mercator tile grid.
//!
//! The crate is organized along the processing pipeline:
//!
//! * [`geotile`] tile addressing, neighborhoods, distances and coverage overlap
//! * [`proxy`] busy-hour traffic targets, the deployed-bandwidth proxy and its OLS validation
//! * [`ingest`] harmonization of point, polygon and tile-column inputs into a [`ingest::FeatureTable`]
//! * [`hiergraph`] the hierarchical intra/inter-zoom tile graph
//! * [`hrgat`] the hierarchical graph attention regressor, its loss, training and baselines
//! * [`evalx`] spatially blocked cross-validation, metrics and residual diagnostics
//! * [`explain`] permutation-sampled Shapley attributions
//! * [`synth`] a deterministic synthetic multi-city benchmark generator
//! * [`pipeline`] file-level stages used by the command line tool

pub mod error;
pub mod evalx;
pub mod explain;
pub mod geotile;
pub mod hiergraph;
pub mod hrgat;
pub mod ingest;
pub mod io;
pub mod pipeline;
pub mod proxy;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
pub use evalx::{EvalReport, ModelKind};
pub use explain::Attribution;
pub use geotile::{CoverageDisk, GeoPoint, TileId};
pub use hiergraph::{HierGraph, Sigma};
pub use hrgat::{DenseMatrix, HrGatParams, Hyper, Prediction};
pub use ingest::FeatureTable;
pub use pipeline::RunConfig;
pub use synth::SyntheticSpec;
