//! Dataset files, run configuration, result documents and plot-data files.

pub mod config;
pub mod dataset;
pub mod document;
pub mod plot;

pub use config::{resolve_delta, sha256_hex, ModelFamily, RunConfig, DEFAULT_OUTPUT_DIR, OUTPUT_DIR_ENV};
pub use dataset::{dataset_to_bytes, load_dataset, parse_dataset, write_dataset};
pub use document::{DocumentKind, ResultDocument};
pub use plot::PlotTable;

/// JSON schema that every result document satisfies.
pub const RESULT_SCHEMA: &str = include_str!("../../schema/result.schema.json");
