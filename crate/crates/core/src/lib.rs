//! Splitting strategies, baselines and metrics for studying data leakage in
//! offline evaluation of next-basket and sequential recommenders.

pub mod compare;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod filter;
pub mod ingest;
pub mod models;
pub mod split;
pub mod synth;
pub mod util;

pub use error::{Error, ErrorKind, Result};

/// Toolkit version recorded in every artifact.
pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");
