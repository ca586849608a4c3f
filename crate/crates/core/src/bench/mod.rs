//! Synthetic generators, CSV ingestion, splitting and evaluation.

mod generators;
mod io;
mod metrics;

pub use generators::*;
pub use io::*;
pub use metrics::*;
