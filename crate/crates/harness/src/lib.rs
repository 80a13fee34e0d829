//! Training, evaluation and experiment drivers for graph-conditioned
//! prefix tuning, plus the pieces behind the `graphllm` command line.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gradsuite;
pub mod metrics;
pub mod scaling;
pub mod train;

pub use error::HarnessError;
