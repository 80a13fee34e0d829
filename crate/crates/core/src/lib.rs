//! Graph reasoning tasks and the GraphLLM model: node encoder, graph
//! transformer, frozen backbone with graph-conditioned prefixes, and
//! Graph2Text prompt baselines.

pub mod graph;
pub mod task;
pub mod tokenizer;
pub mod error;
pub mod graphformer;
pub mod nn;
pub mod nodeenc;
pub mod prefixlm;

pub use error::ModelError;
pub mod model;
pub mod baselines;
