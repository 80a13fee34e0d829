use graphllm_tensor::TensorError;
use thiserror::Error;

/// Errors raised by the neural modules.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("node {0} has an empty description")]
    EmptyDescription(usize),
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("token id {id} is outside the vocabulary of {vocab}")]
    UnknownToken { id: u32, vocab: usize },
    #[error("sequence of {len} tokens exceeds the {max} learned positions")]
    SequenceTooLong { len: usize, max: usize },
    #[error("query tensor has shape {got:?}, expected {expected:?}")]
    QueryShape { expected: Vec<usize>, got: Vec<usize> },
    #[error("non-finite value in graph transformer layer {layer}, head {head}")]
    NonFinite { layer: usize, head: usize },
    #[error("anchor {anchor} is not a node of a {n}-node graph")]
    InvalidAnchor { anchor: usize, n: usize },
    #[error("graph representation has shape {got:?}, expected {expected:?}")]
    GraphRepShape { expected: Vec<usize>, got: Vec<usize> },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("pretraining corpus is empty")]
    EmptyCorpus,
    #[error("graph has no nodes")]
    EmptyGraph,
}
