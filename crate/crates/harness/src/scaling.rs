//! Context length of Graph2Text prompts versus GraphLLM as graphs grow.

use graphllm_core::baselines::{build_prompt, count_context_tokens, graphllm_context_tokens, GraphTextFormat, PromptMode};
use graphllm_core::task::{generate, TaskKind};

use crate::error::HarnessError;
use crate::metrics::ScalingRow;

pub const GRAPH2TEXT: &str = "graph2text";
pub const GRAPHLLM: &str = "graphllm";
pub const GRAPHLLM_PREFIX: &str = "graphllm_prefix";

/// Mean context tokens per size for zero-shot adjacency-list Graph2Text,
/// for GraphLLM (instruction plus prefix slots) and for the prefix alone.
/// Accuracy is left empty.
pub fn scaling_experiment(
    task: TaskKind,
    sizes: &[usize],
    prefix_len: usize,
    per_size: usize,
    seed: u64,
) -> Result<Vec<ScalingRow>, HarnessError> {
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(HarnessError::InvalidConfig("node counts must be strictly increasing".into()));
    }
    let mut rows = Vec::new();
    for &size in sizes {
        let insts = generate(task, per_size, size, seed ^ size as u64)?;
        let mut g2t = 0.0;
        let mut ours = 0.0;
        for inst in &insts {
            let prompt = build_prompt(inst, GraphTextFormat::AdjacencyList, PromptMode::ZeroShot, None)?;
            g2t += count_context_tokens(&prompt) as f64;
            ours += graphllm_context_tokens(inst, prefix_len) as f64;
        }
        let n = insts.len() as f64;
        for (method, tokens) in [(GRAPH2TEXT, g2t / n), (GRAPHLLM, ours / n), (GRAPHLLM_PREFIX, prefix_len as f64)] {
            rows.push(ScalingRow {
                size,
                method: method.into(),
                context_tokens: tokens,
                accuracy: None,
            });
        }
    }
    Ok(rows)
}

/// `1 - graphllm / graph2text` at `size`.
pub fn reduction_at(rows: &[ScalingRow], size: usize) -> Option<f64> {
    let get = |m: &str| rows.iter().find(|r| r.size == size && r.method == m).map(|r| r.context_tokens);
    Some(1.0 - get(GRAPHLLM)? / get(GRAPH2TEXT)?)
}
