//! Turning task instances into tokenizer input, pretraining text and model
//! examples.

use graphllm_core::model::Example;
use graphllm_core::task::TaskInstance;
use graphllm_core::tokenizer::Tokenizer;
use rayon::prelude::*;

use crate::config::TrainConfig;
use crate::error::HarnessError;

/// The text an instance contributes to the backbone corpus: its
/// instruction and response, then each node description.
pub fn corpus_texts(inst: &TaskInstance) -> Vec<String> {
    let mut out = Vec::with_capacity(inst.descriptions.len() + 1);
    out.push(format!("{}\n{}", inst.instruction, inst.response));
    out.extend(inst.descriptions.iter().cloned());
    out
}

/// Vocabulary over every text the instances can produce.
pub fn build_tokenizer<'a>(instances: impl IntoIterator<Item = &'a TaskInstance>) -> Tokenizer {
    let texts: Vec<String> = instances.into_iter().flat_map(corpus_texts).collect();
    Tokenizer::from_corpus(texts.iter().map(String::as_str))
}

/// Token ids of the pretraining corpus.
pub fn pretrain_corpus(tok: &Tokenizer, instances: &[TaskInstance]) -> Vec<Vec<u32>> {
    instances
        .iter()
        .flat_map(corpus_texts)
        .map(|t| tok.encode(&t))
        .collect()
}

/// Model inputs for `instances`, checking they belong to the configured
/// task. The configured pooling mode overrides the task default.
pub fn examples(cfg: &TrainConfig, tok: &Tokenizer, instances: &[TaskInstance]) -> Result<Vec<Example>, HarnessError> {
    if let Some(bad) = instances.iter().find(|i| i.task != cfg.task) {
        return Err(HarnessError::TaskMismatch {
            dataset: bad.task,
            config: cfg.task,
        });
    }
    let pooling = cfg.pooling_for(cfg.task);
    instances
        .par_iter()
        .map(|inst| {
            let mut ex = Example::from_instance(inst, tok, cfg.walk_len)?;
            ex.graph.pooling = pooling;
            Ok(ex)
        })
        .collect()
}
