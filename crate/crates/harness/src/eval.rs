//! Greedy-decoding evaluation with exact-match scoring.

use graphllm_core::model::{Example, PrefixModel};
use graphllm_core::prefixlm::argmax;
use graphllm_core::tokenizer::{Tokenizer, EOS};
use graphllm_tensor::{ParamStore, Tape};
use rayon::prelude::*;

use crate::error::HarnessError;

/// The integer a response ends with, if its last whitespace-separated
/// word is one.
pub fn answer_payload(text: &str) -> Option<i64> {
    text.split_whitespace().last()?.parse().ok()
}

/// Responses match when both end in the same integer; text without a
/// trailing integer falls back to comparing trimmed strings.
pub fn answers_match(predicted: &str, gold: &str) -> bool {
    match (answer_payload(predicted), answer_payload(gold)) {
        (Some(a), Some(b)) => a == b,
        (None, None) => predicted.trim() == gold.trim(),
        _ => false,
    }
}

/// Greedy continuation of the example's prompt, identical to
/// `BackboneLm::greedy_decode`. The gold response is scored in one
/// teacher-forced pass first; decoding step by step only starts where the
/// argmax first departs from it.
pub fn predict_ids(model: &PrefixModel, store: &ParamStore, ex: &Example, max_new: usize) -> Result<Vec<u32>, HarnessError> {
    let lm = &model.lm;
    let prefix = model.prefix_tensor(store, &ex.graph)?;
    let prompt = &ex.text.prompt;
    let gold = &ex.text.response;
    let fits = prompt.len() + gold.len() <= lm.cfg.max_len && gold.len() <= max_new + 1;
    if !fits || gold.is_empty() {
        return Ok(lm.greedy_decode(store, prompt, Some(&prefix), max_new)?);
    }
    let seq = ex.text.sequence();
    let input = &seq[..seq.len() - 1];
    let mut tape = Tape::new();
    let p = tape.constant(prefix.clone());
    let h = lm.hidden(&mut tape, store, input, Some(p))?;
    let rows: Vec<usize> = (prompt.len() - 1..input.len()).collect();
    let logits = lm.logits(&mut tape, store, h, Some(&rows))?;
    let vocab = lm.cfg.vocab;
    let values = tape.value(logits).data();
    for (t, &want) in gold.iter().enumerate() {
        let got = argmax(&values[t * vocab..(t + 1) * vocab]) as u32;
        if got == want {
            continue;
        }
        let mut out = gold[..t].to_vec();
        if got == EOS {
            return Ok(out);
        }
        out.push(got);
        if out.len() >= max_new {
            return Ok(out);
        }
        let mut ctx = prompt.clone();
        ctx.extend_from_slice(&out);
        if ctx.len() >= lm.cfg.max_len {
            return Ok(out);
        }
        out.extend(lm.greedy_decode(store, &ctx, Some(&prefix), max_new - out.len())?);
        return Ok(out);
    }
    // The whole gold response, ending in EOS, was reproduced.
    Ok(gold[..gold.len() - 1].to_vec())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub exact_match: f64,
    pub predictions: Vec<String>,
}

/// Exact-match accuracy over `examples`, evaluated in parallel.
pub fn evaluate(
    model: &PrefixModel,
    store: &ParamStore,
    tok: &Tokenizer,
    examples: &[Example],
    max_new: usize,
) -> Result<EvalReport, HarnessError> {
    if examples.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    let predictions = examples
        .par_iter()
        .map(|ex| Ok(tok.decode(&predict_ids(model, store, ex, max_new)?)))
        .collect::<Result<Vec<String>, HarnessError>>()?;
    let hits = predictions.iter().zip(examples).filter(|(p, ex)| answers_match(p, &ex.gold)).count();
    Ok(EvalReport {
        exact_match: hits as f64 / examples.len() as f64,
        predictions,
    })
}
