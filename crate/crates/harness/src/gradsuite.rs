//! The registered finite-difference checks behind `graphllm gradcheck`.

use graphllm_core::graph::{rrwp_raw, Graph};
use graphllm_core::graphformer::{GraphTransformer, GraphTransformerConfig};
use graphllm_core::model::{response_loss, GraphInput, GraphLlm, GraphLlmConfig, PrefixHead, PrefixModel, TextPair};
use graphllm_core::nodeenc::{NodeEncoder, NodeEncoderConfig};
use graphllm_core::prefixlm::{BackboneConfig, BackboneLm};
use graphllm_core::task::Pooling;
use graphllm_core::tokenizer::{BOS, EOS};
use graphllm_core::ModelError;
use graphllm_tensor::gradcheck::{op_checks, project, run_op_check};
use graphllm_tensor::{grad_check_params, ParamStore, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::HarnessError;

pub const TOLERANCE: f64 = 1e-4;
const EPS: f64 = 1e-5;
const TRIALS: usize = 5;
/// Nonzero gradients below this are dominated by the O(eps^2) truncation
/// error of central differences, so points producing them are skipped.
const FAINT_GRADIENT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_relative_error: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_relative_error < TOLERANCE
    }
}

/// Try successive seeds until the forward pass of `build` keeps every
/// kinked input at least `20 * EPS` from its kink and no gradient entry is
/// faint, then grad-check it.
fn check_model<F>(name: &str, build: F) -> Result<CheckResult, HarnessError>
where
    F: Fn(u64) -> Result<(ParamStore, Box<dyn Fn(&mut Tape, &ParamStore) -> Result<Var, ModelError>>), HarnessError>,
{
    for seed in 0..64 {
        let (mut store, f) = build(seed)?;
        let mut tape = Tape::new();
        let loss = f(&mut tape, &store)?;
        if tape.min_signed_sqrt_input().min(tape.min_relu_input()) < 20.0 * EPS {
            continue;
        }
        // Attention key biases shift every score of a row equally, so their
        // exact gradient is zero and only roundoff would be compared.
        let grads = tape.backward(loss)?;
        let key_biases: Vec<_> = store
            .iter()
            .filter(|(_, p)| p.trainable && p.name.ends_with("attn.k.b"))
            .map(|(id, _)| id)
            .collect();
        let mut worst: f64 = 0.0;
        for id in key_biases {
            if let Some(v) = tape.bound_param(id) {
                let g = grads.get_or_zeros(v);
                let m = g.data().iter().fold(0.0f64, |a, x| a.max(x.abs()));
                if m > 1e-12 {
                    worst = f64::INFINITY;
                }
            }
            store.get_mut(id).trainable = false;
        }
        let faint = store.iter().filter(|(_, p)| p.trainable).any(|(id, _)| {
            tape.bound_param(id).is_some_and(|v| {
                grads.get_or_zeros(v).data().iter().any(|g| *g != 0.0 && g.abs() < FAINT_GRADIENT)
            })
        });
        if faint {
            continue;
        }
        let err = grad_check_params(|t: &mut Tape, s: &ParamStore| f(t, s), &store, EPS)?;
        return Ok(CheckResult {
            name: name.into(),
            max_relative_error: worst.max(err),
        });
    }
    Err(HarnessError::InvalidConfig(format!("{name}: no kink-free point found")))
}

type Built = (ParamStore, Box<dyn Fn(&mut Tape, &ParamStore) -> Result<Var, ModelError>>);

fn random_descs(n: usize, vocab: u32, rng: &mut ChaCha8Rng) -> Vec<Vec<u32>> {
    (0..n)
        .map(|_| {
            let len = rng.random_range(2..7);
            (0..len).map(|_| rng.random_range(4..vocab)).collect()
        })
        .collect()
}

fn nodeenc_case(seed: u64) -> Result<Built, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let emb = store.add("lm.embedding", Tensor::randn(&[20, 8], 0.5, &mut rng), false)?;
    let enc = NodeEncoder::new(
        &mut store,
        &mut rng,
        NodeEncoderConfig {
            d_lm: 8,
            d: 4,
            heads: 2,
            encoder_layers: 1,
            decoder_layers: 1,
            lm_layers: 1,
            prefix_len: 2,
            max_desc_len: 8,
            ffn_mult: 2,
        },
    )?;
    let descs = random_descs(2, 20, &mut rng);
    let f = move |tape: &mut Tape, s: &ParamStore| -> Result<Var, ModelError> {
        let e = tape.param(s, emb);
        let refs: Vec<&[u32]> = descs.iter().map(Vec::as_slice).collect();
        let out = enc.forward(tape, s, e, &refs)?;
        Ok(project(tape, out)?)
    };
    Ok((store, Box::new(f)))
}

fn gt_layer_case(seed: u64, edge_values: bool) -> Result<Built, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let gt = GraphTransformer::new(
        &mut store,
        &mut rng,
        GraphTransformerConfig {
            d: 4,
            heads: 2,
            layers: 1,
            walk_len: 3,
            ffn_mult: 2,
            edge_values,
        },
    )?;
    let g = Graph::new(3, [(0, 1), (1, 2)], None)?;
    let r = rrwp_raw(&g, 3)?;
    let h = Tensor::randn(&[3, 1, 1, 4], 1.0, &mut rng);
    let f = move |tape: &mut Tape, s: &ParamStore| -> Result<Var, ModelError> {
        let x = tape.constant(h.clone());
        let out = gt.forward(tape, s, x, &r)?;
        Ok(project(tape, out)?)
    };
    Ok((store, Box::new(f)))
}

fn composed_case(seed: u64) -> Result<Built, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let vocab = 20;
    let lm = BackboneLm::new(
        &mut store,
        &mut rng,
        BackboneConfig {
            vocab,
            d_model: 4,
            heads: 2,
            layers: 1,
            max_len: 16,
            ffn_mult: 2,
        },
    )?;
    lm.freeze(&mut store);
    let model = GraphLlm::new(
        &mut store,
        &mut rng,
        &lm,
        GraphLlmConfig {
            d: 4,
            heads: 2,
            encoder_layers: 1,
            decoder_layers: 1,
            gt_layers: 1,
            prefix_len: 2,
            walk_len: 3,
            max_desc_len: 8,
            ffn_mult: 2,
            b_std: 0.5,
            edge_values: false,
        },
    )?;
    store.get_mut(model.proj.w_u).tensor = Tensor::randn(&[4, 4], 0.5, &mut rng);
    if let Some(b) = model.gt.phi.first.b {
        store.get_mut(b).tensor = Tensor::uniform(&[4], 0.2, 0.5, &mut rng);
    }
    let g = Graph::new(3, [(0, 1), (1, 2)], None)?;
    let input = GraphInput {
        descriptions: random_descs(3, vocab as u32, &mut rng),
        rrwp: rrwp_raw(&g, 3)?,
        pooling: Pooling::Anchor,
        anchors: vec![1],
    };
    let mut prompt = vec![BOS];
    prompt.extend((0..3).map(|_| rng.random_range(4..vocab as u32)));
    let text = TextPair {
        prompt,
        response: vec![rng.random_range(4..vocab as u32), EOS],
    };
    let pm = PrefixModel {
        lm,
        head: PrefixHead::Graph(model),
    };
    let f = move |tape: &mut Tape, s: &ParamStore| -> Result<Var, ModelError> {
        let p = pm.prefix(tape, s, &input)?;
        Ok(response_loss(&pm.lm, tape, s, &text, Some(p))?.0)
    };
    Ok((store, Box::new(f)))
}

/// Every primitive op, one node-encoder forward, one graph-transformer
/// layer on a 3-node graph and the composed graph-to-loss path.
pub fn run_suite(seed: u64) -> Result<Vec<CheckResult>, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for check in op_checks() {
        out.push(CheckResult {
            name: format!("op/{}", check.name),
            max_relative_error: run_op_check(&check, TRIALS, EPS, &mut rng)?,
        });
    }
    out.push(check_model("model/node_encoder", |s| nodeenc_case(s ^ seed))?);
    out.push(check_model("model/graph_transformer_layer", |s| gt_layer_case(s ^ seed, false))?);
    out.push(check_model("model/graph_transformer_layer_edge_values", |s| gt_layer_case(s ^ seed, true))?);
    out.push(check_model("model/graph_prefix_loss", |s| composed_case(s ^ seed))?);
    Ok(out)
}
