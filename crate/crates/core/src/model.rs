//! Full prefix-tuned models: GraphLLM (node encoder, graph transformer,
//! projection) and the vanilla prefix-tuning baseline, both on top of a
//! frozen backbone.

use graphllm_tensor::{ParamStore, Tape, Tensor, Var};
use rand::Rng;

use crate::error::ModelError;
use crate::graph::{rrwp_raw, Rrwp};
use crate::graphformer::{pool, GraphTransformer, GraphTransformerConfig};
use crate::nodeenc::{NodeEncoder, NodeEncoderConfig};
use crate::prefixlm::{BackboneLm, GraphPrefixProjection, VanillaPrefix};
use crate::task::{Pooling, TaskInstance};
use crate::tokenizer::{Tokenizer, BOS, EOS};

#[derive(Debug, Clone, PartialEq)]
pub struct GraphLlmConfig {
    pub d: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub gt_layers: usize,
    pub prefix_len: usize,
    pub walk_len: usize,
    pub max_desc_len: usize,
    pub ffn_mult: usize,
    /// Standard deviation of the initial `B`.
    pub b_std: f64,
    /// See [`GraphTransformerConfig::edge_values`].
    pub edge_values: bool,
}

impl Default for GraphLlmConfig {
    fn default() -> Self {
        Self {
            d: 64,
            heads: 4,
            encoder_layers: 2,
            decoder_layers: 2,
            gt_layers: 4,
            prefix_len: 5,
            walk_len: 8,
            max_desc_len: 96,
            ffn_mult: 2,
            b_std: 0.02,
            edge_values: false,
        }
    }
}

/// Model-ready view of an instance's graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInput {
    pub descriptions: Vec<Vec<u32>>,
    pub rrwp: Rrwp,
    pub pooling: Pooling,
    pub anchors: Vec<usize>,
}

impl GraphInput {
    pub fn from_instance(inst: &TaskInstance, tok: &Tokenizer, walk_len: usize) -> Result<Self, ModelError> {
        let rrwp = rrwp_raw(&inst.graph, walk_len).map_err(|e| ModelError::Config(e.to_string()))?;
        Ok(Self {
            descriptions: inst.descriptions.iter().map(|d| tok.encode(d)).collect(),
            rrwp,
            pooling: inst.pooling(),
            anchors: inst.anchors.clone(),
        })
    }
}

/// Prompt `<bos> instruction \n` and target `response <eos>` token ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextPair {
    pub prompt: Vec<u32>,
    pub response: Vec<u32>,
}

impl TextPair {
    pub fn new(tok: &Tokenizer, instruction: &str, response: &str) -> Self {
        let mut prompt = vec![BOS];
        prompt.extend(tok.encode(instruction));
        prompt.extend(tok.encode("\n"));
        let mut target = tok.encode(response);
        target.push(EOS);
        Self { prompt, response: target }
    }

    /// The full `<bos> ... <eos>` sequence.
    pub fn sequence(&self) -> Vec<u32> {
        let mut s = self.prompt.clone();
        s.extend_from_slice(&self.response);
        s
    }
}

/// Everything the models need for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub text: TextPair,
    pub graph: GraphInput,
    pub gold: String,
}

impl Example {
    pub fn from_instance(inst: &TaskInstance, tok: &Tokenizer, walk_len: usize) -> Result<Self, ModelError> {
        Ok(Self {
            text: TextPair::new(tok, &inst.instruction, &inst.response),
            graph: GraphInput::from_instance(inst, tok, walk_len)?,
            gold: inst.response.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphLlm {
    pub cfg: GraphLlmConfig,
    pub encoder: NodeEncoder,
    pub gt: GraphTransformer,
    pub proj: GraphPrefixProjection,
}

impl GraphLlm {
    /// Add the trainable GraphLLM modules to `store` next to `lm`.
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, lm: &BackboneLm, cfg: GraphLlmConfig) -> Result<Self, ModelError> {
        let encoder = NodeEncoder::new(
            store,
            rng,
            NodeEncoderConfig {
                d_lm: lm.cfg.d_model,
                d: cfg.d,
                heads: cfg.heads,
                encoder_layers: cfg.encoder_layers,
                decoder_layers: cfg.decoder_layers,
                lm_layers: lm.cfg.layers,
                prefix_len: cfg.prefix_len,
                max_desc_len: cfg.max_desc_len,
                ffn_mult: cfg.ffn_mult,
            },
        )?;
        let gt = GraphTransformer::new(
            store,
            rng,
            GraphTransformerConfig {
                d: cfg.d,
                heads: cfg.heads,
                layers: cfg.gt_layers,
                walk_len: cfg.walk_len,
                ffn_mult: cfg.ffn_mult,
                edge_values: cfg.edge_values,
            },
        )?;
        let proj = GraphPrefixProjection::new(store, rng, cfg.d, &lm.cfg, cfg.prefix_len, cfg.b_std)?;
        Ok(Self { cfg, encoder, gt, proj })
    }

    /// Graph representation `G`: `[L, K, d]`.
    pub fn graph_rep(&self, tape: &mut Tape, store: &ParamStore, lm: &BackboneLm, g: &GraphInput) -> Result<Var, ModelError> {
        let emb = tape.param(store, lm.embedding);
        let descs: Vec<&[u32]> = g.descriptions.iter().map(Vec::as_slice).collect();
        let h = self.encoder.forward(tape, store, emb, &descs)?;
        let h = self.gt.forward(tape, store, h, &g.rrwp)?;
        pool(tape, h, g.pooling, &g.anchors)
    }

    /// Prefix `P = G W_U + B`: `[L, K, d^M]`.
    pub fn prefix(&self, tape: &mut Tape, store: &ParamStore, lm: &BackboneLm, g: &GraphInput) -> Result<Var, ModelError> {
        let rep = self.graph_rep(tape, store, lm, g)?;
        self.proj.forward(tape, store, rep)
    }
}

/// Which prefix-tuning variant a model is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    GraphLlm,
    VanillaPrefix,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::GraphLlm => "graphllm",
            Method::VanillaPrefix => "prefix_tuning",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "graphllm" => Ok(Method::GraphLlm),
            "prefix_tuning" | "vanilla" => Ok(Method::VanillaPrefix),
            _ => Err(format!("unknown method {s:?}")),
        }
    }
}

/// A frozen backbone plus a prefix source.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixModel {
    pub lm: BackboneLm,
    pub head: PrefixHead,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PrefixHead {
    Graph(GraphLlm),
    Vanilla(VanillaPrefix),
}

impl PrefixModel {
    pub fn method(&self) -> Method {
        match self.head {
            PrefixHead::Graph(_) => Method::GraphLlm,
            PrefixHead::Vanilla(_) => Method::VanillaPrefix,
        }
    }

    pub fn prefix_len(&self, store: &ParamStore) -> usize {
        match &self.head {
            PrefixHead::Graph(g) => g.cfg.prefix_len,
            PrefixHead::Vanilla(v) => store.get(v.b).tensor.shape()[1],
        }
    }

    pub fn prefix(&self, tape: &mut Tape, store: &ParamStore, g: &GraphInput) -> Result<Var, ModelError> {
        match &self.head {
            PrefixHead::Graph(m) => m.prefix(tape, store, &self.lm, g),
            PrefixHead::Vanilla(v) => Ok(v.forward(tape, store)),
        }
    }

    /// Prefix values computed without keeping a tape around.
    pub fn prefix_tensor(&self, store: &ParamStore, g: &GraphInput) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new();
        let p = self.prefix(&mut tape, store, g)?;
        Ok(tape.value(p).clone())
    }

    /// Summed cross-entropy of the response tokens given the prompt and the
    /// instance prefix; prompt positions never enter the loss. Returns the
    /// loss and the number of scored tokens.
    pub fn response_loss(&self, tape: &mut Tape, store: &ParamStore, ex: &Example) -> Result<(Var, usize), ModelError> {
        let prefix = self.prefix(tape, store, &ex.graph)?;
        response_loss(&self.lm, tape, store, &ex.text, Some(prefix))
    }

    /// Greedy-decoded response text.
    pub fn generate(&self, store: &ParamStore, tok: &Tokenizer, ex: &Example, max_new: usize) -> Result<String, ModelError> {
        let p = self.prefix_tensor(store, &ex.graph)?;
        let ids = self.lm.greedy_decode(store, &ex.text.prompt, Some(&p), max_new)?;
        Ok(tok.decode(&ids))
    }
}

/// Loss over the response part of `text` only. The language-model head is
/// evaluated just on the rows that predict response tokens.
pub fn response_loss(
    lm: &BackboneLm,
    tape: &mut Tape,
    store: &ParamStore,
    text: &TextPair,
    prefix: Option<Var>,
) -> Result<(Var, usize), ModelError> {
    let seq = text.sequence();
    let input = &seq[..seq.len() - 1];
    let h = lm.hidden(tape, store, input, prefix)?;
    let start = text.prompt.len() - 1;
    let rows: Vec<usize> = (start..input.len()).collect();
    let logits = lm.logits(tape, store, h, Some(&rows))?;
    let targets: Vec<Option<usize>> = text.response.iter().map(|&t| Some(t as usize)).collect();
    Ok((tape.cross_entropy(logits, &targets)?, targets.len()))
}
