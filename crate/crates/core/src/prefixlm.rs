//! The frozen decoder-only backbone, per-layer key/value prefixes and the
//! graph-conditioned prefix projection `P = G W_U + B`.

use graphllm_tensor::{AdamW, ParamId, ParamStore, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::ModelError;
use crate::nn::{attention, FeedForward, LayerNorm, MultiHeadAttention};
use crate::tokenizer::{BOS, EOS};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackboneConfig {
    pub vocab: usize,
    /// Model width `d^M`.
    pub d_model: usize,
    pub heads: usize,
    /// Layer count `L`.
    pub layers: usize,
    pub max_len: usize,
    pub ffn_mult: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct LmBlock {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    ln2: LayerNorm,
    ffn: FeedForward,
}

/// Pre-norm causal transformer with tied input/output embeddings. All of
/// its parameters live under the `lm.` prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackboneLm {
    pub cfg: BackboneConfig,
    pub embedding: ParamId,
    pub positions: ParamId,
    blocks: Vec<LmBlock>,
    ln_f: LayerNorm,
}

pub const LM_PREFIX: &str = "lm.";

impl BackboneLm {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, cfg: BackboneConfig) -> Result<Self, ModelError> {
        if cfg.d_model == 0 || cfg.heads == 0 || !cfg.d_model.is_multiple_of(cfg.heads) {
            return Err(ModelError::Config(format!("{} heads must divide width {}", cfg.heads, cfg.d_model)));
        }
        let d = cfg.d_model;
        let std = 1.0 / (d as f64).sqrt();
        let embedding = store.add("lm.embedding", Tensor::randn(&[cfg.vocab, d], std, rng), true)?;
        let positions = store.add("lm.positions", Tensor::randn(&[cfg.max_len, d], std, rng), true)?;
        let blocks = (0..cfg.layers)
            .map(|l| -> Result<LmBlock, ModelError> {
                Ok(LmBlock {
                    ln1: LayerNorm::new(store, &format!("lm.block{l}.ln1"), d)?,
                    attn: MultiHeadAttention::new(store, rng, &format!("lm.block{l}.attn"), d, cfg.heads)?,
                    ln2: LayerNorm::new(store, &format!("lm.block{l}.ln2"), d)?,
                    ffn: FeedForward::new(store, rng, &format!("lm.block{l}.ffn"), d, d * cfg.ffn_mult)?,
                })
            })
            .collect::<Result<_, _>>()?;
        let ln_f = LayerNorm::new(store, "lm.ln_f", d)?;
        Ok(Self {
            cfg,
            embedding,
            positions,
            blocks,
            ln_f,
        })
    }

    /// Shape every prefix tensor must have: `[L, K, d^M]`.
    pub fn prefix_shape(&self, k: usize) -> [usize; 3] {
        [self.cfg.layers, k, self.cfg.d_model]
    }

    fn check_tokens(&self, ids: &[u32]) -> Result<(), ModelError> {
        if ids.is_empty() {
            return Err(ModelError::EmptyPrompt);
        }
        if ids.len() > self.cfg.max_len {
            return Err(ModelError::SequenceTooLong {
                len: ids.len(),
                max: self.cfg.max_len,
            });
        }
        if let Some(&id) = ids.iter().find(|&&id| id as usize >= self.cfg.vocab) {
            return Err(ModelError::UnknownToken {
                id,
                vocab: self.cfg.vocab,
            });
        }
        Ok(())
    }

    /// Final hidden states `[T, d^M]`. With a prefix `[L, K, d^M]`, layer
    /// `l` attends over `[P_l; K_l]` and `[P_l; V_l]`; every position sees
    /// all prefix slots and, causally, the real positions up to itself.
    pub fn hidden(&self, tape: &mut Tape, store: &ParamStore, ids: &[u32], prefix: Option<Var>) -> Result<Var, ModelError> {
        self.check_tokens(ids)?;
        let t = ids.len();
        let d = self.cfg.d_model;
        let kp = match prefix {
            None => 0,
            Some(p) => {
                let shape = tape.shape(p);
                if shape.len() != 3 || shape[0] != self.cfg.layers || shape[2] != d {
                    return Err(ModelError::GraphRepShape {
                        expected: self.prefix_shape(shape.get(1).copied().unwrap_or(0)).to_vec(),
                        got: shape.to_vec(),
                    });
                }
                shape[1]
            }
        };
        let rows = match prefix {
            Some(p) => Some(tape.reshape(p, &[self.cfg.layers, kp * d])?),
            None => None,
        };
        let emb = tape.param(store, self.embedding);
        let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let x = tape.gather_rows(emb, &idx)?;
        let pos_table = tape.param(store, self.positions);
        let pos_idx: Vec<usize> = (0..t).collect();
        let pos = tape.gather_rows(pos_table, &pos_idx)?;
        let mut x = tape.add(x, pos)?;
        for (l, block) in self.blocks.iter().enumerate() {
            let a_in = block.ln1.forward(tape, store, x)?;
            let q = block.attn.q.forward(tape, store, a_in)?;
            let mut k = block.attn.k.forward(tape, store, a_in)?;
            let mut v = block.attn.v.forward(tape, store, a_in)?;
            if let Some(rows) = rows {
                if kp > 0 {
                    let p = tape.gather_rows(rows, &[l])?;
                    let p = tape.reshape(p, &[kp, d])?;
                    k = tape.concat(&[p, k], 0)?;
                    v = tape.concat(&[p, v], 0)?;
                }
            }
            let (att, _) = attention(tape, q, k, v, 1, t, kp + t, self.cfg.heads, |_, i, j| j < kp || j - kp <= i)?;
            let o = block.attn.o.forward(tape, store, att)?;
            x = tape.add(x, o)?;
            let f_in = block.ln2.forward(tape, store, x)?;
            let f = block.ffn.forward(tape, store, f_in)?;
            x = tape.add(x, f)?;
        }
        Ok(self.ln_f.forward(tape, store, x)?)
    }

    /// Logits `[rows, vocab]` for the selected rows of `hidden` (all rows
    /// when `rows` is `None`).
    pub fn logits(&self, tape: &mut Tape, store: &ParamStore, hidden: Var, rows: Option<&[usize]>) -> Result<Var, ModelError> {
        let h = match rows {
            Some(r) => tape.gather_rows(hidden, r)?,
            None => hidden,
        };
        let emb = tape.param(store, self.embedding);
        Ok(tape.matmul_nt(h, emb)?)
    }

    /// Logits `[T, vocab]` for every position.
    pub fn forward_lm(&self, tape: &mut Tape, store: &ParamStore, ids: &[u32], prefix: Option<Var>) -> Result<Var, ModelError> {
        let h = self.hidden(tape, store, ids, prefix)?;
        self.logits(tape, store, h, None)
    }

    /// Next-token logits after `ids`, evaluated on a scratch tape.
    pub fn next_token_logits(&self, store: &ParamStore, ids: &[u32], prefix: Option<&Tensor>) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::new();
        let p = prefix.map(|p| tape.constant(p.clone()));
        let h = self.hidden(&mut tape, store, ids, p)?;
        let out = self.logits(&mut tape, store, h, Some(&[ids.len() - 1]))?;
        Ok(tape.value(out).data().to_vec())
    }

    /// Greedy continuation of `prompt` (which should start with `<bos>`):
    /// at most `max_new` tokens, stopping before `<eos>`, ties broken
    /// towards the lowest id. Returns only the generated ids.
    pub fn greedy_decode(
        &self,
        store: &ParamStore,
        prompt: &[u32],
        prefix: Option<&Tensor>,
        max_new: usize,
    ) -> Result<Vec<u32>, ModelError> {
        let mut seq = prompt.to_vec();
        let mut out = Vec::new();
        while out.len() < max_new && seq.len() < self.cfg.max_len {
            let logits = self.next_token_logits(store, &seq, prefix)?;
            let next = argmax(&logits) as u32;
            if next == EOS {
                break;
            }
            out.push(next);
            seq.push(next);
        }
        Ok(out)
    }

    /// Mark every backbone parameter frozen.
    pub fn freeze(&self, store: &mut ParamStore) {
        store.set_trainable_prefix(LM_PREFIX, false);
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `P = G W_U + B` with `W_U: [d, d^M]` (zero at start) and `B: [L, K, d^M]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphPrefixProjection {
    pub w_u: ParamId,
    pub b: ParamId,
    pub d: usize,
    pub d_model: usize,
    pub layers: usize,
    pub prefix_len: usize,
}

impl GraphPrefixProjection {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        d: usize,
        lm: &BackboneConfig,
        prefix_len: usize,
        b_std: f64,
    ) -> Result<Self, ModelError> {
        let w_u = store.add("proj.w_u", Tensor::zeros(&[d, lm.d_model]), true)?;
        let b = store.add("proj.b", Tensor::randn(&[lm.layers, prefix_len, lm.d_model], b_std, rng), true)?;
        Ok(Self {
            w_u,
            b,
            d,
            d_model: lm.d_model,
            layers: lm.layers,
            prefix_len,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, g: Var) -> Result<Var, ModelError> {
        let (l, k) = (self.layers, self.prefix_len);
        let expected = vec![l, k, self.d];
        if tape.shape(g) != expected.as_slice() {
            return Err(ModelError::GraphRepShape {
                expected,
                got: tape.shape(g).to_vec(),
            });
        }
        let g = tape.reshape(g, &[l * k, self.d])?;
        let w = tape.param(store, self.w_u);
        let gw = tape.matmul(g, w)?;
        let b = tape.param(store, self.b);
        let b = tape.reshape(b, &[l * k, self.d_model])?;
        let p = tape.add(gw, b)?;
        Ok(tape.reshape(p, &[l, k, self.d_model])?)
    }
}

/// Plain prefix tuning: the prefix is the free tensor `B` itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VanillaPrefix {
    pub b: ParamId,
}

impl VanillaPrefix {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, lm: &BackboneConfig, prefix_len: usize, b_std: f64) -> Result<Self, ModelError> {
        let b = store.add("prefix.b", Tensor::randn(&[lm.layers, prefix_len, lm.d_model], b_std, rng), true)?;
        Ok(Self { b })
    }

    /// Reuse an existing `B` parameter.
    pub fn sharing(b: ParamId) -> Self {
        Self { b }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore) -> Var {
        tape.param(store, self.b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub max_steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    /// Stop once the mean per-token loss of the last `window` steps falls
    /// below this value.
    pub loss_target: f64,
    pub window: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            max_steps: 2000,
            batch: 16,
            lr: 3e-3,
            warmup_steps: 50,
            weight_decay: 0.01,
            loss_target: 0.05,
            window: 20,
            seed: 0,
        }
    }
}

/// Per-step mean token losses of a pretraining run.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainReport {
    pub losses: Vec<f64>,
}

/// Summed next-token loss of one `<bos> ... <eos>` sequence and its token
/// count.
fn sequence_loss(lm: &BackboneLm, tape: &mut Tape, store: &ParamStore, seq: &[u32]) -> Result<(Var, usize), ModelError> {
    let input = &seq[..seq.len() - 1];
    let targets: Vec<Option<usize>> = seq[1..].iter().map(|&t| Some(t as usize)).collect();
    let logits = lm.forward_lm(tape, store, input, None)?;
    Ok((tape.cross_entropy(logits, &targets)?, targets.len()))
}

/// Train the backbone on next-token prediction over `corpus` (token ids
/// without specials), then freeze it.
pub fn pretrain_and_freeze(
    lm: &BackboneLm,
    store: &mut ParamStore,
    corpus: &[Vec<u32>],
    cfg: &PretrainConfig,
) -> Result<PretrainReport, ModelError> {
    if corpus.iter().all(|s| s.is_empty()) {
        return Err(ModelError::EmptyCorpus);
    }
    let seqs: Vec<Vec<u32>> = corpus
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| {
            let mut v = Vec::with_capacity(s.len() + 2);
            v.push(BOS);
            v.extend_from_slice(&s[..s.len().min(lm.cfg.max_len - 1)]);
            v.push(EOS);
            v
        })
        .collect();
    if let Some((_, p)) = store.iter().find(|(_, p)| p.trainable && !p.name.starts_with(LM_PREFIX)) {
        return Err(ModelError::Config(format!(
            "pretraining expects only backbone parameters to be trainable, found {}",
            p.name
        )));
    }
    let ids: Vec<ParamId> = store.ids().collect();
    let mut opt = AdamW::new(store, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    let mut cursor = order.len();
    let mut losses = Vec::new();
    for step in 0..cfg.max_steps {
        let mut grads: Vec<Tensor> = store.iter().map(|(_, p)| Tensor::zeros(p.tensor.shape())).collect();
        let mut total = 0.0;
        let mut tokens = 0;
        for _ in 0..cfg.batch {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let seq = &seqs[order[cursor]];
            cursor += 1;
            let mut tape = Tape::new();
            let (loss, n) = sequence_loss(lm, &mut tape, store, seq)?;
            total += tape.value(loss).data()[0];
            tokens += n;
            let g = tape.backward(loss)?;
            for &id in &ids {
                if let Some(v) = tape.bound_param(id) {
                    if let Some(gv) = g.get(v) {
                        for (a, b) in grads[id.0].data_mut().iter_mut().zip(gv.data()) {
                            *a += b;
                        }
                    }
                }
            }
        }
        let scale = 1.0 / tokens as f64;
        for g in &mut grads {
            for x in g.data_mut() {
                *x *= scale;
            }
        }
        let lr = cfg.lr * ((step + 1) as f64 / cfg.warmup_steps.max(1) as f64).min(1.0);
        opt.step(store, &grads, lr);
        losses.push(total * scale);
        if losses.len() >= cfg.window {
            let recent = &losses[losses.len() - cfg.window..];
            if recent.iter().sum::<f64>() / (cfg.window as f64) < cfg.loss_target {
                break;
            }
        }
    }
    lm.freeze(store);
    Ok(PretrainReport { losses })
}
