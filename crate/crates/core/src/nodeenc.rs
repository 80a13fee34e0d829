//! Node understanding: a transformer encoder over each node description
//! followed by a cross-attention decoder driven by learnable queries,
//! producing an `[L, K, d]` representation per node.

use graphllm_tensor::{ParamId, ParamStore, Tape, Tensor, Var};
use rand::Rng;

use crate::error::ModelError;
use crate::nn::{FeedForward, LayerNorm, MultiHeadAttention};
use crate::tokenizer::PAD;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeEncoderConfig {
    /// Width of the frozen backbone embedding.
    pub d_lm: usize,
    pub d: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    /// Backbone layer count `L`.
    pub lm_layers: usize,
    /// Prefix length `K`.
    pub prefix_len: usize,
    pub max_desc_len: usize,
    pub ffn_mult: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Block {
    attn: MultiHeadAttention,
    ln1: LayerNorm,
    ffn: FeedForward,
    ln2: LayerNorm,
}

impl Block {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, cfg: &NodeEncoderConfig) -> Result<Self, ModelError> {
        Ok(Self {
            attn: MultiHeadAttention::new(store, rng, &format!("{name}.attn"), cfg.d, cfg.heads)?,
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), cfg.d)?,
            ffn: FeedForward::new(store, rng, &format!("{name}.ffn"), cfg.d, cfg.d * cfg.ffn_mult)?,
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), cfg.d)?,
        })
    }

    /// Post-norm residual block: attention, then feed-forward.
    #[allow(clippy::too_many_arguments)]
    fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        ctx: Var,
        b: usize,
        tq: usize,
        tk: usize,
        lens: &[usize],
    ) -> Result<Var, ModelError> {
        let a = self.attn.forward(tape, store, x, ctx, b, tq, tk, |bi, _, j| j < lens[bi])?;
        let x = tape.add(x, a)?;
        let x = self.ln1.forward(tape, store, x)?;
        let f = self.ffn.forward(tape, store, x)?;
        let x = tape.add(x, f)?;
        Ok(self.ln2.forward(tape, store, x)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeEncoder {
    pub cfg: NodeEncoderConfig,
    /// `W_D`, `[d_lm, d]`.
    pub down: ParamId,
    pub positions: ParamId,
    /// Learnable queries `[L, K, d]`.
    pub queries: ParamId,
    encoder: Vec<Block>,
    decoder: Vec<Block>,
}

impl NodeEncoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, cfg: NodeEncoderConfig) -> Result<Self, ModelError> {
        if cfg.d == 0 || cfg.heads == 0 || !cfg.d.is_multiple_of(cfg.heads) {
            return Err(ModelError::Config(format!("{} heads must divide width {}", cfg.heads, cfg.d)));
        }
        let d = cfg.d;
        let down = store.add("enc.down", Tensor::randn(&[cfg.d_lm, d], 1.0 / (cfg.d_lm as f64).sqrt(), rng), true)?;
        let positions = store.add("enc.pos", Tensor::randn(&[cfg.max_desc_len, d], 0.1, rng), true)?;
        let queries = store.add("enc.queries", Tensor::randn(&[cfg.lm_layers, cfg.prefix_len, d], 1.0, rng), true)?;
        let encoder = (0..cfg.encoder_layers)
            .map(|l| Block::new(store, rng, &format!("enc.self{l}"), &cfg))
            .collect::<Result<_, _>>()?;
        let decoder = (0..cfg.decoder_layers)
            .map(|l| Block::new(store, rng, &format!("enc.cross{l}"), &cfg))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            cfg,
            down,
            positions,
            queries,
            encoder,
            decoder,
        })
    }

    fn check(&self, descs: &[&[u32]], vocab: usize) -> Result<(usize, Vec<usize>), ModelError> {
        let mut lens = Vec::with_capacity(descs.len());
        for (i, d) in descs.iter().enumerate() {
            if d.is_empty() {
                return Err(ModelError::EmptyDescription(i));
            }
            if d.len() > self.cfg.max_desc_len {
                return Err(ModelError::SequenceTooLong {
                    len: d.len(),
                    max: self.cfg.max_desc_len,
                });
            }
            if let Some(&id) = d.iter().find(|&&id| id as usize >= vocab) {
                return Err(ModelError::UnknownToken { id, vocab });
            }
            lens.push(d.len());
        }
        Ok((lens.iter().copied().max().unwrap_or(0), lens))
    }

    /// Contexts of every description, padded to a common length `T`:
    /// `[n*T, d]`.
    fn encode_padded(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        embedding: Var,
        descs: &[&[u32]],
        t: usize,
        lens: &[usize],
    ) -> Result<Var, ModelError> {
        let n = descs.len();
        let ids: Vec<usize> = descs
            .iter()
            .flat_map(|d| (0..t).map(move |p| d.get(p).copied().unwrap_or(PAD) as usize))
            .collect();
        let x = tape.gather_rows(embedding, &ids)?;
        let w = tape.param(store, self.down);
        let x = tape.matmul(x, w)?;
        let pos_table = tape.param(store, self.positions);
        let pos_idx: Vec<usize> = (0..n).flat_map(|_| 0..t).collect();
        let pos = tape.gather_rows(pos_table, &pos_idx)?;
        let mut x = tape.add(x, pos)?;
        for block in &self.encoder {
            x = block.forward(tape, store, x, x, n, t, t, lens)?;
        }
        Ok(x)
    }

    fn decode_padded(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        queries: Var,
        ctx: Var,
        t: usize,
        lens: &[usize],
    ) -> Result<Var, ModelError> {
        let (l, k, d) = (self.cfg.lm_layers, self.cfg.prefix_len, self.cfg.d);
        let expected = vec![l, k, d];
        if tape.shape(queries) != expected.as_slice() {
            return Err(ModelError::QueryShape {
                expected,
                got: tape.shape(queries).to_vec(),
            });
        }
        let n = lens.len();
        let q = tape.reshape(queries, &[l * k, d])?;
        let idx: Vec<usize> = (0..n).flat_map(|_| 0..l * k).collect();
        let mut y = tape.gather_rows(q, &idx)?;
        for block in &self.decoder {
            y = block.forward(tape, store, y, ctx, n, l * k, t, lens)?;
        }
        Ok(tape.reshape(y, &[n, l, k, d])?)
    }

    /// `H` for every node: `[n, L, K, d]`. Nodes are batched with padding;
    /// each node only ever attends to its own description.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, embedding: Var, descs: &[&[u32]]) -> Result<Var, ModelError> {
        let vocab = tape.shape(embedding)[0];
        let (t, lens) = self.check(descs, vocab)?;
        if descs.is_empty() {
            return Err(ModelError::EmptyGraph);
        }
        let ctx = self.encode_padded(tape, store, embedding, descs, t, &lens)?;
        let queries = tape.param(store, self.queries);
        self.decode_padded(tape, store, queries, ctx, t, &lens)
    }

    /// Context `c_i` of one description: `[len, d]`.
    pub fn encode_description(&self, tape: &mut Tape, store: &ParamStore, embedding: Var, ids: &[u32]) -> Result<Var, ModelError> {
        let vocab = tape.shape(embedding)[0];
        let (t, lens) = self.check(&[ids], vocab)?;
        self.encode_padded(tape, store, embedding, &[ids], t, &lens)
    }

    /// `H_i = Decoder(queries, c_i)`: `[L, K, d]`.
    pub fn decode_queries(&self, tape: &mut Tape, store: &ParamStore, queries: Var, ctx: Var) -> Result<Var, ModelError> {
        let t = tape.shape(ctx)[0];
        let h = self.decode_padded(tape, store, queries, ctx, t, &[t])?;
        let (l, k, d) = (self.cfg.lm_layers, self.cfg.prefix_len, self.cfg.d);
        Ok(tape.reshape(h, &[l, k, d])?)
    }
}
