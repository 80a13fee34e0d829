//! Parameterised building blocks shared by the encoder, the graph
//! transformer and the backbone.

use graphllm_tensor::{ParamId, ParamStore, Tape, Tensor, TensorError, Var};
use rand::Rng;

/// Weight `[in, out]` drawn from `N(0, 1/in)`, optional zero bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        din: usize,
        dout: usize,
        bias: bool,
    ) -> Result<Self, TensorError> {
        let std = 1.0 / (din as f64).sqrt();
        let w = store.add(format!("{name}.w"), Tensor::randn(&[din, dout], std, rng), true)?;
        let b = if bias {
            Some(store.add(format!("{name}.b"), Tensor::zeros(&[dout]), true)?)
        } else {
            None
        };
        Ok(Self { w, b })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, TensorError> {
        let w = tape.param(store, self.w);
        let b = self.b.map(|b| tape.param(store, b));
        tape.linear(x, w, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Result<Self, TensorError> {
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[d], 1.0), true)?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[d]), true)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, TensorError> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.layer_norm(x, g, b)
    }
}

/// Two-layer ReLU feed-forward block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        d: usize,
        hidden: usize,
    ) -> Result<Self, TensorError> {
        Ok(Self {
            up: Linear::new(store, rng, &format!("{name}.up"), d, hidden, true)?,
            down: Linear::new(store, rng, &format!("{name}.down"), hidden, d, true)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, TensorError> {
        let h = self.up.forward(tape, store, x)?;
        let h = tape.relu(h);
        self.down.forward(tape, store, h)
    }
}

/// `[B*T, H*dh]` to `[B*H, T, dh]`.
pub fn split_heads(tape: &mut Tape, x: Var, b: usize, t: usize, heads: usize) -> Result<Var, TensorError> {
    let d = tape.shape(x)[1];
    let dh = d / heads;
    let x = tape.reshape(x, &[b, t, heads, dh])?;
    let x = tape.permute(x, &[0, 2, 1, 3])?;
    tape.reshape(x, &[b * heads, t, dh])
}

/// `[B*H, T, dh]` back to `[B*T, H*dh]`.
pub fn merge_heads(tape: &mut Tape, x: Var, b: usize, heads: usize) -> Result<Var, TensorError> {
    let s = tape.shape(x).to_vec();
    let (t, dh) = (s[1], s[2]);
    let x = tape.reshape(x, &[b, heads, t, dh])?;
    let x = tape.permute(x, &[0, 2, 1, 3])?;
    tape.reshape(x, &[b * t, heads * dh])
}

/// Scaled dot-product attention over already projected `q` (`[B*Tq, d]`)
/// and `k`, `v` (`[B*Tk, d]`). `visible(b, i, j)` decides whether query `i`
/// of batch entry `b` may see key `j`. Returns `[B*Tq, d]` and the
/// attention weights `[B*H, Tq, Tk]`.
#[allow(clippy::too_many_arguments)]
pub fn attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    b: usize,
    tq: usize,
    tk: usize,
    heads: usize,
    visible: impl Fn(usize, usize, usize) -> bool,
) -> Result<(Var, Var), TensorError> {
    let d = tape.shape(q)[1];
    if !d.is_multiple_of(heads) {
        return Err(TensorError::Invalid(format!("{heads} heads do not divide width {d}")));
    }
    let qh = split_heads(tape, q, b, tq, heads)?;
    let kh = split_heads(tape, k, b, tk, heads)?;
    let vh = split_heads(tape, v, b, tk, heads)?;
    let scores = tape.bmm_nt(qh, kh)?;
    let scores = tape.scale(scores, 1.0 / ((d / heads) as f64).sqrt());
    let mut mask = Vec::with_capacity(b * heads * tq * tk);
    for bi in 0..b {
        let mut block = Vec::with_capacity(tq * tk);
        for i in 0..tq {
            for j in 0..tk {
                block.push(visible(bi, i, j));
            }
        }
        for _ in 0..heads {
            mask.extend_from_slice(&block);
        }
    }
    let att = tape.softmax_masked(scores, 2, &mask)?;
    let out = tape.bmm(att, vh)?;
    Ok((merge_heads(tape, out, b, heads)?, att))
}

/// Multi-head attention with its four projections.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        d: usize,
        heads: usize,
    ) -> Result<Self, TensorError> {
        Ok(Self {
            q: Linear::new(store, rng, &format!("{name}.q"), d, d, true)?,
            k: Linear::new(store, rng, &format!("{name}.k"), d, d, true)?,
            v: Linear::new(store, rng, &format!("{name}.v"), d, d, true)?,
            o: Linear::new(store, rng, &format!("{name}.o"), d, d, true)?,
            heads,
        })
    }

    /// Attention of `xq` (`[B*Tq, d]`) over `xkv` (`[B*Tk, d]`).
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        xq: Var,
        xkv: Var,
        b: usize,
        tq: usize,
        tk: usize,
        visible: impl Fn(usize, usize, usize) -> bool,
    ) -> Result<Var, TensorError> {
        let q = self.q.forward(tape, store, xq)?;
        let k = self.k.forward(tape, store, xkv)?;
        let v = self.v.forward(tape, store, xkv)?;
        let (out, _) = attention(tape, q, k, v, b, tq, tk, self.heads, visible)?;
        self.o.forward(tape, store, out)
    }
}
