//! Structure understanding: RRWP positional encoding and a stack of
//! edge-aware graph-transformer layers applied to every `(l, k)` slice of
//! the node representations, followed by pooling.

use graphllm_tensor::{ParamId, ParamStore, Tape, Tensor, Var};
use rand::Rng;

use crate::error::ModelError;
use crate::graph::Rrwp;
use crate::nn::{FeedForward, LayerNorm, Linear};
use crate::task::Pooling;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphTransformerConfig {
    pub d: usize,
    pub heads: usize,
    pub layers: usize,
    /// Random-walk length `C`.
    pub walk_len: usize,
    pub ffn_mult: usize,
    /// Also aggregate the updated pair states into each node, weighted by
    /// the same attention: `sum_j alpha_ij W_Ev e_hat_ij`.
    pub edge_values: bool,
}

/// `Φ`: a two-layer ReLU map from `C` walk probabilities to width `d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PositionalEncoder {
    pub first: Linear,
    pub second: Linear,
}

impl PositionalEncoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, walk_len: usize, d: usize) -> Result<Self, ModelError> {
        Ok(Self {
            first: Linear::new(store, rng, "gt.phi1", walk_len, d, true)?,
            second: Linear::new(store, rng, "gt.phi2", d, d, true)?,
        })
    }

    /// `e[i][j] = Φ(R[i][j])`, returned as `[n*n, d]` with rows `(i, j)`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, rrwp: &Rrwp) -> Result<Var, ModelError> {
        let r = tape.constant(rrwp.pair_matrix());
        let x = self.first.forward(tape, store, r)?;
        let x = tape.relu(x);
        Ok(self.second.forward(tape, store, x)?)
    }
}

/// One graph-transformer layer. Per-head `d_h x d_h` weights are stored as
/// `[heads, d_h, d_h]` and applied as block-diagonal `d x d` maps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GtLayer {
    pub index: usize,
    pub heads: usize,
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_ew: ParamId,
    pub w_eb: ParamId,
    /// `[heads, d_h, 1]`
    pub w_a: ParamId,
    pub w_ev: Option<ParamId>,
    pub out_h: Linear,
    pub out_e: Linear,
    pub ln_h1: LayerNorm,
    pub ln_e1: LayerNorm,
    pub ffn_h: FeedForward,
    pub ffn_e: FeedForward,
    pub ln_h2: LayerNorm,
    pub ln_e2: LayerNorm,
}

/// Outputs of [`GtLayer::forward`].
#[derive(Debug, Clone, Copy)]
pub struct GtLayerOutput {
    /// `[S*n, d]`
    pub h: Var,
    /// `[S*n*n, d]`
    pub e: Var,
    /// Attention weights `[S, n, n, heads]`, normalised over the third axis.
    pub alpha: Var,
    /// Attention output per node before `W_O`, residual and normalisation.
    pub aggregated: Var,
}

fn first_bad_column(t: &Tensor) -> Option<usize> {
    let cols = *t.shape().last()?;
    t.data().iter().position(|v| !v.is_finite()).map(|p| p % cols)
}

impl GtLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        index: usize,
        cfg: &GraphTransformerConfig,
    ) -> Result<Self, ModelError> {
        let (d, h) = (cfg.d, cfg.heads);
        let dh = d / h;
        let std = 1.0 / (dh as f64).sqrt();
        let name = |s: &str| format!("gt.layer{index}.{s}");
        let mut per_head = |s: &str, cols: usize| store.add(name(s), Tensor::randn(&[h, dh, cols], std, rng), true);
        let w_q = per_head("w_q", dh)?;
        let w_k = per_head("w_k", dh)?;
        let w_v = per_head("w_v", dh)?;
        let w_ew = per_head("w_ew", dh)?;
        let w_eb = per_head("w_eb", dh)?;
        let w_a = per_head("w_a", 1)?;
        let w_ev = if cfg.edge_values { Some(per_head("w_ev", dh)?) } else { None };
        let hidden = d * cfg.ffn_mult;
        Ok(Self {
            index,
            heads: h,
            w_q,
            w_k,
            w_v,
            w_ew,
            w_eb,
            w_a,
            w_ev,
            out_h: Linear::new(store, rng, &name("out_h"), d, d, true)?,
            out_e: Linear::new(store, rng, &name("out_e"), d, d, true)?,
            ln_h1: LayerNorm::new(store, &name("ln_h1"), d)?,
            ln_e1: LayerNorm::new(store, &name("ln_e1"), d)?,
            ffn_h: FeedForward::new(store, rng, &name("ffn_h"), d, hidden)?,
            ffn_e: FeedForward::new(store, rng, &name("ffn_e"), d, hidden)?,
            ln_h2: LayerNorm::new(store, &name("ln_h2"), d)?,
            ln_e2: LayerNorm::new(store, &name("ln_e2"), d)?,
        })
    }

    fn block(&self, tape: &mut Tape, store: &ParamStore, id: ParamId) -> Result<Var, ModelError> {
        let w = tape.param(store, id);
        Ok(tape.block_diag(w)?)
    }

    fn ensure_finite(&self, tape: &Tape, v: Var, cols_per_head: usize) -> Result<(), ModelError> {
        match first_bad_column(tape.value(v)) {
            None => Ok(()),
            Some(col) => Err(ModelError::NonFinite {
                layer: self.index,
                head: col / cols_per_head,
            }),
        }
    }

    /// Process `s` independent slices of `n` nodes at once. `h` is
    /// `[s*n, d]` (slice-major) and `e` is `[s*n*n, d]` (rows `(s, i, j)`).
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h: Var,
        e: Var,
        s: usize,
        n: usize,
    ) -> Result<GtLayerOutput, ModelError> {
        let d = tape.shape(h)[1];
        let heads = self.heads;
        let dh = d / heads;
        let wq = self.block(tape, store, self.w_q)?;
        let wk = self.block(tape, store, self.w_k)?;
        let wv = self.block(tape, store, self.w_v)?;
        let wew = self.block(tape, store, self.w_ew)?;
        let web = self.block(tape, store, self.w_eb)?;
        let wa = self.block(tape, store, self.w_a)?;

        let qh = tape.matmul(h, wq)?;
        let kh = tape.matmul(h, wk)?;
        let vh = tape.matmul(h, wv)?;
        let mut idx_i = Vec::with_capacity(s * n * n);
        let mut idx_j = Vec::with_capacity(s * n * n);
        for si in 0..s {
            for i in 0..n {
                for j in 0..n {
                    idx_i.push(si * n + i);
                    idx_j.push(si * n + j);
                }
            }
        }
        let qi = tape.gather_rows(qh, &idx_i)?;
        let kj = tape.gather_rows(kh, &idx_j)?;
        let qk = tape.add(qi, kj)?;
        let ew = tape.matmul(e, wew)?;
        let gated = tape.mul(qk, ew)?;
        let rooted = tape.signed_sqrt(gated);
        let eb = tape.matmul(e, web)?;
        let pre = tape.add(rooted, eb)?;
        self.ensure_finite(tape, pre, dh)?;
        let e_hat = tape.relu(pre);

        let logits = tape.matmul(e_hat, wa)?;
        self.ensure_finite(tape, logits, 1)?;
        let logits = tape.reshape(logits, &[s, n, n, heads])?;
        let alpha = tape.softmax(logits, 2)?;

        let a = tape.permute(alpha, &[0, 3, 1, 2])?;
        let a = tape.reshape(a, &[s * heads, n, n])?;
        let v = tape.reshape(vh, &[s, n, heads, dh])?;
        let v = tape.permute(v, &[0, 2, 1, 3])?;
        let v = tape.reshape(v, &[s * heads, n, dh])?;
        let agg = tape.bmm(a, v)?;
        let agg = tape.reshape(agg, &[s, heads, n, dh])?;
        let agg = tape.permute(agg, &[0, 2, 1, 3])?;
        let mut aggregated = tape.reshape(agg, &[s * n, d])?;
        if let Some(w_ev) = self.w_ev {
            let wev = self.block(tape, store, w_ev)?;
            let x = tape.matmul(e_hat, wev)?;
            let x = tape.reshape(x, &[s, n, n, heads, dh])?;
            let x = tape.permute(x, &[0, 1, 3, 2, 4])?;
            let x = tape.reshape(x, &[s * n * heads, n, dh])?;
            let a = tape.permute(alpha, &[0, 1, 3, 2])?;
            let a = tape.reshape(a, &[s * n * heads, 1, n])?;
            let ev = tape.bmm(a, x)?;
            let ev = tape.reshape(ev, &[s * n, d])?;
            aggregated = tape.add(aggregated, ev)?;
        }

        let oh = self.out_h.forward(tape, store, aggregated)?;
        let h1 = tape.add(oh, h)?;
        let h1 = self.ln_h1.forward(tape, store, h1)?;
        let oe = self.out_e.forward(tape, store, e_hat)?;
        let e1 = tape.add(oe, e)?;
        let e1 = self.ln_e1.forward(tape, store, e1)?;

        let fh = self.ffn_h.forward(tape, store, h1)?;
        let h2 = tape.add(fh, h1)?;
        let h2 = self.ln_h2.forward(tape, store, h2)?;
        let fe = self.ffn_e.forward(tape, store, e1)?;
        let e2 = tape.add(fe, e1)?;
        let e2 = self.ln_e2.forward(tape, store, e2)?;
        self.ensure_finite(tape, h2, dh)?;
        self.ensure_finite(tape, e2, dh)?;
        Ok(GtLayerOutput {
            h: h2,
            e: e2,
            alpha,
            aggregated,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphTransformer {
    pub cfg: GraphTransformerConfig,
    pub phi: PositionalEncoder,
    pub layers: Vec<GtLayer>,
}

impl GraphTransformer {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, cfg: GraphTransformerConfig) -> Result<Self, ModelError> {
        if cfg.d == 0 || cfg.heads == 0 || !cfg.d.is_multiple_of(cfg.heads) {
            return Err(ModelError::Config(format!("{} heads must divide width {}", cfg.heads, cfg.d)));
        }
        if cfg.walk_len == 0 {
            return Err(ModelError::Config("walk length must be at least 1".into()));
        }
        let phi = PositionalEncoder::new(store, rng, cfg.walk_len, cfg.d)?;
        let layers = (0..cfg.layers)
            .map(|i| GtLayer::new(store, rng, i, &cfg))
            .collect::<Result<_, _>>()?;
        Ok(Self { cfg, phi, layers })
    }

    /// Run every `(l, k)` slice of `nodes` (`[n, L, K, d]`) through the
    /// layer stack with shared weights; `e` restarts from `Φ(R)` for each
    /// slice. Returns `[n, L, K, d]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, nodes: Var, rrwp: &Rrwp) -> Result<Var, ModelError> {
        let shape = tape.shape(nodes).to_vec();
        if shape.len() != 4 || shape[3] != self.cfg.d || shape[0] != rrwp.n() {
            return Err(ModelError::GraphRepShape {
                expected: vec![rrwp.n(), 0, 0, self.cfg.d],
                got: shape,
            });
        }
        if rrwp.walk_len() != self.cfg.walk_len {
            return Err(ModelError::Config(format!(
                "RRWP has walk length {}, model expects {}",
                rrwp.walk_len(),
                self.cfg.walk_len
            )));
        }
        if self.layers.is_empty() {
            return Ok(nodes);
        }
        let (n, l, k, d) = (shape[0], shape[1], shape[2], shape[3]);
        let s = l * k;
        let h = tape.reshape(nodes, &[n, s, d])?;
        let h = tape.permute(h, &[1, 0, 2])?;
        let mut h = tape.reshape(h, &[s * n, d])?;
        let e0 = self.phi.forward(tape, store, rrwp)?;
        let tile: Vec<usize> = (0..s).flat_map(|_| 0..n * n).collect();
        let mut e = tape.gather_rows(e0, &tile)?;
        for layer in &self.layers {
            let out = layer.forward(tape, store, h, e, s, n)?;
            h = out.h;
            e = out.e;
        }
        let h = tape.reshape(h, &[s, n, d])?;
        let h = tape.permute(h, &[1, 0, 2])?;
        Ok(tape.reshape(h, &[n, l, k, d])?)
    }
}

/// Collapse `[n, L, K, d]` node representations to `[L, K, d]`: the mean
/// over anchors in anchor mode, over all nodes in mean mode.
pub fn pool(tape: &mut Tape, nodes: Var, mode: Pooling, anchors: &[usize]) -> Result<Var, ModelError> {
    let n = tape.shape(nodes)[0];
    if n == 0 {
        return Err(ModelError::EmptyGraph);
    }
    match mode {
        Pooling::Mean => Ok(tape.mean(nodes, 0)?),
        Pooling::Anchor => {
            if anchors.is_empty() {
                return Err(ModelError::Config("anchor pooling needs at least one anchor".into()));
            }
            if let Some(&a) = anchors.iter().find(|&&a| a >= n) {
                return Err(ModelError::InvalidAnchor { anchor: a, n });
            }
            let picked = tape.gather_rows(nodes, anchors)?;
            Ok(tape.mean(picked, 0)?)
        }
    }
}
