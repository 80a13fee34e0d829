//! The differentiation tape.
//!
//! A [`Tape`] owns every intermediate value of one forward evaluation. Ops
//! append nodes in execution order, so the node list is already a
//! topological order and [`Tape::backward`] is a single reverse sweep.

use std::collections::HashMap;

use crate::gemm::gemm;
use crate::tensor::axis_extents;
use crate::{ParamId, ParamStore, Tensor, TensorError, LAYER_NORM_EPS};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        ta: bool,
        tb: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias {
        x: Var,
        bias: Var,
    },
    Relu(Var),
    SignedSqrt(Var),
    Softmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    GatherRows {
        table: Var,
        idx: Vec<usize>,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Mean {
        x: Var,
        axis: usize,
    },
    Sum(Var),
    Reshape(Var),
    Permute {
        x: Var,
        axes: Vec<usize>,
    },
    BlockDiag {
        x: Var,
        blocks: usize,
        rows: usize,
        cols: usize,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of executed ops.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bound: HashMap<ParamId, Var>,
    min_sqrt_input: f64,
    min_relu_input: f64,
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; `None` when `v` does not
    /// require a gradient or the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::new(self.shapes[v.0].clone(), g.clone()).expect("grad shape"))
    }

    /// Gradient of `v`, or zeros of the right shape.
    pub fn get_or_zeros(&self, v: Var) -> Tensor {
        self.get(v)
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            bound: HashMap::new(),
            min_sqrt_input: f64::INFINITY,
            min_relu_input: f64::INFINITY,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Smallest `|x|` fed into [`Tape::signed_sqrt`] so far.
    pub fn min_signed_sqrt_input(&self) -> f64 {
        self.min_sqrt_input
    }

    /// Smallest `|x|` fed into [`Tape::relu`] so far.
    pub fn min_relu_input(&self) -> f64 {
        self.min_relu_input
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Bind a parameter onto the tape. Binding the same id twice returns
    /// the same node, so shared weights accumulate one gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let p = store.get(id);
        let v = self.leaf(p.tensor.clone(), p.trainable);
        self.bound.insert(id, v);
        v
    }

    /// Bind a parameter by name.
    pub fn param_named(&mut self, store: &ParamStore, name: &str) -> Result<Var, TensorError> {
        let id = store
            .id(name)
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))?;
        Ok(self.param(store, id))
    }

    /// The node a parameter was bound to, if any.
    pub fn bound_param(&self, id: ParamId) -> Option<Var> {
        self.bound.get(&id).copied()
    }

    // ---------------------------------------------------------------- linear algebra

    fn matmul_impl(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var, TensorError> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        let (batch, ra, ca, rb, cb) = match (sa.len(), sb.len()) {
            (2, 2) => (1, sa[0], sa[1], sb[0], sb[1]),
            (3, 3) if sa[0] == sb[0] => (sa[0], sa[1], sa[2], sb[1], sb[2]),
            _ => return Err(mismatch()),
        };
        let (m, k) = if ta { (ca, ra) } else { (ra, ca) };
        let (k2, n) = if tb { (cb, rb) } else { (rb, cb) };
        if k != k2 {
            return Err(mismatch());
        }
        let mut out = vec![0.0; batch * m * n];
        {
            let av = self.value(a).data();
            let bv = self.value(b).data();
            for bi in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    &av[bi * m * k..(bi + 1) * m * k],
                    ta,
                    &bv[bi * k * n..(bi + 1) * k * n],
                    tb,
                    0.0,
                    &mut out[bi * m * n..(bi + 1) * m * n],
                );
            }
        }
        let shape = if sa.len() == 2 {
            vec![m, n]
        } else {
            vec![batch, m, n]
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                ta,
                tb,
            },
            rg,
        ))
    }

    /// `a @ b` for 2-D operands.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.check_rank("matmul", a, b, 2)?;
        self.matmul_impl(a, b, false, false)
    }

    /// `a @ b^T` for 2-D operands.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.check_rank("matmul_nt", a, b, 2)?;
        self.matmul_impl(a, b, false, true)
    }

    /// Batched `a[i] @ b[i]` for 3-D operands.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.check_rank("bmm", a, b, 3)?;
        self.matmul_impl(a, b, false, false)
    }

    /// Batched `a[i] @ b[i]^T` for 3-D operands.
    pub fn bmm_nt(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.check_rank("bmm_nt", a, b, 3)?;
        self.matmul_impl(a, b, false, true)
    }

    fn check_rank(&self, op: &'static str, a: Var, b: Var, rank: usize) -> Result<(), TensorError> {
        if self.shape(a).len() != rank || self.shape(b).len() != rank {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    /// `x @ w (+ bias)` where `x` is `[rows, in]` and `w` is `[in, out]`.
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var, TensorError> {
        let y = self.matmul(x, w)?;
        match bias {
            Some(b) => self.add_bias(y, b),
            None => Ok(y),
        }
    }

    // ---------------------------------------------------------------- elementwise

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn zip_map(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(&[a, b]);
        self.push(value, op, rg)
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_map(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_map(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_map(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.map(a, Op::Scale(a, s), |x| x * s)
    }

    /// Add a `[n]` bias to every length-`n` row along the last axis.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let sx = self.shape(x);
        let sb = self.shape(bias);
        if sb.len() != 1 || sx.last() != Some(&sb[0]) {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: sx.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let n = sb[0];
        let bv = self.value(bias).data().to_vec();
        let mut value = self.value(x).clone();
        for row in value.data_mut().chunks_exact_mut(n) {
            for (v, b) in row.iter_mut().zip(&bv) {
                *v += b;
            }
        }
        let rg = self.rg(&[x, bias]);
        Ok(self.push(value, Op::AddBias { x, bias }, rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let m = self
            .value(a)
            .data()
            .iter()
            .fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
        self.min_relu_input = self.min_relu_input.min(m);
        self.map(a, Op::Relu(a), |x| x.max(0.0))
    }

    /// Signed square root `sqrt(relu(x)) - sqrt(relu(-x))`.
    pub fn signed_sqrt(&mut self, a: Var) -> Var {
        let m = self
            .value(a)
            .data()
            .iter()
            .fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
        self.min_sqrt_input = self.min_sqrt_input.min(m);
        self.map(a, Op::SignedSqrt(a), signed_sqrt)
    }

    // ---------------------------------------------------------------- reductions & normalization

    fn check_axis(&self, op: &'static str, x: Var, axis: usize) -> Result<(), TensorError> {
        if axis >= self.shape(x).len() {
            return Err(TensorError::InvalidAxis {
                op,
                axis,
                shape: self.shape(x).to_vec(),
            });
        }
        Ok(())
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        self.softmax_impl(x, axis, None)
    }

    /// Softmax along `axis` where entries with `visible[i] == false` get
    /// probability exactly zero. A slice with no visible entry yields zeros.
    pub fn softmax_masked(
        &mut self,
        x: Var,
        axis: usize,
        visible: &[bool],
    ) -> Result<Var, TensorError> {
        if visible.len() != self.value(x).numel() {
            return Err(TensorError::ShapeMismatch {
                op: "softmax_masked",
                lhs: self.shape(x).to_vec(),
                rhs: vec![visible.len()],
            });
        }
        self.softmax_impl(x, axis, Some(visible))
    }

    fn softmax_impl(
        &mut self,
        x: Var,
        axis: usize,
        visible: Option<&[bool]>,
    ) -> Result<Var, TensorError> {
        self.check_axis("softmax", x, axis)?;
        let shape = self.shape(x).to_vec();
        let (outer, len, inner) = axis_extents(&shape, axis);
        if len == 0 {
            return Err(TensorError::InvalidAxis {
                op: "softmax",
                axis,
                shape,
            });
        }
        let xv = self.value(x).data();
        let mut out = vec![0.0; xv.len()];
        let vis = |i: usize| visible.is_none_or(|m| m[i]);
        for o in 0..outer {
            for inn in 0..inner {
                let base = o * len * inner + inn;
                let mut max = f64::NEG_INFINITY;
                for t in 0..len {
                    let i = base + t * inner;
                    if vis(i) {
                        max = max.max(xv[i]);
                    }
                }
                if max == f64::NEG_INFINITY {
                    continue;
                }
                let mut sum = 0.0;
                for t in 0..len {
                    let i = base + t * inner;
                    if vis(i) {
                        let e = (xv[i] - max).exp();
                        out[i] = e;
                        sum += e;
                    }
                }
                for t in 0..len {
                    out[base + t * inner] /= sum;
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Softmax {
                x,
                outer,
                len,
                inner,
            },
            rg,
        ))
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().ok_or(TensorError::InvalidAxis {
            op: "layer_norm",
            axis: 0,
            shape: shape.clone(),
        })?;
        for p in [gamma, beta] {
            if self.shape(p) != [n] {
                return Err(TensorError::ShapeMismatch {
                    op: "layer_norm",
                    lhs: shape.clone(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let xv = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let rows = xv.len() / n.max(1);
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[r * n + j] = h;
                out[r * n + j] = h * g[j] + b[j];
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Mean along `axis`; the axis is removed from the shape.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        self.check_axis("mean", x, axis)?;
        let shape = self.shape(x).to_vec();
        let (outer, len, inner) = axis_extents(&shape, axis);
        let xv = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for t in 0..len {
                let src = &xv[(o * len + t) * inner..(o * len + t + 1) * inner];
                for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let denom = len as f64;
        out.iter_mut().for_each(|v| *v /= denom);
        let mut oshape = shape;
        oshape.remove(axis);
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(oshape, out)?, Op::Mean { x, axis }, rg))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Summed token-level cross-entropy of `logits` (`[rows, classes]`)
    /// against `targets`; `None` rows are excluded and get zero gradient.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[Option<usize>],
    ) -> Result<Var, TensorError> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != targets.len() {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                lhs: shape,
                rhs: vec![targets.len()],
            });
        }
        let classes = shape[1];
        let lv = self.value(logits).data();
        let mut probs = vec![0.0; lv.len()];
        let mut loss = 0.0;
        for (r, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            if t >= classes {
                return Err(TensorError::IndexOutOfRange {
                    op: "cross_entropy",
                    index: t,
                    len: classes,
                });
            }
            let row = &lv[r * classes..(r + 1) * classes];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            loss += lse - row[t];
            for (p, v) in probs[r * classes..(r + 1) * classes].iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    // ---------------------------------------------------------------- indexing & layout

    /// Rows of `table` (indexed along axis 0) selected by `idx`.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var, TensorError> {
        let shape = self.shape(table).to_vec();
        if shape.is_empty() {
            return Err(TensorError::InvalidAxis {
                op: "gather_rows",
                axis: 0,
                shape,
            });
        }
        let rows = shape[0];
        let width: usize = shape[1..].iter().product();
        let tv = self.value(table).data();
        let mut out = Vec::with_capacity(idx.len() * width);
        for &i in idx {
            if i >= rows {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_rows",
                    index: i,
                    len: rows,
                });
            }
            out.extend_from_slice(&tv[i * width..(i + 1) * width]);
        }
        let mut oshape = shape;
        oshape[0] = idx.len();
        let rg = self.rg(&[table]);
        Ok(self.push(
            Tensor::new(oshape, out)?,
            Op::GatherRows {
                table,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = *parts.first().ok_or_else(|| {
            TensorError::Invalid("concat needs at least one part".to_string())
        })?;
        self.check_axis("concat", first, axis)?;
        let base = self.shape(first).to_vec();
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let ok = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis];
                let pv = self.value(p).data();
                out.extend_from_slice(&pv[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut oshape = base;
        oshape[axis] = total;
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::new(oshape, out)?,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Reorder axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() {
            return Err(TensorError::ShapeMismatch {
                op: "permute",
                lhs: shape,
                rhs: axes.to_vec(),
            });
        }
        for &a in axes {
            if a >= shape.len() || seen[a] {
                return Err(TensorError::InvalidAxis {
                    op: "permute",
                    axis: a,
                    shape,
                });
            }
            seen[a] = true;
        }
        let (oshape, out) = permute_data(&shape, self.value(x).data(), axes);
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::new(oshape, out)?,
            Op::Permute {
                x,
                axes: axes.to_vec(),
            },
            rg,
        ))
    }

    /// Swap the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        let r = self.shape(x).len();
        if r < 2 {
            return Err(TensorError::InvalidAxis {
                op: "transpose",
                axis: 1,
                shape: self.shape(x).to_vec(),
            });
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(x, &axes)
    }

    /// Assemble `[blocks, rows, cols]` into a `[blocks*rows, blocks*cols]`
    /// block-diagonal matrix.
    pub fn block_diag(&mut self, x: Var) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 {
            return Err(TensorError::ShapeMismatch {
                op: "block_diag",
                lhs: shape,
                rhs: vec![],
            });
        }
        let (blocks, rows, cols) = (shape[0], shape[1], shape[2]);
        let width = blocks * cols;
        let xv = self.value(x).data();
        let mut out = vec![0.0; blocks * rows * width];
        for b in 0..blocks {
            for r in 0..rows {
                let src = &xv[(b * rows + r) * cols..(b * rows + r + 1) * cols];
                let dst = (b * rows + r) * width + b * cols;
                out[dst..dst + cols].copy_from_slice(src);
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::new(vec![blocks * rows, width], out)?,
            Op::BlockDiag {
                x,
                blocks,
                rows,
                cols,
            },
            rg,
        ))
    }

    // ---------------------------------------------------------------- backward

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        self.backward_scaled(loss, 1.0)
    }

    /// Reverse sweep seeded with `d loss = seed`.
    pub fn backward_scaled(&self, loss: Var, seed: f64) -> Result<Gradients, TensorError> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(TensorError::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![seed]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self
                .nodes
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
        })
    }

    fn grad_slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let len = self.nodes[v.0].value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn backward_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                ta,
                tb,
            } => {
                let av = self.value(a).data();
                let bv = self.value(b).data();
                if let Some(ga) = self.grad_slot(grads, a) {
                    for bi in 0..batch {
                        let gc = &g[bi * m * n..(bi + 1) * m * n];
                        let bs = &bv[bi * k * n..(bi + 1) * k * n];
                        let out = &mut ga[bi * m * k..(bi + 1) * m * k];
                        if ta {
                            // stored [k, m] = op(B) @ gC^T
                            gemm(k, n, m, bs, tb, gc, true, 1.0, out);
                        } else {
                            // [m, k] = gC @ op(B)^T
                            gemm(m, n, k, gc, false, bs, !tb, 1.0, out);
                        }
                    }
                }
                if let Some(gb) = self.grad_slot(grads, b) {
                    for bi in 0..batch {
                        let gc = &g[bi * m * n..(bi + 1) * m * n];
                        let as_ = &av[bi * m * k..(bi + 1) * m * k];
                        let out = &mut gb[bi * k * n..(bi + 1) * k * n];
                        if tb {
                            // stored [n, k] = gC^T @ op(A)
                            gemm(n, m, k, gc, true, as_, ta, 1.0, out);
                        } else {
                            // [k, n] = op(A)^T @ gC
                            gemm(k, m, n, as_, !ta, gc, false, 1.0, out);
                        }
                    }
                }
            }
            &Op::Add(a, b) => {
                if let Some(ga) = self.grad_slot(grads, a) {
                    axpy(ga, g, 1.0);
                }
                if let Some(gb) = self.grad_slot(grads, b) {
                    axpy(gb, g, 1.0);
                }
            }
            &Op::Sub(a, b) => {
                if let Some(ga) = self.grad_slot(grads, a) {
                    axpy(ga, g, 1.0);
                }
                if let Some(gb) = self.grad_slot(grads, b) {
                    axpy(gb, g, -1.0);
                }
            }
            &Op::Mul(a, b) => {
                let av = self.value(a).data();
                let bv = self.value(b).data();
                if let Some(ga) = self.grad_slot(grads, a) {
                    for ((d, gi), y) in ga.iter_mut().zip(g).zip(bv) {
                        *d += gi * y;
                    }
                }
                if let Some(gb) = self.grad_slot(grads, b) {
                    for ((d, gi), x) in gb.iter_mut().zip(g).zip(av) {
                        *d += gi * x;
                    }
                }
            }
            &Op::Scale(a, s) => {
                if let Some(ga) = self.grad_slot(grads, a) {
                    axpy(ga, g, s);
                }
            }
            &Op::AddBias { x, bias } => {
                if let Some(gx) = self.grad_slot(grads, x) {
                    axpy(gx, g, 1.0);
                }
                if let Some(gb) = self.grad_slot(grads, bias) {
                    let n = gb.len();
                    for row in g.chunks_exact(n) {
                        axpy(gb, row, 1.0);
                    }
                }
            }
            &Op::Relu(a) => {
                let av = self.value(a).data();
                if let Some(ga) = self.grad_slot(grads, a) {
                    for ((d, gi), x) in ga.iter_mut().zip(g).zip(av) {
                        if *x > 0.0 {
                            *d += gi;
                        }
                    }
                }
            }
            &Op::SignedSqrt(a) => {
                let yv = node.value.data();
                if let Some(ga) = self.grad_slot(grads, a) {
                    for ((d, gi), y) in ga.iter_mut().zip(g).zip(yv) {
                        // d/dx sqrt(|x|) = 1 / (2 sqrt|x|) on both sides; 0 at the kink.
                        if *y != 0.0 {
                            *d += gi / (2.0 * y.abs());
                        }
                    }
                }
            }
            &Op::Softmax {
                x,
                outer,
                len,
                inner,
            } => {
                let y = node.value.data();
                if let Some(gx) = self.grad_slot(grads, x) {
                    for o in 0..outer {
                        for inn in 0..inner {
                            let base = o * len * inner + inn;
                            let mut dot = 0.0;
                            for t in 0..len {
                                let idx = base + t * inner;
                                dot += y[idx] * g[idx];
                            }
                            for t in 0..len {
                                let idx = base + t * inner;
                                gx[idx] += y[idx] * (g[idx] - dot);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let n = self.value(*gamma).numel();
                let gv = self.value(*gamma).data();
                if let Some(gg) = self.grad_slot(grads, *gamma) {
                    for (grow, hrow) in g.chunks_exact(n).zip(xhat.chunks_exact(n)) {
                        for j in 0..n {
                            gg[j] += grow[j] * hrow[j];
                        }
                    }
                }
                if let Some(gb) = self.grad_slot(grads, *beta) {
                    for grow in g.chunks_exact(n) {
                        axpy(gb, grow, 1.0);
                    }
                }
                if let Some(gx) = self.grad_slot(grads, *x) {
                    let mut dh = vec![0.0; n];
                    for (r, (grow, hrow)) in
                        g.chunks_exact(n).zip(xhat.chunks_exact(n)).enumerate()
                    {
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for j in 0..n {
                            dh[j] = grow[j] * gv[j];
                            mean_dh += dh[j];
                            mean_dh_h += dh[j] * hrow[j];
                        }
                        mean_dh /= n as f64;
                        mean_dh_h /= n as f64;
                        let out = &mut gx[r * n..(r + 1) * n];
                        for j in 0..n {
                            out[j] += inv_std[r] * (dh[j] - mean_dh - hrow[j] * mean_dh_h);
                        }
                    }
                }
            }
            Op::GatherRows { table, idx } => {
                if let Some(gt) = self.grad_slot(grads, *table) {
                    let width = if idx.is_empty() { 0 } else { g.len() / idx.len() };
                    for (r, &src) in idx.iter().enumerate() {
                        axpy(
                            &mut gt[src * width..(src + 1) * width],
                            &g[r * width..(r + 1) * width],
                            1.0,
                        );
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis];
                let mut offset = 0;
                for &p in parts {
                    let len = self.shape(p)[*axis];
                    if let Some(gp) = self.grad_slot(grads, p) {
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            axpy(
                                &mut gp[o * len * inner..(o + 1) * len * inner],
                                &g[src..src + len * inner],
                                1.0,
                            );
                        }
                    }
                    offset += len;
                }
            }
            &Op::Mean { x, axis } => {
                let (outer, len, inner) = axis_extents(self.shape(x), axis);
                if let Some(gx) = self.grad_slot(grads, x) {
                    let s = 1.0 / len as f64;
                    for o in 0..outer {
                        let src = &g[o * inner..(o + 1) * inner];
                        for t in 0..len {
                            axpy(
                                &mut gx[(o * len + t) * inner..(o * len + t + 1) * inner],
                                src,
                                s,
                            );
                        }
                    }
                }
            }
            &Op::Sum(x) => {
                if let Some(gx) = self.grad_slot(grads, x) {
                    gx.iter_mut().for_each(|v| *v += g[0]);
                }
            }
            &Op::Reshape(x) => {
                if let Some(gx) = self.grad_slot(grads, x) {
                    axpy(gx, g, 1.0);
                }
            }
            Op::Permute { x, axes } => {
                if let Some(gx) = self.grad_slot(grads, *x) {
                    let mut inverse = vec![0; axes.len()];
                    for (i, &a) in axes.iter().enumerate() {
                        inverse[a] = i;
                    }
                    let (_, back) = permute_data(node.value.shape(), g, &inverse);
                    axpy(gx, &back, 1.0);
                }
            }
            &Op::BlockDiag {
                x,
                blocks,
                rows,
                cols,
            } => {
                if let Some(gx) = self.grad_slot(grads, x) {
                    let width = blocks * cols;
                    for b in 0..blocks {
                        for r in 0..rows {
                            let src = (b * rows + r) * width + b * cols;
                            axpy(
                                &mut gx[(b * rows + r) * cols..(b * rows + r + 1) * cols],
                                &g[src..src + cols],
                                1.0,
                            );
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                if let Some(gl) = self.grad_slot(grads, *logits) {
                    let classes = self.shape(*logits)[1];
                    for (r, t) in targets.iter().enumerate() {
                        let Some(t) = *t else { continue };
                        let out = &mut gl[r * classes..(r + 1) * classes];
                        for (o, p) in out.iter_mut().zip(&probs[r * classes..(r + 1) * classes]) {
                            *o += g[0] * p;
                        }
                        out[t] -= g[0];
                    }
                }
            }
        }
    }
}

/// `sqrt(relu(x)) - sqrt(relu(-x))`.
pub fn signed_sqrt(x: f64) -> f64 {
    if x > 0.0 {
        x.sqrt()
    } else if x < 0.0 {
        -(-x).sqrt()
    } else {
        0.0
    }
}

fn axpy(dst: &mut [f64], src: &[f64], s: f64) {
    for (d, v) in dst.iter_mut().zip(src) {
        *d += s * v;
    }
}

fn permute_data(shape: &[usize], data: &[f64], axes: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let rank = shape.len();
    let oshape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let mut in_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let total = data.len();
    let mut out = Vec::with_capacity(total);
    if total == 0 {
        return (oshape, out);
    }
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..total {
        out.push(data[off]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < oshape[d] {
                break;
            }
            off -= strides[d] * oshape[d];
            idx[d] = 0;
        }
    }
    (oshape, out)
}
