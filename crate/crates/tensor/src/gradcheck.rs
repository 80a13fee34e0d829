//! Central finite-difference checks of tape gradients.

use crate::{ParamStore, Tape, Tensor, TensorError, Var};

/// Largest elementwise relative error between an analytic gradient and a
/// finite-difference estimate, with denominator `max(|a|, |fd|, 1e-8)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, fd)| (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

fn scalar_of(tape: &Tape, v: Var) -> Result<f64, TensorError> {
    tape.value(v)
        .item()
        .ok_or_else(|| TensorError::NotScalar(tape.shape(v).to_vec()))
}

/// Compare tape gradients of `f` at `point` against central differences
/// with step `eps`, over every entry of every input tensor.
///
/// Inputs fed into a kinked op (signed square root, ReLU) must sit well
/// away from the kink relative to `eps` for the comparison to mean
/// anything.
pub fn grad_check<F, E>(f: F, point: &[Tensor], eps: f64) -> Result<f64, E>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
    E: From<TensorError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = point.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let mut analytic = Vec::new();
    for &v in &vars {
        analytic.extend_from_slice(grads.get_or_zeros(v).data());
    }

    let eval = |pts: &[Tensor]| -> Result<f64, E> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = pts.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(scalar_of(&tape, out)?)
    };

    let mut numeric = Vec::with_capacity(analytic.len());
    let mut pts = point.to_vec();
    for ti in 0..pts.len() {
        for j in 0..pts[ti].numel() {
            let orig = pts[ti].data()[j];
            pts[ti].data_mut()[j] = orig + eps;
            let plus = eval(&pts)?;
            pts[ti].data_mut()[j] = orig - eps;
            let minus = eval(&pts)?;
            pts[ti].data_mut()[j] = orig;
            numeric.push((plus - minus) / (2.0 * eps));
        }
    }
    Ok(max_relative_error(&analytic, &numeric))
}

/// Like [`grad_check`], but perturbs every trainable parameter of `store`.
/// Frozen parameters are held fixed and must receive a zero gradient.
pub fn grad_check_params<F, E>(f: F, store: &ParamStore, eps: f64) -> Result<f64, E>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var, E>,
    E: From<TensorError>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let grads = tape.backward(loss)?;
    let mut analytic = Vec::new();
    for (id, p) in store.iter() {
        if !p.trainable {
            continue;
        }
        match tape.bound_param(id) {
            Some(v) => analytic.extend_from_slice(grads.get_or_zeros(v).data()),
            None => analytic.extend(std::iter::repeat_n(0.0, p.tensor.numel())),
        }
    }

    let eval = |s: &ParamStore| -> Result<f64, E> {
        let mut tape = Tape::new();
        let out = f(&mut tape, s)?;
        Ok(scalar_of(&tape, out)?)
    };

    let mut work = store.clone();
    let mut numeric = Vec::with_capacity(analytic.len());
    let ids: Vec<_> = store.ids().filter(|&id| store.get(id).trainable).collect();
    for id in ids {
        for j in 0..work.get(id).tensor.numel() {
            let orig = work.get(id).tensor.data()[j];
            work.get_mut(id).tensor.data_mut()[j] = orig + eps;
            let plus = eval(&work)?;
            work.get_mut(id).tensor.data_mut()[j] = orig - eps;
            let minus = eval(&work)?;
            work.get_mut(id).tensor.data_mut()[j] = orig;
            numeric.push((plus - minus) / (2.0 * eps));
        }
    }
    Ok(max_relative_error(&analytic, &numeric))
}

/// One registered primitive-op check: input shapes and the op under test.
#[derive(Clone, Copy)]
pub struct OpCheck {
    pub name: &'static str,
    pub shapes: &'static [&'static [usize]],
    pub op: fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
}

impl std::fmt::Debug for OpCheck {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OpCheck").field("name", &self.name).field("shapes", &self.shapes).finish()
    }
}

/// Every differentiable op on [`Tape`], each with a small fixed input shape.
pub fn op_checks() -> Vec<OpCheck> {
    macro_rules! check {
        ($name:expr, [$($s:expr),*], $op:expr) => {
            OpCheck { name: $name, shapes: &[$(&$s),*], op: $op }
        };
    }
    vec![
        check!("matmul", [[3, 4], [4, 2]], |t, v| t.matmul(v[0], v[1])),
        check!("matmul_nt", [[3, 4], [2, 4]], |t, v| t.matmul_nt(v[0], v[1])),
        check!("bmm", [[2, 3, 4], [2, 4, 2]], |t, v| t.bmm(v[0], v[1])),
        check!("bmm_nt", [[2, 3, 4], [2, 5, 4]], |t, v| t.bmm_nt(v[0], v[1])),
        check!("add", [[2, 3], [2, 3]], |t, v| t.add(v[0], v[1])),
        check!("sub", [[2, 3], [2, 3]], |t, v| t.sub(v[0], v[1])),
        check!("mul", [[2, 3], [2, 3]], |t, v| t.mul(v[0], v[1])),
        check!("scale", [[2, 3]], |t, v| Ok(t.scale(v[0], -1.7))),
        check!("add_bias", [[4, 3], [3]], |t, v| t.add_bias(v[0], v[1])),
        check!("relu", [[3, 3]], |t, v| Ok(t.relu(v[0]))),
        check!("signed_sqrt", [[3, 3]], |t, v| Ok(t.signed_sqrt(v[0]))),
        check!("softmax_last", [[3, 4]], |t, v| t.softmax(v[0], 1)),
        check!("softmax_mid", [[2, 3, 2]], |t, v| t.softmax(v[0], 1)),
        check!("softmax_masked", [[3, 3]], |t, v| {
            let vis = [true, false, false, true, true, false, true, true, true];
            t.softmax_masked(v[0], 1, &vis)
        }),
        check!("layer_norm", [[3, 5], [5], [5]], |t, v| t.layer_norm(v[0], v[1], v[2])),
        check!("gather_rows", [[4, 3]], |t, v| t.gather_rows(v[0], &[2, 0, 2, 3])),
        check!("concat0", [[2, 3], [1, 3]], |t, v| t.concat(&[v[0], v[1]], 0)),
        check!("concat1", [[2, 3], [2, 2]], |t, v| t.concat(&[v[0], v[1]], 1)),
        check!("mean", [[2, 3, 4]], |t, v| t.mean(v[0], 1)),
        check!("sum", [[2, 3]], |t, v| Ok(t.sum(v[0]))),
        check!("reshape", [[2, 6]], |t, v| t.reshape(v[0], &[3, 4])),
        check!("permute", [[2, 3, 4]], |t, v| t.permute(v[0], &[2, 0, 1])),
        check!("transpose", [[3, 4]], |t, v| t.transpose(v[0])),
        check!("block_diag", [[3, 2, 2]], |t, v| t.block_diag(v[0])),
        check!("linear", [[3, 4], [4, 2], [2]], |t, v| t.linear(v[0], v[1], Some(v[2]))),
        check!("cross_entropy", [[3, 5]], |t, v| t.cross_entropy(v[0], &[Some(4), Some(0), None])),
    ]
}

/// Reduce `out` to a scalar with fixed pseudo-random weights so every
/// output entry contributes with an O(1) coefficient.
pub fn project(tape: &mut Tape, out: Var) -> Result<Var, TensorError> {
    let shape = tape.shape(out).to_vec();
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.7 + 0.3).sin() + 0.1).collect();
    let w = tape.constant(Tensor::new(shape, w)?);
    let p = tape.mul(out, w)?;
    Ok(tape.sum(p))
}

/// Random tensor whose entries have magnitude in `[margin, 1.5)`.
pub fn away_from_zero<R: rand::Rng + ?Sized>(shape: &[usize], margin: f64, rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(margin..1.5);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

/// Worst relative error of `check` over `trials` random points. Inputs stay
/// 0.05 away from zero so kinked ops are probed off their kink.
pub fn run_op_check<R: rand::Rng + ?Sized>(check: &OpCheck, trials: usize, eps: f64, rng: &mut R) -> Result<f64, TensorError> {
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let point: Vec<Tensor> = check.shapes.iter().map(|s| away_from_zero(s, 0.05, rng)).collect();
        let err = grad_check(
            |tape, v| {
                let out = (check.op)(tape, v)?;
                project(tape, out)
            },
            &point,
            eps,
        )?;
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(max_relative_error(&[0.0], &[0.0]), 0.0);
        assert!((max_relative_error(&[1e-9], &[0.0]) - 0.1).abs() < 1e-12);
        assert!((max_relative_error(&[2.0], &[1.0]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn quadratic_is_exact() {
        let x = Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let err = grad_check::<_, TensorError>(
            |t, v| {
                let sq = t.mul(v[0], v[0])?;
                Ok(t.sum(sq))
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }
}
