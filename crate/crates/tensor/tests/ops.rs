use graphllm_tensor::gradcheck::{op_checks, project, run_op_check};
use graphllm_tensor::{grad_check, grad_check_params, ParamStore, Tape, Tensor, TensorError};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

#[test]
fn matmul_identity() {
    let mut tape = Tape::new();
    let i = tape.constant(Tensor::eye(2));
    let a = tape.constant(t(&[2, 2], &[1.5, -2.0, 3.0, 0.25]));
    let out = tape.matmul(i, a).unwrap();
    assert_eq!(tape.value(out), tape.value(a));
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[2], &[0.0, 0.0]));
    let y = tape.softmax(x, 0).unwrap();
    assert_eq!(tape.value(y).data(), &[0.5, 0.5]);
}

#[test]
fn signed_sqrt_values() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[3], &[4.0, -4.0, 0.0]));
    let y = tape.signed_sqrt(x);
    assert_eq!(tape.value(y).data(), &[2.0, -2.0, 0.0]);
}

#[test]
fn shape_mismatch_names_operation_and_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    let err = tape.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("matmul"), "{msg}");
    assert!(msg.contains("[2, 3]"), "{msg}");
    let c = tape.constant(Tensor::zeros(&[3, 2]));
    assert!(matches!(
        tape.add(a, c),
        Err(TensorError::ShapeMismatch { op: "add", .. })
    ));
}

#[test]
fn derivative_of_square() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(3.0), true);
    let y = tape.mul(x, x).unwrap();
    let g = tape.backward(y).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[6.0]);
}

#[test]
fn derivative_of_mean() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::full(&[5], 2.0), true);
    let y = tape.mean(x, 0).unwrap();
    let g = tape.backward(y).unwrap();
    for v in g.get(x).unwrap().data() {
        assert!((v - 0.2).abs() < 1e-15);
    }
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::zeros(&[2]), true);
    assert_eq!(
        tape.backward(x).unwrap_err(),
        TensorError::NotScalar(vec![2])
    );
}

#[test]
fn frozen_parameters_get_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let w = store
        .add("w", Tensor::randn(&[3, 3], 1.0, &mut rng), false)
        .unwrap();
    let b = store
        .add("b", Tensor::randn(&[3], 1.0, &mut rng), false)
        .unwrap();
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::randn(&[2, 3], 1.0, &mut rng));
    let wv = tape.param(&store, w);
    let bv = tape.param(&store, b);
    let y = tape.linear(x, wv, Some(bv)).unwrap();
    let loss = project(&mut tape, y).unwrap();
    let g = tape.backward(loss).unwrap();
    assert!(g.get(wv).is_none());
    assert!(g.get_or_zeros(wv).data().iter().all(|&v| v == 0.0));
    assert!(g.get_or_zeros(bv).data().iter().all(|&v| v == 0.0));
}

#[test]
fn single_linear_layer_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let point = vec![
        Tensor::randn(&[4, 5], 1.0, &mut rng),
        Tensor::randn(&[5, 3], 1.0, &mut rng),
        Tensor::randn(&[3], 1.0, &mut rng),
    ];
    let err = grad_check(
        |tape, v| {
            let y = tape.linear(v[0], v[1], Some(v[2]))?;
            project(tape, y)
        },
        &point,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn softmax_cross_entropy_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let point = vec![Tensor::randn(&[4, 6], 1.0, &mut rng)];
    let targets = [Some(1), None, Some(5), Some(0)];
    let err = grad_check(
        |tape, v| {
            let ce = tape.cross_entropy(v[0], &targets)?;
            let sm = tape.softmax(v[0], 1)?;
            let p = project(tape, sm)?;
            tape.add(ce, p)
        },
        &point,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn cross_entropy_masked_rows_get_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut tape = Tape::new();
    let logits = tape.leaf(Tensor::randn(&[3, 4], 1.0, &mut rng), true);
    let loss = tape.cross_entropy(logits, &[None, Some(2), None]).unwrap();
    let g = tape.backward(loss).unwrap().get(logits).unwrap();
    assert!(g.data()[0..4].iter().all(|&v| v == 0.0));
    assert!(g.data()[8..12].iter().all(|&v| v == 0.0));
    assert!(g.data()[4..8].iter().any(|&v| v != 0.0));
}

#[test]
fn params_grad_check_skips_frozen() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    store
        .add("w", Tensor::randn(&[3, 2], 1.0, &mut rng), true)
        .unwrap();
    store
        .add("frozen", Tensor::randn(&[2, 2], 1.0, &mut rng), false)
        .unwrap();
    let x = Tensor::randn(&[4, 3], 1.0, &mut rng);
    let err = grad_check_params::<_, TensorError>(
        |tape, s| {
            let xv = tape.constant(x.clone());
            let w = tape.param_named(s, "w")?;
            let f = tape.param_named(s, "frozen")?;
            let h = tape.matmul(xv, w)?;
            let h = tape.matmul(h, f)?;
            project(tape, h)
        },
        &store,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn every_op_passes_grad_check_at_twenty_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let checks = op_checks();
    assert!(checks.len() >= 26);
    for check in &checks {
        let err = run_op_check(check, 20, EPS, &mut rng).unwrap();
        assert!(err < 1e-4, "{}: {err}", check.name);
    }
}

#[test]
fn permute_round_trip() {
    let mut tape = Tape::new();
    let data: Vec<f64> = (0..24).map(f64::from).collect();
    let x = tape.constant(t(&[2, 3, 4], &data));
    let p = tape.permute(x, &[2, 0, 1]).unwrap();
    assert_eq!(tape.shape(p), &[4, 2, 3]);
    // out[k][i][j] = x[i][j][k]
    assert_eq!(tape.value(p).at(&[3, 1, 2]), tape.value(x).at(&[1, 2, 3]));
    let back = tape.permute(p, &[1, 2, 0]).unwrap();
    assert_eq!(tape.value(back), tape.value(x));
}

#[test]
fn block_diag_layout() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]));
    let y = tape.block_diag(x).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 3.0, 4.0]);
}

#[test]
fn masked_softmax_zeroes_hidden_entries_exactly() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 0.5, 0.5, 9.0]));
    let y = tape
        .softmax_masked(x, 1, &[true, true, false, false, false, false])
        .unwrap();
    let v = tape.value(y).data();
    assert_eq!(v[2], 0.0);
    assert_eq!(&v[3..], &[0.0, 0.0, 0.0]);
    assert!((v[0] + v[1] - 1.0).abs() < 1e-15);
}

#[test]
fn tracks_distance_to_kinks() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[3], &[0.5, -0.01, 2.0]));
    tape.signed_sqrt(x);
    assert_eq!(tape.min_signed_sqrt_input(), 0.01);
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(
        vals in prop::collection::vec(-50.0f64..50.0, 12),
        axis in 0usize..2,
    ) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![3, 4], vals).unwrap());
        let y = tape.softmax(x, axis).unwrap();
        let v = tape.value(y);
        prop_assert!(v.data().iter().all(|&p| p >= 0.0));
        let (outer, len) = if axis == 0 { (4, 3) } else { (3, 4) };
        for o in 0..outer {
            let s: f64 = (0..len)
                .map(|t| if axis == 0 { v.at(&[t, o]) } else { v.at(&[o, t]) })
                .sum();
            prop_assert!((s - 1.0).abs() <= 1e-12, "sum {}", s);
        }
    }

    #[test]
    fn layer_norm_standardizes_rows(
        vals in prop::collection::vec(-10.0f64..10.0, 16),
        shift in -100.0f64..100.0,
        scale in 0.5f64..20.0,
    ) {
        let row: Vec<f64> = vals.iter().map(|v| v * scale + shift).collect();
        let mean0 = row.iter().sum::<f64>() / 16.0;
        let var0 = row.iter().map(|v| (v - mean0).powi(2)).sum::<f64>() / 16.0;
        prop_assume!(var0 > 0.1);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, 16], row).unwrap());
        let g = tape.constant(Tensor::full(&[16], 1.0));
        let b = tape.constant(Tensor::zeros(&[16]));
        let y = tape.layer_norm(x, g, b).unwrap();
        let out = tape.value(y).data();
        let mean = out.iter().sum::<f64>() / 16.0;
        let var = out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        prop_assert!(mean.abs() <= 1e-10, "mean {}", mean);
        prop_assert!((var - 1.0).abs() <= 1e-8, "var {}", var);
    }
}
