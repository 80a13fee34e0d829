mod common;

use graphllm_core::graph::{permute, rrwp_raw, Graph, Permutation};
use graphllm_core::graphformer::{pool, GraphTransformer, GraphTransformerConfig, GtLayer};
use graphllm_core::task::Pooling;
use graphllm_core::ModelError;
use graphllm_tensor::{grad_check_params, ParamStore, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cfg(layers: usize) -> GraphTransformerConfig {
    GraphTransformerConfig {
        d: 8,
        heads: 2,
        layers,
        walk_len: 4,
        ffn_mult: 2,
        edge_values: false,
    }
}

fn build(layers: usize, seed: u64) -> (ParamStore, GraphTransformer) {
    let mut store = ParamStore::new();
    let gt = GraphTransformer::new(&mut store, &mut ChaCha8Rng::seed_from_u64(seed), cfg(layers)).unwrap();
    (store, gt)
}

fn run(store: &ParamStore, gt: &GraphTransformer, h: &Tensor, g: &Graph) -> Tensor {
    let mut tape = Tape::new();
    let x = tape.constant(h.clone());
    let out = gt.forward(&mut tape, store, x, &rrwp_raw(g, 4).unwrap()).unwrap();
    tape.value(out).clone()
}

/// Move node `i`'s block of `h` (`[n, ...]`) to position `perm(i)`.
fn permute_rows(h: &Tensor, perm: &Permutation) -> Tensor {
    let n = h.shape()[0];
    let w = h.numel() / n;
    let mut out = h.clone();
    for i in 0..n {
        let j = perm.apply(i);
        out.data_mut()[j * w..(j + 1) * w].copy_from_slice(&h.data()[i * w..(i + 1) * w]);
    }
    out
}

#[test]
fn single_node_attends_to_itself() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let layer = GtLayer::new(&mut store, &mut rng, 0, &cfg(1)).unwrap();
    let mut tape = Tape::new();
    let hv = Tensor::randn(&[1, 8], 1.0, &mut rng);
    let h = tape.constant(hv.clone());
    let e = tape.constant(Tensor::randn(&[1, 8], 1.0, &mut rng));
    let out = layer.forward(&mut tape, &store, h, e, 1, 1).unwrap();
    assert_eq!(tape.value(out.alpha).data(), &[1.0, 1.0]);
    // W_V applied head by head.
    let wv = &store.get(layer.w_v).tensor;
    let agg = tape.value(out.aggregated).data();
    for head in 0..2 {
        for c in 0..4 {
            let want: f64 = (0..4).map(|r| hv.data()[head * 4 + r] * wv.at(&[head, r, c])).sum();
            assert!((agg[head * 4 + c] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn symmetric_pair_gives_symmetric_attention() {
    let (store, gt) = build(1, 2);
    let g = Graph::new(2, [(0, 1)], None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let row = Tensor::randn(&[8], 1.0, &mut rng);
    let mut h = Tensor::zeros(&[2, 1, 1, 8]);
    h.data_mut()[..8].copy_from_slice(row.data());
    h.data_mut()[8..].copy_from_slice(row.data());
    let mut tape = Tape::new();
    let x = tape.constant(h.clone());
    let x = tape.reshape(x, &[2, 8]).unwrap();
    let r = rrwp_raw(&g, 4).unwrap();
    let e0 = gt.phi.forward(&mut tape, &store, &r).unwrap();
    let out = gt.layers[0].forward(&mut tape, &store, x, e0, 1, 2).unwrap();
    let a = tape.value(out.alpha);
    for head in 0..2 {
        assert!((a.at(&[0, 0, 1, head]) - a.at(&[0, 1, 0, head])).abs() < 1e-15);
        assert!((a.at(&[0, 0, 0, head]) - a.at(&[0, 1, 1, head])).abs() < 1e-15);
    }
    let hv = tape.value(out.h).data();
    for c in 0..8 {
        assert!((hv[c] - hv[8 + c]).abs() < 1e-12);
    }
}

#[test]
fn attention_rows_are_convex_weights() {
    let (store, gt) = build(1, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = common::random_graph(6, 0.4, &mut rng);
    let mut tape = Tape::new();
    let hv = Tensor::randn(&[3 * 6, 8], 1.0, &mut rng);
    let h = tape.constant(hv.clone());
    let e0 = gt.phi.forward(&mut tape, &store, &rrwp_raw(&g, 4).unwrap()).unwrap();
    let tile: Vec<usize> = (0..3).flat_map(|_| 0..36).collect();
    let e = tape.gather_rows(e0, &tile).unwrap();
    let out = gt.layers[0].forward(&mut tape, &store, h, e, 3, 6).unwrap();
    let a = tape.value(out.alpha);
    for s in 0..3 {
        for i in 0..6 {
            for head in 0..2 {
                let row: Vec<f64> = (0..6).map(|j| a.at(&[s, i, j, head])).collect();
                assert!(row.iter().all(|&x| x >= 0.0));
                assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
    }
    // Aggregated outputs stay inside the per-column range of W_V h_j.
    let wv = &store.get(gt.layers[0].w_v).tensor;
    let agg = tape.value(out.aggregated);
    for s in 0..3 {
        for head in 0..2 {
            for c in 0..4 {
                let vals: Vec<f64> = (0..6)
                    .map(|j| (0..4).map(|r| hv.at(&[s * 6 + j, head * 4 + r]) * wv.at(&[head, r, c])).sum())
                    .collect();
                let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                for i in 0..6 {
                    let x = agg.at(&[s * 6 + i, head * 4 + c]);
                    assert!(x >= lo - 1e-12 && x <= hi + 1e-12);
                }
            }
        }
    }
}

#[test]
fn zero_final_phi_layer_gives_zero_edges() {
    let (mut store, gt) = build(1, 6);
    let w = gt.phi.second.w;
    let shape = store.get(w).tensor.shape().to_vec();
    store.get_mut(w).tensor = Tensor::zeros(&shape);
    let g = Graph::new(3, [(0, 1)], None).unwrap();
    let mut tape = Tape::new();
    let e = gt.phi.forward(&mut tape, &store, &rrwp_raw(&g, 4).unwrap()).unwrap();
    assert_eq!(tape.shape(e), &[9, 8]);
    assert!(tape.value(e).data().iter().all(|&x| x == 0.0));
}

#[test]
fn isomorphic_pairs_share_encodings() {
    let (store, gt) = build(1, 6);
    // A 4-cycle: every adjacent pair has the same RRWP vector.
    let g = Graph::new(4, [(0, 1), (1, 2), (2, 3), (0, 3)], None).unwrap();
    let mut tape = Tape::new();
    let e = gt.phi.forward(&mut tape, &store, &rrwp_raw(&g, 4).unwrap()).unwrap();
    let v = tape.value(e);
    let row = |i: usize, j: usize| v.data()[(i * 4 + j) * 8..(i * 4 + j + 1) * 8].to_vec();
    assert_eq!(row(0, 1), row(2, 3));
    assert_eq!(row(1, 2), row(3, 0));
}

#[test]
fn empty_stack_is_identity() {
    let (store, gt) = build(0, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let g = common::random_graph(4, 0.5, &mut rng);
    let h = Tensor::randn(&[4, 2, 3, 8], 1.0, &mut rng);
    assert_eq!(run(&store, &gt, &h, &g), h);
}

#[test]
fn slices_are_independent() {
    let (store, gt) = build(2, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let g = common::random_graph(5, 0.5, &mut rng);
    let h = Tensor::randn(&[5, 2, 4, 8], 1.0, &mut rng);
    let base = run(&store, &gt, &h, &g);
    let mut bumped = h.clone();
    for i in 0..5 {
        for c in 0..8 {
            let v = bumped.at(&[i, 0, 0, c]);
            bumped.set(&[i, 0, 0, c], v + 0.5);
        }
    }
    let after = run(&store, &gt, &bumped, &g);
    for i in 0..5 {
        for c in 0..8 {
            assert_eq!(base.at(&[i, 1, 3, c]), after.at(&[i, 1, 3, c]));
        }
    }
    assert!(base.max_abs_diff(&after) > 1e-3);
}

#[test]
fn equivariance_and_pooling_under_permutation() {
    let (store, gt) = build(2, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..5 {
        let n = rng.random_range(3..8);
        let g = common::random_graph(n, 0.5, &mut rng);
        let h = Tensor::randn(&[n, 2, 3, 8], 1.0, &mut rng);
        let out = run(&store, &gt, &h, &g);
        let anchor = rng.random_range(0..n);
        for _ in 0..4 {
            let perm = Permutation::random(n, &mut rng);
            let out_p = run(&store, &gt, &permute_rows(&h, &perm), &permute(&g, &perm).unwrap());
            assert!(permute_rows(&out, &perm).max_abs_diff(&out_p) <= 1e-9);

            let pooled = |t: &Tensor, mode, a: usize| {
                let mut tape = Tape::new();
                let x = tape.constant(t.clone());
                let p = pool(&mut tape, x, mode, &[a]).unwrap();
                tape.value(p).clone()
            };
            let mean_a = pooled(&out, Pooling::Mean, 0);
            let mean_b = pooled(&out_p, Pooling::Mean, 0);
            assert!(mean_a.max_abs_diff(&mean_b) <= 1e-9);
            let anch_a = pooled(&out, Pooling::Anchor, anchor);
            let anch_b = pooled(&out_p, Pooling::Anchor, perm.apply(anchor));
            assert!(anch_a.max_abs_diff(&anch_b) <= 1e-9);
        }
    }
}

#[test]
fn pooling_edge_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let row = Tensor::randn(&[1, 2, 3, 4], 1.0, &mut rng);
    let mut same = Tensor::zeros(&[3, 2, 3, 4]);
    for i in 0..3 {
        same.data_mut()[i * 24..(i + 1) * 24].copy_from_slice(row.data());
    }
    let mut tape = Tape::new();
    let x = tape.constant(same);
    let m = pool(&mut tape, x, Pooling::Mean, &[]).unwrap();
    assert!(tape.value(m).max_abs_diff(&row.clone().reshape(&[2, 3, 4]).unwrap()) < 1e-15);
    let single = tape.constant(row.clone());
    let a = pool(&mut tape, single, Pooling::Anchor, &[0]).unwrap();
    let b = pool(&mut tape, single, Pooling::Mean, &[]).unwrap();
    assert_eq!(tape.value(a), tape.value(b));
    assert_eq!(
        pool(&mut tape, x, Pooling::Anchor, &[3]).unwrap_err(),
        ModelError::InvalidAnchor { anchor: 3, n: 3 }
    );
}

#[test]
fn non_finite_values_name_the_layer_and_head() {
    let (mut store, gt) = build(2, 11);
    let w = gt.layers[1].w_eb;
    store.get_mut(w).tensor.data_mut()[20] = f64::NAN;
    let g = Graph::new(3, [(0, 1), (1, 2)], None).unwrap();
    let h = Tensor::randn(&[3, 1, 1, 8], 1.0, &mut ChaCha8Rng::seed_from_u64(0));
    let mut tape = Tape::new();
    let x = tape.constant(h);
    let err = gt.forward(&mut tape, &store, x, &rrwp_raw(&g, 4).unwrap()).unwrap_err();
    // Element 20 of a [2, 4, 4] tensor belongs to head 1.
    assert_eq!(err, ModelError::NonFinite { layer: 1, head: 1 });
}

#[test]
fn full_layer_gradient_on_three_nodes() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let gt = GraphTransformer::new(&mut store, &mut rng, cfg(1)).unwrap();
    let g = Graph::new(3, [(0, 1), (1, 2)], None).unwrap();
    let r = rrwp_raw(&g, 4).unwrap();
    let h = Tensor::randn(&[3, 1, 1, 8], 1.0, &mut rng);
    let wh = Tensor::randn(&[3, 1, 1, 8], 1.0, &mut rng);
    let f = |tape: &mut Tape, s: &ParamStore| -> Result<_, ModelError> {
        let x = tape.constant(h.clone());
        let out = gt.forward(tape, s, x, &r)?;
        let w = tape.constant(wh.clone());
        let p = tape.mul(out, w)?;
        Ok(tape.sum(p))
    };
    let mut tape = Tape::new();
    f(&mut tape, &store).unwrap();
    let eps = 1e-5;
    let kink = tape.min_signed_sqrt_input().min(tape.min_relu_input());
    assert!(kink > 5.0 * eps, "closest kink input {kink}");
    let err = grad_check_params(f, &store, eps).unwrap();
    assert!(err < 1e-4, "relative error {err}");
}
