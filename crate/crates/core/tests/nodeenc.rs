mod common;

use graphllm_core::ModelError;
use graphllm_tensor::{Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn shapes_and_single_token_descriptions() {
    let (store, lm, m) = common::tiny_model(1);
    let mut tape = Tape::new();
    let emb = tape.param(&store, lm.embedding);
    let c = m.encoder.encode_description(&mut tape, &store, emb, &[7]).unwrap();
    assert_eq!(tape.shape(c), &[1, 8]);
    let q = tape.param(&store, m.encoder.queries);
    let h = m.encoder.decode_queries(&mut tape, &store, q, c).unwrap();
    assert_eq!(tape.shape(h), &[2, 3, 8]);
    let all = m.encoder.forward(&mut tape, &store, emb, &[&[5, 6, 7], &[9]]).unwrap();
    assert_eq!(tape.shape(all), &[2, 2, 3, 8]);
}

#[test]
fn rejects_empty_descriptions_and_bad_queries() {
    let (store, lm, m) = common::tiny_model(1);
    let mut tape = Tape::new();
    let emb = tape.param(&store, lm.embedding);
    assert_eq!(
        m.encoder.forward(&mut tape, &store, emb, &[&[5], &[]]).unwrap_err(),
        ModelError::EmptyDescription(1)
    );
    let c = m.encoder.encode_description(&mut tape, &store, emb, &[7, 8]).unwrap();
    let wrong = tape.constant(Tensor::zeros(&[2, 4, 8]));
    assert!(matches!(
        m.encoder.decode_queries(&mut tape, &store, wrong, c),
        Err(ModelError::QueryShape { .. })
    ));
    assert!(matches!(
        m.encoder.forward(&mut tape, &store, emb, &[&[99]]),
        Err(ModelError::UnknownToken { id: 99, .. })
    ));
}

#[test]
fn nodes_are_encoded_independently() {
    let (store, lm, m) = common::tiny_model(2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let descs = common::random_descs(5, &mut rng);
    let run = |list: Vec<&[u32]>| {
        let mut tape = Tape::new();
        let emb = tape.param(&store, lm.embedding);
        let h = m.encoder.forward(&mut tape, &store, emb, &list).unwrap();
        tape.value(h).clone()
    };
    let base = run(descs.iter().map(Vec::as_slice).collect());
    let width = 2 * 3 * 8;
    let node = |t: &Tensor, i: usize| t.data()[i * width..(i + 1) * width].to_vec();

    // Node 0 alone, and with the other nodes reversed, gives the same H_0.
    let alone = run(vec![&descs[0]]);
    let mut others: Vec<&[u32]> = descs.iter().map(Vec::as_slice).collect();
    others[1..].reverse();
    let shuffled = run(others);
    for (a, b) in node(&base, 0).iter().zip(node(&alone, 0)) {
        assert!((a - b).abs() <= 1e-12);
    }
    assert_eq!(node(&base, 0), node(&shuffled, 0));

    // Identical descriptions give identical outputs.
    let twins = run(vec![&descs[2], &descs[2]]);
    assert_eq!(node(&twins, 0), node(&twins, 1));
    assert_eq!(run(vec![&descs[3]]), run(vec![&descs[3]]));
}

#[test]
fn frozen_embedding_gets_no_gradient() {
    let (store, lm, m) = common::tiny_model(4);
    let mut tape = Tape::new();
    let emb = tape.param(&store, lm.embedding);
    let h = m.encoder.forward(&mut tape, &store, emb, &[&[5, 9, 11], &[6, 7]]).unwrap();
    let w = tape.constant(Tensor::randn(tape.shape(h), 1.0, &mut ChaCha8Rng::seed_from_u64(0)));
    let prod = tape.mul(h, w).unwrap();
    let loss = tape.sum(prod);
    let grads = tape.backward(loss).unwrap();
    assert!(grads.get_or_zeros(emb).data().iter().all(|&g| g == 0.0));
    let down = tape.bound_param(m.encoder.down).unwrap();
    assert!(grads.get_or_zeros(down).data().iter().any(|&g| g != 0.0));
    let q = tape.bound_param(m.encoder.queries).unwrap();
    assert!(grads.get_or_zeros(q).data().iter().any(|&g| g != 0.0));
}
