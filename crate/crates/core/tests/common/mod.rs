//! Small models shared by the integration tests.
#![allow(dead_code)]

use graphllm_core::graph::{Graph, Rrwp, rrwp_raw};
use graphllm_core::model::{GraphInput, GraphLlm, GraphLlmConfig};
use graphllm_core::prefixlm::{BackboneConfig, BackboneLm};
use graphllm_core::task::Pooling;
use graphllm_tensor::ParamStore;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const VOCAB: usize = 40;

pub fn tiny_lm(store: &mut ParamStore, rng: &mut ChaCha8Rng) -> BackboneLm {
    let lm = BackboneLm::new(
        store,
        rng,
        BackboneConfig {
            vocab: VOCAB,
            d_model: 8,
            heads: 2,
            layers: 2,
            max_len: 32,
            ffn_mult: 2,
        },
    )
    .unwrap();
    lm.freeze(store);
    lm
}

pub fn tiny_cfg() -> GraphLlmConfig {
    GraphLlmConfig {
        d: 8,
        heads: 2,
        encoder_layers: 1,
        decoder_layers: 1,
        gt_layers: 2,
        prefix_len: 3,
        walk_len: 4,
        max_desc_len: 16,
        ffn_mult: 2,
        edge_values: false,
        b_std: 0.5,
    }
}

pub fn tiny_model(seed: u64) -> (ParamStore, BackboneLm, GraphLlm) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let lm = tiny_lm(&mut store, &mut rng);
    let g = GraphLlm::new(&mut store, &mut rng, &lm, tiny_cfg()).unwrap();
    (store, lm, g)
}

pub fn random_graph(n: usize, p: f64, rng: &mut impl Rng) -> Graph {
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random_bool(p) {
                edges.push((a, b));
            }
        }
    }
    Graph::new(n, edges, None).unwrap()
}

pub fn random_descs(n: usize, rng: &mut impl Rng) -> Vec<Vec<u32>> {
    (0..n)
        .map(|_| {
            let len = rng.random_range(1..10);
            (0..len).map(|_| rng.random_range(4..VOCAB as u32)).collect()
        })
        .collect()
}

pub fn random_input(n: usize, walk_len: usize, pooling: Pooling, rng: &mut impl Rng) -> GraphInput {
    let g = random_graph(n, 0.5, rng);
    let rrwp: Rrwp = rrwp_raw(&g, walk_len).unwrap();
    GraphInput {
        descriptions: random_descs(n, rng),
        rrwp,
        pooling,
        anchors: vec![rng.random_range(0..n)],
    }
}
