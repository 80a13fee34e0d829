mod support;

use graphllm_core::graph::Graph;
use graphllm_core::task::{
    emit_jsonl, from_jsonl_str, generate, generate_splits, load_jsonl, oracle_bipartite_matching,
    oracle_shortest_path, oracle_substructure, oracle_triplet_sum, to_jsonl_string, GenConfig, NodeAttrs,
    SplitSizes, TaskError, TaskKind,
};
use graphllm_core::tokenizer::count_tokens;
use std::collections::HashSet;
use support::brute;

fn small_config(task: TaskKind) -> GenConfig {
    let mut cfg = GenConfig::new(task, 8);
    cfg.n_min = 4;
    cfg.n_max = 8;
    cfg
}

#[test]
fn substructure_oracle_matches_brute_force() {
    let mut cfg = small_config(TaskKind::SubstructureCounting);
    cfg.edges_per_node = 2.0;
    cfg.atom_weights = [0.5, 0.3, 0.1, 0.05, 0.05];
    let mut nonzero = 0;
    for inst in cfg.generate_range(0, 300, 1).unwrap() {
        let NodeAttrs::Atoms(labels) = &inst.attrs else { unreachable!() };
        let syms: Vec<&str> = labels.iter().map(|e| e.symbol()).collect();
        let g = &inst.graph;
        let want = brute::triangles_cco(g.n(), g.edges(), &syms, inst.anchors[0]);
        assert_eq!(oracle_substructure(g, labels, inst.anchors[0]).unwrap(), want);
        nonzero += usize::from(want > 0);
    }
    assert!(nonzero > 30, "too few nonzero counts to be informative: {nonzero}");
}

#[test]
fn triplet_oracle_matches_brute_force() {
    for inst in small_config(TaskKind::MaximumTripletSum).generate_range(0, 300, 2).unwrap() {
        let NodeAttrs::Ages(ages) = &inst.attrs else { unreachable!() };
        let g = &inst.graph;
        let want = brute::triplet_sum(g.n(), g.edges(), ages, inst.anchors[0]).unwrap();
        assert_eq!(oracle_triplet_sum(g, ages, inst.anchors[0]).unwrap(), want);
    }
}

#[test]
fn shortest_path_oracle_matches_brute_force() {
    for inst in small_config(TaskKind::ShortestPath).generate_range(0, 300, 3).unwrap() {
        let NodeAttrs::Costs(costs) = &inst.attrs else { unreachable!() };
        let g = &inst.graph;
        let (s, t) = (inst.anchors[0], inst.anchors[1]);
        let want = brute::shortest_path(g.n(), g.edges(), costs, s, t).unwrap();
        assert_eq!(oracle_shortest_path(g, costs, s, t).unwrap(), want);
    }
}

#[test]
fn matching_oracle_matches_brute_force() {
    let mut cfg = GenConfig::new(TaskKind::BipartiteMatching, 12);
    cfg.edges_per_node = 1.0;
    let mut checked = 0;
    for inst in cfg.generate_range(0, 300, 4).unwrap() {
        let g = &inst.graph;
        if g.num_edges() > 20 {
            continue;
        }
        let want = brute::max_matching(g.n(), g.edges());
        assert_eq!(oracle_bipartite_matching(g).unwrap(), want);
        checked += 1;
    }
    assert!(checked >= 200, "only {checked} instances small enough");
}

#[test]
fn reference_edge_density_for_counting() {
    let data = generate(TaskKind::SubstructureCounting, 2000, 15, 7).unwrap();
    let mean = data.iter().map(|t| t.graph.num_edges() as f64).sum::<f64>() / data.len() as f64;
    assert!((mean - 22.3).abs() <= 2.0, "mean edges {mean}");
    assert!(data.iter().all(|t| t.graph.n() == 15));
}

#[test]
fn reference_edge_density_for_other_tasks() {
    for task in [TaskKind::MaximumTripletSum, TaskKind::ShortestPath, TaskKind::BipartiteMatching] {
        let (n, m) = task.reference_stats();
        let data = generate(task, 500, n, 7).unwrap();
        let mean = data.iter().map(|t| t.graph.num_edges() as f64).sum::<f64>() / data.len() as f64;
        assert!((mean - m).abs() <= 0.1 * m + 1.0, "{task}: mean edges {mean} vs {m}");
    }
}

#[test]
fn shortest_path_graphs_are_connected() {
    for inst in generate(TaskKind::ShortestPath, 10, 20, 5).unwrap() {
        assert!(inst.graph.is_connected());
        assert_ne!(inst.anchors[0], inst.anchors[1]);
    }
}

#[test]
fn descriptions_fall_in_token_ranges_and_carry_attributes() {
    let ranges = [(52, 59), (39, 82), (48, 58), (34, 61)];
    for (task, (lo, hi)) in TaskKind::ALL.into_iter().zip(ranges) {
        let (n, _) = task.reference_stats();
        for inst in generate(task, 40, n, 9).unwrap() {
            let attrs = inst.attrs.to_strings();
            for (i, d) in inst.descriptions.iter().enumerate() {
                let len = count_tokens(d);
                assert!((lo..=hi).contains(&len), "{task}: {len} tokens: {d}");
                match &inst.attrs {
                    NodeAttrs::Atoms(l) => {
                        assert!(d.contains(l[i].name()) && d.contains(&format!("\"{}\"", l[i].symbol())))
                    }
                    NodeAttrs::Costs(_) => {
                        assert!(d.contains(&format!("wormhole {}", i + 1)));
                        assert!(d.contains(&format!("{} pounds of dark matter", attrs[i])));
                    }
                    _ => assert!(d.contains(&attrs[i]), "{d} lacks {}", attrs[i]),
                }
            }
        }
    }
}

#[test]
fn invariants_on_answers() {
    for task in TaskKind::ALL {
        let (n, _) = task.reference_stats();
        for inst in generate(task, 100, n, 21).unwrap() {
            assert!(inst.answer >= 0);
            assert!(inst.response.ends_with(&format!(" {}", inst.answer)));
            if task == TaskKind::BipartiteMatching {
                let left = inst.graph.partition().unwrap().iter().filter(|s| **s == graphllm_core::graph::Side::Left).count();
                assert!(inst.answer as usize <= left.min(n - left));
                assert!(inst.answer as usize <= inst.graph.num_edges());
            }
            inst.validate().unwrap();
        }
    }
}

#[test]
fn generation_is_seed_deterministic() {
    for task in TaskKind::ALL {
        let a = to_jsonl_string(&generate(task, 20, 10, 99).unwrap());
        let b = to_jsonl_string(&generate(task, 20, 10, 99).unwrap());
        let c = to_jsonl_string(&generate(task, 20, 10, 100).unwrap());
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}

#[test]
fn instances_are_reproducible_by_index() {
    let cfg = GenConfig::reference(TaskKind::MaximumTripletSum);
    let all = cfg.generate_range(0, 10, 3).unwrap();
    let tail = cfg.generate_range(6, 4, 3).unwrap();
    assert_eq!(&all[6..], &tail[..]);
}

#[test]
fn splits_are_disjoint() {
    let cfg = GenConfig::new(TaskKind::ShortestPath, 8);
    let s = generate_splits(&cfg, SplitSizes { train: 30, val: 10, test: 20 }, 4).unwrap();
    let seeds: HashSet<u64> = s.train.iter().chain(&s.val).chain(&s.test).map(|t| t.seed).collect();
    assert_eq!(seeds.len(), 60);
    assert_eq!(SplitSizes::default(), SplitSizes { train: 2000, val: 2000, test: 6000 });
}

#[test]
fn jsonl_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut all = Vec::new();
    for task in TaskKind::ALL {
        all.extend(generate(task, 25, 10, 12).unwrap());
    }
    let path = dir.path().join("data.jsonl");
    emit_jsonl(&all, &path).unwrap();
    assert_eq!(load_jsonl(&path).unwrap(), all);
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 100);
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    let keys: Vec<&str> = first.as_object().unwrap().keys().map(String::as_str).collect();
    for k in ["task", "nodes", "edges", "attrs", "anchors", "instruction", "response", "answer", "seed"] {
        assert!(keys.contains(&k), "missing {k}");
    }
    for e in first["edges"].as_array().unwrap() {
        assert!(e[0].as_u64() < e[1].as_u64());
    }
}

#[test]
fn jsonl_rejects_bad_lines_and_wrong_answers() {
    let inst = generate(TaskKind::SubstructureCounting, 2, 8, 1).unwrap();
    let good = to_jsonl_string(&inst);
    let bad = format!("{good}{{not json\n");
    match from_jsonl_str(&bad) {
        Err(TaskError::Jsonl { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
    let wrong = good.replacen(&format!("\"answer\":{}", inst[0].answer), "\"answer\":99", 1);
    match from_jsonl_str(&wrong) {
        Err(TaskError::Jsonl { line: 1, msg }) => assert!(msg.contains("disagrees"), "{msg}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn unsatisfiable_constraints_are_named() {
    let mut cfg = GenConfig::new(TaskKind::ShortestPath, 12);
    cfg.edges_per_node = 0.05;
    cfg.max_attempts = 20;
    match cfg.generate_range(0, 1, 0) {
        Err(TaskError::Unsatisfiable(what, 20)) => assert!(what.contains("connected")),
        other => panic!("{other:?}"),
    }
    assert!(generate(TaskKind::ShortestPath, 0, 10, 0).is_err());
    assert!(generate(TaskKind::ShortestPath, 1, 3, 0).is_err());
}

#[test]
fn k3_and_no_oxygen_examples() {
    use graphllm_core::task::Element::*;
    let g = Graph::new(3, [(0, 1), (1, 2), (0, 2)], None).unwrap();
    assert_eq!(oracle_substructure(&g, &[C, C, O], 0).unwrap(), 1);
    assert_eq!(oracle_substructure(&g, &[C, C, N], 0).unwrap(), 0);
}
