use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::{Element, TaskError};
use crate::graph::{Graph, Side};

fn check_anchor(graph: &Graph, anchor: usize) -> Result<(), TaskError> {
    if anchor >= graph.n() {
        return Err(TaskError::InvalidAnchor {
            anchor,
            n: graph.n(),
        });
    }
    Ok(())
}

fn check_len(graph: &Graph, len: usize) -> Result<(), TaskError> {
    if len != graph.n() {
        return Err(TaskError::AttrLength(len, graph.n()));
    }
    Ok(())
}

/// Triangles through `anchor` whose labels are two carbons and one oxygen.
pub fn oracle_substructure(graph: &Graph, labels: &[Element], anchor: usize) -> Result<i64, TaskError> {
    check_len(graph, labels.len())?;
    check_anchor(graph, anchor)?;
    let nb = graph.neighbors(anchor);
    let mut count = 0;
    for (a, &u) in nb.iter().enumerate() {
        for &w in &nb[a + 1..] {
            if !graph.has_edge(u, w) {
                continue;
            }
            let mut tri = [labels[anchor], labels[u], labels[w]];
            tri.sort();
            if tri == [Element::C, Element::C, Element::O] {
                count += 1;
            }
        }
    }
    Ok(count)
}

/// Largest `age(v) + age(f) + age(g)` with `f` a neighbour of the anchor `v`
/// and `g` a neighbour of `f`, all three distinct.
pub fn oracle_triplet_sum(graph: &Graph, ages: &[u32], anchor: usize) -> Result<i64, TaskError> {
    check_len(graph, ages.len())?;
    check_anchor(graph, anchor)?;
    graph
        .neighbors(anchor)
        .iter()
        .filter_map(|&f| {
            graph
                .neighbors(f)
                .iter()
                .filter(|&&g| g != anchor)
                .map(|&g| ages[g])
                .max()
                .map(|best| i64::from(ages[anchor]) + i64::from(ages[f]) + i64::from(best))
        })
        .max()
        .ok_or(TaskError::NoValidTriplet(anchor))
}

/// Cheapest path cost where every visited node, both endpoints included,
/// contributes its activation cost. Dijkstra over node weights.
pub fn oracle_shortest_path(
    graph: &Graph,
    costs: &[u32],
    source: usize,
    target: usize,
) -> Result<i64, TaskError> {
    check_len(graph, costs.len())?;
    check_anchor(graph, source)?;
    check_anchor(graph, target)?;
    let mut dist = vec![i64::MAX; graph.n()];
    dist[source] = i64::from(costs[source]);
    let mut heap = BinaryHeap::from([Reverse((dist[source], source))]);
    while let Some(Reverse((d, v))) = heap.pop() {
        if v == target {
            return Ok(d);
        }
        if d > dist[v] {
            continue;
        }
        for &w in graph.neighbors(v) {
            let nd = d + i64::from(costs[w]);
            if nd < dist[w] {
                dist[w] = nd;
                heap.push(Reverse((nd, w)));
            }
        }
    }
    Err(TaskError::Unreachable { from: source, target })
}

/// Maximum matching size by augmenting paths from every left-side node.
pub fn oracle_bipartite_matching(graph: &Graph) -> Result<i64, TaskError> {
    let side = graph.partition().ok_or(TaskError::MissingPartition)?;
    let n = graph.n();
    let mut mate: Vec<Option<usize>> = vec![None; n];

    fn augment(g: &Graph, u: usize, seen: &mut [bool], mate: &mut [Option<usize>]) -> bool {
        for &w in g.neighbors(u) {
            if seen[w] {
                continue;
            }
            seen[w] = true;
            if mate[w].is_none_or(|m| augment(g, m, seen, mate)) {
                mate[w] = Some(u);
                return true;
            }
        }
        false
    }

    let mut size = 0;
    for u in (0..n).filter(|&u| side[u] == Side::Left) {
        let mut seen = vec![false; n];
        if augment(graph, u, &mut seen, &mut mate) {
            size += 1;
        }
    }
    Ok(size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use Element::*;

    fn g(n: usize, e: &[(usize, usize)]) -> Graph {
        Graph::new(n, e.iter().copied(), None).unwrap()
    }

    #[test]
    fn single_cco_triangle() {
        let k3 = g(3, &[(0, 1), (1, 2), (0, 2)]);
        assert_eq!(oracle_substructure(&k3, &[C, C, O], 0), Ok(1));
        assert_eq!(oracle_substructure(&k3, &[C, C, N], 0), Ok(0));
        assert_eq!(oracle_substructure(&k3, &[C, O, O], 2), Ok(0));
        assert!(oracle_substructure(&k3, &[C, C, O], 3).is_err());
    }

    #[test]
    fn triplet_on_a_path_and_a_star() {
        let p = g(3, &[(0, 1), (1, 2)]);
        assert_eq!(oracle_triplet_sum(&p, &[10, 20, 30], 0), Ok(60));
        let star = g(4, &[(0, 1), (0, 2), (0, 3)]);
        assert_eq!(oracle_triplet_sum(&star, &[1, 2, 3, 4], 0), Err(TaskError::NoValidTriplet(0)));
        assert_eq!(oracle_triplet_sum(&star, &[1, 2, 3, 4], 1), Ok(2 + 1 + 4));
    }

    #[test]
    fn shortest_path_examples() {
        let chain = g(3, &[(0, 1), (1, 2)]);
        assert_eq!(oracle_shortest_path(&chain, &[5, 1, 5], 0, 2), Ok(11));
        let direct = g(4, &[(0, 3), (0, 1), (1, 2), (2, 3)]);
        assert_eq!(oracle_shortest_path(&direct, &[20, 10, 10, 20], 0, 3), Ok(40));
        assert_eq!(oracle_shortest_path(&direct, &[20, 10, 10, 20], 2, 2), Ok(10));
        let split = g(3, &[(0, 1)]);
        assert!(matches!(
            oracle_shortest_path(&split, &[1, 1, 1], 0, 2),
            Err(TaskError::Unreachable { .. })
        ));
    }

    #[test]
    fn matching_examples() {
        let part = vec![Side::Left, Side::Left, Side::Right, Side::Right];
        let k22 = Graph::new(4, [(0, 2), (0, 3), (1, 2), (1, 3)], Some(part.clone())).unwrap();
        assert_eq!(oracle_bipartite_matching(&k22), Ok(2));
        let empty = Graph::new(4, [], Some(part)).unwrap();
        assert_eq!(oracle_bipartite_matching(&empty), Ok(0));
        assert_eq!(oracle_bipartite_matching(&g(2, &[(0, 1)])), Err(TaskError::MissingPartition));
    }

    #[test]
    fn matching_needs_augmentation() {
        // Greedy left-to-right would pair 0-2 and strand 1.
        let part = vec![Side::Left, Side::Left, Side::Right, Side::Right];
        let gr = Graph::new(4, [(0, 2), (0, 3), (1, 2)], Some(part)).unwrap();
        assert_eq!(oracle_bipartite_matching(&gr), Ok(2));
    }
}
