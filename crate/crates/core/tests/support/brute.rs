//! Exhaustive reference solvers working from raw edge lists.
#![allow(dead_code)]

fn adjacency(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<bool>> {
    let mut adj = vec![vec![false; n]; n];
    for &(a, b) in edges {
        adj[a][b] = true;
        adj[b][a] = true;
    }
    adj
}

/// Scan every unordered triple of nodes.
pub fn triangles_cco(n: usize, edges: &[(usize, usize)], labels: &[&str], anchor: usize) -> i64 {
    let adj = adjacency(n, edges);
    let mut count = 0;
    for a in 0..n {
        for b in a + 1..n {
            for c in b + 1..n {
                if ![a, b, c].contains(&anchor) || !(adj[a][b] && adj[b][c] && adj[a][c]) {
                    continue;
                }
                let mut l = [labels[a], labels[b], labels[c]];
                l.sort();
                if l == ["C", "C", "O"] {
                    count += 1;
                }
            }
        }
    }
    count
}

/// Scan every ordered triple; `None` when no triple qualifies.
pub fn triplet_sum(n: usize, edges: &[(usize, usize)], ages: &[u32], anchor: usize) -> Option<i64> {
    let adj = adjacency(n, edges);
    let mut best = None;
    for v in 0..n {
        for f in 0..n {
            for g in 0..n {
                if v != anchor || v == f || f == g || v == g || !adj[v][f] || !adj[f][g] {
                    continue;
                }
                let s = (ages[v] + ages[f] + ages[g]) as i64;
                best = Some(best.map_or(s, |b: i64| b.max(s)));
            }
        }
    }
    best
}

/// Enumerate every simple path from `s` to `t`.
pub fn shortest_path(n: usize, edges: &[(usize, usize)], costs: &[u32], s: usize, t: usize) -> Option<i64> {
    let adj = adjacency(n, edges);
    fn dfs(v: usize, t: usize, adj: &[Vec<bool>], costs: &[u32], on: &mut Vec<bool>, acc: i64, best: &mut Option<i64>) {
        if v == t {
            *best = Some(best.map_or(acc, |b| b.min(acc)));
            return;
        }
        for w in 0..adj.len() {
            if adj[v][w] && !on[w] {
                on[w] = true;
                dfs(w, t, adj, costs, on, acc + costs[w] as i64, best);
                on[w] = false;
            }
        }
    }
    let mut on = vec![false; n];
    on[s] = true;
    let mut best = None;
    dfs(s, t, &adj, costs, &mut on, costs[s] as i64, &mut best);
    best
}

/// Try every subset of edges and keep the largest vertex-disjoint one.
pub fn max_matching(n: usize, edges: &[(usize, usize)]) -> i64 {
    assert!(edges.len() <= 24, "brute force limited to 24 edges");
    let mut best = 0;
    for mask in 0u32..(1 << edges.len()) {
        let mut used = vec![false; n];
        let mut ok = true;
        for (k, &(a, b)) in edges.iter().enumerate() {
            if mask >> k & 1 == 1 {
                if used[a] || used[b] {
                    ok = false;
                    break;
                }
                used[a] = true;
                used[b] = true;
            }
        }
        if ok {
            best = best.max(mask.count_ones() as i64);
        }
    }
    best
}

/// `P(walk of exactly k steps from i ends at j)` by enumerating all walks.
pub fn walk_probability(n: usize, edges: &[(usize, usize)], i: usize, j: usize, k: usize) -> f64 {
    let adj = adjacency(n, edges);
    let deg: Vec<usize> = adj.iter().map(|r| r.iter().filter(|&&x| x).count()).collect();
    fn go(v: usize, j: usize, left: usize, adj: &[Vec<bool>], deg: &[usize], p: f64) -> f64 {
        if left == 0 {
            return if v == j { p } else { 0.0 };
        }
        if deg[v] == 0 {
            return 0.0;
        }
        (0..adj.len())
            .filter(|&w| adj[v][w])
            .map(|w| go(w, j, left - 1, adj, deg, p / deg[v] as f64))
            .sum()
    }
    go(i, j, k, &adj, &deg, 1.0)
}
