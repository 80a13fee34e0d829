//! Undirected graphs, random-walk matrices and relative random-walk
//! probabilities (RRWP).

use std::collections::BTreeSet;

use graphllm_tensor::Tensor;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("edge ({0}, {1}) references a node outside 0..{2}")]
    NodeOutOfRange(usize, usize, usize),
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("partition has {got} labels for {n} nodes")]
    PartitionLength { got: usize, n: usize },
    #[error("edge ({0}, {1}) does not cross the partition")]
    EdgeWithinSide(usize, usize),
    #[error("walk length must be at least 1, got {0}")]
    WalkLength(usize),
    #[error("not a permutation of 0..{0}")]
    NotAPermutation(usize),
}

/// Side of a bipartite graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub enum Side {
    Left,
    Right,
}

/// Simple undirected graph with canonical `(i, j)`, `i < j` edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    adj: Vec<Vec<usize>>,
    partition: Option<Vec<Side>>,
}

impl Graph {
    /// Build a graph. Edges may be given in either orientation; they are
    /// stored sorted and canonical.
    pub fn new(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        partition: Option<Vec<Side>>,
    ) -> Result<Self, GraphError> {
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(GraphError::NodeOutOfRange(a, b, n));
            }
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            let e = (a.min(b), a.max(b));
            if !set.insert(e) {
                return Err(GraphError::DuplicateEdge(e.0, e.1));
            }
        }
        if let Some(p) = &partition {
            if p.len() != n {
                return Err(GraphError::PartitionLength { got: p.len(), n });
            }
            if let Some(&(a, b)) = set.iter().find(|&&(a, b)| p[a] == p[b]) {
                return Err(GraphError::EdgeWithinSide(a, b));
            }
        }
        let edges: Vec<_> = set.into_iter().collect();
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in &edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for row in &mut adj {
            row.sort_unstable();
        }
        Ok(Self {
            n,
            edges,
            adj,
            partition,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn partition(&self) -> Option<&[Side]> {
        self.partition.as_deref()
    }

    /// Sorted neighbours of `v`.
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adj[a].binary_search(&b).is_ok()
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n).map(|v| self.degree(v)).collect()
    }

    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return true;
        }
        let mut seen = vec![false; self.n];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &w in &self.adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    stack.push(w);
                }
            }
        }
        count == self.n
    }
}

/// `M = D^-1 A` as an `[n, n]` tensor. Rows of isolated nodes are zero.
pub fn random_walk_matrix(graph: &Graph) -> Tensor {
    let n = graph.n();
    let mut m = Tensor::zeros(&[n, n]);
    for i in 0..n {
        let deg = graph.degree(i);
        if deg == 0 {
            continue;
        }
        let w = 1.0 / deg as f64;
        for &j in graph.neighbors(i) {
            m.set(&[i, j], w);
        }
    }
    m
}

/// Relative random-walk probabilities `R[i][j] = [I, M, M^2, ..., M^(C-1)]_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rrwp {
    walk_len: usize,
    n: usize,
    /// `[n, n, walk_len]`
    values: Tensor,
}

impl Rrwp {
    pub fn walk_len(&self) -> usize {
        self.walk_len
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn tensor(&self) -> &Tensor {
        &self.values
    }

    /// The length-`C` probability vector for the pair `(i, j)`.
    pub fn pair(&self, i: usize, j: usize) -> &[f64] {
        let off = (i * self.n + j) * self.walk_len;
        &self.values.data()[off..off + self.walk_len]
    }

    /// Slice `k` as an `[n, n]` matrix.
    pub fn slice(&self, k: usize) -> Tensor {
        let n = self.n;
        let mut out = Tensor::zeros(&[n, n]);
        for i in 0..n {
            for j in 0..n {
                out.set(&[i, j], self.pair(i, j)[k]);
            }
        }
        out
    }

    /// Pair vectors as an `[n * n, C]` matrix, rows ordered `(i, j)`.
    pub fn pair_matrix(&self) -> Tensor {
        self.values
            .clone()
            .reshape(&[self.n * self.n, self.walk_len])
            .expect("same size")
    }
}

/// RRWP by repeated multiplication with the random-walk matrix.
pub fn rrwp_raw(graph: &Graph, walk_len: usize) -> Result<Rrwp, GraphError> {
    if walk_len < 1 {
        return Err(GraphError::WalkLength(walk_len));
    }
    let n = graph.n();
    let m = random_walk_matrix(graph);
    let m = m.data();
    let mut values = Tensor::zeros(&[n, n, walk_len]);
    let mut power = Tensor::eye(n).into_data();
    for k in 0..walk_len {
        for i in 0..n {
            for j in 0..n {
                values.set(&[i, j, k], power[i * n + j]);
            }
        }
        if k + 1 < walk_len {
            let mut next = vec![0.0; n * n];
            for i in 0..n {
                for p in 0..n {
                    let a = power[i * n + p];
                    if a == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        next[i * n + j] += a * m[p * n + j];
                    }
                }
            }
            power = next;
        }
    }
    Ok(Rrwp {
        walk_len,
        n,
        values,
    })
}

/// A validated bijection on `0..n`; node `i` moves to `map[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    map: Vec<usize>,
}

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self, GraphError> {
        let n = map.len();
        let mut seen = vec![false; n];
        for &v in &map {
            if v >= n || seen[v] {
                return Err(GraphError::NotAPermutation(n));
            }
            seen[v] = true;
        }
        Ok(Self { map })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            map: (0..n).collect(),
        }
    }

    pub fn random<R: rand::Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        use rand::seq::SliceRandom;
        let mut map: Vec<usize> = (0..n).collect();
        map.shuffle(rng);
        Self { map }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn apply(&self, i: usize) -> usize {
        self.map[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.map
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.map.len()];
        for (i, &p) in self.map.iter().enumerate() {
            inv[p] = i;
        }
        Self { map: inv }
    }

    /// Reorder per-node data so that entry `i` lands at `perm(i)`.
    pub fn permute_vec<T: Clone>(&self, items: &[T]) -> Vec<T> {
        assert_eq!(items.len(), self.map.len(), "permute_vec length");
        let mut out = items.to_vec();
        for (i, item) in items.iter().enumerate() {
            out[self.map[i]] = item.clone();
        }
        out
    }
}

/// Relabel nodes: edge `(i, j)` becomes `(perm(i), perm(j))`.
pub fn permute(graph: &Graph, perm: &Permutation) -> Result<Graph, GraphError> {
    if perm.len() != graph.n() {
        return Err(GraphError::NotAPermutation(graph.n()));
    }
    let edges = graph
        .edges()
        .iter()
        .map(|&(a, b)| (perm.apply(a), perm.apply(b)));
    let partition = graph.partition().map(|p| perm.permute_vec(p));
    Graph::new(graph.n(), edges, partition)
}
