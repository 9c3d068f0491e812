//! Attributed graphs with ground-truth communities, and the normalized
//! matrices the encoders consume.

mod canonical;
mod load;

use std::collections::VecDeque;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{Csr, Matrix};

pub use canonical::{read_canonical, write_canonical, CanonicalMeta, CANONICAL_FORMAT_VERSION};
pub use load::{load_citation_dataset, load_ego_dataset, load_ego_dir};

/// Counts of input irregularities that were normalized away while loading.
#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LoadReport {
    pub duplicate_edges: usize,
    pub self_loops: usize,
    pub unknown_endpoints: usize,
    pub unknown_members: usize,
    pub empty_communities: usize,
    /// Indices of communities with fewer than two members.
    pub small_communities: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributedGraph {
    pub name: String,
    n: usize,
    adjacency: Csr,
    features: Csr,
    communities: Vec<Vec<usize>>,
    pub node_labels: Option<Vec<String>>,
    pub attr_labels: Option<Vec<String>>,
}

impl AttributedGraph {
    /// Validates and normalizes raw input. Edges are undirected: reversed
    /// duplicates and repeats collapse to one, self-loops are dropped.
    /// Community members are sorted and deduplicated.
    pub fn new(
        name: impl Into<String>,
        n: usize,
        d: usize,
        edges: &[(usize, usize)],
        features: &[(usize, usize, f64)],
        communities: Vec<Vec<usize>>,
    ) -> Result<(Self, LoadReport)> {
        let mut report = LoadReport::default();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let mut pairs = Vec::with_capacity(edges.len());
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({u},{v}) outside [0,{n})"
                )));
            }
            if u == v {
                report.self_loops += 1;
                continue;
            }
            pairs.push((u.min(v), u.max(v)));
        }
        let before = pairs.len();
        pairs.sort_unstable();
        pairs.dedup();
        report.duplicate_edges = before - pairs.len();
        let mut triplets = Vec::with_capacity(2 * pairs.len());
        for &(u, v) in &pairs {
            triplets.push((u, v, 1.0));
            triplets.push((v, u, 1.0));
        }
        let adjacency = Csr::from_triplets(n, n, &triplets);

        for &(i, j, v) in features {
            if i >= n || j >= d {
                return Err(Error::InvalidGraph(format!(
                    "feature ({i},{j}) outside {n}x{d}"
                )));
            }
            if !v.is_finite() {
                return Err(Error::InvalidGraph(format!(
                    "feature ({i},{j}) is not finite"
                )));
            }
        }
        let features = Csr::from_triplets(n, d, features);

        let mut kept = Vec::with_capacity(communities.len());
        for mut members in communities {
            if let Some(&bad) = members.iter().find(|&&m| m >= n) {
                return Err(Error::InvalidGraph(format!(
                    "community member {bad} outside [0,{n})"
                )));
            }
            members.sort_unstable();
            members.dedup();
            if members.is_empty() {
                report.empty_communities += 1;
                continue;
            }
            if members.len() < 2 {
                report.small_communities.push(kept.len());
            }
            kept.push(members);
        }

        Ok((
            Self {
                name: name.into(),
                n,
                adjacency,
                features,
                communities: kept,
                node_labels: None,
                attr_labels: None,
            },
            report,
        ))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.adjacency.nnz() / 2
    }

    pub fn d(&self) -> usize {
        self.features.cols()
    }

    pub fn k(&self) -> usize {
        self.communities.len()
    }

    pub fn adjacency(&self) -> &Csr {
        &self.adjacency
    }

    pub fn features(&self) -> &Csr {
        &self.features
    }

    pub fn communities(&self) -> &[Vec<usize>] {
        &self.communities
    }

    pub fn average_community_size(&self) -> f64 {
        if self.communities.is_empty() {
            return 0.0;
        }
        self.communities.iter().map(Vec::len).sum::<usize>() as f64 / self.communities.len() as f64
    }

    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency.row(v).map(|(u, _)| u)
    }

    /// Sorted undirected edges with `u < v`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.m());
        for u in 0..self.n {
            for v in self.neighbors(u) {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    /// Content hash over structure, features and communities.
    pub fn fingerprint(&self) -> String {
        let files = canonical::render(self);
        let mut hasher = Sha256::new();
        hasher.update(format!("{} {} {}\n", self.n, self.d(), self.k()).as_bytes());
        hasher.update(files.edges.as_bytes());
        hasher.update(files.features.as_bytes());
        hasher.update(files.communities.as_bytes());
        hex(&hasher.finalize())
    }

    /// Number of nodes having both attributes (weighted for numeric features).
    pub fn cooccurrence(&self, a: usize, b: usize) -> f64 {
        (0..self.n)
            .map(|i| self.features.get(i, a) * self.features.get(i, b))
            .sum()
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// `D^{-1/2} (A + I) D^{-1/2}` where `D` is the degree matrix of `A + I`.
pub fn normalize_adjacency(graph: &AttributedGraph) -> Csr {
    let n = graph.n();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| 1.0 / ((graph.adjacency.row(i).count() + 1) as f64).sqrt())
        .collect();
    let mut triplets = Vec::with_capacity(graph.adjacency.nnz() + n);
    for i in 0..n {
        triplets.push((i, i, inv_sqrt[i] * inv_sqrt[i]));
        for (j, a) in graph.adjacency.row(i) {
            triplets.push((i, j, a * inv_sqrt[i] * inv_sqrt[j]));
        }
    }
    Csr::from_triplets(n, n, &triplets)
}

/// Each non-zero row divided by its sum; all-zero rows stay zero.
pub fn row_normalize_features(graph: &AttributedGraph) -> Csr {
    let sums = graph.features.row_sums();
    graph
        .features
        .map_values(|i, _, v| if sums[i] != 0.0 { v / sums[i] } else { v })
}

/// Node-to-attribute and attribute-to-node blocks of the bipartite graph.
pub fn build_bipartite(graph: &AttributedGraph) -> (Csr, Csr) {
    let b_v = graph.features.clone();
    let b_f = b_v.transpose();
    (b_v, b_f)
}

/// Shortest-path distance from the query set. `None` marks a node that is
/// not connected to any query node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryDistances {
    pub dist: Vec<Option<u32>>,
    /// One more than the largest finite distance.
    pub d_max: u32,
}

/// Multi-source breadth-first search from `query_nodes`.
pub fn query_distances(graph: &AttributedGraph, query_nodes: &[usize]) -> Result<QueryDistances> {
    if query_nodes.is_empty() {
        return Err(Error::Precondition("query node set is empty".into()));
    }
    let n = graph.n();
    if let Some(&bad) = query_nodes.iter().find(|&&q| q >= n) {
        return Err(Error::Precondition(format!(
            "query node {bad} outside [0,{n})"
        )));
    }
    let mut dist = vec![None; n];
    let mut queue = VecDeque::with_capacity(n);
    for &q in query_nodes {
        if dist[q].is_none() {
            dist[q] = Some(0);
            queue.push_back(q);
        }
    }
    let mut max_seen = 0;
    while let Some(v) = queue.pop_front() {
        let next = dist[v].unwrap() + 1;
        for u in graph.neighbors(v) {
            if dist[u].is_none() {
                dist[u] = Some(next);
                max_seen = max_seen.max(next);
                queue.push_back(u);
            }
        }
    }
    Ok(QueryDistances {
        dist,
        d_max: max_seen + 1,
    })
}

/// Read-only matrices shared by every forward pass on one graph.
#[derive(Debug, Clone)]
pub struct NormalizedViews {
    pub n: usize,
    pub d: usize,
    pub a_hat: Arc<Csr>,
    pub f_hat: Arc<Csr>,
    pub f_hat_t: Arc<Csr>,
    pub b_v: Arc<Csr>,
    pub b_f: Arc<Csr>,
}

impl NormalizedViews {
    pub fn new(graph: &AttributedGraph) -> Self {
        let f_hat = row_normalize_features(graph);
        let (b_v, b_f) = build_bipartite(graph);
        Self {
            n: graph.n(),
            d: graph.d(),
            a_hat: Arc::new(normalize_adjacency(graph)),
            f_hat_t: Arc::new(f_hat.transpose()),
            f_hat: Arc::new(f_hat),
            b_v: Arc::new(b_v),
            b_f: Arc::new(b_f),
        }
    }

    pub fn a_hat_dense(&self) -> Matrix {
        self.a_hat.to_dense()
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn graph_from_edges(n: usize, edges: &[(usize, usize)]) -> AttributedGraph {
        AttributedGraph::new("t", n, 1, edges, &[], vec![vec![0]])
            .unwrap()
            .0
    }

    #[test]
    fn isolated_node_normalizes_to_one() {
        let g = graph_from_edges(1, &[]);
        assert_eq!(
            normalize_adjacency(&g).to_dense(),
            Matrix::filled(1, 1, 1.0)
        );
    }

    #[test]
    fn single_edge_all_halves() {
        let g = graph_from_edges(2, &[(0, 1)]);
        let a = normalize_adjacency(&g).to_dense();
        assert!(a.data().iter().all(|&x| (x - 0.5).abs() < 1e-15));
    }

    #[test]
    fn path_three_entry() {
        let g = graph_from_edges(3, &[(0, 1), (1, 2)]);
        let a = normalize_adjacency(&g);
        assert!((a.get(0, 1) - 1.0 / 6f64.sqrt()).abs() < 1e-15);
        assert!((a.get(0, 1) - 0.40825).abs() < 1e-5);
    }

    #[test]
    fn duplicate_reverse_edges_collapse() {
        let (g, report) =
            AttributedGraph::new("t", 2, 1, &[(0, 1), (1, 0), (1, 1)], &[], vec![]).unwrap();
        assert_eq!(g.m(), 1);
        assert_eq!(report.duplicate_edges, 1);
        assert_eq!(report.self_loops, 1);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            AttributedGraph::new("t", 0, 1, &[], &[], vec![]),
            Err(Error::EmptyDataset)
        ));
        assert!(AttributedGraph::new("t", 2, 1, &[(0, 2)], &[], vec![]).is_err());
        assert!(AttributedGraph::new("t", 2, 1, &[], &[(0, 0, f64::NAN)], vec![]).is_err());
        assert!(AttributedGraph::new("t", 2, 1, &[], &[], vec![vec![5]]).is_err());
    }

    #[test]
    fn row_normalization_cases() {
        let feats = [(0, 0, 2.0), (0, 1, 2.0), (2, 1, 1.0)];
        let (g, _) = AttributedGraph::new("t", 3, 3, &[], &feats, vec![]).unwrap();
        let f = row_normalize_features(&g).to_dense();
        assert_eq!(f.row(0), &[0.5, 0.5, 0.0]);
        assert_eq!(f.row(1), &[0.0, 0.0, 0.0]);
        assert_eq!(f.row(2), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn bipartite_blocks() {
        let (g, _) =
            AttributedGraph::new("t", 2, 2, &[], &[(0, 0, 1.0), (1, 1, 2.0)], vec![]).unwrap();
        let (b_v, b_f) = build_bipartite(&g);
        assert_eq!(
            b_v.to_dense(),
            Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]])
        );
        assert_eq!(
            b_f.to_dense(),
            Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]])
        );
        let (empty, _) = AttributedGraph::new("t", 2, 2, &[], &[], vec![]).unwrap();
        assert_eq!(build_bipartite(&empty).0.nnz(), 0);
    }

    #[test]
    fn bipartite_cooccurrence_counts() {
        let g = super::tests_support::figure_four();
        assert_eq!(g.cooccurrence(1, 3), 2.0);
        assert_eq!(g.cooccurrence(0, 1), 1.0);
        let (b_v, b_f) = build_bipartite(&g);
        let co = b_f.to_dense().matmul(&b_v.to_dense());
        assert_eq!(co.get(1, 3), 2.0);
        assert_eq!(co.get(0, 1), 1.0);
    }

    #[test]
    fn distances_on_path() {
        let g = graph_from_edges(4, &[(0, 1), (1, 2), (2, 3)]);
        let qd = query_distances(&g, &[0]).unwrap();
        assert_eq!(qd.dist, vec![Some(0), Some(1), Some(2), Some(3)]);
        assert_eq!(qd.d_max, 4);
    }

    #[test]
    fn distances_disconnected_component() {
        let g = graph_from_edges(5, &[(0, 1), (2, 3), (3, 4)]);
        let qd = query_distances(&g, &[1]).unwrap();
        assert_eq!(qd.dist[0], Some(1));
        assert!(qd.dist[2..].iter().all(Option::is_none));
        assert_eq!(qd.d_max, 2);
        let lonely = query_distances(&graph_from_edges(3, &[(1, 2)]), &[0]).unwrap();
        assert_eq!(lonely.d_max, 1);
    }

    #[test]
    fn distances_reject_empty_query() {
        let g = graph_from_edges(2, &[(0, 1)]);
        assert!(query_distances(&g, &[]).is_err());
        assert!(query_distances(&g, &[7]).is_err());
    }

    fn brute_force_normalized(g: &AttributedGraph) -> Matrix {
        let n = g.n();
        let mut a = g.adjacency().to_dense();
        for i in 0..n {
            a.set(i, i, a.get(i, i) + 1.0);
        }
        let deg: Vec<f64> = (0..n).map(|i| a.row(i).iter().sum()).collect();
        Matrix::from_fn(n, n, |i, j| a.get(i, j) / (deg[i].sqrt() * deg[j].sqrt()))
    }

    fn naive_distances(g: &AttributedGraph, sources: &[usize]) -> Vec<Option<u32>> {
        let mut best: Vec<Option<u32>> = vec![None; g.n()];
        for &s in sources {
            let mut dist = vec![None; g.n()];
            dist[s] = Some(0u32);
            let mut queue = VecDeque::from([s]);
            while let Some(v) = queue.pop_front() {
                for u in g.neighbors(v) {
                    if dist[u].is_none() {
                        dist[u] = Some(dist[v].unwrap() + 1);
                        queue.push_back(u);
                    }
                }
            }
            for (b, d) in best.iter_mut().zip(dist) {
                *b = match (*b, d) {
                    (Some(x), Some(y)) => Some(x.min(y)),
                    (x, y) => x.or(y),
                };
            }
        }
        best
    }

    fn random_graph() -> impl Strategy<Value = AttributedGraph> {
        (1usize..50).prop_flat_map(|n| {
            proptest::collection::vec((0..n, 0..n), 0..(3 * n))
                .prop_map(move |edges| graph_from_edges(n, &edges))
        })
    }

    proptest! {
        #[test]
        fn normalized_adjacency_matches_dense_formula(g in random_graph()) {
            let a = normalize_adjacency(&g).to_dense();
            prop_assert!(a.max_abs_diff(&a.transpose()) < 1e-12);
            prop_assert!(a.max_abs_diff(&brute_force_normalized(&g)) < 1e-12);
            let deg: Vec<f64> = (0..g.n()).map(|i| (g.neighbors(i).count() + 1) as f64).collect();
            for i in 0..g.n() {
                let s: f64 = (0..g.n()).map(|j| a.get(i, j) * (deg[j] / deg[i]).sqrt()).sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn multi_source_bfs_matches_naive(
            (g, sources) in (1usize..100).prop_flat_map(|n| (
                proptest::collection::vec((0..n, 0..n), 0..(2 * n)),
                proptest::collection::vec(0..n, 1..4),
                Just(n),
            )).prop_map(|(edges, sources, n)| (graph_from_edges(n, &edges), sources))
        ) {
            let qd = query_distances(&g, &sources).unwrap();
            let naive = naive_distances(&g, &sources);
            prop_assert_eq!(&qd.dist, &naive);
            let max_finite = naive.iter().flatten().copied().max().unwrap_or(0);
            prop_assert_eq!(qd.d_max, max_finite + 1);
        }

        #[test]
        fn bipartite_transpose_property(
            feats in proptest::collection::vec((0usize..6, 0usize..4, 0.5f64..3.0), 0..20)
        ) {
            let (g, _) = AttributedGraph::new("t", 6, 4, &[], &feats, vec![]).unwrap();
            let (b_v, b_f) = build_bipartite(&g);
            for i in 0..6 {
                for j in 0..4 {
                    prop_assert_eq!(b_f.get(j, i), b_v.get(i, j));
                }
            }
        }
    }
}
