//! Query workloads: node sets and attribute sets drawn from ground-truth
//! communities, split into train, validation and test sequences.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{AttributedGraph, QueryDistances};
use crate::rng::{below, sample_indices, sub_stream, Rng, Stream};

pub const QUERY_FORMAT_VERSION: u32 = 1;
pub const MAX_QUERY_ATTRS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryMode {
    CommunityAttrs,
    NodeAttrs,
    None,
}

impl QueryMode {
    pub fn as_str(self) -> &'static str {
        match self {
            QueryMode::CommunityAttrs => "community-attrs",
            QueryMode::NodeAttrs => "node-attrs",
            QueryMode::None => "none",
        }
    }
}

impl std::str::FromStr for QueryMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "community-attrs" => Ok(QueryMode::CommunityAttrs),
            "node-attrs" => Ok(QueryMode::NodeAttrs),
            "none" => Ok(QueryMode::None),
            other => Err(Error::Config(format!("unknown query mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    /// Sorted query node ids.
    pub nodes: Vec<usize>,
    /// Sorted query attribute ids.
    pub attrs: Vec<usize>,
    pub community: usize,
}

impl Query {
    /// Indicator vector of the generating community.
    pub fn ground_truth(&self, graph: &AttributedGraph) -> Vec<bool> {
        let mut y = vec![false; graph.n()];
        for &v in &graph.communities()[self.community] {
            y[v] = true;
        }
        y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub mode: QueryMode,
    /// Largest query node-set size: 1 or 3 in the standard protocol.
    pub k_max: usize,
    pub count: usize,
    pub split: [usize; 3],
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            mode: QueryMode::CommunityAttrs,
            k_max: 3,
            count: 350,
            split: [150, 100, 100],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySet {
    pub dataset: String,
    pub dataset_fingerprint: String,
    pub config: GenConfig,
    /// Set when the graph offers fewer distinct (community, node set)
    /// pairs than queries requested, so repeats are unavoidable.
    pub flagged: bool,
    pub train: Vec<Query>,
    pub validation: Vec<Query>,
    pub test: Vec<Query>,
}

impl QuerySet {
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mode(&self) -> QueryMode {
        self.config.mode
    }

    pub fn iter(&self) -> impl Iterator<Item = (Split, &Query)> {
        self.train
            .iter()
            .map(|q| (Split::Train, q))
            .chain(self.validation.iter().map(|q| (Split::Val, q)))
            .chain(self.test.iter().map(|q| (Split::Test, q)))
    }

    /// Errors unless the set was generated from `graph`.
    pub fn check_graph(&self, graph: &AttributedGraph) -> Result<()> {
        let fp = graph.fingerprint();
        if fp != self.dataset_fingerprint {
            return Err(Error::Compatibility(format!(
                "query set was generated for dataset {} ({}), not {} ({})",
                self.dataset, self.dataset_fingerprint, graph.name, fp
            )));
        }
        Ok(())
    }
}

/// Uniform node set of uniform size `1..=min(k_max, |community|)`.
pub fn sample_query_nodes(community: &[usize], k_max: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if community.is_empty() {
        return Err(Error::Precondition(
            "cannot sample query nodes from an empty community".into(),
        ));
    }
    if k_max == 0 {
        return Err(Error::Precondition("k_max must be at least 1".into()));
    }
    let size = 1 + below(rng, k_max.min(community.len()));
    let mut nodes: Vec<usize> = sample_indices(rng, community.len(), size)
        .into_iter()
        .map(|i| community[i])
        .collect();
    nodes.sort_unstable();
    Ok(nodes)
}

/// Ordinal ranks by descending value, ties by ascending index.
fn ranks(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut rank = vec![0; values.len()];
    for (r, &j) in order.iter().enumerate() {
        rank[j] = r;
    }
    rank
}

fn column_sums(graph: &AttributedGraph, nodes: impl Iterator<Item = usize>) -> Vec<f64> {
    let mut sums = vec![0.0; graph.d()];
    for v in nodes {
        for (j, x) in graph.features().row(v) {
            sums[j] += x;
        }
    }
    sums
}

/// Attributes ordered by community specificity `rank_g - rank_c`, highest
/// first, ties by ascending id. Only attributes held by at least one
/// community member are candidates.
pub fn community_attr_ranking(graph: &AttributedGraph, community: &[usize]) -> Vec<usize> {
    let local = column_sums(graph, community.iter().copied());
    let global = column_sums(graph, 0..graph.n());
    let rank_c = ranks(&local);
    let rank_g = ranks(&global);
    let mut candidates: Vec<usize> = (0..graph.d()).filter(|&j| local[j] > 0.0).collect();
    let score = |j: usize| rank_g[j] as i64 - rank_c[j] as i64;
    candidates.sort_by(|&a, &b| score(b).cmp(&score(a)).then(a.cmp(&b)));
    candidates
}

/// Top `k` specific attributes with `k` uniform in `1..=5` (capped by the
/// candidate count). Empty only if no member has any attribute.
pub fn attrs_from_community(
    graph: &AttributedGraph,
    community: &[usize],
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    if community.is_empty() {
        return Err(Error::Precondition("empty community".into()));
    }
    let k = 1 + below(rng, MAX_QUERY_ATTRS);
    let mut chosen = community_attr_ranking(graph, community);
    chosen.truncate(k);
    chosen.sort_unstable();
    Ok(chosen)
}

/// The five highest entries of the summed feature rows of `nodes`.
pub fn attrs_from_nodes(graph: &AttributedGraph, nodes: &[usize]) -> Result<Vec<usize>> {
    if nodes.is_empty() {
        return Err(Error::Precondition("empty query node set".into()));
    }
    let sums = column_sums(graph, nodes.iter().copied());
    let mut ids: Vec<usize> = (0..graph.d()).filter(|&j| sums[j] != 0.0).collect();
    ids.sort_by(|&a, &b| sums[b].total_cmp(&sums[a]).then(a.cmp(&b)));
    ids.truncate(MAX_QUERY_ATTRS);
    ids.sort_unstable();
    Ok(ids)
}

fn distinct_node_sets(size: usize, k_max: usize) -> u128 {
    let mut total: u128 = 0;
    let mut binom: u128 = 1;
    for s in 1..=k_max.min(size) {
        binom = binom * (size - s + 1) as u128 / s as u128;
        total = total.saturating_add(binom);
    }
    total
}

pub fn generate_query_set(graph: &AttributedGraph, config: &GenConfig) -> Result<QuerySet> {
    if config.split.iter().sum::<usize>() != config.count {
        return Err(Error::Config(format!(
            "split {:?} does not add up to count {}",
            config.split, config.count
        )));
    }
    let usable: Vec<usize> = (0..graph.k())
        .filter(|&c| match config.mode {
            QueryMode::CommunityAttrs => {
                !community_attr_ranking(graph, &graph.communities()[c]).is_empty()
            }
            _ => !graph.communities()[c].is_empty(),
        })
        .collect();
    if usable.is_empty() {
        return Err(Error::Generation(format!(
            "dataset {} has no community usable for mode {}",
            graph.name,
            config.mode.as_str()
        )));
    }

    // per-community attribute sets are fixed before any query is drawn
    let community_attrs: Vec<Option<Vec<usize>>> = (0..graph.k())
        .map(|c| match config.mode {
            QueryMode::CommunityAttrs if usable.binary_search(&c).is_ok() => {
                let mut rng = sub_stream(config.seed, Stream::QueryAttrs, c as u64);
                attrs_from_community(graph, &graph.communities()[c], &mut rng).map(Some)
            }
            _ => Ok(None),
        })
        .collect::<Result<_>>()?;

    let distinct: u128 = usable
        .iter()
        .map(|&c| distinct_node_sets(graph.communities()[c].len(), config.k_max))
        .fold(0u128, u128::saturating_add);
    let flagged = distinct < config.count as u128;
    if flagged {
        log::warn!(
            "{}: only {distinct} distinct queries available for {} requested",
            graph.name,
            config.count
        );
    }

    let mut rng = sub_stream(config.seed, Stream::QueryNodes, 0);
    let mut queries = Vec::with_capacity(config.count);
    for _ in 0..config.count {
        let community = usable[below(&mut rng, usable.len())];
        let nodes = sample_query_nodes(&graph.communities()[community], config.k_max, &mut rng)?;
        let attrs = match config.mode {
            QueryMode::CommunityAttrs => community_attrs[community].clone().unwrap_or_default(),
            QueryMode::NodeAttrs => attrs_from_nodes(graph, &nodes)?,
            QueryMode::None => Vec::new(),
        };
        queries.push(Query {
            nodes,
            attrs,
            community,
        });
    }
    let test = queries.split_off(config.split[0] + config.split[1]);
    let validation = queries.split_off(config.split[0]);
    Ok(QuerySet {
        dataset: graph.name.clone(),
        dataset_fingerprint: graph.fingerprint(),
        config: *config,
        flagged,
        train: queries,
        validation,
        test,
    })
}

/// Structure-encoder seed: 1 on query nodes, `1 - dist/d_max` on connected
/// nodes, 0 on disconnected ones.
pub fn build_structure_seed(distances: &QueryDistances) -> Vec<f64> {
    let d_max = distances.d_max as f64;
    distances
        .dist
        .iter()
        .map(|d| match *d {
            Some(0) => 1.0,
            Some(k) => 1.0 - k as f64 / d_max,
            None => 0.0,
        })
        .collect()
}

/// Multi-hot indicator of `attrs` over `d` attributes.
pub fn one_hot_attrs(attrs: &[usize], d: usize) -> Result<Vec<f64>> {
    let mut v = vec![0.0; d];
    for &a in attrs {
        if a >= d {
            return Err(Error::Precondition(format!(
                "attribute {a} outside [0,{d})"
            )));
        }
        v[a] = 1.0;
    }
    Ok(v)
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    dataset: String,
    dataset_fingerprint: String,
    mode: QueryMode,
    seed: u64,
    k_max: usize,
    count: usize,
    split: [usize; 3],
    flagged: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct Line {
    nodes: Vec<usize>,
    attrs: Vec<usize>,
    community: usize,
    split: Split,
}

pub fn write_query_set(set: &QuerySet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    let header = Header {
        format_version: QUERY_FORMAT_VERSION,
        dataset: set.dataset.clone(),
        dataset_fingerprint: set.dataset_fingerprint.clone(),
        mode: set.config.mode,
        seed: set.config.seed,
        k_max: set.config.k_max,
        count: set.config.count,
        split: set.config.split,
        flagged: set.flagged,
    };
    serde_json::to_writer(&mut out, &header)?;
    out.push(b'\n');
    for (split, q) in set.iter() {
        let line = Line {
            nodes: q.nodes.clone(),
            attrs: q.attrs.clone(),
            community: q.community,
            split,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.push(b'\n');
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

pub fn read_query_set(path: impl AsRef<Path>) -> Result<QuerySet> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let header: Header = match lines.next() {
        Some((_, line)) => {
            let line = line.map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&line).map_err(|e| Error::parse(path, 1, e.to_string()))?
        }
        None => {
            return Err(Error::Format(format!(
                "{}: empty query file",
                path.display()
            )))
        }
    };
    if header.format_version != QUERY_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "{}: query format version {} is not supported",
            path.display(),
            header.format_version
        )));
    }
    let mut set = QuerySet {
        dataset: header.dataset,
        dataset_fingerprint: header.dataset_fingerprint,
        config: GenConfig {
            mode: header.mode,
            k_max: header.k_max,
            count: header.count,
            split: header.split,
            seed: header.seed,
        },
        flagged: header.flagged,
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Line =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        let q = Query {
            nodes: rec.nodes,
            attrs: rec.attrs,
            community: rec.community,
        };
        match rec.split {
            Split::Train => set.train.push(q),
            Split::Val => set.validation.push(q),
            Split::Test => set.test.push(q),
        }
    }
    Ok(set)
}

/// Errors unless every id in `set` is valid for `graph` and each query's
/// nodes lie in its community.
pub fn validate_queries(set: &QuerySet, graph: &AttributedGraph) -> Result<()> {
    for (_, q) in set.iter() {
        let Some(members) = graph.communities().get(q.community) else {
            return Err(Error::Compatibility(format!(
                "community {} does not exist",
                q.community
            )));
        };
        let members: BTreeSet<usize> = members.iter().copied().collect();
        if q.nodes.is_empty() || q.nodes.iter().any(|v| !members.contains(v)) {
            return Err(Error::Compatibility(format!(
                "query nodes {:?} are not inside community {}",
                q.nodes, q.community
            )));
        }
        if let Some(&a) = q.attrs.iter().find(|&&a| a >= graph.d()) {
            return Err(Error::Compatibility(format!(
                "attribute {a} outside [0,{})",
                graph.d()
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::query_distances;
    use crate::rng::seeded_rng;
    use proptest::prelude::*;

    fn graph(
        n: usize,
        edges: &[(usize, usize)],
        feats: &[(usize, usize, f64)],
        d: usize,
        comms: Vec<Vec<usize>>,
    ) -> AttributedGraph {
        AttributedGraph::new("q", n, d, edges, feats, comms)
            .unwrap()
            .0
    }

    #[test]
    fn single_node_mode_gives_singletons() {
        let mut rng = seeded_rng(0);
        let c: Vec<usize> = (0..20).collect();
        for _ in 0..100 {
            assert_eq!(sample_query_nodes(&c, 1, &mut rng).unwrap().len(), 1);
        }
        assert!(sample_query_nodes(&[], 3, &mut rng).is_err());
    }

    #[test]
    fn node_set_size_capped_by_community() {
        let mut rng = seeded_rng(1);
        for _ in 0..200 {
            let s = sample_query_nodes(&[4, 9], 3, &mut rng).unwrap();
            assert!(s.len() == 1 || s.len() == 2);
        }
    }

    #[test]
    fn node_set_sizes_uniform() {
        let mut rng = seeded_rng(2);
        let c: Vec<usize> = (0..100).collect();
        let mut counts = [0usize; 4];
        let draws = 10_000;
        for _ in 0..draws {
            counts[sample_query_nodes(&c, 3, &mut rng).unwrap().len()] += 1;
        }
        // binomial sd of a 1/3 frequency over 10^4 draws is about 0.0047
        for &k in &counts[1..] {
            let f = k as f64 / draws as f64;
            assert!((f - 1.0 / 3.0).abs() < 0.015, "frequency {f}");
        }
    }

    #[test]
    fn exclusive_attribute_always_first() {
        // attribute 2 is held by every member of {0, 1} and nobody else
        let feats = [
            (0, 2, 1.0),
            (1, 2, 1.0),
            (0, 0, 1.0),
            (2, 0, 1.0),
            (3, 0, 1.0),
            (2, 1, 1.0),
            (3, 1, 1.0),
        ];
        let g = graph(4, &[], &feats, 3, vec![vec![0, 1]]);
        assert_eq!(community_attr_ranking(&g, &[0, 1])[0], 2);
        let mut rng = seeded_rng(5);
        for _ in 0..20 {
            assert!(attrs_from_community(&g, &[0, 1], &mut rng)
                .unwrap()
                .contains(&2));
        }
    }

    #[test]
    fn toy_specificity_order() {
        // community {0,1,2}: counts (3,1,0); globally (3,5,4) over nodes 0..=5
        let mut feats = vec![(0, 0, 1.0), (1, 0, 1.0), (2, 0, 1.0), (0, 1, 1.0)];
        for v in 3..7 {
            feats.push((v, 1, 1.0));
            feats.push((v, 2, 1.0));
        }
        let g = graph(7, &[], &feats, 3, vec![vec![0, 1, 2]]);
        let global = column_sums(&g, 0..g.n());
        assert_eq!(global, vec![3.0, 5.0, 4.0]);
        assert_eq!(community_attr_ranking(&g, &[0, 1, 2])[0], 0);
    }

    #[test]
    fn uniform_attribute_scores_zero() {
        let feats: Vec<_> = (0..4).map(|v| (v, 0, 1.0)).collect();
        let g = graph(4, &[], &feats, 1, vec![vec![0, 1]]);
        let local = column_sums(&g, [0, 1].into_iter());
        let global = column_sums(&g, 0..4);
        assert_eq!(ranks(&local)[0] as i64 - ranks(&global)[0] as i64, 0);
    }

    #[test]
    fn node_attribute_selection() {
        let feats = [(0, 1, 1.0), (0, 4, 1.0), (0, 7, 1.0)];
        let g = graph(2, &[], &feats, 9, vec![]);
        assert_eq!(attrs_from_nodes(&g, &[0]).unwrap(), vec![1, 4, 7]);

        let mut feats = Vec::new();
        for j in [1, 3, 5, 7, 9] {
            feats.push((0, j, 1.0));
        }
        for j in [0, 2, 4, 6, 8] {
            feats.push((1, j, 1.0));
        }
        let g = graph(2, &[], &feats, 10, vec![]);
        assert_eq!(attrs_from_nodes(&g, &[0, 1]).unwrap(), vec![0, 1, 2, 3, 4]);

        let feats = [(0, 1, 2.0), (0, 2, 1.0), (0, 3, 3.0)];
        let g = graph(1, &[], &feats, 4, vec![]);
        assert_eq!(attrs_from_nodes(&g, &[0]).unwrap(), vec![1, 2, 3]);
    }

    fn two_communities() -> AttributedGraph {
        let feats: Vec<_> = (0..10)
            .map(|v| (v, v % 3, 1.0))
            .chain([(0, 3, 1.0), (1, 3, 1.0)])
            .collect();
        let edges: Vec<_> = (0..9).map(|v| (v, v + 1)).collect();
        graph(
            10,
            &edges,
            &feats,
            4,
            vec![(0..5).collect(), (5..10).collect()],
        )
    }

    #[test]
    fn mode_none_has_empty_attrs() {
        let g = two_communities();
        let set = generate_query_set(
            &g,
            &GenConfig {
                mode: QueryMode::None,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(set.len(), 350);
        assert!(set.iter().all(|(_, q)| q.attrs.is_empty()));
    }

    #[test]
    fn custom_split_sizes() {
        let g = two_communities();
        let cfg = GenConfig {
            count: 7,
            split: [3, 2, 2],
            ..Default::default()
        };
        let set = generate_query_set(&g, &cfg).unwrap();
        assert_eq!(
            (set.train.len(), set.validation.len(), set.test.len()),
            (3, 2, 2)
        );
        let bad = GenConfig { count: 8, ..cfg };
        assert!(matches!(
            generate_query_set(&g, &bad),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn generation_is_deterministic_and_consistent() {
        let g = two_communities();
        let cfg = GenConfig {
            seed: 99,
            ..Default::default()
        };
        let a = generate_query_set(&g, &cfg).unwrap();
        assert_eq!(a, generate_query_set(&g, &cfg).unwrap());
        validate_queries(&a, &g).unwrap();
        for c in 0..2 {
            let sets: BTreeSet<Vec<usize>> = a
                .iter()
                .filter(|(_, q)| q.community == c)
                .map(|(_, q)| q.attrs.clone())
                .collect();
            assert!(sets.len() <= 1);
        }
        assert!(a.iter().all(|(_, q)| (1..=5).contains(&q.attrs.len())));
        // mode none draws the same node sets
        let none = generate_query_set(
            &g,
            &GenConfig {
                mode: QueryMode::None,
                ..cfg
            },
        )
        .unwrap();
        assert!(a
            .iter()
            .zip(none.iter())
            .all(|((_, x), (_, y))| x.nodes == y.nodes));
    }

    #[test]
    fn small_graph_is_flagged() {
        let g = graph(2, &[(0, 1)], &[(0, 0, 1.0)], 1, vec![vec![0, 1]]);
        let set = generate_query_set(&g, &GenConfig::default()).unwrap();
        assert!(set.flagged);
        assert_eq!(set.len(), 350);
    }

    #[test]
    fn no_usable_community_is_a_generation_error() {
        let g = graph(3, &[], &[], 2, vec![]);
        assert!(matches!(
            generate_query_set(&g, &GenConfig::default()),
            Err(Error::Generation(_))
        ));
        let bare = graph(3, &[], &[], 2, vec![vec![0, 1]]);
        assert!(matches!(
            generate_query_set(&bare, &GenConfig::default()),
            Err(Error::Generation(_))
        ));
        let cfg = GenConfig {
            mode: QueryMode::None,
            ..Default::default()
        };
        assert!(generate_query_set(&bare, &cfg).is_ok());
    }

    #[test]
    fn query_file_round_trip() {
        let g = two_communities();
        let set = generate_query_set(
            &g,
            &GenConfig {
                seed: 4,
                ..Default::default()
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.jsonl");
        write_query_set(&set, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 351);
        assert_eq!(read_query_set(&path).unwrap(), set);
        set.check_graph(&g).unwrap();
    }

    #[test]
    fn structure_seed_on_path() {
        let g = graph(4, &[(0, 1), (1, 2), (2, 3)], &[], 1, vec![]);
        let seed = build_structure_seed(&query_distances(&g, &[0]).unwrap());
        assert_eq!(seed, vec![1.0, 0.75, 0.5, 0.25]);
        let g = graph(3, &[(0, 1)], &[], 1, vec![]);
        let seed = build_structure_seed(&query_distances(&g, &[0]).unwrap());
        assert_eq!(seed[2], 0.0);
    }

    #[test]
    fn multi_hot_vectors() {
        assert_eq!(one_hot_attrs(&[], 4).unwrap(), vec![0.0; 4]);
        assert_eq!(
            one_hot_attrs(&[1, 3, 3], 4).unwrap(),
            vec![0.0, 1.0, 0.0, 1.0]
        );
        assert_eq!(one_hot_attrs(&[0, 1, 2], 3).unwrap(), vec![1.0; 3]);
        assert!(one_hot_attrs(&[4], 4).is_err());
    }

    proptest! {
        #[test]
        fn structure_seed_monotone(
            (n, edges, q) in (2usize..40).prop_flat_map(|n| (
                Just(n),
                proptest::collection::vec((0..n, 0..n), 0..(2 * n)),
                proptest::collection::vec(0..n, 1..4),
            ))
        ) {
            let g = graph(n, &edges, &[], 1, vec![]);
            let dist = query_distances(&g, &q).unwrap();
            let seed = build_structure_seed(&dist);
            for i in 0..n {
                prop_assert!((0.0..=1.0).contains(&seed[i]));
                prop_assert_eq!(seed[i] == 1.0, q.contains(&i));
                if let Some(k) = dist.dist[i] {
                    if k > 0 {
                        prop_assert!(seed[i] > 0.0 && seed[i] < 1.0);
                    }
                }
                for j in 0..n {
                    let order = match (dist.dist[i], dist.dist[j]) {
                        (Some(a), Some(b)) => a <= b,
                        (Some(_), None) | (None, None) => true,
                        (None, Some(_)) => false,
                    };
                    if order {
                        prop_assert!(seed[i] >= seed[j]);
                    }
                }
            }
        }

        #[test]
        fn queries_stay_inside_their_community(seed in 0u64..1000) {
            let g = two_communities();
            let cfg = GenConfig { seed, count: 30, split: [10, 10, 10], ..Default::default() };
            let set = generate_query_set(&g, &cfg).unwrap();
            for (_, q) in set.iter() {
                prop_assert!(q.nodes.iter().all(|v| g.communities()[q.community].contains(v)));
            }
        }
    }
}
