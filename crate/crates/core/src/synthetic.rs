//! Planted-partition attributed graphs for tests, benchmarks and latency
//! runs when real data is not at hand.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::AttributedGraph;
use crate::rng::{below, seeded_rng, unit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub n: usize,
    pub d: usize,
    pub communities: usize,
    /// Expected neighbors of a node inside its own block.
    pub degree_in: f64,
    /// Expected neighbors of a node outside its block.
    pub degree_out: f64,
    /// Attributes drawn per node (with repeats collapsed).
    pub attrs_per_node: usize,
    /// Distinct attributes characteristic of each block.
    pub signature: usize,
    /// Chance that a drawn attribute is uniform over all `d` instead.
    pub attr_noise: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            n: 60,
            d: 30,
            communities: 3,
            degree_in: 4.0,
            degree_out: 0.5,
            attrs_per_node: 4,
            signature: 6,
            attr_noise: 0.2,
            seed: 0,
        }
    }
}

impl PlantedConfig {
    /// Roughly the size and sparsity of the Cora citation graph.
    pub fn cora_scale(seed: u64) -> Self {
        Self {
            n: 2708,
            d: 1433,
            communities: 7,
            degree_in: 3.2,
            degree_out: 0.7,
            attrs_per_node: 18,
            signature: 150,
            attr_noise: 0.3,
            seed,
        }
    }
}

/// Block of node `v` when `n` nodes are split into `k` near-equal runs.
fn block_of(v: usize, n: usize, k: usize) -> usize {
    v * k / n
}

pub fn planted_partition(config: &PlantedConfig) -> Result<AttributedGraph> {
    let PlantedConfig {
        n,
        d,
        communities: k,
        ..
    } = *config;
    if k == 0 || n < 2 * k || d == 0 {
        return Err(Error::Config(format!(
            "planted partition needs n >= 2k, k >= 1, d >= 1 (n = {n}, k = {k}, d = {d})"
        )));
    }
    let mut rng = seeded_rng(config.seed);
    let sizes: Vec<usize> = (0..k)
        .map(|c| (0..n).filter(|&v| block_of(v, n, k) == c).count())
        .collect();
    let mut edges = Vec::new();
    for u in 0..n {
        let bu = block_of(u, n, k);
        for v in u + 1..n {
            let bv = block_of(v, n, k);
            let p = if bu == bv {
                config.degree_in / (sizes[bu] - 1) as f64
            } else {
                config.degree_out / (n - sizes[bu]) as f64
            };
            if unit(&mut rng) < p {
                edges.push((u, v));
            }
        }
    }
    // signatures are contiguous attribute ranges, wrapping around d
    let mut feats = Vec::new();
    for v in 0..n {
        let b = block_of(v, n, k);
        let mut attrs: Vec<usize> = (0..config.attrs_per_node)
            .map(|_| {
                if unit(&mut rng) < config.attr_noise {
                    below(&mut rng, d)
                } else {
                    (b * config.signature + below(&mut rng, config.signature.max(1))) % d
                }
            })
            .collect();
        attrs.sort_unstable();
        attrs.dedup();
        feats.extend(attrs.into_iter().map(|a| (v, a, 1.0)));
    }
    let blocks: Vec<Vec<usize>> = (0..k)
        .map(|c| (0..n).filter(|&v| block_of(v, n, k) == c).collect())
        .collect();
    let name = format!("planted-n{n}-d{d}-k{k}-s{}", config.seed);
    Ok(AttributedGraph::new(&name, n, d, &edges, &feats, blocks)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_determinism() {
        let c = PlantedConfig::default();
        let a = planted_partition(&c).unwrap();
        let b = planted_partition(&c).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_eq!((a.n(), a.d(), a.k()), (60, 30, 3));
        assert!(a.communities().iter().all(|c| c.len() == 20));
        let other = planted_partition(&PlantedConfig { seed: 1, ..c }).unwrap();
        assert_ne!(a.fingerprint(), other.fingerprint());
    }

    #[test]
    fn blocks_are_denser_inside() {
        let g = planted_partition(&PlantedConfig {
            n: 300,
            ..Default::default()
        })
        .unwrap();
        let inside = g
            .edges()
            .iter()
            .filter(|(u, v)| block_of(*u, 300, 3) == block_of(*v, 300, 3))
            .count();
        assert!(inside > 4 * (g.m() - inside), "{inside} of {}", g.m());
    }

    #[test]
    fn cora_scale_density() {
        let g = planted_partition(&PlantedConfig::cora_scale(0)).unwrap();
        // expected edge count is n (degree_in + degree_out) / 2 = 5281
        assert!((4900..5700).contains(&g.m()), "m = {}", g.m());
        assert_eq!(g.k(), 7);
    }

    #[test]
    fn rejects_degenerate() {
        assert!(planted_partition(&PlantedConfig {
            n: 3,
            ..Default::default()
        })
        .is_err());
        assert!(planted_partition(&PlantedConfig {
            communities: 0,
            ..Default::default()
        })
        .is_err());
    }
}
