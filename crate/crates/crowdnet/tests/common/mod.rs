//! Shared helpers for integration tests: random connected bipartite graphs
//! and a dense full-spectrum eigensolver oracle, independent of the power
//! iteration it checks.

use std::collections::{BTreeMap, BTreeSet};

use crowdnet::graph::{CrowdGraph, Side};
use crowdnet::ids::{FundId, StockId};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seeded random connected bipartite graph with at most `max_nodes` nodes and
/// weights in (0, 1]. Connectivity comes from incremental attachment: every
/// new node links to a random existing node of the other type.
pub fn random_connected_bipartite(seed: u64, max_nodes: usize) -> CrowdGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_funds = rng.random_range(2..=(max_nodes / 2).min(20));
    let n_stocks = rng.random_range(2..=(max_nodes - n_funds).min(30));

    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    edges.insert((0, 0));
    let mut have_funds = 1;
    let mut have_stocks = 1;
    while have_funds < n_funds || have_stocks < n_stocks {
        let add_fund = have_funds < n_funds && (have_stocks >= n_stocks || rng.random_bool(0.5));
        if add_fund {
            edges.insert((have_funds, rng.random_range(0..have_stocks)));
            have_funds += 1;
        } else {
            edges.insert((rng.random_range(0..have_funds), have_stocks));
            have_stocks += 1;
        }
    }
    for _ in 0..rng.random_range(0..=2 * (n_funds + n_stocks)) {
        edges.insert((rng.random_range(0..n_funds), rng.random_range(0..n_stocks)));
    }

    let links = edges
        .into_iter()
        .map(|(f, s)| {
            (
                FundId::new(format!("F{f:02}")),
                StockId::new(format!("S{s:02}")),
                rng.random_range(0.01..=1.0),
            )
        })
        .collect();
    CrowdGraph::from_links(Side::Overweight, links)
}

/// Stock components of the dominant eigenvector via a dense full
/// eigendecomposition of the symmetric adjacency, sign-aligned to the
/// nonnegative orthant.
pub fn dense_dominant_stock_values(graph: &CrowdGraph) -> BTreeMap<StockId, f64> {
    let n_funds = graph.fund_ids.len();
    let n = graph.node_count();
    let mut a = DMatrix::<f64>::zeros(n, n);
    for e in &graph.edges {
        a[(e.fund, n_funds + e.stock)] = e.weight;
        a[(n_funds + e.stock, e.fund)] = e.weight;
    }
    let eig = nalgebra::SymmetricEigen::new(a);
    let dominant = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| {
            if v > acc.1 {
                (i, v)
            } else {
                acc
            }
        })
        .0;
    let mut v = eig.eigenvectors.column(dominant).clone_owned();
    if v.iter().sum::<f64>() < 0.0 {
        v = -v;
    }
    graph
        .stock_ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), v[n_funds + i]))
        .collect()
}
