//! Bipartite fund–stock graphs and their centrality measures.
//!
//! Each quarter yields two graphs: an overweight graph holding the positive
//! normalized active weights and an underweight graph holding the magnitudes
//! of the negative ones. Edges connect funds to stocks only. After the median
//! edge filter, stocks are scored by degree, weighted-degree, or eigenvector
//! centrality.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::ids::{FundId, StockId};
use crate::ingest::HoldingsSnapshot;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("market cap {market_cap} has non-positive log (must exceed 1 dollar)")]
    NonPositiveLog { market_cap: f64 },
    #[error("missing market cap for stock {stock_id}")]
    MissingMarketCap { stock_id: StockId },
    #[error("eigenvector centrality needs at least one edge")]
    EmptyGraph,
}

/// Which half of the active-weight split a graph holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Side {
    Overweight,
    Underweight,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Side::Overweight => "overweight",
            Side::Underweight => "underweight",
        })
    }
}

/// Centrality measure selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum CentralityKind {
    Degree,
    WeightedDegree,
    Eigenvector,
}

impl CentralityKind {
    pub const ALL: [CentralityKind; 3] = [
        CentralityKind::Degree,
        CentralityKind::WeightedDegree,
        CentralityKind::Eigenvector,
    ];

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "degree" => Some(Self::Degree),
            "weighted-degree" | "weighted_degree" | "weighteddegree" => Some(Self::WeightedDegree),
            "eigenvector" => Some(Self::Eigenvector),
            _ => None,
        }
    }
}

impl std::fmt::Display for CentralityKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Degree => "degree",
            Self::WeightedDegree => "weighted-degree",
            Self::Eigenvector => "eigenvector",
        })
    }
}

/// One fund→stock link with a strictly positive weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    /// Index into `fund_ids`.
    pub fund: usize,
    /// Index into `stock_ids`.
    pub stock: usize,
    pub weight: f64,
}

/// A filtered, weighted bipartite graph for one side of the split.
///
/// Bipartite by construction: edges always pair a fund index with a stock
/// index, so the (fund, stock) block-ordered adjacency matrix has zero
/// diagonal blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct CrowdGraph {
    pub side: Side,
    /// Sorted, deduplicated; only funds incident to at least one edge.
    pub fund_ids: Vec<FundId>,
    /// Sorted, deduplicated; only stocks incident to at least one edge.
    pub stock_ids: Vec<StockId>,
    pub edges: Vec<Edge>,
}

impl CrowdGraph {
    /// Builds a graph from (fund, stock, weight) links, indexing nodes in
    /// sorted id order. Weights must be positive and pairs unique.
    pub fn from_links(side: Side, links: Vec<(FundId, StockId, f64)>) -> Self {
        let mut fund_ids: Vec<FundId> = links.iter().map(|(f, _, _)| f.clone()).collect();
        fund_ids.sort();
        fund_ids.dedup();
        let mut stock_ids: Vec<StockId> = links.iter().map(|(_, s, _)| s.clone()).collect();
        stock_ids.sort();
        stock_ids.dedup();

        let fund_index: BTreeMap<&FundId, usize> =
            fund_ids.iter().enumerate().map(|(i, f)| (f, i)).collect();
        let stock_index: BTreeMap<&StockId, usize> =
            stock_ids.iter().enumerate().map(|(i, s)| (s, i)).collect();

        let mut edges: Vec<Edge> = links
            .iter()
            .map(|(f, s, w)| {
                assert!(*w > 0.0, "edge weights must be strictly positive");
                Edge {
                    fund: fund_index[f],
                    stock: stock_index[s],
                    weight: *w,
                }
            })
            .collect();
        edges.sort_by_key(|e| (e.fund, e.stock));
        assert!(
            edges.windows(2).all(|w| (w[0].fund, w[0].stock) != (w[1].fund, w[1].stock)),
            "duplicate (fund, stock) pair"
        );

        Self {
            side,
            fund_ids,
            stock_ids,
            edges,
        }
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Total node count, funds first then stocks.
    pub fn node_count(&self) -> usize {
        self.fund_ids.len() + self.stock_ids.len()
    }
}

/// Per-stock centrality values for one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralityVector {
    pub kind: CentralityKind,
    /// Stocks absent from the graph are absent here; downstream treats them
    /// as zero.
    pub values: BTreeMap<StockId, f64>,
    pub converged: bool,
    /// Power-iteration count; 0 for the degree kinds.
    pub iterations: usize,
}

impl CentralityVector {
    pub fn value(&self, stock_id: &StockId) -> f64 {
        self.values.get(stock_id).copied().unwrap_or(0.0)
    }

    fn exact(kind: CentralityKind, values: BTreeMap<StockId, f64>) -> Self {
        Self {
            kind,
            values,
            converged: true,
            iterations: 0,
        }
    }
}

/// Active weight divided by the natural log of market cap (in dollars).
///
/// The sign equals the sign of the raw active weight; the log denominator
/// removes the size bias of large-cap positions.
pub fn normalized_active_weight(
    fund_weight: f64,
    benchmark_weight: f64,
    market_cap: f64,
) -> Result<f64, GraphError> {
    if market_cap <= 1.0 || market_cap.is_nan() {
        return Err(GraphError::NonPositiveLog { market_cap });
    }
    Ok((fund_weight - benchmark_weight) / market_cap.ln())
}

/// Splits a snapshot into the overweight and underweight graphs.
///
/// Each holding with normalized active weight `w` contributes an edge of
/// magnitude `|w|` to the overweight graph when `w > 0`, to the underweight
/// graph when `w < 0`, and to neither when `w == 0`.
pub fn build_split_graphs(
    snapshot: &HoldingsSnapshot,
) -> Result<(CrowdGraph, CrowdGraph), GraphError> {
    let mut over = Vec::new();
    let mut under = Vec::new();
    for h in &snapshot.holdings {
        let cap = snapshot
            .market_caps
            .get(&h.stock_id)
            .copied()
            .ok_or_else(|| GraphError::MissingMarketCap {
                stock_id: h.stock_id.clone(),
            })?;
        let w = normalized_active_weight(h.weight, snapshot.benchmark_weight(&h.stock_id), cap)?;
        if w > 0.0 {
            over.push((h.fund_id.clone(), h.stock_id.clone(), w));
        } else if w < 0.0 {
            under.push((h.fund_id.clone(), h.stock_id.clone(), -w));
        }
    }
    Ok((
        CrowdGraph::from_links(Side::Overweight, over),
        CrowdGraph::from_links(Side::Underweight, under),
    ))
}

/// Keeps only edges whose weight is strictly above the median edge weight.
///
/// The median of an even count is the mean of the two middle values; edges
/// tied with the median are dropped, and nodes left isolated are removed
/// from the node lists.
pub fn median_filter(graph: &CrowdGraph) -> CrowdGraph {
    if graph.is_empty() {
        return CrowdGraph::from_links(graph.side, Vec::new());
    }
    let mut weights: Vec<f64> = graph.edges.iter().map(|e| e.weight).collect();
    weights.sort_by(|a, b| a.partial_cmp(b).expect("edge weights are finite"));
    let n = weights.len();
    let median = if n % 2 == 1 {
        weights[n / 2]
    } else {
        (weights[n / 2 - 1] + weights[n / 2]) / 2.0
    };
    let links = graph
        .edges
        .iter()
        .filter(|e| e.weight > median)
        .map(|e| {
            (
                graph.fund_ids[e.fund].clone(),
                graph.stock_ids[e.stock].clone(),
                e.weight,
            )
        })
        .collect();
    CrowdGraph::from_links(graph.side, links)
}

/// Fraction of the graph's funds adjacent to each stock.
pub fn degree_centrality(graph: &CrowdGraph) -> CentralityVector {
    let n_funds = graph.fund_ids.len();
    let mut counts: BTreeMap<StockId, usize> = BTreeMap::new();
    for e in &graph.edges {
        *counts.entry(graph.stock_ids[e.stock].clone()).or_insert(0) += 1;
    }
    let values = counts
        .into_iter()
        .map(|(s, c)| (s, c as f64 / n_funds as f64))
        .collect();
    CentralityVector::exact(CentralityKind::Degree, values)
}

/// Sum of incident edge weights per stock (node strength).
pub fn weighted_degree_centrality(graph: &CrowdGraph) -> CentralityVector {
    let mut values: BTreeMap<StockId, f64> = BTreeMap::new();
    for e in &graph.edges {
        *values
            .entry(graph.stock_ids[e.stock].clone())
            .or_insert(0.0) += e.weight;
    }
    CentralityVector::exact(CentralityKind::WeightedDegree, values)
}

/// Power-iteration settings for eigenvector centrality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenSettings {
    /// L∞ tolerance on successive normalized iterates.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EigenSettings {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 1000,
        }
    }
}

/// Stock components of the dominant eigenvector of the symmetric
/// (funds + stocks) adjacency matrix.
///
/// Power iteration starts from the uniform positive vector and L2-normalizes
/// each step. A bipartite adjacency has a symmetric spectrum (±λ for the
/// Perron root λ), so the iteration runs on A + σI with σ = max row sum:
/// the shift leaves every eigenvector unchanged, makes the Perron pair
/// strictly dominant, and keeps the iterates nonnegative. The full node
/// vector has unit L2 norm before the stock components are extracted.
pub fn eigenvector_centrality(
    graph: &CrowdGraph,
    settings: EigenSettings,
) -> Result<CentralityVector, GraphError> {
    if graph.is_empty() {
        return Err(GraphError::EmptyGraph);
    }
    let n_funds = graph.fund_ids.len();
    let n = graph.node_count();

    let mut row_sum = vec![0.0_f64; n];
    for e in &graph.edges {
        row_sum[e.fund] += e.weight;
        row_sum[n_funds + e.stock] += e.weight;
    }
    let shift = row_sum.iter().fold(0.0_f64, |a, &b| a.max(b));

    let mut x = vec![1.0 / (n as f64).sqrt(); n];
    let mut next = vec![0.0_f64; n];
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=settings.max_iter {
        iterations = iter;
        for (i, v) in next.iter_mut().enumerate() {
            *v = shift * x[i];
        }
        for e in &graph.edges {
            next[e.fund] += e.weight * x[n_funds + e.stock];
            next[n_funds + e.stock] += e.weight * x[e.fund];
        }
        let norm = next.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in next.iter_mut() {
            *v /= norm;
        }
        let delta = x
            .iter()
            .zip(next.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        x.copy_from_slice(&next);
        if delta < settings.tol {
            converged = true;
            break;
        }
    }

    let values = graph
        .stock_ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), x[n_funds + i]))
        .collect();
    Ok(CentralityVector {
        kind: CentralityKind::Eigenvector,
        values,
        converged,
        iterations,
    })
}

/// Dispatches on the centrality kind. Empty graphs yield an empty vector for
/// every kind (all stocks then read as zero downstream).
pub fn centrality(
    graph: &CrowdGraph,
    kind: CentralityKind,
    eigen: EigenSettings,
) -> Result<CentralityVector, GraphError> {
    match kind {
        CentralityKind::Degree => Ok(degree_centrality(graph)),
        CentralityKind::WeightedDegree => Ok(weighted_degree_centrality(graph)),
        CentralityKind::Eigenvector => {
            if graph.is_empty() {
                Ok(CentralityVector::exact(CentralityKind::Eigenvector, BTreeMap::new()))
            } else {
                eigenvector_centrality(graph, eigen)
            }
        }
    }
}
