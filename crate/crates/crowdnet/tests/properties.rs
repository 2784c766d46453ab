//! Property tests for the graph, signal, portfolio, and metric invariants.

mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;

use crowdnet::backtest::market_correlation;
use crowdnet::graph::{
    degree_centrality, eigenvector_centrality, median_filter, CentralityKind, CrowdGraph,
    EigenSettings, Side,
};
use crowdnet::ids::{FundId, StockId};
use crowdnet::ingest::ReturnsPanel;
use crowdnet::portfolio::{
    build_longshort, portfolio_factor_exposure, quintile_portfolios, PortfolioError,
};
use crowdnet::signal::CrowdingScores;

fn dedup_links(raw: Vec<(u8, u8, f64)>) -> Vec<(FundId, StockId, f64)> {
    let mut seen = std::collections::BTreeSet::new();
    raw.into_iter()
        .filter(|(f, s, _)| seen.insert((*f, *s)))
        .map(|(f, s, w)| (FundId::new(format!("F{f:02}")), StockId::new(format!("S{s:02}")), w))
        .collect()
}

fn arb_links() -> impl Strategy<Value = Vec<(u8, u8, f64)>> {
    prop::collection::vec((0u8..8, 0u8..12, 0.01f64..1.0), 1..40)
}

proptest! {
    /// The block-ordered adjacency has zero diagonal blocks: every edge pairs
    /// a fund index with a stock index.
    #[test]
    fn bipartite_by_construction(raw in arb_links()) {
        let g = CrowdGraph::from_links(Side::Overweight, dedup_links(raw));
        for e in &g.edges {
            prop_assert!(e.fund < g.fund_ids.len());
            prop_assert!(e.stock < g.stock_ids.len());
            prop_assert!(e.weight > 0.0);
        }
    }

    /// Scaling every edge weight by c > 0 leaves eigenvector centrality
    /// unchanged.
    #[test]
    fn eigenvector_scale_equivariance(raw in arb_links(), c in 0.05f64..20.0) {
        let links = dedup_links(raw);
        let g = CrowdGraph::from_links(Side::Overweight, links.clone());
        let scaled = CrowdGraph::from_links(
            Side::Overweight,
            links.into_iter().map(|(f, s, w)| (f, s, w * c)).collect(),
        );
        let a = eigenvector_centrality(&g, EigenSettings::default()).unwrap();
        let b = eigenvector_centrality(&scaled, EigenSettings::default()).unwrap();
        for (s, v) in &a.values {
            prop_assert!((v - b.values[s]).abs() < 1e-9, "stock {s}: {v} vs {}", b.values[s]);
        }
    }

    /// With the uniform positive start every reported value is nonnegative.
    #[test]
    fn eigenvector_perron_nonnegative(raw in arb_links()) {
        let g = CrowdGraph::from_links(Side::Overweight, dedup_links(raw));
        let cv = eigenvector_centrality(&g, EigenSettings::default()).unwrap();
        for (s, v) in &cv.values {
            prop_assert!(*v >= 0.0, "stock {s} got negative centrality {v}");
        }
    }

    /// Adding an edge to a stock never decreases that stock's degree
    /// centrality.
    #[test]
    fn degree_monotone_under_edge_addition(raw in arb_links(), f in 100u8..110, s in 0u8..12) {
        let links = dedup_links(raw);
        let g = CrowdGraph::from_links(Side::Overweight, links.clone());
        let stock = StockId::new(format!("S{s:02}"));
        let before = degree_centrality(&g).value(&stock);

        // A fresh fund id guarantees the pair is new.
        let mut extended = links;
        extended.push((FundId::new(format!("F{f:02}")), stock.clone(), 0.5));
        let g2 = CrowdGraph::from_links(Side::Overweight, extended);
        let after = degree_centrality(&g2).value(&stock);
        prop_assert!(after >= before, "degree fell from {before} to {after}");
    }

    /// The median filter keeps exactly the edges strictly above the median.
    #[test]
    fn median_filter_strict_semantics(raw in arb_links()) {
        let g = CrowdGraph::from_links(Side::Overweight, dedup_links(raw));
        let mut weights: Vec<f64> = g.edges.iter().map(|e| e.weight).collect();
        weights.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = weights.len();
        let median = if n % 2 == 1 {
            weights[n / 2]
        } else {
            (weights[n / 2 - 1] + weights[n / 2]) / 2.0
        };
        let expected: usize = g.edges.iter().filter(|e| e.weight > median).count();
        let filtered = median_filter(&g);
        prop_assert_eq!(filtered.edge_count(), expected);
        for e in &filtered.edges {
            prop_assert!(e.weight > median);
        }
        // No isolated nodes survive.
        let mut fund_used = vec![false; filtered.fund_ids.len()];
        let mut stock_used = vec![false; filtered.stock_ids.len()];
        for e in &filtered.edges {
            fund_used[e.fund] = true;
            stock_used[e.stock] = true;
        }
        prop_assert!(fund_used.iter().all(|u| *u));
        prop_assert!(stock_used.iter().all(|u| *u));
    }

    /// Pearson correlation never leaves [−1, 1] by more than rounding.
    #[test]
    fn correlation_bounded(
        xs in prop::collection::vec(-0.5f64..0.5, 4..50),
        ys in prop::collection::vec(-0.5f64..0.5, 4..50),
    ) {
        let n = xs.len().min(ys.len());
        if let Ok(r) = market_correlation(&xs[..n], &ys[..n]) {
            prop_assert!(r.abs() <= 1.0 + 1e-12);
        }
    }

    /// Quintiles are disjoint, cover the universe, differ in size by at most
    /// one, and each sleeve's weights sum to one.
    #[test]
    fn quintiles_partition(scores in prop::collection::vec(-10i16..10, 5..80)) {
        let universe: Vec<StockId> = (0..scores.len())
            .map(|i| StockId::new(format!("S{i:03}")))
            .collect();
        let cs = CrowdingScores {
            as_of_date: "2014-03-31".parse().unwrap(),
            kind: CentralityKind::Eigenvector,
            scores: universe
                .iter()
                .zip(&scores)
                .map(|(s, v)| (s.clone(), f64::from(*v)))
                .collect(),
            universe: universe.clone(),
        };
        let set = quintile_portfolios(&cs, "2014-05-31".parse().unwrap()).unwrap();

        let mut seen = BTreeMap::new();
        let mut sizes = Vec::new();
        for q in &set.quintiles {
            sizes.push(q.weights.len());
            let total: f64 = q.weights.values().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            for s in q.weights.keys() {
                prop_assert!(seen.insert(s.clone(), ()).is_none(), "stock {s} in two quintiles");
            }
        }
        prop_assert_eq!(seen.len(), universe.len());
        let max = sizes.iter().max().unwrap();
        let min = sizes.iter().min().unwrap();
        prop_assert!(max - min <= 1);
    }
}

fn panel_from_loadings(loadings: &[(StockId, [f64; 5])]) -> ReturnsPanel {
    ReturnsPanel::new(
        vec![],
        vec![],
        loadings
            .iter()
            .map(|(s, l)| (s.clone(), "2014-03-31".parse().unwrap(), *l))
            .collect(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// The long/short book either satisfies every constraint or reports
    /// Infeasible; it never returns a violating portfolio. Identical inputs
    /// give identical books, and an untouched candidate set means the
    /// projection hit the constraints exactly.
    #[test]
    fn longshort_never_violates(
        seed_loadings in prop::collection::vec(
            prop::array::uniform5(-1.0f64..1.0),
            24..40,
        ),
    ) {
        let n = seed_loadings.len();
        let universe: Vec<StockId> = (0..n).map(|i| StockId::new(format!("S{i:03}"))).collect();
        let loadings: Vec<(StockId, [f64; 5])> = universe
            .iter()
            .cloned()
            .zip(seed_loadings.iter().copied())
            .collect();
        let panel = panel_from_loadings(&loadings);
        let cs = CrowdingScores {
            as_of_date: "2014-03-31".parse().unwrap(),
            kind: CentralityKind::Eigenvector,
            scores: universe
                .iter()
                .enumerate()
                .map(|(i, s)| (s.clone(), i as f64))
                .collect(),
            universe: universe.clone(),
        };

        let n_per_side = 8;
        let bound = 0.02;
        let date = "2014-05-31".parse().unwrap();
        match build_longshort(&cs, &panel, date, n_per_side, bound) {
            Err(PortfolioError::Infeasible { .. }) => {}
            Err(other) => prop_assert!(false, "unexpected error {other}"),
            Ok(port) => {
                prop_assert!((port.long_sum() - 1.0).abs() <= 1e-9);
                prop_assert!((port.short_sum() + 1.0).abs() <= 1e-9);
                prop_assert!((port.gross_exposure() - 2.0).abs() <= 1e-9);
                prop_assert!(port.names_long() <= n_per_side);
                prop_assert!(port.names_short() <= n_per_side);
                let expo =
                    portfolio_factor_exposure(&port, &panel, cs.as_of_date).unwrap();
                prop_assert!(expo.max_abs() <= bound + 1e-12, "exposure {}", expo.max_abs());

                // Determinism.
                let again = build_longshort(&cs, &panel, date, n_per_side, bound).unwrap();
                prop_assert_eq!(port.weights.clone(), again.weights);

                // Projection correctness: with no repair or drop, Cw = b
                // holds to 1e-9, so exposures are numerically zero.
                if port.names_long() == n_per_side && port.names_short() == n_per_side {
                    prop_assert!(expo.max_abs() <= 1e-9, "exposure {}", expo.max_abs());
                }
            }
        }
    }
}

/// Power iteration agrees with the dense eigensolver oracle on connected
/// graphs (spot version; the acceptance suite runs 100 seeded cases).
#[test]
fn eigenvector_matches_dense_oracle_spot() {
    for seed in 0..10u64 {
        let g = common::random_connected_bipartite(seed, 50);
        let cv = eigenvector_centrality(&g, EigenSettings::default()).unwrap();
        let oracle = common::dense_dominant_stock_values(&g);
        for (s, v) in &cv.values {
            let diff = (v - oracle[s]).abs();
            assert!(diff < 1e-8, "seed {seed} stock {s}: {diff}");
        }
    }
}
