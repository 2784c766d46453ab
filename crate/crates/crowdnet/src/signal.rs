//! Per-stock crowding scores.
//!
//! A stock's crowding score is its centrality in the overweight graph minus
//! its centrality in the underweight graph; higher means more crowded.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use thiserror::Error;

use crate::graph::{
    build_split_graphs, centrality, median_filter, CentralityKind, CentralityVector, EigenSettings,
    GraphError,
};
use crate::ids::StockId;
use crate::ingest::HoldingsSnapshot;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("centrality kind mismatch: overweight {over}, underweight {under}")]
    KindMismatch {
        over: CentralityKind,
        under: CentralityKind,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Crowding scores for one quarter and one centrality kind.
#[derive(Debug, Clone, PartialEq)]
pub struct CrowdingScores {
    pub as_of_date: NaiveDate,
    pub kind: CentralityKind,
    /// One entry per universe stock; 0 when absent from both graphs.
    pub scores: BTreeMap<StockId, f64>,
    /// Sorted stock ids the scores partition.
    pub universe: Vec<StockId>,
}

impl CrowdingScores {
    pub fn score(&self, stock_id: &StockId) -> f64 {
        self.scores.get(stock_id).copied().unwrap_or(0.0)
    }
}

/// Overweight minus underweight centrality for every universe stock.
pub fn crowding_score(
    over: &CentralityVector,
    under: &CentralityVector,
    universe: &[StockId],
    as_of_date: NaiveDate,
) -> Result<CrowdingScores, SignalError> {
    if over.kind != under.kind {
        return Err(SignalError::KindMismatch {
            over: over.kind,
            under: under.kind,
        });
    }
    let mut universe = universe.to_vec();
    universe.sort();
    universe.dedup();
    let scores = universe
        .iter()
        .map(|s| (s.clone(), over.value(s) - under.value(s)))
        .collect();
    Ok(CrowdingScores {
        as_of_date,
        kind: over.kind,
        scores,
        universe,
    })
}

/// Full pipeline for one quarter: split graphs, median filter, centralities,
/// and the score difference. Returns the per-side centrality vectors too (for
/// diagnostics dumps); empty filtered graphs yield all-zero centralities.
pub fn score_pipeline_detailed(
    snapshot: &HoldingsSnapshot,
    kind: CentralityKind,
    universe: &[StockId],
    eigen: EigenSettings,
) -> Result<(CrowdingScores, CentralityVector, CentralityVector), SignalError> {
    let (over_raw, under_raw) = build_split_graphs(snapshot)?;
    let over_cv = centrality(&median_filter(&over_raw), kind, eigen)?;
    let under_cv = centrality(&median_filter(&under_raw), kind, eigen)?;
    let scores = crowding_score(&over_cv, &under_cv, universe, snapshot.as_of_date)?;
    Ok((scores, over_cv, under_cv))
}

/// [`score_pipeline_detailed`] without the per-side vectors.
pub fn score_pipeline(
    snapshot: &HoldingsSnapshot,
    kind: CentralityKind,
    universe: &[StockId],
    eigen: EigenSettings,
) -> Result<CrowdingScores, SignalError> {
    score_pipeline_detailed(snapshot, kind, universe, eigen).map(|(s, _, _)| s)
}

/// Scores every quarter for every requested kind, in parallel across
/// quarters. The result map is sorted, so parallelism never changes output.
pub fn score_quarters(
    snapshots: &[(HoldingsSnapshot, Vec<StockId>)],
    kinds: &[CentralityKind],
    eigen: EigenSettings,
) -> Result<BTreeMap<NaiveDate, BTreeMap<CentralityKind, CrowdingScores>>, SignalError> {
    use rayon::prelude::*;
    let per_quarter: Result<Vec<_>, SignalError> = snapshots
        .par_iter()
        .map(|(snapshot, universe)| {
            let mut by_kind = BTreeMap::new();
            for &kind in kinds {
                let scores = score_pipeline(snapshot, kind, universe, eigen)?;
                by_kind.insert(kind, scores);
            }
            Ok((snapshot.as_of_date, by_kind))
        })
        .collect();
    Ok(per_quarter?.into_iter().collect())
}
