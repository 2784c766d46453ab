//! Stock-crowding analysis from fund-holdings networks.
//!
//! The pipeline builds a bipartite fund–stock graph per quarter from
//! capitalization-normalized active weights, splits it into overweight and
//! underweight graphs, scores stocks by the difference of their graph
//! centralities, and evaluates the signal with quintile portfolios and a
//! factor-neutral long/short hedge book.
//!
//! Modules follow the pipeline stages:
//!
//! - [`ingest`] — CSV loading and validation of holdings, benchmark, caps,
//!   returns, and factor panels
//! - [`graph`] — bipartite graph construction, median edge filter, and the
//!   three centrality measures
//! - [`signal`] — per-stock crowding scores (overweight minus underweight
//!   centrality)
//! - [`portfolio`] — quintile portfolios and the constrained long/short book
//! - [`backtest`] — lagged quarterly rebalance protocol and return metrics
//! - [`synth`] — seeded synthetic data generator with planted ground truth
//! - [`report`] — CSV/SVG artifact writers with reproducibility metadata

pub mod backtest;
pub mod graph;
pub mod ids;
pub mod ingest;
pub mod portfolio;
pub mod report;
pub mod signal;
pub mod synth;

pub use chrono::NaiveDate;
pub use ids::{FundId, StockId};
