//! Lagged quarterly rebalance protocol and return metrics.
//!
//! Portfolios form two calendar months after each holdings quarter-end
//! (reporting delay) and are observed buy-and-hold over 1/3/6/12-month
//! windows. Each series is summarized by mean, adjusted Fisher–Pearson
//! skewness, Pearson correlation with the market, and the quadratic beta
//! (the coefficient on squared market return in an OLS of portfolio returns
//! on the market return and its square).

use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::graph::CentralityKind;
use crate::ids::StockId;
use crate::ingest::{add_months_clamped, month_end_after, month_end_of, ReturnsPanel};
use crate::portfolio::{
    build_longshort, portfolio_factor_exposure, quintile_portfolios, Portfolio,
};
use crate::signal::CrowdingScores;

/// Relative singular-value cutoff for rank detection in the OLS fit.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("{date} is not a quarter-end date")]
    NotQuarterEnd { date: NaiveDate },
    #[error("missing return for stock {stock_id} at {date}")]
    MissingReturns { stock_id: StockId, date: NaiveDate },
    #[error("missing market return at {date}")]
    MissingMarketReturn { date: NaiveDate },
    #[error("degenerate series: {reason}")]
    DegenerateSeries { reason: String },
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("series lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
}

/// One rebalance: a holdings quarter-end and its lagged construction date.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleEntry {
    pub holdings_date: NaiveDate,
    pub construction_date: NaiveDate,
}

/// Sorted rebalance entries plus the observation horizons in months.
#[derive(Debug, Clone, PartialEq)]
pub struct RebalanceSchedule {
    pub entries: Vec<ScheduleEntry>,
    pub horizons: Vec<u32>,
    pub lag_months: u32,
}

fn is_quarter_end(date: NaiveDate) -> bool {
    matches!(date.month(), 3 | 6 | 9 | 12) && date == month_end_of(date)
}

/// Builds the rebalance schedule: construction is `lag_months` calendar
/// months after each quarter end, day clamped to the target month's end.
pub fn build_schedule(
    holdings_dates: &[NaiveDate],
    lag_months: u32,
    horizons: &[u32],
) -> Result<RebalanceSchedule, BacktestError> {
    let mut dates = holdings_dates.to_vec();
    dates.sort();
    dates.dedup();
    let mut entries = Vec::with_capacity(dates.len());
    for date in dates {
        if !is_quarter_end(date) {
            return Err(BacktestError::NotQuarterEnd { date });
        }
        entries.push(ScheduleEntry {
            holdings_date: date,
            construction_date: add_months_clamped(date, lag_months),
        });
    }
    let mut horizons = horizons.to_vec();
    horizons.sort_unstable();
    horizons.dedup();
    Ok(RebalanceSchedule {
        entries,
        horizons,
        lag_months,
    })
}

/// Buy-and-hold portfolio return over the `horizon_months` months following
/// `start`'s month: each position compounds its monthly returns, weights stay
/// fixed at construction. Never reads a return dated in or before `start`'s
/// own month.
pub fn portfolio_return(
    portfolio: &Portfolio,
    panel: &ReturnsPanel,
    start: NaiveDate,
    horizon_months: u32,
) -> Result<f64, BacktestError> {
    let mut total = 0.0;
    for (stock_id, weight) in &portfolio.weights {
        let mut growth = 1.0;
        for k in 1..=horizon_months {
            let date = month_end_after(start, k);
            let r = panel
                .stock_return(stock_id, date)
                .ok_or_else(|| BacktestError::MissingReturns {
                    stock_id: stock_id.clone(),
                    date,
                })?;
            growth *= 1.0 + r;
        }
        total += weight * (growth - 1.0);
    }
    Ok(total)
}

/// Compounded market return over the same window as [`portfolio_return`].
pub fn market_window_return(
    panel: &ReturnsPanel,
    start: NaiveDate,
    horizon_months: u32,
) -> Result<f64, BacktestError> {
    let mut growth = 1.0;
    for k in 1..=horizon_months {
        let date = month_end_after(start, k);
        let r = panel
            .market_return(date)
            .ok_or(BacktestError::MissingMarketReturn { date })?;
        growth *= 1.0 + r;
    }
    Ok(growth - 1.0)
}

/// Quintile-minus-benchmark return per rebalance entry for fixed portfolios.
pub fn alpha_series(
    quintile: &Portfolio,
    benchmark: &Portfolio,
    panel: &ReturnsPanel,
    schedule: &RebalanceSchedule,
    horizon_months: u32,
) -> Result<Vec<f64>, BacktestError> {
    schedule
        .entries
        .iter()
        .map(|entry| {
            let q = portfolio_return(quintile, panel, entry.construction_date, horizon_months)?;
            let b = portfolio_return(benchmark, panel, entry.construction_date, horizon_months)?;
            Ok(q - b)
        })
        .collect()
}

/// Adjusted Fisher–Pearson sample skewness:
/// `G1 = m3 / m2^{3/2} · sqrt(n(n−1)) / (n−2)` with central moments `mk`.
pub fn sample_skewness(xs: &[f64]) -> Result<f64, BacktestError> {
    let n = xs.len();
    if n < 3 {
        return Err(BacktestError::DegenerateSeries {
            reason: format!("need at least 3 observations, got {n}"),
        });
    }
    let nf = n as f64;
    let mean = xs.iter().sum::<f64>() / nf;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / nf;
    let m3 = xs.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / nf;
    if m2 == 0.0 {
        return Err(BacktestError::DegenerateSeries {
            reason: "zero variance".to_string(),
        });
    }
    let g1 = m3 / m2.powf(1.5);
    Ok(g1 * (nf * (nf - 1.0)).sqrt() / (nf - 2.0))
}

/// Pearson correlation between portfolio and market return series.
pub fn market_correlation(port: &[f64], mkt: &[f64]) -> Result<f64, BacktestError> {
    if port.len() != mkt.len() {
        return Err(BacktestError::LengthMismatch {
            left: port.len(),
            right: mkt.len(),
        });
    }
    let n = port.len();
    if n < 2 {
        return Err(BacktestError::DegenerateSeries {
            reason: format!("need at least 2 observations, got {n}"),
        });
    }
    let nf = n as f64;
    let mean_p = port.iter().sum::<f64>() / nf;
    let mean_m = mkt.iter().sum::<f64>() / nf;
    let mut cov = 0.0;
    let mut var_p = 0.0;
    let mut var_m = 0.0;
    for i in 0..n {
        let dp = port[i] - mean_p;
        let dm = mkt[i] - mean_m;
        cov += dp * dm;
        var_p += dp * dp;
        var_m += dm * dm;
    }
    if var_p == 0.0 || var_m == 0.0 {
        return Err(BacktestError::DegenerateSeries {
            reason: "constant series".to_string(),
        });
    }
    Ok(cov / (var_p * var_m).sqrt())
}

/// OLS of portfolio returns on `[1, r_m, r_m²]`, solved by SVD least squares.
/// Returns `(intercept, linear, quadratic)`; the quadratic coefficient is the
/// quadratic beta, positive for convex payoffs.
pub fn quadratic_beta(port: &[f64], mkt: &[f64]) -> Result<(f64, f64, f64), BacktestError> {
    if port.len() != mkt.len() {
        return Err(BacktestError::LengthMismatch {
            left: port.len(),
            right: mkt.len(),
        });
    }
    let n = port.len();
    if n < 4 {
        return Err(BacktestError::DegenerateSeries {
            reason: format!("need at least 4 observations, got {n}"),
        });
    }
    let x = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => 1.0,
        1 => mkt[i],
        _ => mkt[i] * mkt[i],
    });
    let y = DVector::from_column_slice(port);
    let svd = x.svd(true, true);
    let smax = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|s| **s > smax * RANK_TOL)
        .count();
    if rank < 3 {
        return Err(BacktestError::RankDeficient);
    }
    let coef = svd
        .solve(&y, smax * RANK_TOL)
        .map_err(|_| BacktestError::RankDeficient)?;
    Ok((coef[0], coef[1], coef[2]))
}

/// One observation of a portfolio and the market over the same window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodReturn {
    pub construction_date: NaiveDate,
    pub portfolio_return: f64,
    pub market_return: f64,
}

/// The four evaluation metrics; `None` where the series is too short or
/// degenerate for the estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mean: Option<f64>,
    pub skewness: Option<f64>,
    pub market_correlation: Option<f64>,
    pub quadratic_beta: Option<f64>,
}

impl Metrics {
    /// Recomputable from the stored series alone; the quadratic beta equals
    /// the `c` of the returned fit exactly.
    pub fn from_series(series: &[PeriodReturn]) -> (Metrics, Option<(f64, f64, f64)>) {
        let port: Vec<f64> = series.iter().map(|p| p.portfolio_return).collect();
        let mkt: Vec<f64> = series.iter().map(|p| p.market_return).collect();
        let mean = if port.is_empty() {
            None
        } else {
            Some(port.iter().sum::<f64>() / port.len() as f64)
        };
        let skewness = sample_skewness(&port).ok();
        let correlation = market_correlation(&port, &mkt).ok();
        let fit = quadratic_beta(&port, &mkt).ok();
        (
            Metrics {
                mean,
                skewness,
                market_correlation: correlation,
                quadratic_beta: fit.map(|f| f.2),
            },
            fit,
        )
    }
}

/// Return series and summary metrics for one portfolio at one horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct BacktestReport {
    pub portfolio_label: String,
    pub horizon_months: u32,
    pub period_returns: Vec<PeriodReturn>,
    pub metrics: Metrics,
    pub quad_fit: Option<(f64, f64, f64)>,
}

/// Long/short metrics for one centrality kind (signal-comparison table row).
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub kind: CentralityKind,
    pub horizon_months: u32,
    pub metrics: Metrics,
    pub n_periods: usize,
}

/// Mean and skewness of one quintile's alpha series at one horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct QuintileAlphaRow {
    pub quintile: usize,
    pub horizon_months: u32,
    pub mean_alpha: Option<f64>,
    pub skewness: Option<f64>,
    pub n_periods: usize,
}

/// Factor tilts of one quintile relative to the benchmark for one quarter.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorTiltRow {
    pub as_of_date: NaiveDate,
    pub quintile: usize,
    pub tilts: [f64; 5],
}

/// A quarter (or quarter × horizon) excluded from aggregation, with cause.
#[derive(Debug, Clone, PartialEq)]
pub struct SkippedItem {
    pub holdings_date: NaiveDate,
    pub context: String,
    pub reason: String,
}

/// Static configuration of a backtest run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BacktestConfig {
    /// Centrality kind used for quintile and detailed long/short reporting.
    pub kind: CentralityKind,
    pub n_per_side: usize,
    pub factor_bound: f64,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            kind: CentralityKind::Eigenvector,
            n_per_side: 100,
            factor_bound: 0.02,
        }
    }
}

/// Everything a backtest run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct BacktestOutput {
    pub detail_kind: CentralityKind,
    /// Keyed by (portfolio label, horizon); labels are Q1..Q5, benchmark,
    /// longshort, all for the detail kind.
    pub reports: BTreeMap<(String, u32), BacktestReport>,
    /// Long/short metrics per centrality kind per horizon.
    pub comparison: Vec<ComparisonRow>,
    pub quintile_alphas: Vec<QuintileAlphaRow>,
    pub factor_tilts: Vec<FactorTiltRow>,
    /// Detail-kind long/short series at the shortest horizon.
    pub ls_scatter: Vec<PeriodReturn>,
    pub ls_quad_fit: Option<(f64, f64, f64)>,
    pub skipped: Vec<SkippedItem>,
    pub notes: Vec<String>,
}

impl BacktestOutput {
    /// Fig-6-style rows (one per centrality kind, declaration order) at the
    /// given horizon.
    pub fn comparison_table(&self, horizon_months: u32) -> Vec<&ComparisonRow> {
        CentralityKind::ALL
            .iter()
            .filter_map(|kind| {
                self.comparison
                    .iter()
                    .find(|row| row.kind == *kind && row.horizon_months == horizon_months)
            })
            .collect()
    }
}

/// Runs the full protocol: per quarter build quintiles and long/short books,
/// observe every horizon, and aggregate the metric quadruple per portfolio
/// per horizon. Per-quarter failures are recorded and skipped, never fatal.
pub fn run_backtest(
    scores_by_quarter: &BTreeMap<NaiveDate, BTreeMap<CentralityKind, CrowdingScores>>,
    panel: &ReturnsPanel,
    schedule: &RebalanceSchedule,
    config: &BacktestConfig,
) -> BacktestOutput {
    let mut skipped: Vec<SkippedItem> = Vec::new();
    let mut detail_series: BTreeMap<(String, u32), Vec<PeriodReturn>> = BTreeMap::new();
    let mut ls_series: BTreeMap<(CentralityKind, u32), Vec<PeriodReturn>> = BTreeMap::new();
    let mut alpha_acc: BTreeMap<(usize, u32), Vec<f64>> = BTreeMap::new();
    let mut factor_tilts: Vec<FactorTiltRow> = Vec::new();

    for entry in &schedule.entries {
        let skip = |context: &str, reason: String| SkippedItem {
            holdings_date: entry.holdings_date,
            context: context.to_string(),
            reason,
        };

        let Some(by_kind) = scores_by_quarter.get(&entry.holdings_date) else {
            skipped.push(skip("quarter", "no scores for this quarter".to_string()));
            continue;
        };

        // Quintiles and benchmark for the detail kind.
        let quintile_set = match by_kind.get(&config.kind) {
            None => {
                skipped.push(skip(
                    "quarter",
                    format!("no {} scores for this quarter", config.kind),
                ));
                None
            }
            Some(scores) => match quintile_portfolios(scores, entry.construction_date) {
                Ok(set) => Some(set),
                Err(e) => {
                    skipped.push(skip("quintiles", e.to_string()));
                    None
                }
            },
        };

        // Long/short book per centrality kind.
        let mut ls_books: BTreeMap<CentralityKind, Portfolio> = BTreeMap::new();
        for (kind, scores) in by_kind {
            match build_longshort(
                scores,
                panel,
                entry.construction_date,
                config.n_per_side,
                config.factor_bound,
            ) {
                Ok(port) => {
                    ls_books.insert(*kind, port);
                }
                Err(e) => skipped.push(skip(&format!("longshort/{kind}"), e.to_string())),
            }
        }

        // Fig-3-style relative factor tilts per quintile.
        if let Some(set) = &quintile_set {
            match portfolio_factor_exposure(&set.benchmark, panel, entry.holdings_date) {
                Err(e) => skipped.push(skip("factor-tilts", e.to_string())),
                Ok(bench_expo) => {
                    for (qi, q) in set.quintiles.iter().enumerate() {
                        match portfolio_factor_exposure(q, panel, entry.holdings_date) {
                            Ok(expo) => factor_tilts.push(FactorTiltRow {
                                as_of_date: entry.holdings_date,
                                quintile: qi + 1,
                                tilts: expo.minus(&bench_expo).values,
                            }),
                            Err(e) => {
                                skipped.push(skip(&format!("factor-tilts/Q{}", qi + 1), e.to_string()))
                            }
                        }
                    }
                }
            }
        }

        for &h in &schedule.horizons {
            let market_return = match market_window_return(panel, entry.construction_date, h) {
                Ok(r) => r,
                Err(e) => {
                    skipped.push(skip(&format!("horizon-{h}"), e.to_string()));
                    continue;
                }
            };
            let mut observe = |label: String, port: &Portfolio| match portfolio_return(
                port,
                panel,
                entry.construction_date,
                h,
            ) {
                Ok(r) => Some(PeriodReturn {
                    construction_date: entry.construction_date,
                    portfolio_return: r,
                    market_return,
                }),
                Err(e) => {
                    skipped.push(SkippedItem {
                        holdings_date: entry.holdings_date,
                        context: format!("{label}/horizon-{h}"),
                        reason: e.to_string(),
                    });
                    None
                }
            };

            if let Some(set) = &quintile_set {
                let bench_obs = observe("benchmark".to_string(), &set.benchmark);
                if let Some(bench) = bench_obs {
                    detail_series
                        .entry(("benchmark".to_string(), h))
                        .or_default()
                        .push(bench);
                    for (qi, q) in set.quintiles.iter().enumerate() {
                        if let Some(obs) = observe(q.label.clone(), q) {
                            detail_series
                                .entry((q.label.clone(), h))
                                .or_default()
                                .push(obs);
                            alpha_acc
                                .entry((qi + 1, h))
                                .or_default()
                                .push(obs.portfolio_return - bench.portfolio_return);
                        }
                    }
                }
            }
            for (kind, port) in &ls_books {
                if let Some(obs) = observe(format!("longshort/{kind}"), port) {
                    ls_series.entry((*kind, h)).or_default().push(obs);
                    if *kind == config.kind {
                        detail_series
                            .entry(("longshort".to_string(), h))
                            .or_default()
                            .push(obs);
                    }
                }
            }
        }
    }

    let reports: BTreeMap<(String, u32), BacktestReport> = detail_series
        .into_iter()
        .map(|((label, h), series)| {
            let (metrics, quad_fit) = Metrics::from_series(&series);
            (
                (label.clone(), h),
                BacktestReport {
                    portfolio_label: label,
                    horizon_months: h,
                    period_returns: series,
                    metrics,
                    quad_fit,
                },
            )
        })
        .collect();

    let comparison: Vec<ComparisonRow> = ls_series
        .iter()
        .map(|((kind, h), series)| {
            let (metrics, _) = Metrics::from_series(series);
            ComparisonRow {
                kind: *kind,
                horizon_months: *h,
                metrics,
                n_periods: series.len(),
            }
        })
        .collect();

    let quintile_alphas: Vec<QuintileAlphaRow> = alpha_acc
        .into_iter()
        .map(|((quintile, h), alphas)| {
            let mean_alpha = if alphas.is_empty() {
                None
            } else {
                Some(alphas.iter().sum::<f64>() / alphas.len() as f64)
            };
            QuintileAlphaRow {
                quintile,
                horizon_months: h,
                mean_alpha,
                skewness: sample_skewness(&alphas).ok(),
                n_periods: alphas.len(),
            }
        })
        .collect();

    let (ls_scatter, ls_quad_fit) = match schedule.horizons.first() {
        Some(&h) => match reports.get(&("longshort".to_string(), h)) {
            Some(report) => (report.period_returns.clone(), report.quad_fit),
            None => (Vec::new(), None),
        },
        None => (Vec::new(), None),
    };

    BacktestOutput {
        detail_kind: config.kind,
        reports,
        comparison,
        quintile_alphas,
        factor_tilts,
        ls_scatter,
        ls_quad_fit,
        skipped,
        notes: vec![
            "horizons beyond the quarterly rebalance spacing produce overlapping windows; \
             metrics are computed on the overlapping series"
                .to_string(),
        ],
    }
}
