//! Loading and validation of the four input datasets.
//!
//! All inputs are plain CSV with fixed headers (see the `*_HEADER` constants).
//! Parsing is order-insensitive: the in-memory model sorts holdings and keys
//! every map, so permuting input rows yields an identical snapshot. Every
//! malformed input produces a typed error carrying the file and line number.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use chrono::{Datelike, Months, NaiveDate};
use thiserror::Error;

use crate::ids::{FundId, StockId};

/// Tolerance on per-fund and benchmark weight sums.
pub const WEIGHT_SUM_EPS: f64 = 1e-6;

pub const HOLDINGS_HEADER: &[&str] = &["as_of_date", "fund_id", "stock_id", "weight"];
pub const BENCHMARK_HEADER: &[&str] = &["as_of_date", "stock_id", "weight"];
pub const CAPS_HEADER: &[&str] = &["as_of_date", "stock_id", "market_cap_usd"];
pub const RETURNS_HEADER: &[&str] = &["date", "stock_id", "return"];
pub const MARKET_HEADER: &[&str] = &["date", "return"];
pub const FACTORS_HEADER: &[&str] = &[
    "as_of_date",
    "stock_id",
    "beta",
    "growth",
    "momentum",
    "volatility",
    "size",
];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{file}:{line}: schema error: {message}")]
    SchemaError {
        file: String,
        line: u64,
        message: String,
    },
    #[error("missing market cap for stock {stock_id}")]
    MissingMarketCap { stock_id: StockId },
    #[error("bad weight {value} for fund {fund_id} stock {stock_id} (must be in [0,1])")]
    BadWeight {
        fund_id: FundId,
        stock_id: StockId,
        value: f64,
    },
    #[error("bad benchmark weight {value} for stock {stock_id} (must be in [0,1])")]
    BadBenchmarkWeight { stock_id: StockId, value: f64 },
    #[error("market cap {value} for stock {stock_id} must exceed 1 dollar")]
    BadMarketCap { stock_id: StockId, value: f64 },
    #[error("fund {fund_id} weights sum to {sum}, above 1 + {WEIGHT_SUM_EPS}")]
    FundWeightSum { fund_id: FundId, sum: f64 },
    #[error("benchmark weights sum to {sum}, not 1 ± {WEIGHT_SUM_EPS}")]
    BenchmarkSum { sum: f64 },
    #[error("duplicate key for stock {stock_id} at {date}")]
    DuplicateKey { stock_id: StockId, date: NaiveDate },
    #[error("duplicate market return at {date}")]
    DuplicateMarketReturn { date: NaiveDate },
    #[error("bad return {value} for stock {stock_id} at {date} (must be > -1)")]
    BadReturn {
        stock_id: StockId,
        date: NaiveDate,
        value: f64,
    },
    #[error("return date {date} for {stock_id} is not a month-end")]
    NotMonthEnd { stock_id: StockId, date: NaiveDate },
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One fund position: fraction of the fund's NAV held in one stock.
#[derive(Debug, Clone, PartialEq)]
pub struct Holding {
    pub fund_id: FundId,
    pub stock_id: StockId,
    pub weight: f64,
}

/// One quarter's holdings, benchmark weights, and market caps.
#[derive(Debug, Clone, PartialEq)]
pub struct HoldingsSnapshot {
    pub as_of_date: NaiveDate,
    /// Sorted by (fund_id, stock_id); no duplicate pairs.
    pub holdings: Vec<Holding>,
    pub benchmark_weights: BTreeMap<StockId, f64>,
    pub market_caps: BTreeMap<StockId, f64>,
}

impl HoldingsSnapshot {
    /// Builds a snapshot, checking every invariant the loaders rely on.
    ///
    /// A fully empty snapshot (no holdings, no benchmark) is accepted as the
    /// degenerate case; a nonempty benchmark must sum to 1 ± `WEIGHT_SUM_EPS`.
    pub fn new(
        as_of_date: NaiveDate,
        mut holdings: Vec<Holding>,
        benchmark_weights: BTreeMap<StockId, f64>,
        market_caps: BTreeMap<StockId, f64>,
    ) -> Result<Self, IngestError> {
        for h in &holdings {
            if !(0.0..=1.0).contains(&h.weight) || !h.weight.is_finite() {
                return Err(IngestError::BadWeight {
                    fund_id: h.fund_id.clone(),
                    stock_id: h.stock_id.clone(),
                    value: h.weight,
                });
            }
        }
        for (stock_id, w) in &benchmark_weights {
            if !(0.0..=1.0).contains(w) || !w.is_finite() {
                return Err(IngestError::BadBenchmarkWeight {
                    stock_id: stock_id.clone(),
                    value: *w,
                });
            }
        }
        for (stock_id, cap) in &market_caps {
            if *cap <= 1.0 || !cap.is_finite() {
                return Err(IngestError::BadMarketCap {
                    stock_id: stock_id.clone(),
                    value: *cap,
                });
            }
        }
        if !benchmark_weights.is_empty() {
            let sum: f64 = benchmark_weights.values().sum();
            if (sum - 1.0).abs() > WEIGHT_SUM_EPS {
                return Err(IngestError::BenchmarkSum { sum });
            }
        }

        holdings.sort_by(|a, b| (&a.fund_id, &a.stock_id).cmp(&(&b.fund_id, &b.stock_id)));

        let mut fund_sums: BTreeMap<&FundId, f64> = BTreeMap::new();
        for h in &holdings {
            *fund_sums.entry(&h.fund_id).or_insert(0.0) += h.weight;
        }
        for (fund_id, sum) in fund_sums {
            if sum > 1.0 + WEIGHT_SUM_EPS {
                return Err(IngestError::FundWeightSum {
                    fund_id: fund_id.clone(),
                    sum,
                });
            }
        }

        // Referential integrity: every stock referenced anywhere has a cap.
        for h in &holdings {
            if !market_caps.contains_key(&h.stock_id) {
                return Err(IngestError::MissingMarketCap {
                    stock_id: h.stock_id.clone(),
                });
            }
        }
        for stock_id in benchmark_weights.keys() {
            if !market_caps.contains_key(stock_id) {
                return Err(IngestError::MissingMarketCap {
                    stock_id: stock_id.clone(),
                });
            }
        }

        Ok(Self {
            as_of_date,
            holdings,
            benchmark_weights,
            market_caps,
        })
    }

    /// Benchmark weight of a stock, 0 for off-benchmark names.
    pub fn benchmark_weight(&self, stock_id: &StockId) -> f64 {
        self.benchmark_weights.get(stock_id).copied().unwrap_or(0.0)
    }

    /// All stocks appearing in holdings or the benchmark, sorted.
    pub fn all_stocks(&self) -> Vec<StockId> {
        let mut set: BTreeSet<StockId> = self.benchmark_weights.keys().cloned().collect();
        set.extend(self.holdings.iter().map(|h| h.stock_id.clone()));
        set.into_iter().collect()
    }
}

/// Monthly returns, market index returns, and quarterly factor loadings.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsPanel {
    dates: Vec<NaiveDate>,
    stock_returns: HashMap<(StockId, NaiveDate), f64>,
    market_returns: BTreeMap<NaiveDate, f64>,
    factor_loadings: HashMap<(StockId, NaiveDate), [f64; 5]>,
}

impl ReturnsPanel {
    /// Builds a panel from raw rows, rejecting duplicates, returns ≤ −1, and
    /// dates that are not month-ends.
    pub fn new(
        stock_rows: Vec<(StockId, NaiveDate, f64)>,
        market_rows: Vec<(NaiveDate, f64)>,
        factor_rows: Vec<(StockId, NaiveDate, [f64; 5])>,
    ) -> Result<Self, IngestError> {
        let mut stock_returns = HashMap::with_capacity(stock_rows.len());
        let mut date_set: BTreeSet<NaiveDate> = BTreeSet::new();
        for (stock_id, date, value) in stock_rows {
            check_month_end_return(&stock_id, date, value)?;
            date_set.insert(date);
            if stock_returns.insert((stock_id.clone(), date), value).is_some() {
                return Err(IngestError::DuplicateKey { stock_id, date });
            }
        }
        let mut market_returns = BTreeMap::new();
        for (date, value) in market_rows {
            check_month_end_return(&StockId::new("<market>"), date, value)?;
            date_set.insert(date);
            if market_returns.insert(date, value).is_some() {
                return Err(IngestError::DuplicateMarketReturn { date });
            }
        }
        let mut factor_loadings = HashMap::with_capacity(factor_rows.len());
        for (stock_id, date, values) in factor_rows {
            if factor_loadings.insert((stock_id.clone(), date), values).is_some() {
                return Err(IngestError::DuplicateKey { stock_id, date });
            }
        }
        Ok(Self {
            dates: date_set.into_iter().collect(),
            stock_returns,
            market_returns,
            factor_loadings,
        })
    }

    /// Sorted unique month-end dates seen in the return files.
    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn last_date(&self) -> Option<NaiveDate> {
        self.dates.last().copied()
    }

    pub fn stock_return(&self, stock_id: &StockId, date: NaiveDate) -> Option<f64> {
        self.stock_returns.get(&(stock_id.clone(), date)).copied()
    }

    pub fn market_return(&self, date: NaiveDate) -> Option<f64> {
        self.market_returns.get(&date).copied()
    }

    pub fn factors(&self, stock_id: &StockId, as_of: NaiveDate) -> Option<&[f64; 5]> {
        self.factor_loadings.get(&(stock_id.clone(), as_of))
    }

    /// True when the stock has a return for every month-end in
    /// `months_after(start, 1..=horizon)`.
    pub fn covers_window(&self, stock_id: &StockId, start: NaiveDate, horizon_months: u32) -> bool {
        (1..=horizon_months)
            .all(|k| self.stock_return(stock_id, month_end_after(start, k)).is_some())
    }

    /// All stock return rows, sorted by (date, stock).
    pub fn stock_return_rows(&self) -> Vec<(StockId, NaiveDate, f64)> {
        let mut rows: Vec<(StockId, NaiveDate, f64)> = self
            .stock_returns
            .iter()
            .map(|((s, d), r)| (s.clone(), *d, *r))
            .collect();
        rows.sort_by(|a, b| (a.1, &a.0).cmp(&(b.1, &b.0)));
        rows
    }

    /// All market return rows in date order.
    pub fn market_return_rows(&self) -> Vec<(NaiveDate, f64)> {
        self.market_returns.iter().map(|(d, r)| (*d, *r)).collect()
    }

    /// All factor rows, sorted by (as_of_date, stock).
    pub fn factor_rows(&self) -> Vec<(StockId, NaiveDate, [f64; 5])> {
        let mut rows: Vec<(StockId, NaiveDate, [f64; 5])> = self
            .factor_loadings
            .iter()
            .map(|((s, d), l)| (s.clone(), *d, *l))
            .collect();
        rows.sort_by(|a, b| (a.1, &a.0).cmp(&(b.1, &b.0)));
        rows
    }
}

fn check_month_end_return(
    stock_id: &StockId,
    date: NaiveDate,
    value: f64,
) -> Result<(), IngestError> {
    if value <= -1.0 || !value.is_finite() {
        return Err(IngestError::BadReturn {
            stock_id: stock_id.clone(),
            date,
            value,
        });
    }
    if date != month_end_of(date) {
        return Err(IngestError::NotMonthEnd {
            stock_id: stock_id.clone(),
            date,
        });
    }
    Ok(())
}

/// Last calendar day of the month `months` after the month containing `start`.
pub fn month_end_after(start: NaiveDate, months: u32) -> NaiveDate {
    let first = NaiveDate::from_ymd_opt(start.year(), start.month(), 1)
        .expect("first of month is always valid");
    let next = first + Months::new(months + 1);
    next.pred_opt().expect("date has a predecessor")
}

/// Last calendar day of `date`'s own month.
pub fn month_end_of(date: NaiveDate) -> NaiveDate {
    month_end_after(date, 0)
}

/// Why a stock was excluded from the backtest universe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExclusionReason {
    MissingMarketCap,
    MissingFactors,
    MissingReturns,
}

impl std::fmt::Display for ExclusionReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::MissingMarketCap => "MissingMarketCap",
            Self::MissingFactors => "MissingFactors",
            Self::MissingReturns => "MissingReturns",
        };
        f.write_str(s)
    }
}

/// Usable stocks plus machine-readable exclusions for one quarter.
#[derive(Debug, Clone, PartialEq)]
pub struct UniverseReport {
    pub as_of_date: NaiveDate,
    pub usable: Vec<StockId>,
    pub excluded: Vec<(StockId, ExclusionReason)>,
}

/// Which stock set the crowding scores partition into quintiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UniverseSource {
    /// Usable benchmark constituents (default).
    #[default]
    Benchmark,
    /// Usable stocks held by at least one fund.
    Holdings,
}

impl UniverseReport {
    /// Restricts the usable set to the requested source universe.
    pub fn scoring_universe(
        &self,
        snapshot: &HoldingsSnapshot,
        source: UniverseSource,
    ) -> Vec<StockId> {
        match source {
            UniverseSource::Benchmark => self
                .usable
                .iter()
                .filter(|s| snapshot.benchmark_weights.contains_key(s))
                .cloned()
                .collect(),
            UniverseSource::Holdings => {
                let held: BTreeSet<&StockId> =
                    snapshot.holdings.iter().map(|h| &h.stock_id).collect();
                self.usable.iter().filter(|s| held.contains(s)).cloned().collect()
            }
        }
    }
}

/// Classifies every stock in the snapshot as usable or excluded.
///
/// A stock is usable iff it has a market cap, a factor vector at the
/// snapshot date, and returns covering the 12 months after the construction
/// date (`as_of + lag_months`, month-end clamped).
pub fn validate_universe(
    snapshot: &HoldingsSnapshot,
    panel: &ReturnsPanel,
    lag_months: u32,
) -> UniverseReport {
    let construction = add_months_clamped(snapshot.as_of_date, lag_months);
    let mut usable = Vec::new();
    let mut excluded = Vec::new();
    for stock_id in snapshot.all_stocks() {
        if !snapshot.market_caps.contains_key(&stock_id) {
            excluded.push((stock_id, ExclusionReason::MissingMarketCap));
        } else if panel.factors(&stock_id, snapshot.as_of_date).is_none() {
            excluded.push((stock_id, ExclusionReason::MissingFactors));
        } else if !panel.covers_window(&stock_id, construction, 12) {
            excluded.push((stock_id, ExclusionReason::MissingReturns));
        } else {
            usable.push(stock_id);
        }
    }
    UniverseReport {
        as_of_date: snapshot.as_of_date,
        usable,
        excluded,
    }
}

/// `date + months` calendar months, day-of-month clamped to the target
/// month's last day when it does not exist there.
pub fn add_months_clamped(date: NaiveDate, months: u32) -> NaiveDate {
    date.checked_add_months(Months::new(months))
        .expect("date arithmetic within supported range")
}

// ---------------------------------------------------------------------------
// CSV loading
// ---------------------------------------------------------------------------

/// Standard file names inside a data directory.
#[derive(Debug, Clone)]
pub struct DataDir {
    pub holdings: PathBuf,
    pub benchmark: PathBuf,
    pub caps: PathBuf,
    pub returns: PathBuf,
    pub market: PathBuf,
    pub factors: PathBuf,
}

impl DataDir {
    pub fn new(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        Self {
            holdings: dir.join("holdings.csv"),
            benchmark: dir.join("benchmark.csv"),
            caps: dir.join("caps.csv"),
            returns: dir.join("returns.csv"),
            market: dir.join("market.csv"),
            factors: dir.join("factors.csv"),
        }
    }

    pub fn all_files(&self) -> [&PathBuf; 6] {
        [
            &self.holdings,
            &self.benchmark,
            &self.caps,
            &self.returns,
            &self.market,
            &self.factors,
        ]
    }
}

/// File name and line context for schema errors during one pass.
struct CsvCtx {
    name: String,
}

impl CsvCtx {
    fn schema_error(&self, line: u64, message: impl Into<String>) -> IngestError {
        IngestError::SchemaError {
            file: self.name.clone(),
            line,
            message: message.into(),
        }
    }
}

/// Opens a CSV, checks the header, and hands each record to `f` with its
/// 1-based line number. Rows with the wrong field count are schema errors.
fn for_each_record(
    path: &Path,
    expected_header: &[&str],
    n_fields: usize,
    mut f: impl FnMut(&CsvCtx, u64, &csv::StringRecord) -> Result<(), IngestError>,
) -> Result<(), IngestError> {
    let ctx = CsvCtx {
        name: path.display().to_string(),
    };
    let file = std::fs::File::open(path).map_err(|source| IngestError::Io {
        path: ctx.name.clone(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| ctx.schema_error(1, e.to_string()))?;
    let got: Vec<&str> = headers.iter().collect();
    if got != expected_header {
        return Err(ctx.schema_error(
            1,
            format!(
                "expected header {:?}, got {:?}",
                expected_header.join(","),
                got.join(",")
            ),
        ));
    }
    let mut records = reader.records();
    loop {
        let line = records.reader().position().line();
        match records.next() {
            None => return Ok(()),
            Some(Err(e)) => return Err(ctx.schema_error(line, e.to_string())),
            Some(Ok(record)) => {
                if record.len() != n_fields {
                    return Err(ctx.schema_error(
                        line,
                        format!("expected {} fields, got {}", n_fields, record.len()),
                    ));
                }
                f(&ctx, line, &record)?;
            }
        }
    }
}

fn parse_date(ctx: &CsvCtx, line: u64, s: &str) -> Result<NaiveDate, IngestError> {
    s.parse::<NaiveDate>()
        .map_err(|_| ctx.schema_error(line, format!("bad date {s:?}, expected YYYY-MM-DD")))
}

fn parse_f64(ctx: &CsvCtx, line: u64, s: &str, field: &str) -> Result<f64, IngestError> {
    s.parse::<f64>()
        .map_err(|_| ctx.schema_error(line, format!("bad {field} value {s:?}")))
}

/// Loads and validates one quarter's snapshot from the three holdings-side
/// files, selecting only rows dated `as_of`.
pub fn load_snapshot(
    holdings_path: &Path,
    benchmark_path: &Path,
    caps_path: &Path,
    as_of: NaiveDate,
) -> Result<HoldingsSnapshot, IngestError> {
    let mut market_caps = BTreeMap::new();
    for_each_record(caps_path, CAPS_HEADER, 3, |ctx, line, rec| {
        let date = parse_date(ctx, line, &rec[0])?;
        if date != as_of {
            return Ok(());
        }
        let stock_id = StockId::new(&rec[1]);
        let cap = parse_f64(ctx, line, &rec[2], "market_cap_usd")?;
        if market_caps.insert(stock_id.clone(), cap).is_some() {
            return Err(ctx.schema_error(line, format!("duplicate cap row for {stock_id}")));
        }
        Ok(())
    })?;

    let mut benchmark_weights = BTreeMap::new();
    for_each_record(benchmark_path, BENCHMARK_HEADER, 3, |ctx, line, rec| {
        let date = parse_date(ctx, line, &rec[0])?;
        if date != as_of {
            return Ok(());
        }
        let stock_id = StockId::new(&rec[1]);
        let weight = parse_f64(ctx, line, &rec[2], "weight")?;
        if benchmark_weights.insert(stock_id.clone(), weight).is_some() {
            return Err(ctx.schema_error(line, format!("duplicate benchmark row for {stock_id}")));
        }
        Ok(())
    })?;

    let mut holdings = Vec::new();
    let mut seen: BTreeSet<(FundId, StockId)> = BTreeSet::new();
    for_each_record(holdings_path, HOLDINGS_HEADER, 4, |ctx, line, rec| {
        let date = parse_date(ctx, line, &rec[0])?;
        if date != as_of {
            return Ok(());
        }
        let fund_id = FundId::new(&rec[1]);
        let stock_id = StockId::new(&rec[2]);
        let weight = parse_f64(ctx, line, &rec[3], "weight")?;
        if !seen.insert((fund_id.clone(), stock_id.clone())) {
            return Err(
                ctx.schema_error(line, format!("duplicate holding for {fund_id}/{stock_id}"))
            );
        }
        holdings.push(Holding {
            fund_id,
            stock_id,
            weight,
        });
        Ok(())
    })?;

    HoldingsSnapshot::new(as_of, holdings, benchmark_weights, market_caps)
}

/// Loads the returns-side files into a validated panel.
pub fn load_returns(
    returns_path: &Path,
    market_path: &Path,
    factors_path: &Path,
) -> Result<ReturnsPanel, IngestError> {
    let mut stock_rows = Vec::new();
    for_each_record(returns_path, RETURNS_HEADER, 3, |ctx, line, rec| {
        let date = parse_date(ctx, line, &rec[0])?;
        let stock_id = StockId::new(&rec[1]);
        let value = parse_f64(ctx, line, &rec[2], "return")?;
        stock_rows.push((stock_id, date, value));
        Ok(())
    })?;

    let mut market_rows = Vec::new();
    for_each_record(market_path, MARKET_HEADER, 2, |ctx, line, rec| {
        let date = parse_date(ctx, line, &rec[0])?;
        let value = parse_f64(ctx, line, &rec[1], "return")?;
        market_rows.push((date, value));
        Ok(())
    })?;

    let mut factor_rows = Vec::new();
    for_each_record(factors_path, FACTORS_HEADER, 7, |ctx, line, rec| {
        let date = parse_date(ctx, line, &rec[0])?;
        let stock_id = StockId::new(&rec[1]);
        let mut values = [0.0; 5];
        for (i, v) in values.iter_mut().enumerate() {
            *v = parse_f64(ctx, line, &rec[2 + i], FACTORS_HEADER[2 + i])?;
        }
        factor_rows.push((stock_id, date, values));
        Ok(())
    })?;

    ReturnsPanel::new(stock_rows, market_rows, factor_rows)
}

/// Distinct `as_of_date` values present in a holdings file, sorted.
pub fn list_quarter_dates(holdings_path: &Path) -> Result<Vec<NaiveDate>, IngestError> {
    let mut dates = BTreeSet::new();
    for_each_record(holdings_path, HOLDINGS_HEADER, 4, |ctx, line, rec| {
        dates.insert(parse_date(ctx, line, &rec[0])?);
        Ok(())
    })?;
    Ok(dates.into_iter().collect())
}

/// Loads every quarter found in a data directory.
pub fn load_quarters(dir: &DataDir) -> Result<Vec<HoldingsSnapshot>, IngestError> {
    list_quarter_dates(&dir.holdings)?
        .into_iter()
        .map(|as_of| load_snapshot(&dir.holdings, &dir.benchmark, &dir.caps, as_of))
        .collect()
}
