//! Seeded synthetic holdings, returns, and factor data.
//!
//! The generator plants two pieces of ground truth so the whole pipeline is
//! testable without proprietary data: a crowded block of stocks that funds
//! systematically overweight, and an optional crash quarter in which the
//! block draws strongly negative, left-skewed returns while the rest of the
//! universe stays near zero. Factor loadings are independent of block
//! membership, so factor neutralization cannot explain the planted effect
//! away.
//!
//! Randomness comes from one logical stream per configuration, split
//! deterministically by (purpose, quarter, fund, stock) indices; generation
//! order therefore never affects output.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{FundId, StockId};
use crate::ingest::{
    add_months_clamped, month_end_after, Holding, HoldingsSnapshot, IngestError, ReturnsPanel,
};

/// Standard deviation of the Gaussian active-weight noise every (fund, stock)
/// cell receives. `crowd_intensity` is naturally read in multiples of this.
pub const ACTIVE_WEIGHT_NOISE_SCALE: f64 = 0.005;

/// First holdings quarter-end emitted by the generator.
pub const FIRST_QUARTER_END: &str = "2014-03-31";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("bad synth config: {message}")]
    BadConfig { message: String },
    #[error("generated data failed validation: {0}")]
    Validation(#[from] IngestError),
    #[error("io error writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Generator configuration; `synth.toml` keys mirror these fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_funds: usize,
    pub n_stocks: usize,
    pub n_quarters: usize,
    /// Size of the planted crowded block (stocks S00000..).
    pub crowded_block_size: usize,
    /// Mean excess overweight applied to block positions; both the boost
    /// probability and magnitude scale with it. 0 disables the plant.
    pub crowd_intensity: f64,
    /// Quarter index (0-based) whose three post-construction months carry the
    /// crash regime; `None` for no crash.
    pub crash_quarter: Option<usize>,
    /// Mean monthly return of block stocks during crash months; must be in
    /// (−1, 0) when a crash quarter is set.
    pub crash_magnitude: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_funds: 20,
            n_stocks: 300,
            n_quarters: 8,
            crowded_block_size: 30,
            crowd_intensity: 0.05,
            crash_quarter: None,
            crash_magnitude: -0.4,
            seed: 42,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<(), SynthError> {
        let bad = |message: String| Err(SynthError::BadConfig { message });
        if self.n_funds == 0 || self.n_stocks == 0 || self.n_quarters == 0 {
            return bad("universe must have at least one fund, stock, and quarter".into());
        }
        if self.crowded_block_size >= self.n_stocks {
            return bad(format!(
                "crowded_block_size {} must be below n_stocks {}",
                self.crowded_block_size, self.n_stocks
            ));
        }
        if self.crowd_intensity < 0.0 || self.crowd_intensity.is_nan() {
            return bad(format!("crowd_intensity {} must be >= 0", self.crowd_intensity));
        }
        if let Some(q) = self.crash_quarter {
            if q >= self.n_quarters {
                return bad(format!(
                    "crash_quarter {q} must be below n_quarters {}",
                    self.n_quarters
                ));
            }
            if self.crash_magnitude <= -1.0 || self.crash_magnitude >= 0.0 || self.crash_magnitude.is_nan() {
                return bad(format!(
                    "crash_magnitude {} must lie in (-1, 0)",
                    self.crash_magnitude
                ));
            }
        }
        Ok(())
    }
}

/// All generated data for one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub snapshots: Vec<HoldingsSnapshot>,
    pub panel: ReturnsPanel,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One independent RNG per (purpose, indices...) cell.
fn cell_rng(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut state = splitmix64(seed);
    for &tag in tags {
        state = splitmix64(state ^ tag);
    }
    ChaCha8Rng::seed_from_u64(state)
}

mod stream {
    pub const CAPS: u64 = 1;
    pub const HOLDINGS: u64 = 2;
    pub const MARKET: u64 = 3;
    pub const RETURNS: u64 = 4;
    pub const FACTORS: u64 = 5;
}

fn stock_id(i: usize) -> StockId {
    StockId::new(format!("S{i:05}"))
}

fn fund_id(i: usize) -> FundId {
    FundId::new(format!("F{i:04}"))
}

fn first_quarter() -> NaiveDate {
    FIRST_QUARTER_END.parse().expect("constant date is valid")
}

/// Quarter-end date of quarter `q` (0-based).
pub fn quarter_end(q: usize) -> NaiveDate {
    add_months_clamped(first_quarter(), 3 * q as u32)
}

/// Month-end `offset` months after the first quarter end.
fn month_offset(offset: u32) -> NaiveDate {
    month_end_after(first_quarter(), offset)
}

/// Month offsets (from the first quarter end) carrying the crash regime: the
/// three observation months after the crash quarter's construction date.
fn crash_offsets(crash_quarter: usize) -> [u32; 3] {
    let base = 3 * crash_quarter as u32;
    [base + 3, base + 4, base + 5]
}

/// Generates all quarters and the returns panel for a configuration.
///
/// Identical configs produce bit-identical output. Every snapshot and the
/// panel pass ingest validation by construction.
pub fn generate(config: &SynthConfig) -> Result<SynthData, SynthError> {
    config.validate()?;
    let n_stocks = config.n_stocks;
    let block = config.crowded_block_size;
    let bench_weight = 1.0 / n_stocks as f64;
    let noise = Normal::new(0.0, ACTIVE_WEIGHT_NOISE_SCALE).expect("valid normal");
    // Boost probability grows toward 1 as intensity passes a few noise scales.
    let boost_prob = 1.0 - (-config.crowd_intensity / (2.0 * ACTIVE_WEIGHT_NOISE_SCALE)).exp();

    let mut snapshots = Vec::with_capacity(config.n_quarters);
    let mut factor_rows = Vec::new();
    for q in 0..config.n_quarters {
        let as_of = quarter_end(q);

        let mut market_caps = BTreeMap::new();
        for s in 0..n_stocks {
            let mut rng = cell_rng(config.seed, &[stream::CAPS, q as u64, s as u64]);
            let ln_cap: f64 = Normal::new(10.0_f64.powi(10).ln(), 1.0)
                .expect("valid normal")
                .sample(&mut rng);
            market_caps.insert(stock_id(s), ln_cap.exp().max(2.0));
        }

        let benchmark_weights: BTreeMap<StockId, f64> =
            (0..n_stocks).map(|s| (stock_id(s), bench_weight)).collect();

        let mut holdings = Vec::with_capacity(config.n_funds * n_stocks);
        for f in 0..config.n_funds {
            let mut raw = Vec::with_capacity(n_stocks);
            for s in 0..n_stocks {
                let mut rng =
                    cell_rng(config.seed, &[stream::HOLDINGS, q as u64, f as u64, s as u64]);
                let e: f64 = noise.sample(&mut rng);
                // Draw both variates unconditionally so a stock's stream is
                // aligned across intensity settings.
                let u: f64 = rng.random();
                let z: f64 = Normal::new(0.0, 1.0).expect("valid normal").sample(&mut rng);
                let boost = if s < block && u < boost_prob {
                    (config.crowd_intensity * (1.0 + z / 4.0)).max(0.0)
                } else {
                    0.0
                };
                raw.push((bench_weight + e + boost).clamp(0.0, 1.0));
            }
            let total: f64 = raw.iter().sum();
            let scale = if total > 1.0 { 1.0 / total } else { 1.0 };
            for (s, w) in raw.into_iter().enumerate() {
                holdings.push(Holding {
                    fund_id: fund_id(f),
                    stock_id: stock_id(s),
                    weight: w * scale,
                });
            }
        }

        snapshots.push(HoldingsSnapshot::new(
            as_of,
            holdings,
            benchmark_weights,
            market_caps,
        )?);

        for s in 0..n_stocks {
            let mut rng = cell_rng(config.seed, &[stream::FACTORS, q as u64, s as u64]);
            let normal = Normal::new(0.0, 1.0).expect("valid normal");
            let mut loadings = [0.0; 5];
            for v in loadings.iter_mut() {
                *v = normal.sample(&mut rng);
            }
            factor_rows.push((stock_id(s), as_of, loadings));
        }
    }

    // Returns extend 14 months past the last quarter end so every quarter's
    // 12-month window (after the 2-month construction lag) is covered.
    let n_months = 3 * config.n_quarters as u32 + 11;
    let crash_months: Vec<u32> = config
        .crash_quarter
        .map(|c| crash_offsets(c).to_vec())
        .unwrap_or_default();
    let block_share = block as f64 / n_stocks as f64;

    let mut market_rows = Vec::with_capacity(n_months as usize);
    let mut stock_rows = Vec::with_capacity(n_months as usize * n_stocks);
    for t in 1..=n_months {
        let date = month_offset(t);
        let crash = crash_months.contains(&t);
        let mut rng = cell_rng(config.seed, &[stream::MARKET, t as u64]);
        let market = if crash {
            Normal::new(block_share * config.crash_magnitude, 0.005)
                .expect("valid normal")
                .sample(&mut rng)
        } else {
            Normal::new(0.004, 0.025).expect("valid normal").sample(&mut rng)
        };
        let market = market.max(-0.95);
        market_rows.push((date, market));

        for s in 0..n_stocks {
            let mut rng = cell_rng(config.seed, &[stream::RETURNS, t as u64, s as u64]);
            let r = if crash && s < block {
                // Mean crash_magnitude with a long left tail (skewness −2).
                let tail = Exp::new(20.0).expect("valid exp").sample(&mut rng);
                config.crash_magnitude + 0.05 - tail
            } else if crash {
                Normal::new(0.0, 0.015).expect("valid normal").sample(&mut rng)
            } else {
                market + Normal::new(0.0, 0.02).expect("valid normal").sample(&mut rng)
            };
            stock_rows.push((stock_id(s), date, r.max(-0.95)));
        }
    }

    let panel = ReturnsPanel::new(stock_rows, market_rows, factor_rows)?;
    Ok(SynthData { snapshots, panel })
}

fn create(dir: &Path, name: &str) -> Result<std::io::BufWriter<std::fs::File>, SynthError> {
    let path = dir.join(name);
    let file = std::fs::File::create(&path).map_err(|source| SynthError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(std::io::BufWriter::new(file))
}

fn io_err(dir: &Path, source: std::io::Error) -> SynthError {
    SynthError::Io {
        path: dir.display().to_string(),
        source,
    }
}

/// Writes the dataset in the exact schemas the ingest module reads.
///
/// Floats use shortest round-trip formatting, so generate → write → load
/// reproduces the in-memory structures exactly.
pub fn write_dataset(data: &SynthData, dir: &Path) -> Result<(), SynthError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;

    let mut holdings = create(dir, "holdings.csv")?;
    writeln!(holdings, "as_of_date,fund_id,stock_id,weight").map_err(|e| io_err(dir, e))?;
    for snap in &data.snapshots {
        for h in &snap.holdings {
            writeln!(
                holdings,
                "{},{},{},{}",
                snap.as_of_date, h.fund_id, h.stock_id, h.weight
            )
            .map_err(|e| io_err(dir, e))?;
        }
    }

    let mut benchmark = create(dir, "benchmark.csv")?;
    writeln!(benchmark, "as_of_date,stock_id,weight").map_err(|e| io_err(dir, e))?;
    for snap in &data.snapshots {
        for (s, w) in &snap.benchmark_weights {
            writeln!(benchmark, "{},{},{}", snap.as_of_date, s, w).map_err(|e| io_err(dir, e))?;
        }
    }

    let mut caps = create(dir, "caps.csv")?;
    writeln!(caps, "as_of_date,stock_id,market_cap_usd").map_err(|e| io_err(dir, e))?;
    for snap in &data.snapshots {
        for (s, c) in &snap.market_caps {
            writeln!(caps, "{},{},{}", snap.as_of_date, s, c).map_err(|e| io_err(dir, e))?;
        }
    }

    let mut returns = create(dir, "returns.csv")?;
    writeln!(returns, "date,stock_id,return").map_err(|e| io_err(dir, e))?;
    for (s, d, r) in data.panel.stock_return_rows() {
        writeln!(returns, "{d},{s},{r}").map_err(|e| io_err(dir, e))?;
    }

    let mut market = create(dir, "market.csv")?;
    writeln!(market, "date,return").map_err(|e| io_err(dir, e))?;
    for (d, r) in data.panel.market_return_rows() {
        writeln!(market, "{d},{r}").map_err(|e| io_err(dir, e))?;
    }

    let mut factors = create(dir, "factors.csv")?;
    writeln!(factors, "as_of_date,stock_id,beta,growth,momentum,volatility,size")
        .map_err(|e| io_err(dir, e))?;
    for (s, d, l) in data.panel.factor_rows() {
        writeln!(
            factors,
            "{d},{s},{},{},{},{},{}",
            l[0], l[1], l[2], l[3], l[4]
        )
        .map_err(|e| io_err(dir, e))?;
    }

    Ok(())
}

/// Stocks planted as the crowded block under a configuration.
pub fn planted_block(config: &SynthConfig) -> Vec<StockId> {
    (0..config.crowded_block_size).map(stock_id).collect()
}
