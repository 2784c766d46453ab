//! Quintile portfolios and the factor-neutral long/short book.
//!
//! The long/short construction is deterministic linear algebra: select the
//! score extremes, start from equal weights, project onto the equality
//! constraints (side sums ±1, five factor exposures 0) with a pseudoinverse,
//! clamp wrong-signed weights, and greedily prune until the factor box holds.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::ids::StockId;
use crate::ingest::ReturnsPanel;
use crate::signal::CrowdingScores;

/// Barra-style factor order used throughout.
pub const FACTOR_NAMES: [&str; 5] = ["beta", "growth", "momentum", "volatility", "size"];

/// Sum tolerance for the long and short legs.
pub const SUM_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum PortfolioError {
    #[error("universe of {got} stocks is too small (need at least {needed})")]
    UniverseTooSmall { needed: usize, got: usize },
    #[error("missing factor loadings for stock {stock_id}")]
    MissingFactors { stock_id: StockId },
    #[error("only {got} candidates with factor data, need {needed}")]
    TooFewCandidates { needed: usize, got: usize },
    #[error("long/short construction infeasible: {reason}")]
    Infeasible { reason: String },
}

/// A dated stock-weight map: a quintile sleeve, the equal-weight benchmark,
/// or the dollar-neutral long/short book.
#[derive(Debug, Clone, PartialEq)]
pub struct Portfolio {
    pub construction_date: NaiveDate,
    pub weights: BTreeMap<StockId, f64>,
    pub label: String,
}

impl Portfolio {
    pub fn long_sum(&self) -> f64 {
        self.weights.values().filter(|w| **w > 0.0).sum()
    }

    pub fn short_sum(&self) -> f64 {
        self.weights.values().filter(|w| **w < 0.0).sum()
    }

    pub fn gross_exposure(&self) -> f64 {
        self.weights.values().map(|w| w.abs()).sum()
    }

    pub fn names_long(&self) -> usize {
        self.weights.values().filter(|w| **w > 0.0).count()
    }

    pub fn names_short(&self) -> usize {
        self.weights.values().filter(|w| **w < 0.0).count()
    }
}

/// Portfolio-weighted factor loadings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorExposure {
    pub values: [f64; 5],
}

impl FactorExposure {
    pub fn minus(&self, other: &FactorExposure) -> FactorExposure {
        let mut values = self.values;
        for (v, o) in values.iter_mut().zip(&other.values) {
            *v -= o;
        }
        FactorExposure { values }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }
}

/// The five score quintiles plus the equal-weighted universe benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct QuintileSet {
    /// Index 0 is Q1 (least crowded), index 4 is Q5 (most crowded).
    pub quintiles: Vec<Portfolio>,
    pub benchmark: Portfolio,
}

/// Orders universe stocks ascending by (score, stock_id).
fn ranked_universe(scores: &CrowdingScores) -> Vec<&StockId> {
    let mut ranked: Vec<&StockId> = scores.universe.iter().collect();
    ranked.sort_by(|a, b| {
        scores
            .score(a)
            .partial_cmp(&scores.score(b))
            .expect("scores are finite")
            .then_with(|| a.cmp(b))
    });
    ranked
}

/// Splits the universe into five equal-weighted quintiles by ascending score
/// (Q1 least crowded, Q5 most crowded) plus the equal-weighted benchmark.
///
/// When the universe size is not divisible by 5, the remainder goes to the
/// first quintiles; score ties break by stock id.
pub fn quintile_portfolios(
    scores: &CrowdingScores,
    construction_date: NaiveDate,
) -> Result<QuintileSet, PortfolioError> {
    let n = scores.universe.len();
    if n < 5 {
        return Err(PortfolioError::UniverseTooSmall { needed: 5, got: n });
    }
    let ranked = ranked_universe(scores);

    let base = n / 5;
    let rem = n % 5;
    let mut quintiles = Vec::with_capacity(5);
    let mut start = 0;
    for q in 0..5 {
        let size = base + usize::from(q < rem);
        let members = &ranked[start..start + size];
        start += size;
        let w = 1.0 / size as f64;
        quintiles.push(Portfolio {
            construction_date,
            weights: members.iter().map(|s| ((*s).clone(), w)).collect(),
            label: format!("Q{}", q + 1),
        });
    }

    let w = 1.0 / n as f64;
    let benchmark = Portfolio {
        construction_date,
        weights: ranked.iter().map(|s| ((*s).clone(), w)).collect(),
        label: "benchmark".to_string(),
    };
    Ok(QuintileSet {
        quintiles,
        benchmark,
    })
}

/// Weighted sum of per-stock factor loadings at `as_of`.
pub fn portfolio_factor_exposure(
    portfolio: &Portfolio,
    panel: &ReturnsPanel,
    as_of: NaiveDate,
) -> Result<FactorExposure, PortfolioError> {
    let mut values = [0.0; 5];
    for (stock_id, weight) in &portfolio.weights {
        let loadings = panel
            .factors(stock_id, as_of)
            .ok_or_else(|| PortfolioError::MissingFactors {
                stock_id: stock_id.clone(),
            })?;
        for k in 0..5 {
            values[k] += weight * loadings[k];
        }
    }
    Ok(FactorExposure { values })
}

struct Candidate {
    stock_id: StockId,
    loadings: [f64; 5],
    weight: f64,
    long: bool,
}

struct LsState {
    candidates: Vec<Candidate>,
}

impl LsState {
    fn side_count(&self, long: bool) -> usize {
        self.candidates.iter().filter(|c| c.long == long).count()
    }

    /// Minimum-L2-norm correction onto Cw = b, where C stacks the two side
    /// indicator rows and the five factor rows.
    fn project(&mut self) {
        let m = self.candidates.len();
        let c = DMatrix::from_fn(7, m, |r, j| {
            let cand = &self.candidates[j];
            match r {
                0 => {
                    if cand.long {
                        1.0
                    } else {
                        0.0
                    }
                }
                1 => {
                    if cand.long {
                        0.0
                    } else {
                        1.0
                    }
                }
                k => cand.loadings[k - 2],
            }
        });
        let b = DVector::from_vec(vec![1.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let w = DVector::from_iterator(m, self.candidates.iter().map(|c| c.weight));

        let residual = &c * &w - &b;
        let cct = &c * c.transpose();
        let svd = cct.svd(true, true);
        let smax = svd.singular_values.max();
        let pinv = svd
            .pseudo_inverse(smax * 1e-12)
            .expect("svd of a square matrix always yields a pseudoinverse");
        let corrected = w - c.transpose() * (pinv * residual);
        for (cand, w) in self.candidates.iter_mut().zip(corrected.iter()) {
            cand.weight = *w;
        }
    }

    /// Indices of long weights below zero and short weights above zero.
    fn sign_violators(&self) -> Vec<usize> {
        self.candidates
            .iter()
            .enumerate()
            .filter(|(_, c)| if c.long { c.weight < 0.0 } else { c.weight > 0.0 })
            .map(|(i, _)| i)
            .collect()
    }

    fn remove(&mut self, mut indices: Vec<usize>) {
        indices.sort_unstable();
        for i in indices.into_iter().rev() {
            self.candidates.remove(i);
        }
    }

    fn exposures(&self) -> [f64; 5] {
        let mut values = [0.0; 5];
        for c in &self.candidates {
            for (v, l) in values.iter_mut().zip(&c.loadings) {
                *v += c.weight * l;
            }
        }
        values
    }

    fn sums(&self) -> (f64, f64) {
        let mut long = 0.0;
        let mut short = 0.0;
        for c in &self.candidates {
            if c.long {
                long += c.weight;
            } else {
                short += c.weight;
            }
        }
        (long, short)
    }
}

/// Builds the dollar-neutral long/short hedge book from crowding scores.
///
/// Longs are the `n_per_side` least crowded candidates, shorts the most
/// crowded (ties by stock id). Equal initial weights are projected onto the
/// constraints; wrong-signed weights are clamped and removed (at most 20
/// repair rounds per pruning cycle); if any factor exposure still exceeds
/// `bound`, the largest contributor to the worst violation is dropped and
/// the projection repeats. Factor loadings are taken at the scores' quarter
/// date.
pub fn build_longshort(
    scores: &CrowdingScores,
    panel: &ReturnsPanel,
    construction_date: NaiveDate,
    n_per_side: usize,
    bound: f64,
) -> Result<Portfolio, PortfolioError> {
    let ranked = ranked_universe(scores);
    let pool: Vec<&StockId> = ranked
        .into_iter()
        .filter(|s| panel.factors(s, scores.as_of_date).is_some())
        .collect();
    if pool.len() < 2 * n_per_side {
        return Err(PortfolioError::TooFewCandidates {
            needed: 2 * n_per_side,
            got: pool.len(),
        });
    }

    let mut candidates = Vec::with_capacity(2 * n_per_side);
    let init = 1.0 / n_per_side as f64;
    for (i, stock_id) in pool[..n_per_side]
        .iter()
        .chain(pool[pool.len() - n_per_side..].iter())
        .enumerate()
    {
        let long = i < n_per_side;
        let loadings = *panel
            .factors(stock_id, scores.as_of_date)
            .expect("pool was filtered on factor availability");
        candidates.push(Candidate {
            stock_id: (*stock_id).clone(),
            loadings,
            weight: if long { init } else { -init },
            long,
        });
    }
    let mut state = LsState { candidates };

    loop {
        // Steps 3–4: project, then clamp-and-reproject until signs are clean.
        let mut repair_rounds = 0;
        loop {
            state.project();
            let violators = state.sign_violators();
            if violators.is_empty() {
                break;
            }
            repair_rounds += 1;
            if repair_rounds > 20 {
                return Err(PortfolioError::Infeasible {
                    reason: "sign repair did not settle within 20 rounds".to_string(),
                });
            }
            state.remove(violators);
            if state.side_count(true) == 0 || state.side_count(false) == 0 {
                return Err(PortfolioError::Infeasible {
                    reason: "one side emptied during sign repair".to_string(),
                });
            }
        }

        // Step 5: accept, or drop the worst contributor and re-project.
        let (long_sum, short_sum) = state.sums();
        if (long_sum - 1.0).abs() > SUM_TOL || (short_sum + 1.0).abs() > SUM_TOL {
            return Err(PortfolioError::Infeasible {
                reason: format!(
                    "constraint system inconsistent (long sum {long_sum}, short sum {short_sum})"
                ),
            });
        }
        let exposures = state.exposures();
        let (worst_factor, worst_excess) = exposures
            .iter()
            .enumerate()
            .map(|(k, e)| (k, e.abs() - bound))
            .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        if worst_excess <= 0.0 {
            let weights = state
                .candidates
                .iter()
                .filter(|c| c.weight != 0.0)
                .map(|c| (c.stock_id.clone(), c.weight))
                .collect();
            return Ok(Portfolio {
                construction_date,
                weights,
                label: "longshort".to_string(),
            });
        }

        let victim = state
            .candidates
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| {
                let ca = (a.weight * a.loadings[worst_factor]).abs();
                let cb = (b.weight * b.loadings[worst_factor]).abs();
                ca.partial_cmp(&cb)
                    .expect("contributions are finite")
                    // On ties prefer the lexicographically smaller id, which
                    // max_by keeps when the later element is not greater.
                    .then_with(|| b.stock_id.cmp(&a.stock_id))
            })
            .map(|(i, _)| i)
            .expect("candidate list is nonempty");
        state.remove(vec![victim]);
        if state.side_count(true) == 0 || state.side_count(false) == 0 {
            return Err(PortfolioError::Infeasible {
                reason: "one side emptied while enforcing the factor box".to_string(),
            });
        }
    }
}
