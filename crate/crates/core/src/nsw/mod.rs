//! Nash social welfare: the spending-restricted rounding pipeline, an
//! exhaustive optimum for small instances, the SR upper bound and the
//! adversarial instance families.
//!
//! NSW instances are linear with unit budgets and unit earning caps. All
//! products of utilities are taken in log space.

mod brute;
mod forest;
mod generate;
mod matching;
mod srr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{normalize_valuations, MarketInstance, ModelKind, NormalizeError, SpendingProfile, UtilityKind};
use crate::solver::{solve, Equilibrium, SolveError, SolveOptions};

pub use brute::{brute_force_opt, BRUTE_FORCE_LIMIT};
pub use forest::{build_spending_forest, prune_forest, SpendingForest, Tree};
pub use generate::{generate_instance, GeneratorParams};
pub use srr::{srr_round, srr_round_rooted, RootRule};

#[derive(Debug, Error)]
pub enum NswError {
    #[error("every good must have earning cap 1")]
    NotUnitCaps,
    #[error("valuations are not normalized: buyer {buyer} on good {good}")]
    NotNormalized { buyer: usize, good: usize },
    #[error("NSW instances need linear valuations")]
    NotLinear,
    #[error("exhaustive search would visit {0:.3e} allocations")]
    TooLarge(f64),
    #[error("spending is infeasible: {0}")]
    InfeasibleSpending(String),
    #[error("bad generator parameters: {0}")]
    BadParams(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Normalize(#[from] NormalizeError),
}

/// Item owners; `None` for items nobody values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegralAllocation {
    pub owner: Vec<Option<usize>>,
    pub utilities: Vec<f64>,
}

impl IntegralAllocation {
    pub fn new(inst: &MarketInstance, owner: Vec<Option<usize>>) -> Self {
        let mut utilities = vec![0.0; inst.n()];
        for (j, o) in owner.iter().enumerate() {
            if let Some(i) = *o {
                utilities[i] += inst.value(i, j);
            }
        }
        IntegralAllocation { owner, utilities }
    }
}

pub(crate) fn require_linear(inst: &MarketInstance) -> Result<(), NswError> {
    if inst.buyers.iter().all(|b| matches!(b.utility, UtilityKind::Linear)) {
        Ok(())
    } else {
        Err(NswError::NotLinear)
    }
}

pub(crate) fn require_unit_caps(inst: &MarketInstance) -> Result<(), NswError> {
    if inst.goods.iter().all(|g| g.spending_cap == Some(1.0)) {
        Ok(())
    } else {
        Err(NswError::NotUnitCaps)
    }
}

/// Mean of `ln u_i`; `-inf` when some utility is zero.
pub(crate) fn mean_log(utilities: &[f64]) -> f64 {
    if utilities.iter().any(|&u| u <= 0.0) {
        return f64::NEG_INFINITY;
    }
    utilities.iter().map(|u| u.ln()).sum::<f64>() / utilities.len() as f64
}

/// Geometric mean of the agents' utilities under `alloc`.
pub fn nsw_value(alloc: &IntegralAllocation, inst: &MarketInstance) -> f64 {
    let utilities = IntegralAllocation::new(inst, alloc.owner.clone()).utilities;
    mean_log(&utilities).exp()
}

/// `(prod of prices at least 1)^(1/n)`.
pub fn sr_ub(inst_normalized: &MarketInstance, sr_eq: &Equilibrium) -> Result<f64, NswError> {
    require_unit_caps(inst_normalized)?;
    if sr_eq.prices.len() != inst_normalized.m() {
        return Err(NswError::DimensionMismatch(format!(
            "{} prices for {} goods",
            sr_eq.prices.len(),
            inst_normalized.m()
        )));
    }
    Ok(sr_ub_from_prices(&sr_eq.prices, inst_normalized.n()))
}

pub fn sr_ub_from_prices(prices: &[f64], n: usize) -> f64 {
    let logs: f64 = prices.iter().filter(|&&p| p >= 1.0).map(|p| p.ln()).sum();
    (logs / n as f64).exp()
}

/// `(prod_ij v_ij^b_ij / prod_j q_j^q_j)^(1/n)` with `0 log 0 = 0`.
pub fn sr_objective(inst: &MarketInstance, b: &SpendingProfile) -> Result<f64, NswError> {
    let (n, m) = (inst.n(), inst.m());
    if b.b.len() != n || b.b.iter().any(|r| r.len() != m) {
        return Err(NswError::DimensionMismatch(format!("spending is not {n} x {m}")));
    }
    const TOL: f64 = 1e-9;
    for (i, row) in b.b.iter().enumerate() {
        if row.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(NswError::InfeasibleSpending(format!("buyer {i} has a negative or non-finite entry")));
        }
        let total: f64 = row.iter().sum();
        let budget = inst.buyers[i].budget;
        if (total - budget).abs() > TOL * budget.max(1.0) {
            return Err(NswError::InfeasibleSpending(format!("buyer {i} spends {total}, budget {budget}")));
        }
    }
    let q = b.q();
    for (j, &qj) in q.iter().enumerate() {
        if qj > inst.cap(j) + TOL {
            return Err(NswError::InfeasibleSpending(format!("good {j} earns {qj} above its cap")));
        }
    }
    let mut log = 0.0;
    for i in 0..n {
        for j in 0..m {
            let x = b.b[i][j];
            if x > 0.0 {
                log += x * inst.value(i, j).ln();
            }
        }
    }
    for &qj in &q {
        if qj > 0.0 {
            log -= qj * qj.ln();
        }
    }
    Ok((log / n as f64).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproximationReport {
    pub sr_ub: f64,
    pub opt_nsw: f64,
    pub srr_nsw: f64,
    /// `sr_ub / opt_nsw`.
    pub gap_ratio: f64,
    /// `opt_nsw / srr_nsw` for the worst root choice.
    pub srr_ratio: f64,
    pub worst_roots: Vec<usize>,
}

impl ApproximationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Solves the SR equilibrium, normalizes valuations against it, and compares
/// the SR upper bound, the exhaustive optimum and the worst SRR rounding.
pub fn approximation_report(inst: &MarketInstance) -> Result<ApproximationReport, NswError> {
    require_linear(inst)?;
    require_unit_caps(inst)?;
    let eq = solve(inst, ModelKind::SpendingRestricted, &SolveOptions::default())?;
    let normalized = normalize_valuations(inst, &eq)?;
    let ub = sr_ub(&normalized, &eq)?;
    let opt = nsw_value(&brute_force_opt(&normalized)?, &normalized);
    let (worst, roots) = srr_round_rooted(&normalized, &eq, &RootRule::EnumerateAll)?;
    let srr = nsw_value(&worst, &normalized);
    Ok(ApproximationReport {
        sr_ub: ub,
        opt_nsw: opt,
        srr_nsw: srr,
        gap_ratio: ub / opt,
        srr_ratio: opt / srr,
        worst_roots: roots,
    })
}

#[cfg(test)]
mod tests;
