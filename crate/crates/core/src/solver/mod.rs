//! Convex programs for each market model and the numerical method that
//! solves them.
//!
//! Spending programs (Fisher, earning caps, segments, quasi-linear) are solved
//! through an entropy-smoothed dual with damped Newton steps and a decreasing
//! smoothing weight. UR programs are solved in price space by projected
//! spectral gradient on the dual. Both finish with a support polish that
//! solves the KKT equalities on the detected support and keeps the result
//! only if it verifies.

mod flow;
mod linalg;
mod polish;
mod pr;
mod price_dual;
mod program;
mod recover;
mod spending;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conjugate::{DualCertificate, DualProgramKind};
use crate::model::{MarketInstance, ModelKind, SpendingProfile, UtilityKind};

pub use pr::proportional_response_step;
pub use program::{build_program, ConstraintId, ProgramKind, ProgramSpec, Row, RowKind, Sense, VarKind};
pub use recover::{recover_prices, recover_prices_tol};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveMethod {
    /// Plain proportional-response iterations, linear Fisher markets only.
    ProportionalResponse,
    /// Smoothed dual Newton for spending programs, projected spectral
    /// gradient for UR programs.
    ProjectedFirstOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// KKT residual target.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Seeds the randomized starting point.
    pub seed: u64,
    pub method: SolveMethod,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tolerance: 1e-8,
            max_iterations: 200_000,
            seed: 0,
            method: SolveMethod::ProjectedFirstOrder,
        }
    }
}

impl SolveOptions {
    pub fn with_seed(seed: u64) -> Self {
        SolveOptions {
            seed,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    /// Largest KKT residual of the returned point.
    pub residual: f64,
    #[serde(skip)]
    pub residual_trace: Vec<f64>,
}

/// Prices, allocation and spending of a (claimed) equilibrium.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub prices: Vec<f64>,
    pub allocation: Vec<Vec<f64>>,
    pub spending: Vec<Vec<f64>>,
    pub utilities: Vec<f64>,
    /// Per-segment spending, spending-constraint utilities only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment_spending: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(skip)]
    pub certificate: Option<DualCertificate>,
    #[serde(default)]
    pub diagnostics: Diagnostics,
}

impl Equilibrium {
    /// Candidate built from prices and spending; allocation and utilities
    /// are derived from them.
    pub fn from_prices(
        inst: &MarketInstance,
        prices: Vec<f64>,
        spending: Vec<Vec<f64>>,
        segment_spending: Option<Vec<Vec<Vec<f64>>>>,
    ) -> Self {
        from_spending(inst, prices, spending, segment_spending)
    }

    pub fn spending_profile(&self) -> SpendingProfile {
        SpendingProfile {
            b: self.spending.clone(),
            segments: self.segment_spending.clone(),
        }
    }

    pub fn q(&self) -> Vec<f64> {
        self.spending_profile().q()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("equilibrium serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("model mismatch: {0}")]
    ModelMismatch(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("did not converge after {iterations} iterations (residual {residual:e}): {reason}")]
    DidNotConverge {
        iterations: usize,
        residual: f64,
        reason: String,
        trace: Vec<f64>,
    },
    #[error("buyer {buyer} has zero utility")]
    ZeroUtility { buyer: usize },
    #[error("inconsistent bang-per-buck rates at buyer {buyer}")]
    InconsistentRates { buyer: usize },
    #[error("invalid options: {0}")]
    InvalidOptions(String),
}

/// Builds the program for `model` and solves it.
pub fn solve(
    inst: &MarketInstance,
    model: ModelKind,
    opts: &SolveOptions,
) -> Result<Equilibrium, SolveError> {
    let spec = build_program(inst, model)?;
    maximize(&spec, opts)
}

/// Solves `spec`; the returned point passes the model's check at
/// `opts.tolerance`.
pub fn maximize(spec: &ProgramSpec, opts: &SolveOptions) -> Result<Equilibrium, SolveError> {
    if !(opts.tolerance > 0.0) || opts.max_iterations == 0 {
        return Err(SolveError::InvalidOptions(
            "tolerance must be positive and max_iterations at least 1".into(),
        ));
    }
    let inst = &spec.instance;
    let model = spec.model;
    if opts.method == SolveMethod::ProportionalResponse && spec.kind != ProgramKind::Shmyrev {
        return Err(SolveError::ModelMismatch(
            "proportional response only handles linear Fisher markets".into(),
        ));
    }
    if matches!(model, ModelKind::SpendingRestricted | ModelKind::SpendingConstraint) {
        let total_cap = inst.total_cap();
        let total_budget = inst.total_budget();
        if total_cap < total_budget {
            return Err(SolveError::Infeasible(format!(
                "sum of caps {total_cap} < sum of budgets {total_budget}"
            )));
        }
    }
    let mut eq = match spec.kind {
        ProgramKind::UrLinear | ProgramKind::UrLeontief | ProgramKind::UrCes => {
            price_dual::solve_ur(inst, opts)?
        }
        _ => {
            flow::check_spendable(inst, model)?;
            if opts.method == SolveMethod::ProportionalResponse {
                pr::solve_pr(inst, opts)?
            } else {
                spending::solve_spending(inst, model, opts)?
            }
        }
    };
    attach_certificate(inst, model, &mut eq);
    Ok(eq)
}

/// Whether every budget can be spent on valued goods within the caps and
/// segment lengths.
pub fn spendable(inst: &MarketInstance, model: ModelKind) -> bool {
    flow::check_spendable(inst, model).is_ok()
}

/// Dual program paired with each model for gap reporting.
pub fn dual_program_for(model: ModelKind) -> DualProgramKind {
    match model {
        ModelKind::Fisher => DualProgramKind::EisenbergGale,
        ModelKind::SpendingRestricted => DualProgramKind::SpendingRestricted,
        ModelKind::SpendingConstraint => DualProgramKind::SpendingConstraint,
        ModelKind::QuasiLinear => DualProgramKind::QuasiLinear,
        ModelKind::UtilityRestricted => DualProgramKind::UtilityRestricted,
    }
}

/// Builds the dual point implied by the prices of `eq` and stores it, with
/// primal and dual objective values, in `eq.certificate`.
pub fn attach_certificate(inst: &MarketInstance, model: ModelKind, eq: &mut Equilibrium) {
    eq.certificate = Some(certificate_for(inst, model, eq));
}

pub fn certificate_for(inst: &MarketInstance, model: ModelKind, eq: &Equilibrium) -> DualCertificate {
    let program = dual_program_for(model);
    let n = inst.n();
    let m = inst.m();
    let p = &eq.prices;
    let beta: Vec<f64> = (0..n)
        .map(|i| match model {
            ModelKind::SpendingConstraint => sc_beta(inst, eq, i),
            ModelKind::QuasiLinear => unit_price_beta(inst, p, i).min(1.0),
            _ => unit_price_beta(inst, p, i),
        })
        .collect();
    let q = eq.q();
    let mu = match model {
        ModelKind::UtilityRestricted => (0..n)
            .map(|i| {
                let spend: f64 = eq.spending[i].iter().sum();
                let u = eq.utilities[i];
                if u > 0.0 {
                    (inst.buyers[i].budget - spend) / u
                } else {
                    0.0
                }
            })
            .collect(),
        _ => (0..m)
            .map(|j| {
                if p[j] > 0.0 && q[j] > 0.0 {
                    (p[j] / q[j]).ln().max(0.0)
                } else {
                    0.0
                }
            })
            .collect(),
    };
    let gamma: Vec<f64> = beta.iter().map(|b| -b.ln()).collect();
    let mut cert = DualCertificate {
        program: program.clone(),
        prices: p.clone(),
        beta,
        gamma: gamma.clone(),
        lambda: p.iter().map(|x| x.ln()).collect(),
        mu,
        eta: gamma,
        primal_objective: primal_objective(inst, model, eq),
        dual_objective: f64::NAN,
    };
    cert.dual_objective = crate::conjugate::dual_objective(&program, inst, &cert).unwrap_or(f64::NAN);
    cert
}

/// `min_j p_j / v_ij` over valued goods: the price of one util.
fn unit_price_beta(inst: &MarketInstance, p: &[f64], i: usize) -> f64 {
    let buyer = &inst.buyers[i];
    match &buyer.utility {
        UtilityKind::Linear | UtilityKind::QuasiLinear => buyer
            .values
            .iter()
            .zip(p)
            .filter(|(v, _)| **v > 0.0)
            .map(|(v, p)| p / v)
            .fold(f64::INFINITY, f64::min),
        _ => crate::conjugate::expenditure(inst, i, p),
    }
}

/// Reciprocal of the marginal rate: the rate of a partly filled segment, or
/// the lowest rate among filled ones when every used segment is full.
fn sc_beta(inst: &MarketInstance, eq: &Equilibrium, i: usize) -> f64 {
    let mut partial: f64 = 0.0;
    let mut full_min = f64::INFINITY;
    let mut best_any: f64 = 0.0;
    for j in 0..inst.m() {
        if eq.prices[j] <= 0.0 {
            continue;
        }
        for (l, seg) in inst.segments(i, j).iter().enumerate() {
            let r = seg.rate / eq.prices[j];
            best_any = best_any.max(r);
            let spent = eq
                .segment_spending
                .as_ref()
                .map_or(0.0, |s| s[i][j].get(l).copied().unwrap_or(0.0));
            if spent >= seg.length * (1.0 - 1e-9) {
                full_min = full_min.min(r);
            } else if spent > 0.0 {
                partial = partial.max(r);
            }
        }
    }
    if partial > 0.0 {
        1.0 / partial
    } else if full_min.is_finite() {
        1.0 / full_min
    } else {
        1.0 / best_any
    }
}

/// Primal objective of the program paired with `model` at `eq`.
pub fn primal_objective(inst: &MarketInstance, model: ModelKind, eq: &Equilibrium) -> f64 {
    let q = eq.q();
    let earn: f64 = q.iter().map(|&qj| crate::conjugate::xlogx(qj) - qj).sum();
    match model {
        ModelKind::Fisher | ModelKind::UtilityRestricted => (0..inst.n())
            .map(|i| inst.buyers[i].budget * eq.utilities[i].ln())
            .sum(),
        ModelKind::QuasiLinear => (0..inst.n())
            .map(|i| {
                let spend: f64 = eq.spending[i].iter().sum();
                let leftover = (inst.buyers[i].budget - spend).max(0.0);
                let goods: f64 = (0..inst.m())
                    .map(|j| inst.value(i, j) * eq.allocation[i][j])
                    .sum();
                inst.buyers[i].budget * (goods + leftover).ln() - leftover
            })
            .sum(),
        ModelKind::SpendingRestricted => {
            let mut total = -earn;
            for i in 0..inst.n() {
                for j in 0..inst.m() {
                    let b = eq.spending[i][j];
                    if b > 0.0 {
                        total += b * inst.value(i, j).ln();
                    }
                }
            }
            total
        }
        ModelKind::SpendingConstraint => {
            let mut total = -earn;
            if let Some(seg) = &eq.segment_spending {
                for i in 0..inst.n() {
                    for j in 0..inst.m() {
                        for (l, s) in inst.segments(i, j).iter().enumerate() {
                            let b = seg[i][j].get(l).copied().unwrap_or(0.0);
                            if b > 0.0 {
                                total += b * s.rate.ln();
                            }
                        }
                    }
                }
            }
            total
        }
    }
}

/// Utilities implied by an allocation (and spending, for segment and
/// quasi-linear buyers).
pub fn utilities_of(
    inst: &MarketInstance,
    p: &[f64],
    x: &[Vec<f64>],
    segments: Option<&Vec<Vec<Vec<f64>>>>,
) -> Vec<f64> {
    (0..inst.n())
        .map(|i| {
            let buyer = &inst.buyers[i];
            match &buyer.utility {
                UtilityKind::Linear => (0..inst.m()).map(|j| buyer.values[j] * x[i][j]).sum(),
                UtilityKind::QuasiLinear => (0..inst.m())
                    .map(|j| (buyer.values[j] - p[j]) * x[i][j])
                    .sum(),
                UtilityKind::Leontief { phi } => (0..inst.m())
                    .filter(|&j| phi[j] > 0.0)
                    .map(|j| x[i][j] / phi[j])
                    .fold(f64::INFINITY, f64::min),
                UtilityKind::Ces { rho } => ces_utility(&buyer.values, *rho, &x[i]),
                UtilityKind::SpendingConstraint { segments: segs } => {
                    let Some(s) = segments else { return 0.0 };
                    let mut u = 0.0;
                    for j in 0..inst.m() {
                        if p[j] > 0.0 {
                            for (l, seg) in segs[j].iter().enumerate() {
                                u += seg.rate * s[i][j].get(l).copied().unwrap_or(0.0) / p[j];
                            }
                        }
                    }
                    u
                }
            }
        })
        .collect()
}

/// `(sum a_j x_j^rho)^(1/rho)`, evaluated in log space.
pub fn ces_utility(weights: &[f64], rho: f64, x: &[f64]) -> f64 {
    if rho < 0.0 && x.iter().zip(weights).any(|(x, a)| *a > 0.0 && *x <= 0.0) {
        return 0.0;
    }
    let logs: Vec<f64> = x
        .iter()
        .zip(weights)
        .filter(|(x, a)| **a > 0.0 && **x > 0.0)
        .map(|(x, a)| a.ln() + rho * x.ln())
        .collect();
    if logs.is_empty() {
        return 0.0;
    }
    let mx = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = logs.iter().map(|l| (l - mx).exp()).sum();
    ((mx + s.ln()) / rho).exp()
}

/// Assembles an equilibrium from prices and spending; allocation is `b / p`.
pub(crate) fn from_spending(
    inst: &MarketInstance,
    prices: Vec<f64>,
    b: Vec<Vec<f64>>,
    segments: Option<Vec<Vec<Vec<f64>>>>,
) -> Equilibrium {
    let x: Vec<Vec<f64>> = b
        .iter()
        .map(|row| {
            row.iter()
                .zip(&prices)
                .map(|(b, p)| if *p > 0.0 { b / p } else { 0.0 })
                .collect()
        })
        .collect();
    let utilities = utilities_of(inst, &prices, &x, segments.as_ref());
    Equilibrium {
        prices,
        allocation: x,
        spending: b,
        utilities,
        segment_spending: segments,
        certificate: None,
        diagnostics: Diagnostics::default(),
    }
}

#[cfg(test)]
mod tests;
