//! Fenchel conjugates and the dual objectives of the market programs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{MarketInstance, UtilityKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConjugateKind {
    /// `f(x) = x^2 / 2`
    HalfSquare,
    /// `f(x) = -log x` on `x > 0`
    NegLog,
    /// `f(x) = x log x` on `x >= 0`
    XLogX,
    /// `f(x) = e^x`
    Exp,
}

pub const ALL_KINDS: [ConjugateKind; 4] = [
    ConjugateKind::HalfSquare,
    ConjugateKind::NegLog,
    ConjugateKind::XLogX,
    ConjugateKind::Exp,
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConjugateError {
    #[error("{kind:?}: argument {value} outside the domain")]
    OutOfDomain { kind: ConjugateKind, value: f64 },
    #[error("dual constraint violated: {constraint}")]
    DualInfeasible { constraint: String },
    #[error("buyer {buyer} has tied best goods; the gradient is a set")]
    SubgradientSet { buyer: usize },
    #[error("price of good {good} is not positive")]
    NonPositivePrice { good: usize },
    #[error("all values are zero")]
    AllZero,
    #[error("operation needs linear utilities")]
    NotLinear,
}

impl ConjugateKind {
    pub fn in_primal_domain(self, x: f64) -> bool {
        match self {
            ConjugateKind::HalfSquare | ConjugateKind::Exp => x.is_finite(),
            ConjugateKind::NegLog => x.is_finite() && x > 0.0,
            ConjugateKind::XLogX => x.is_finite() && x >= 0.0,
        }
    }

    pub fn in_conjugate_domain(self, mu: f64) -> bool {
        match self {
            ConjugateKind::HalfSquare | ConjugateKind::XLogX => mu.is_finite(),
            ConjugateKind::NegLog => mu.is_finite() && mu < 0.0,
            ConjugateKind::Exp => mu.is_finite() && mu >= 0.0,
        }
    }

    pub fn forward(self, x: f64) -> Result<f64, ConjugateError> {
        if !self.in_primal_domain(x) {
            return Err(ConjugateError::OutOfDomain { kind: self, value: x });
        }
        Ok(match self {
            ConjugateKind::HalfSquare => 0.5 * x * x,
            ConjugateKind::NegLog => -x.ln(),
            ConjugateKind::XLogX => xlogx(x),
            ConjugateKind::Exp => x.exp(),
        })
    }

    pub fn gradient(self, x: f64) -> Result<f64, ConjugateError> {
        if !self.in_primal_domain(x) || (self == ConjugateKind::XLogX && x == 0.0) {
            return Err(ConjugateError::OutOfDomain { kind: self, value: x });
        }
        Ok(match self {
            ConjugateKind::HalfSquare => x,
            ConjugateKind::NegLog => -1.0 / x,
            ConjugateKind::XLogX => x.ln() + 1.0,
            ConjugateKind::Exp => x.exp(),
        })
    }
}

/// `x log x` with `0 log 0 = 0`.
pub fn xlogx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// `f*(mu) = sup_x { mu x - f(x) }` from the closed-form table.
pub fn conjugate_eval(kind: ConjugateKind, mu: f64) -> Result<f64, ConjugateError> {
    if !kind.in_conjugate_domain(mu) {
        return Err(ConjugateError::OutOfDomain { kind, value: mu });
    }
    Ok(match kind {
        ConjugateKind::HalfSquare => 0.5 * mu * mu,
        ConjugateKind::NegLog => -1.0 - (-mu).ln(),
        ConjugateKind::XLogX => (mu - 1.0).exp(),
        ConjugateKind::Exp => xlogx(mu) - mu,
    })
}

/// `f(x) + f*(mu) - mu x`, nonnegative and zero exactly when `mu = f'(x)`.
pub fn fenchel_young_gap(kind: ConjugateKind, x: f64, mu: f64) -> Result<f64, ConjugateError> {
    Ok(kind.forward(x)? + conjugate_eval(kind, mu)? - mu * x)
}

/// The dual programs with a hard-wired evaluator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DualProgramKind {
    /// `sum p - sum B log beta`, paired with the Eisenberg–Gale primal.
    EisenbergGale,
    /// Same value as `EisenbergGale`, paired with the Shmyrev spending program.
    Shmyrev,
    /// `EisenbergGale` with the extra constraint `beta <= 1`.
    QuasiLinear,
    /// Price-space dual of the earning-capped spending program.
    SpendingRestricted,
    /// Dual of the segment program, with or without earning caps.
    SpendingConstraint,
    /// `sum p + sum_i max_{u <= d_i} (B_i log u - u e_i(p))`.
    UtilityRestricted,
    /// Transaction-cost variant: `p_j + c_ij >= v_ij beta_i`, `beta <= 1`.
    TransactionCost { costs: Vec<Vec<f64>> },
}

/// Dual point and objective values attached to a solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualCertificate {
    pub program: DualProgramKind,
    pub prices: Vec<f64>,
    /// Reciprocal best bang-per-buck of each buyer.
    pub beta: Vec<f64>,
    /// `-log beta`.
    pub gamma: Vec<f64>,
    /// `log p_j`, the multipliers of the price-definition rows.
    pub lambda: Vec<f64>,
    /// Cap multipliers: `log(p_j / q_j)` per good for earning caps,
    /// `B_i / u_i - 1 / beta_i`-style slack per buyer for utility caps.
    pub mu: Vec<f64>,
    /// Budget multipliers.
    pub eta: Vec<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
}

const FEAS_TOL: f64 = 1e-9;

fn infeasible(constraint: String) -> ConjugateError {
    ConjugateError::DualInfeasible { constraint }
}

/// Earning term of the capped dual: `p` below the cap, `c + c log(p/c)` above.
pub fn capped_price_term(p: f64, c: f64) -> f64 {
    if p <= c {
        p
    } else {
        c + c * (p / c).ln()
    }
}

/// Constant dropped from the Eisenberg–Gale-type pairs: `sum (B log B - B)`.
pub fn normalization_constant(program: &DualProgramKind, inst: &MarketInstance) -> f64 {
    match program {
        DualProgramKind::EisenbergGale
        | DualProgramKind::QuasiLinear
        | DualProgramKind::TransactionCost { .. } => {
            inst.buyers.iter().map(|b| xlogx(b.budget) - b.budget).sum()
        }
        _ => 0.0,
    }
}

fn check_prices(p: &[f64], inst: &MarketInstance) -> Result<(), ConjugateError> {
    if p.len() != inst.m() {
        return Err(infeasible(format!("price vector has {} entries", p.len())));
    }
    if let Some(j) = p.iter().position(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(infeasible(format!("p_{j} >= 0")));
    }
    Ok(())
}

/// Evaluates the dual objective at `point`, using its prices and `beta`.
pub fn dual_objective(
    program: &DualProgramKind,
    inst: &MarketInstance,
    point: &DualCertificate,
) -> Result<f64, ConjugateError> {
    let p = &point.prices;
    check_prices(p, inst)?;
    let beta = &point.beta;
    let needs_beta = !matches!(program, DualProgramKind::UtilityRestricted);
    if needs_beta {
        if beta.len() != inst.n() {
            return Err(infeasible(format!("beta has {} entries", beta.len())));
        }
        if let Some(i) = beta.iter().position(|&b| !(b > 0.0) || !b.is_finite()) {
            return Err(infeasible(format!("beta_{i} > 0")));
        }
    }
    let budget_term = |inst: &MarketInstance| -> f64 {
        inst.buyers
            .iter()
            .zip(beta)
            .map(|(b, beta)| -b.budget * beta.ln())
            .sum()
    };
    let rate_rows = |costs: Option<&Vec<Vec<f64>>>| -> Result<(), ConjugateError> {
        for i in 0..inst.n() {
            for j in 0..inst.m() {
                let c = costs.map_or(0.0, |c| c[i][j]);
                let lhs = p[j] + c;
                let rhs = inst.value(i, j) * beta[i];
                if lhs < rhs - FEAS_TOL * rhs.abs().max(1.0) {
                    return Err(infeasible(format!("p_{j} >= v_{i}{j} beta_{i}")));
                }
            }
        }
        Ok(())
    };
    let beta_le_one = || -> Result<(), ConjugateError> {
        if let Some(i) = beta.iter().position(|&b| b > 1.0 + FEAS_TOL) {
            return Err(infeasible(format!("beta_{i} <= 1")));
        }
        Ok(())
    };
    match program {
        DualProgramKind::EisenbergGale | DualProgramKind::Shmyrev => {
            rate_rows(None)?;
            Ok(p.iter().sum::<f64>() + budget_term(inst))
        }
        DualProgramKind::QuasiLinear => {
            rate_rows(None)?;
            beta_le_one()?;
            Ok(p.iter().sum::<f64>() + budget_term(inst))
        }
        DualProgramKind::TransactionCost { costs } => {
            if costs.len() != inst.n() || costs.iter().any(|r| r.len() != inst.m()) {
                return Err(infeasible("cost matrix shape".into()));
            }
            rate_rows(Some(costs))?;
            beta_le_one()?;
            Ok(p.iter().sum::<f64>() + budget_term(inst))
        }
        DualProgramKind::SpendingRestricted => {
            rate_rows(None)?;
            let earn: f64 = (0..inst.m()).map(|j| capped_price_term(p[j], inst.cap(j))).sum();
            Ok(earn + budget_term(inst))
        }
        DualProgramKind::SpendingConstraint => {
            let earn: f64 = (0..inst.m()).map(|j| capped_price_term(p[j], inst.cap(j))).sum();
            let mut total = earn + budget_term(inst);
            for i in 0..inst.n() {
                for j in 0..inst.m() {
                    for seg in inst.segments(i, j) {
                        if p[j] <= 0.0 {
                            return Err(infeasible(format!("p_{j} > 0 for a valued good")));
                        }
                        let r = (seg.rate * beta[i] / p[j]).ln();
                        if r > 0.0 {
                            total += seg.length * r;
                        }
                    }
                }
            }
            Ok(total)
        }
        DualProgramKind::UtilityRestricted => ur_dual_value(inst, p),
    }
}

/// Cost of one util for buyer `i` at prices `p`.
pub fn expenditure(inst: &MarketInstance, i: usize, p: &[f64]) -> f64 {
    let buyer = &inst.buyers[i];
    match &buyer.utility {
        UtilityKind::Leontief { phi } => phi.iter().zip(p).map(|(f, p)| f * p).sum(),
        UtilityKind::Ces { rho } => ces_expenditure(&buyer.values, *rho, p).0,
        _ => buyer
            .values
            .iter()
            .zip(p)
            .filter(|(v, _)| **v > 0.0)
            .map(|(v, p)| p / v)
            .fold(f64::INFINITY, f64::min),
    }
}

/// CES unit expenditure and its price gradient (the Hicksian demand of one
/// util). With `sigma = 1/(1-rho)`, `e = (sum a^sigma p^(1-sigma))^(1/(1-sigma))`.
pub fn ces_expenditure(weights: &[f64], rho: f64, p: &[f64]) -> (f64, Vec<f64>) {
    let sigma = 1.0 / (1.0 - rho);
    let k = 1.0 - sigma;
    let m = p.len();
    // log terms s_j = sigma log a_j + k log p_j
    let terms: Vec<f64> = (0..m)
        .map(|j| {
            if p[j] <= 0.0 {
                if k > 0.0 {
                    f64::NEG_INFINITY
                } else {
                    f64::INFINITY
                }
            } else {
                sigma * weights[j].ln() + k * p[j].ln()
            }
        })
        .collect();
    if terms.contains(&f64::INFINITY) {
        // A free good with substitutes: utility costs nothing, demand
        // concentrates on the free goods.
        let free: Vec<usize> = (0..m).filter(|&j| p[j] <= 0.0).collect();
        let mut grad = vec![0.0; m];
        let tot: f64 = free.iter().map(|&j| weights[j].powf(sigma)).sum();
        for &j in &free {
            // The bundle a uniform price vanishing on the free goods selects.
            grad[j] = weights[j].powf(sigma) * tot.powf(-1.0 / rho);
        }
        return (0.0, grad);
    }
    let mx = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = terms.iter().map(|t| (t - mx).exp()).sum();
    let log_sum = mx + s.ln();
    let log_e = log_sum / k;
    let e = log_e.exp();
    let grad = (0..m)
        .map(|j| {
            if p[j] <= 0.0 {
                0.0
            } else {
                let w = (terms[j] - log_sum).exp();
                e * w / p[j]
            }
        })
        .collect();
    (e, grad)
}

/// Utility level a UR buyer picks at unit cost `e`: `min(d, B/e)`.
pub fn ur_best_utility(budget: f64, cap: f64, e: f64) -> f64 {
    if e <= 0.0 {
        cap
    } else {
        cap.min(budget / e)
    }
}

/// `max_{0 < u <= d} (B log u - u e)`.
pub fn ur_buyer_term(budget: f64, cap: f64, e: f64) -> f64 {
    let u = ur_best_utility(budget, cap, e);
    if u.is_infinite() {
        return f64::NEG_INFINITY;
    }
    budget * u.ln() - u * e
}

/// Value of the UR price dual; its minimizers are the equilibrium prices.
pub fn ur_dual_value(inst: &MarketInstance, p: &[f64]) -> Result<f64, ConjugateError> {
    check_prices(p, inst)?;
    let mut total: f64 = p.iter().sum();
    for i in 0..inst.n() {
        let e = expenditure(inst, i, p);
        let term = ur_buyer_term(inst.buyers[i].budget, inst.utility_cap(i), e);
        if term == f64::NEG_INFINITY {
            return Err(infeasible(format!(
                "buyer {i} has free utility and no cap; the dual is unbounded"
            )));
        }
        total += term;
    }
    Ok(total)
}

fn require_linear(inst: &MarketInstance) -> Result<(), ConjugateError> {
    if inst
        .buyers
        .iter()
        .all(|b| matches!(b.utility, UtilityKind::Linear))
    {
        Ok(())
    } else {
        Err(ConjugateError::NotLinear)
    }
}

/// `sum p_j - sum B_i log(min_j p_j / v_ij)`.
pub fn reduced_dual(inst: &MarketInstance, p: &[f64]) -> Result<f64, ConjugateError> {
    require_linear(inst)?;
    if let Some(j) = p.iter().position(|&x| !(x > 0.0)) {
        return Err(ConjugateError::NonPositivePrice { good: j });
    }
    let mut total: f64 = p.iter().sum();
    for i in 0..inst.n() {
        total -= inst.buyers[i].budget * expenditure(inst, i, p).ln();
    }
    Ok(total)
}

/// Supply minus demand when every buyer spends the whole budget on the
/// unique best bang-per-buck good; the gradient of [`reduced_dual`].
pub fn excess_supply(inst: &MarketInstance, p: &[f64]) -> Result<Vec<f64>, ConjugateError> {
    require_linear(inst)?;
    if let Some(j) = p.iter().position(|&x| !(x > 0.0)) {
        return Err(ConjugateError::NonPositivePrice { good: j });
    }
    let mut z = vec![1.0; inst.m()];
    for i in 0..inst.n() {
        let ratios: Vec<f64> = (0..inst.m()).map(|j| inst.value(i, j) / p[j]).collect();
        let best = ratios.iter().cloned().fold(0.0, f64::max);
        let winners: Vec<usize> = (0..inst.m())
            .filter(|&j| ratios[j] >= best * (1.0 - 1e-12))
            .collect();
        if winners.len() != 1 {
            return Err(ConjugateError::SubgradientSet { buyer: i });
        }
        let j = winners[0];
        z[j] -= inst.buyers[i].budget / p[j];
    }
    Ok(z)
}

/// The spending split maximizing `sum b_j log v_j - b_j log b_j` over the
/// simplex, and the attained value `log sum v`.
pub fn gibbs_spending(values: &[f64]) -> Result<(Vec<f64>, f64), ConjugateError> {
    if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(ConjugateError::AllZero);
    }
    let total: f64 = values.iter().sum();
    if !(total > 0.0) {
        return Err(ConjugateError::AllZero);
    }
    Ok((values.iter().map(|v| v / total).collect(), total.ln()))
}

/// `sum_j b_j log v_j - b_j log b_j`, with `0 log 0 = 0`.
pub fn gibbs_objective(values: &[f64], b: &[f64]) -> f64 {
    values
        .iter()
        .zip(b)
        .map(|(&v, &b)| if b > 0.0 { b * v.ln() - b * b.ln() } else { 0.0 })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Buyer, Good};

    #[test]
    fn table_values() {
        assert_eq!(conjugate_eval(ConjugateKind::XLogX, 1.0).unwrap(), 1.0);
        assert_eq!(conjugate_eval(ConjugateKind::NegLog, -1.0).unwrap(), -1.0);
        assert_eq!(conjugate_eval(ConjugateKind::HalfSquare, 2.0).unwrap(), 2.0);
        assert!(matches!(
            conjugate_eval(ConjugateKind::NegLog, 0.0),
            Err(ConjugateError::OutOfDomain { .. })
        ));
    }

    #[test]
    fn fenchel_young_examples() {
        assert!(fenchel_young_gap(ConjugateKind::XLogX, 1.0, 1.0).unwrap().abs() < 1e-15);
        let g = fenchel_young_gap(ConjugateKind::XLogX, 1.0, 0.0).unwrap();
        assert!((g - (-1.0f64).exp()).abs() < 1e-15);
    }

    fn one_good_two_buyers() -> MarketInstance {
        MarketInstance {
            buyers: vec![Buyer::linear(1.0, vec![1.0]), Buyer::linear(1.0, vec![1.0])],
            goods: vec![Good::default()],
        }
    }

    #[test]
    fn excess_supply_examples() {
        let inst = one_good_two_buyers();
        assert_eq!(excess_supply(&inst, &[2.0]).unwrap(), vec![0.0]);
        assert_eq!(excess_supply(&inst, &[4.0]).unwrap(), vec![0.5]);
        assert!(matches!(
            excess_supply(&inst, &[0.0]),
            Err(ConjugateError::NonPositivePrice { good: 0 })
        ));
    }

    #[test]
    fn excess_supply_tie_is_a_set() {
        let inst = MarketInstance {
            buyers: vec![Buyer::linear(1.0, vec![1.0, 1.0])],
            goods: vec![Good::default(); 2],
        };
        assert!(matches!(
            excess_supply(&inst, &[0.5, 0.5]),
            Err(ConjugateError::SubgradientSet { buyer: 0 })
        ));
    }

    #[test]
    fn single_buyer_dual_value() {
        let inst = MarketInstance {
            buyers: vec![Buyer::linear(1.0, vec![2.0])],
            goods: vec![Good::default()],
        };
        let cert = DualCertificate {
            program: DualProgramKind::EisenbergGale,
            prices: vec![1.0],
            beta: vec![0.5],
            gamma: vec![2f64.ln()],
            lambda: vec![0.0],
            mu: vec![],
            eta: vec![],
            primal_objective: 2f64.ln(),
            dual_objective: 0.0,
        };
        let d = dual_objective(&DualProgramKind::EisenbergGale, &inst, &cert).unwrap();
        assert!((d - (1.0 + 2f64.ln())).abs() < 1e-15);
        let c = normalization_constant(&DualProgramKind::EisenbergGale, &inst);
        assert_eq!(c, -1.0);
        assert!((d + c - 2f64.ln()).abs() < 1e-15);

        let mut bad = cert.clone();
        bad.beta = vec![0.6];
        assert!(matches!(
            dual_objective(&DualProgramKind::EisenbergGale, &inst, &bad),
            Err(ConjugateError::DualInfeasible { .. })
        ));
    }

    #[test]
    fn quasilinear_buyer_term_vanishes_at_beta_one() {
        let mut inst = MarketInstance {
            buyers: vec![Buyer::linear(3.0, vec![1.0])],
            goods: vec![Good::default()],
        };
        inst.buyers[0].utility = UtilityKind::QuasiLinear;
        let cert = DualCertificate {
            program: DualProgramKind::QuasiLinear,
            prices: vec![2.0],
            beta: vec![1.0],
            gamma: vec![0.0],
            lambda: vec![],
            mu: vec![],
            eta: vec![],
            primal_objective: 0.0,
            dual_objective: 0.0,
        };
        assert_eq!(dual_objective(&DualProgramKind::QuasiLinear, &inst, &cert).unwrap(), 2.0);
    }

    #[test]
    fn gibbs_examples() {
        let (b, obj) = gibbs_spending(&[1.0, 3.0]).unwrap();
        assert_eq!(b, vec![0.25, 0.75]);
        assert!((obj - 4f64.ln()).abs() < 1e-15);
        assert_eq!(gibbs_spending(&[5.0]).unwrap().0, vec![1.0]);
        assert_eq!(gibbs_spending(&[2.0, 2.0]).unwrap().0, vec![0.5, 0.5]);
        assert_eq!(gibbs_spending(&[0.0, 0.0]), Err(ConjugateError::AllZero));
    }

    #[test]
    fn gibbs_beats_grid() {
        let v = [1.0, 3.0];
        let (b, obj) = gibbs_spending(&v).unwrap();
        assert!((gibbs_objective(&v, &b) - obj).abs() < 1e-14);
        for k in 0..=1000 {
            let t = k as f64 / 1000.0;
            assert!(gibbs_objective(&v, &[t, 1.0 - t]) <= obj + 1e-15);
        }
    }

    #[test]
    fn ces_expenditure_matches_direct_minimization() {
        // Two goods, rho = 1/2, weights (1, 1), prices (1, 1): u(x) = (sqrt x1 + sqrt x2)^2.
        // Cheapest util: x1 = x2 = 1/4, cost 1/2.
        let (e, g) = ces_expenditure(&[1.0, 1.0], 0.5, &[1.0, 1.0]);
        assert!((e - 0.5).abs() < 1e-14);
        assert!((g[0] - 0.25).abs() < 1e-14 && (g[1] - 0.25).abs() < 1e-14);
    }
}
