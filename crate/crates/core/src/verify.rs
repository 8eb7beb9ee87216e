//! Equilibrium checks per market model.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conjugate::normalization_constant;
use crate::model::{MarketInstance, ModelKind, UtilityKind};
use crate::solver::{certificate_for, utilities_of, Equilibrium};

/// Default threshold for checks; looser than the solver target.
pub const DEFAULT_CHECK_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub pass: bool,
    pub model: ModelKind,
    pub tolerance: f64,
    pub relative: bool,
    /// Shortfall of purchased goods' bang-per-buck from the buyer's best
    /// (CES: relative spread of marginal utility per dollar).
    pub mbb: f64,
    /// Unsold supply of goods with a positive price, in money.
    pub clearing: f64,
    /// Budget not spent, for models that spend everything.
    pub budget: f64,
    /// `|q_j - min(p_j, c_j)|` under earning caps.
    pub cap: f64,
    /// UR: the smaller of budget slack and utility-cap slack.
    pub utility: f64,
    /// Money on a segment whose predecessor is not full.
    pub segment_order: f64,
    /// Sign, supply, consistency and cap violations.
    pub feasibility: f64,
    /// Dual minus primal objective after the normalization constant.
    pub duality_gap: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl CheckReport {
    pub fn max_residual(&self) -> f64 {
        [
            self.mbb,
            self.clearing,
            self.budget,
            self.cap,
            self.utility,
            self.segment_order,
            self.feasibility,
            self.duality_gap.map_or(0.0, f64::abs),
        ]
        .into_iter()
        .fold(0.0, |a, r| if r.is_nan() { f64::INFINITY } else { a.max(r) })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VerifyError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("equilibrium carries no dual certificate")]
    MissingCertificate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOptions {
    pub tol: f64,
    /// Scale each residual by `max(1, |quantity|)`.
    pub relative: bool,
}

/// Whether an equilibrium exists: earning caps must cover the budgets.
/// Instances without earning caps, and UR instances, always have one.
pub fn existence_condition(inst: &MarketInstance) -> bool {
    if !inst.has_spending_caps() || inst.has_utility_caps() {
        return true;
    }
    inst.total_cap() >= inst.total_budget()
}

/// Duality gap from the certificate attached to `eq`.
pub fn duality_gap(inst: &MarketInstance, eq: &Equilibrium) -> Result<f64, VerifyError> {
    let cert = eq.certificate.as_ref().ok_or(VerifyError::MissingCertificate)?;
    Ok(cert.dual_objective + normalization_constant(&cert.program, inst) - cert.primal_objective)
}

pub fn check_equilibrium(
    inst: &MarketInstance,
    eq: &Equilibrium,
    model: ModelKind,
    tol: f64,
) -> Result<CheckReport, VerifyError> {
    check_equilibrium_with(inst, eq, model, CheckOptions { tol, relative: false })
}

fn dims(inst: &MarketInstance, eq: &Equilibrium) -> Result<(), VerifyError> {
    let (n, m) = (inst.n(), inst.m());
    let bad = |what: &str| Err(VerifyError::DimensionMismatch(what.to_string()));
    if eq.prices.len() != m {
        return bad(&format!("{} prices for {m} goods", eq.prices.len()));
    }
    if eq.utilities.len() != n {
        return bad(&format!("{} utilities for {n} buyers", eq.utilities.len()));
    }
    for (name, mat) in [("allocation", &eq.allocation), ("spending", &eq.spending)] {
        if mat.len() != n || mat.iter().any(|r| r.len() != m) {
            return bad(&format!("{name} is not {n}x{m}"));
        }
    }
    if let Some(seg) = &eq.segment_spending {
        for i in 0..n {
            for j in 0..m {
                if seg.len() != n
                    || seg[i].len() != m
                    || seg[i][j].len() != inst.segments(i, j).len()
                {
                    return bad(&format!("segment spending of buyer {i} on good {j}"));
                }
            }
        }
    }
    Ok(())
}

/// Per-segment money, filling segments in order when `eq` does not record it.
fn segment_money(inst: &MarketInstance, eq: &Equilibrium) -> Vec<Vec<Vec<f64>>> {
    if let Some(seg) = &eq.segment_spending {
        return seg.clone();
    }
    (0..inst.n())
        .map(|i| {
            (0..inst.m())
                .map(|j| {
                    let mut left = eq.spending[i][j];
                    inst.segments(i, j)
                        .iter()
                        .map(|s| {
                            let take = left.min(s.length).max(0.0);
                            left -= take;
                            take
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

pub fn check_equilibrium_with(
    inst: &MarketInstance,
    eq: &Equilibrium,
    model: ModelKind,
    opts: CheckOptions,
) -> Result<CheckReport, VerifyError> {
    dims(inst, eq)?;
    let (n, m) = (inst.n(), inst.m());
    let rel = opts.relative;
    let dev = |a: f64, b: f64| {
        let d = (a - b).abs();
        if rel {
            d / 1f64.max(a.abs()).max(b.abs())
        } else {
            d
        }
    };
    let excess = |a: f64, bound: f64| {
        let d = (a - bound).max(0.0);
        if rel {
            d / 1f64.max(bound.abs())
        } else {
            d
        }
    };
    let p = &eq.prices;
    let x = &eq.allocation;
    let b = &eq.spending;
    let q = eq.q();
    let spend: Vec<f64> = b.iter().map(|r| r.iter().sum()).collect();
    let mut notes = Vec::new();

    let mut feas: f64 = 0.0;
    let bump = |v: f64, feas: &mut f64| {
        *feas = if v.is_nan() { f64::INFINITY } else { feas.max(v) };
    };
    for v in p.iter().chain(x.iter().flatten()).chain(b.iter().flatten()) {
        bump(if v.is_finite() { -v } else { f64::INFINITY }, &mut feas);
    }
    for i in 0..n {
        for j in 0..m {
            bump(dev(b[i][j], p[j] * x[i][j]), &mut feas);
        }
    }
    for j in 0..m {
        let sold: f64 = (0..n).map(|i| x[i][j]).sum();
        bump(excess(sold, 1.0), &mut feas);
    }
    let implied = utilities_of(inst, p, x, Some(&segment_money(inst, eq)));
    for i in 0..n {
        bump(dev(eq.utilities[i], implied[i]), &mut feas);
    }

    let mut report = CheckReport {
        pass: false,
        model,
        tolerance: opts.tol,
        relative: rel,
        mbb: 0.0,
        clearing: 0.0,
        budget: 0.0,
        cap: 0.0,
        utility: 0.0,
        segment_order: 0.0,
        feasibility: 0.0,
        duality_gap: None,
        notes: Vec::new(),
    };

    let sold_out = |j: usize| dev(q[j], p[j]);
    match model {
        ModelKind::Fisher | ModelKind::SpendingRestricted | ModelKind::QuasiLinear => {
            let ql = model == ModelKind::QuasiLinear;
            for i in 0..n {
                let best = best_rate(inst, i, p);
                let best = if ql { best.max(1.0) } else { best };
                for j in 0..m {
                    if b[i][j] > 0.0 {
                        let shortfall = best - rate(inst.value(i, j), p[j]);
                        let r = if rel { shortfall / best.max(1.0) } else { shortfall };
                        report.mbb = report.mbb.max(if r.is_nan() { f64::INFINITY } else { r });
                    }
                }
                if ql {
                    let leftover = inst.buyers[i].budget - spend[i];
                    bump(excess(spend[i], inst.buyers[i].budget), &mut feas);
                    if leftover > 0.0 {
                        report.mbb = report.mbb.max(leftover.min(best - 1.0));
                    }
                } else {
                    report.budget = report.budget.max(dev(spend[i], inst.buyers[i].budget));
                }
            }
            for j in 0..m {
                if model == ModelKind::SpendingRestricted {
                    report.cap = report.cap.max(dev(q[j], p[j].min(inst.cap(j))));
                } else if p[j] > 0.0 {
                    report.clearing = report.clearing.max(sold_out(j));
                }
            }
        }
        ModelKind::SpendingConstraint => {
            let seg = segment_money(inst, eq);
            for i in 0..n {
                let mut best_open: f64 = 0.0;
                for j in 0..m {
                    let sum: f64 = seg[i][j].iter().sum();
                    bump(dev(sum, b[i][j]), &mut feas);
                    for (l, s) in inst.segments(i, j).iter().enumerate() {
                        bump(excess(seg[i][j][l], s.length), &mut feas);
                        if seg[i][j][l] < s.length - 1e-12 * s.length.max(1.0) {
                            best_open = best_open.max(rate(s.rate, p[j]));
                        }
                    }
                }
                for j in 0..m {
                    let segs = inst.segments(i, j);
                    for (l, s) in segs.iter().enumerate() {
                        if seg[i][j][l] > 0.0 {
                            let shortfall = (best_open - rate(s.rate, p[j])).max(0.0);
                            let r = if rel { shortfall / best_open.max(1.0) } else { shortfall };
                            report.mbb = report.mbb.max(if r.is_nan() { f64::INFINITY } else { r });
                        }
                        if l + 1 < segs.len() && seg[i][j][l] < s.length - 1e-12 * s.length.max(1.0) {
                            let later = seg[i][j][l + 1..].iter().cloned().fold(0.0, f64::max);
                            report.segment_order = report.segment_order.max(later);
                        }
                    }
                }
                report.budget = report.budget.max(dev(spend[i], inst.buyers[i].budget));
            }
            for j in 0..m {
                report.cap = report.cap.max(dev(q[j], p[j].min(inst.cap(j))));
            }
        }
        ModelKind::UtilityRestricted => {
            for i in 0..n {
                let buyer = &inst.buyers[i];
                let d = inst.utility_cap(i);
                let u = eq.utilities[i];
                bump(excess(spend[i], buyer.budget), &mut feas);
                bump(excess(u, d), &mut feas);
                let slack_budget = dev(spend[i], buyer.budget);
                let slack_cap = if d.is_finite() { dev(u, d) } else { f64::INFINITY };
                report.utility = report.utility.max(slack_budget.min(slack_cap));
                match &buyer.utility {
                    UtilityKind::Leontief { phi } => {
                        for j in 0..m {
                            if phi[j] > 0.0 {
                                bump(dev(x[i][j], u * phi[j]), &mut feas);
                            } else if p[j] > 0.0 {
                                report.mbb = report.mbb.max(b[i][j]);
                            }
                        }
                    }
                    UtilityKind::Ces { rho } => {
                        if spend[i] > 0.0 {
                            report.mbb = report.mbb.max(ces_spread(&buyer.values, *rho, u, &x[i], p));
                        }
                    }
                    _ => {
                        let best = best_rate(inst, i, p);
                        for j in 0..m {
                            if b[i][j] > 0.0 {
                                let shortfall = best - rate(inst.value(i, j), p[j]);
                                let r = if rel { shortfall / best.max(1.0) } else { shortfall };
                                report.mbb = report.mbb.max(if r.is_nan() { f64::INFINITY } else { r });
                            }
                        }
                    }
                }
            }
            for j in 0..m {
                if p[j] > 0.0 {
                    report.clearing = report.clearing.max(sold_out(j));
                }
            }
        }
    }
    report.feasibility = feas;

    let cert = certificate_for(inst, model, eq);
    let gap = cert.dual_objective + normalization_constant(&cert.program, inst) - cert.primal_objective;
    if gap.is_finite() {
        report.duality_gap = Some(if rel { gap / cert.primal_objective.abs().max(1.0) } else { gap });
    } else {
        notes.push("dual objective undefined at these prices".to_string());
    }
    report.notes = notes;
    report.pass = report.max_residual() <= opts.tol;
    Ok(report)
}

/// `v / p` with `v / 0 = inf` for valued goods and `0` for unvalued ones.
fn rate(v: f64, p: f64) -> f64 {
    if v <= 0.0 {
        0.0
    } else if p <= 0.0 {
        f64::INFINITY
    } else {
        v / p
    }
}

fn best_rate(inst: &MarketInstance, i: usize, p: &[f64]) -> f64 {
    (0..inst.m())
        .map(|j| rate(inst.value(i, j), p[j]))
        .fold(0.0, f64::max)
}

/// `1 - min/max` of marginal utility per dollar, the minimum over purchased
/// goods and the maximum over all priced goods.
fn ces_spread(weights: &[f64], rho: f64, u: f64, x: &[f64], p: &[f64]) -> f64 {
    if !(u > 0.0) {
        return 1.0;
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for j in 0..x.len() {
        if weights[j] <= 0.0 {
            continue;
        }
        if p[j] <= 0.0 {
            return 1.0;
        }
        let log_r = if x[j] > 0.0 {
            (1.0 - rho) * u.ln() + weights[j].ln() + (rho - 1.0) * x[j].ln() - p[j].ln()
        } else {
            f64::INFINITY
        };
        hi = hi.max(log_r);
        if x[j] > 0.0 {
            lo = lo.min(log_r);
        }
    }
    if hi.is_infinite() || lo.is_infinite() {
        return 1.0;
    }
    1.0 - (lo - hi).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Buyer, Good};
    use crate::solver::{attach_certificate, Diagnostics};

    fn inst(buyers: Vec<Buyer>, caps: Vec<Option<f64>>) -> MarketInstance {
        MarketInstance {
            buyers,
            goods: caps.into_iter().map(|c| Good { spending_cap: c }).collect(),
        }
    }

    fn eq_from(p: Vec<f64>, x: Vec<Vec<f64>>, u: Vec<f64>) -> Equilibrium {
        let b = x
            .iter()
            .map(|r| r.iter().zip(&p).map(|(x, p)| x * p).collect())
            .collect();
        Equilibrium {
            prices: p,
            allocation: x,
            spending: b,
            utilities: u,
            segment_spending: None,
            certificate: None,
            diagnostics: Diagnostics::default(),
        }
    }

    #[test]
    fn hand_fisher_equilibrium_passes_with_zero_residuals() {
        let m = inst(vec![Buyer::linear(1.0, vec![1.0, 3.0])], vec![None, None]);
        let eq = eq_from(vec![0.25, 0.75], vec![vec![1.0, 1.0]], vec![4.0]);
        let r = check_equilibrium(&m, &eq, ModelKind::Fisher, 1e-12).unwrap();
        assert!(r.pass, "{r:?}");
        assert_eq!(r.mbb, 0.0);
        assert_eq!(r.budget, 0.0);
        assert_eq!(r.clearing, 0.0);
        assert!(r.duality_gap.unwrap().abs() < 1e-15);
    }

    #[test]
    fn perturbed_prices_fail_on_bang_per_buck() {
        let m = inst(vec![Buyer::linear(1.0, vec![1.0, 3.0])], vec![None, None]);
        let eq = eq_from(vec![0.3, 0.7], vec![vec![1.0, 1.0]], vec![4.0]);
        let r = check_equilibrium(&m, &eq, ModelKind::Fisher, 1e-6).unwrap();
        assert!(!r.pass);
        assert!(r.mbb > 0.0);
    }

    #[test]
    fn ur_buyer_at_cap_with_slack_budget_passes() {
        let mut b = Buyer::linear(2.0, vec![1.0]);
        b.utility_cap = Some(1.0);
        let m = inst(vec![b], vec![None]);
        let eq = eq_from(vec![1.5], vec![vec![1.0]], vec![1.0]);
        let r = check_equilibrium(&m, &eq, ModelKind::UtilityRestricted, 1e-12).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn sr_price_above_cap_passes() {
        let m = inst(vec![Buyer::linear(1.0, vec![1.0])], vec![Some(1.0)]);
        let eq = eq_from(vec![2.0], vec![vec![0.5]], vec![0.5]);
        let r = check_equilibrium(&m, &eq, ModelKind::SpendingRestricted, 1e-12).unwrap();
        assert!(r.pass, "{r:?}");
        assert_eq!(r.cap, 0.0);
    }

    #[test]
    fn existence_follows_cap_total() {
        let b = |budget| Buyer::linear(budget, vec![1.0, 1.0]);
        assert!(existence_condition(&inst(vec![b(1.0), b(1.0)], vec![Some(1.0), Some(1.0)])));
        assert!(!existence_condition(&inst(vec![Buyer::linear(2.0, vec![1.0])], vec![Some(1.0)])));
        let mut capped = Buyer::linear(5.0, vec![1.0]);
        capped.utility_cap = Some(0.1);
        assert!(existence_condition(&inst(vec![capped], vec![None])));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let m = inst(vec![Buyer::linear(1.0, vec![1.0, 3.0])], vec![None, None]);
        let eq = eq_from(vec![0.25], vec![vec![1.0]], vec![4.0]);
        assert!(matches!(
            check_equilibrium(&m, &eq, ModelKind::Fisher, 1e-6),
            Err(VerifyError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn gap_needs_a_certificate_and_is_positive_off_optimum() {
        let m = inst(vec![Buyer::linear(1.0, vec![1.0, 3.0])], vec![None, None]);
        let mut eq = eq_from(vec![0.5, 0.5], vec![vec![1.0, 1.0]], vec![4.0]);
        assert_eq!(duality_gap(&m, &eq), Err(VerifyError::MissingCertificate));
        attach_certificate(&m, ModelKind::Fisher, &mut eq);
        let gap = duality_gap(&m, &eq).unwrap();
        assert!((gap - (6f64.ln() - 4f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn hand_optimum_has_zero_gap() {
        let m = inst(vec![Buyer::linear(1.0, vec![1.0, 3.0])], vec![None, None]);
        let mut eq = eq_from(vec![0.25, 0.75], vec![vec![1.0, 1.0]], vec![4.0]);
        attach_certificate(&m, ModelKind::Fisher, &mut eq);
        assert!(duality_gap(&m, &eq).unwrap().abs() < 1e-15);
    }
}
