//! Proportional-response dynamics for linear Fisher markets.

use crate::model::{MarketInstance, ModelKind, SpendingProfile, UtilityKind};

use super::spending::Net;
use super::{polish, Equilibrium, SolveError, SolveOptions};

/// One proportional-response update: each buyer re-splits her budget in
/// proportion to the utility each good currently delivers.
pub fn proportional_response_step(
    inst: &MarketInstance,
    b: &SpendingProfile,
) -> Result<SpendingProfile, SolveError> {
    if inst.has_spending_caps()
        || inst.has_utility_caps()
        || inst
            .buyers
            .iter()
            .any(|buyer| !matches!(buyer.utility, UtilityKind::Linear))
    {
        return Err(SolveError::ModelMismatch(
            "proportional response needs linear utilities without caps".into(),
        ));
    }
    let q = b.q();
    let mut next = Vec::with_capacity(inst.n());
    for i in 0..inst.n() {
        let gains: Vec<f64> = (0..inst.m())
            .map(|j| {
                if q[j] > 0.0 {
                    inst.value(i, j) * b.b[i][j] / q[j]
                } else {
                    0.0
                }
            })
            .collect();
        let u: f64 = gains.iter().sum();
        if !(u > 0.0) {
            return Err(SolveError::ZeroUtility { buyer: i });
        }
        let budget = inst.buyers[i].budget;
        next.push(gains.iter().map(|g| budget * g / u).collect());
    }
    Ok(SpendingProfile::new(next))
}

/// Uniform split of each budget over the goods the buyer values.
fn uniform_start(inst: &MarketInstance) -> SpendingProfile {
    SpendingProfile::new(
        (0..inst.n())
            .map(|i| {
                let k = (0..inst.m()).filter(|&j| inst.value(i, j) > 0.0).count() as f64;
                (0..inst.m())
                    .map(|j| {
                        if inst.value(i, j) > 0.0 {
                            inst.buyers[i].budget / k
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect(),
    )
}

pub(crate) fn solve_pr(inst: &MarketInstance, opts: &SolveOptions) -> Result<Equilibrium, SolveError> {
    let net = Net::build(inst, ModelKind::Fisher);
    let mut b = uniform_start(inst);
    let mut trace = Vec::new();
    let mut best = f64::INFINITY;
    for it in 1..=opts.max_iterations {
        b = proportional_response_step(inst, &b)?;
        if it % 25 != 0 && it != opts.max_iterations {
            continue;
        }
        let money: Vec<f64> = net
            .edges
            .iter()
            .map(|e| b.b[e.buyer][e.good.expect("fisher edges have goods")])
            .collect();
        match polish::polish_spending(inst, ModelKind::Fisher, &net, &money, opts.tolerance) {
            Ok(mut eq) => {
                trace.push(eq.diagnostics.residual);
                eq.diagnostics.iterations = it;
                eq.diagnostics.residual_trace = trace;
                return Ok(eq);
            }
            Err(Some((res, _))) => {
                best = best.min(res);
                trace.push(res);
            }
            Err(None) => {}
        }
    }
    Err(SolveError::DidNotConverge {
        iterations: opts.max_iterations,
        residual: best,
        reason: "proportional response did not settle on a verifiable support".into(),
        trace,
    })
}
