//! Support polish for spending programs.
//!
//! Given approximate edge money, guess which edges carry money strictly
//! inside their segment, which are full and which are empty, then solve the
//! KKT equalities on that support exactly (up to rounding). The result is
//! kept only if the checker accepts it.

use nalgebra::{DMatrix, DVector};

use crate::model::{MarketInstance, ModelKind};
use crate::verify;

use super::recover::{least_prices, EdgeClass, RateEdge};
use super::spending::Net;
use super::{from_spending, linalg, Equilibrium};

/// Best candidate seen when no threshold verified.
pub(crate) type Candidate = Option<(f64, Equilibrium)>;

pub(crate) fn polish_spending(
    inst: &MarketInstance,
    model: ModelKind,
    net: &Net,
    money: &[f64],
    tol: f64,
) -> Result<Equilibrium, Candidate> {
    let scale = inst.total_budget().max(1.0);
    let mut best: Candidate = None;
    // The second pass reads caps more loosely: with large price ratios the
    // smoothed money can stall visibly short of a binding cap.
    let attempts = [1e-6, 1e-8, 1e-10]
        .map(|thr| (thr * scale, thr * scale))
        .into_iter()
        .chain([1e-6, 1e-8, 1e-10].map(|thr| (thr * scale, 1e-4 * scale)));
    for (thr, sat) in attempts {
        let Some(eq) = polish_at(inst, model, net, money, thr, sat) else {
            continue;
        };
        let Ok(report) = verify::check_equilibrium(inst, &eq, model, tol) else {
            continue;
        };
        let res = report.max_residual();
        let mut eq = eq;
        eq.diagnostics.residual = res;
        if report.pass {
            return Ok(eq);
        }
        if best.as_ref().is_none_or(|(r, _)| res < *r) {
            best = Some((res, eq));
        }
    }
    Err(best)
}

fn classify(money: f64, len: f64, thr: f64) -> EdgeClass {
    if money <= thr {
        EdgeClass::Zero
    } else if len.is_finite() && money >= len - thr {
        EdgeClass::Full
    } else {
        EdgeClass::Open
    }
}

fn polish_at(
    inst: &MarketInstance,
    model: ModelKind,
    net: &Net,
    money: &[f64],
    thr: f64,
    sat: f64,
) -> Option<Equilibrium> {
    let n = net.n;
    let m = net.m;
    let ma = net.active.len();
    let classes: Vec<EdgeClass> = net
        .edges
        .iter()
        .zip(money)
        .map(|(e, &b)| classify(b, e.len, thr))
        .collect();
    let mut q_approx = vec![0.0; m];
    for (e, &b) in net.edges.iter().zip(money) {
        if let Some(j) = e.good {
            q_approx[j] += b;
        }
    }
    let saturated: Vec<bool> = (0..m)
        .map(|j| inst.cap(j).is_finite() && q_approx[j] >= inst.cap(j) - sat)
        .collect();

    // Unknowns: prices of active goods, alpha per buyer, money on open edges.
    let open: Vec<usize> = (0..net.edges.len())
        .filter(|&k| classes[k] == EdgeClass::Open)
        .collect();
    let cols = ma + n + open.len();
    let rows = open.len() + n + ma;
    let mut a = DMatrix::zeros(rows, cols);
    let mut rhs = DVector::zeros(rows);
    let mut full_by_buyer = vec![0.0; n];
    let mut full_by_good = vec![0.0; m];
    for (k, e) in net.edges.iter().enumerate() {
        if classes[k] == EdgeClass::Full {
            full_by_buyer[e.buyer] += e.len;
            if let Some(j) = e.good {
                full_by_good[j] += e.len;
            }
        }
    }
    for (r, &k) in open.iter().enumerate() {
        let e = &net.edges[k];
        a[(r, ma + e.buyer)] = e.log_rate.exp();
        match e.good {
            Some(j) => a[(r, net.pos[j].unwrap())] = -1.0,
            None => rhs[r] = 1.0,
        }
    }
    let base = open.len();
    for i in 0..n {
        rhs[base + i] = net.budgets[i] - full_by_buyer[i];
    }
    for (c, &k) in open.iter().enumerate() {
        let e = &net.edges[k];
        a[(base + e.buyer, ma + n + c)] = 1.0;
        if let Some(j) = e.good {
            a[(base + n + net.pos[j].unwrap(), ma + n + c)] = 1.0;
        }
    }
    for (pos, &j) in net.active.iter().enumerate() {
        let r = base + n + pos;
        if saturated[j] {
            rhs[r] = inst.cap(j) - full_by_good[j];
        } else {
            a[(r, pos)] = -1.0;
            rhs[r] = -full_by_good[j];
        }
    }
    // Smallest correction of the smoothed point that satisfies the support
    // equations; a plain minimum-norm solution can leave the feasible cone
    // when the support has cycles.
    let mut z0 = DVector::zeros(cols);
    for (pos, &j) in net.active.iter().enumerate() {
        z0[pos] = q_approx[j];
    }
    for (c, &k) in open.iter().enumerate() {
        let e = &net.edges[k];
        z0[ma + n + c] = money[k];
        let price = e.good.map_or(1.0, |j| q_approx[j]);
        let alpha = price / e.log_rate.exp();
        if z0[ma + e.buyer] == 0.0 || alpha < z0[ma + e.buyer] {
            z0[ma + e.buyer] = alpha;
        }
    }
    let mut sol = &z0 + linalg::lstsq_scaled(&a, &(&rhs - &a * &z0))?;
    // Refinement recovers digits lost to wide coefficient ranges.
    for _ in 0..2 {
        sol += linalg::lstsq_scaled(&a, &(&rhs - &a * &sol))?;
    }

    let mut edge_b = vec![0.0; net.edges.len()];
    for (k, e) in net.edges.iter().enumerate() {
        if classes[k] == EdgeClass::Full {
            edge_b[k] = e.len;
        }
    }
    for (c, &k) in open.iter().enumerate() {
        let v = sol[ma + n + c];
        if v < -thr {
            return None;
        }
        edge_b[k] = v.max(0.0).min(net.edges[k].len);
    }

    let mut b = vec![vec![0.0; m]; n];
    let sc = model == ModelKind::SpendingConstraint;
    let mut segs: Option<Vec<Vec<Vec<f64>>>> = sc.then(|| {
        (0..n)
            .map(|i| (0..m).map(|j| vec![0.0; inst.segments(i, j).len()]).collect())
            .collect()
    });
    for (k, e) in net.edges.iter().enumerate() {
        if let Some(j) = e.good {
            b[e.buyer][j] += edge_b[k];
            if let Some(s) = segs.as_mut() {
                s[e.buyer][j][e.seg] = edge_b[k];
            }
        }
    }
    let mut q = vec![0.0; m];
    for row in &b {
        for (qj, bij) in q.iter_mut().zip(row) {
            *qj += bij;
        }
    }

    let prices = match model {
        ModelKind::SpendingRestricted | ModelKind::SpendingConstraint => {
            let rate_edges: Vec<RateEdge> = net
                .edges
                .iter()
                .zip(&classes)
                .filter_map(|(e, &class)| {
                    e.good.map(|j| RateEdge {
                        buyer: e.buyer,
                        good: j,
                        log_rate: e.log_rate,
                        class,
                    })
                })
                .collect();
            least_prices(inst, &q, &saturated, &rate_edges).ok()?
        }
        _ => q.clone(),
    };
    Some(from_spending(inst, prices, b, segs))
}
