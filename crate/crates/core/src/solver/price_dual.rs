//! UR programs solved in price space.
//!
//! The dual `g(p) = sum_j p_j + sum_i max_{u <= d_i} (B_i log u - u e_i(p))`
//! is convex with gradient `1 - demand_j`, so its minimizers over `p >= 0` are
//! equilibrium prices. Linear buyers use a softmin for `e_i` with decreasing
//! temperature. Every few rounds a polish solves the equilibrium equations
//! on the detected support and the result is kept if it verifies.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conjugate::ces_expenditure;
use crate::model::{MarketInstance, ModelKind, UtilityKind};
use crate::verify;

use super::{linalg, utilities_of, Diagnostics, Equilibrium, SolveError, SolveOptions};

/// Unit cost `e_i(p)` and its price gradient. `tau` smooths the linear
/// minimum: `-tau log(mean_j exp(-(p_j / v_ij) / tau))`, which lies within
/// `tau log k` above the true minimum.
fn unit_cost(inst: &MarketInstance, i: usize, p: &[f64], tau: Option<f64>) -> (f64, Vec<f64>) {
    let buyer = &inst.buyers[i];
    let m = p.len();
    match &buyer.utility {
        UtilityKind::Leontief { phi } => (phi.iter().zip(p).map(|(f, p)| f * p).sum(), phi.clone()),
        UtilityKind::Ces { rho } => ces_expenditure(&buyer.values, *rho, p),
        _ => {
            let valued: Vec<usize> = (0..m).filter(|&j| buyer.values[j] > 0.0).collect();
            let mut grad = vec![0.0; m];
            match tau {
                Some(tau) => {
                    let t: Vec<f64> = valued.iter().map(|&j| -(p[j] / buyer.values[j]) / tau).collect();
                    let mx = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let w: Vec<f64> = t.iter().map(|x| (x - mx).exp()).collect();
                    let s: f64 = w.iter().sum();
                    let e = -tau * (mx + (s / valued.len() as f64).ln());
                    for (k, &j) in valued.iter().enumerate() {
                        grad[j] = w[k] / s / buyer.values[j];
                    }
                    (e.max(0.0), grad)
                }
                None => {
                    let (mut best, mut arg) = (f64::INFINITY, valued[0]);
                    for &j in &valued {
                        let r = p[j] / buyer.values[j];
                        if r < best {
                            best = r;
                            arg = j;
                        }
                    }
                    grad[arg] = 1.0 / buyer.values[arg];
                    (best, grad)
                }
            }
        }
    }
}

/// Utility a buyer picks at unit cost `e`; infinite for an uncapped buyer
/// facing free utility.
fn chosen_utility(budget: f64, cap: f64, e: f64) -> f64 {
    if e <= 0.0 {
        cap
    } else {
        cap.min(budget / e)
    }
}

struct DualEval {
    value: f64,
    grad: Vec<f64>,
    /// Utility level of each buyer.
    u: Vec<f64>,
    e: Vec<f64>,
    /// Unit-cost gradients, one row per buyer.
    de: Vec<Vec<f64>>,
}

fn dual(inst: &MarketInstance, p: &[f64], tau: Option<f64>) -> DualEval {
    let m = p.len();
    let mut value: f64 = p.iter().sum();
    let mut grad = vec![1.0; m];
    let mut us = Vec::with_capacity(inst.n());
    let mut es = Vec::with_capacity(inst.n());
    let mut des = Vec::with_capacity(inst.n());
    for i in 0..inst.n() {
        let (e, de) = unit_cost(inst, i, p, tau);
        let budget = inst.buyers[i].budget;
        let u = chosen_utility(budget, inst.utility_cap(i), e);
        if u.is_infinite() {
            value = f64::INFINITY;
        } else {
            value += budget * u.ln() - u * e;
            for j in 0..m {
                grad[j] -= u * de[j];
            }
        }
        us.push(u);
        es.push(e);
        des.push(de);
    }
    DualEval {
        value,
        grad,
        u: us,
        e: es,
        de: des,
    }
}

fn project(p: &mut [f64], lb: f64) {
    for x in p.iter_mut() {
        if !(*x >= lb) {
            *x = lb;
        }
    }
}

fn pg_norm(p: &[f64], g: &[f64], lb: f64) -> f64 {
    p.iter()
        .zip(g)
        .map(|(x, gx)| ((x - gx).max(lb) - x).abs())
        .fold(0.0, f64::max)
}

/// Spectral projected gradient with a nonmonotone line search. Returns the
/// number of iterations used.
fn spg(
    inst: &MarketInstance,
    p: &mut Vec<f64>,
    tau: Option<f64>,
    lb: f64,
    eps: f64,
    max_iter: usize,
) -> usize {
    const MEMORY: usize = 10;
    project(p, lb);
    let mut cur = dual(inst, p, tau);
    let mut hist = vec![cur.value];
    let pg0 = pg_norm(p, &cur.grad, lb);
    let mut lambda = if pg0 > 0.0 { (1.0 / pg0).clamp(1e-10, 1e10) } else { 1.0 };
    let mut it = 0;
    while it < max_iter {
        if pg_norm(p, &cur.grad, lb) <= eps {
            break;
        }
        it += 1;
        let mut d: Vec<f64> = p
            .iter()
            .zip(&cur.grad)
            .map(|(x, g)| (x - lambda * g).max(lb) - x)
            .collect();
        let mut gd: f64 = d.iter().zip(&cur.grad).map(|(a, b)| a * b).sum();
        if !(gd < 0.0) {
            // Spectral step lost descent; fall back to a unit projected step.
            d = p
                .iter()
                .zip(&cur.grad)
                .map(|(x, g)| (x - g).max(lb) - x)
                .collect();
            gd = d.iter().zip(&cur.grad).map(|(a, b)| a * b).sum();
            if !(gd < 0.0) {
                break;
            }
        }
        let fmax = hist.iter().rev().take(MEMORY).cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 1.0;
        let mut next = None;
        for _ in 0..60 {
            let trial: Vec<f64> = p.iter().zip(&d).map(|(x, dx)| (x + s * dx).max(lb)).collect();
            let ev = dual(inst, &trial, tau);
            if ev.value.is_finite() && ev.value <= fmax + 1e-4 * s * gd {
                next = Some((trial, ev));
                break;
            }
            s *= 0.5;
        }
        let Some((trial, ev)) = next else { break };
        let sk: Vec<f64> = trial.iter().zip(p.iter()).map(|(a, b)| a - b).collect();
        let yk: Vec<f64> = ev.grad.iter().zip(&cur.grad).map(|(a, b)| a - b).collect();
        let sy: f64 = sk.iter().zip(&yk).map(|(a, b)| a * b).sum();
        let ss: f64 = sk.iter().map(|a| a * a).sum();
        lambda = if sy > 0.0 { (ss / sy).clamp(1e-10, 1e10) } else { 1e10 };
        *p = trial;
        hist.push(ev.value);
        cur = ev;
    }
    it
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum UrKind {
    Linear,
    Smooth,
}

pub(crate) fn solve_ur(inst: &MarketInstance, opts: &SolveOptions) -> Result<Equilibrium, SolveError> {
    let kind = match inst.buyers[0].utility {
        UtilityKind::Linear => UrKind::Linear,
        _ => UrKind::Smooth,
    };
    let is_ces = matches!(inst.buyers[0].utility, UtilityKind::Ces { .. });
    let lb = if is_ces { 1e-14 } else { 0.0 };
    let m = inst.m();
    let scale = (inst.total_budget() / m as f64).max(1e-300);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut p: Vec<f64> = (0..m)
        .map(|_| scale * if opts.seed == 0 { 1.0 } else { rng.gen_range(0.5..1.5) })
        .collect();
    let mut iterations = 0;
    let mut trace = Vec::new();
    let mut best = f64::INFINITY;
    let mut round = 0usize;
    loop {
        let left = opts.max_iterations.saturating_sub(iterations);
        if left == 0 {
            break;
        }
        let tau = match kind {
            UrKind::Linear => Some(scale * 0.1 * 0.1f64.powi(round.min(8) as i32)),
            UrKind::Smooth => None,
        };
        let chunk = (200usize << round.min(6)).min(left);
        let eps = 1e-13 * inst.total_budget().max(1.0);
        iterations += spg(inst, &mut p, tau, lb, eps, chunk);
        let attempt = match kind {
            UrKind::Linear if tau.unwrap() <= scale * 1e-4 => polish_linear(inst, &p, tau.unwrap()),
            UrKind::Linear => Vec::new(),
            UrKind::Smooth => polish_smooth(inst, &p),
        };
        for eq in attempt {
            let Ok(report) = verify::check_equilibrium(inst, &eq, ModelKind::UtilityRestricted, opts.tolerance)
            else {
                continue;
            };
            let res = report.max_residual();
            trace.push(res);
            best = best.min(res);
            if report.pass {
                let mut eq = eq;
                eq.diagnostics = Diagnostics {
                    iterations,
                    residual: res,
                    residual_trace: trace,
                };
                return Ok(eq);
            }
        }
        round += 1;
        if round > 40 {
            break;
        }
    }
    Err(SolveError::DidNotConverge {
        iterations,
        residual: best,
        reason: "price dual polish did not verify".into(),
        trace,
    })
}

/// Gauss–Newton on the equilibrium equations of Leontief and CES buyers:
/// goods with positive price are sold exactly, and uncapped buyers spend
/// their budgets. Capped buyers sit at `u = d`.
fn polish_smooth(inst: &MarketInstance, p0: &[f64]) -> Vec<Equilibrium> {
    let n = inst.n();
    let m = inst.m();
    let scale = inst.total_budget().max(1.0);
    let mut out = Vec::new();
    for thr in [1e-6, 1e-8, 1e-10] {
        let pscale = p0.iter().cloned().fold(0.0, f64::max).max(1e-300);
        let positive: Vec<usize> = (0..m).filter(|&j| p0[j] > thr * pscale).collect();
        let ev = dual(inst, p0, None);
        let uncapped: Vec<usize> = (0..n)
            .filter(|&i| inst.utility_cap(i) * ev.e[i] > inst.buyers[i].budget)
            .collect();
        let k = positive.len();
        let unpack = |z: &[f64]| -> (Vec<f64>, Vec<f64>) {
            let mut p = vec![0.0; m];
            for (a, &j) in positive.iter().enumerate() {
                p[j] = z[a];
            }
            let mut u: Vec<f64> = (0..n).map(|i| inst.utility_cap(i)).collect();
            for (a, &i) in uncapped.iter().enumerate() {
                u[i] = z[k + a];
            }
            (p, u)
        };
        let residual = |z: &[f64]| -> DVector<f64> {
            let (p, u) = unpack(z);
            let mut r = DVector::zeros(k + uncapped.len());
            let costs: Vec<(f64, Vec<f64>)> = (0..n).map(|i| unit_cost(inst, i, &p, None)).collect();
            for (a, &j) in positive.iter().enumerate() {
                r[a] = (0..n).map(|i| u[i] * costs[i].1[j]).sum::<f64>() - 1.0;
            }
            for (a, &i) in uncapped.iter().enumerate() {
                r[k + a] = u[i] * costs[i].0 - inst.buyers[i].budget;
            }
            r
        };
        let mut z: Vec<f64> = positive.iter().map(|&j| p0[j]).collect();
        z.extend(uncapped.iter().map(|&i| ev.u[i]));
        if z.iter().any(|v| !v.is_finite()) {
            continue;
        }
        let mut r = residual(&z);
        for _ in 0..60 {
            let norm = r.amax();
            if !norm.is_finite() || norm <= 1e-15 * scale {
                break;
            }
            let mut jac = DMatrix::zeros(r.len(), z.len());
            for c in 0..z.len() {
                let h = 1e-7 * z[c].abs().max(1e-6);
                let mut up = z.clone();
                let mut down = z.clone();
                up[c] += h;
                down[c] = (down[c] - h).max(z[c] * 0.5);
                let width = up[c] - down[c];
                let diff = (residual(&up) - residual(&down)) / width;
                jac.set_column(c, &diff);
            }
            let Some(step) = linalg::lstsq_min_norm(&jac, &(-&r)) else { break };
            let mut s = 1.0;
            let mut moved = false;
            for _ in 0..30 {
                let trial: Vec<f64> = z.iter().zip(step.iter()).map(|(a, b)| a + s * b).collect();
                if trial.iter().all(|v| *v > 0.0) {
                    let rt = residual(&trial);
                    if rt.amax() < norm {
                        z = trial;
                        r = rt;
                        moved = true;
                        break;
                    }
                }
                s *= 0.5;
            }
            if !moved {
                break;
            }
        }
        let (p, u) = unpack(&z);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let (_, de) = unit_cost(inst, i, &p, None);
                de.iter().map(|d| u[i] * d).collect()
            })
            .collect();
        out.push(assemble(inst, p, x));
    }
    out
}

/// Equilibrium from prices and allocation; spending is `p x`.
fn assemble(inst: &MarketInstance, p: Vec<f64>, x: Vec<Vec<f64>>) -> Equilibrium {
    let b: Vec<Vec<f64>> = x
        .iter()
        .map(|row| row.iter().zip(&p).map(|(x, p)| x * p).collect())
        .collect();
    let utilities = utilities_of(inst, &p, &x, None);
    Equilibrium {
        prices: p,
        allocation: x,
        spending: b,
        utilities,
        segment_spending: None,
        certificate: None,
        diagnostics: Diagnostics::default(),
    }
}

/// Linear-utility polish. Unknowns are prices of goods with positive price,
/// each buyer's price per util `alpha_i`, and money on bang-per-buck edges;
/// the equations are `p_j = v_ij alpha_i` on those edges, `sum_i b_ij = p_j`,
/// and `sum_j b_ij = B_i` or `= d_i alpha_i` for capped buyers. The step is
/// the least change from the smoothed point that satisfies them.
fn polish_linear(inst: &MarketInstance, p0: &[f64], tau: f64) -> Vec<Equilibrium> {
    let n = inst.n();
    let m = inst.m();
    let smooth = dual(inst, p0, Some(tau));
    let pscale = p0.iter().cloned().fold(0.0, f64::max).max(1e-300);
    let mut out = Vec::new();
    for thr in [1e-6, 1e-8, 1e-10] {
        let free: Vec<bool> = (0..m).map(|j| p0[j] <= thr * pscale).collect();
        let alpha0: Vec<f64> = (0..n)
            .map(|i| {
                (0..m)
                    .filter(|&j| inst.value(i, j) > 0.0)
                    .map(|j| if free[j] { 0.0 } else { p0[j] / inst.value(i, j) })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let capped: Vec<bool> = (0..n)
            .map(|i| inst.utility_cap(i) * alpha0[i] <= inst.buyers[i].budget * (1.0 + thr))
            .collect();
        // A buyer who can reach a free good only takes free goods.
        let paying: Vec<bool> = (0..n).map(|i| alpha0[i] > 0.0).collect();
        let mut edges = Vec::new();
        for i in (0..n).filter(|&i| paying[i]) {
            for j in (0..m).filter(|&j| !free[j] && inst.value(i, j) > 0.0) {
                if p0[j] / inst.value(i, j) <= alpha0[i] * (1.0 + thr) {
                    edges.push((i, j));
                }
            }
        }
        let priced: Vec<usize> = (0..m).filter(|&j| !free[j]).collect();
        let mut pcol = vec![usize::MAX; m];
        for (a, &j) in priced.iter().enumerate() {
            pcol[j] = a;
        }
        let np = priced.len();
        let cols = np + n + edges.len();
        let rows = edges.len() + np + n;
        let mut a = DMatrix::zeros(rows, cols);
        let mut rhs = DVector::zeros(rows);
        let mut z0 = DVector::zeros(cols);
        for (c, &j) in priced.iter().enumerate() {
            z0[c] = p0[j];
        }
        for i in 0..n {
            z0[np + i] = if alpha0[i].is_finite() { alpha0[i] } else { 0.0 };
        }
        for (e, &(i, j)) in edges.iter().enumerate() {
            a[(e, pcol[j])] = 1.0;
            a[(e, np + i)] = -inst.value(i, j);
            z0[np + n + e] = smooth.u[i] * smooth.de[i][j] * p0[j];
        }
        for (r, &j) in priced.iter().enumerate() {
            let row = edges.len() + r;
            a[(row, pcol[j])] = -1.0;
            for (e, &(_, ej)) in edges.iter().enumerate() {
                if ej == j {
                    a[(row, np + n + e)] = 1.0;
                }
            }
        }
        for i in 0..n {
            let row = edges.len() + np + i;
            if !paying[i] {
                a[(row, np + i)] = 1.0;
                continue;
            }
            for (e, &(ei, _)) in edges.iter().enumerate() {
                if ei == i {
                    a[(row, np + n + e)] = 1.0;
                }
            }
            if capped[i] {
                a[(row, np + i)] = -inst.utility_cap(i);
            } else {
                rhs[row] = inst.buyers[i].budget;
            }
        }
        let resid = &rhs - &a * &z0;
        let Some(delta) = linalg::lstsq_min_norm(&a, &resid) else { continue };
        let z = z0 + delta;
        let mut p = vec![0.0; m];
        for (c, &j) in priced.iter().enumerate() {
            p[j] = z[c].max(0.0);
        }
        let mut x = vec![vec![0.0; m]; n];
        for (e, &(i, j)) in edges.iter().enumerate() {
            let b = z[np + n + e].max(0.0);
            if p[j] > 0.0 {
                x[i][j] = b / p[j];
            }
        }
        // Buyers facing a free good fill their cap from free goods in
        // proportion to the smoothed demand.
        for i in (0..n).filter(|&i| !paying[i]) {
            let raw: Vec<f64> = (0..m)
                .map(|j| {
                    if free[j] && inst.value(i, j) > 0.0 {
                        smooth.u[i] * smooth.de[i][j]
                    } else {
                        0.0
                    }
                })
                .collect();
            let got: f64 = (0..m).map(|j| inst.value(i, j) * raw[j]).sum();
            if got > 0.0 {
                let s = inst.utility_cap(i) / got;
                for j in 0..m {
                    x[i][j] = raw[j] * s;
                }
            }
        }
        out.push(assemble(inst, p, x));
    }
    out
}
