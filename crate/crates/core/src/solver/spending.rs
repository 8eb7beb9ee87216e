//! Spending programs solved through their entropy-smoothed dual.
//!
//! Adding `-tau * sum b log b` to the spending objective makes the dual
//! smooth in `(log p, eta)`:
//!
//! `D = sum_j phi_j(r_j) + sum_i B_i eta_i + sum_e psi(w_e - r_j - eta_i)`
//!
//! with `phi_j(r) = e^r` below the cap and `c + c (r - log c)` above it, and
//! `psi(a) = sup_{0 <= b <= len} (a b - tau (b log b - b))`. Edge money is
//! `b_e = min(len, exp(a / tau))`. Each stage minimizes `D` by damped Newton
//! and shrinks `tau`; the support polish turns a stage result into an exact
//! equilibrium when the support has settled.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{MarketInstance, ModelKind, UtilityKind};

use super::{polish, Equilibrium, SolveError, SolveOptions};

/// Exponent guard; beyond it `psi` and `phi` continue linearly.
const EXP_CAP: f64 = 600.0;

#[derive(Debug, Clone)]
pub(crate) struct Edge {
    pub buyer: usize,
    /// `None` marks the quasi-linear keep-money option.
    pub good: Option<usize>,
    pub seg: usize,
    pub log_rate: f64,
    pub len: f64,
}

/// Variable layout of a spending program.
#[derive(Debug, Clone)]
pub(crate) struct Net {
    pub n: usize,
    pub m: usize,
    /// Goods carrying at least one edge, in index order.
    pub active: Vec<usize>,
    pub pos: Vec<Option<usize>>,
    pub edges: Vec<Edge>,
    pub budgets: Vec<f64>,
    pub caps: Vec<f64>,
}

impl Net {
    pub fn build(inst: &MarketInstance, model: ModelKind) -> Net {
        let n = inst.n();
        let m = inst.m();
        let mut edges = Vec::new();
        for i in 0..n {
            match &inst.buyers[i].utility {
                UtilityKind::SpendingConstraint { segments } => {
                    for (j, segs) in segments.iter().enumerate() {
                        for (l, s) in segs.iter().enumerate() {
                            edges.push(Edge {
                                buyer: i,
                                good: Some(j),
                                seg: l,
                                log_rate: s.rate.ln(),
                                len: s.length,
                            });
                        }
                    }
                }
                _ => {
                    for j in 0..m {
                        let v = inst.value(i, j);
                        if v > 0.0 {
                            edges.push(Edge {
                                buyer: i,
                                good: Some(j),
                                seg: 0,
                                log_rate: v.ln(),
                                len: f64::INFINITY,
                            });
                        }
                    }
                    if model == ModelKind::QuasiLinear {
                        edges.push(Edge {
                            buyer: i,
                            good: None,
                            seg: 0,
                            log_rate: 0.0,
                            len: f64::INFINITY,
                        });
                    }
                }
            }
        }
        let mut used = vec![false; m];
        for e in &edges {
            if let Some(j) = e.good {
                used[j] = true;
            }
        }
        let active: Vec<usize> = (0..m).filter(|&j| used[j]).collect();
        let mut pos = vec![None; m];
        for (k, &j) in active.iter().enumerate() {
            pos[j] = Some(k);
        }
        Net {
            n,
            m,
            caps: active.iter().map(|&j| inst.cap(j)).collect(),
            active,
            pos,
            edges,
            budgets: inst.budgets(),
        }
    }

    fn dim(&self) -> usize {
        self.active.len() + self.n
    }

    fn arg(&self, e: &Edge, z: &[f64]) -> f64 {
        let ma = self.active.len();
        let r = e.good.map_or(0.0, |j| z[self.pos[j].unwrap()]);
        e.log_rate - r - z[ma + e.buyer]
    }

    /// Objective, gradient, edge money, Hessian weight of each edge and the
    /// diagonal curvature of the price terms.
    fn eval(&self, z: &[f64], tau: f64) -> (f64, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let ma = self.active.len();
        let mut f = 0.0;
        let mut g = vec![0.0; self.dim()];
        let mut curv = vec![0.0; self.dim()];
        for k in 0..ma {
            let r = z[k];
            let c = self.caps[k];
            let lc = c.ln();
            if r <= lc {
                if r > EXP_CAP {
                    let e = EXP_CAP.exp();
                    f += e * (1.0 + r - EXP_CAP);
                    g[k] += e;
                } else {
                    let e = r.exp();
                    f += e;
                    g[k] += e;
                    curv[k] = e;
                }
            } else {
                f += c + c * (r - lc);
                g[k] += c;
            }
        }
        for i in 0..self.n {
            f += self.budgets[i] * z[ma + i];
            g[ma + i] += self.budgets[i];
        }
        let mut b = vec![0.0; self.edges.len()];
        let mut w = vec![0.0; self.edges.len()];
        for (k, e) in self.edges.iter().enumerate() {
            let a = self.arg(e, z);
            let t = a / tau;
            let lc = e.len.ln();
            let (val, money, weight) = if t <= lc {
                if t > EXP_CAP {
                    let ex = EXP_CAP.exp();
                    (tau * ex * (1.0 + t - EXP_CAP), ex, 0.0)
                } else {
                    let ex = t.exp();
                    (tau * ex, ex, ex / tau)
                }
            } else {
                (e.len * a - tau * (e.len * lc - e.len), e.len, 0.0)
            };
            f += val;
            b[k] = money;
            w[k] = weight;
            if let Some(j) = e.good {
                g[self.pos[j].unwrap()] -= money;
            }
            g[ma + e.buyer] -= money;
        }
        (f, g, b, w, curv)
    }

    fn hessian(&self, curv: &[f64], w: &[f64]) -> DMatrix<f64> {
        let ma = self.active.len();
        let d = self.dim();
        let mut h = DMatrix::zeros(d, d);
        for k in 0..d {
            h[(k, k)] = curv[k];
        }
        for (k, e) in self.edges.iter().enumerate() {
            let wk = w[k];
            if wk == 0.0 {
                continue;
            }
            let bi = ma + e.buyer;
            h[(bi, bi)] += wk;
            if let Some(j) = e.good {
                let rj = self.pos[j].unwrap();
                h[(rj, rj)] += wk;
                h[(rj, bi)] += wk;
                h[(bi, rj)] += wk;
            }
        }
        h
    }

    /// Re-centers each `eta_i` so that buyer `i`'s edge money sums to the
    /// budget at the current `r`, or as close as the segment lengths allow.
    fn fit_eta(&self, z: &mut [f64], tau: f64) {
        let ma = self.active.len();
        for i in 0..self.n {
            let edges: Vec<(f64, f64)> = self
                .edges
                .iter()
                .filter(|e| e.buyer == i)
                .map(|e| (e.log_rate - e.good.map_or(0.0, |j| z[self.pos[j].unwrap()]), e.len))
                .collect();
            if edges.is_empty() {
                continue;
            }
            let budget = self.budgets[i];
            let mx = edges.iter().map(|e| e.0 / tau).fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + edges.iter().map(|e| (e.0 / tau - mx).exp()).sum::<f64>().ln();
            // Ignoring lengths overestimates money, so this is an upper end.
            let mut hi = tau * (lse - budget.ln());
            let money = |eta: f64| -> f64 {
                edges.iter().map(|&(a, len)| ((a - eta) / tau).min(EXP_CAP).exp().min(len)).sum()
            };
            if money(hi) >= budget {
                z[ma + i] = hi;
                continue;
            }
            if edges.iter().map(|e| e.1).sum::<f64>() <= budget {
                // Every segment is needed: move to where all of them fill.
                let fill = edges.iter().map(|&(a, len)| a - tau * len.ln()).fold(f64::INFINITY, f64::min);
                z[ma + i] = hi.min(fill - tau);
                continue;
            }
            let mut step = tau;
            let mut lo = hi - step;
            while money(lo) < budget && step < 1e6 {
                hi = lo;
                step *= 2.0;
                lo -= step;
            }
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if money(mid) >= budget {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            z[ma + i] = lo;
        }
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

/// Damped Newton on one smoothing stage. Returns the number of steps taken.
fn newton_stage(net: &Net, z: &mut Vec<f64>, tau: f64, gtol: f64, max_steps: usize) -> usize {
    let mut steps = 0;
    while steps < max_steps {
        let (f, g, _b, w, curv) = net.eval(z, tau);
        if inf_norm(&g) <= gtol {
            break;
        }
        steps += 1;
        let h = net.hessian(&curv, &w);
        let rhs = -DVector::from_vec(g.clone());
        let d = super::linalg::solve_psd(&h, &rhs);
        let gd: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(gd < 0.0) {
            break;
        }
        let mut s = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = z.iter().zip(d.iter()).map(|(a, b)| a + s * b).collect();
            let (ft, gt, ..) = net.eval(&trial, tau);
            let armijo = ft <= f + 1e-4 * s * gd;
            let flat = ft <= f + 1e-12 * f.abs().max(1.0) && inf_norm(&gt) < inf_norm(&g);
            if ft.is_finite() && (armijo || flat) {
                *z = trial;
                accepted = true;
                break;
            }
            s *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    steps
}

/// Edge money at `z`.
pub(crate) fn edge_money(net: &Net, z: &[f64], tau: f64) -> Vec<f64> {
    net.eval(z, tau).2
}

pub(crate) fn solve_spending(
    inst: &MarketInstance,
    model: ModelKind,
    opts: &SolveOptions,
) -> Result<Equilibrium, SolveError> {
    let net = Net::build(inst, model);
    let ma = net.active.len();
    let scale = inst.total_budget().max(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut z = vec![0.0; net.dim()];
    let base = (inst.total_budget() / ma.max(1) as f64).ln();
    for zk in z.iter_mut().take(ma) {
        *zk = base + if opts.seed == 0 { 0.0 } else { rng.gen_range(-1.0..1.0) };
    }
    let mut tau = 1.0;
    net.fit_eta(&mut z, tau);
    let mut iterations = 0;
    let mut trace = Vec::new();
    let mut best: Option<(f64, Equilibrium)> = None;
    let tau_min = 1e-10;
    loop {
        let budget_left = opts.max_iterations.saturating_sub(iterations);
        if budget_left == 0 {
            break;
        }
        iterations += newton_stage(&net, &mut z, tau, 1e-13 * scale, 200.min(budget_left));
        if tau <= 1e-3 {
            let b = edge_money(&net, &z, tau);
            match polish::polish_spending(inst, model, &net, &b, opts.tolerance) {
                Ok(mut eq) => {
                    eq.diagnostics.iterations = iterations;
                    trace.push(eq.diagnostics.residual);
                    eq.diagnostics.residual_trace = trace;
                    return Ok(eq);
                }
                Err(candidate) => {
                    if let Some((res, eq)) = candidate {
                        trace.push(res);
                        if best.as_ref().is_none_or(|(r, _)| res < *r) {
                            best = Some((res, eq));
                        }
                    }
                }
            }
        }
        if tau <= tau_min {
            break;
        }
        tau = (tau * 0.1).max(tau_min);
        net.fit_eta(&mut z, tau);
    }
    let residual = best.as_ref().map_or(f64::INFINITY, |(r, _)| *r);
    Err(SolveError::DidNotConverge {
        iterations,
        residual,
        reason: "support polish did not reach the tolerance".into(),
        trace,
    })
}
