//! Max-flow test that budgets can be spent on valued goods within the caps.

use crate::model::{MarketInstance, ModelKind, UtilityKind};

use super::SolveError;

/// Edmonds–Karp on a dense capacity matrix; returns the flow value.
pub(crate) fn max_flow(cap: &mut [Vec<f64>], s: usize, t: usize) -> f64 {
    let n = cap.len();
    let mut total = 0.0;
    loop {
        let mut parent = vec![usize::MAX; n];
        parent[s] = s;
        let mut queue = std::collections::VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                if parent[v] == usize::MAX && cap[u][v] > 1e-15 {
                    parent[v] = u;
                    queue.push_back(v);
                }
            }
        }
        if parent[t] == usize::MAX {
            return total;
        }
        let mut push = f64::INFINITY;
        let mut v = t;
        while v != s {
            let u = parent[v];
            push = push.min(cap[u][v]);
            v = u;
        }
        let mut v = t;
        while v != s {
            let u = parent[v];
            cap[u][v] -= push;
            cap[v][u] += push;
            v = u;
        }
        total += push;
    }
}

/// Fails when no spending of all budgets on valued goods respects the caps.
pub(crate) fn check_spendable(inst: &MarketInstance, model: ModelKind) -> Result<(), SolveError> {
    if model == ModelKind::QuasiLinear {
        return Ok(());
    }
    let n = inst.n();
    let m = inst.m();
    let total = inst.total_budget();
    let big = 2.0 * total + 1.0;
    let (s, t) = (n + m, n + m + 1);
    let mut cap = vec![vec![0.0; n + m + 2]; n + m + 2];
    for i in 0..n {
        cap[s][i] = inst.buyers[i].budget;
        for j in 0..m {
            cap[i][n + j] = match &inst.buyers[i].utility {
                UtilityKind::SpendingConstraint { segments } => {
                    segments[j].iter().map(|seg| seg.length).sum::<f64>().min(big)
                }
                _ if inst.value(i, j) > 0.0 => big,
                _ => 0.0,
            };
        }
    }
    for j in 0..m {
        cap[n + j][t] = inst.cap(j).min(big);
    }
    let flow = max_flow(&mut cap, s, t);
    if flow >= total * (1.0 - 1e-12) {
        return Ok(());
    }
    let reason = format!(
        "valued goods can absorb only {flow} of the total budget {total} within the caps"
    );
    if model == ModelKind::SpendingConstraint {
        Err(SolveError::DidNotConverge {
            iterations: 0,
            residual: total - flow,
            reason,
            trace: vec![],
        })
    } else {
        Err(SolveError::Infeasible(reason))
    }
}
