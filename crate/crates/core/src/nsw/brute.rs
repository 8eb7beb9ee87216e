//! Exhaustive NSW optimum for small instances.

use crate::model::MarketInstance;

use super::{require_linear, IntegralAllocation, NswError};

/// Largest number of allocations [`brute_force_opt`] will visit.
pub const BRUTE_FORCE_LIMIT: f64 = (1u64 << 24) as f64;

/// Tries every way of giving each item to an agent who values it. Items
/// nobody values stay unassigned. Among maximizers the lexicographically
/// smallest owner vector wins.
pub fn brute_force_opt(inst: &MarketInstance) -> Result<IntegralAllocation, NswError> {
    require_linear(inst)?;
    let (n, m) = (inst.n(), inst.m());
    let valuers: Vec<Vec<usize>> = (0..m)
        .map(|j| (0..n).filter(|&i| inst.value(i, j) > 0.0).collect())
        .collect();
    let count: f64 = valuers.iter().map(|v| v.len().max(1) as f64).product();
    if count > BRUTE_FORCE_LIMIT {
        return Err(NswError::TooLarge(count));
    }
    let mut search = Search {
        inst,
        valuers: &valuers,
        utilities: vec![0.0; n],
        owner: vec![None; m],
        best: f64::NEG_INFINITY,
        best_owner: None,
    };
    search.run(0);
    // When every allocation has NSW zero, the first one visited stands.
    let owner = search
        .best_owner
        .unwrap_or_else(|| valuers.iter().map(|v| v.first().copied()).collect());
    Ok(IntegralAllocation::new(inst, owner))
}

struct Search<'a> {
    inst: &'a MarketInstance,
    valuers: &'a [Vec<usize>],
    utilities: Vec<f64>,
    owner: Vec<Option<usize>>,
    best: f64,
    best_owner: Option<Vec<Option<usize>>>,
}

impl Search<'_> {
    fn run(&mut self, j: usize) {
        if j == self.owner.len() {
            if self.utilities.iter().any(|&u| u <= 0.0) {
                return;
            }
            let score: f64 = self.utilities.iter().map(|u| u.ln()).sum();
            if self.best_owner.is_none() || score > self.best + 1e-12 * self.best.abs().max(1.0) {
                self.best = score;
                self.best_owner = Some(self.owner.clone());
            }
            return;
        }
        if self.valuers[j].is_empty() {
            return self.run(j + 1);
        }
        for k in 0..self.valuers[j].len() {
            let i = self.valuers[j][k];
            let v = self.inst.value(i, j);
            self.utilities[i] += v;
            self.owner[j] = Some(i);
            self.run(j + 1);
            self.utilities[i] -= v;
        }
        self.owner[j] = None;
    }
}
