//! Prices from optimal spending.
//!
//! Uncapped (or unsaturated) goods are priced at the money they receive.
//! Saturated capped goods get the least prices consistent with bang-per-buck
//! on the spending graph, found as the least fixed point of the difference
//! constraints in log space.

use crate::model::{MarketInstance, SpendingProfile, UtilityKind};

use super::SolveError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum EdgeClass {
    /// Strictly between zero and the segment length: rate is exactly MBB.
    Open,
    /// Segment filled: rate is at least MBB.
    Full,
    /// No money: rate is at most MBB.
    Zero,
}

#[derive(Debug, Clone)]
pub(crate) struct RateEdge {
    pub buyer: usize,
    pub good: usize,
    pub log_rate: f64,
    pub class: EdgeClass,
}

/// Log-space tolerance for contradicting rates.
const LOG_TOL: f64 = 1e-6;

/// Prices from `b` with a classification threshold scaled to the budgets.
pub fn recover_prices(inst: &MarketInstance, b: &SpendingProfile) -> Result<Vec<f64>, SolveError> {
    recover_prices_tol(inst, b, 1e-9 * inst.total_budget().max(1.0))
}

/// Prices from `b`; entries at most `tol` count as zero and goods within
/// `tol` of their cap as saturated.
pub fn recover_prices_tol(
    inst: &MarketInstance,
    b: &SpendingProfile,
    tol: f64,
) -> Result<Vec<f64>, SolveError> {
    let q = b.q();
    let mut edges = Vec::new();
    for i in 0..inst.n() {
        match &inst.buyers[i].utility {
            UtilityKind::SpendingConstraint { segments } => {
                for (j, segs) in segments.iter().enumerate() {
                    let filled = segment_split(b, i, j, segs.iter().map(|s| s.length));
                    for (s, money) in segs.iter().zip(filled) {
                        let class = if money <= tol {
                            EdgeClass::Zero
                        } else if money >= s.length - tol {
                            EdgeClass::Full
                        } else {
                            EdgeClass::Open
                        };
                        edges.push(RateEdge {
                            buyer: i,
                            good: j,
                            log_rate: s.rate.ln(),
                            class,
                        });
                    }
                }
            }
            _ => {
                for j in 0..inst.m() {
                    let v = inst.value(i, j);
                    if v > 0.0 {
                        edges.push(RateEdge {
                            buyer: i,
                            good: j,
                            log_rate: v.ln(),
                            class: if b.b[i][j] > tol {
                                EdgeClass::Open
                            } else {
                                EdgeClass::Zero
                            },
                        });
                    }
                }
            }
        }
    }
    let saturated: Vec<bool> = (0..inst.m())
        .map(|j| inst.cap(j).is_finite() && q[j] >= inst.cap(j) - tol)
        .collect();
    least_prices(inst, &q, &saturated, &edges)
}

/// Per-segment money of `b_ij`: the recorded split if present, otherwise a
/// fill in segment order.
fn segment_split(
    b: &SpendingProfile,
    i: usize,
    j: usize,
    lengths: impl Iterator<Item = f64>,
) -> Vec<f64> {
    if let Some(seg) = &b.segments {
        return seg[i][j].clone();
    }
    let mut left = b.b[i][j];
    lengths
        .map(|len| {
            let take = left.min(len).max(0.0);
            left -= take;
            take
        })
        .collect()
}

/// Least fixed point of the bang-per-buck constraints.
///
/// Unsaturated goods have `log p_j = log q_j` fixed; saturated goods have
/// `log p_j >= log c_j`. Each buyer's `log alpha_i` (price per util) is
/// at least `log p_j - log rate` on open and full edges, and each price is
/// at least `log alpha_i + log rate` on open and zero edges.
pub(crate) fn least_prices(
    inst: &MarketInstance,
    q: &[f64],
    saturated: &[bool],
    edges: &[RateEdge],
) -> Result<Vec<f64>, SolveError> {
    let n = inst.n();
    let m = inst.m();
    let mut x: Vec<f64> = (0..m)
        .map(|j| {
            if saturated[j] {
                inst.cap(j).ln()
            } else if q[j] > 0.0 {
                q[j].ln()
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let mut y = vec![f64::NEG_INFINITY; n];
    let eps = 1e-13;
    let mut settled = false;
    let mut last_buyer = 0;
    for _ in 0..(n + m + 2) {
        let mut changed = false;
        for e in edges {
            if e.class != EdgeClass::Zero {
                let cand = x[e.good] - e.log_rate;
                if cand > y[e.buyer] + eps {
                    y[e.buyer] = cand;
                    changed = true;
                    last_buyer = e.buyer;
                }
            }
        }
        for e in edges {
            if e.class != EdgeClass::Full && saturated[e.good] {
                let cand = y[e.buyer] + e.log_rate;
                if cand > x[e.good] + eps {
                    x[e.good] = cand;
                    changed = true;
                    last_buyer = e.buyer;
                }
            }
        }
        if !changed {
            settled = true;
            break;
        }
    }
    if !settled {
        return Err(SolveError::InconsistentRates { buyer: last_buyer });
    }
    for e in edges {
        if e.class != EdgeClass::Full && !saturated[e.good] {
            let excess = y[e.buyer] + e.log_rate - x[e.good];
            if excess > LOG_TOL {
                return Err(SolveError::InconsistentRates { buyer: e.buyer });
            }
        }
    }
    Ok(x.iter().map(|v| v.exp()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Buyer, Good};

    fn capped(buyers: Vec<Buyer>, caps: Vec<Option<f64>>) -> MarketInstance {
        MarketInstance {
            buyers,
            goods: caps.into_iter().map(|c| Good { spending_cap: c }).collect(),
        }
    }

    #[test]
    fn uncapped_good_priced_at_its_money() {
        let inst = capped(vec![Buyer::linear(0.6, vec![1.0])], vec![None]);
        let p = recover_prices(&inst, &SpendingProfile::new(vec![vec![0.6]])).unwrap();
        assert!((p[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn saturated_single_good_gets_its_cap() {
        let inst = capped(vec![Buyer::linear(1.0, vec![1.0])], vec![Some(1.0)]);
        let p = recover_prices(&inst, &SpendingProfile::new(vec![vec![1.0]])).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn capped_price_follows_the_buyer_rate() {
        // rate 1/0.5 = 2 on the uncapped good, so the capped good costs 2/2.
        let inst = capped(
            vec![Buyer::linear(1.5, vec![1.0, 2.0])],
            vec![None, Some(1.0)],
        );
        let p = recover_prices(&inst, &SpendingProfile::new(vec![vec![0.5, 1.0]])).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15);
        assert!((p[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn capped_price_raised_above_cap_by_rate() {
        let inst = capped(
            vec![Buyer::linear(1.5, vec![1.0, 4.0])],
            vec![None, Some(1.0)],
        );
        let p = recover_prices(&inst, &SpendingProfile::new(vec![vec![0.5, 1.0]])).unwrap();
        assert!((p[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn contradictory_uncapped_rates_are_rejected() {
        // Buyer spends on both goods but 1/0.5 != 3/0.5.
        let inst = capped(vec![Buyer::linear(1.0, vec![1.0, 3.0])], vec![None, None]);
        let err = recover_prices(&inst, &SpendingProfile::new(vec![vec![0.5, 0.5]])).unwrap_err();
        assert_eq!(err, SolveError::InconsistentRates { buyer: 0 });
    }
}
