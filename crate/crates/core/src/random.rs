//! Seeded random instances with small rational parameters.
//!
//! Every parameter is a multiple of 1/4 so that instances are exactly
//! representable both as `f64` and as rationals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{Buyer, Good, MarketInstance, ModelKind, Segment, UtilityKind};

/// Utility family of a random UR instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UrFamily {
    Linear,
    Leontief,
    Ces,
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn quarter(r: &mut ChaCha8Rng, lo: u32, hi: u32) -> f64 {
    r.gen_range(lo..=hi) as f64 / 4.0
}

fn goods(caps: Vec<Option<f64>>) -> Vec<Good> {
    caps.into_iter().map(|c| Good { spending_cap: c }).collect()
}

/// Valuations in `{0, 1, ..., 9}` with at least one positive entry; with
/// `dense` every entry is positive.
fn values(r: &mut ChaCha8Rng, m: usize, dense: bool) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..m)
            .map(|_| {
                if dense || r.gen_bool(0.7) {
                    r.gen_range(1..=9) as f64
                } else {
                    0.0
                }
            })
            .collect();
        if v.iter().any(|&x| x > 0.0) {
            return v;
        }
    }
}

/// Linear Fisher market; some valuations are zero.
pub fn fisher(seed: u64, n: usize, m: usize) -> MarketInstance {
    let mut r = rng(seed);
    let buyers = (0..n)
        .map(|_| {
            let b = quarter(&mut r, 2, 12);
            Buyer::linear(b, values(&mut r, m, false))
        })
        .collect();
    MarketInstance {
        buyers,
        goods: goods(vec![None; m]),
    }
}

/// Linear market with every good capped and positive valuations. The caps
/// are drawn so that the total cap falls on either side of the total budget.
pub fn spending_restricted(seed: u64, n: usize, m: usize) -> MarketInstance {
    let mut r = rng(seed);
    let buyers: Vec<Buyer> = (0..n)
        .map(|_| {
            let b = quarter(&mut r, 2, 8);
            Buyer::linear(b, values(&mut r, m, true))
        })
        .collect();
    let total: f64 = buyers.iter().map(|b| b.budget).sum();
    let target = total * r.gen_range(0.6..1.6) / m as f64;
    let caps = (0..m)
        .map(|_| Some(((target * r.gen_range(0.5..1.5) * 4.0).round().max(1.0)) / 4.0))
        .collect();
    MarketInstance {
        buyers,
        goods: goods(caps),
    }
}

/// Like [`spending_restricted`] but redrawn until an equilibrium exists.
pub fn spending_restricted_feasible(seed: u64, n: usize, m: usize) -> MarketInstance {
    (0..)
        .map(|k| spending_restricted(seed.wrapping_mul(1_000_003).wrapping_add(k), n, m))
        .find(|inst| inst.total_cap() >= inst.total_budget())
        .expect("some draw is feasible")
}

/// Unit budgets and unit caps, `m >= n`; the NSW setting.
pub fn unit_caps(seed: u64, n: usize, m: usize) -> MarketInstance {
    assert!(m >= n, "unit-cap instances need m >= n");
    let mut r = rng(seed);
    let buyers = (0..n)
        .map(|_| Buyer::linear(1.0, values(&mut r, m, false)))
        .collect();
    MarketInstance {
        buyers,
        goods: goods(vec![Some(1.0); m]),
    }
}

/// UR instance with at least two buyers. Buyer 0 is uncapped and wants
/// every good, which keeps all prices positive for CES; the others carry
/// utility caps.
pub fn utility_restricted(seed: u64, n: usize, m: usize, family: UrFamily) -> MarketInstance {
    assert!(n >= 2, "UR instances need an uncapped and a capped buyer");
    let mut r = rng(seed);
    let rhos = [-1.0, -0.5, 0.25, 0.5];
    let buyers = (0..n)
        .map(|i| {
            let budget = quarter(&mut r, 2, 8);
            let dense = i == 0 || family == UrFamily::Ces;
            let v = values(&mut r, m, dense);
            let mut buyer = match family {
                UrFamily::Linear => Buyer::linear(budget, v),
                UrFamily::Leontief => Buyer {
                    budget,
                    values: vec![0.0; m],
                    utility: UtilityKind::Leontief {
                        phi: v.iter().map(|x| (x / 3.0).ceil()).collect(),
                    },
                    utility_cap: None,
                },
                UrFamily::Ces => Buyer {
                    budget,
                    values: v,
                    utility: UtilityKind::Ces {
                        rho: rhos[r.gen_range(0..rhos.len())],
                    },
                    utility_cap: None,
                },
            };
            if i > 0 {
                buyer.utility_cap = Some(quarter(&mut r, 1, 8));
            }
            buyer
        })
        .collect();
    MarketInstance {
        buyers,
        goods: goods(vec![None; m]),
    }
}

/// Quasi-linear buyers with valuations in quarters.
pub fn quasi_linear(seed: u64, n: usize, m: usize) -> MarketInstance {
    let mut r = rng(seed);
    let buyers = (0..n)
        .map(|_| {
            let budget = quarter(&mut r, 2, 8);
            let v = values(&mut r, m, false).into_iter().map(|x| x / 4.0).collect();
            Buyer {
                budget,
                values: v,
                utility: UtilityKind::QuasiLinear,
                utility_cap: None,
            }
        })
        .collect();
    MarketInstance {
        buyers,
        goods: goods(vec![None; m]),
    }
}

/// Spending-constraint buyers with one to three decreasing-rate segments
/// per good. With `capped`, every good carries an earning cap. Redrawn
/// until budgets can be spent within segment lengths and caps.
pub fn spending_constraint(seed: u64, n: usize, m: usize, capped: bool) -> MarketInstance {
    for k in 0.. {
        let mut r = rng(seed.wrapping_mul(1_000_003).wrapping_add(k));
        let buyers: Vec<Buyer> = (0..n)
            .map(|_| {
                let budget = quarter(&mut r, 2, 8);
                let segments: Vec<Vec<Segment>> = (0..m)
                    .map(|_| {
                        let count = r.gen_range(0..=3);
                        let mut rate = r.gen_range(6..=12) as f64;
                        (0..count)
                            .map(|_| {
                                let seg = Segment {
                                    rate,
                                    length: quarter(&mut r, 1, 8),
                                };
                                rate -= r.gen_range(1..=3) as f64;
                                seg
                            })
                            .filter(|s| s.rate > 0.0)
                            .collect()
                    })
                    .collect();
                Buyer {
                    budget,
                    values: vec![0.0; m],
                    utility: UtilityKind::SpendingConstraint { segments },
                    utility_cap: None,
                }
            })
            .collect();
        let total: f64 = buyers.iter().map(|b| b.budget).sum();
        let caps = (0..m)
            .map(|_| capped.then(|| quarter(&mut r, 2, 8).max((total / m as f64 * 4.0).ceil() / 4.0)))
            .collect();
        let raw = MarketInstance {
            buyers,
            goods: goods(caps),
        };
        let Ok(inst) = crate::model::validate_instance(raw) else {
            continue;
        };
        if crate::solver::spendable(&inst, ModelKind::SpendingConstraint) {
            return inst;
        }
    }
    unreachable!()
}
