//! NSW instance families: the integrality-gap family, the family on which
//! SRR loses a factor approaching 2, and random unit-cap instances.

use serde::{Deserialize, Serialize};

use crate::model::{Buyer, Good, MarketInstance, ModelKind};
use crate::random;
use crate::solver::spendable;

use super::NswError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorParams {
    /// `n` agents, `m = (1 + f) n` items. Agent `i` values item `i` at
    /// `1 - f`; every agent values the last `f n` items at `v`.
    Gap { n: usize, f: f64, v: f64 },
    /// `kappa + 1` agents, `2 kappa` items. Agent `i < kappa` values item
    /// `i` at 1/2 and item `kappa + i` at `1/2 + 1/kappa`; the last agent
    /// values each of the first `kappa` items at 1.
    SrrTight { kappa: usize },
    /// Random valuations, redrawn until an SR equilibrium exists.
    Random { n: usize, m: usize, seed: u64 },
}

fn unit_instance(values: Vec<Vec<f64>>, m: usize) -> MarketInstance {
    MarketInstance {
        buyers: values.into_iter().map(|v| Buyer::linear(1.0, v)).collect(),
        goods: vec![Good { spending_cap: Some(1.0) }; m],
    }
}

/// Builds the instance; every budget and every earning cap is 1.
pub fn generate_instance(params: &GeneratorParams) -> Result<MarketInstance, NswError> {
    match *params {
        GeneratorParams::Gap { n, f, v } => {
            if n == 0 || !(f > 0.0 && f < 1.0) {
                return Err(NswError::BadParams("Gap needs n >= 1 and 0 < f < 1".into()));
            }
            let extra = f * n as f64;
            if (extra - extra.round()).abs() > 1e-9 || extra.round() < 1.0 {
                return Err(NswError::BadParams(format!("f * n = {extra} must be a positive integer")));
            }
            if !(v > 0.0 && v.is_finite()) {
                return Err(NswError::BadParams("Gap needs a positive finite V".into()));
            }
            let m = n + extra.round() as usize;
            let values = (0..n)
                .map(|i| {
                    let mut row = vec![0.0; m];
                    row[i] = 1.0 - f;
                    row[n..].fill(v);
                    row
                })
                .collect();
            Ok(unit_instance(values, m))
        }
        GeneratorParams::SrrTight { kappa } => {
            if kappa < 2 {
                return Err(NswError::BadParams("SrrTight needs kappa >= 2".into()));
            }
            let m = 2 * kappa;
            let mut values: Vec<Vec<f64>> = (0..kappa)
                .map(|i| {
                    let mut row = vec![0.0; m];
                    row[i] = 0.5;
                    row[kappa + i] = 0.5 + 1.0 / kappa as f64;
                    row
                })
                .collect();
            let mut last = vec![0.0; m];
            last[..kappa].fill(1.0);
            values.push(last);
            Ok(unit_instance(values, m))
        }
        GeneratorParams::Random { n, m, seed } => {
            if n == 0 || m < n {
                return Err(NswError::BadParams("Random needs 1 <= n <= m".into()));
            }
            (0..)
                .map(|k| random::unit_caps(seed.wrapping_mul(1_000_003).wrapping_add(k), n, m))
                .find(|inst| spendable(inst, ModelKind::SpendingRestricted))
                .ok_or_else(|| NswError::BadParams("no spendable draw".into()))
        }
    }
}
