//! Spending-restricted rounding of an SR equilibrium with unit caps.

use crate::model::{MarketInstance, SpendingProfile};
use crate::solver::Equilibrium;

use super::forest::{build_spending_forest, prune_forest, SpendingForest};
use super::matching::max_weight_matching;
use super::{mean_log, require_linear, require_unit_caps, IntegralAllocation, NswError};

/// Money at or below this is treated as no edge.
const SUPPORT_TOL: f64 = 1e-9;
/// Slack on the `q_j <= 1/2` test.
const HALF_TOL: f64 = 1e-9;
/// Bonus for giving an item to an agent who has nothing yet.
const SENTINEL: f64 = 1e6;
/// Largest number of root combinations `EnumerateAll` will try.
const MAX_ROOT_CHOICES: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RootRule {
    /// The lowest-index agent of each tree.
    LowestIndex,
    /// Each tree uses the first listed agent it contains, else its lowest.
    Explicit(Vec<usize>),
    /// Every combination of roots; the worst allocation is returned.
    EnumerateAll,
}

pub fn srr_round(
    inst: &MarketInstance,
    sr_eq: &Equilibrium,
    root_rule: &RootRule,
) -> Result<IntegralAllocation, NswError> {
    srr_round_rooted(inst, sr_eq, root_rule).map(|(alloc, _)| alloc)
}

/// Like [`srr_round`], also returning the root agents used, one per tree.
pub fn srr_round_rooted(
    inst: &MarketInstance,
    sr_eq: &Equilibrium,
    root_rule: &RootRule,
) -> Result<(IntegralAllocation, Vec<usize>), NswError> {
    require_linear(inst)?;
    require_unit_caps(inst)?;
    let (n, m) = (inst.n(), inst.m());
    if sr_eq.spending.len() != n || sr_eq.spending.iter().any(|r| r.len() != m) || sr_eq.prices.len() != m {
        return Err(NswError::DimensionMismatch(format!("equilibrium is not {n} x {m}")));
    }
    let mut b = sr_eq.spending.clone();
    for (i, row) in b.iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            if *x <= SUPPORT_TOL {
                *x = 0.0;
                continue;
            }
            let p = sr_eq.prices[j];
            if (inst.value(i, j) - p).abs() > 1e-6 * p.max(1.0) {
                return Err(NswError::NotNormalized { buyer: i, good: j });
            }
        }
    }
    let forest = build_spending_forest(&SpendingProfile::new(b));
    let q = sr_eq.q();
    let trees: Vec<Vec<usize>> = forest
        .trees()
        .into_iter()
        .map(|t| t.agents)
        .filter(|a| !a.is_empty())
        .collect();

    let pick = |roots: Vec<usize>| {
        let alloc = round_with_roots(inst, &forest, &q, &roots);
        (alloc, roots)
    };
    match root_rule {
        RootRule::LowestIndex => Ok(pick(trees.iter().map(|a| a[0]).collect())),
        RootRule::Explicit(list) => Ok(pick(
            trees
                .iter()
                .map(|a| list.iter().copied().find(|r| a.contains(r)).unwrap_or(a[0]))
                .collect(),
        )),
        RootRule::EnumerateAll => {
            let count: f64 = trees.iter().map(|a| a.len() as f64).product();
            if count > MAX_ROOT_CHOICES {
                return Err(NswError::TooLarge(count));
            }
            let mut choice = vec![0usize; trees.len()];
            let mut worst: Option<(f64, IntegralAllocation, Vec<usize>)> = None;
            loop {
                let roots: Vec<usize> = trees.iter().zip(&choice).map(|(a, &k)| a[k]).collect();
                let (alloc, roots) = pick(roots);
                let score = mean_log(&alloc.utilities);
                if worst.as_ref().is_none_or(|(s, _, _)| score < *s) {
                    worst = Some((score, alloc, roots));
                }
                // Odometer over root choices, last tree fastest.
                let mut k = trees.len();
                loop {
                    if k == 0 {
                        let (_, alloc, roots) = worst.expect("at least one combination");
                        return Ok((alloc, roots));
                    }
                    k -= 1;
                    choice[k] += 1;
                    if choice[k] < trees[k].len() {
                        break;
                    }
                    choice[k] = 0;
                }
            }
        }
    }
}

fn round_with_roots(
    inst: &MarketInstance,
    forest: &SpendingForest,
    q: &[f64],
    roots: &[usize],
) -> IntegralAllocation {
    let m = forest.m();
    let rooted = forest.rooted(roots);
    let mut owner: Vec<Option<usize>> = vec![None; m];
    // Leaf items and items earning at most 1/2 go to their parents.
    for j in 0..m {
        if let Some(parent) = rooted.item_parent[j] {
            if forest.degree_of_item(j) == 1 || q[j] <= 0.5 + HALF_TOL {
                owner[j] = Some(parent);
            }
        }
    }
    let accrued = IntegralAllocation::new(inst, owner.clone()).utilities;

    // The rest are matched within the pruned forest.
    let pruned = prune_forest(&SpendingForest {
        b: forest.b.clone(),
        roots: roots.to_vec(),
    });
    let remaining: Vec<usize> = (0..m)
        .filter(|&j| owner[j].is_none() && rooted.item_parent[j].is_some())
        .collect();
    let pb = &pruned.b;
    let mut agents: Vec<usize> = remaining
        .iter()
        .flat_map(|&j| (0..forest.n()).filter(move |&i| pb[i][j] > 0.0))
        .collect();
    agents.sort_unstable();
    agents.dedup();
    let weights: Vec<Vec<Option<f64>>> = agents
        .iter()
        .map(|&i| {
            remaining
                .iter()
                .map(|&j| {
                    let v = inst.value(i, j);
                    if pruned.b[i][j] <= 0.0 || v <= 0.0 {
                        None
                    } else if accrued[i] > 0.0 {
                        Some((v / accrued[i]).ln_1p())
                    } else {
                        Some(SENTINEL + v.ln())
                    }
                })
                .collect()
        })
        .collect();
    for (row, col) in max_weight_matching(&weights, remaining.len()).into_iter().enumerate() {
        if let Some(c) = col {
            owner[remaining[c]] = Some(agents[row]);
        }
    }
    for &j in &remaining {
        if owner[j].is_none() {
            owner[j] = rooted.item_parent[j];
        }
    }
    IntegralAllocation::new(inst, owner)
}
