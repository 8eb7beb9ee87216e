use super::*;
use crate::model::{validate_instance, Buyer, Good};

fn unit(values: Vec<Vec<f64>>) -> MarketInstance {
    let m = values[0].len();
    validate_instance(MarketInstance {
        buyers: values.into_iter().map(|v| Buyer::linear(1.0, v)).collect(),
        goods: vec![Good { spending_cap: Some(1.0) }; m],
    })
    .unwrap()
}

fn close(a: f64, b: f64, tol: f64) {
    assert!((a - b).abs() <= tol, "{a} vs {b}");
}

#[test]
fn acyclic_profile_is_unchanged() {
    let b = vec![vec![0.5, 0.5, 0.0], vec![0.0, 0.25, 0.75]];
    let forest = build_spending_forest(&SpendingProfile::new(b.clone()));
    assert_eq!(forest.b, b);
    assert_eq!(forest.roots, vec![0]);
}

#[test]
fn four_cycle_is_broken() {
    let b = vec![vec![0.25; 2]; 2];
    let forest = build_spending_forest(&SpendingProfile::new(b));
    // Both decreasing edges hold 1/4, so the shift empties both.
    assert!(forest.edges().len() <= 3);
    assert!(forest.is_acyclic());
    let rows: Vec<f64> = forest.b.iter().map(|r| r.iter().sum()).collect();
    assert_eq!(rows, vec![0.5, 0.5]);
    assert_eq!(SpendingProfile::new(forest.b.clone()).q(), vec![0.5, 0.5]);
    // The smallest edge is (0, 0) by the tie rule.
    assert_eq!(forest.b[0][0], 0.0);
}

#[test]
fn prune_keeps_biggest_child() {
    let forest = SpendingForest {
        b: vec![vec![0.2], vec![0.3], vec![0.6]],
        roots: vec![0],
    };
    let pruned = prune_forest(&forest);
    assert_eq!(pruned.b, vec![vec![0.2], vec![0.0], vec![0.6]]);
    assert_eq!(pruned.roots, vec![0, 1]);

    let tie = SpendingForest {
        b: vec![vec![0.2], vec![0.4], vec![0.4]],
        roots: vec![0],
    };
    assert_eq!(prune_forest(&tie).b, vec![vec![0.2], vec![0.4], vec![0.0]]);

    let single = SpendingForest {
        b: vec![vec![0.5], vec![0.5]],
        roots: vec![0],
    };
    assert_eq!(prune_forest(&single), single);
}

#[test]
fn nsw_value_is_geometric_mean() {
    let inst = unit(vec![vec![2.0, 0.0], vec![0.0, 8.0]]);
    close(nsw_value(&IntegralAllocation::new(&inst, vec![Some(0), Some(1)]), &inst), 4.0, 1e-12);
    assert_eq!(nsw_value(&IntegralAllocation::new(&inst, vec![Some(0), Some(0)]), &inst), 0.0);
    let one = unit(vec![vec![2.0, 3.0]]);
    close(nsw_value(&IntegralAllocation::new(&one, vec![Some(0), Some(0)]), &one), 5.0, 1e-12);
}

#[test]
fn brute_force_small_cases() {
    let diag = unit(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    let opt = brute_force_opt(&diag).unwrap();
    assert_eq!(opt.owner, vec![Some(0), Some(1)]);
    close(nsw_value(&opt, &diag), 1.0, 1e-12);

    let solo = unit(vec![vec![1.0, 2.0, 3.0]]);
    assert_eq!(brute_force_opt(&solo).unwrap().owner, vec![Some(0); 3]);

    let gap = generate_instance(&GeneratorParams::Gap { n: 3, f: 1.0 / 3.0, v: 100.0 }).unwrap();
    let expected = ((2.0f64 / 3.0).powi(2) * (2.0 / 3.0 + 100.0)).powf(1.0 / 3.0);
    close(nsw_value(&brute_force_opt(&gap).unwrap(), &gap), expected, 1e-9);
}

#[test]
fn brute_force_guard() {
    let inst = unit(vec![vec![1.0; 25], vec![1.0; 25]]);
    assert!(matches!(brute_force_opt(&inst), Err(NswError::TooLarge(_))));
}

#[test]
fn sr_ub_examples() {
    close(sr_ub_from_prices(&[2.0, 0.5, 3.0], 2), 6f64.sqrt(), 1e-12);
    assert_eq!(sr_ub_from_prices(&[0.5, 0.9], 2), 1.0);
}

#[test]
fn sr_objective_gibbs_and_uniform() {
    let inst = unit(vec![vec![1.0, 3.0]]);
    let gibbs = sr_objective(&inst, &SpendingProfile::new(vec![vec![0.25, 0.75]])).unwrap();
    close(gibbs, 4.0, 1e-12);
    let uniform = sr_objective(&inst, &SpendingProfile::new(vec![vec![0.5, 0.5]])).unwrap();
    assert!(uniform < 4.0 - 1e-6);
    assert!(matches!(
        sr_objective(&inst, &SpendingProfile::new(vec![vec![0.5, 0.25]])),
        Err(NswError::InfeasibleSpending(_))
    ));
}

#[test]
fn generators_follow_their_patterns() {
    let gap = generate_instance(&GeneratorParams::Gap { n: 3, f: 1.0 / 3.0, v: 1000.0 }).unwrap();
    assert_eq!((gap.n(), gap.m()), (3, 4));
    for i in 0..3 {
        for j in 0..4 {
            let want = if j == 3 { 1000.0 } else if j == i { 2.0 / 3.0 } else { 0.0 };
            close(gap.value(i, j), want, 1e-15);
        }
    }
    let tight = generate_instance(&GeneratorParams::SrrTight { kappa: 3 }).unwrap();
    assert_eq!((tight.n(), tight.m()), (4, 6));
    assert_eq!(tight.buyers[1].values, vec![0.0, 0.5, 0.0, 0.0, 0.5 + 1.0 / 3.0, 0.0]);
    assert_eq!(tight.buyers[3].values, vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
    let r = GeneratorParams::Random { n: 3, m: 4, seed: 9 };
    assert_eq!(generate_instance(&r).unwrap(), generate_instance(&r).unwrap());
    for bad in [
        GeneratorParams::Gap { n: 3, f: 0.5, v: 10.0 },
        GeneratorParams::SrrTight { kappa: 1 },
        GeneratorParams::Random { n: 3, m: 2, seed: 0 },
    ] {
        assert!(matches!(generate_instance(&bad), Err(NswError::BadParams(_))));
    }
}

fn sr_solve(inst: &MarketInstance) -> (MarketInstance, Equilibrium) {
    let eq = solve(inst, ModelKind::SpendingRestricted, &SolveOptions::default()).unwrap();
    (normalize_valuations(inst, &eq).unwrap(), eq)
}

#[test]
fn srr_low_earning_items_go_to_parents() {
    let inst = unit(vec![vec![1.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, 1.0]]);
    let (norm, eq) = sr_solve(&inst);
    assert!(eq.q().iter().all(|&q| q <= 0.5 + 1e-9));
    let alloc = srr_round(&norm, &eq, &RootRule::LowestIndex).unwrap();
    assert_eq!(alloc.owner, vec![Some(0), Some(0), Some(1), Some(1)]);
}

#[test]
fn srr_tight_root_takes_first_items() {
    let inst = generate_instance(&GeneratorParams::SrrTight { kappa: 3 }).unwrap();
    let (norm, eq) = sr_solve(&inst);
    let alloc = srr_round(&norm, &eq, &RootRule::Explicit(vec![3])).unwrap();
    assert_eq!(alloc.owner, vec![Some(3), Some(3), Some(3), Some(0), Some(1), Some(2)]);
}

#[test]
fn srr_rejects_bad_inputs() {
    let inst = unit(vec![vec![1.0, 3.0]]);
    let eq = solve(&inst, ModelKind::SpendingRestricted, &SolveOptions::default()).unwrap();
    let mut capped = inst.clone();
    capped.goods[0].spending_cap = Some(2.0);
    assert!(matches!(srr_round(&capped, &eq, &RootRule::LowestIndex), Err(NswError::NotUnitCaps)));
    let mut off = normalize_valuations(&inst, &eq).unwrap();
    off.buyers[0].values[0] *= 2.0;
    // Only the good bought counts; good 1 carries all money here.
    let bought = (0..2).find(|&j| eq.spending[0][j] > 1e-9).unwrap();
    off.buyers[0].values[bought] *= 3.0;
    assert!(matches!(
        srr_round(&off, &eq, &RootRule::LowestIndex),
        Err(NswError::NotNormalized { .. })
    ));
}

#[test]
fn sr_ub_matches_sr_objective() {
    let inst = generate_instance(&GeneratorParams::Random { n: 3, m: 5, seed: 4 }).unwrap();
    let (norm, eq) = sr_solve(&inst);
    let ub = sr_ub(&norm, &eq).unwrap();
    close(sr_objective(&norm, &eq.spending_profile()).unwrap(), ub, 1e-6);
}

#[test]
fn report_on_gap_and_symmetric() {
    let gap = generate_instance(&GeneratorParams::Gap { n: 3, f: 1.0 / 3.0, v: 1e4 }).unwrap();
    let r = approximation_report(&gap).unwrap();
    close(r.gap_ratio, 1.31034157904975, 1e-6);

    let sym = unit(vec![vec![1.0; 3]; 3]);
    let r = approximation_report(&sym).unwrap();
    close(r.gap_ratio, 1.0, 1e-9);
    close(r.srr_ratio, 1.0, 1e-9);
}
