use super::*;
use crate::model::{Buyer, Good, SpendingProfile};

fn market(buyers: Vec<Buyer>, caps: Vec<Option<f64>>) -> MarketInstance {
    MarketInstance {
        buyers,
        goods: caps.into_iter().map(|c| Good { spending_cap: c }).collect(),
    }
}

#[test]
fn symmetric_two_by_two() {
    let inst = market(
        vec![Buyer::linear(1.0, vec![1.0, 1.0]), Buyer::linear(1.0, vec![1.0, 1.0])],
        vec![None, None],
    );
    let eq = solve(&inst, ModelKind::Fisher, &SolveOptions::default()).unwrap();
    for j in 0..2 {
        assert!((eq.prices[j] - 1.0).abs() < 1e-9);
    }
}

#[test]
fn single_buyer_prices_follow_values() {
    let inst = market(vec![Buyer::linear(1.0, vec![1.0, 3.0])], vec![None, None]);
    let eq = solve(&inst, ModelKind::Fisher, &SolveOptions::default()).unwrap();
    assert!((eq.prices[0] - 0.25).abs() < 1e-9 && (eq.prices[1] - 0.75).abs() < 1e-9);
    assert!((eq.spending[0][0] - 0.25).abs() < 1e-9 && (eq.spending[0][1] - 0.75).abs() < 1e-9);
}

#[test]
fn budget_above_total_cap_is_infeasible() {
    let inst = market(vec![Buyer::linear(2.0, vec![1.0])], vec![Some(1.0)]);
    let err = solve(&inst, ModelKind::SpendingRestricted, &SolveOptions::default()).unwrap_err();
    assert!(matches!(err, SolveError::Infeasible(_)), "{err}");
}

#[test]
fn single_capped_good_earns_its_cap() {
    let inst = market(vec![Buyer::linear(1.0, vec![1.0])], vec![Some(1.0)]);
    let eq = solve(&inst, ModelKind::SpendingRestricted, &SolveOptions::default()).unwrap();
    assert!((eq.q()[0] - 1.0).abs() < 1e-9);
    assert!((eq.prices[0] - 1.0).abs() < 1e-9);
}

#[test]
fn proportional_response_hand_step() {
    let inst = market(vec![Buyer::linear(1.0, vec![1.0, 3.0])], vec![None, None]);
    let next = proportional_response_step(&inst, &SpendingProfile::new(vec![vec![0.5, 0.5]])).unwrap();
    assert!((next.b[0][0] - 0.25).abs() < 1e-15 && (next.b[0][1] - 0.75).abs() < 1e-15);
}

#[test]
fn proportional_response_fixed_point_and_row_sums() {
    let inst = market(
        vec![Buyer::linear(1.0, vec![1.0, 1.0]), Buyer::linear(1.0, vec![1.0, 1.0])],
        vec![None, None],
    );
    let b = SpendingProfile::new(vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
    assert_eq!(proportional_response_step(&inst, &b).unwrap(), b);

    let skew = market(
        vec![Buyer::linear(0.7, vec![2.0, 1.0, 0.5]), Buyer::linear(1.3, vec![0.1, 4.0, 1.0])],
        vec![None, None, None],
    );
    let b = SpendingProfile::new(vec![vec![0.1, 0.2, 0.4], vec![0.3, 0.3, 0.7]]);
    let next = proportional_response_step(&skew, &b).unwrap();
    for (a, b) in next.row_sums().iter().zip(b.row_sums()) {
        assert!((a - b).abs() <= 1e-15);
    }
}

#[test]
fn zero_utility_start_is_reported() {
    let inst = market(vec![Buyer::linear(1.0, vec![1.0, 0.0])], vec![None, None]);
    let b = SpendingProfile::new(vec![vec![0.0, 1.0]]);
    let err = proportional_response_step(&inst, &b).unwrap_err();
    assert!(matches!(err, SolveError::ZeroUtility { buyer: 0 }), "{err}");
}
