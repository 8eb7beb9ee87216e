use super::*;
use crate::model::{validate_instance, Buyer, Good};
use crate::solver::{solve, SolveOptions};

fn inst(buyers: Vec<Buyer>, caps: Vec<Option<f64>>) -> MarketInstance {
    validate_instance(MarketInstance {
        buyers,
        goods: caps.into_iter().map(|c| Good { spending_cap: c }).collect(),
    })
    .unwrap()
}

fn r(n: i64, d: i64) -> Rat {
    Rat(BigRational::new(n.into(), d.into()))
}

fn linear_support(model: ModelKind, purchases: Vec<Vec<usize>>, binding: Vec<usize>) -> SupportStructure {
    SupportStructure {
        model,
        purchases,
        segments: None,
        binding,
    }
}

#[test]
fn rat_round_trips_as_string() {
    let x = r(-6, 8);
    let json = serde_json::to_string(&x).unwrap();
    assert_eq!(json, "\"-3/4\"");
    assert_eq!(serde_json::from_str::<Rat>(&json).unwrap(), x);
    assert_eq!("5".parse::<Rat>().unwrap(), r(5, 1));
    assert!("1/0".parse::<Rat>().is_err());
}

#[test]
fn to_rational_prefers_short_fractions() {
    assert_eq!(to_rational(0.1).unwrap(), r(1, 10).0);
    assert_eq!(to_rational(-2.75).unwrap(), r(-11, 4).0);
    assert_eq!(to_rational(1.0 / 3.0).unwrap(), r(1, 3).0);
    assert!(matches!(to_rational(f64::NAN), Err(RationalError::IrrationalParameters(_))));
}

#[test]
fn fisher_one_buyer_two_goods() {
    let m = inst(vec![Buyer::linear(1.0, vec![1.0, 3.0])], vec![None, None]);
    let s = linear_support(ModelKind::Fisher, vec![vec![0, 1]], vec![]);
    let eq = exact_equilibrium(&m, &s).unwrap();
    assert_eq!(eq.prices, vec![r(1, 4), r(3, 4)]);
    assert_eq!(eq.alpha, vec![r(1, 4)]);
    assert!(verify_exact(&eq, &m, &s));
}

#[test]
fn sr_single_buyer_takes_least_price() {
    let m = inst(vec![Buyer::linear(1.0, vec![1.0])], vec![Some(1.0)]);
    let s = linear_support(ModelKind::SpendingRestricted, vec![vec![0]], vec![0]);
    let eq = exact_equilibrium(&m, &s).unwrap();
    assert_eq!(eq.prices, vec![r(1, 1)]);
    assert_eq!(eq.spending, vec![vec![r(1, 1)]]);
    assert_eq!(eq.alpha, vec![r(1, 1)]);
}

#[test]
fn non_mbb_purchase_is_degenerate() {
    let m = inst(
        vec![Buyer::linear(1.0, vec![1.0, 3.0]), Buyer::linear(1.0, vec![1.0, 0.0])],
        vec![None, None],
    );
    // Buyer 1 alone would clear good 0 at price 1, buyer 0 then prefers good 1.
    let s = linear_support(ModelKind::Fisher, vec![vec![0], vec![0]], vec![]);
    assert!(matches!(exact_equilibrium(&m, &s), Err(RationalError::DegenerateSupport(_))));
}

#[test]
fn perturbed_numerator_fails_verification() {
    let m = inst(vec![Buyer::linear(1.0, vec![1.0, 3.0])], vec![None, None]);
    let s = linear_support(ModelKind::Fisher, vec![vec![0, 1]], vec![]);
    let mut eq = exact_equilibrium(&m, &s).unwrap();
    eq.prices[0] = r(2, 4);
    assert!(!verify_exact(&eq, &m, &s));
}

#[test]
fn detect_thresholds_small_entries() {
    let m = inst(vec![Buyer::linear(1.0, vec![1.0, 1.0])], vec![None, None]);
    let mut eq = solve(&m, ModelKind::Fisher, &SolveOptions::default()).unwrap();
    eq.spending = vec![vec![0.5, 1e-12]];
    let s = detect_support(&eq, &m, 1e-8).unwrap();
    assert_eq!(s.purchases, vec![vec![0]]);
}

#[test]
fn detect_binding_cap() {
    let m = inst(vec![Buyer::linear(1.0, vec![1.0])], vec![Some(1.0)]);
    let eq = solve(&m, ModelKind::SpendingRestricted, &SolveOptions::default()).unwrap();
    let s = detect_support(&eq, &m, 1e-8).unwrap();
    assert_eq!(s.model, ModelKind::SpendingRestricted);
    assert_eq!(s.binding, vec![0]);
}

#[test]
fn detect_flags_entries_near_zero_and_cap() {
    let tol = 1e-8;
    let m = inst(
        vec![Buyer::linear(1.0, vec![1.0, 1.0])],
        vec![Some(tol), Some(2.0)],
    );
    let mut eq = solve(&m, ModelKind::SpendingRestricted, &SolveOptions::default()).unwrap();
    eq.spending = vec![vec![0.5 * tol, 1.0]];
    assert!(matches!(detect_support(&eq, &m, tol), Err(RationalError::AmbiguousSupport(_))));
}

#[test]
fn segment_support_round_trip() {
    use crate::model::Segment;
    let seg = |rate, length| Segment { rate, length };
    let buyer = Buyer {
        budget: 2.0,
        values: vec![0.0, 0.0],
        utility: UtilityKind::SpendingConstraint {
            segments: vec![vec![seg(4.0, 0.5), seg(2.0, 1.0)], vec![seg(3.0, 2.0)]],
        },
        utility_cap: None,
    };
    let m = inst(vec![buyer], vec![None, None]);
    let eq = solve(&m, ModelKind::SpendingConstraint, &SolveOptions::default()).unwrap();
    let s = detect_support(&eq, &m, 1e-7).unwrap();
    let ex = exact_equilibrium(&m, &s).unwrap();
    assert!(verify_exact(&ex, &m, &s));
    for (a, b) in ex.prices_f64().iter().zip(&eq.prices) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
}
