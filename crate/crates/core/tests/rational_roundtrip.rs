use fisher_core::model::ModelKind;
use fisher_core::random::{self, UrFamily};
use fisher_core::rational::{detect_support, exact_equilibrium, verify_exact, RationalError};
use fisher_core::solver::{solve, SolveOptions};

fn instance(seed: u64) -> (fisher_core::model::MarketInstance, ModelKind) {
    let n = 2 + (seed % 3) as usize;
    let m = 2 + (seed / 3 % 3) as usize;
    match seed % 4 {
        0 => (random::fisher(seed, n, m), ModelKind::Fisher),
        1 => (random::spending_restricted_feasible(seed, n, m), ModelKind::SpendingRestricted),
        2 => (random::utility_restricted(seed, n, m, UrFamily::Linear), ModelKind::UtilityRestricted),
        _ => (random::spending_constraint(seed, n, m, seed % 8 == 3), ModelKind::SpendingConstraint),
    }
}

#[test]
fn numeric_to_exact_round_trip() {
    let mut ok = 0;
    for seed in 0..50 {
        let (inst, model) = instance(seed);
        let eq = solve(&inst, model, &SolveOptions::default()).unwrap();
        let support = match detect_support(&eq, &inst, 1e-7) {
            Ok(s) => s,
            Err(RationalError::AmbiguousSupport(_)) => continue,
            Err(e) => panic!("seed {seed}: {e}"),
        };
        match exact_equilibrium(&inst, &support) {
            Ok(exact) => {
                assert!(verify_exact(&exact, &inst, &support), "seed {seed}");
                // UR equilibria need not be unique; the exact point is the
                // lexicographically least one.
                if model == ModelKind::UtilityRestricted {
                    ok += 1;
                    continue;
                }
                let q_exact: Vec<f64> = (0..inst.m())
                    .map(|j| exact.spending.iter().map(|r| r[j].to_f64()).sum())
                    .collect();
                for (a, b) in q_exact.iter().zip(eq.q()) {
                    assert!((a - b).abs() <= 1e-5, "seed {seed}: q {a} vs {b}");
                }
                ok += 1;
            }
            Err(RationalError::DegenerateSupport(msg)) => eprintln!("seed {seed}: {msg}"),
            Err(e) => panic!("seed {seed}: {e}"),
        }
    }
    assert!(ok >= 45, "only {ok} of 50 round trips succeeded");
}
