use fisher_core::model::ModelKind;
use fisher_core::random::{self, UrFamily};
use fisher_core::solver::{solve, SolveError, SolveOptions};
use fisher_core::verify::check_equilibrium;

fn solves_and_verifies(inst: &fisher_core::model::MarketInstance, model: ModelKind, label: &str) {
    match solve(inst, model, &SolveOptions::default()) {
        Ok(eq) => {
            let r = check_equilibrium(inst, &eq, model, 1e-6).unwrap();
            assert!(r.pass, "{label}: {r:?}");
        }
        Err(e) => panic!("{label}: {e}\n{}", inst.to_json()),
    }
}

#[test]
fn fisher_random() {
    for seed in 0..60 {
        let inst = random::fisher(seed, 1 + (seed % 6) as usize, 1 + (seed / 6 % 6) as usize);
        solves_and_verifies(&inst, ModelKind::Fisher, &format!("fisher seed {seed}"));
    }
}

#[test]
fn sr_random_feasible() {
    for seed in 0..60 {
        let inst = random::spending_restricted_feasible(seed, 1 + (seed % 5) as usize, 1 + (seed / 5 % 5) as usize);
        solves_and_verifies(&inst, ModelKind::SpendingRestricted, &format!("sr seed {seed}"));
    }
}

#[test]
fn sr_infeasible_detected() {
    for seed in 0..60 {
        let inst = random::spending_restricted(seed, 1 + (seed % 5) as usize, 1 + (seed / 5 % 5) as usize);
        let res = solve(&inst, ModelKind::SpendingRestricted, &SolveOptions::default());
        if inst.total_cap() < inst.total_budget() {
            assert!(matches!(res, Err(SolveError::Infeasible(_))), "seed {seed}");
        } else {
            assert!(res.is_ok(), "seed {seed}: {res:?}");
        }
    }
}

#[test]
fn ur_random() {
    for family in [UrFamily::Linear, UrFamily::Leontief, UrFamily::Ces] {
        for seed in 0..30 {
            let inst = random::utility_restricted(seed, 2 + (seed % 3) as usize, 1 + (seed / 3 % 4) as usize, family);
            solves_and_verifies(&inst, ModelKind::UtilityRestricted, &format!("ur {family:?} seed {seed}"));
        }
    }
}

#[test]
fn ql_random() {
    for seed in 0..40 {
        let inst = random::quasi_linear(seed, 1 + (seed % 4) as usize, 1 + (seed / 4 % 4) as usize);
        solves_and_verifies(&inst, ModelKind::QuasiLinear, &format!("ql seed {seed}"));
    }
}

#[test]
fn sc_random() {
    for capped in [false, true] {
        for seed in 0..30 {
            let inst = random::spending_constraint(seed, 1 + (seed % 3) as usize, 1 + (seed / 3 % 4) as usize, capped);
            solves_and_verifies(&inst, ModelKind::SpendingConstraint, &format!("sc capped={capped} seed {seed}"));
        }
    }
}
