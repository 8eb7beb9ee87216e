//! Explicit convex programs: variables, concave objective and constraint rows.

use crate::conjugate::xlogx;
use crate::model::{MarketInstance, ModelKind, UtilityKind};

use super::{ces_utility, Equilibrium, SolveError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProgramKind {
    /// Spending program of a linear Fisher market.
    Shmyrev,
    /// Spending program with earning caps `q_j <= c_j`.
    FSr,
    /// Segment spending program, earning caps optional.
    SpendingConstraint,
    UrLinear,
    UrLeontief,
    UrCes,
    /// Spending program with a keep-money variable per buyer.
    QuasiLinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Spend { buyer: usize, good: usize },
    SegSpend { buyer: usize, good: usize, seg: usize },
    Earn { good: usize },
    Alloc { buyer: usize, good: usize },
    Utility { buyer: usize },
    Leftover { buyer: usize },
}

/// What a constraint row expresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConstraintId {
    /// `sum_j b_ij (+ leftover) = B_i`.
    Budget,
    /// `q_j = sum_i b_ij`.
    SpendingDef,
    /// `q_j <= c_j`.
    SpendingCap,
    /// `b_ij^l <= length`.
    SegmentCap,
    /// `u_i <= sum_j v_ij x_ij`.
    UtilityDef,
    /// `u_i <= d_i`.
    UtilityCap,
    /// `sum_i x_ij <= 1`.
    Supply,
    /// `u_i phi_ij = x_ij`.
    LeontiefLink,
    /// `u_i <= (sum_j a_ij x_ij^rho)^(1/rho)`.
    CesLink,
    /// Every variable is nonnegative; not stored as rows.
    Nonneg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Eq,
    Le,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RowKind {
    Linear {
        coeffs: Vec<(usize, f64)>,
        sense: Sense,
        rhs: f64,
    },
    /// `u_i - ces_i(x_i) <= 0`; convex because the CES aggregate is concave.
    Ces { buyer: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub id: ConstraintId,
    /// Buyer, good or variable the row is attached to.
    pub index: usize,
    pub kind: RowKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProgramSpec {
    pub kind: ProgramKind,
    pub model: ModelKind,
    pub instance: MarketInstance,
    pub vars: Vec<VarKind>,
    pub rows: Vec<Row>,
}

impl ProgramSpec {
    pub fn var_index(&self, var: VarKind) -> Option<usize> {
        self.vars.iter().position(|v| *v == var)
    }

    pub fn count(&self, pred: impl Fn(&VarKind) -> bool) -> usize {
        self.vars.iter().filter(|v| pred(v)).count()
    }

    pub fn rows_with(&self, id: ConstraintId) -> usize {
        self.rows.iter().filter(|r| r.id == id).count()
    }

    fn seg_rate(&self, buyer: usize, good: usize, seg: usize) -> f64 {
        self.instance.segments(buyer, good)[seg].rate
    }

    /// Concave objective at `point`.
    pub fn objective(&self, point: &[f64]) -> f64 {
        let inst = &self.instance;
        self.vars
            .iter()
            .zip(point)
            .map(|(var, &z)| match *var {
                VarKind::Spend { buyer, good } => {
                    if z > 0.0 {
                        z * inst.value(buyer, good).ln()
                    } else {
                        0.0
                    }
                }
                VarKind::SegSpend { buyer, good, seg } => {
                    if z > 0.0 {
                        z * self.seg_rate(buyer, good, seg).ln()
                    } else {
                        0.0
                    }
                }
                VarKind::Earn { .. } => z - xlogx(z),
                VarKind::Utility { buyer } => inst.buyers[buyer].budget * z.ln(),
                VarKind::Alloc { .. } | VarKind::Leftover { .. } => 0.0,
            })
            .sum()
    }

    pub fn gradient(&self, point: &[f64]) -> Vec<f64> {
        let inst = &self.instance;
        self.vars
            .iter()
            .zip(point)
            .map(|(var, &z)| match *var {
                VarKind::Spend { buyer, good } => inst.value(buyer, good).ln(),
                VarKind::SegSpend { buyer, good, seg } => self.seg_rate(buyer, good, seg).ln(),
                VarKind::Earn { .. } => -z.ln(),
                VarKind::Utility { buyer } => inst.buyers[buyer].budget / z,
                VarKind::Alloc { .. } | VarKind::Leftover { .. } => 0.0,
            })
            .collect()
    }

    /// The program's variables read off an equilibrium.
    pub fn primal_point(&self, eq: &Equilibrium) -> Vec<f64> {
        let q = eq.q();
        self.vars
            .iter()
            .map(|var| match *var {
                VarKind::Spend { buyer, good } => eq.spending[buyer][good],
                VarKind::SegSpend { buyer, good, seg } => eq
                    .segment_spending
                    .as_ref()
                    .map_or(0.0, |s| s[buyer][good][seg]),
                VarKind::Earn { good } => q[good],
                VarKind::Alloc { buyer, good } => eq.allocation[buyer][good],
                VarKind::Utility { buyer } => eq.utilities[buyer],
                VarKind::Leftover { buyer } => {
                    let spent: f64 = eq.spending[buyer].iter().sum();
                    self.instance.buyers[buyer].budget - spent
                }
            })
            .collect()
    }

    /// Largest violation over all rows and the sign constraints.
    pub fn max_violation(&self, point: &[f64]) -> f64 {
        let mut worst = point.iter().fold(0.0_f64, |a, &z| a.max(-z));
        for row in &self.rows {
            let v = match &row.kind {
                RowKind::Linear { coeffs, sense, rhs } => {
                    let lhs: f64 = coeffs.iter().map(|(k, c)| c * point[*k]).sum();
                    match sense {
                        Sense::Eq => (lhs - rhs).abs(),
                        Sense::Le => (lhs - rhs).max(0.0),
                    }
                }
                RowKind::Ces { buyer } => {
                    let buyer = *buyer;
                    let UtilityKind::Ces { rho } = self.instance.buyers[buyer].utility else {
                        unreachable!("CES rows are only built for CES buyers")
                    };
                    let x: Vec<f64> = (0..self.instance.m())
                        .map(|j| {
                            self.var_index(VarKind::Alloc { buyer, good: j })
                                .map_or(0.0, |k| point[k])
                        })
                        .collect();
                    let u = self
                        .var_index(VarKind::Utility { buyer })
                        .map_or(0.0, |k| point[k]);
                    (u - ces_utility(&self.instance.buyers[buyer].values, rho, &x)).max(0.0)
                }
            };
            worst = worst.max(v);
        }
        worst
    }
}

fn all_linear(inst: &MarketInstance) -> bool {
    inst.buyers
        .iter()
        .all(|b| matches!(b.utility, UtilityKind::Linear))
}

fn mismatch(msg: &str) -> SolveError {
    SolveError::ModelMismatch(msg.into())
}

/// Builds the program that computes `model`'s equilibrium on `inst`.
pub fn build_program(inst: &MarketInstance, model: ModelKind) -> Result<ProgramSpec, SolveError> {
    let kind = match model {
        ModelKind::Fisher => {
            if !all_linear(inst) {
                return Err(mismatch("fisher needs linear utilities"));
            }
            if inst.has_spending_caps() || inst.has_utility_caps() {
                return Err(mismatch("fisher takes no caps; use sr or ur"));
            }
            ProgramKind::Shmyrev
        }
        ModelKind::SpendingRestricted => {
            if !all_linear(inst) {
                return Err(mismatch("sr needs linear utilities"));
            }
            if !inst.has_spending_caps() {
                return Err(mismatch("sr needs at least one spending cap"));
            }
            if inst.has_utility_caps() {
                return Err(mismatch("sr takes no utility caps"));
            }
            ProgramKind::FSr
        }
        ModelKind::UtilityRestricted => {
            if !inst.has_utility_caps() {
                return Err(mismatch("ur needs at least one utility cap"));
            }
            if inst.has_spending_caps() {
                return Err(mismatch("ur takes no spending caps"));
            }
            let first = &inst.buyers[0].utility;
            let same = |f: fn(&UtilityKind) -> bool| inst.buyers.iter().all(|b| f(&b.utility));
            match first {
                UtilityKind::Linear if same(|u| matches!(u, UtilityKind::Linear)) => {
                    ProgramKind::UrLinear
                }
                UtilityKind::Leontief { .. } if same(|u| matches!(u, UtilityKind::Leontief { .. })) => {
                    ProgramKind::UrLeontief
                }
                UtilityKind::Ces { .. } if same(|u| matches!(u, UtilityKind::Ces { .. })) => {
                    ProgramKind::UrCes
                }
                _ => {
                    return Err(mismatch(
                        "ur needs all buyers linear, all leontief or all ces",
                    ))
                }
            }
        }
        ModelKind::QuasiLinear => {
            if !inst
                .buyers
                .iter()
                .all(|b| matches!(b.utility, UtilityKind::QuasiLinear))
            {
                return Err(mismatch("ql needs quasi-linear utilities"));
            }
            if inst.has_spending_caps() || inst.has_utility_caps() {
                return Err(mismatch("ql takes no caps"));
            }
            ProgramKind::QuasiLinear
        }
        ModelKind::SpendingConstraint => {
            if !inst
                .buyers
                .iter()
                .all(|b| matches!(b.utility, UtilityKind::SpendingConstraint { .. }))
            {
                return Err(mismatch("sc needs spending-constraint utilities"));
            }
            if inst.has_utility_caps() {
                return Err(mismatch("sc takes no utility caps"));
            }
            ProgramKind::SpendingConstraint
        }
    };
    let mut b = Builder::default();
    match kind {
        ProgramKind::Shmyrev | ProgramKind::FSr | ProgramKind::QuasiLinear => {
            b.spending(inst, kind == ProgramKind::QuasiLinear)
        }
        ProgramKind::SpendingConstraint => b.segments(inst),
        ProgramKind::UrLinear | ProgramKind::UrLeontief | ProgramKind::UrCes => b.utility(inst, kind),
    }
    Ok(ProgramSpec {
        kind,
        model,
        instance: inst.clone(),
        vars: b.vars,
        rows: b.rows,
    })
}

#[derive(Default)]
struct Builder {
    vars: Vec<VarKind>,
    rows: Vec<Row>,
}

impl Builder {
    fn var(&mut self, v: VarKind) -> usize {
        self.vars.push(v);
        self.vars.len() - 1
    }

    fn linear(&mut self, id: ConstraintId, index: usize, coeffs: Vec<(usize, f64)>, sense: Sense, rhs: f64) {
        self.rows.push(Row {
            id,
            index,
            kind: RowKind::Linear { coeffs, sense, rhs },
        });
    }

    /// Budget and earning rows shared by the spending programs, given the
    /// spend variables of each buyer and good.
    fn earning_rows(&mut self, inst: &MarketInstance, by_buyer: Vec<Vec<usize>>, by_good: Vec<Vec<usize>>) {
        for (i, ks) in by_buyer.into_iter().enumerate() {
            let coeffs = ks.into_iter().map(|k| (k, 1.0)).collect();
            self.linear(ConstraintId::Budget, i, coeffs, Sense::Eq, inst.buyers[i].budget);
        }
        for (j, ks) in by_good.into_iter().enumerate() {
            let q = self.var(VarKind::Earn { good: j });
            let mut coeffs: Vec<(usize, f64)> = ks.into_iter().map(|k| (k, 1.0)).collect();
            coeffs.push((q, -1.0));
            self.linear(ConstraintId::SpendingDef, j, coeffs, Sense::Eq, 0.0);
            if inst.cap(j).is_finite() {
                self.linear(ConstraintId::SpendingCap, j, vec![(q, 1.0)], Sense::Le, inst.cap(j));
            }
        }
    }

    fn spending(&mut self, inst: &MarketInstance, keep: bool) {
        let mut by_buyer = vec![Vec::new(); inst.n()];
        let mut by_good = vec![Vec::new(); inst.m()];
        for i in 0..inst.n() {
            for j in 0..inst.m() {
                if inst.value(i, j) > 0.0 {
                    let k = self.var(VarKind::Spend { buyer: i, good: j });
                    by_buyer[i].push(k);
                    by_good[j].push(k);
                }
            }
            if keep {
                let k = self.var(VarKind::Leftover { buyer: i });
                by_buyer[i].push(k);
            }
        }
        self.earning_rows(inst, by_buyer, by_good);
    }

    fn segments(&mut self, inst: &MarketInstance) {
        let mut by_buyer = vec![Vec::new(); inst.n()];
        let mut by_good = vec![Vec::new(); inst.m()];
        for i in 0..inst.n() {
            for j in 0..inst.m() {
                for (l, seg) in inst.segments(i, j).iter().enumerate() {
                    let k = self.var(VarKind::SegSpend { buyer: i, good: j, seg: l });
                    by_buyer[i].push(k);
                    by_good[j].push(k);
                    self.linear(ConstraintId::SegmentCap, k, vec![(k, 1.0)], Sense::Le, seg.length);
                }
            }
        }
        self.earning_rows(inst, by_buyer, by_good);
    }

    fn utility(&mut self, inst: &MarketInstance, kind: ProgramKind) {
        let mut by_good: Vec<Vec<usize>> = vec![Vec::new(); inst.m()];
        for i in 0..inst.n() {
            let u = self.var(VarKind::Utility { buyer: i });
            let buyer = &inst.buyers[i];
            match (&buyer.utility, kind) {
                (UtilityKind::Leontief { phi }, ProgramKind::UrLeontief) => {
                    for j in 0..inst.m() {
                        if phi[j] > 0.0 {
                            let x = self.var(VarKind::Alloc { buyer: i, good: j });
                            by_good[j].push(x);
                            self.linear(
                                ConstraintId::LeontiefLink,
                                i,
                                vec![(u, phi[j]), (x, -1.0)],
                                Sense::Eq,
                                0.0,
                            );
                        }
                    }
                }
                (_, ProgramKind::UrCes) => {
                    for (j, goods) in by_good.iter_mut().enumerate() {
                        let x = self.var(VarKind::Alloc { buyer: i, good: j });
                        goods.push(x);
                    }
                    self.rows.push(Row {
                        id: ConstraintId::CesLink,
                        index: i,
                        kind: RowKind::Ces { buyer: i },
                    });
                }
                _ => {
                    let mut coeffs = vec![(u, 1.0)];
                    for j in 0..inst.m() {
                        let v = inst.value(i, j);
                        if v > 0.0 {
                            let x = self.var(VarKind::Alloc { buyer: i, good: j });
                            by_good[j].push(x);
                            coeffs.push((x, -v));
                        }
                    }
                    self.linear(ConstraintId::UtilityDef, i, coeffs, Sense::Le, 0.0);
                }
            }
            let d = inst.utility_cap(i);
            if d.is_finite() {
                self.linear(ConstraintId::UtilityCap, i, vec![(u, 1.0)], Sense::Le, d);
            }
        }
        for (j, ks) in by_good.into_iter().enumerate() {
            let coeffs = ks.into_iter().map(|k| (k, 1.0)).collect();
            self.linear(ConstraintId::Supply, j, coeffs, Sense::Le, 1.0);
        }
    }
}
