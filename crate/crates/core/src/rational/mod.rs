//! Exact rational equilibria.
//!
//! A numeric equilibrium fixes the support: which goods each buyer buys,
//! which earning or utility caps bind, and for segment utilities which
//! segments are full, partial or empty. On that support the equilibrium is a
//! point of a polyhedron in `(p, alpha, b)` whose data are the instance
//! parameters, so it can be computed with exact arithmetic. Here `alpha_i`
//! is buyer `i`'s price per util.

mod exact;

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::model::{MarketInstance, ModelKind, UtilityKind};
use crate::solver::Equilibrium;

use exact::{minimize, solve_equalities, EqSolve, Lp, Q};

/// A big rational that serializes as `"num/den"`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rat(pub BigRational);

impl Rat {
    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }
}

impl fmt::Display for Rat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.0.numer(), self.0.denom())
    }
}

impl FromStr for Rat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (num, den) = s.split_once('/').unwrap_or((s, "1"));
        let num: BigInt = num.trim().parse().map_err(|e| format!("bad numerator in `{s}`: {e}"))?;
        let den: BigInt = den.trim().parse().map_err(|e| format!("bad denominator in `{s}`: {e}"))?;
        if den.is_zero() {
            return Err(format!("zero denominator in `{s}`"));
        }
        Ok(Rat(BigRational::new(num, den)))
    }
}

impl Serialize for Rat {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Rat {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentClass {
    /// Filled to its length; its rate is at least the buyer's best.
    Full,
    /// Partly filled; its rate equals the buyer's best.
    Partial,
    /// Unused; its rate is at most the buyer's best.
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportStructure {
    pub model: ModelKind,
    /// Goods each buyer spends on.
    pub purchases: Vec<Vec<usize>>,
    /// Segment classes per buyer, good and segment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segments: Option<Vec<Vec<Vec<SegmentClass>>>>,
    /// Goods at their earning cap, or buyers at their utility cap under UR.
    pub binding: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationalEquilibrium {
    pub prices: Vec<Rat>,
    pub spending: Vec<Vec<Rat>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment_spending: Option<Vec<Vec<Vec<Rat>>>>,
    /// Price per util of each buyer.
    pub alpha: Vec<Rat>,
}

impl RationalEquilibrium {
    pub fn prices_f64(&self) -> Vec<f64> {
        self.prices.iter().map(Rat::to_f64).collect()
    }

    /// Floating-point copy, for the numeric checker.
    pub fn to_equilibrium(&self, inst: &MarketInstance) -> Equilibrium {
        let f = |row: &Vec<Rat>| row.iter().map(Rat::to_f64).collect::<Vec<_>>();
        Equilibrium::from_prices(
            inst,
            self.prices_f64(),
            self.spending.iter().map(f).collect(),
            self.segment_spending
                .as_ref()
                .map(|s| s.iter().map(|per| per.iter().map(f).collect()).collect()),
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("rational equilibrium serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RationalError {
    #[error("ambiguous support: {0}")]
    AmbiguousSupport(String),
    #[error("degenerate support: {0}")]
    DegenerateSupport(String),
    #[error("parameter is not a finite rational: {0}")]
    IrrationalParameters(String),
    #[error("exact extraction covers linear and spending-constraint utilities only: {0}")]
    Unsupported(String),
}

/// Rational value of `x`: the simplest continued-fraction convergent within
/// `1e-15` relative, falling back to the exact binary value.
pub fn to_rational(x: f64) -> Result<BigRational, RationalError> {
    if !x.is_finite() {
        return Err(RationalError::IrrationalParameters(format!("{x}")));
    }
    let target = x.abs();
    let (mut h0, mut h1) = (BigInt::from(0), BigInt::from(1));
    let (mut k0, mut k1) = (BigInt::from(1), BigInt::from(0));
    let mut rest = target;
    for _ in 0..64 {
        let a = rest.floor();
        let Some(ai) = BigInt::from_f64(a) else { break };
        let h2 = &ai * &h1 + &h0;
        let k2 = &ai * &k1 + &k0;
        h0 = std::mem::replace(&mut h1, h2);
        k0 = std::mem::replace(&mut k1, k2);
        let approx = BigRational::new(h1.clone(), k1.clone());
        let err = (approx.to_f64().unwrap_or(f64::INFINITY) - target).abs();
        if err <= 1e-15 * target.max(1.0) && approx.to_f64() == Some(target) {
            return Ok(if x < 0.0 { -approx } else { approx });
        }
        let frac = rest - a;
        if frac <= 0.0 || k1.bits() > 60 {
            break;
        }
        rest = 1.0 / frac;
    }
    BigRational::from_float(x).ok_or_else(|| RationalError::IrrationalParameters(format!("{x}")))
}

fn q(x: f64) -> Result<Q, RationalError> {
    to_rational(x)
}

fn support_model(inst: &MarketInstance) -> Result<ModelKind, RationalError> {
    let mut kinds = inst.buyers.iter().map(|b| &b.utility);
    if kinds.clone().all(|u| matches!(u, UtilityKind::SpendingConstraint { .. })) {
        return Ok(ModelKind::SpendingConstraint);
    }
    if !kinds.all(|u| matches!(u, UtilityKind::Linear)) {
        return Err(RationalError::Unsupported(
            "buyers must all be linear or all spending-constraint".into(),
        ));
    }
    Ok(if inst.has_utility_caps() {
        ModelKind::UtilityRestricted
    } else if inst.has_spending_caps() {
        ModelKind::SpendingRestricted
    } else {
        ModelKind::Fisher
    })
}

/// Reads the support of `eq`: entries above `tol` carry money, totals within
/// `tol` of a cap bind.
pub fn detect_support(
    eq: &Equilibrium,
    inst: &MarketInstance,
    tol: f64,
) -> Result<SupportStructure, RationalError> {
    let model = support_model(inst)?;
    let (n, m) = (inst.n(), inst.m());
    let ambiguous = |x: f64, cap: f64, what: String| {
        if x.abs() <= tol && cap.is_finite() && (x - cap).abs() <= tol {
            Err(RationalError::AmbiguousSupport(what))
        } else {
            Ok(())
        }
    };
    let mut purchases = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..m {
            let b = eq.spending[i][j];
            ambiguous(b, inst.cap(j), format!("spending of buyer {i} on good {j}"))?;
            if b > tol {
                purchases[i].push(j);
            }
        }
    }
    let mut segments = None;
    if model == ModelKind::SpendingConstraint {
        let mut classes = vec![vec![Vec::new(); m]; n];
        for i in 0..n {
            for j in 0..m {
                let mut left = eq.spending[i][j];
                for (l, seg) in inst.segments(i, j).iter().enumerate() {
                    let s = match &eq.segment_spending {
                        Some(ss) => ss[i][j][l],
                        None => {
                            let take = left.min(seg.length).max(0.0);
                            left -= take;
                            take
                        }
                    };
                    ambiguous(s, seg.length, format!("segment {l} of buyer {i} on good {j}"))?;
                    classes[i][j].push(if (s - seg.length).abs() <= tol {
                        SegmentClass::Full
                    } else if s <= tol {
                        SegmentClass::Empty
                    } else {
                        SegmentClass::Partial
                    });
                }
            }
        }
        segments = Some(classes);
    }
    let binding = if model == ModelKind::UtilityRestricted {
        (0..n)
            .filter(|&i| {
                let d = inst.utility_cap(i);
                d.is_finite() && (eq.utilities[i] - d).abs() <= tol
            })
            .collect()
    } else {
        let q = eq.q();
        let mut out = Vec::new();
        for j in 0..m {
            let c = inst.cap(j);
            ambiguous(q[j], c, format!("money on good {j}"))?;
            if c.is_finite() && (q[j] - c).abs() <= tol {
                out.push(j);
            }
        }
        out
    };
    Ok(SupportStructure {
        model,
        purchases,
        segments,
        binding,
    })
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Rel {
    Eq,
    Le,
}

/// The support polyhedron: rows over `(p, alpha, b)` with `z >= 0`.
struct Polyhedron {
    nvars: usize,
    rows: Vec<(Vec<(usize, Q)>, Rel, Q)>,
    /// Variable of each purchased edge `(i, j)`.
    edge_vars: Vec<((usize, usize), usize)>,
    /// Variable of each partial segment `(i, j, l)`.
    seg_vars: Vec<((usize, usize, usize), usize)>,
}

fn build_polyhedron(inst: &MarketInstance, s: &SupportStructure) -> Result<Polyhedron, RationalError> {
    let (n, m) = (inst.n(), inst.m());
    if s.purchases.len() != n || s.purchases.iter().flatten().any(|&j| j >= m) {
        return Err(RationalError::DegenerateSupport("purchase sets do not fit the instance".into()));
    }
    let p = |j: usize| j;
    let alpha = |i: usize| m + i;
    let mut nvars = m + n;
    let mut rows = Vec::new();
    let mut edge_vars = Vec::new();
    let mut seg_vars = Vec::new();
    let one = Q::from_integer(1.into());
    let zero = Q::zero();
    let binds = |k: usize| s.binding.contains(&k);
    // Money of each buyer and good as (variable terms, constant).
    let mut by_buyer: Vec<(Vec<(usize, Q)>, Q)> = vec![(Vec::new(), zero.clone()); n];
    let mut by_good: Vec<(Vec<(usize, Q)>, Q)> = vec![(Vec::new(), zero.clone()); m];

    if s.model == ModelKind::SpendingConstraint {
        let classes = s
            .segments
            .as_ref()
            .ok_or_else(|| RationalError::DegenerateSupport("segment classes missing".into()))?;
        for i in 0..n {
            for j in 0..m {
                let segs = inst.segments(i, j);
                if classes.get(i).and_then(|c| c.get(j)).map(Vec::len) != Some(segs.len()) {
                    return Err(RationalError::DegenerateSupport(format!(
                        "segment classes of buyer {i} on good {j}"
                    )));
                }
                for (l, seg) in segs.iter().enumerate() {
                    let rate = q(seg.rate)?;
                    let rate_row = vec![(alpha(i), rate), (p(j), -one.clone())];
                    match classes[i][j][l] {
                        SegmentClass::Full => {
                            let len = q(seg.length)?;
                            by_buyer[i].1 += &len;
                            by_good[j].1 += &len;
                            let neg = rate_row.into_iter().map(|(k, c)| (k, -c)).collect();
                            rows.push((neg, Rel::Le, zero.clone()));
                        }
                        SegmentClass::Partial => {
                            let v = nvars;
                            nvars += 1;
                            seg_vars.push(((i, j, l), v));
                            by_buyer[i].0.push((v, one.clone()));
                            by_good[j].0.push((v, one.clone()));
                            rows.push((rate_row, Rel::Eq, zero.clone()));
                            rows.push((vec![(v, one.clone())], Rel::Le, q(seg.length)?));
                        }
                        SegmentClass::Empty => rows.push((rate_row, Rel::Le, zero.clone())),
                    }
                }
            }
        }
    } else {
        for i in 0..n {
            for j in 0..m {
                let v = q(inst.value(i, j))?;
                let bought = s.purchases[i].contains(&j);
                if bought {
                    let var = nvars;
                    nvars += 1;
                    edge_vars.push(((i, j), var));
                    by_buyer[i].0.push((var, one.clone()));
                    by_good[j].0.push((var, one.clone()));
                    rows.push((vec![(alpha(i), v), (p(j), -one.clone())], Rel::Eq, zero.clone()));
                } else if v.is_positive() {
                    rows.push((vec![(alpha(i), v), (p(j), -one.clone())], Rel::Le, zero.clone()));
                }
            }
        }
    }

    for i in 0..n {
        let (terms, fixed) = by_buyer[i].clone();
        let budget = q(inst.buyers[i].budget)?;
        if s.model == ModelKind::UtilityRestricted {
            let d = inst.utility_cap(i);
            if binds(i) {
                let d = q(d)?;
                let mut row = terms.clone();
                row.push((alpha(i), -d));
                rows.push((row, Rel::Eq, -fixed.clone()));
                rows.push((terms, Rel::Le, budget - fixed));
            } else {
                rows.push((terms, Rel::Eq, budget.clone() - fixed));
                if d.is_finite() {
                    rows.push((vec![(alpha(i), -q(d)?)], Rel::Le, -budget));
                }
            }
        } else {
            rows.push((terms, Rel::Eq, budget - fixed));
        }
    }
    for j in 0..m {
        let (terms, fixed) = by_good[j].clone();
        let cap = inst.cap(j);
        let caps_apply = s.model != ModelKind::UtilityRestricted && cap.is_finite();
        if caps_apply && binds(j) {
            let c = q(cap)?;
            rows.push((terms, Rel::Eq, c.clone() - fixed));
            rows.push((vec![(p(j), -one.clone())], Rel::Le, -c));
        } else {
            let mut row = terms;
            row.push((p(j), -one.clone()));
            rows.push((row, Rel::Eq, -fixed));
            if caps_apply {
                rows.push((vec![(p(j), one.clone())], Rel::Le, q(cap)?));
            }
        }
    }
    Ok(Polyhedron {
        nvars,
        rows,
        edge_vars,
        seg_vars,
    })
}

fn dense(terms: &[(usize, Q)], nvars: usize) -> Vec<Q> {
    let mut row = vec![Q::zero(); nvars];
    for (k, c) in terms {
        row[*k] += c;
    }
    row
}

fn satisfies(poly: &Polyhedron, z: &[Q]) -> bool {
    if z.iter().any(Signed::is_negative) {
        return false;
    }
    poly.rows.iter().all(|(terms, rel, rhs)| {
        let lhs: Q = terms.iter().map(|(k, c)| c * &z[*k]).fold(Q::zero(), |a, v| a + v);
        match rel {
            Rel::Eq => lhs == *rhs,
            Rel::Le => lhs <= *rhs,
        }
    })
}

/// Solves the support polyhedron exactly. A unique solution of the equality
/// rows is returned after checking the inequalities; otherwise prices are
/// minimized lexicographically by successive linear programs.
pub fn exact_equilibrium(
    inst: &MarketInstance,
    support: &SupportStructure,
) -> Result<RationalEquilibrium, RationalError> {
    let model = support_model(inst)?;
    if model != support.model {
        return Err(RationalError::DegenerateSupport(format!(
            "support was read as {} but the instance is {}",
            support.model.name(),
            model.name()
        )));
    }
    let poly = build_polyhedron(inst, support)?;
    let nv = poly.nvars;
    let (mut a_eq, mut b_eq, mut a_le, mut b_le) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (terms, rel, rhs) in &poly.rows {
        match rel {
            Rel::Eq => {
                a_eq.push(dense(terms, nv));
                b_eq.push(rhs.clone());
            }
            Rel::Le => {
                a_le.push(dense(terms, nv));
                b_le.push(rhs.clone());
            }
        }
    }
    let z = match solve_equalities(&a_eq, &b_eq, nv) {
        EqSolve::Inconsistent => {
            return Err(RationalError::DegenerateSupport("equality rows are inconsistent".into()))
        }
        EqSolve::Unique(z) => {
            if !satisfies(&poly, &z) {
                return Err(RationalError::DegenerateSupport(
                    "the unique solution of the equality rows violates an inequality".into(),
                ));
            }
            z
        }
        EqSolve::Underdetermined => {
            let mut z = None;
            for j in 0..inst.m() {
                let mut c = vec![Q::zero(); nv];
                c[j] = Q::from_integer(1.into());
                match minimize(&c, &a_eq, &b_eq, &a_le, &b_le) {
                    Lp::Optimal(sol) => {
                        let mut fix = vec![Q::zero(); nv];
                        fix[j] = Q::from_integer(1.into());
                        a_eq.push(fix);
                        b_eq.push(sol[j].clone());
                        z = Some(sol);
                    }
                    Lp::Infeasible => {
                        return Err(RationalError::DegenerateSupport(
                            "the support polyhedron is empty".into(),
                        ))
                    }
                    Lp::Unbounded => unreachable!("prices are bounded below by zero"),
                }
            }
            let z = match z {
                Some(z) => z,
                None => match minimize(&vec![Q::zero(); nv], &a_eq, &b_eq, &a_le, &b_le) {
                    Lp::Optimal(sol) => sol,
                    _ => {
                        return Err(RationalError::DegenerateSupport(
                            "the support polyhedron is empty".into(),
                        ))
                    }
                },
            };
            debug_assert!(satisfies(&poly, &z));
            z
        }
    };
    assemble(inst, support, &poly, &z)
}

fn assemble(
    inst: &MarketInstance,
    support: &SupportStructure,
    poly: &Polyhedron,
    z: &[Q],
) -> Result<RationalEquilibrium, RationalError> {
    let (n, m) = (inst.n(), inst.m());
    let mut spending = vec![vec![Q::zero(); m]; n];
    for &((i, j), k) in &poly.edge_vars {
        spending[i][j] = z[k].clone();
    }
    let mut segment_spending = None;
    if let Some(classes) = &support.segments {
        let mut segs: Vec<Vec<Vec<Q>>> = Vec::with_capacity(n);
        for i in 0..n {
            let mut row = Vec::with_capacity(m);
            for j in 0..m {
                let mut cell = Vec::new();
                for (l, seg) in inst.segments(i, j).iter().enumerate() {
                    cell.push(match classes[i][j][l] {
                        SegmentClass::Full => q(seg.length)?,
                        _ => Q::zero(),
                    });
                }
                row.push(cell);
            }
            segs.push(row);
        }
        for &((i, j, l), k) in &poly.seg_vars {
            segs[i][j][l] = z[k].clone();
        }
        for i in 0..n {
            for j in 0..m {
                spending[i][j] = segs[i][j].iter().fold(Q::zero(), |a, v| a + v);
            }
        }
        segment_spending = Some(segs);
    }
    let wrap = |v: &Q| Rat(v.clone());
    Ok(RationalEquilibrium {
        prices: z[..m].iter().map(wrap).collect(),
        alpha: z[m..m + n].iter().map(wrap).collect(),
        spending: spending.iter().map(|r| r.iter().map(wrap).collect()).collect(),
        segment_spending: segment_spending
            .map(|s| s.iter().map(|r| r.iter().map(|c| c.iter().map(wrap).collect()).collect()).collect()),
    })
}

/// Whether `req` satisfies every row of the support polyhedron exactly.
pub fn verify_exact(req: &RationalEquilibrium, inst: &MarketInstance, support: &SupportStructure) -> bool {
    let Ok(poly) = build_polyhedron(inst, support) else {
        return false;
    };
    let (n, m) = (inst.n(), inst.m());
    if req.prices.len() != m
        || req.alpha.len() != n
        || req.spending.len() != n
        || req.spending.iter().any(|r| r.len() != m)
    {
        return false;
    }
    let mut z = vec![Q::zero(); poly.nvars];
    for j in 0..m {
        z[j] = req.prices[j].0.clone();
    }
    for i in 0..n {
        z[m + i] = req.alpha[i].0.clone();
    }
    if support.model == ModelKind::SpendingConstraint {
        let (Some(segs), Some(classes)) = (&req.segment_spending, &support.segments) else {
            return false;
        };
        for i in 0..n {
            for j in 0..m {
                let Some(row) = segs.get(i).and_then(|r| r.get(j)) else { return false };
                let lens = inst.segments(i, j);
                if row.len() != lens.len() {
                    return false;
                }
                let mut total = Q::zero();
                for (l, seg) in lens.iter().enumerate() {
                    let val = &row[l].0;
                    total += val;
                    let ok = match classes[i][j][l] {
                        SegmentClass::Full => q(seg.length).is_ok_and(|len| *val == len),
                        SegmentClass::Empty => val.is_zero(),
                        SegmentClass::Partial => true,
                    };
                    if !ok {
                        return false;
                    }
                }
                if total != req.spending[i][j].0 {
                    return false;
                }
            }
        }
        for &((i, j, l), k) in &poly.seg_vars {
            z[k] = segs[i][j][l].0.clone();
        }
    } else {
        for i in 0..n {
            for j in 0..m {
                if !support.purchases[i].contains(&j) && !req.spending[i][j].0.is_zero() {
                    return false;
                }
            }
        }
        for &((i, j), k) in &poly.edge_vars {
            z[k] = req.spending[i][j].0.clone();
        }
    }
    satisfies(&poly, &z)
}

#[cfg(test)]
mod tests;
