//! Market instances, validation and valuation rescaling.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::solver::Equilibrium;

/// One linear piece of a spending-constraint utility: `rate` utils per unit of
/// money, available for at most `length` money.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub rate: f64,
    pub length: f64,
}

/// Utility family of a buyer.
///
/// CES weights are taken from the buyer's `values` row; Leontief buyers need
/// `x_ij / phi_ij` of good `j` per util. Spending-constraint buyers carry one
/// segment list per good, ordered by decreasing rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawUtility", into = "RawUtility")]
pub enum UtilityKind {
    Linear,
    QuasiLinear,
    Leontief { phi: Vec<f64> },
    Ces { rho: f64 },
    SpendingConstraint { segments: Vec<Vec<Segment>> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RawKind {
    Linear,
    Quasilinear,
    Leontief,
    Ces,
    SpendingConstraint,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawUtility {
    kind: RawKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    phi: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    segments: Option<Vec<Vec<Segment>>>,
}

impl TryFrom<RawUtility> for UtilityKind {
    type Error = String;

    fn try_from(raw: RawUtility) -> Result<Self, Self::Error> {
        let extra = |name: &str| format!("field `{name}` is not allowed for this utility kind");
        match raw.kind {
            RawKind::Linear | RawKind::Quasilinear => {
                if raw.rho.is_some() {
                    return Err(extra("rho"));
                }
                if raw.phi.is_some() {
                    return Err(extra("phi"));
                }
                if raw.segments.is_some() {
                    return Err(extra("segments"));
                }
                Ok(if raw.kind == RawKind::Linear {
                    UtilityKind::Linear
                } else {
                    UtilityKind::QuasiLinear
                })
            }
            RawKind::Leontief => {
                if raw.rho.is_some() {
                    return Err(extra("rho"));
                }
                if raw.segments.is_some() {
                    return Err(extra("segments"));
                }
                let phi = raw.phi.ok_or("leontief utility requires `phi`")?;
                Ok(UtilityKind::Leontief { phi })
            }
            RawKind::Ces => {
                if raw.phi.is_some() {
                    return Err(extra("phi"));
                }
                if raw.segments.is_some() {
                    return Err(extra("segments"));
                }
                let rho = raw.rho.ok_or("ces utility requires `rho`")?;
                Ok(UtilityKind::Ces { rho })
            }
            RawKind::SpendingConstraint => {
                if raw.rho.is_some() {
                    return Err(extra("rho"));
                }
                if raw.phi.is_some() {
                    return Err(extra("phi"));
                }
                let segments = raw
                    .segments
                    .ok_or("spending_constraint utility requires `segments`")?;
                Ok(UtilityKind::SpendingConstraint { segments })
            }
        }
    }
}

impl From<UtilityKind> for RawUtility {
    fn from(kind: UtilityKind) -> Self {
        let mut raw = RawUtility {
            kind: RawKind::Linear,
            rho: None,
            phi: None,
            segments: None,
        };
        match kind {
            UtilityKind::Linear => {}
            UtilityKind::QuasiLinear => raw.kind = RawKind::Quasilinear,
            UtilityKind::Leontief { phi } => {
                raw.kind = RawKind::Leontief;
                raw.phi = Some(phi);
            }
            UtilityKind::Ces { rho } => {
                raw.kind = RawKind::Ces;
                raw.rho = Some(rho);
            }
            UtilityKind::SpendingConstraint { segments } => {
                raw.kind = RawKind::SpendingConstraint;
                raw.segments = Some(segments);
            }
        }
        raw
    }
}

impl UtilityKind {
    pub fn name(&self) -> &'static str {
        match self {
            UtilityKind::Linear => "linear",
            UtilityKind::QuasiLinear => "quasilinear",
            UtilityKind::Leontief { .. } => "leontief",
            UtilityKind::Ces { .. } => "ces",
            UtilityKind::SpendingConstraint { .. } => "spending_constraint",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Buyer {
    pub budget: f64,
    /// Per-good valuations. May be omitted for Leontief and
    /// spending-constraint buyers; validation fills it in.
    #[serde(default)]
    pub values: Vec<f64>,
    pub utility: UtilityKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utility_cap: Option<f64>,
}

impl Buyer {
    pub fn linear(budget: f64, values: Vec<f64>) -> Self {
        Buyer {
            budget,
            values,
            utility: UtilityKind::Linear,
            utility_cap: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Good {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spending_cap: Option<f64>,
}

/// Buyers and goods of a market. Every good has unit supply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketInstance {
    pub buyers: Vec<Buyer>,
    pub goods: Vec<Good>,
}

/// The market model a solve or check is performed under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Linear utilities, no caps.
    Fisher,
    /// Linear utilities with seller earning caps.
    SpendingRestricted,
    /// Buyer utility caps; linear, Leontief or CES utilities.
    UtilityRestricted,
    /// Quasi-linear utilities: unspent money is worth one util per unit.
    QuasiLinear,
    /// Spending-constraint utilities, optionally with earning caps.
    SpendingConstraint,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Fisher => "fisher",
            ModelKind::SpendingRestricted => "sr",
            ModelKind::UtilityRestricted => "ur",
            ModelKind::QuasiLinear => "ql",
            ModelKind::SpendingConstraint => "sc",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fisher" => Ok(ModelKind::Fisher),
            "sr" => Ok(ModelKind::SpendingRestricted),
            "ur" => Ok(ModelKind::UtilityRestricted),
            "ql" => Ok(ModelKind::QuasiLinear),
            "sc" => Ok(ModelKind::SpendingConstraint),
            other => Err(format!("unknown model `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("market has no buyers or no goods")]
    EmptyMarket,
    #[error("buyer {buyer}: budget must be positive and finite")]
    NegativeBudget { buyer: usize },
    #[error("buyer {buyer}: CES exponent {rho} outside rho < 1, rho != 0")]
    BadCesExponent { buyer: usize, rho: f64 },
    #[error("buyer {buyer}, good {good}: segment rates must strictly decrease")]
    NonDecreasingSegments { buyer: usize, good: usize },
    #[error("both spending caps and utility caps present")]
    MixedCaps,
    #[error("buyer {buyer}: utility cap must be positive")]
    EmptyDemand { buyer: usize },
    #[error("buyer {buyer}: `{field}` has {found} entries, expected {expected}")]
    ShapeMismatch {
        buyer: usize,
        field: &'static str,
        found: usize,
        expected: usize,
    },
    #[error("buyer {buyer}, good {good}: value must be finite and nonnegative")]
    InvalidValue { buyer: usize, good: usize },
    #[error("buyer {buyer}, good {good}: segment rate and length must be positive")]
    InvalidSegment { buyer: usize, good: usize },
    #[error("buyer {buyer}: needs a positive value for some good")]
    NoPositiveValue { buyer: usize },
    #[error("good {good}: spending cap must be positive and finite")]
    NonPositiveCap { good: usize },
}

impl MarketInstance {
    pub fn n(&self) -> usize {
        self.buyers.len()
    }

    pub fn m(&self) -> usize {
        self.goods.len()
    }

    pub fn budgets(&self) -> Vec<f64> {
        self.buyers.iter().map(|b| b.budget).collect()
    }

    pub fn total_budget(&self) -> f64 {
        self.buyers.iter().map(|b| b.budget).sum()
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.buyers[i].values[j]
    }

    pub fn has_spending_caps(&self) -> bool {
        self.goods.iter().any(|g| g.spending_cap.is_some())
    }

    pub fn has_utility_caps(&self) -> bool {
        self.buyers.iter().any(|b| b.utility_cap.is_some())
    }

    /// Earning cap of good `j`, infinite when absent.
    pub fn cap(&self, j: usize) -> f64 {
        self.goods[j].spending_cap.unwrap_or(f64::INFINITY)
    }

    /// Utility cap of buyer `i`, infinite when absent.
    pub fn utility_cap(&self, i: usize) -> f64 {
        self.buyers[i].utility_cap.unwrap_or(f64::INFINITY)
    }

    /// Spending-constraint segments of buyer `i` on good `j`, empty otherwise.
    pub fn segments(&self, i: usize, j: usize) -> &[Segment] {
        match &self.buyers[i].utility {
            UtilityKind::SpendingConstraint { segments } => &segments[j],
            _ => &[],
        }
    }

    /// Sum of caps, infinite if some good is uncapped.
    pub fn total_cap(&self) -> f64 {
        (0..self.m()).map(|j| self.cap(j)).sum()
    }

    pub fn from_json(text: &str) -> Result<Self, InstanceError> {
        let raw: MarketInstance = serde_json::from_str(text)?;
        Ok(validate_instance(raw)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serializes")
    }
}

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("malformed instance JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Invalid(#[from] ValidationError),
}

fn finite_nonneg(x: f64) -> bool {
    x.is_finite() && x >= 0.0
}

/// Checks every structural invariant and fills omitted value rows of
/// Leontief (zeros) and spending-constraint buyers (first segment rate).
pub fn validate_instance(mut raw: MarketInstance) -> Result<MarketInstance, ValidationError> {
    let n = raw.n();
    let m = raw.m();
    if n == 0 || m == 0 {
        return Err(ValidationError::EmptyMarket);
    }
    if raw.has_spending_caps() && raw.has_utility_caps() {
        return Err(ValidationError::MixedCaps);
    }
    for (j, g) in raw.goods.iter().enumerate() {
        if let Some(c) = g.spending_cap {
            if !(c.is_finite() && c > 0.0) {
                return Err(ValidationError::NonPositiveCap { good: j });
            }
        }
    }
    for (i, buyer) in raw.buyers.iter_mut().enumerate() {
        if !(buyer.budget.is_finite() && buyer.budget > 0.0) {
            return Err(ValidationError::NegativeBudget { buyer: i });
        }
        if let Some(d) = buyer.utility_cap {
            if !(d > 0.0) || d.is_nan() {
                return Err(ValidationError::EmptyDemand { buyer: i });
            }
        }
        let shape = |field: &'static str, found: usize| {
            if found == m {
                Ok(())
            } else {
                Err(ValidationError::ShapeMismatch {
                    buyer: i,
                    field,
                    found,
                    expected: m,
                })
            }
        };
        match &buyer.utility {
            UtilityKind::Leontief { phi } => {
                shape("phi", phi.len())?;
                if let Some(j) = phi.iter().position(|&f| !finite_nonneg(f)) {
                    return Err(ValidationError::InvalidValue { buyer: i, good: j });
                }
                if !phi.iter().any(|&f| f > 0.0) {
                    return Err(ValidationError::NoPositiveValue { buyer: i });
                }
                if buyer.values.is_empty() {
                    buyer.values = vec![0.0; m];
                }
            }
            UtilityKind::SpendingConstraint { segments } => {
                shape("segments", segments.len())?;
                for (j, segs) in segments.iter().enumerate() {
                    for s in segs {
                        if !(s.rate.is_finite() && s.rate > 0.0 && s.length.is_finite() && s.length > 0.0) {
                            return Err(ValidationError::InvalidSegment { buyer: i, good: j });
                        }
                    }
                    if segs.windows(2).any(|w| w[1].rate >= w[0].rate) {
                        return Err(ValidationError::NonDecreasingSegments { buyer: i, good: j });
                    }
                }
                if !segments.iter().any(|s| !s.is_empty()) {
                    return Err(ValidationError::NoPositiveValue { buyer: i });
                }
                if buyer.values.is_empty() {
                    buyer.values = segments
                        .iter()
                        .map(|s| s.first().map_or(0.0, |seg| seg.rate))
                        .collect();
                }
            }
            UtilityKind::Ces { rho } => {
                if !(rho.is_finite() && *rho < 1.0 && *rho != 0.0) {
                    return Err(ValidationError::BadCesExponent { buyer: i, rho: *rho });
                }
            }
            UtilityKind::Linear | UtilityKind::QuasiLinear => {}
        }
        shape("values", buyer.values.len())?;
        if let Some(j) = buyer.values.iter().position(|&v| !finite_nonneg(v)) {
            return Err(ValidationError::InvalidValue { buyer: i, good: j });
        }
        match buyer.utility {
            UtilityKind::Linear => {
                if !buyer.values.iter().any(|&v| v > 0.0) {
                    return Err(ValidationError::NoPositiveValue { buyer: i });
                }
            }
            UtilityKind::Ces { .. } => {
                if let Some(j) = buyer.values.iter().position(|&v| v <= 0.0) {
                    return Err(ValidationError::InvalidValue { buyer: i, good: j });
                }
            }
            _ => {}
        }
    }
    Ok(raw)
}

/// Money matrix `b_ij`, with per-segment detail for spending-constraint
/// utilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpendingProfile {
    pub b: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segments: Option<Vec<Vec<Vec<f64>>>>,
}

impl SpendingProfile {
    pub fn new(b: Vec<Vec<f64>>) -> Self {
        SpendingProfile { b, segments: None }
    }

    /// Money spent on each good.
    pub fn q(&self) -> Vec<f64> {
        let m = self.b.first().map_or(0, Vec::len);
        let mut q = vec![0.0; m];
        for row in &self.b {
            for (qj, bij) in q.iter_mut().zip(row) {
                *qj += bij;
            }
        }
        q
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.b.iter().map(|r| r.iter().sum()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NormalizeError {
    #[error("buyer {buyer} buys nothing")]
    UnsupportedBuyer { buyer: usize },
    #[error("buyer {buyer}: good {good} implies a different scale factor")]
    InconsistentSupport { buyer: usize, good: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScaleError {
    #[error("scale factor must be positive and finite")]
    NonPositiveScale,
    #[error("no buyer with index {0}")]
    NoSuchBuyer(usize),
}

/// Rescales each buyer's valuations so that `v_ij = p_j` on every good the
/// buyer is allocated. Allocations above `1e-9` count as support.
pub fn normalize_valuations(
    inst: &MarketInstance,
    eq: &Equilibrium,
) -> Result<MarketInstance, NormalizeError> {
    normalize_valuations_tol(inst, eq, 1e-9)
}

pub fn normalize_valuations_tol(
    inst: &MarketInstance,
    eq: &Equilibrium,
    tol: f64,
) -> Result<MarketInstance, NormalizeError> {
    let mut out = inst.clone();
    for i in 0..inst.n() {
        let support: Vec<usize> = (0..inst.m())
            .filter(|&j| eq.allocation[i][j] > tol && inst.value(i, j) > 0.0)
            .collect();
        // The good carrying the most money fixes the factor.
        let anchor = support
            .iter()
            .copied()
            .max_by(|&a, &b| {
                eq.spending[i][a]
                    .partial_cmp(&eq.spending[i][b])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(b.cmp(&a))
            })
            .ok_or(NormalizeError::UnsupportedBuyer { buyer: i })?;
        let s = eq.prices[anchor] / inst.value(i, anchor);
        for &j in &support {
            let scaled = inst.value(i, j) * s;
            if (scaled - eq.prices[j]).abs() > 1e-6 * eq.prices[j].abs().max(1.0) {
                return Err(NormalizeError::InconsistentSupport { buyer: i, good: j });
            }
        }
        if !(s > 0.0 && s.is_finite()) {
            return Err(NormalizeError::UnsupportedBuyer { buyer: i });
        }
        out = scale_agent(&out, i, s).expect("scale is positive");
    }
    Ok(out)
}

/// Multiplies buyer `i`'s valuation row (and segment rates) by `s`.
pub fn scale_agent(inst: &MarketInstance, i: usize, s: f64) -> Result<MarketInstance, ScaleError> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(ScaleError::NonPositiveScale);
    }
    if i >= inst.n() {
        return Err(ScaleError::NoSuchBuyer(i));
    }
    let mut out = inst.clone();
    let buyer = &mut out.buyers[i];
    for v in &mut buyer.values {
        *v *= s;
    }
    if let UtilityKind::SpendingConstraint { segments } = &mut buyer.utility {
        for seg in segments.iter_mut().flatten() {
            seg.rate *= s;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_by_two() -> MarketInstance {
        MarketInstance {
            buyers: vec![
                Buyer::linear(1.0, vec![1.0, 0.0]),
                Buyer::linear(1.0, vec![0.0, 1.0]),
            ],
            goods: vec![Good::default(); 2],
        }
    }

    #[test]
    fn minimal_instance_is_valid() {
        assert!(validate_instance(two_by_two()).is_ok());
    }

    #[test]
    fn negative_budget_rejected() {
        let mut inst = two_by_two();
        inst.buyers[0].budget = -1.0;
        assert_eq!(
            validate_instance(inst),
            Err(ValidationError::NegativeBudget { buyer: 0 })
        );
    }

    #[test]
    fn ces_rho_zero_rejected() {
        let mut inst = two_by_two();
        inst.buyers[0].utility = UtilityKind::Ces { rho: 0.0 };
        inst.buyers[0].values = vec![1.0, 1.0];
        assert!(matches!(
            validate_instance(inst),
            Err(ValidationError::BadCesExponent { buyer: 0, .. })
        ));
    }

    #[test]
    fn mixed_caps_rejected() {
        let mut inst = two_by_two();
        inst.goods[0].spending_cap = Some(1.0);
        inst.buyers[1].utility_cap = Some(1.0);
        assert_eq!(validate_instance(inst), Err(ValidationError::MixedCaps));
    }

    #[test]
    fn zero_utility_cap_rejected() {
        let mut inst = two_by_two();
        inst.buyers[1].utility_cap = Some(0.0);
        assert_eq!(
            validate_instance(inst),
            Err(ValidationError::EmptyDemand { buyer: 1 })
        );
    }

    #[test]
    fn segments_must_decrease() {
        let mut inst = two_by_two();
        let seg = |rate| Segment { rate, length: 1.0 };
        inst.buyers[0].utility = UtilityKind::SpendingConstraint {
            segments: vec![vec![seg(1.0), seg(1.0)], vec![]],
        };
        assert_eq!(
            validate_instance(inst),
            Err(ValidationError::NonDecreasingSegments { buyer: 0, good: 0 })
        );
    }

    #[test]
    fn empty_market_rejected() {
        let inst = MarketInstance {
            buyers: vec![],
            goods: vec![Good::default()],
        };
        assert_eq!(validate_instance(inst), Err(ValidationError::EmptyMarket));
    }

    #[test]
    fn json_round_trip_and_unknown_fields() {
        let text = r#"{"buyers":[{"budget":1,"values":[1,2],"utility":{"kind":"ces","rho":0.5},"utility_cap":2}],
                       "goods":[{},{}]}"#;
        let inst = MarketInstance::from_json(text).unwrap();
        assert_eq!(inst.buyers[0].utility, UtilityKind::Ces { rho: 0.5 });
        let back = MarketInstance::from_json(&inst.to_json()).unwrap();
        assert_eq!(back, inst);

        let bad = r#"{"buyers":[{"budget":1,"values":[1],"utility":{"kind":"linear"},"colour":1}],"goods":[{}]}"#;
        assert!(MarketInstance::from_json(bad).is_err());
        let bad_util = r#"{"buyers":[{"budget":1,"values":[1],"utility":{"kind":"linear","rho":1}}],"goods":[{}]}"#;
        assert!(MarketInstance::from_json(bad_util).is_err());
    }

    #[test]
    fn scale_agent_examples() {
        let inst = MarketInstance {
            buyers: vec![Buyer::linear(1.0, vec![1.0, 2.0])],
            goods: vec![Good::default(); 2],
        };
        let scaled = scale_agent(&inst, 0, 3.0).unwrap();
        assert_eq!(scaled.buyers[0].values, vec![3.0, 6.0]);
        assert_eq!(scale_agent(&inst, 0, 1.0).unwrap(), inst);
        assert_eq!(scale_agent(&inst, 0, 0.0), Err(ScaleError::NonPositiveScale));
    }

    #[test]
    fn validate_is_idempotent() {
        let once = validate_instance(two_by_two()).unwrap();
        assert_eq!(validate_instance(once.clone()).unwrap(), once);
    }
}
