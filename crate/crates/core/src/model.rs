//! Domain types shared by every module, plus plain (non-robust) welfare
//! evaluation.
//!
//! An [`Observation`] is one sampled unit `(x, y, d)` with optional
//! instrument, group label, and sampling weight. A [`Dataset`] bundles
//! observations with the declared outcome support. A [`PolicyRule`] maps
//! covariates to a binary treatment decision.

use thiserror::Error;

/// Errors raised while constructing or evaluating domain objects.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("covariate dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("dataset must contain at least one observation")]
    EmptyDataset,
    #[error("observation {index}: {message}")]
    InvalidObservation { index: usize, message: String },
    #[error("invalid support bounds: lower {lower} must be below upper {upper}")]
    InvalidBounds { lower: f64, upper: f64 },
    #[error("invalid rule: {0}")]
    InvalidRule(String),
    #[error("invalid neighborhood: {0}")]
    InvalidNeighborhood(String),
    #[error("effects length {got} does not match dataset size {expected}")]
    EffectsLength { expected: usize, got: usize },
}

/// A single sampled unit.
///
/// `y` is the realized outcome `Y = D·Y1 + (1−D)·Y0`; the potential outcome
/// that was not realized is never observed.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Covariate vector; every observation in a dataset shares its length.
    pub x: Vec<f64>,
    /// Realized outcome, in outcome units.
    pub y: f64,
    /// Treatment indicator.
    pub d: bool,
    /// Optional instrument.
    pub z: Option<f64>,
    /// Optional discrete group label.
    pub c: Option<i64>,
    /// Sampling weight, strictly positive.
    pub w: f64,
}

impl Observation {
    pub fn new(x: Vec<f64>, y: f64, d: bool) -> Self {
        Self {
            x,
            y,
            d,
            z: None,
            c: None,
            w: 1.0,
        }
    }

    pub fn with_weight(mut self, w: f64) -> Self {
        self.w = w;
        self
    }

    pub fn with_instrument(mut self, z: f64) -> Self {
        self.z = Some(z);
        self
    }

    pub fn with_group(mut self, c: i64) -> Self {
        self.c = Some(c);
        self
    }
}

/// Declared support of the potential outcomes.
///
/// `y_lower` may be `-inf` and `y_upper` may be `+inf`. When the lower bound
/// is infinite the support may additionally be declared equispaced with a
/// fixed gap; the gap is recorded but not enforced (it matters only for the
/// asymptotic theory, not for any computation here).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportBounds {
    pub y_lower: f64,
    pub y_upper: f64,
    pub equispaced_gap: Option<f64>,
}

impl SupportBounds {
    pub fn new(y_lower: f64, y_upper: f64) -> Result<Self, ModelError> {
        if y_lower.is_nan() || y_upper.is_nan() || y_lower >= y_upper {
            return Err(ModelError::InvalidBounds {
                lower: y_lower,
                upper: y_upper,
            });
        }
        Ok(Self {
            y_lower,
            y_upper,
            equispaced_gap: None,
        })
    }

    /// Outcomes anywhere on the real line.
    pub fn unbounded() -> Self {
        Self {
            y_lower: f64::NEG_INFINITY,
            y_upper: f64::INFINITY,
            equispaced_gap: None,
        }
    }

    /// Binary outcomes on {0, 1}.
    pub fn binary() -> Self {
        Self {
            y_lower: 0.0,
            y_upper: 1.0,
            equispaced_gap: None,
        }
    }

    pub fn with_equispaced_gap(mut self, gap: f64) -> Self {
        self.equispaced_gap = Some(gap);
        self
    }

    pub fn lower_is_finite(&self) -> bool {
        self.y_lower.is_finite()
    }

    pub fn upper_is_finite(&self) -> bool {
        self.y_upper.is_finite()
    }

    fn contains(&self, y: f64) -> bool {
        y >= self.y_lower && y <= self.y_upper
    }
}

/// A dataset: nonempty observations of common dimension, with outcome
/// support bounds that every realized outcome respects.
#[derive(Debug, Clone)]
pub struct Dataset {
    observations: Vec<Observation>,
    bounds: SupportBounds,
    dim: usize,
}

impl Dataset {
    pub fn new(observations: Vec<Observation>, bounds: SupportBounds) -> Result<Self, ModelError> {
        let first = observations.first().ok_or(ModelError::EmptyDataset)?;
        let dim = first.x.len();
        for (index, obs) in observations.iter().enumerate() {
            if obs.x.len() != dim {
                return Err(ModelError::DimensionMismatch {
                    expected: dim,
                    got: obs.x.len(),
                });
            }
            if !obs.w.is_finite() || obs.w <= 0.0 {
                return Err(ModelError::InvalidObservation {
                    index,
                    message: format!("weight must be positive and finite, got {}", obs.w),
                });
            }
            if obs.y.is_nan() || !bounds.contains(obs.y) {
                return Err(ModelError::InvalidObservation {
                    index,
                    message: format!(
                        "outcome {} outside declared support [{}, {}]",
                        obs.y, bounds.y_lower, bounds.y_upper
                    ),
                });
            }
            if obs.x.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::InvalidObservation {
                    index,
                    message: "covariates must be finite".to_string(),
                });
            }
        }
        Ok(Self {
            observations,
            bounds,
            dim,
        })
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction requires at least one observation
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bounds(&self) -> &SupportBounds {
        &self.bounds
    }

    pub fn total_weight(&self) -> f64 {
        self.observations.iter().map(|o| o.w).sum()
    }

    /// Sampling weights normalized to sum to one.
    pub fn normalized_weights(&self) -> Vec<f64> {
        let total = self.total_weight();
        self.observations.iter().map(|o| o.w / total).collect()
    }
}

/// Sign of a threshold face: treat requires `x_j ≥ cut` or `x_j ≤ cut`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    /// Treatment requires the coordinate to be at or above the cut.
    AtOrAbove,
    /// Treatment requires the coordinate to be at or below the cut.
    AtOrBelow,
}

impl Sign {
    /// Signed slack `s·(x_j − cut)`; nonnegative iff the face is satisfied.
    pub fn slack(self, value: f64, cut: f64) -> f64 {
        match self {
            Sign::AtOrAbove => value - cut,
            Sign::AtOrBelow => cut - value,
        }
    }
}

/// One face of a threshold (quadrant) rule.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdTerm {
    /// Zero-based covariate index.
    pub dim: usize,
    pub sign: Sign,
    pub cut: f64,
}

/// An axis-aligned hyperrectangle with optionally open faces.
///
/// Open/closed faces only affect pointwise classification; distances to a
/// box always use its closure.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxRegion {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Whether each lower face is included. Ignored when the face is infinite.
    pub closed_lower: Vec<bool>,
    /// Whether each upper face is included.
    pub closed_upper: Vec<bool>,
}

impl BoxRegion {
    /// A closed box. Use `-inf`/`+inf` entries for unbounded faces.
    pub fn closed(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, ModelError> {
        let dim = lower.len();
        if upper.len() != dim {
            return Err(ModelError::DimensionMismatch {
                expected: dim,
                got: upper.len(),
            });
        }
        for i in 0..dim {
            if lower[i].is_nan() || upper[i].is_nan() || lower[i] > upper[i] {
                return Err(ModelError::InvalidRule(format!(
                    "box face {i} has lower {} above upper {}",
                    lower[i], upper[i]
                )));
            }
        }
        Ok(Self {
            closed_lower: vec![true; dim],
            closed_upper: vec![true; dim],
            lower,
            upper,
        })
    }

    pub fn with_faces(mut self, closed_lower: Vec<bool>, closed_upper: Vec<bool>) -> Self {
        self.closed_lower = closed_lower;
        self.closed_upper = closed_upper;
        self
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Membership honoring open/closed faces.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().enumerate().all(|(i, &v)| {
            let lo_ok = if self.lower[i].is_finite() {
                if self.closed_lower[i] {
                    v >= self.lower[i]
                } else {
                    v > self.lower[i]
                }
            } else {
                true
            };
            let hi_ok = if self.upper[i].is_finite() {
                if self.closed_upper[i] {
                    v <= self.upper[i]
                } else {
                    v < self.upper[i]
                }
            } else {
                true
            };
            lo_ok && hi_ok
        })
    }
}

/// A binary treatment rule over covariates.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyRule {
    /// Treat iff `intercept + x·slope ≥ 0`.
    LinearEligibility { intercept: f64, slope: Vec<f64> },
    /// Treat iff every face is satisfied (weak inequalities).
    Threshold(Vec<ThresholdTerm>),
    /// Treat iff `x` lies in some treat box. The complement boxes partition
    /// the rest of the space; they are stored so distances to the
    /// non-treatment region can be computed.
    TreeBoxes {
        treat: Vec<BoxRegion>,
        complement: Vec<BoxRegion>,
    },
    /// Treat everyone (`true`) or no one (`false`).
    Constant(bool),
}

impl PolicyRule {
    pub fn linear(intercept: f64, slope: Vec<f64>) -> Result<Self, ModelError> {
        if slope.iter().all(|&b| b == 0.0) {
            return Err(ModelError::InvalidRule(
                "linear eligibility rule needs a nonzero slope".to_string(),
            ));
        }
        if slope.iter().any(|b| !b.is_finite()) {
            return Err(ModelError::InvalidRule(
                "linear eligibility slope must be finite".to_string(),
            ));
        }
        Ok(Self::LinearEligibility { intercept, slope })
    }

    pub fn threshold(terms: Vec<ThresholdTerm>) -> Result<Self, ModelError> {
        // The per-dimension faces must leave a nonempty treatment region.
        let mut dims: Vec<usize> = terms.iter().map(|t| t.dim).collect();
        dims.sort_unstable();
        dims.dedup();
        for d in dims {
            let mut lo = f64::NEG_INFINITY;
            let mut hi = f64::INFINITY;
            for t in terms.iter().filter(|t| t.dim == d) {
                match t.sign {
                    Sign::AtOrAbove => lo = lo.max(t.cut),
                    Sign::AtOrBelow => hi = hi.min(t.cut),
                }
            }
            if lo > hi {
                return Err(ModelError::InvalidRule(format!(
                    "threshold faces on dimension {d} are contradictory"
                )));
            }
        }
        Ok(Self::Threshold(terms))
    }

    /// Box-union rule with a single treat box; the complement is
    /// decomposed into axis-aligned slabs so distances to non-treatment
    /// stay computable.
    pub fn single_box(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, ModelError> {
        let dim = lower.len();
        let treat = BoxRegion::closed(lower.clone(), upper.clone())?;
        let mut complement = Vec::with_capacity(2 * dim);
        // Slabs below/above each face, restricted to the box extent on
        // earlier dimensions so they partition the complement.
        for i in 0..dim {
            let mut lo = vec![f64::NEG_INFINITY; dim];
            let mut hi = vec![f64::INFINITY; dim];
            lo[..i].copy_from_slice(&lower[..i]);
            hi[..i].copy_from_slice(&upper[..i]);
            if lower[i].is_finite() {
                let mut h = hi.clone();
                h[i] = lower[i];
                complement.push(BoxRegion::closed(lo.clone(), h)?);
            }
            if upper[i].is_finite() {
                let mut l = lo.clone();
                l[i] = upper[i];
                complement.push(BoxRegion::closed(l, hi.clone())?);
            }
        }
        Self::tree(vec![treat], complement)
    }

    pub fn tree(treat: Vec<BoxRegion>, complement: Vec<BoxRegion>) -> Result<Self, ModelError> {
        let dim = treat
            .first()
            .or_else(|| complement.first())
            .map(BoxRegion::dim);
        if let Some(dim) = dim {
            for b in treat.iter().chain(complement.iter()) {
                if b.dim() != dim {
                    return Err(ModelError::DimensionMismatch {
                        expected: dim,
                        got: b.dim(),
                    });
                }
            }
        }
        Ok(Self::TreeBoxes { treat, complement })
    }

    /// Check `x` against the covariate dimension the rule expects, if any.
    fn check_dim(&self, x: &[f64]) -> Result<(), ModelError> {
        let needed = match self {
            PolicyRule::LinearEligibility { slope, .. } => Some(slope.len()),
            PolicyRule::Threshold(terms) => terms.iter().map(|t| t.dim + 1).max(),
            PolicyRule::TreeBoxes { treat, complement } => treat
                .first()
                .or_else(|| complement.first())
                .map(BoxRegion::dim),
            PolicyRule::Constant(_) => None,
        };
        match needed {
            Some(n) if x.len() < n => Err(ModelError::DimensionMismatch {
                expected: n,
                got: x.len(),
            }),
            _ => Ok(()),
        }
    }

    /// Canonical textual encoding, used for reports and deterministic
    /// tie-breaking in policy search.
    pub fn encoding(&self) -> String {
        match self {
            PolicyRule::LinearEligibility { intercept, slope } => {
                let s: Vec<String> = slope.iter().map(|b| format!("{b}")).collect();
                format!("linear(b0={intercept};b1={})", s.join(","))
            }
            PolicyRule::Threshold(terms) => {
                let t: Vec<String> = terms
                    .iter()
                    .map(|t| {
                        let op = match t.sign {
                            Sign::AtOrAbove => ">=",
                            Sign::AtOrBelow => "<=",
                        };
                        format!("x{}{}{}", t.dim, op, t.cut)
                    })
                    .collect();
                format!("threshold({})", t.join(";"))
            }
            PolicyRule::TreeBoxes { treat, .. } => {
                let b: Vec<String> = treat
                    .iter()
                    .map(|bx| {
                        let faces: Vec<String> = bx
                            .lower
                            .iter()
                            .zip(bx.upper.iter())
                            .map(|(l, u)| format!("[{l},{u}]"))
                            .collect();
                        faces.join("x")
                    })
                    .collect();
                format!("tree(treat={})", b.join("|"))
            }
            PolicyRule::Constant(v) => format!("constant({})", u8::from(*v)),
        }
    }
}

/// Evaluate a rule at a covariate point: returns the treatment decision.
pub fn evaluate_rule(rule: &PolicyRule, x: &[f64]) -> Result<bool, ModelError> {
    rule.check_dim(x)?;
    Ok(match rule {
        PolicyRule::LinearEligibility { intercept, slope } => {
            let score: f64 = intercept + slope.iter().zip(x).map(|(b, v)| b * v).sum::<f64>();
            score >= 0.0
        }
        PolicyRule::Threshold(terms) => terms.iter().all(|t| t.sign.slack(x[t.dim], t.cut) >= 0.0),
        PolicyRule::TreeBoxes { treat, .. } => treat.iter().any(|b| b.contains(x)),
        PolicyRule::Constant(v) => *v,
    })
}

/// Kinds of distribution shift a neighborhood allows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftKind {
    /// Potential outcomes may shift; the covariate distribution is frozen.
    PotentialOutcomesOnly,
    /// Both potential outcomes and covariates may shift.
    PotentialOutcomesAndCovariates,
}

/// Order of the Wasserstein metric defining the neighborhood.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricOrder {
    One,
    Two,
}

/// A Wasserstein neighborhood specification.
///
/// `epsilon` is in outcome units and equals the maximal change of the ATE
/// across the neighborhood. `covariate_scale` rescales each covariate
/// dimension before the Euclidean norm is taken, so that covariate moves
/// are priced in outcome units.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodSpec {
    pub epsilon: f64,
    pub shift_kind: ShiftKind,
    pub order: MetricOrder,
    pub covariate_scale: Vec<f64>,
}

impl NeighborhoodSpec {
    pub fn new(
        epsilon: f64,
        shift_kind: ShiftKind,
        order: MetricOrder,
        covariate_scale: Vec<f64>,
    ) -> Result<Self, ModelError> {
        if epsilon.is_nan() || epsilon < 0.0 {
            return Err(ModelError::InvalidNeighborhood(format!(
                "epsilon must be nonnegative, got {epsilon}"
            )));
        }
        if order == MetricOrder::Two && shift_kind != ShiftKind::PotentialOutcomesOnly {
            return Err(ModelError::InvalidNeighborhood(
                "order-2 metric is only defined for potential-outcome shifts".to_string(),
            ));
        }
        if covariate_scale.iter().any(|&s| !s.is_finite() || s <= 0.0) {
            return Err(ModelError::InvalidNeighborhood(
                "covariate scales must be positive and finite".to_string(),
            ));
        }
        Ok(Self {
            epsilon,
            shift_kind,
            order,
            covariate_scale,
        })
    }

    /// Outcome-shift-only neighborhood of radius `epsilon` (order 1).
    pub fn po_only(epsilon: f64) -> Result<Self, ModelError> {
        Self::new(epsilon, ShiftKind::PotentialOutcomesOnly, MetricOrder::One, Vec::new())
    }

    /// Outcome-shift-only neighborhood under the order-2 metric.
    pub fn po_only_order2(epsilon: f64) -> Result<Self, ModelError> {
        Self::new(epsilon, ShiftKind::PotentialOutcomesOnly, MetricOrder::Two, Vec::new())
    }

    /// Joint outcome-and-covariate neighborhood with unit covariate scales.
    pub fn joint(epsilon: f64, dim: usize) -> Result<Self, ModelError> {
        Self::new(
            epsilon,
            ShiftKind::PotentialOutcomesAndCovariates,
            MetricOrder::One,
            vec![1.0; dim],
        )
    }

    /// Joint neighborhood with explicit per-dimension covariate scales.
    pub fn joint_scaled(epsilon: f64, covariate_scale: Vec<f64>) -> Result<Self, ModelError> {
        Self::new(
            epsilon,
            ShiftKind::PotentialOutcomesAndCovariates,
            MetricOrder::One,
            covariate_scale,
        )
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self, ModelError> {
        Self::new(
            epsilon,
            self.shift_kind,
            self.order,
            self.covariate_scale.clone(),
        )
    }
}

/// Result of evaluating a robust welfare criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct CriterionResult {
    /// Robust welfare, in outcome units.
    pub value: f64,
    /// The attaining dual multiplier, when the criterion has an inner
    /// maximization and it is attained at a finite point.
    pub eta_star: Option<f64>,
    /// Whether the outcome-floor branch of the outer max was active.
    pub floor_binding: bool,
}

impl CriterionResult {
    pub(crate) fn plain(value: f64) -> Self {
        Self {
            value,
            eta_star: None,
            floor_binding: false,
        }
    }
}

/// Plain (zero-radius) sample welfare: `y0_mean` plus the weighted average
/// of the per-observation effect for units the rule treats.
pub fn sample_welfare(
    data: &Dataset,
    rule: &PolicyRule,
    effects: &[f64],
    y0_mean: f64,
) -> Result<f64, ModelError> {
    if effects.len() != data.len() {
        return Err(ModelError::EffectsLength {
            expected: data.len(),
            got: effects.len(),
        });
    }
    let total = data.total_weight();
    let mut acc = 0.0;
    for (obs, &effect) in data.observations().iter().zip(effects) {
        if evaluate_rule(rule, &obs.x)? {
            acc += obs.w * effect;
        }
    }
    Ok(y0_mean + acc / total)
}
