//! Robust welfare criteria.
//!
//! Closed forms for outcome-only shifts (order 1 and 2, baseline and
//! reweighted, and the treat-versus-no-one variant), and the empirical
//! joint-shift criteria that combine rule geometry with estimated treatment
//! effects through the inner η maximization.
//!
//! Every criterion here is an infimum of expected welfare over a Wasserstein
//! ball, so each is non-increasing in the radius, equals the plain welfare
//! at radius zero, and never falls below the declared outcome floor.

use crate::estimators::{CdfPair, EstimatorBundle, EstimatorError};
use crate::eta::{self, EtaError, EtaProblem, EtaSolution, EtaTerm};
use crate::geometry::{distance_profile, Dist};
use crate::model::{
    CriterionResult, Dataset, MetricOrder, ModelError, NeighborhoodSpec, PolicyRule, ShiftKind,
    SupportBounds,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RobustError {
    #[error("model error: {0}")]
    Model(#[from] ModelError),
    #[error("estimator error: {0}")]
    Estimator(#[from] EstimatorError),
    #[error("inner solver error: {0}")]
    Eta(#[from] EtaError),
    #[error("criterion requires {expected} shifts, got {got}")]
    WrongShiftKind {
        expected: &'static str,
        got: &'static str,
    },
    #[error("order-2 criterion requires unbounded outcomes")]
    BoundedOrderTwo,
    #[error("criterion is unbounded below; check the distance profiles")]
    UnboundedInner,
    #[error("density ratio must be positive and finite, got {0} at observation {1}")]
    InvalidDensityRatio(f64, usize),
    #[error("{0} values supplied for {1} observations")]
    LengthMismatch(usize, usize),
}

/// Identifying assumption that pins down the joint law of the potential
/// outcomes given covariates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingAssumption {
    /// Treatment effects are a deterministic function of covariates.
    ConstantTreatmentEffects,
    /// Rank invariance: units keep their quantile across arms.
    PerfectPositiveDependence,
    /// Potential outcomes are independent given covariates and a group
    /// label; the criterion integrates over both conditional CDFs.
    ConditionalIndependence,
    /// The antitone coupling, a sharp lower bound over all couplings with
    /// the observed marginals.
    LeastFavorable,
}

impl CouplingAssumption {
    pub fn name(&self) -> &'static str {
        match self {
            CouplingAssumption::ConstantTreatmentEffects => "constant-te",
            CouplingAssumption::PerfectPositiveDependence => "ppd",
            CouplingAssumption::ConditionalIndependence => "cond-indep",
            CouplingAssumption::LeastFavorable => "least-favorable",
        }
    }
}

/// Known covariate shift, as the density ratio of target to experimental
/// covariate distributions evaluated on the sample.
#[derive(Debug, Clone)]
pub struct ReweightSpec {
    weights: Vec<f64>,
}

impl ReweightSpec {
    pub fn from_weights(weights: Vec<f64>) -> Result<Self, RobustError> {
        for (i, &w) in weights.iter().enumerate() {
            if !w.is_finite() || w <= 0.0 {
                return Err(RobustError::InvalidDensityRatio(w, i));
            }
        }
        Ok(Self { weights })
    }

    pub fn from_fn(data: &Dataset, rho: impl Fn(&[f64]) -> f64) -> Result<Self, RobustError> {
        Self::from_weights(data.observations().iter().map(|o| rho(&o.x)).collect())
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            weights: vec![1.0; n],
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

fn shift_kind_name(kind: ShiftKind) -> &'static str {
    match kind {
        ShiftKind::PotentialOutcomesOnly => "potential-outcome",
        ShiftKind::PotentialOutcomesAndCovariates => "joint",
    }
}

fn require_shift(spec: &NeighborhoodSpec, expected: ShiftKind) -> Result<(), RobustError> {
    if spec.shift_kind != expected {
        return Err(RobustError::WrongShiftKind {
            expected: shift_kind_name(expected),
            got: shift_kind_name(spec.shift_kind),
        });
    }
    Ok(())
}

/// Sharp bounds on the target-population ATE over the neighborhood: the
/// experimental ATE can move by at most ε, clipped to the support range.
pub fn ate_bounds(ate_p: f64, spec: &NeighborhoodSpec, bounds: &SupportBounds) -> (f64, f64) {
    let eps = spec.epsilon;
    let (floor, cap) = if bounds.lower_is_finite() && bounds.upper_is_finite() {
        (
            bounds.y_lower - bounds.y_upper,
            bounds.y_upper - bounds.y_lower,
        )
    } else {
        (f64::NEG_INFINITY, f64::INFINITY)
    };
    ((ate_p - eps).max(floor), (ate_p + eps).min(cap))
}

fn floored(total: f64, floor: f64, eta_star: Option<f64>) -> CriterionResult {
    if total < floor {
        CriterionResult {
            value: floor,
            eta_star,
            floor_binding: true,
        }
    } else {
        CriterionResult {
            value: total,
            eta_star,
            floor_binding: false,
        }
    }
}

/// Worst-case welfare under potential-outcome shifts: the plain welfare
/// less the radius, floored at the outcome infimum.
pub fn rw_po(
    welfare_p: f64,
    spec: &NeighborhoodSpec,
    bounds: &SupportBounds,
) -> Result<CriterionResult, RobustError> {
    require_shift(spec, ShiftKind::PotentialOutcomesOnly)?;
    if spec.order == MetricOrder::Two {
        return rw_po_order2(welfare_p, spec, bounds);
    }
    Ok(floored(welfare_p - spec.epsilon, bounds.y_lower, None))
}

/// Order-2 variant: on the whole real line the worst case is exactly the
/// welfare less the radius, with no floor branch.
pub fn rw_po_order2(
    welfare_p: f64,
    spec: &NeighborhoodSpec,
    bounds: &SupportBounds,
) -> Result<CriterionResult, RobustError> {
    require_shift(spec, ShiftKind::PotentialOutcomesOnly)?;
    if bounds.lower_is_finite() || bounds.upper_is_finite() {
        return Err(RobustError::BoundedOrderTwo);
    }
    Ok(CriterionResult::plain(welfare_p - spec.epsilon))
}

/// Worst-case reweighted welfare under a known covariate shift: each
/// observation's contribution is scaled by the density ratio, then the
/// radius is subtracted and the floor applied.
pub fn rw_po_reweighted(
    data: &Dataset,
    rule: &PolicyRule,
    effects: &[f64],
    baselines: &[f64],
    reweight: &ReweightSpec,
    spec: &NeighborhoodSpec,
    bounds: &SupportBounds,
) -> Result<CriterionResult, RobustError> {
    require_shift(spec, ShiftKind::PotentialOutcomesOnly)?;
    let n = data.len();
    for (len, _name) in [(effects.len(), "effects"), (baselines.len(), "baselines")] {
        if len != n {
            return Err(RobustError::LengthMismatch(len, n));
        }
    }
    if reweight.weights.len() != n {
        return Err(RobustError::LengthMismatch(reweight.weights.len(), n));
    }
    let mut acc = 0.0;
    for (i, obs) in data.observations().iter().enumerate() {
        let tau = crate::model::evaluate_rule(rule, &obs.x)?;
        let contribution = baselines[i] + if tau { effects[i] } else { 0.0 };
        acc += obs.w * reweight.weights[i] * contribution;
    }
    let welfare = acc / data.total_weight();
    Ok(floored(welfare - spec.epsilon, bounds.y_lower, None))
}

/// Worst case of the treat-versus-no-one welfare `E[Y1·τ(X) − Y0]`. The
/// floor branch depends on the treated share.
pub fn rw_alternative(
    e_y1_tau: f64,
    e_y0: f64,
    e_tau: f64,
    spec: &NeighborhoodSpec,
    bounds: &SupportBounds,
) -> Result<CriterionResult, RobustError> {
    require_shift(spec, ShiftKind::PotentialOutcomesOnly)?;
    // 0·(−inf) must contribute nothing when no one is treated.
    let treated_floor = if e_tau == 0.0 {
        0.0
    } else {
        bounds.y_lower * e_tau
    };
    let floor = treated_floor - bounds.y_upper;
    Ok(floored(e_y1_tau - e_y0 - spec.epsilon, floor, None))
}

pub(crate) fn effects_for_coupling<'a>(
    data: &Dataset,
    coupling: CouplingAssumption,
    bundle: &'a EstimatorBundle,
) -> Result<Vec<f64>, RobustError> {
    let from_slice = |v: &'a Option<Vec<f64>>, name: &'static str| -> Result<Vec<f64>, RobustError> {
        v.as_ref()
            .cloned()
            .ok_or(RobustError::Estimator(EstimatorError::MissingField(name)))
    };
    match coupling {
        CouplingAssumption::ConstantTreatmentEffects => match &bundle.delta_fn {
            Some(model) => data
                .observations()
                .iter()
                .map(|o| model.eval(&o.x).map_err(RobustError::from))
                .collect(),
            None => from_slice(&bundle.delta_obs, "delta_fn or delta_obs"),
        },
        CouplingAssumption::PerfectPositiveDependence => from_slice(&bundle.delta_obs, "delta_obs"),
        CouplingAssumption::LeastFavorable => from_slice(&bundle.delta_star_obs, "delta_star_obs"),
        CouplingAssumption::ConditionalIndependence => {
            Err(RobustError::Estimator(EstimatorError::MissingField(
                "conditional-independence criterion takes cond_cdfs, not per-observation effects",
            )))
        }
    }
}

/// Assemble the inner problem for a rule: distance profiles over the sample
/// paired with per-observation effects.
pub fn eta_terms(
    data: &Dataset,
    rule: &PolicyRule,
    effects: &[f64],
    spec: &NeighborhoodSpec,
) -> Result<Vec<EtaTerm>, RobustError> {
    if effects.len() != data.len() {
        return Err(RobustError::LengthMismatch(effects.len(), data.len()));
    }
    data.observations()
        .iter()
        .zip(effects)
        .map(|(obs, &effect)| {
            let profile = distance_profile(rule, &obs.x, &spec.covariate_scale)?;
            Ok(EtaTerm::new(
                profile.to_nontreatment,
                profile.to_treatment,
                effect,
                obs.w,
            ))
        })
        .collect()
}

/// Empirical worst-case welfare under joint outcome-and-covariate shifts,
/// for couplings that reduce to per-observation effects.
pub fn rw_joint_empirical(
    data: &Dataset,
    rule: &PolicyRule,
    coupling: CouplingAssumption,
    bundle: &EstimatorBundle,
    spec: &NeighborhoodSpec,
    bounds: &SupportBounds,
) -> Result<CriterionResult, RobustError> {
    require_shift(spec, ShiftKind::PotentialOutcomesAndCovariates)?;
    bundle.validate(data.len())?;
    if coupling == CouplingAssumption::ConditionalIndependence {
        let cdfs = bundle.cond_cdfs.as_ref().ok_or(RobustError::Estimator(
            EstimatorError::MissingField("cond_cdfs"),
        ))?;
        return rw_conditional_independence(data, rule, cdfs, spec, bounds);
    }
    let effects = effects_for_coupling(data, coupling, bundle)?;
    let terms = eta_terms(data, rule, &effects, spec)?;
    let problem = EtaProblem::new(terms, spec.epsilon)?;
    match eta::solve_breakpoints(&problem)? {
        EtaSolution::Attained { eta, value } => Ok(floored(
            bundle.y0_mean + value,
            bounds.y_lower,
            Some(eta),
        )),
        EtaSolution::Unbounded => Err(RobustError::UnboundedInner),
    }
}

/// The conservative criterion under the least-favorable (antitone)
/// coupling; a sharp lower bound for the joint-shift criterion across all
/// couplings with the observed marginals.
pub fn rw_star_empirical(
    data: &Dataset,
    rule: &PolicyRule,
    bundle: &EstimatorBundle,
    spec: &NeighborhoodSpec,
    bounds: &SupportBounds,
) -> Result<CriterionResult, RobustError> {
    rw_joint_empirical(
        data,
        rule,
        CouplingAssumption::LeastFavorable,
        bundle,
        spec,
        bounds,
    )
}

/// Expected minimum of two independent discrete variables, by merged-scan
/// survival products. Atoms must be sorted ascending; `shift` is added to
/// every atom of its list.
pub fn expected_min_independent(
    a: &[(f64, f64)],
    shift_a: f64,
    b: &[(f64, f64)],
    shift_b: f64,
) -> f64 {
    let mut i = 0;
    let mut j = 0;
    let mut surv_a = 1.0;
    let mut surv_b = 1.0;
    let mut prev = 1.0;
    let mut acc = 0.0;
    while i < a.len() || j < b.len() {
        let va = a.get(i).map(|&(v, _)| v + shift_a);
        let vb = b.get(j).map(|&(v, _)| v + shift_b);
        let v = match (va, vb) {
            (Some(x), Some(y)) => x.min(y),
            (Some(x), None) => x,
            (None, Some(y)) => y,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i].0 + shift_a <= v {
            surv_a -= a[i].1;
            i += 1;
        }
        while j < b.len() && b[j].0 + shift_b <= v {
            surv_b -= b[j].1;
            j += 1;
        }
        let surv = surv_a.max(0.0) * surv_b.max(0.0);
        acc += v * (prev - surv);
        prev = surv;
    }
    acc
}

fn ci_objective(
    pairs: &[(Dist, Dist, &CdfPair, f64)], // (h0, h1, cdfs, normalized weight)
    eta: f64,
) -> f64 {
    pairs
        .iter()
        .map(|&(h0, h1, pair, w)| {
            let v = match (h0, h1) {
                (Dist::Finite(h0), Dist::Finite(h1)) => expected_min_independent(
                    pair.untreated.atoms(),
                    eta * h0,
                    pair.treated.atoms(),
                    eta * h1,
                ),
                (Dist::Infinite, Dist::Finite(h1)) => pair.treated.mean() + eta * h1,
                (Dist::Finite(h0), Dist::Infinite) => pair.untreated.mean() + eta * h0,
                (Dist::Infinite, Dist::Infinite) => unreachable!("profiles cannot both be infinite"),
            };
            w * v
        })
        .sum()
}

/// Empirical worst case under the conditional-independence coupling: for
/// each observation the two arms are independent draws from the fitted
/// conditional CDFs, so the expected minimum integrates the product of
/// survival functions. The η maximization is concave but no longer has few
/// kinks, so a golden-section search plus a local kink sweep is used.
pub fn rw_conditional_independence(
    data: &Dataset,
    rule: &PolicyRule,
    cdfs: &[CdfPair],
    spec: &NeighborhoodSpec,
    bounds: &SupportBounds,
) -> Result<CriterionResult, RobustError> {
    require_shift(spec, ShiftKind::PotentialOutcomesAndCovariates)?;
    if cdfs.len() != data.len() {
        return Err(RobustError::LengthMismatch(cdfs.len(), data.len()));
    }
    let total_w = data.total_weight();
    let mut pairs = Vec::with_capacity(data.len());
    for (obs, pair) in data.observations().iter().zip(cdfs) {
        let profile = distance_profile(rule, &obs.x, &spec.covariate_scale)?;
        pairs.push((
            profile.to_nontreatment,
            profile.to_treatment,
            pair,
            obs.w / total_w,
        ));
    }

    let eps = spec.epsilon;
    if eps == 0.0 {
        // The objective is nondecreasing in η; its limit swaps each
        // observation onto the arm its covariates are pinned to.
        let mut limit = 0.0;
        for &(h0, h1, pair, w) in &pairs {
            let at_nontreatment = h0 == Dist::Finite(0.0);
            let at_treatment = h1 == Dist::Finite(0.0);
            let v = if at_nontreatment && at_treatment {
                expected_min_independent(pair.untreated.atoms(), 0.0, pair.treated.atoms(), 0.0)
            } else if at_nontreatment {
                pair.untreated.mean()
            } else if at_treatment {
                pair.treated.mean()
            } else {
                return Err(RobustError::UnboundedInner);
            };
            limit += w * v;
        }
        return Ok(floored(limit, bounds.y_lower, None));
    }

    // Search bound: beyond it the −η·ε tilt dominates any possible gain.
    let mut outcome_mag = 0.0f64;
    let mut h_mag = 0.0f64;
    for &(h0, h1, pair, _) in &pairs {
        for cdf in [&pair.untreated, &pair.treated] {
            for &(v, _) in cdf.atoms() {
                outcome_mag = outcome_mag.max(v.abs());
            }
        }
        for d in [h0, h1] {
            if let Dist::Finite(v) = d {
                h_mag = h_mag.max(v);
            }
        }
    }
    let hi = (2.0 * outcome_mag + h_mag) * data.len() as f64 / eps + 2.0;

    let f = |eta: f64| ci_objective(&pairs, eta) - eta * eps;

    // Golden-section bracket on [1, hi].
    let inv_phi = 0.5 * (5.0f64.sqrt() - 1.0);
    let (mut lo, mut hi) = (1.0f64, hi);
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while hi - lo > 1e-8 * hi.max(1.0) {
        if fc >= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }

    // Exact kinks inside the final bracket, plus the bracket ends and
    // η = 1: between consecutive kinks the objective is linear, so the
    // best candidate is the true maximizer.
    let mut candidates = vec![1.0, lo, hi, 0.5 * (lo + hi)];
    for &(h0, h1, pair, _) in &pairs {
        if let (Dist::Finite(h0), Dist::Finite(h1)) = (h0, h1) {
            if h0 != h1 {
                for &(ya, _) in pair.untreated.atoms() {
                    for &(yb, _) in pair.treated.atoms() {
                        let kink = (ya - yb) / (h1 - h0);
                        if kink >= lo && kink <= hi {
                            candidates.push(kink);
                        }
                    }
                }
            }
        }
    }
    candidates.retain(|&c| c >= 1.0);
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    candidates.dedup();
    let mut best_eta = 1.0;
    let mut best = f64::NEG_INFINITY;
    for &eta in &candidates {
        let v = f(eta);
        if v > best {
            best = v;
            best_eta = eta;
        }
    }
    Ok(floored(best, bounds.y_lower, Some(best_eta)))
}

/// Dispatch a coupling assumption to its criterion.
pub fn evaluate_criterion(
    data: &Dataset,
    rule: &PolicyRule,
    coupling: CouplingAssumption,
    bundle: &EstimatorBundle,
    spec: &NeighborhoodSpec,
    bounds: &SupportBounds,
) -> Result<CriterionResult, RobustError> {
    rw_joint_empirical(data, rule, coupling, bundle, spec, bounds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::DiscreteCdf;
    use crate::model::{sample_welfare, Observation, Sign, ThresholdTerm};

    fn po_spec(eps: f64) -> NeighborhoodSpec {
        NeighborhoodSpec::po_only(eps).unwrap()
    }

    fn joint_spec(eps: f64, dim: usize) -> NeighborhoodSpec {
        NeighborhoodSpec::joint(eps, dim).unwrap()
    }

    fn treat_above(cut: f64) -> PolicyRule {
        PolicyRule::threshold(vec![ThresholdTerm {
            dim: 0,
            sign: Sign::AtOrAbove,
            cut,
        }])
        .unwrap()
    }

    #[test]
    fn ate_bounds_examples() {
        let binary = SupportBounds::binary();
        let (lo, hi) = ate_bounds(0.3, &po_spec(0.5), &binary);
        assert!((lo - -0.2).abs() < 1e-12 && (hi - 0.8).abs() < 1e-12);
        let (lo, hi) = ate_bounds(0.3, &po_spec(2.0), &binary);
        assert_eq!((lo, hi), (-1.0, 1.0));
        let (lo, hi) = ate_bounds(1.0, &po_spec(0.5), &SupportBounds::unbounded());
        assert_eq!((lo, hi), (0.5, 1.5));
    }

    #[test]
    fn rw_po_examples() {
        let r = rw_po(5.0, &po_spec(1.0), &SupportBounds::unbounded()).unwrap();
        assert_eq!(r.value, 4.0);
        assert!(!r.floor_binding);

        let r = rw_po(0.3, &po_spec(0.5), &SupportBounds::binary()).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.floor_binding);
    }

    #[test]
    fn rw_po_routes_order_two() {
        let spec = NeighborhoodSpec::po_only_order2(1.0).unwrap();
        let r = rw_po(5.0, &spec, &SupportBounds::unbounded()).unwrap();
        assert_eq!(r.value, 4.0);
        assert!(rw_po(5.0, &spec, &SupportBounds::binary()).is_err());
        let zero = NeighborhoodSpec::po_only_order2(0.0).unwrap();
        assert_eq!(
            rw_po_order2(5.0, &zero, &SupportBounds::unbounded()).unwrap().value,
            5.0
        );
    }

    #[test]
    fn rw_po_rejects_joint_spec() {
        let err = rw_po(1.0, &joint_spec(0.1, 1), &SupportBounds::unbounded());
        assert!(matches!(err, Err(RobustError::WrongShiftKind { .. })));
    }

    fn two_cell_data() -> (Dataset, Vec<f64>, Vec<f64>) {
        // Cell A at x = 1 benefits (Δ = 2), cell B at x = −1 is harmed
        // (Δ = −1); baselines 1 everywhere.
        let rows = vec![
            Observation::new(vec![1.0], 3.0, true),
            Observation::new(vec![-1.0], 1.0, false),
        ];
        let data = Dataset::new(rows, SupportBounds::unbounded()).unwrap();
        (data, vec![2.0, -1.0], vec![1.0, 1.0])
    }

    #[test]
    fn reweighted_identity_matches_rw_po() {
        let (data, effects, baselines) = two_cell_data();
        let rule = treat_above(0.0);
        let spec = po_spec(0.4);
        let bounds = SupportBounds::unbounded();
        let rw = ReweightSpec::uniform(2);
        let a = rw_po_reweighted(&data, &rule, &effects, &baselines, &rw, &spec, &bounds).unwrap();
        let w = sample_welfare(&data, &rule, &effects, 1.0).unwrap();
        let b = rw_po(w, &spec, &bounds).unwrap();
        assert!((a.value - b.value).abs() < 1e-12);
    }

    #[test]
    fn reweighting_toward_beneficiaries_raises_criterion() {
        let (data, effects, baselines) = two_cell_data();
        let rule = treat_above(0.0); // treats the benefiting cell only
        let spec = po_spec(0.1);
        let bounds = SupportBounds::unbounded();
        let flat = rw_po_reweighted(
            &data,
            &rule,
            &effects,
            &baselines,
            &ReweightSpec::uniform(2),
            &spec,
            &bounds,
        )
        .unwrap();
        // Double mass on the benefiting cell, halve on the other; hand
        // summation: (2·(1+2) + 0.5·1) / 2 = 3.25 vs flat (3 + 1)/2 = 2.
        let tilted = rw_po_reweighted(
            &data,
            &rule,
            &effects,
            &baselines,
            &ReweightSpec::from_weights(vec![2.0, 0.5]).unwrap(),
            &spec,
            &bounds,
        )
        .unwrap();
        assert!((flat.value - 1.9).abs() < 1e-12);
        assert!((tilted.value - 3.15).abs() < 1e-12);
        assert!(tilted.value > flat.value);
    }

    #[test]
    fn reweighted_zero_radius_is_exact() {
        let (data, effects, baselines) = two_cell_data();
        let rule = PolicyRule::Constant(true);
        let r = rw_po_reweighted(
            &data,
            &rule,
            &effects,
            &baselines,
            &ReweightSpec::uniform(2),
            &po_spec(0.0),
            &SupportBounds::unbounded(),
        )
        .unwrap();
        // ((1+2) + (1−1)) / 2 = 1.5.
        assert!((r.value - 1.5).abs() < 1e-12);
    }

    #[test]
    fn rw_alternative_examples() {
        let binary = SupportBounds::binary();
        let r = rw_alternative(0.2, 0.0, 0.6, &po_spec(0.1), &binary).unwrap();
        assert!((r.value - 0.1).abs() < 1e-12);
        assert!(!r.floor_binding);
        let r = rw_alternative(0.2, 0.0, 0.6, &po_spec(2.0), &binary).unwrap();
        assert_eq!(r.value, -1.0);
        assert!(r.floor_binding);
    }

    fn bundle_with(effects: Vec<f64>, y0: f64) -> EstimatorBundle {
        EstimatorBundle::new(y0).with_effects(effects)
    }

    #[test]
    fn joint_constant_rule_reduces_to_po_form() {
        let rows = vec![
            Observation::new(vec![0.0], 1.0, true),
            Observation::new(vec![1.0], 2.0, false),
        ];
        let data = Dataset::new(rows, SupportBounds::unbounded()).unwrap();
        let bundle = bundle_with(vec![2.0, 4.0], 0.5);
        let spec = joint_spec(1.0, 1);
        let r = rw_joint_empirical(
            &data,
            &PolicyRule::Constant(true),
            CouplingAssumption::ConstantTreatmentEffects,
            &bundle,
            &spec,
            &SupportBounds::unbounded(),
        )
        .unwrap();
        // max{ 0.5 + mean(2,4) − 1, −inf } = 2.5.
        assert!((r.value - 2.5).abs() < 1e-12);
        assert_eq!(r.eta_star, Some(1.0));
    }

    #[test]
    fn joint_two_observation_example() {
        // Profiles (h0, h1) = (2, 0) and (0, 1) with effects 3 and −1.
        let rows = vec![
            Observation::new(vec![2.0], 0.0, true),
            Observation::new(vec![-1.0], 0.0, false),
        ];
        let data = Dataset::new(rows, SupportBounds::unbounded()).unwrap();
        let rule = treat_above(0.0);
        let bundle = bundle_with(vec![3.0, -1.0], 0.0);
        let spec = joint_spec(0.4, 1);
        let r = rw_joint_empirical(
            &data,
            &rule,
            CouplingAssumption::ConstantTreatmentEffects,
            &bundle,
            &spec,
            &SupportBounds::unbounded(),
        )
        .unwrap();
        assert!((r.value - 0.9).abs() < 1e-12);
        assert!((r.eta_star.unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn conditional_independence_point_masses_reduce_to_joint() {
        let rows = vec![
            Observation::new(vec![2.0], 1.0, true),
            Observation::new(vec![-1.0], 0.0, false),
        ];
        let data = Dataset::new(rows, SupportBounds::unbounded()).unwrap();
        let rule = treat_above(0.0);
        let cdfs = vec![
            CdfPair {
                untreated: DiscreteCdf::point_mass(-2.0),
                treated: DiscreteCdf::point_mass(1.0),
            },
            CdfPair {
                untreated: DiscreteCdf::point_mass(0.0),
                treated: DiscreteCdf::point_mass(-1.0),
            },
        ];
        let spec = joint_spec(0.4, 1);
        let bounds = SupportBounds::unbounded();
        let ci = rw_conditional_independence(&data, &rule, &cdfs, &spec, &bounds).unwrap();

        // Equivalent per-observation formulation: Δ = treated − untreated
        // and the baseline is the mean untreated atom.
        let effects = vec![3.0, -1.0];
        let bundle = bundle_with(effects, -1.0);
        let joint = rw_joint_empirical(
            &data,
            &rule,
            CouplingAssumption::ConstantTreatmentEffects,
            &bundle,
            &spec,
            &bounds,
        )
        .unwrap();
        assert!(
            (ci.value - joint.value).abs() < 1e-12,
            "{} vs {}",
            ci.value,
            joint.value
        );
    }

    #[test]
    fn expected_min_four_atom_example() {
        // Independent fair coins on {0, 1}: min is 1 only when both are.
        let coin = DiscreteCdf::new(vec![(0.0, 0.5), (1.0, 0.5)]).unwrap();
        let v = expected_min_independent(coin.atoms(), 0.0, coin.atoms(), 0.0);
        assert!((v - 0.25).abs() < 1e-15);
    }

    #[test]
    fn expected_min_matches_pairwise_enumeration() {
        let mut state = 12345u64;
        let mut next = move || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 33) as f64) / (u32::MAX as f64)
        };
        for _ in 0..1000 {
            let na = 1 + (next() * 6.0) as usize;
            let nb = 1 + (next() * 6.0) as usize;
            let a = DiscreteCdf::new(
                (0..na).map(|_| (next() * 4.0 - 2.0, next() + 0.1)).collect(),
            )
            .unwrap();
            let b = DiscreteCdf::new(
                (0..nb).map(|_| (next() * 4.0 - 2.0, next() + 0.1)).collect(),
            )
            .unwrap();
            let (sa, sb) = (next(), next());
            let fast = expected_min_independent(a.atoms(), sa, b.atoms(), sb);
            let mut slow = 0.0;
            for &(va, wa) in a.atoms() {
                for &(vb, wb) in b.atoms() {
                    slow += wa * wb * (va + sa).min(vb + sb);
                }
            }
            assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
        }
    }

    #[test]
    fn star_criterion_is_a_lower_bound() {
        // Balanced antithetic construction: both arms are uniform over
        // {0, 1} given x, and the sample mirrors the atoms exactly, so both
        // couplings share the empirical marginals. Under the antitone
        // coupling the per-unit effects spread out, which hurts when the
        // rule separates arms through positive distances.
        let rows = vec![
            Observation::new(vec![0.5], 0.0, false),
            Observation::new(vec![0.5], 1.0, false),
            Observation::new(vec![0.5], 0.0, true),
            Observation::new(vec![0.5], 1.0, true),
        ];
        let data = Dataset::new(rows, SupportBounds::unbounded()).unwrap();
        let rule = treat_above(0.0);
        let spec = joint_spec(0.2, 1);
        let bounds = SupportBounds::unbounded();
        let atoms = vec![(0.0, 0.5), (1.0, 0.5)];
        let pair = CdfPair {
            untreated: DiscreteCdf::new(atoms.clone()).unwrap(),
            treated: DiscreteCdf::new(atoms).unwrap(),
        };
        let cdfs = vec![pair; 4];
        let pos = crate::estimators::rank_effects(&data, &cdfs).unwrap();
        let neg = crate::estimators::negative_rank_effects(&data, &cdfs).unwrap();
        assert_eq!(pos, vec![0.0; 4]);
        // Antitone pairs: low with high in both directions.
        assert_eq!(neg, vec![1.0, -1.0, -1.0, 1.0]);
        let y0 = 0.5;
        let ppd = rw_joint_empirical(
            &data,
            &rule,
            CouplingAssumption::PerfectPositiveDependence,
            &bundle_with(pos, y0),
            &spec,
            &bounds,
        )
        .unwrap();
        let star = rw_star_empirical(
            &data,
            &rule,
            &EstimatorBundle::new(y0).with_negative_effects(neg),
            &spec,
            &bounds,
        )
        .unwrap();
        assert!(star.value <= ppd.value + 1e-12);
        assert!(star.value < ppd.value - 1e-9, "separating h should be strict");
    }

    #[test]
    fn star_zero_radius_is_negative_coupling_welfare() {
        let rows = vec![
            Observation::new(vec![1.0], 0.0, true),
            Observation::new(vec![-1.0], 0.0, false),
        ];
        let data = Dataset::new(rows, SupportBounds::unbounded()).unwrap();
        let rule = treat_above(0.0);
        let star_effects = vec![2.0, -3.0];
        let bundle = EstimatorBundle::new(1.0).with_negative_effects(star_effects.clone());
        let spec = joint_spec(0.0, 1);
        let r = rw_star_empirical(&data, &rule, &bundle, &spec, &SupportBounds::unbounded())
            .unwrap();
        let w = sample_welfare(&data, &rule, &star_effects, 1.0).unwrap();
        assert!((r.value - w).abs() < 1e-12);
    }

    #[test]
    fn criteria_monotone_in_radius_and_floored() {
        let rows = vec![
            Observation::new(vec![0.7], 0.9, true),
            Observation::new(vec![-0.4], 0.2, false),
            Observation::new(vec![0.1], 0.8, true),
        ];
        let data = Dataset::new(rows, SupportBounds::binary()).unwrap();
        let rule = treat_above(0.0);
        let bounds = SupportBounds::binary();
        let bundle = EstimatorBundle::new(0.4)
            .with_effects(vec![0.3, -0.2, 0.5])
            .with_negative_effects(vec![0.1, -0.4, 0.2]);
        let atoms = DiscreteCdf::new(vec![(0.0, 0.5), (1.0, 0.5)]).unwrap();
        let cdfs = vec![
            CdfPair { untreated: atoms.clone(), treated: atoms.clone() };
            3
        ];
        let mut previous: Option<[f64; 3]> = None;
        for step in 0..12 {
            let eps = step as f64 * 0.25;
            let joint = joint_spec(eps, 1);
            let a = rw_joint_empirical(
                &data,
                &rule,
                CouplingAssumption::PerfectPositiveDependence,
                &bundle,
                &joint,
                &bounds,
            )
            .unwrap();
            let b = rw_star_empirical(&data, &rule, &bundle, &joint, &bounds).unwrap();
            let c = rw_conditional_independence(&data, &rule, &cdfs, &joint, &bounds).unwrap();
            for r in [&a, &b, &c] {
                assert!(r.value >= bounds.y_lower - 1e-12);
            }
            if let Some(prev) = previous {
                assert!(a.value <= prev[0] + 1e-9);
                assert!(b.value <= prev[1] + 1e-9);
                assert!(c.value <= prev[2] + 1e-9);
            }
            previous = Some([a.value, b.value, c.value]);
        }
    }

    #[test]
    fn zero_radius_equals_sample_welfare() {
        let rows = vec![
            Observation::new(vec![0.7], 0.9, true),
            Observation::new(vec![-0.4], 0.2, false),
        ];
        let data = Dataset::new(rows, SupportBounds::unbounded()).unwrap();
        let rule = treat_above(0.0);
        let effects = vec![0.3, -0.2];
        let bundle = bundle_with(effects.clone(), 0.4);
        let r = rw_joint_empirical(
            &data,
            &rule,
            CouplingAssumption::ConstantTreatmentEffects,
            &bundle,
            &joint_spec(0.0, 1),
            &SupportBounds::unbounded(),
        )
        .unwrap();
        let w = sample_welfare(&data, &rule, &effects, 0.4).unwrap();
        assert!((r.value - w).abs() < 1e-12);
    }

    #[test]
    fn ordering_preserved_under_po_shifts() {
        // Whenever plain welfare orders two rules, so does the robust
        // criterion, for every radius.
        let welfares: [(f64, f64); 3] = [(1.2, 0.7), (0.3, 0.3), (-0.5, 0.25)];
        for &(wa, wb) in &welfares {
            for step in 0..20 {
                let spec = po_spec(step as f64 * 0.2);
                let bounds = SupportBounds::unbounded();
                let ra = rw_po(wa.max(wb), &spec, &bounds).unwrap();
                let rb = rw_po(wa.min(wb), &spec, &bounds).unwrap();
                assert!(ra.value >= rb.value);
            }
        }
    }

    #[test]
    fn regret_domination_on_finite_menu() {
        let menu = [1.4, 0.9, 0.2, -0.3];
        let bounds = SupportBounds::binary();
        for step in 0..15 {
            let spec = po_spec(step as f64 * 0.15);
            let best_w = menu.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let best_rw = menu
                .iter()
                .map(|&w| rw_po(w, &spec, &bounds).unwrap().value)
                .fold(f64::NEG_INFINITY, f64::max);
            for &w in &menu {
                let rw = rw_po(w, &spec, &bounds).unwrap().value;
                assert!(best_rw - rw <= best_w - w + 1e-12);
            }
        }
    }
}
