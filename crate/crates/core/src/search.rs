//! Exhaustive policy search over finite rule classes, and worst-case
//! welfare curves over ε grids.
//!
//! Search is a plain enumeration: the classes used in practice are finite
//! grids (threshold cut-offs at observed covariate values, angle/offset
//! grids for linear scores), so the optimization gap is exactly zero and
//! determinism reduces to a fixed tie-break. Ties are broken by the
//! lexicographically smallest rule encoding, so the reduction order never
//! affects the result.

use crate::estimators::EstimatorBundle;
use crate::eta::{EtaEnvelope, EtaSolution};
use crate::model::{
    CriterionResult, Dataset, NeighborhoodSpec, PolicyRule, Sign, SupportBounds, ThresholdTerm,
};
use crate::robust::{
    effects_for_coupling, eta_terms, rw_conditional_independence, rw_joint_empirical,
    CouplingAssumption, RobustError,
};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("policy class is empty")]
    EmptyClass,
    #[error("epsilon grid must be sorted ascending and nonnegative")]
    BadEpsilonGrid,
    #[error("criterion error: {0}")]
    Robust(#[from] RobustError),
    #[error("model error: {0}")]
    Model(#[from] crate::model::ModelError),
}

/// A finite, enumerable class of policy rules.
#[derive(Debug, Clone)]
pub enum PolicyClassSpec {
    /// Threshold rules over the given dimensions: one rule per sign
    /// pattern and per combination of cut-offs.
    ThresholdGrid {
        dims: Vec<usize>,
        /// Sign patterns, each as long as `dims`.
        signs: Vec<Vec<Sign>>,
        /// Candidate cut-offs per dimension (parallel to `dims`).
        cuts: Vec<Vec<f64>>,
        include_constants: bool,
    },
    /// Two-dimensional linear eligibility scores on an angle/offset grid:
    /// treat iff `cos(θ)·x₁ + sin(θ)·x₂ ≥ offset`.
    LinearGrid {
        angles: Vec<f64>,
        offsets: Vec<f64>,
        include_constants: bool,
    },
    /// An explicit rule menu.
    ExplicitList(Vec<PolicyRule>),
}

impl PolicyClassSpec {
    pub fn enumerate(&self) -> Result<Vec<PolicyRule>, SearchError> {
        let mut rules = Vec::new();
        match self {
            PolicyClassSpec::ThresholdGrid {
                dims,
                signs,
                cuts,
                include_constants,
            } => {
                if cuts.len() != dims.len() || cuts.iter().any(Vec::is_empty) {
                    return Err(SearchError::EmptyClass);
                }
                for pattern in signs {
                    if pattern.len() != dims.len() {
                        return Err(SearchError::EmptyClass);
                    }
                    // Mixed-radix counter over the per-dimension cut grids.
                    let mut index = vec![0usize; dims.len()];
                    'grid: loop {
                        let terms: Vec<ThresholdTerm> = (0..dims.len())
                            .map(|pos| ThresholdTerm {
                                dim: dims[pos],
                                sign: pattern[pos],
                                cut: cuts[pos][index[pos]],
                            })
                            .collect();
                        rules.push(PolicyRule::threshold(terms)?);
                        for pos in (0..index.len()).rev() {
                            index[pos] += 1;
                            if index[pos] < cuts[pos].len() {
                                continue 'grid;
                            }
                            index[pos] = 0;
                        }
                        break;
                    }
                }
                if *include_constants {
                    rules.push(PolicyRule::Constant(false));
                    rules.push(PolicyRule::Constant(true));
                }
            }
            PolicyClassSpec::LinearGrid {
                angles,
                offsets,
                include_constants,
            } => {
                for &theta in angles {
                    for &offset in offsets {
                        rules.push(PolicyRule::linear(-offset, vec![theta.cos(), theta.sin()])?);
                    }
                }
                if *include_constants {
                    rules.push(PolicyRule::Constant(false));
                    rules.push(PolicyRule::Constant(true));
                }
            }
            PolicyClassSpec::ExplicitList(list) => rules.extend(list.iter().cloned()),
        }
        if rules.is_empty() {
            return Err(SearchError::EmptyClass);
        }
        Ok(rules)
    }
}

/// One evaluated rule.
#[derive(Debug, Clone)]
pub struct RuleValue {
    pub rule: PolicyRule,
    pub result: CriterionResult,
}

/// Outcome of an exhaustive search.
#[derive(Debug, Clone)]
pub struct SearchReport {
    pub best: RuleValue,
    /// Always zero: the search enumerates the whole class.
    pub optimization_gap: f64,
    /// Per-rule values in enumeration order, when requested.
    pub per_rule: Option<Vec<RuleValue>>,
}

fn better(a: &RuleValue, b: &RuleValue) -> bool {
    match a.result.value.partial_cmp(&b.result.value) {
        Some(std::cmp::Ordering::Greater) => true,
        Some(std::cmp::Ordering::Less) => false,
        _ => a.rule.encoding() < b.rule.encoding(),
    }
}

/// Exhaustively maximize the coupling's criterion over the class.
pub fn maximize(
    data: &Dataset,
    class: &PolicyClassSpec,
    coupling: CouplingAssumption,
    bundle: &EstimatorBundle,
    spec: &NeighborhoodSpec,
    bounds: &SupportBounds,
    record_all: bool,
) -> Result<SearchReport, SearchError> {
    let rules = class.enumerate()?;
    let evaluated: Result<Vec<RuleValue>, RobustError> = rules
        .into_par_iter()
        .map(|rule| {
            let result = rw_joint_empirical(data, &rule, coupling, bundle, spec, bounds)?;
            Ok(RuleValue { rule, result })
        })
        .collect();
    let evaluated = evaluated?;
    let best = evaluated
        .iter()
        .fold(None::<&RuleValue>, |acc, candidate| match acc {
            Some(current) if !better(candidate, current) => Some(current),
            _ => Some(candidate),
        })
        .expect("class enumeration is nonempty")
        .clone();
    Ok(SearchReport {
        best,
        optimization_gap: 0.0,
        per_rule: record_all.then_some(evaluated),
    })
}

/// One row of a worst-case welfare curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub rule_id: usize,
    pub epsilon: f64,
    pub value: f64,
}

/// Worst-case welfare per rule over an ascending ε grid.
///
/// For couplings that reduce to per-observation effects the kink structure
/// of the inner problem does not depend on ε, so one envelope per rule
/// serves the whole grid.
pub fn epsilon_curve(
    data: &Dataset,
    rules: &[PolicyRule],
    coupling: CouplingAssumption,
    bundle: &EstimatorBundle,
    base: &NeighborhoodSpec,
    bounds: &SupportBounds,
    eps_grid: &[f64],
) -> Result<Vec<CurveRow>, SearchError> {
    if eps_grid.is_empty()
        || eps_grid.windows(2).any(|w| w[0] > w[1])
        || eps_grid.iter().any(|&e| e.is_nan() || e < 0.0)
    {
        return Err(SearchError::BadEpsilonGrid);
    }
    if rules.is_empty() {
        return Err(SearchError::EmptyClass);
    }
    let per_rule: Result<Vec<Vec<CurveRow>>, SearchError> = rules
        .par_iter()
        .enumerate()
        .map(|(rule_id, rule)| {
            let mut rows = Vec::with_capacity(eps_grid.len());
            if coupling == CouplingAssumption::ConditionalIndependence {
                let cdfs = bundle
                    .cond_cdfs
                    .as_ref()
                    .ok_or(RobustError::Estimator(
                        crate::estimators::EstimatorError::MissingField("cond_cdfs"),
                    ))
                    .map_err(SearchError::Robust)?;
                for &eps in eps_grid {
                    let spec = base.with_epsilon(eps).map_err(RobustError::Model)?;
                    let r = rw_conditional_independence(data, rule, cdfs, &spec, bounds)?;
                    rows.push(CurveRow {
                        rule_id,
                        epsilon: eps,
                        value: r.value,
                    });
                }
                return Ok(rows);
            }
            let effects = effects_for_coupling(data, coupling, bundle)?;
            let terms = eta_terms(data, rule, &effects, base)?;
            let envelope = EtaEnvelope::new(&terms).map_err(RobustError::Eta)?;
            for &eps in eps_grid {
                let value = match envelope.solve(eps) {
                    EtaSolution::Attained { value, .. } => {
                        (bundle.y0_mean + value).max(bounds.y_lower)
                    }
                    EtaSolution::Unbounded => {
                        return Err(SearchError::Robust(RobustError::UnboundedInner))
                    }
                };
                rows.push(CurveRow {
                    rule_id,
                    epsilon: eps,
                    value,
                });
            }
            Ok(rows)
        })
        .collect();
    Ok(per_rule?.into_iter().flatten().collect())
}
