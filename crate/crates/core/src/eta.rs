//! Inner scalar maximization shared by the joint-shift criteria:
//!
//! ```text
//! sup_{η ≥ 1}  Σ_i w_i · min{ η·h0_i , Δ_i + η·h1_i }  −  η·ε
//! ```
//!
//! The objective is concave and piecewise linear in η, so the exact optimum
//! is found by sorting the per-term kinks and scanning for the slope sign
//! change ([`solve_breakpoints`]). An equivalent linear program
//! ([`solve_lp`]) provides an independent route to the same value.
//!
//! Infinite distances are symbolic sentinels: a term with `h0 = +∞`
//! contributes `Δ + η·h1`, a term with `h1 = +∞` contributes `η·h0`, and no
//! floating-point `∞ − ∞` can arise.

use crate::geometry::Dist;
use crate::lp::{self, Constraint, Direction, LinearProgram, LpOutcome, Sense};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EtaError {
    #[error("terms must be nonempty")]
    EmptyTerms,
    #[error("term {index}: {message}")]
    InvalidTerm { index: usize, message: String },
    #[error("epsilon must be nonnegative and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("internal error: {0}")]
    Internal(String),
}

/// One observation's contribution to the inner problem.
#[derive(Debug, Clone, Copy)]
pub struct EtaTerm {
    /// Distance to the non-treatment region (`h0`).
    pub to_nontreatment: Dist,
    /// Distance to the treatment region (`h1`).
    pub to_treatment: Dist,
    /// Treatment-effect estimate `Δ`.
    pub effect: f64,
    /// Positive sampling weight; normalized internally.
    pub weight: f64,
}

impl EtaTerm {
    pub fn new(to_nontreatment: Dist, to_treatment: Dist, effect: f64, weight: f64) -> Self {
        Self {
            to_nontreatment,
            to_treatment,
            effect,
            weight,
        }
    }
}

/// The inner problem: weighted terms plus the neighborhood radius.
#[derive(Debug, Clone)]
pub struct EtaProblem {
    terms: Vec<EtaTerm>,
    epsilon: f64,
}

impl EtaProblem {
    pub fn new(terms: Vec<EtaTerm>, epsilon: f64) -> Result<Self, EtaError> {
        if terms.is_empty() {
            return Err(EtaError::EmptyTerms);
        }
        if !epsilon.is_finite() || epsilon < 0.0 {
            return Err(EtaError::InvalidEpsilon(epsilon));
        }
        let mut total = 0.0;
        for (index, t) in terms.iter().enumerate() {
            if t.to_nontreatment.is_infinite() && t.to_treatment.is_infinite() {
                return Err(EtaError::InvalidTerm {
                    index,
                    message: "at most one distance may be infinite".into(),
                });
            }
            for d in [t.to_nontreatment, t.to_treatment] {
                if let Dist::Finite(v) = d {
                    if !v.is_finite() || v < 0.0 {
                        return Err(EtaError::InvalidTerm {
                            index,
                            message: format!("distances must be finite and nonnegative, got {v}"),
                        });
                    }
                }
            }
            if !t.effect.is_finite() {
                return Err(EtaError::InvalidTerm {
                    index,
                    message: "effect must be finite".into(),
                });
            }
            if !t.weight.is_finite() || t.weight <= 0.0 {
                return Err(EtaError::InvalidTerm {
                    index,
                    message: format!("weight must be positive, got {}", t.weight),
                });
            }
            total += t.weight;
        }
        let terms = terms
            .into_iter()
            .map(|mut t| {
                t.weight /= total;
                t
            })
            .collect();
        Ok(Self { terms, epsilon })
    }

    pub fn terms(&self) -> &[EtaTerm] {
        &self.terms
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

/// Result of the inner maximization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaSolution {
    /// The supremum is attained; `eta` is the smallest maximizer.
    Attained { eta: f64, value: f64 },
    /// The objective increases without bound (possible only when `ε` is
    /// smaller than the weight of terms whose minimum never saturates).
    Unbounded,
}

impl EtaSolution {
    pub fn value(&self) -> Option<f64> {
        match self {
            EtaSolution::Attained { value, .. } => Some(*value),
            EtaSolution::Unbounded => None,
        }
    }

    pub fn eta(&self) -> Option<f64> {
        match self {
            EtaSolution::Attained { eta, .. } => Some(*eta),
            EtaSolution::Unbounded => None,
        }
    }
}

/// Precomputed kink structure of `m(η) = Σ w_i·min{η·h0_i, Δ_i + η·h1_i}`.
///
/// The kinks do not depend on ε, so one envelope serves a whole ε-grid:
/// only the `−η·ε` tilt moves the argmax along the kink sequence.
#[derive(Debug, Clone)]
pub struct EtaEnvelope {
    terms: Vec<EtaTerm>,
    /// Kink positions in (1, ∞), ascending, paired with the slope lost
    /// there.
    breakpoints: Vec<(f64, f64)>,
    /// Right-derivative of `m` at η = 1.
    slope_at_one: f64,
    /// Slope of `m` beyond the last kink, computed directly from the
    /// per-term limits (not by subtraction, which would round an exact
    /// zero into noise).
    terminal_slope: f64,
}

impl EtaEnvelope {
    pub fn new(terms: &[EtaTerm]) -> Result<Self, EtaError> {
        // Reuse the constructor's validation and weight normalization.
        let problem = EtaProblem::new(terms.to_vec(), 0.0)?;
        let terms = problem.terms;

        let mut slope_at_one = 0.0;
        let mut terminal_slope = 0.0;
        let mut breakpoints: Vec<(f64, f64)> = Vec::new();
        for t in &terms {
            match (t.to_nontreatment, t.to_treatment) {
                (Dist::Finite(h0), Dist::Finite(h1)) => {
                    let stay = h0; // η·h0 at η = 1
                    let cross = t.effect + h1;
                    let slope = if stay < cross {
                        h0
                    } else if stay > cross {
                        h1
                    } else {
                        h0.min(h1)
                    };
                    slope_at_one += t.weight * slope;
                    terminal_slope += t.weight * h0.min(h1);
                    if h0 != h1 {
                        let at = t.effect / (h0 - h1);
                        if at > 1.0 && at.is_finite() {
                            breakpoints.push((at, t.weight * (h0 - h1).abs()));
                        }
                    }
                }
                (Dist::Infinite, Dist::Finite(h1)) => {
                    slope_at_one += t.weight * h1;
                    terminal_slope += t.weight * h1;
                }
                (Dist::Finite(h0), Dist::Infinite) => {
                    slope_at_one += t.weight * h0;
                    terminal_slope += t.weight * h0;
                }
                (Dist::Infinite, Dist::Infinite) => unreachable!("rejected at construction"),
            }
        }
        breakpoints.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        Ok(Self {
            terms,
            breakpoints,
            slope_at_one,
            terminal_slope,
        })
    }

    /// `m(η)` by direct summation.
    pub fn expectation_at(&self, eta: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let v = match (t.to_nontreatment, t.to_treatment) {
                    (Dist::Finite(h0), Dist::Finite(h1)) => {
                        (eta * h0).min(t.effect + eta * h1)
                    }
                    (Dist::Infinite, Dist::Finite(h1)) => t.effect + eta * h1,
                    (Dist::Finite(h0), Dist::Infinite) => eta * h0,
                    (Dist::Infinite, Dist::Infinite) => unreachable!(),
                };
                t.weight * v
            })
            .sum()
    }

    /// Maximize `m(η) − η·ε` over η ≥ 1.
    pub fn solve(&self, epsilon: f64) -> EtaSolution {
        if self.terminal_slope > epsilon {
            return EtaSolution::Unbounded;
        }
        // Walk the kinks until the slope turns nonpositive. The first such
        // point is the smallest maximizer of a concave piecewise-linear
        // function. Should the accumulated slope never quite reach zero,
        // the terminal-slope check above guarantees the maximum sits at
        // the last kink.
        let mut slope = self.slope_at_one - epsilon;
        let mut at = 1.0;
        if slope > 0.0 {
            let mut found = None;
            for &(bp, drop) in &self.breakpoints {
                slope -= drop;
                if slope <= 0.0 {
                    found = Some(bp);
                    break;
                }
            }
            at = found.unwrap_or_else(|| self.breakpoints.last().map_or(1.0, |&(bp, _)| bp));
        }
        // Guard the argmax against accumulated slope roundoff by comparing
        // directly evaluated neighbors.
        let mut candidates = vec![1.0, at];
        let idx = self.breakpoints.partition_point(|&(bp, _)| bp < at);
        if idx > 0 {
            candidates.push(self.breakpoints[idx - 1].0);
        }
        if let Some(&(next, _)) = self.breakpoints.get(idx + 1) {
            candidates.push(next);
        }
        candidates.retain(|&c| c >= 1.0);
        candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
        candidates.dedup();
        let mut best_eta = 1.0;
        let mut best_value = f64::NEG_INFINITY;
        for &eta in &candidates {
            let value = self.expectation_at(eta) - eta * epsilon;
            if value > best_value {
                best_value = value;
                best_eta = eta;
            }
        }
        EtaSolution::Attained {
            eta: best_eta,
            value: best_value,
        }
    }
}

/// Exact maximization by kink enumeration.
pub fn solve_breakpoints(problem: &EtaProblem) -> Result<EtaSolution, EtaError> {
    let envelope = EtaEnvelope::new(&problem.terms)?;
    Ok(envelope.solve(problem.epsilon))
}

/// The same optimum through the explicit linear program with variables
/// `(η, t_1, …, t_n)`; infinite distances drop the matching constraint.
pub fn solve_lp(problem: &EtaProblem) -> Result<EtaSolution, EtaError> {
    let n = problem.terms.len();
    // Variables: η (index 0, bounded below by 1) then the free t_i.
    let mut objective = vec![-problem.epsilon];
    objective.extend(problem.terms.iter().map(|t| t.weight));
    let mut bounds = vec![(1.0, f64::INFINITY)];
    bounds.extend(std::iter::repeat_n((f64::NEG_INFINITY, f64::INFINITY), n));
    let mut lp = LinearProgram::new(Direction::Maximize, objective).with_bounds(bounds);
    for (i, t) in problem.terms.iter().enumerate() {
        if let Dist::Finite(h0) = t.to_nontreatment {
            let mut coeffs = vec![0.0; n + 1];
            coeffs[0] = -h0;
            coeffs[i + 1] = 1.0;
            lp.push(Constraint::new(coeffs, Sense::Le, 0.0));
        }
        if let Dist::Finite(h1) = t.to_treatment {
            let mut coeffs = vec![0.0; n + 1];
            coeffs[0] = -h1;
            coeffs[i + 1] = 1.0;
            lp.push(Constraint::new(coeffs, Sense::Le, t.effect));
        }
    }
    match lp::solve(&lp).map_err(|e| EtaError::Internal(e.to_string()))? {
        LpOutcome::Optimal(sol) => Ok(EtaSolution::Attained {
            eta: sol.x[0],
            value: sol.value,
        }),
        LpOutcome::Unbounded => Ok(EtaSolution::Unbounded),
        LpOutcome::Infeasible => Err(EtaError::Internal(
            "inner problem reported infeasible, which cannot happen".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn term(h0: f64, h1: f64, effect: f64) -> EtaTerm {
        EtaTerm::new(Dist::Finite(h0), Dist::Finite(h1), effect, 1.0)
    }

    fn grid_maximum(problem: &EtaProblem, hi: f64, step: f64) -> (f64, f64) {
        let envelope = EtaEnvelope::new(problem.terms()).unwrap();
        let mut best = (1.0, f64::NEG_INFINITY);
        let mut eta = 1.0;
        while eta <= hi {
            let v = envelope.expectation_at(eta) - eta * problem.epsilon();
            if v > best.1 {
                best = (eta, v);
            }
            eta += step;
        }
        best
    }

    #[test]
    fn single_term_maximum_at_one() {
        let p = EtaProblem::new(vec![term(0.0, 1.0, -1.0)], 0.4).unwrap();
        let sol = solve_breakpoints(&p).unwrap();
        assert_eq!(sol, EtaSolution::Attained { eta: 1.0, value: -0.4 });
        let (grid_eta, grid_value) = grid_maximum(&p, 100.0, 1e-4);
        assert!((grid_value - -0.4).abs() < 1e-3);
        assert!((grid_eta - 1.0).abs() < 1e-3);
    }

    #[test]
    fn two_terms_interior_kink() {
        let p = EtaProblem::new(vec![term(2.0, 0.0, 3.0), term(0.0, 1.0, -1.0)], 0.4).unwrap();
        let sol = solve_breakpoints(&p).unwrap();
        match sol {
            EtaSolution::Attained { eta, value } => {
                assert!((eta - 1.5).abs() < 1e-12);
                assert!((value - 0.9).abs() < 1e-12);
            }
            _ => panic!("expected attained"),
        }
        let (grid_eta, grid_value) = grid_maximum(&p, 100.0, 1e-4);
        assert!((grid_value - 0.9).abs() < 1e-3);
        assert!((grid_eta - 1.5).abs() < 1e-3);
    }

    #[test]
    fn large_epsilon_pins_eta_at_one() {
        let terms = vec![term(0.7, 0.0, 1.0), term(0.0, 0.3, -0.5)];
        let cap: f64 = terms
            .iter()
            .map(|t| {
                0.5 * t
                    .to_nontreatment
                    .finite()
                    .unwrap()
                    .max(t.to_treatment.finite().unwrap())
            })
            .sum();
        let p = EtaProblem::new(terms, cap + 0.1).unwrap();
        match solve_breakpoints(&p).unwrap() {
            EtaSolution::Attained { eta, .. } => assert_eq!(eta, 1.0),
            _ => panic!(),
        }
    }

    #[test]
    fn infinite_nontreatment_distance() {
        // Constant-treat profile: the term reduces to Δ + η·h1.
        let p = EtaProblem::new(
            vec![EtaTerm::new(Dist::Infinite, Dist::Finite(0.0), 5.0, 1.0)],
            1.0,
        )
        .unwrap();
        let a = solve_breakpoints(&p).unwrap();
        let b = solve_lp(&p).unwrap();
        assert_eq!(a, EtaSolution::Attained { eta: 1.0, value: 4.0 });
        match b {
            EtaSolution::Attained { eta, value } => {
                assert!((eta - 1.0).abs() < 1e-9);
                assert!((value - 4.0).abs() < 1e-9);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn unbounded_when_slope_never_turns() {
        let p = EtaProblem::new(
            vec![EtaTerm::new(Dist::Infinite, Dist::Finite(2.0), 0.0, 1.0)],
            1.0,
        )
        .unwrap();
        assert_eq!(solve_breakpoints(&p).unwrap(), EtaSolution::Unbounded);
        assert_eq!(solve_lp(&p).unwrap(), EtaSolution::Unbounded);
    }

    #[test]
    fn zero_epsilon_recovers_saturated_sum() {
        // At ε = 0 the objective is nondecreasing and flattens after the
        // last kink; the attained value is the saturated per-term limit.
        let p = EtaProblem::new(
            vec![term(2.0, 0.0, 3.0), term(0.0, 1.0, -1.0), term(0.5, 0.0, -2.0)],
            0.0,
        )
        .unwrap();
        match solve_breakpoints(&p).unwrap() {
            EtaSolution::Attained { value, .. } => {
                // Saturated values: min{∞,3} = 3, min{0,∞} = 0, min{∞,−2} = −2.
                assert!((value - (3.0 + 0.0 - 2.0) / 3.0).abs() < 1e-12);
            }
            _ => panic!("expected attained at the last kink"),
        }
    }

    struct Lcg(u64);

    impl Lcg {
        fn next(&mut self) -> f64 {
            self.0 = self
                .0
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((self.0 >> 33) as f64) / (u32::MAX as f64)
        }

        fn range(&mut self, lo: f64, hi: f64) -> f64 {
            lo + (hi - lo) * self.next()
        }
    }

    fn random_problem(rng: &mut Lcg, max_terms: usize) -> EtaProblem {
        let n = 1 + (rng.next() * max_terms as f64) as usize;
        let terms: Vec<EtaTerm> = (0..n)
            .map(|_| {
                // Mimic a rule profile: one side zero, the other positive,
                // with occasional sentinels and boundary points.
                let roll = rng.next();
                let (h0, h1) = if roll < 0.1 {
                    (Dist::Infinite, Dist::Finite(0.0))
                } else if roll < 0.2 {
                    (Dist::Finite(0.0), Dist::Infinite)
                } else if roll < 0.55 {
                    (Dist::Finite(rng.range(0.0, 2.0)), Dist::Finite(0.0))
                } else if roll < 0.9 {
                    (Dist::Finite(0.0), Dist::Finite(rng.range(0.0, 2.0)))
                } else {
                    (Dist::Finite(0.0), Dist::Finite(0.0))
                };
                EtaTerm::new(h0, h1, rng.range(-3.0, 3.0), rng.range(0.2, 2.0))
            })
            .collect();
        let epsilon = rng.range(0.01, 1.5);
        EtaProblem::new(terms, epsilon).unwrap()
    }

    #[test]
    fn breakpoints_match_lp_on_random_instances() {
        let mut rng = Lcg(9001);
        for _ in 0..100 {
            let p = random_problem(&mut rng, 50);
            let a = solve_breakpoints(&p).unwrap();
            let b = solve_lp(&p).unwrap();
            match (a, b) {
                (
                    EtaSolution::Attained { value: va, .. },
                    EtaSolution::Attained { value: vb, .. },
                ) => assert!((va - vb).abs() < 1e-8, "{va} vs {vb}"),
                (EtaSolution::Unbounded, EtaSolution::Unbounded) => {}
                other => panic!("disagree: {other:?}"),
            }
        }
    }

    #[test]
    fn optimality_certificate_on_grid() {
        let mut rng = Lcg(555);
        for _ in 0..40 {
            let p = random_problem(&mut rng, 20);
            let envelope = EtaEnvelope::new(p.terms()).unwrap();
            if let EtaSolution::Attained { eta, value } = envelope.solve(p.epsilon()) {
                let f1 = envelope.expectation_at(1.0) - p.epsilon();
                assert!(value >= f1 - 1e-9);
                let mut probe = 1.0;
                while probe < 40.0 {
                    let v = envelope.expectation_at(probe) - probe * p.epsilon();
                    assert!(value >= v - 1e-9, "beaten at {probe}: {v} > {value}");
                    probe += 0.01;
                }
                let _ = eta;
            }
        }
    }

    #[test]
    fn positive_scaling_invariance() {
        let mut rng = Lcg(777);
        for _ in 0..50 {
            let p = random_problem(&mut rng, 12);
            let lambda = rng.range(0.1, 8.0);
            let scaled_terms: Vec<EtaTerm> = p
                .terms()
                .iter()
                .map(|t| {
                    let scale = |d: Dist| match d {
                        Dist::Finite(v) => Dist::Finite(lambda * v),
                        Dist::Infinite => Dist::Infinite,
                    };
                    EtaTerm::new(
                        scale(t.to_nontreatment),
                        scale(t.to_treatment),
                        lambda * t.effect,
                        t.weight,
                    )
                })
                .collect();
            let scaled = EtaProblem::new(scaled_terms, lambda * p.epsilon()).unwrap();
            match (solve_breakpoints(&p).unwrap(), solve_breakpoints(&scaled).unwrap()) {
                (
                    EtaSolution::Attained { eta: e1, value: v1 },
                    EtaSolution::Attained { eta: e2, value: v2 },
                ) => {
                    assert!((e1 - e2).abs() < 1e-9, "eta moved: {e1} vs {e2}");
                    assert!((lambda * v1 - v2).abs() < 1e-8 * lambda.max(1.0));
                }
                (EtaSolution::Unbounded, EtaSolution::Unbounded) => {}
                other => panic!("scaling changed the outcome: {other:?}"),
            }
        }
    }

    #[test]
    fn value_decreasing_in_epsilon_with_envelope_slope() {
        let mut rng = Lcg(31);
        for _ in 0..40 {
            let p = random_problem(&mut rng, 15);
            let envelope = EtaEnvelope::new(p.terms()).unwrap();
            let eps = p.epsilon();
            let delta = 1e-7;
            let (lo, mid, hi) = (
                envelope.solve(eps - delta),
                envelope.solve(eps),
                envelope.solve(eps + delta),
            );
            if let (
                EtaSolution::Attained { value: vl, eta: el },
                EtaSolution::Attained { value: vm, eta },
                EtaSolution::Attained { value: vh, eta: eh },
            ) = (lo, mid, hi)
            {
                assert!(vl >= vm && vm >= vh, "not monotone in epsilon");
                // Envelope derivative is −η* wherever the argmax is stable.
                if el == eh {
                    let fd = (vh - vl) / (2.0 * delta);
                    assert!((fd + eta).abs() < 1e-6, "fd {fd} vs -eta {}", -eta);
                }
            }
        }
    }
}
