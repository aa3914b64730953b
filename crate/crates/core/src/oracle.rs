//! Brute-force optimal-transport adversary on discrete instances.
//!
//! The closed-form criteria are duals of an infimum over transport plans;
//! this module attacks the primal directly. Restricting the adversary to a
//! finite target grid makes the problem a small linear program whose value
//! is always an upper bound on the true worst case (weak duality holds on
//! any grid), with equality once the grid contains the destinations the
//! duality proofs construct: outcome floors, downward outcome steps, and
//! covariate projections just across the decision boundary. Target grids
//! are built from exactly those destinations rather than dense hypergrids,
//! keeping the programs a few hundred variables at most.

use crate::geometry::{box_distance_scaled, Dist};
use crate::lp::{self, Constraint, Direction, LinearProgram, LpError, LpOutcome, Sense};
use crate::model::{
    evaluate_rule, BoxRegion, ModelError, PolicyRule, Sign, SupportBounds, ThresholdTerm,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("model error: {0}")]
    Model(#[from] ModelError),
    #[error("lp error: {0}")]
    Lp(#[from] LpError),
    #[error("instance needs at least one source atom and one target")]
    EmptyInstance,
    #[error("source masses must be positive and sum to one, got total {0}")]
    BadMasses(f64),
    #[error("transport budget must be nonnegative, got {0}")]
    NegativeBudget(f64),
    #[error("source atom {0} has no finite-cost target")]
    NoFiniteTarget(usize),
    #[error("transport program reported {0}, which cannot happen with a nonnegative budget")]
    UnexpectedOutcome(&'static str),
    #[error("recipe is inapplicable: {0}")]
    RecipeInapplicable(String),
    #[error("no crossing point found for atom {0}; the rule may be constant")]
    NoCrossing(usize),
}

/// A support point of the joint distribution of covariates and both
/// potential outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPoint {
    pub x: Vec<f64>,
    pub y0: f64,
    pub y1: f64,
}

impl JointPoint {
    pub fn new(x: Vec<f64>, y0: f64, y1: f64) -> Self {
        Self { x, y0, y1 }
    }
}

/// A joint point carrying probability mass.
#[derive(Debug, Clone)]
pub struct MassPoint {
    pub point: JointPoint,
    pub mass: f64,
}

impl MassPoint {
    pub fn new(point: JointPoint, mass: f64) -> Self {
        Self { point, mass }
    }
}

/// Ground metric between joint points.
#[derive(Debug, Clone)]
pub enum GroundMetric {
    /// Outcome moves priced by the l1 norm; any covariate move is
    /// prohibited (infinite cost).
    OutcomeShift,
    /// Outcome moves priced by the l2 norm, covariate moves prohibited;
    /// pair with order 2.
    OutcomeShiftL2,
    /// Outcome moves plus the Euclidean norm of the rescaled covariate
    /// move.
    Joint { scale: Vec<f64> },
}

impl GroundMetric {
    pub fn cost(&self, a: &JointPoint, b: &JointPoint) -> Dist {
        let dy0 = (a.y0 - b.y0).abs();
        let dy1 = (a.y1 - b.y1).abs();
        match self {
            GroundMetric::OutcomeShift => {
                if a.x != b.x {
                    Dist::Infinite
                } else {
                    Dist::Finite(dy0 + dy1)
                }
            }
            GroundMetric::OutcomeShiftL2 => {
                if a.x != b.x {
                    Dist::Infinite
                } else {
                    Dist::Finite((dy0 * dy0 + dy1 * dy1).sqrt())
                }
            }
            GroundMetric::Joint { scale } => {
                let dx: f64 = a
                    .x
                    .iter()
                    .zip(&b.x)
                    .enumerate()
                    .map(|(i, (p, q))| {
                        let s = if scale.is_empty() { 1.0 } else { scale[i] };
                        let r = (p - q) * s;
                        r * r
                    })
                    .sum::<f64>()
                    .sqrt();
                Dist::Finite(dy0 + dy1 + dx)
            }
        }
    }
}

/// Welfare integrand evaluated at a target point.
#[derive(Debug, Clone)]
pub enum TransportObjective {
    /// `y1·τ(x) + y0·(1 − τ(x))`.
    Welfare(PolicyRule),
    /// `y1 − y0` (for bounds on the average treatment effect).
    TreatmentEffect,
    /// `y1·τ(x) − y0` (welfare gain over treating no one).
    WelfareVersusUntreated(PolicyRule),
}

impl TransportObjective {
    pub fn eval(&self, z: &JointPoint) -> Result<f64, ModelError> {
        Ok(match self {
            TransportObjective::Welfare(rule) => {
                if evaluate_rule(rule, &z.x)? {
                    z.y1
                } else {
                    z.y0
                }
            }
            TransportObjective::TreatmentEffect => z.y1 - z.y0,
            TransportObjective::WelfareVersusUntreated(rule) => {
                if evaluate_rule(rule, &z.x)? {
                    z.y1 - z.y0
                } else {
                    -z.y0
                }
            }
        })
    }
}

/// A discrete adversary: source atoms, candidate destinations, a ground
/// metric with transport order, an objective, and the budget ε.
#[derive(Debug, Clone)]
pub struct TransportInstance {
    pub sources: Vec<MassPoint>,
    pub targets: Vec<JointPoint>,
    pub metric: GroundMetric,
    pub objective: TransportObjective,
    /// Wasserstein order; costs are raised to this power and the budget
    /// constraint reads `E[dᵖ] ≤ εᵖ`.
    pub order: u32,
    pub budget: f64,
}

/// Optimal plan of the grid-restricted adversary.
#[derive(Debug, Clone)]
pub struct WorstCase {
    pub value: f64,
    /// `(source, target, mass)` entries of the optimal coupling.
    pub plan: Vec<(usize, usize, f64)>,
}

/// Solve the adversary's problem restricted to the target grid: minimize
/// the expected objective over couplings whose rows marginalize to the
/// source masses and whose expected cost stays within budget.
pub fn worst_case(instance: &TransportInstance) -> Result<WorstCase, OracleError> {
    let m = instance.sources.len();
    let t = instance.targets.len();
    if m == 0 || t == 0 {
        return Err(OracleError::EmptyInstance);
    }
    let total_mass: f64 = instance.sources.iter().map(|s| s.mass).sum();
    if instance.sources.iter().any(|s| s.mass.is_nan() || s.mass <= 0.0)
        || (total_mass - 1.0).abs() > 1e-9
    {
        return Err(OracleError::BadMasses(total_mass));
    }
    if instance.budget.is_nan() || instance.budget < 0.0 {
        return Err(OracleError::NegativeBudget(instance.budget));
    }

    // Variables: one per finite-cost (source, target) pair.
    let mut vars: Vec<(usize, usize, f64, f64)> = Vec::new(); // (i, j, cost^p, objective_j)
    let mut objective_cache = Vec::with_capacity(t);
    for target in &instance.targets {
        objective_cache.push(instance.objective.eval(target)?);
    }
    for (i, source) in instance.sources.iter().enumerate() {
        let mut any = false;
        for (j, target) in instance.targets.iter().enumerate() {
            if let Dist::Finite(c) = instance.metric.cost(&source.point, target) {
                vars.push((i, j, c.powi(instance.order as i32), objective_cache[j]));
                any = true;
            }
        }
        if !any {
            return Err(OracleError::NoFiniteTarget(i));
        }
    }

    let objective: Vec<f64> = vars.iter().map(|&(_, _, _, obj)| obj).collect();
    let mut program = LinearProgram::new(Direction::Minimize, objective);
    for (i, source) in instance.sources.iter().enumerate() {
        let coeffs = vars
            .iter()
            .map(|&(vi, _, _, _)| if vi == i { 1.0 } else { 0.0 })
            .collect();
        program.push(Constraint::new(coeffs, Sense::Eq, source.mass));
    }
    let cost_row: Vec<f64> = vars.iter().map(|&(_, _, c, _)| c).collect();
    let budget = instance.budget.powi(instance.order as i32);
    program.push(Constraint::new(cost_row, Sense::Le, budget));

    match lp::solve(&program)? {
        LpOutcome::Optimal(sol) => {
            let plan = vars
                .iter()
                .zip(&sol.x)
                .filter(|&(_, &mass)| mass > 1e-12)
                .map(|(&(i, j, _, _), &mass)| (i, j, mass))
                .collect();
            Ok(WorstCase {
                value: sol.value,
                plan,
            })
        }
        LpOutcome::Infeasible => Err(OracleError::UnexpectedOutcome("infeasible")),
        LpOutcome::Unbounded => Err(OracleError::UnexpectedOutcome("unbounded")),
    }
}

/// Wasserstein distance of the given order between two discrete
/// distributions: the classical transport program with both marginals
/// pinned.
pub fn wasserstein_distance(
    p: &[MassPoint],
    q: &[MassPoint],
    metric: &GroundMetric,
    order: u32,
) -> Result<f64, OracleError> {
    if p.is_empty() || q.is_empty() {
        return Err(OracleError::EmptyInstance);
    }
    for side in [p, q] {
        let total: f64 = side.iter().map(|s| s.mass).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(OracleError::BadMasses(total));
        }
    }
    let mut vars: Vec<(usize, usize, f64)> = Vec::new();
    for (i, a) in p.iter().enumerate() {
        for (j, b) in q.iter().enumerate() {
            if let Dist::Finite(c) = metric.cost(&a.point, &b.point) {
                vars.push((i, j, c.powi(order as i32)));
            }
        }
    }
    if vars.is_empty() {
        return Err(OracleError::NoFiniteTarget(0));
    }
    let objective: Vec<f64> = vars.iter().map(|&(_, _, c)| c).collect();
    let mut program = LinearProgram::new(Direction::Minimize, objective);
    for (i, a) in p.iter().enumerate() {
        let coeffs = vars
            .iter()
            .map(|&(vi, _, _)| if vi == i { 1.0 } else { 0.0 })
            .collect();
        program.push(Constraint::new(coeffs, Sense::Eq, a.mass));
    }
    for (j, b) in q.iter().enumerate() {
        let coeffs = vars
            .iter()
            .map(|&(_, vj, _)| if vj == j { 1.0 } else { 0.0 })
            .collect();
        program.push(Constraint::new(coeffs, Sense::Eq, b.mass));
    }
    match lp::solve(&program)? {
        LpOutcome::Optimal(sol) => Ok(sol.value.max(0.0).powf(1.0 / f64::from(order))),
        LpOutcome::Infeasible => Err(OracleError::UnexpectedOutcome("infeasible")),
        LpOutcome::Unbounded => Err(OracleError::UnexpectedOutcome("unbounded")),
    }
}

/// Find a point just across the rule's decision boundary from `x`: the
/// nearest point (in rescaled coordinates) whose decision differs,
/// overshooting the boundary by a hair so open regions are reachable.
pub fn boundary_crossing(
    rule: &PolicyRule,
    x: &[f64],
    scale: &[f64],
    overshoot: f64,
) -> Result<Option<Vec<f64>>, ModelError> {
    let treated = evaluate_rule(rule, x)?;
    let scale_at = |i: usize| if scale.is_empty() { 1.0 } else { scale[i] };
    let mut step = overshoot.max(1e-300);
    for _ in 0..8 {
        let candidate: Option<Vec<f64>> = match rule {
            PolicyRule::Constant(_) => None,
            PolicyRule::LinearEligibility { intercept, slope } => {
                let score: f64 = intercept + slope.iter().zip(x).map(|(b, v)| b * v).sum::<f64>();
                // Steepest descent of the score in the rescaled norm.
                let norm_sq: f64 = slope
                    .iter()
                    .enumerate()
                    .map(|(i, b)| (b / scale_at(i)) * (b / scale_at(i)))
                    .sum();
                let target = if treated { -step } else { step };
                let t = (target - score) / norm_sq;
                Some(
                    x.iter()
                        .enumerate()
                        .map(|(i, &v)| v + t * slope[i] / (scale_at(i) * scale_at(i)))
                        .collect(),
                )
            }
            PolicyRule::Threshold(terms) => {
                if treated {
                    // Exit through the cheapest face.
                    let exit = terms
                        .iter()
                        .min_by(|a, b| {
                            let sa = a.sign.slack(x[a.dim], a.cut) * scale_at(a.dim);
                            let sb = b.sign.slack(x[b.dim], b.cut) * scale_at(b.dim);
                            sa.partial_cmp(&sb).unwrap()
                        })
                        .cloned();
                    exit.map(|t| {
                        let mut out = x.to_vec();
                        out[t.dim] = match t.sign {
                            Sign::AtOrAbove => t.cut - step / scale_at(t.dim),
                            Sign::AtOrBelow => t.cut + step / scale_at(t.dim),
                        };
                        out
                    })
                } else {
                    // Clamp into the (closed, weakly treated) quadrant.
                    let mut out = x.to_vec();
                    for t in terms {
                        if t.sign.slack(out[t.dim], t.cut) < 0.0 {
                            out[t.dim] = t.cut;
                        }
                    }
                    Some(out)
                }
            }
            PolicyRule::TreeBoxes { treat, complement } => {
                let boxes = if treated { complement } else { treat };
                let nearest = boxes
                    .iter()
                    .filter_map(|b| {
                        box_distance_scaled(x, b, scale).ok().map(|d| (d, b))
                    })
                    .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                nearest.map(|(_, b)| {
                    let mut out: Vec<f64> = x
                        .iter()
                        .enumerate()
                        .map(|(i, &v)| v.clamp(b.lower[i], b.upper[i]))
                        .collect();
                    // Nudge off the shared boundary into the box interior.
                    for (i, value) in out.iter_mut().enumerate() {
                        let nudge = step / scale_at(i);
                        let lo = if b.lower[i].is_finite() {
                            b.lower[i] + nudge
                        } else {
                            f64::NEG_INFINITY
                        };
                        let hi = if b.upper[i].is_finite() {
                            b.upper[i] - nudge
                        } else {
                            f64::INFINITY
                        };
                        if lo <= hi {
                            *value = value.clamp(lo, hi);
                        } else {
                            *value = 0.5 * (b.lower[i] + b.upper[i]);
                        }
                    }
                    out
                })
            }
        };
        match candidate {
            None => return Ok(None),
            Some(point) => {
                if evaluate_rule(rule, &point)? != treated {
                    return Ok(Some(point));
                }
                step *= 10.0;
            }
        }
    }
    Ok(None)
}

/// Options for proof-derived target grids.
#[derive(Debug, Clone, Copy)]
pub struct GridOptions {
    /// Number of downward outcome steps per atom (the LP mixes adjacent
    /// steps exactly, so a moderate count suffices).
    pub shift_steps: usize,
    /// Overshoot used for boundary crossings.
    pub overshoot: f64,
    /// Cap on the per-atom shift depth. The exact adversary may spend the
    /// whole budget on one atom, so the default depth is `ε / mass`;
    /// setting a smaller cap deliberately coarsens the grid.
    pub max_shift: Option<f64>,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            shift_steps: 12,
            overshoot: 1e-9,
            max_shift: None,
        }
    }
}

impl GridOptions {
    fn depth(&self, epsilon: f64, mass: f64) -> f64 {
        let full = if mass > 0.0 { epsilon / mass } else { epsilon };
        match self.max_shift {
            Some(cap) => full.min(cap),
            None => full,
        }
    }
}

fn clip_low(value: f64, bounds: &SupportBounds) -> f64 {
    value.max(bounds.y_lower)
}

fn clip_high(value: f64, bounds: &SupportBounds) -> f64 {
    value.min(bounds.y_upper)
}

/// Destinations for outcome-only adversaries: downward steps of the
/// objective-relevant outcome (upward for outcomes entering negatively),
/// clipped to the support, plus the floor itself.
pub fn po_target_grid(
    sources: &[MassPoint],
    objective: &TransportObjective,
    epsilon: f64,
    bounds: &SupportBounds,
    opts: GridOptions,
) -> Result<Vec<JointPoint>, OracleError> {
    let m = opts.shift_steps.max(1);
    let mut targets = Vec::new();
    for source in sources {
        let z = &source.point;
        let depth = opts.depth(epsilon, source.mass);
        targets.push(z.clone());
        // Quadratic (order-2) costs do not interpolate across mixed shift
        // levels, so the exact radius shift must itself be a destination
        // whenever the depth cap admits it.
        let exact_shifts = [epsilon.min(depth), depth];
        match objective {
            TransportObjective::Welfare(rule) => {
                let treated = evaluate_rule(rule, &z.x)?;
                let shifts = (1..=m)
                    .map(|j| depth * j as f64 / m as f64)
                    .chain(exact_shifts);
                for delta in shifts {
                    let mut t = z.clone();
                    if treated {
                        t.y1 = clip_low(z.y1 - delta, bounds);
                    } else {
                        t.y0 = clip_low(z.y0 - delta, bounds);
                    }
                    targets.push(t);
                }
                if bounds.lower_is_finite() {
                    let mut t = z.clone();
                    if treated {
                        t.y1 = bounds.y_lower;
                    } else {
                        t.y0 = bounds.y_lower;
                    }
                    targets.push(t);
                }
            }
            TransportObjective::TreatmentEffect => {
                // Lower bound: reduce y1 and/or raise y0.
                for a in 0..=m {
                    for b in 0..=(m - a) {
                        if a + b == 0 {
                            continue;
                        }
                        let up = depth * a as f64 / m as f64;
                        let down = depth * b as f64 / m as f64;
                        targets.push(JointPoint::new(
                            z.x.clone(),
                            clip_high(z.y0 + up, bounds),
                            clip_low(z.y1 - down, bounds),
                        ));
                    }
                }
                for delta in exact_shifts {
                    targets.push(JointPoint::new(
                        z.x.clone(),
                        clip_high(z.y0 + delta, bounds),
                        z.y1,
                    ));
                    targets.push(JointPoint::new(
                        z.x.clone(),
                        z.y0,
                        clip_low(z.y1 - delta, bounds),
                    ));
                }
                if bounds.lower_is_finite() && bounds.upper_is_finite() {
                    targets.push(JointPoint::new(z.x.clone(), bounds.y_upper, bounds.y_lower));
                }
            }
            TransportObjective::WelfareVersusUntreated(rule) => {
                let treated = evaluate_rule(rule, &z.x)?;
                for a in 0..=m {
                    for b in 0..=(m - a) {
                        if a + b == 0 {
                            continue;
                        }
                        let up = depth * a as f64 / m as f64;
                        let down = depth * b as f64 / m as f64;
                        let y0 = clip_high(z.y0 + up, bounds);
                        let y1 = if treated {
                            clip_low(z.y1 - down, bounds)
                        } else {
                            z.y1
                        };
                        targets.push(JointPoint::new(z.x.clone(), y0, y1));
                    }
                }
                for delta in exact_shifts {
                    targets.push(JointPoint::new(
                        z.x.clone(),
                        clip_high(z.y0 + delta, bounds),
                        z.y1,
                    ));
                    if treated {
                        targets.push(JointPoint::new(
                            z.x.clone(),
                            z.y0,
                            clip_low(z.y1 - delta, bounds),
                        ));
                    }
                }
                if bounds.upper_is_finite() {
                    let y1 = if treated && bounds.lower_is_finite() {
                        bounds.y_lower
                    } else {
                        z.y1
                    };
                    targets.push(JointPoint::new(z.x.clone(), bounds.y_upper, y1));
                }
            }
        }
    }
    Ok(targets)
}

/// Destinations for joint-shift adversaries: stay and shift the active
/// outcome, or cross the decision boundary and shift the other arm,
/// plus outcome floors on both branches.
pub fn joint_target_grid(
    sources: &[MassPoint],
    rule: &PolicyRule,
    scale: &[f64],
    epsilon: f64,
    bounds: &SupportBounds,
    opts: GridOptions,
) -> Result<Vec<JointPoint>, OracleError> {
    let m = opts.shift_steps.max(1);
    let mut targets = Vec::new();
    for source in sources {
        let z = &source.point;
        let treated = evaluate_rule(rule, &z.x)?;
        let depth = opts.depth(epsilon, source.mass);
        targets.push(z.clone());
        let mut push_shifts = |x: Vec<f64>, shifted_treated: bool, base: &JointPoint| {
            for j in 0..=m {
                let delta = depth * j as f64 / m as f64;
                let mut t = JointPoint::new(x.clone(), base.y0, base.y1);
                if shifted_treated {
                    t.y1 = clip_low(base.y1 - delta, bounds);
                } else {
                    t.y0 = clip_low(base.y0 - delta, bounds);
                }
                targets.push(t);
            }
            if bounds.lower_is_finite() {
                let mut t = JointPoint::new(x, base.y0, base.y1);
                if shifted_treated {
                    t.y1 = bounds.y_lower;
                } else {
                    t.y0 = bounds.y_lower;
                }
                targets.push(t);
            }
        };
        push_shifts(z.x.clone(), treated, z);
        if let Some(across) = boundary_crossing(rule, &z.x, scale, opts.overshoot)? {
            push_shifts(across, !treated, z);
        }
    }
    Ok(targets)
}

/// The explicit worst-case constructions used in the duality proofs.
#[derive(Debug, Clone)]
pub enum WorstCaseRecipe {
    /// Send the relevant outcome to the floor.
    OutcomeFloor,
    /// Shift an outcome down by a fixed amount.
    OutcomeShift { delta: f64, arm: ShiftArm },
    /// Move covariates just across the decision boundary.
    BoundaryProjection { overshoot: f64 },
    /// Mix a base construction with the original distribution.
    Mixture { weight: f64, base: Box<WorstCaseRecipe> },
}

/// Which outcome an [`WorstCaseRecipe::OutcomeShift`] moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftArm {
    Treated,
    Untreated,
    /// The arm the rule selects at each atom's covariates.
    ByRule,
}

/// A materialized worst-case candidate with its verified transport
/// distance and welfare.
#[derive(Debug, Clone)]
pub struct Certified {
    pub q: Vec<MassPoint>,
    pub distance: f64,
    pub welfare: f64,
}

fn apply_recipe(
    atoms: &[MassPoint],
    rule: &PolicyRule,
    recipe: &WorstCaseRecipe,
    bounds: &SupportBounds,
    scale: &[f64],
) -> Result<Vec<MassPoint>, OracleError> {
    match recipe {
        WorstCaseRecipe::OutcomeFloor => {
            if !bounds.lower_is_finite() {
                return Err(OracleError::RecipeInapplicable(
                    "outcome floor requires a finite lower bound".into(),
                ));
            }
            atoms
                .iter()
                .map(|a| {
                    let mut p = a.point.clone();
                    if evaluate_rule(rule, &p.x)? {
                        p.y1 = bounds.y_lower;
                    } else {
                        p.y0 = bounds.y_lower;
                    }
                    Ok(MassPoint::new(p, a.mass))
                })
                .collect()
        }
        WorstCaseRecipe::OutcomeShift { delta, arm } => atoms
            .iter()
            .map(|a| {
                let mut p = a.point.clone();
                let shift_treated = match arm {
                    ShiftArm::Treated => true,
                    ShiftArm::Untreated => false,
                    ShiftArm::ByRule => evaluate_rule(rule, &p.x)?,
                };
                if shift_treated {
                    p.y1 -= delta;
                } else {
                    p.y0 -= delta;
                }
                Ok(MassPoint::new(p, a.mass))
            })
            .collect(),
        WorstCaseRecipe::BoundaryProjection { overshoot } => atoms
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let across = boundary_crossing(rule, &a.point.x, scale, *overshoot)?
                    .ok_or(OracleError::NoCrossing(i))?;
                Ok(MassPoint::new(
                    JointPoint::new(across, a.point.y0, a.point.y1),
                    a.mass,
                ))
            })
            .collect(),
        WorstCaseRecipe::Mixture { weight, base } => {
            if !(0.0..=1.0).contains(weight) {
                return Err(OracleError::RecipeInapplicable(format!(
                    "mixture weight {weight} outside [0, 1]"
                )));
            }
            let moved = apply_recipe(atoms, rule, base, bounds, scale)?;
            let mut out = Vec::with_capacity(2 * atoms.len());
            for a in moved {
                if *weight > 0.0 {
                    out.push(MassPoint::new(a.point, a.mass * weight));
                }
            }
            for a in atoms {
                if *weight < 1.0 {
                    out.push(MassPoint::new(a.point.clone(), a.mass * (1.0 - weight)));
                }
            }
            Ok(out)
        }
    }
}

/// Materialize a proof construction, returning the target distribution,
/// its Wasserstein distance from the source, and its welfare under the
/// objective.
pub fn certify_construction(
    atoms: &[MassPoint],
    rule: &PolicyRule,
    recipe: &WorstCaseRecipe,
    objective: &TransportObjective,
    metric: &GroundMetric,
    order: u32,
    bounds: &SupportBounds,
) -> Result<Certified, OracleError> {
    let scale = match metric {
        GroundMetric::Joint { scale } => scale.clone(),
        _ => Vec::new(),
    };
    let q = apply_recipe(atoms, rule, recipe, bounds, &scale)?;
    let distance = wasserstein_distance(atoms, &q, metric, order)?;
    let mut welfare = 0.0;
    for a in &q {
        welfare += a.mass * objective.eval(&a.point)?;
    }
    Ok(Certified {
        q,
        distance,
        welfare,
    })
}

/// Convenience: restrict a rule to a one-dimensional threshold for tests.
pub fn treat_at_or_above(cut: f64) -> PolicyRule {
    PolicyRule::threshold(vec![ThresholdTerm {
        dim: 0,
        sign: Sign::AtOrAbove,
        cut,
    }])
    .expect("single-face threshold is valid")
}

/// Convenience: a box-union rule with a single treat box; the complement
/// slabs are generated so distances to non-treatment work.
pub fn single_box_rule(lower: Vec<f64>, upper: Vec<f64>) -> Result<PolicyRule, ModelError> {
    let dim = lower.len();
    let treat = BoxRegion::closed(lower.clone(), upper.clone())?;
    let mut complement = Vec::with_capacity(2 * dim);
    // Axis-aligned slabs: everything below/above each face, restricted to
    // the box's extent on earlier dimensions.
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
    PolicyRule::tree(vec![treat], complement)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::EstimatorBundle;
    use crate::geometry::distance_profile;
    use crate::model::NeighborhoodSpec;
    use crate::robust::{rw_joint_empirical, CouplingAssumption};

    fn unit_mass(x: f64, y0: f64, y1: f64) -> MassPoint {
        MassPoint::new(JointPoint::new(vec![x], y0, y1), 1.0)
    }

    #[test]
    fn zero_budget_returns_nominal_expectation() {
        let sources = vec![
            MassPoint::new(JointPoint::new(vec![0.0], 1.0, 3.0), 0.5),
            MassPoint::new(JointPoint::new(vec![1.0], -1.0, 0.0), 0.5),
        ];
        let rule = PolicyRule::Constant(true);
        let targets: Vec<JointPoint> = sources.iter().map(|s| s.point.clone()).collect();
        let instance = TransportInstance {
            sources,
            targets,
            metric: GroundMetric::OutcomeShift,
            objective: TransportObjective::Welfare(rule),
            order: 1,
            budget: 0.0,
        };
        let wc = worst_case(&instance).unwrap();
        assert!((wc.value - (0.5 * 3.0 + 0.5 * 0.0)).abs() < 1e-9);
        // Identity plan.
        assert_eq!(wc.plan.len(), 2);
        for &(i, j, mass) in &wc.plan {
            assert_eq!(i, j);
            assert!((mass - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn point_mass_outcome_shift_matches_po_closed_form() {
        // Point mass at (y0, y1) = (0, 1), treat everyone, ε = 0.5,
        // unbounded below: worst case is welfare − ε = 0.5.
        let sources = vec![unit_mass(0.0, 0.0, 1.0)];
        let objective = TransportObjective::Welfare(PolicyRule::Constant(true));
        let targets = po_target_grid(
            &sources,
            &objective,
            0.5,
            &SupportBounds::unbounded(),
            GridOptions::default(),
        )
        .unwrap();
        let wc = worst_case(&TransportInstance {
            sources,
            targets,
            metric: GroundMetric::OutcomeShift,
            objective,
            order: 1,
            budget: 0.5,
        })
        .unwrap();
        assert!((wc.value - 0.5).abs() < 1e-9);
    }

    #[test]
    fn joint_shift_single_atom_matches_inner_criterion() {
        // One atom at x = 0.6 with (y0, y1) = (0, 1); the rule treats
        // x ≥ 0.5, so crossing costs 0.1 and the remaining budget lowers
        // the untreated outcome: the dual value is −0.2 at ε = 0.3.
        let rule = treat_at_or_above(0.5);
        let sources = vec![unit_mass(0.6, 0.0, 1.0)];
        let bounds = SupportBounds::unbounded();
        let targets = joint_target_grid(
            &sources,
            &rule,
            &[],
            0.3,
            &bounds,
            GridOptions::default(),
        )
        .unwrap();
        let wc = worst_case(&TransportInstance {
            sources: sources.clone(),
            targets,
            metric: GroundMetric::Joint { scale: vec![] },
            objective: TransportObjective::Welfare(rule.clone()),
            order: 1,
            budget: 0.3,
        })
        .unwrap();

        let data = crate::model::Dataset::new(
            vec![crate::model::Observation::new(vec![0.6], 0.0, false)],
            bounds,
        )
        .unwrap();
        let bundle = EstimatorBundle::new(0.0).with_effects(vec![1.0]);
        let spec = NeighborhoodSpec::joint(0.3, 1).unwrap();
        let dual = rw_joint_empirical(
            &data,
            &rule,
            CouplingAssumption::ConstantTreatmentEffects,
            &bundle,
            &spec,
            &bounds,
        )
        .unwrap();
        assert!((dual.value - -0.2).abs() < 1e-9, "dual {}", dual.value);
        assert!((wc.value - dual.value).abs() < 1e-6, "oracle {}", wc.value);
        // Weak duality: a restricted adversary can never go below the dual.
        assert!(wc.value >= dual.value - 1e-9);
    }

    #[test]
    fn refinement_never_increases_value() {
        let rule = treat_at_or_above(0.0);
        let sources = vec![
            MassPoint::new(JointPoint::new(vec![0.4], 0.2, 1.0), 0.6),
            MassPoint::new(JointPoint::new(vec![-0.3], -0.1, 0.5), 0.4),
        ];
        let bounds = SupportBounds::unbounded();
        let objective = TransportObjective::Welfare(rule.clone());
        let coarse = joint_target_grid(
            &sources,
            &rule,
            &[],
            0.5,
            &bounds,
            GridOptions { shift_steps: 2, overshoot: 1e-9, max_shift: None },
        )
        .unwrap();
        let fine = joint_target_grid(
            &sources,
            &rule,
            &[],
            0.5,
            &bounds,
            GridOptions { shift_steps: 16, overshoot: 1e-9, max_shift: None },
        )
        .unwrap();
        let mut union = coarse.clone();
        union.extend(fine.clone());
        let solve = |targets: Vec<JointPoint>| {
            worst_case(&TransportInstance {
                sources: sources.clone(),
                targets,
                metric: GroundMetric::Joint { scale: vec![] },
                objective: objective.clone(),
                order: 1,
                budget: 0.5,
            })
            .unwrap()
            .value
        };
        let v_coarse = solve(coarse);
        let v_union = solve(union);
        assert!(v_union <= v_coarse + 1e-9);
    }

    #[test]
    fn huge_budget_drives_welfare_to_the_floor() {
        let sources = vec![
            MassPoint::new(JointPoint::new(vec![0.0], 0.4, 0.9), 0.5),
            MassPoint::new(JointPoint::new(vec![1.0], 0.1, 0.6), 0.5),
        ];
        let rule = PolicyRule::Constant(true);
        let bounds = SupportBounds::binary();
        let objective = TransportObjective::Welfare(rule);
        let targets =
            po_target_grid(&sources, &objective, 50.0, &bounds, GridOptions::default()).unwrap();
        let wc = worst_case(&TransportInstance {
            sources,
            targets,
            metric: GroundMetric::OutcomeShift,
            objective,
            order: 1,
            budget: 50.0,
        })
        .unwrap();
        assert!((wc.value - bounds.y_lower).abs() < 1e-9);
    }

    #[test]
    fn wasserstein_examples() {
        let metric = GroundMetric::OutcomeShift;
        let p = vec![unit_mass(0.0, 1.0, 2.0)];
        assert_eq!(wasserstein_distance(&p, &p, &metric, 1).unwrap(), 0.0);

        let q = vec![unit_mass(0.0, 1.0, 2.7)];
        let d = wasserstein_distance(&p, &q, &metric, 1).unwrap();
        assert!((d - 0.7).abs() < 1e-9);
    }

    #[test]
    fn two_by_two_transport_matches_enumeration() {
        // One free parameter: mass sent from atom 1 to target 1.
        let p = vec![
            MassPoint::new(JointPoint::new(vec![0.0], 0.0, 0.0), 0.3),
            MassPoint::new(JointPoint::new(vec![0.0], 1.0, 0.0), 0.7),
        ];
        let q = vec![
            MassPoint::new(JointPoint::new(vec![0.0], 0.2, 0.0), 0.6),
            MassPoint::new(JointPoint::new(vec![0.0], 1.5, 0.0), 0.4),
        ];
        let metric = GroundMetric::OutcomeShift;
        let lp_value = wasserstein_distance(&p, &q, &metric, 1).unwrap();
        // Enumerate the one-parameter coupling family.
        let cost = |a: &JointPoint, b: &JointPoint| match metric.cost(a, b) {
            Dist::Finite(c) => c,
            Dist::Infinite => f64::INFINITY,
        };
        let lo = (0.3f64 + 0.6 - 1.0).max(0.0);
        let hi = 0.3f64.min(0.6);
        let mut best = f64::INFINITY;
        let mut t = lo;
        while t <= hi + 1e-12 {
            let v = t * cost(&p[0].point, &q[0].point)
                + (0.3 - t) * cost(&p[0].point, &q[1].point)
                + (0.6 - t) * cost(&p[1].point, &q[0].point)
                + (0.7 - 0.6 + t) * cost(&p[1].point, &q[1].point);
            best = best.min(v);
            t += 1e-4;
        }
        assert!((lp_value - best).abs() < 1e-4, "{lp_value} vs {best}");
    }

    #[test]
    fn certify_ate_shift_is_sharp() {
        let atoms = vec![
            MassPoint::new(JointPoint::new(vec![0.0], 0.3, 0.9), 0.5),
            MassPoint::new(JointPoint::new(vec![1.0], -0.2, 0.4), 0.5),
        ];
        let eps = 0.37;
        let recipe = WorstCaseRecipe::OutcomeShift {
            delta: eps,
            arm: ShiftArm::Treated,
        };
        let certified = certify_construction(
            &atoms,
            &PolicyRule::Constant(true),
            &recipe,
            &TransportObjective::TreatmentEffect,
            &GroundMetric::OutcomeShift,
            1,
            &SupportBounds::unbounded(),
        )
        .unwrap();
        let ate_p = 0.5 * (0.9 - 0.3) + 0.5 * (0.4 + 0.2);
        assert!((certified.distance - eps).abs() < 1e-9);
        assert!((certified.welfare - (ate_p - eps)).abs() < 1e-12);
    }

    #[test]
    fn certify_floor_mixture_attains_po_bound() {
        // Binary outcomes, welfare 0.75, ε = 0.25: the mixture with weight
        // ε/(W − floor) lands exactly on W − ε at distance ≤ ε.
        let rule = PolicyRule::Constant(true);
        let atoms = vec![
            MassPoint::new(JointPoint::new(vec![0.0], 0.0, 1.0), 0.75),
            MassPoint::new(JointPoint::new(vec![0.0], 0.0, 0.0), 0.25),
        ];
        let bounds = SupportBounds::binary();
        let welfare = 0.75;
        let eps = 0.25;
        let weight = eps / (welfare - bounds.y_lower);
        let recipe = WorstCaseRecipe::Mixture {
            weight,
            base: Box::new(WorstCaseRecipe::OutcomeFloor),
        };
        let certified = certify_construction(
            &atoms,
            &rule,
            &recipe,
            &TransportObjective::Welfare(rule.clone()),
            &GroundMetric::OutcomeShift,
            1,
            &bounds,
        )
        .unwrap();
        assert!(certified.distance <= eps + 1e-9);
        assert!((certified.welfare - (welfare - eps)).abs() < 1e-12);

        // Zero weight reproduces the source exactly.
        let identity = certify_construction(
            &atoms,
            &rule,
            &WorstCaseRecipe::Mixture {
                weight: 0.0,
                base: Box::new(WorstCaseRecipe::OutcomeFloor),
            },
            &TransportObjective::Welfare(rule.clone()),
            &GroundMetric::OutcomeShift,
            1,
            &bounds,
        )
        .unwrap();
        assert!(identity.distance.abs() < 1e-9);
        assert!((identity.welfare - welfare).abs() < 1e-12);
    }

    #[test]
    fn certify_floor_requires_finite_bound() {
        let atoms = vec![unit_mass(0.0, 0.0, 1.0)];
        let err = certify_construction(
            &atoms,
            &PolicyRule::Constant(true),
            &WorstCaseRecipe::OutcomeFloor,
            &TransportObjective::Welfare(PolicyRule::Constant(true)),
            &GroundMetric::OutcomeShift,
            1,
            &SupportBounds::unbounded(),
        );
        assert!(matches!(err, Err(OracleError::RecipeInapplicable(_))));
    }

    #[test]
    fn order_two_shift_attains_quadratic_bound() {
        // Order-2 metric: shifting the treated outcome by ε costs exactly
        // ε in W2, and the worst case is welfare − ε.
        let atoms = vec![unit_mass(0.0, 0.0, 2.0)];
        let rule = PolicyRule::Constant(true);
        let eps = 0.6;
        let certified = certify_construction(
            &atoms,
            &rule,
            &WorstCaseRecipe::OutcomeShift {
                delta: eps,
                arm: ShiftArm::ByRule,
            },
            &TransportObjective::Welfare(rule.clone()),
            &GroundMetric::OutcomeShiftL2,
            2,
            &SupportBounds::unbounded(),
        )
        .unwrap();
        assert!((certified.distance - eps).abs() < 1e-9);
        assert!((certified.welfare - (2.0 - eps)).abs() < 1e-12);

        // The grid adversary agrees.
        let sources = vec![unit_mass(0.0, 0.0, 2.0)];
        let objective = TransportObjective::Welfare(rule);
        let targets = po_target_grid(
            &sources,
            &objective,
            eps,
            &SupportBounds::unbounded(),
            GridOptions::default(),
        )
        .unwrap();
        let wc = worst_case(&TransportInstance {
            sources,
            targets,
            metric: GroundMetric::OutcomeShiftL2,
            objective,
            order: 2,
            budget: eps,
        })
        .unwrap();
        assert!((wc.value - (2.0 - eps)).abs() < 1e-6, "oracle {}", wc.value);
    }

    #[test]
    fn boundary_crossing_flips_decisions() {
        let rules = vec![
            PolicyRule::linear(-0.5, vec![1.0, 0.3]).unwrap(),
            treat_at_or_above(0.25),
            single_box_rule(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap(),
        ];
        let points = vec![
            vec![0.8, 0.1],
            vec![-0.6, 0.4],
            vec![0.5, 0.5],
            vec![2.0, -1.0],
        ];
        for rule in &rules {
            for x in &points {
                let x = &x[..match rule {
                    PolicyRule::Threshold(_) => 1,
                    _ => 2,
                }];
                let before = evaluate_rule(rule, x).unwrap();
                let crossing = boundary_crossing(rule, x, &[], 1e-9).unwrap();
                let across = crossing.expect("non-constant rules always have a crossing");
                assert_ne!(evaluate_rule(rule, &across).unwrap(), before);
                // The crossing should not overshoot the true distance by
                // more than a whisker.
                let profile = distance_profile(rule, x, &[]).unwrap();
                let needed = if before {
                    profile.to_nontreatment
                } else {
                    profile.to_treatment
                };
                if let Dist::Finite(h) = needed {
                    let moved: f64 = x
                        .iter()
                        .zip(&across)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt();
                    assert!(moved <= h + 1e-6, "moved {moved} for h {h}");
                }
            }
        }
        let constant = boundary_crossing(&PolicyRule::Constant(true), &[0.0], &[], 1e-9).unwrap();
        assert!(constant.is_none());
    }
}
