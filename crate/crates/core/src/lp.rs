//! Minimal dense linear-programming solver: two-phase primal simplex with
//! Bland's anti-cycling rule.
//!
//! Problems here are small (a few hundred variables at most), so the solver
//! favors auditability over speed: a plain dense tableau, no revised or
//! sparse machinery. Infeasibility and unboundedness are structured results,
//! never panics.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LpError {
    #[error("invalid program: {0}")]
    Invalid(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("iteration limit {0} exceeded")]
    IterationLimit(usize),
}

/// Row sense of a constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Constraint {
    pub fn new(coeffs: Vec<f64>, sense: Sense, rhs: f64) -> Self {
        Self { coeffs, sense, rhs }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Minimize,
    Maximize,
}

/// A dense linear program over variables with explicit bounds.
///
/// Bounds may be infinite on either side; `(0, +inf)` is the conventional
/// nonnegative variable and `(-inf, +inf)` a free one.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub direction: Direction,
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
    pub bounds: Vec<(f64, f64)>,
}

impl LinearProgram {
    /// Program over `n` nonnegative variables.
    pub fn new(direction: Direction, objective: Vec<f64>) -> Self {
        let n = objective.len();
        Self {
            direction,
            objective,
            constraints: Vec::new(),
            bounds: vec![(0.0, f64::INFINITY); n],
        }
    }

    pub fn with_bounds(mut self, bounds: Vec<(f64, f64)>) -> Self {
        self.bounds = bounds;
        self
    }

    pub fn push(&mut self, c: Constraint) {
        self.constraints.push(c);
    }
}

/// Fixed numerical tolerances; overridable per solve.
#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub pivot_tol: f64,
    pub feas_tol: f64,
    pub max_iters: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            pivot_tol: 1e-10,
            feas_tol: 1e-9,
            max_iters: 200_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub value: f64,
    /// Objective value implied by the duals of the final basis; equals
    /// `value` up to roundoff when the basis is optimal.
    pub dual_value: f64,
}

#[derive(Debug, Clone)]
pub enum LpOutcome {
    Optimal(LpSolution),
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn optimal(&self) -> Option<&LpSolution> {
        match self {
            LpOutcome::Optimal(s) => Some(s),
            _ => None,
        }
    }
}

pub fn solve(lp: &LinearProgram) -> Result<LpOutcome, LpError> {
    solve_with(lp, SolverOptions::default())
}

// How each original variable is represented by nonnegative standard-form
// columns.
enum VarMap {
    Shift { col: usize, lower: f64 },
    Flip { col: usize, upper: f64 },
    Split { pos: usize, neg: usize },
}

struct StandardRow {
    coeffs: Vec<(usize, f64)>,
    sense: Sense,
    rhs: f64,
}

pub fn solve_with(lp: &LinearProgram, opts: SolverOptions) -> Result<LpOutcome, LpError> {
    let n = lp.objective.len();
    if lp.bounds.len() != n {
        return Err(LpError::Invalid(format!(
            "{} bounds for {} variables",
            lp.bounds.len(),
            n
        )));
    }
    for c in &lp.constraints {
        if c.coeffs.len() != n {
            return Err(LpError::Invalid(format!(
                "constraint has {} coefficients for {} variables",
                c.coeffs.len(),
                n
            )));
        }
        if c.coeffs.iter().any(|v| !v.is_finite()) || !c.rhs.is_finite() {
            return Err(LpError::Invalid("constraint entries must be finite".into()));
        }
    }
    if lp.objective.iter().any(|v| !v.is_finite()) {
        return Err(LpError::Invalid("objective entries must be finite".into()));
    }

    // Map variables onto nonnegative columns.
    let mut maps = Vec::with_capacity(n);
    let mut cols = 0usize;
    let mut extra_rows: Vec<StandardRow> = Vec::new();
    for (j, &(lo, hi)) in lp.bounds.iter().enumerate() {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(LpError::Invalid(format!("variable {j} has bounds ({lo}, {hi})")));
        }
        if lo.is_finite() {
            let col = cols;
            cols += 1;
            maps.push(VarMap::Shift { col, lower: lo });
            if hi.is_finite() {
                extra_rows.push(StandardRow {
                    coeffs: vec![(col, 1.0)],
                    sense: Sense::Le,
                    rhs: hi - lo,
                });
            }
        } else if hi.is_finite() {
            let col = cols;
            cols += 1;
            maps.push(VarMap::Flip { col, upper: hi });
        } else {
            let pos = cols;
            let neg = cols + 1;
            cols += 2;
            maps.push(VarMap::Split { pos, neg });
        }
    }

    // Translate constraints into standard rows.
    let mut rows: Vec<StandardRow> = Vec::new();
    for c in &lp.constraints {
        let mut coeffs = vec![0.0; cols];
        let mut rhs = c.rhs;
        for (j, &a) in c.coeffs.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            match maps[j] {
                VarMap::Shift { col, lower } => {
                    coeffs[col] += a;
                    rhs -= a * lower;
                }
                VarMap::Flip { col, upper } => {
                    coeffs[col] -= a;
                    rhs -= a * upper;
                }
                VarMap::Split { pos, neg } => {
                    coeffs[pos] += a;
                    coeffs[neg] -= a;
                }
            }
        }
        let coeffs = coeffs
            .into_iter()
            .enumerate()
            .filter(|&(_, v)| v != 0.0)
            .collect();
        rows.push(StandardRow {
            coeffs,
            sense: c.sense,
            rhs,
        });
    }
    rows.extend(extra_rows);

    // Standard-form objective (always minimized) and constant offset.
    let sign = match lp.direction {
        Direction::Minimize => 1.0,
        Direction::Maximize => -1.0,
    };
    let mut cost = vec![0.0; cols];
    let mut offset = 0.0;
    for (j, &cj) in lp.objective.iter().enumerate() {
        if cj == 0.0 {
            continue;
        }
        match maps[j] {
            VarMap::Shift { col, lower } => {
                cost[col] += sign * cj;
                offset += cj * lower;
            }
            VarMap::Flip { col, upper } => {
                cost[col] -= sign * cj;
                offset += cj * upper;
            }
            VarMap::Split { pos, neg } => {
                cost[pos] += sign * cj;
                cost[neg] -= sign * cj;
            }
        }
    }

    let mut tableau = Tableau::build(rows, cost, cols, opts)?;
    match tableau.run()? {
        TableauOutcome::Infeasible => Ok(LpOutcome::Infeasible),
        TableauOutcome::Unbounded => Ok(LpOutcome::Unbounded),
        TableauOutcome::Optimal {
            standard_x,
            standard_value,
            dual_standard_value,
        } => {
            let mut x = vec![0.0; n];
            for (j, map) in maps.iter().enumerate() {
                x[j] = match *map {
                    VarMap::Shift { col, lower } => lower + standard_x[col],
                    VarMap::Flip { col, upper } => upper - standard_x[col],
                    VarMap::Split { pos, neg } => standard_x[pos] - standard_x[neg],
                };
            }
            Ok(LpOutcome::Optimal(LpSolution {
                x,
                value: sign * standard_value + offset,
                dual_value: sign * dual_standard_value + offset,
            }))
        }
    }
}

enum TableauOutcome {
    Optimal {
        standard_x: Vec<f64>,
        standard_value: f64,
        dual_standard_value: f64,
    },
    Infeasible,
    Unbounded,
}

struct Tableau {
    // rows × (total_cols + 1); the last entry of each row is the rhs.
    a: Vec<Vec<f64>>,
    basis: Vec<usize>,
    // Reduced-cost rows; the last entry is minus the objective value.
    phase1: Vec<f64>,
    phase2: Vec<f64>,
    structural: usize,
    total: usize,
    artificial_from: usize,
    // Identity column initially associated with each row (slack or
    // artificial), used to read duals off the final reduced costs.
    row_identity: Vec<usize>,
    original_rhs: Vec<f64>,
    opts: SolverOptions,
}

impl Tableau {
    fn build(rows: Vec<StandardRow>, cost: Vec<f64>, structural: usize, opts: SolverOptions) -> Result<Self, LpError> {
        let m = rows.len();
        // Column layout: structural | slack/surplus | artificial.
        let mut n_slack = 0usize;
        for r in &rows {
            if r.sense != Sense::Eq {
                n_slack += 1;
            }
        }
        let slack_from = structural;
        let artificial_from = structural + n_slack;
        // Every row gets an artificial except Le rows with nonnegative rhs,
        // whose slack can start basic. Count after rhs normalization.
        let mut a: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut basis = vec![0usize; m];
        let mut row_identity = vec![0usize; m];
        let mut original_rhs = vec![0.0; m];
        let mut next_slack = slack_from;
        let mut artificial_rows: Vec<usize> = Vec::new();

        struct Prepared {
            coeffs: Vec<(usize, f64)>,
            rhs: f64,
            slack: Option<(usize, f64)>,
        }
        let mut prepared: Vec<Prepared> = Vec::with_capacity(m);
        for r in rows {
            let flip = r.rhs < 0.0;
            let s = if flip { -1.0 } else { 1.0 };
            let sense = if flip {
                match r.sense {
                    Sense::Le => Sense::Ge,
                    Sense::Ge => Sense::Le,
                    Sense::Eq => Sense::Eq,
                }
            } else {
                r.sense
            };
            let coeffs = r.coeffs.iter().map(|&(j, v)| (j, s * v)).collect();
            let rhs = s * r.rhs;
            let slack = match sense {
                Sense::Le => {
                    let col = next_slack;
                    next_slack += 1;
                    Some((col, 1.0))
                }
                Sense::Ge => {
                    let col = next_slack;
                    next_slack += 1;
                    Some((col, -1.0))
                }
                Sense::Eq => None,
            };
            prepared.push(Prepared { coeffs, rhs, slack });
        }

        let mut n_artificial = 0usize;
        for p in &prepared {
            if !matches!(p.slack, Some((_, v)) if v > 0.0) {
                n_artificial += 1;
            }
        }
        let total = artificial_from + n_artificial;
        let mut next_artificial = artificial_from;

        for (i, p) in prepared.into_iter().enumerate() {
            let mut row = vec![0.0; total + 1];
            for (j, v) in p.coeffs {
                row[j] = v;
            }
            row[total] = p.rhs;
            original_rhs[i] = p.rhs;
            match p.slack {
                Some((col, v)) if v > 0.0 => {
                    row[col] = 1.0;
                    basis[i] = col;
                    row_identity[i] = col;
                }
                other => {
                    if let Some((col, v)) = other {
                        row[col] = v; // surplus
                    }
                    let art = next_artificial;
                    next_artificial += 1;
                    row[art] = 1.0;
                    basis[i] = art;
                    row_identity[i] = art;
                    artificial_rows.push(i);
                }
            }
            a.push(row);
        }

        // Phase-1 reduced costs: cost 1 on artificials, minus the rows in
        // which an artificial starts basic.
        let mut phase1 = vec![0.0; total + 1];
        for v in &mut phase1[artificial_from..total] {
            *v = 1.0;
        }
        for &i in &artificial_rows {
            for j in 0..=total {
                phase1[j] -= a[i][j];
            }
        }
        let mut phase2 = vec![0.0; total + 1];
        phase2[..structural].copy_from_slice(&cost[..structural]);

        Ok(Self {
            a,
            basis,
            phase1,
            phase2,
            structural,
            total,
            artificial_from,
            row_identity,
            original_rhs,
            opts,
        })
    }

    #[allow(clippy::needless_range_loop)] // row elimination with split borrows
    fn pivot(&mut self, row: usize, col: usize) {
        let pivot = self.a[row][col];
        for v in self.a[row].iter_mut() {
            *v /= pivot;
        }
        for i in 0..self.a.len() {
            if i == row {
                continue;
            }
            let factor = self.a[i][col];
            if factor != 0.0 {
                for j in 0..=self.total {
                    self.a[i][j] -= factor * self.a[row][j];
                }
                self.a[i][col] = 0.0;
            }
        }
        for costs in [&mut self.phase1, &mut self.phase2] {
            let factor = costs[col];
            if factor != 0.0 {
                for j in 0..=self.total {
                    costs[j] -= factor * self.a[row][j];
                }
                costs[col] = 0.0;
            }
        }
        self.basis[row] = col;
    }

    /// One simplex phase under Bland's rule: entering column is the lowest
    /// index with a negative reduced cost, leaving row is the minimum-ratio
    /// row with the lowest basic-variable index. Returns false on
    /// unboundedness.
    fn run_phase(&mut self, phase_one: bool, col_limit: usize) -> Result<bool, LpError> {
        for _ in 0..self.opts.max_iters {
            let costs = if phase_one { &self.phase1 } else { &self.phase2 };
            let entering = (0..col_limit).find(|&j| costs[j] < -self.opts.pivot_tol);
            let Some(col) = entering else {
                return Ok(true);
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.a.len() {
                let coef = self.a[i][col];
                if coef > self.opts.pivot_tol {
                    let ratio = self.a[i][self.total] / coef;
                    let better = match leave {
                        None => true,
                        Some((best_i, best_ratio)) => {
                            ratio < best_ratio - self.opts.pivot_tol
                                || (ratio < best_ratio + self.opts.pivot_tol
                                    && self.basis[i] < self.basis[best_i])
                        }
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                }
            }
            match leave {
                Some((row, _)) => self.pivot(row, col),
                None if phase_one => {
                    return Err(LpError::Numerical(
                        "phase-1 objective unbounded below".into(),
                    ))
                }
                None => return Ok(false),
            }
        }
        Err(LpError::IterationLimit(self.opts.max_iters))
    }

    fn run(&mut self) -> Result<TableauOutcome, LpError> {
        if self.total > self.artificial_from {
            self.run_phase(true, self.total)?;
            let phase1_value = -self.phase1[self.total];
            if phase1_value > self.opts.feas_tol {
                return Ok(TableauOutcome::Infeasible);
            }
            self.evict_artificials();
        }
        // Artificial columns are blocked from entering in phase 2.
        if !self.run_phase(false, self.artificial_from)? {
            return Ok(TableauOutcome::Unbounded);
        }

        let mut standard_x = vec![0.0; self.total];
        for (i, &b) in self.basis.iter().enumerate() {
            standard_x[b] = self.a[i][self.total];
        }
        let standard_value = -self.phase2[self.total];
        // Duals off the final reduced costs of each row's identity column
        // (cost zero in phase 2, so the reduced cost is exactly -y_r).
        let mut dual_standard_value = 0.0;
        for (i, &col) in self.row_identity.iter().enumerate() {
            let y = -self.phase2[col];
            dual_standard_value += y * self.original_rhs[i];
        }
        Ok(TableauOutcome::Optimal {
            standard_x: standard_x[..self.structural].to_vec(),
            standard_value,
            dual_standard_value,
        })
    }

    /// Pivot basic artificials out after phase 1; rows that cannot release
    /// their artificial are linearly dependent and are dropped.
    fn evict_artificials(&mut self) {
        let mut drop_rows: Vec<usize> = Vec::new();
        for i in 0..self.a.len() {
            if self.basis[i] < self.artificial_from {
                continue;
            }
            let col = (0..self.artificial_from)
                .find(|&j| self.a[i][j].abs() > self.opts.pivot_tol);
            match col {
                Some(col) => self.pivot(i, col),
                None => drop_rows.push(i),
            }
        }
        for &i in drop_rows.iter().rev() {
            self.a.remove(i);
            self.basis.remove(i);
            self.row_identity.remove(i);
            self.original_rhs.remove(i);
        }
    }
}
