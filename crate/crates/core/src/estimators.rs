//! Nuisance estimators feeding the empirical robust criteria: per-covariate
//! treatment effects, per-observation effects under rank couplings,
//! conditional outcome CDFs, and the baseline mean of the untreated arm.
//!
//! Conditional distributions are represented as finite weighted atom lists
//! throughout, so every integral downstream is a finite sum and quantile
//! inversion is the left-continuous generalized inverse. Real conditional
//! CDF estimators produce step functions, so the discrete convention is the
//! honest one even though the identification arguments assume continuity.

use crate::model::{BoxRegion, Dataset, ModelError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("model error: {0}")]
    Model(#[from] ModelError),
    #[error("both treatment arms are required, the {arm} arm is empty")]
    MissingArm { arm: &'static str },
    #[error("atom list must be nonempty with positive finite weights")]
    InvalidAtoms,
    #[error("instrument column is required")]
    MissingInstrument,
    #[error("cell {cell}: instrument is uncorrelated with treatment (|cov| = {cov:.3e})")]
    WeakInstrument { cell: usize, cov: f64 },
    #[error("observation {index} falls outside every covariate cell")]
    OutsideCells { index: usize },
    #[error("propensity must lie strictly inside (0, 1), got {0}")]
    InvalidPropensity(f64),
    #[error("bandwidth must be positive, got {0}")]
    InvalidBandwidth(f64),
    #[error("estimator output contains a non-finite value at index {0}")]
    NonFinite(usize),
    #[error("{0} values supplied for {1} observations")]
    LengthMismatch(usize, usize),
    #[error("bundle is missing {0} for the requested coupling")]
    MissingField(&'static str),
}

/// A discrete distribution as sorted weighted atoms (weights sum to one;
/// equal values are merged).
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteCdf {
    atoms: Vec<(f64, f64)>,
}

impl DiscreteCdf {
    pub fn new(mut atoms: Vec<(f64, f64)>) -> Result<Self, EstimatorError> {
        atoms.retain(|&(_, w)| w != 0.0);
        if atoms.is_empty()
            || atoms
                .iter()
                .any(|&(v, w)| !v.is_finite() || !w.is_finite() || w < 0.0)
        {
            return Err(EstimatorError::InvalidAtoms);
        }
        atoms.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
        for (v, w) in atoms {
            match merged.last_mut() {
                Some(last) if last.0 == v => last.1 += w,
                _ => merged.push((v, w)),
            }
        }
        let total: f64 = merged.iter().map(|&(_, w)| w).sum();
        if total <= 0.0 {
            return Err(EstimatorError::InvalidAtoms);
        }
        for a in &mut merged {
            a.1 /= total;
        }
        Ok(Self { atoms: merged })
    }

    pub fn point_mass(value: f64) -> Self {
        Self {
            atoms: vec![(value, 1.0)],
        }
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn is_point_mass(&self) -> bool {
        self.atoms.len() == 1
    }

    /// `P(Y ≤ y)`.
    pub fn cdf(&self, y: f64) -> f64 {
        self.atoms
            .iter()
            .take_while(|&&(v, _)| v <= y)
            .map(|&(_, w)| w)
            .sum()
    }

    /// `P(Y < y)` — the left limit of the CDF at `y`.
    pub fn cdf_left(&self, y: f64) -> f64 {
        self.atoms
            .iter()
            .take_while(|&&(v, _)| v < y)
            .map(|&(_, w)| w)
            .sum()
    }

    /// Left-continuous generalized inverse: the smallest atom whose
    /// cumulative weight reaches `u`.
    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let mut cum = 0.0;
        for &(v, w) in &self.atoms {
            cum += w;
            if cum + 1e-12 >= u {
                return v;
            }
        }
        self.atoms.last().unwrap().0
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|&(v, w)| v * w).sum()
    }
}

/// Estimated conditional outcome distributions for one observation.
#[derive(Debug, Clone)]
pub struct CdfPair {
    pub untreated: DiscreteCdf,
    pub treated: DiscreteCdf,
}

/// Feature map used by the regression effect estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    /// Intercept only: arm means.
    Constant,
    /// Intercept plus the raw covariates.
    Linear,
}

impl Basis {
    fn features(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Basis::Constant => vec![1.0],
            Basis::Linear => {
                let mut f = Vec::with_capacity(x.len() + 1);
                f.push(1.0);
                f.extend_from_slice(x);
                f
            }
        }
    }
}

/// A fitted treatment-effect function `x ↦ Δ̂(x)`.
#[derive(Debug, Clone)]
pub enum DeltaModel {
    /// Difference of per-arm least-squares fits on a feature basis.
    Regression {
        basis: Basis,
        treated_coef: Vec<f64>,
        control_coef: Vec<f64>,
        /// Whether a ridge fallback was needed for a singular design.
        ridged: bool,
    },
    /// Piecewise-constant instrumental-variable (Wald ratio) fit over
    /// covariate cells.
    CellConstant {
        cells: Vec<BoxRegion>,
        values: Vec<f64>,
    },
}

impl DeltaModel {
    pub fn eval(&self, x: &[f64]) -> Result<f64, EstimatorError> {
        match self {
            DeltaModel::Regression {
                basis,
                treated_coef,
                control_coef,
                ..
            } => {
                let f = basis.features(x);
                let dot = |c: &[f64]| c.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>();
                Ok(dot(treated_coef) - dot(control_coef))
            }
            DeltaModel::CellConstant { cells, values } => cells
                .iter()
                .position(|c| c.contains(x))
                .map(|i| values[i])
                .ok_or(EstimatorError::OutsideCells { index: usize::MAX }),
        }
    }

    pub fn was_ridged(&self) -> bool {
        matches!(self, DeltaModel::Regression { ridged: true, .. })
    }
}

// Gaussian elimination with partial pivoting; `None` when singular.
#[allow(clippy::needless_range_loop)] // in-place elimination reads clearest with indices
fn solve_dense(mut m: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale: f64 = m
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
        .max(1.0);
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| m[i][c].abs().partial_cmp(&m[j][c].abs()).unwrap())?;
        if m[piv][c].abs() < 1e-12 * scale {
            return None;
        }
        m.swap(c, piv);
        b.swap(c, piv);
        for r in 0..n {
            if r != c {
                let f = m[r][c] / m[c][c];
                for k in c..n {
                    m[r][k] -= f * m[c][k];
                }
                b[r] -= f * b[c];
            }
        }
    }
    Some((0..n).map(|i| b[i] / m[i][i]).collect())
}

fn weighted_least_squares(
    rows: &[(Vec<f64>, f64, f64)], // (features, response, weight)
) -> (Vec<f64>, bool) {
    let p = rows[0].0.len();
    let mut xtx = vec![vec![0.0; p]; p];
    let mut xty = vec![0.0; p];
    for (f, y, w) in rows {
        for i in 0..p {
            xty[i] += w * f[i] * y;
            for j in 0..p {
                xtx[i][j] += w * f[i] * f[j];
            }
        }
    }
    if let Some(beta) = solve_dense(xtx.clone(), xty.clone()) {
        return (beta, false);
    }
    // Singular design: stabilize the normal equations with a small ridge.
    let lambda = 1e-8;
    for (i, row) in xtx.iter_mut().enumerate() {
        row[i] += lambda;
    }
    let beta = solve_dense(xtx, xty).expect("ridge-stabilized system is nonsingular");
    (beta, true)
}

/// Fit per-arm outcome regressions on `basis` features and return their
/// difference as the effect function. A singular design falls back to a
/// ridge-stabilized fit (`λ = 1e-8`), reported through
/// [`DeltaModel::was_ridged`].
pub fn fit_delta_regression(data: &Dataset, basis: Basis) -> Result<DeltaModel, EstimatorError> {
    let mut treated_rows = Vec::new();
    let mut control_rows = Vec::new();
    for obs in data.observations() {
        let row = (basis.features(&obs.x), obs.y, obs.w);
        if obs.d {
            treated_rows.push(row);
        } else {
            control_rows.push(row);
        }
    }
    if treated_rows.is_empty() {
        return Err(EstimatorError::MissingArm { arm: "treated" });
    }
    if control_rows.is_empty() {
        return Err(EstimatorError::MissingArm { arm: "control" });
    }
    let (treated_coef, r1) = weighted_least_squares(&treated_rows);
    let (control_coef, r0) = weighted_least_squares(&control_rows);
    Ok(DeltaModel::Regression {
        basis,
        treated_coef,
        control_coef,
        ridged: r1 || r0,
    })
}

fn weighted_cov(pairs: &[(f64, f64, f64)]) -> f64 {
    let total: f64 = pairs.iter().map(|&(_, _, w)| w).sum();
    let ma: f64 = pairs.iter().map(|&(a, _, w)| w * a).sum::<f64>() / total;
    let mb: f64 = pairs.iter().map(|&(_, b, w)| w * b).sum::<f64>() / total;
    pairs
        .iter()
        .map(|&(a, b, w)| w * (a - ma) * (b - mb))
        .sum::<f64>()
        / total
}

/// Instrumental-variable effect fit: within each covariate cell the effect
/// is the Wald ratio `Cov(Y, Z) / Cov(D, Z)`.
pub fn fit_delta_iv(data: &Dataset, cells: &[BoxRegion]) -> Result<DeltaModel, EstimatorError> {
    if cells.is_empty() {
        return Err(EstimatorError::OutsideCells { index: 0 });
    }
    let mut per_cell: Vec<Vec<(f64, f64, f64, f64)>> = vec![Vec::new(); cells.len()]; // (y, d, z, w)
    for (index, obs) in data.observations().iter().enumerate() {
        let z = obs.z.ok_or(EstimatorError::MissingInstrument)?;
        let cell = cells
            .iter()
            .position(|c| c.contains(&obs.x))
            .ok_or(EstimatorError::OutsideCells { index })?;
        per_cell[cell].push((obs.y, f64::from(u8::from(obs.d)), z, obs.w));
    }
    let mut values = Vec::with_capacity(cells.len());
    for (cell, rows) in per_cell.iter().enumerate() {
        if rows.is_empty() {
            return Err(EstimatorError::WeakInstrument { cell, cov: 0.0 });
        }
        let cov_dz = weighted_cov(
            &rows
                .iter()
                .map(|&(_, d, z, w)| (d, z, w))
                .collect::<Vec<_>>(),
        );
        if cov_dz.abs() < 1e-10 {
            return Err(EstimatorError::WeakInstrument { cell, cov: cov_dz });
        }
        let cov_yz = weighted_cov(
            &rows
                .iter()
                .map(|&(y, _, z, w)| (y, z, w))
                .collect::<Vec<_>>(),
        );
        values.push(cov_yz / cov_dz);
    }
    Ok(DeltaModel::CellConstant {
        cells: cells.to_vec(),
        values,
    })
}

/// Which conditioning variables the kernel CDF estimator matches on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CdfGrouping {
    /// Kernel smoothing over covariates only.
    Covariates,
    /// Kernel smoothing over covariates within exact group matches.
    CovariatesAndGroup,
}

/// Fitted conditional CDFs with fit diagnostics.
#[derive(Debug, Clone)]
pub struct FittedCdfs {
    pub pairs: Vec<CdfPair>,
    /// How many evaluation points needed a widened bandwidth to reach
    /// usable kernel mass.
    pub widened: usize,
}

/// Nadaraya–Watson weighted empirical conditional CDFs per observation and
/// arm, using a Gaussian product kernel on standardized covariates.
///
/// `bandwidth` multiplies the per-dimension sample standard deviation; the
/// usual rate choice is [`rule_of_thumb_bandwidth`]. Evaluation points whose
/// effective kernel mass falls below `1e-6` are refit with doubled
/// bandwidths until the mass recovers.
pub fn fit_conditional_cdfs(
    data: &Dataset,
    bandwidth: f64,
    grouping: CdfGrouping,
) -> Result<FittedCdfs, EstimatorError> {
    if bandwidth.is_nan() || bandwidth <= 0.0 {
        return Err(EstimatorError::InvalidBandwidth(bandwidth));
    }
    let k = data.dim();
    let n = data.len();
    let obs = data.observations();

    // Per-dimension standard deviations for kernel standardization.
    let total_w = data.total_weight();
    let mut sds = vec![0.0f64; k];
    for (j, sd) in sds.iter_mut().enumerate() {
        let mean: f64 = obs.iter().map(|o| o.w * o.x[j]).sum::<f64>() / total_w;
        let var: f64 = obs
            .iter()
            .map(|o| o.w * (o.x[j] - mean) * (o.x[j] - mean))
            .sum::<f64>()
            / total_w;
        *sd = if var > 0.0 { var.sqrt() } else { 1.0 };
    }

    let kernel_mass = |i: usize, j: usize, h: f64| -> f64 {
        let mut log_k = 0.0;
        for (dim, sd) in sds.iter().enumerate() {
            let scaled = (obs[i].x[dim] - obs[j].x[dim]) / (h * sd);
            log_k -= 0.5 * scaled * scaled;
        }
        obs[j].w * log_k.exp()
    };

    let mut pairs = Vec::with_capacity(n);
    let mut widened = 0usize;
    for i in 0..n {
        let mut arm_atoms = [Vec::new(), Vec::new()];
        for (arm, atoms) in arm_atoms.iter_mut().enumerate() {
            let treated = arm == 1;
            let candidates: Vec<usize> = (0..n)
                .filter(|&j| obs[j].d == treated)
                .filter(|&j| match grouping {
                    CdfGrouping::Covariates => true,
                    CdfGrouping::CovariatesAndGroup => obs[j].c == obs[i].c,
                })
                .collect();
            if candidates.is_empty() {
                return Err(EstimatorError::MissingArm {
                    arm: if treated { "treated" } else { "control" },
                });
            }
            let candidate_weight: f64 = candidates.iter().map(|&j| obs[j].w).sum();
            let mut h = bandwidth;
            let mut grew = false;
            loop {
                let weights: Vec<f64> = candidates.iter().map(|&j| kernel_mass(i, j, h)).collect();
                let mass: f64 = weights.iter().sum();
                if mass / candidate_weight >= 1e-6 || h.is_infinite() {
                    *atoms = candidates
                        .iter()
                        .zip(&weights)
                        .map(|(&j, &w)| (obs[j].y, w))
                        .collect();
                    break;
                }
                h *= 2.0;
                grew = true;
            }
            if grew {
                widened += 1;
            }
        }
        let [control, treated] = arm_atoms;
        pairs.push(CdfPair {
            untreated: DiscreteCdf::new(control)?,
            treated: DiscreteCdf::new(treated)?,
        });
    }
    Ok(FittedCdfs { pairs, widened })
}

/// The usual `n^(-1/(4+k))` bandwidth rate.
pub fn rule_of_thumb_bandwidth(n: usize, dim: usize) -> f64 {
    (n as f64).powf(-1.0 / (4.0 + dim as f64))
}

/// Per-observation treatment effects under perfect positive dependence
/// (rank invariance): treated outcomes are mapped to their untreated
/// counterpart through the quantile map, and vice versa.
pub fn rank_effects(data: &Dataset, cdfs: &[CdfPair]) -> Result<Vec<f64>, EstimatorError> {
    if cdfs.len() != data.len() {
        return Err(EstimatorError::LengthMismatch(cdfs.len(), data.len()));
    }
    data.observations()
        .iter()
        .zip(cdfs)
        .enumerate()
        .map(|(i, (obs, pair))| {
            let effect = if obs.d {
                let matched = pair.untreated.quantile(pair.treated.cdf(obs.y));
                obs.y - matched
            } else {
                let matched = pair.treated.quantile(pair.untreated.cdf(obs.y));
                matched - obs.y
            };
            if effect.is_finite() {
                Ok(effect)
            } else {
                Err(EstimatorError::NonFinite(i))
            }
        })
        .collect()
}

/// Per-observation treatment effects under the antitone (perfectly
/// negatively dependent) coupling: ranks are reversed across arms.
pub fn negative_rank_effects(
    data: &Dataset,
    cdfs: &[CdfPair],
) -> Result<Vec<f64>, EstimatorError> {
    if cdfs.len() != data.len() {
        return Err(EstimatorError::LengthMismatch(cdfs.len(), data.len()));
    }
    data.observations()
        .iter()
        .zip(cdfs)
        .enumerate()
        .map(|(i, (obs, pair))| {
            // The reversed rank uses the left CDF limit so that discrete
            // uniform atoms pair first-with-last exactly.
            let effect = if obs.d {
                let matched = pair.untreated.quantile(1.0 - pair.treated.cdf_left(obs.y));
                obs.y - matched
            } else {
                let matched = pair.treated.quantile(1.0 - pair.untreated.cdf_left(obs.y));
                matched - obs.y
            };
            if effect.is_finite() {
                Ok(effect)
            } else {
                Err(EstimatorError::NonFinite(i))
            }
        })
        .collect()
}

/// How to estimate the untreated-arm mean.
#[derive(Debug, Clone)]
pub enum Y0Method {
    /// Weighted control-arm average (valid under random assignment).
    ControlMean,
    /// Inverse-propensity weighting with per-observation propensities.
    InversePropensity { propensity: Vec<f64> },
}

pub fn estimate_y0_mean(data: &Dataset, method: &Y0Method) -> Result<f64, EstimatorError> {
    match method {
        Y0Method::ControlMean => {
            let mut num = 0.0;
            let mut den = 0.0;
            for obs in data.observations() {
                if !obs.d {
                    num += obs.w * obs.y;
                    den += obs.w;
                }
            }
            if den == 0.0 {
                return Err(EstimatorError::MissingArm { arm: "control" });
            }
            Ok(num / den)
        }
        Y0Method::InversePropensity { propensity } => {
            if propensity.len() != data.len() {
                return Err(EstimatorError::LengthMismatch(propensity.len(), data.len()));
            }
            let mut num = 0.0;
            for (obs, &e) in data.observations().iter().zip(propensity) {
                if !e.is_finite() || e <= 0.0 || e >= 1.0 {
                    return Err(EstimatorError::InvalidPropensity(e));
                }
                if !obs.d {
                    num += obs.w * obs.y / (1.0 - e);
                }
            }
            Ok(num / data.total_weight())
        }
    }
}

/// Everything a robust criterion may need from the estimation stage.
///
/// Only the fields demanded by the chosen coupling assumption must be
/// present; [`EstimatorBundle::validate`] checks finiteness and lengths.
#[derive(Debug, Clone, Default)]
pub struct EstimatorBundle {
    /// Fitted effect function, for the constant-treatment-effects coupling.
    pub delta_fn: Option<DeltaModel>,
    /// Per-observation effects (e.g. rank-invariant effects, or precomputed
    /// per-covariate effects evaluated at the sample).
    pub delta_obs: Option<Vec<f64>>,
    /// Per-observation effects under the antitone coupling.
    pub delta_star_obs: Option<Vec<f64>>,
    /// Estimate of the untreated-arm population mean.
    pub y0_mean: f64,
    /// Conditional CDF estimates per observation.
    pub cond_cdfs: Option<Vec<CdfPair>>,
}

impl EstimatorBundle {
    pub fn new(y0_mean: f64) -> Self {
        Self {
            y0_mean,
            ..Self::default()
        }
    }

    pub fn with_delta_fn(mut self, model: DeltaModel) -> Self {
        self.delta_fn = Some(model);
        self
    }

    pub fn with_effects(mut self, effects: Vec<f64>) -> Self {
        self.delta_obs = Some(effects);
        self
    }

    pub fn with_negative_effects(mut self, effects: Vec<f64>) -> Self {
        self.delta_star_obs = Some(effects);
        self
    }

    pub fn with_cond_cdfs(mut self, cdfs: Vec<CdfPair>) -> Self {
        self.cond_cdfs = Some(cdfs);
        self
    }

    /// Reject NaN and mismatched lengths.
    pub fn validate(&self, n: usize) -> Result<(), EstimatorError> {
        if !self.y0_mean.is_finite() {
            return Err(EstimatorError::NonFinite(0));
        }
        for v in [&self.delta_obs, &self.delta_star_obs].into_iter().flatten() {
            if v.len() != n {
                return Err(EstimatorError::LengthMismatch(v.len(), n));
            }
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                return Err(EstimatorError::NonFinite(i));
            }
        }
        if let Some(c) = &self.cond_cdfs {
            if c.len() != n {
                return Err(EstimatorError::LengthMismatch(c.len(), n));
            }
        }
        Ok(())
    }
}
