//! Synthetic data-generating processes with known ground truth.
//!
//! Each process draws covariates, both potential outcomes, and a treatment
//! assignment, then reveals only `Y = D·Y1 + (1−D)·Y0`. The hidden truth —
//! per-unit conditional effects, the untreated-arm mean, and the full
//! potential-outcome pairs — is returned alongside so estimator and regret
//! tests can be scored against the generating law.
//!
//! Generation is deterministic given the seed. Parallel callers must
//! partition the seed stream themselves: give each worker its own seed
//! (for instance `base_seed + worker_index`); every seed opens an
//! independent stream.

use crate::model::{Dataset, ModelError, Observation, SupportBounds};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("model error: {0}")]
    Model(#[from] ModelError),
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
}

/// Marginal law of the covariates.
#[derive(Debug, Clone)]
pub enum CovariateLaw {
    UniformBox { lower: Vec<f64>, upper: Vec<f64> },
    Gaussian { mean: Vec<f64>, sd: Vec<f64> },
    FiniteAtoms { atoms: Vec<Vec<f64>>, probs: Vec<f64> },
}

impl CovariateLaw {
    pub fn dim(&self) -> usize {
        match self {
            CovariateLaw::UniformBox { lower, .. } => lower.len(),
            CovariateLaw::Gaussian { mean, .. } => mean.len(),
            CovariateLaw::FiniteAtoms { atoms, .. } => atoms.first().map_or(0, Vec::len),
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        match self {
            CovariateLaw::UniformBox { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(l, u)| 0.5 * (l + u))
                .collect(),
            CovariateLaw::Gaussian { mean, .. } => mean.clone(),
            CovariateLaw::FiniteAtoms { atoms, probs } => {
                let dim = self.dim();
                let mut m = vec![0.0; dim];
                for (atom, &p) in atoms.iter().zip(probs) {
                    for (acc, &v) in m.iter_mut().zip(atom) {
                        *acc += p * v;
                    }
                }
                m
            }
        }
    }

    fn validate(&self) -> Result<(), DatagenError> {
        match self {
            CovariateLaw::UniformBox { lower, upper } => {
                if lower.len() != upper.len() || lower.iter().zip(upper).any(|(l, u)| l > u) {
                    return Err(DatagenError::InvalidSpec("degenerate covariate box".into()));
                }
            }
            CovariateLaw::Gaussian { mean, sd } => {
                if mean.len() != sd.len() || sd.iter().any(|&s| s < 0.0) {
                    return Err(DatagenError::InvalidSpec("bad gaussian covariates".into()));
                }
            }
            CovariateLaw::FiniteAtoms { atoms, probs } => {
                let total: f64 = probs.iter().sum();
                if atoms.is_empty()
                    || atoms.len() != probs.len()
                    || probs.iter().any(|&p| p < 0.0)
                    || (total - 1.0).abs() > 1e-9
                {
                    return Err(DatagenError::InvalidSpec("bad covariate atoms".into()));
                }
            }
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            CovariateLaw::UniformBox { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(&l, &u)| if l == u { l } else { rng.gen_range(l..u) })
                .collect(),
            CovariateLaw::Gaussian { mean, sd } => mean
                .iter()
                .zip(sd)
                .map(|(&m, &s)| {
                    if s == 0.0 {
                        m
                    } else {
                        Normal::new(m, s).unwrap().sample(rng)
                    }
                })
                .collect(),
            CovariateLaw::FiniteAtoms { atoms, probs } => {
                let mut u: f64 = rng.gen_range(0.0..1.0);
                for (atom, &p) in atoms.iter().zip(probs) {
                    if u < p {
                        return atom.clone();
                    }
                    u -= p;
                }
                atoms.last().unwrap().clone()
            }
        }
    }
}

/// Idiosyncratic noise law.
#[derive(Debug, Clone)]
pub enum NoiseLaw {
    None,
    Gaussian { sd: f64 },
    DiscreteUniform { values: Vec<f64> },
}

impl NoiseLaw {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            NoiseLaw::None => 0.0,
            NoiseLaw::Gaussian { sd } => Normal::new(0.0, *sd).unwrap().sample(rng),
            NoiseLaw::DiscreteUniform { values } => values[rng.gen_range(0..values.len())],
        }
    }

    fn mean(&self) -> f64 {
        match self {
            NoiseLaw::None => 0.0,
            NoiseLaw::Gaussian { .. } => 0.0,
            NoiseLaw::DiscreteUniform { values } => {
                values.iter().sum::<f64>() / values.len() as f64
            }
        }
    }

    fn validate(&self) -> Result<(), DatagenError> {
        match self {
            NoiseLaw::Gaussian { sd } if *sd < 0.0 => {
                Err(DatagenError::InvalidSpec("negative noise sd".into()))
            }
            NoiseLaw::DiscreteUniform { values } if values.is_empty() => {
                Err(DatagenError::InvalidSpec("empty noise support".into()))
            }
            _ => Ok(()),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// Structural model for the potential outcomes.
#[derive(Debug, Clone)]
pub enum OutcomeModel {
    /// `Y0 = a + b·x + u`, `Y1 = Y0 + Δ(x)` with `Δ(x) = c + d·x`: effects
    /// are constant given covariates.
    LinearConstantTE {
        base_intercept: f64,
        base_slope: Vec<f64>,
        effect_intercept: f64,
        effect_slope: Vec<f64>,
        noise: NoiseLaw,
    },
    /// Location–scale family sharing one rank variable `U` across arms:
    /// `Y_d = a_d + b_d·x + s_d·U`. Rank invariance holds by construction.
    RankInvariant {
        control_intercept: f64,
        control_slope: Vec<f64>,
        control_scale: f64,
        treated_intercept: f64,
        treated_slope: Vec<f64>,
        treated_scale: f64,
        noise: NoiseLaw,
    },
    /// Group factor structure: `Y_d = a_d + b_d·x + λ_d·α_C + u_d` with
    /// independent idiosyncratic draws, so the arms are conditionally
    /// independent given `(X, C)`.
    FactorModel {
        base_intercept: [f64; 2],
        base_slope: [Vec<f64>; 2],
        loading: [f64; 2],
        group_effects: Vec<f64>,
        noise: [NoiseLaw; 2],
    },
}

impl OutcomeModel {
    fn validate(&self) -> Result<(), DatagenError> {
        match self {
            OutcomeModel::LinearConstantTE { noise, .. } => noise.validate(),
            OutcomeModel::RankInvariant { noise, .. } => noise.validate(),
            OutcomeModel::FactorModel {
                group_effects,
                noise,
                ..
            } => {
                if group_effects.is_empty() {
                    return Err(DatagenError::InvalidSpec("no groups".into()));
                }
                noise[0].validate()?;
                noise[1].validate()
            }
        }
    }
}

/// Treatment assignment mechanism.
#[derive(Debug, Clone)]
pub enum Assignment {
    /// Bernoulli with fixed probability.
    Randomized { p: f64 },
    /// Logistic propensity in the covariates.
    Logistic { intercept: f64, slope: Vec<f64> },
    /// Binary instrument with imperfect compliance on both sides.
    Instrumented {
        z_prob: f64,
        comply_with_z: f64,
        comply_without_z: f64,
    },
}

impl Assignment {
    fn validate(&self) -> Result<(), DatagenError> {
        let inside = |p: f64| p > 0.0 && p < 1.0;
        let ok = match self {
            Assignment::Randomized { p } => inside(*p),
            Assignment::Logistic { .. } => true,
            Assignment::Instrumented {
                z_prob,
                comply_with_z,
                comply_without_z,
            } => inside(*z_prob) && inside(*comply_with_z) && inside(*comply_without_z),
        };
        if ok {
            Ok(())
        } else {
            Err(DatagenError::InvalidSpec(
                "assignment probabilities must lie strictly inside (0, 1)".into(),
            ))
        }
    }
}

/// A complete data-generating process.
#[derive(Debug, Clone)]
pub struct DgpSpec {
    pub covariates: CovariateLaw,
    pub outcomes: OutcomeModel,
    pub assignment: Assignment,
    pub bounds: SupportBounds,
}

/// The generating law's hidden side.
#[derive(Debug, Clone)]
pub struct Truth {
    /// Conditional mean effect at each observation (given covariates, and
    /// the group for the factor model).
    pub cate: Vec<f64>,
    /// Population mean of the untreated outcome.
    pub e_y0: f64,
    /// Realized untreated potential outcomes.
    pub y0: Vec<f64>,
    /// Realized treated potential outcomes.
    pub y1: Vec<f64>,
}

/// Draw `n` observations. Reproducible: the same `(spec, n, seed)` always
/// yields the same dataset and truth.
pub fn generate(spec: &DgpSpec, n: usize, seed: u64) -> Result<(Dataset, Truth), DatagenError> {
    if n == 0 {
        return Err(DatagenError::InvalidSpec("need at least one draw".into()));
    }
    spec.covariates.validate()?;
    spec.outcomes.validate()?;
    spec.assignment.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut observations = Vec::with_capacity(n);
    let mut cate = Vec::with_capacity(n);
    let mut y0s = Vec::with_capacity(n);
    let mut y1s = Vec::with_capacity(n);
    for _ in 0..n {
        let x = spec.covariates.sample(&mut rng);
        let (y0, y1, unit_cate, group) = match &spec.outcomes {
            OutcomeModel::LinearConstantTE {
                base_intercept,
                base_slope,
                effect_intercept,
                effect_slope,
                noise,
            } => {
                let u = noise.sample(&mut rng);
                let y0 = base_intercept + dot(base_slope, &x) + u;
                let effect = effect_intercept + dot(effect_slope, &x);
                (y0, y0 + effect, effect, None)
            }
            OutcomeModel::RankInvariant {
                control_intercept,
                control_slope,
                control_scale,
                treated_intercept,
                treated_slope,
                treated_scale,
                noise,
            } => {
                let u = noise.sample(&mut rng);
                let y0 = control_intercept + dot(control_slope, &x) + control_scale * u;
                let y1 = treated_intercept + dot(treated_slope, &x) + treated_scale * u;
                let mean_effect = (treated_intercept - control_intercept)
                    + dot(treated_slope, &x)
                    - dot(control_slope, &x)
                    + (treated_scale - control_scale) * noise.mean();
                (y0, y1, mean_effect, None)
            }
            OutcomeModel::FactorModel {
                base_intercept,
                base_slope,
                loading,
                group_effects,
                noise,
            } => {
                let c = rng.gen_range(0..group_effects.len());
                let alpha = group_effects[c];
                let u0 = noise[0].sample(&mut rng);
                let u1 = noise[1].sample(&mut rng);
                let y0 = base_intercept[0] + dot(&base_slope[0], &x) + loading[0] * alpha + u0;
                let y1 = base_intercept[1] + dot(&base_slope[1], &x) + loading[1] * alpha + u1;
                let mean_effect = (base_intercept[1] - base_intercept[0])
                    + dot(&base_slope[1], &x)
                    - dot(&base_slope[0], &x)
                    + (loading[1] - loading[0]) * alpha
                    + noise[1].mean()
                    - noise[0].mean();
                (y0, y1, mean_effect, Some(c as i64))
            }
        };
        let (d, z) = match &spec.assignment {
            Assignment::Randomized { p } => (rng.gen_bool(*p), None),
            Assignment::Logistic { intercept, slope } => {
                let e = 1.0 / (1.0 + (-(intercept + dot(slope, &x))).exp());
                (rng.gen_bool(e.clamp(1e-12, 1.0 - 1e-12)), None)
            }
            Assignment::Instrumented {
                z_prob,
                comply_with_z,
                comply_without_z,
            } => {
                let z = rng.gen_bool(*z_prob);
                let d = rng.gen_bool(if z { *comply_with_z } else { *comply_without_z });
                (d, Some(f64::from(u8::from(z))))
            }
        };
        let y = if d { y1 } else { y0 };
        let mut obs = Observation::new(x, y, d);
        if let Some(z) = z {
            obs = obs.with_instrument(z);
        }
        if let Some(c) = group {
            obs = obs.with_group(c);
        }
        observations.push(obs);
        cate.push(unit_cate);
        y0s.push(y0);
        y1s.push(y1);
    }

    let x_mean = spec.covariates.mean();
    let e_y0 = match &spec.outcomes {
        OutcomeModel::LinearConstantTE {
            base_intercept,
            base_slope,
            noise,
            ..
        } => base_intercept + dot(base_slope, &x_mean) + noise.mean(),
        OutcomeModel::RankInvariant {
            control_intercept,
            control_slope,
            control_scale,
            noise,
            ..
        } => control_intercept + dot(control_slope, &x_mean) + control_scale * noise.mean(),
        OutcomeModel::FactorModel {
            base_intercept,
            base_slope,
            loading,
            group_effects,
            noise,
        } => {
            let alpha_mean = group_effects.iter().sum::<f64>() / group_effects.len() as f64;
            base_intercept[0] + dot(&base_slope[0], &x_mean) + loading[0] * alpha_mean
                + noise[0].mean()
        }
    };

    let dataset = Dataset::new(observations, spec.bounds)?;
    Ok((
        dataset,
        Truth {
            cate,
            e_y0,
            y0: y0s,
            y1: y1s,
        },
    ))
}
