//! Declarative run configuration: a TOML file plus a handful of flag
//! overrides. Column references are by name; rule and class definitions
//! reference covariates by their column names.

use robust_policy::datagen::{Assignment, CovariateLaw, DgpSpec, NoiseLaw, OutcomeModel};
use robust_policy::model::{
    BoxRegion, MetricOrder, NeighborhoodSpec, PolicyRule, ShiftKind, Sign, SupportBounds,
    ThresholdTerm,
};
use robust_policy::robust::CouplingAssumption;
use robust_policy::search::PolicyClassSpec;
use serde::Deserialize;
use std::path::{Path, PathBuf};

/// A configuration problem; always maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(message.into()))
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(default)]
    pub input: InputSection,
    #[serde(default)]
    pub columns: ColumnsSection,
    #[serde(default)]
    pub bounds: BoundsSection,
    #[serde(default)]
    pub neighborhood: NeighborhoodSection,
    #[serde(default)]
    pub coupling: CouplingSection,
    #[serde(default)]
    pub estimators: EstimatorSection,
    pub rule: Option<RuleSection>,
    pub class: Option<ClassSection>,
    #[serde(default)]
    pub curve: CurveSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub run: RunSection,
    pub generate: Option<GenerateSection>,
    pub oracle_check: Option<OracleCheckSection>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct InputSection {
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ColumnsSection {
    pub y: Option<String>,
    pub d: Option<String>,
    #[serde(default)]
    pub x: Vec<String>,
    pub z: Option<String>,
    pub c: Option<String>,
    pub weight: Option<String>,
    /// Optional precomputed per-observation effect column.
    pub delta: Option<String>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    pub lower: Option<toml::Value>,
    pub upper: Option<toml::Value>,
    pub equispaced_gap: Option<f64>,
}

fn parse_extended(value: &toml::Value, what: &str) -> Result<f64, ConfigError> {
    match value {
        toml::Value::Float(f) => Ok(*f),
        toml::Value::Integer(i) => Ok(*i as f64),
        toml::Value::String(s) => match s.trim() {
            "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
            "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
            other => err(format!("{what}: cannot parse '{other}' as a number")),
        },
        other => err(format!("{what}: unsupported value {other}")),
    }
}

impl BoundsSection {
    pub fn to_bounds(&self) -> Result<SupportBounds, ConfigError> {
        let lower = match &self.lower {
            Some(v) => parse_extended(v, "bounds.lower")?,
            None => f64::NEG_INFINITY,
        };
        let upper = match &self.upper {
            Some(v) => parse_extended(v, "bounds.upper")?,
            None => f64::INFINITY,
        };
        let mut bounds = SupportBounds::new(lower, upper)
            .map_err(|e| ConfigError(format!("bounds: {e}")))?;
        if let Some(gap) = self.equispaced_gap {
            bounds = bounds.with_equispaced_gap(gap);
        }
        Ok(bounds)
    }
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct NeighborhoodSection {
    pub epsilon: Option<f64>,
    pub epsilon_grid: Option<Vec<f64>>,
    /// "po-only" or "joint" (default).
    pub shift: Option<String>,
    /// 1 (default) or 2.
    pub order: Option<u32>,
    pub covariate_scale: Option<Vec<f64>>,
}

impl NeighborhoodSection {
    pub fn to_spec(&self, epsilon: f64, dim: usize) -> Result<NeighborhoodSpec, ConfigError> {
        let shift = match self.shift.as_deref() {
            None | Some("joint") => ShiftKind::PotentialOutcomesAndCovariates,
            Some("po-only") => ShiftKind::PotentialOutcomesOnly,
            Some(other) => return err(format!("neighborhood.shift: unknown kind '{other}'")),
        };
        let order = match self.order {
            None | Some(1) => MetricOrder::One,
            Some(2) => MetricOrder::Two,
            Some(other) => return err(format!("neighborhood.order: must be 1 or 2, got {other}")),
        };
        let scale = match &self.covariate_scale {
            Some(s) if shift == ShiftKind::PotentialOutcomesAndCovariates => {
                if s.len() != dim {
                    return err(format!(
                        "neighborhood.covariate_scale has {} entries for {} covariates",
                        s.len(),
                        dim
                    ));
                }
                s.clone()
            }
            Some(_) => Vec::new(),
            None if shift == ShiftKind::PotentialOutcomesAndCovariates => vec![1.0; dim],
            None => Vec::new(),
        };
        NeighborhoodSpec::new(epsilon, shift, order, scale)
            .map_err(|e| ConfigError(format!("neighborhood: {e}")))
    }
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct CouplingSection {
    pub assumption: Option<String>,
}

impl CouplingSection {
    pub fn to_coupling(&self) -> Result<CouplingAssumption, ConfigError> {
        Ok(match self.assumption.as_deref() {
            None | Some("constant-te") => CouplingAssumption::ConstantTreatmentEffects,
            Some("ppd") => CouplingAssumption::PerfectPositiveDependence,
            Some("cond-indep") => CouplingAssumption::ConditionalIndependence,
            Some("least-favorable") => CouplingAssumption::LeastFavorable,
            Some(other) => {
                return err(format!("coupling.assumption: unknown coupling '{other}'"))
            }
        })
    }
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    /// "regression" (default), "iv", or "column".
    pub effect: Option<String>,
    /// "linear" (default) or "constant".
    pub basis: Option<String>,
    /// Kernel bandwidth multiplier; defaults to the rule of thumb.
    pub bandwidth: Option<f64>,
    /// "x" (default) or "x-and-c".
    pub grouping: Option<String>,
    /// "control-mean" (default) or "ipw".
    pub y0: Option<String>,
    /// Constant propensity for "ipw".
    pub propensity: Option<f64>,
    /// Covariate cells for the instrumental-variable effect fit.
    #[serde(default)]
    pub cells: Vec<CellSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSection {
    pub lower: Vec<toml::Value>,
    pub upper: Vec<toml::Value>,
}

impl CellSection {
    pub fn to_box(&self) -> Result<BoxRegion, ConfigError> {
        let lower: Result<Vec<f64>, _> = self
            .lower
            .iter()
            .map(|v| parse_extended(v, "cell lower"))
            .collect();
        let upper: Result<Vec<f64>, _> = self
            .upper
            .iter()
            .map(|v| parse_extended(v, "cell upper"))
            .collect();
        BoxRegion::closed(lower?, upper?).map_err(|e| ConfigError(format!("cell: {e}")))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSection {
    pub kind: String,
    // threshold
    #[serde(default)]
    pub terms: Vec<TermSection>,
    // linear
    pub intercept: Option<f64>,
    pub slope: Option<Vec<f64>>,
    // constant
    pub treat: Option<bool>,
    // tree
    #[serde(default)]
    pub treat_boxes: Vec<CellSection>,
    #[serde(default)]
    pub complement_boxes: Vec<CellSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSection {
    /// Covariate column name.
    pub dim: String,
    /// "<=" or ">=".
    pub sign: String,
    pub cut: f64,
}

fn parse_sign(s: &str) -> Result<Sign, ConfigError> {
    match s {
        "<=" => Ok(Sign::AtOrBelow),
        ">=" => Ok(Sign::AtOrAbove),
        other => err(format!("sign must be '<=' or '>=', got '{other}'")),
    }
}

fn resolve_dim(name: &str, x_columns: &[String]) -> Result<usize, ConfigError> {
    x_columns
        .iter()
        .position(|c| c == name)
        .ok_or_else(|| ConfigError(format!("'{name}' is not one of the x columns {x_columns:?}")))
}

impl RuleSection {
    pub fn to_rule(&self, x_columns: &[String]) -> Result<PolicyRule, ConfigError> {
        match self.kind.as_str() {
            "threshold" => {
                let terms: Result<Vec<ThresholdTerm>, ConfigError> = self
                    .terms
                    .iter()
                    .map(|t| {
                        Ok(ThresholdTerm {
                            dim: resolve_dim(&t.dim, x_columns)?,
                            sign: parse_sign(&t.sign)?,
                            cut: t.cut,
                        })
                    })
                    .collect();
                PolicyRule::threshold(terms?).map_err(|e| ConfigError(format!("rule: {e}")))
            }
            "linear" => {
                let intercept = self
                    .intercept
                    .ok_or_else(|| ConfigError("rule: linear needs 'intercept'".into()))?;
                let slope = self
                    .slope
                    .clone()
                    .ok_or_else(|| ConfigError("rule: linear needs 'slope'".into()))?;
                PolicyRule::linear(intercept, slope).map_err(|e| ConfigError(format!("rule: {e}")))
            }
            "constant" => {
                let treat = self
                    .treat
                    .ok_or_else(|| ConfigError("rule: constant needs 'treat'".into()))?;
                Ok(PolicyRule::Constant(treat))
            }
            "tree" => {
                let treat: Result<Vec<BoxRegion>, _> =
                    self.treat_boxes.iter().map(CellSection::to_box).collect();
                let complement: Result<Vec<BoxRegion>, _> = self
                    .complement_boxes
                    .iter()
                    .map(CellSection::to_box)
                    .collect();
                PolicyRule::tree(treat?, complement?)
                    .map_err(|e| ConfigError(format!("rule: {e}")))
            }
            other => err(format!("rule.kind: unknown kind '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSection {
    pub kind: String,
    // threshold-grid
    #[serde(default)]
    pub dims: Vec<String>,
    #[serde(default)]
    pub signs: Vec<Vec<String>>,
    /// Explicit per-dimension cut lists, or the string "observed".
    pub cuts: Option<toml::Value>,
    pub max_cuts: Option<usize>,
    // linear-grid
    #[serde(default)]
    pub angles: Vec<f64>,
    #[serde(default)]
    pub offsets: Vec<f64>,
    // list
    #[serde(default)]
    pub rules: Vec<RuleSection>,
    #[serde(default)]
    pub include_constants: bool,
}

impl ClassSection {
    pub fn to_class(
        &self,
        x_columns: &[String],
        observed: &dyn Fn(usize, usize) -> Vec<f64>,
    ) -> Result<PolicyClassSpec, ConfigError> {
        match self.kind.as_str() {
            "threshold-grid" => {
                let dims: Result<Vec<usize>, _> = self
                    .dims
                    .iter()
                    .map(|d| resolve_dim(d, x_columns))
                    .collect();
                let dims = dims?;
                let signs: Result<Vec<Vec<Sign>>, _> = self
                    .signs
                    .iter()
                    .map(|pattern| pattern.iter().map(|s| parse_sign(s)).collect())
                    .collect();
                let max_cuts = self.max_cuts.unwrap_or(12);
                let cuts: Vec<Vec<f64>> = match &self.cuts {
                    Some(toml::Value::String(s)) if s == "observed" => dims
                        .iter()
                        .map(|&d| observed(d, max_cuts))
                        .collect(),
                    Some(toml::Value::Array(lists)) => {
                        let mut out = Vec::with_capacity(lists.len());
                        for list in lists {
                            let arr = list.as_array().ok_or_else(|| {
                                ConfigError("class.cuts: expected arrays of numbers".into())
                            })?;
                            let cuts: Result<Vec<f64>, _> = arr
                                .iter()
                                .map(|v| parse_extended(v, "class.cuts"))
                                .collect();
                            out.push(cuts?);
                        }
                        out
                    }
                    _ => return err("class.cuts: provide arrays or the string 'observed'"),
                };
                Ok(PolicyClassSpec::ThresholdGrid {
                    dims,
                    signs: signs?,
                    cuts,
                    include_constants: self.include_constants,
                })
            }
            "linear-grid" => Ok(PolicyClassSpec::LinearGrid {
                angles: self.angles.clone(),
                offsets: self.offsets.clone(),
                include_constants: self.include_constants,
            }),
            "list" => {
                let rules: Result<Vec<PolicyRule>, _> =
                    self.rules.iter().map(|r| r.to_rule(x_columns)).collect();
                Ok(PolicyClassSpec::ExplicitList(rules?))
            }
            other => err(format!("class.kind: unknown kind '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct CurveSection {
    /// "class" (default): enumerate the class; "sample": draw rules from
    /// the class with the run seed.
    pub rules: Option<String>,
    pub sample_count: Option<usize>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub per_rule: bool,
    /// Companion truth file for `generate`.
    pub truth_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSection {
    pub n: usize,
    /// "linear-constant-te", "rank-invariant", or "factor-model".
    pub dgp: String,
    // Covariates.
    pub x_lower: Option<Vec<f64>>,
    pub x_upper: Option<Vec<f64>>,
    pub x_mean: Option<Vec<f64>>,
    pub x_sd: Option<Vec<f64>>,
    // Linear constant effects.
    pub base_intercept: Option<f64>,
    pub base_slope: Option<Vec<f64>>,
    pub effect_intercept: Option<f64>,
    pub effect_slope: Option<Vec<f64>>,
    // Rank-invariant location-scale.
    pub control_intercept: Option<f64>,
    pub control_slope: Option<Vec<f64>>,
    pub control_scale: Option<f64>,
    pub treated_intercept: Option<f64>,
    pub treated_slope: Option<Vec<f64>>,
    pub treated_scale: Option<f64>,
    // Factor model.
    pub loading: Option<[f64; 2]>,
    pub group_effects: Option<Vec<f64>>,
    // Noise.
    pub noise: Option<String>,
    pub noise_sd: Option<f64>,
    pub noise_values: Option<Vec<f64>>,
    // Assignment.
    pub assign_p: Option<f64>,
    pub z_prob: Option<f64>,
    pub comply_with_z: Option<f64>,
    pub comply_without_z: Option<f64>,
}

impl GenerateSection {
    fn noise(&self) -> Result<NoiseLaw, ConfigError> {
        Ok(match self.noise.as_deref() {
            None | Some("none") => NoiseLaw::None,
            Some("gaussian") => NoiseLaw::Gaussian {
                sd: self.noise_sd.unwrap_or(1.0),
            },
            Some("discrete-uniform") => NoiseLaw::DiscreteUniform {
                values: self
                    .noise_values
                    .clone()
                    .ok_or_else(|| ConfigError("generate: noise_values required".into()))?,
            },
            Some(other) => return err(format!("generate.noise: unknown law '{other}'")),
        })
    }

    fn covariates(&self) -> Result<CovariateLaw, ConfigError> {
        match (&self.x_lower, &self.x_upper, &self.x_mean, &self.x_sd) {
            (Some(lower), Some(upper), None, None) => Ok(CovariateLaw::UniformBox {
                lower: lower.clone(),
                upper: upper.clone(),
            }),
            (None, None, Some(mean), Some(sd)) => Ok(CovariateLaw::Gaussian {
                mean: mean.clone(),
                sd: sd.clone(),
            }),
            _ => err("generate: provide x_lower/x_upper or x_mean/x_sd"),
        }
    }

    fn assignment(&self) -> Result<Assignment, ConfigError> {
        if let (Some(z_prob), Some(with_z), Some(without_z)) =
            (self.z_prob, self.comply_with_z, self.comply_without_z)
        {
            return Ok(Assignment::Instrumented {
                z_prob,
                comply_with_z: with_z,
                comply_without_z: without_z,
            });
        }
        Ok(Assignment::Randomized {
            p: self.assign_p.unwrap_or(0.5),
        })
    }

    pub fn to_spec(&self, bounds: SupportBounds) -> Result<DgpSpec, ConfigError> {
        let noise = self.noise()?;
        let need = |v: &Option<f64>, name: &str| {
            v.ok_or_else(|| ConfigError(format!("generate: '{name}' is required")))
        };
        let need_vec = |v: &Option<Vec<f64>>, name: &str| {
            v.clone()
                .ok_or_else(|| ConfigError(format!("generate: '{name}' is required")))
        };
        let outcomes = match self.dgp.as_str() {
            "linear-constant-te" => OutcomeModel::LinearConstantTE {
                base_intercept: need(&self.base_intercept, "base_intercept")?,
                base_slope: need_vec(&self.base_slope, "base_slope")?,
                effect_intercept: need(&self.effect_intercept, "effect_intercept")?,
                effect_slope: need_vec(&self.effect_slope, "effect_slope")?,
                noise,
            },
            "rank-invariant" => OutcomeModel::RankInvariant {
                control_intercept: need(&self.control_intercept, "control_intercept")?,
                control_slope: need_vec(&self.control_slope, "control_slope")?,
                control_scale: self.control_scale.unwrap_or(1.0),
                treated_intercept: need(&self.treated_intercept, "treated_intercept")?,
                treated_slope: need_vec(&self.treated_slope, "treated_slope")?,
                treated_scale: self.treated_scale.unwrap_or(1.0),
                noise,
            },
            "factor-model" => OutcomeModel::FactorModel {
                base_intercept: [
                    need(&self.base_intercept, "base_intercept")?,
                    need(&self.effect_intercept, "effect_intercept")?,
                ],
                base_slope: [
                    need_vec(&self.base_slope, "base_slope")?,
                    need_vec(&self.effect_slope, "effect_slope")?,
                ],
                loading: self.loading.unwrap_or([1.0, 1.0]),
                group_effects: self
                    .group_effects
                    .clone()
                    .ok_or_else(|| ConfigError("generate: group_effects required".into()))?,
                noise: [noise.clone(), noise],
            },
            other => return err(format!("generate.dgp: unknown process '{other}'")),
        };
        Ok(DgpSpec {
            covariates: self.covariates()?,
            outcomes,
            assignment: self.assignment()?,
            bounds,
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleCheckSection {
    /// "po", "ate", "alternative", or "joint".
    pub criterion: String,
    pub epsilon: f64,
    pub atoms: Vec<AtomSection>,
    pub steps: Option<usize>,
    /// Cap on per-atom shift depth; set below epsilon/mass to demonstrate
    /// a deliberately coarse grid.
    pub max_shift: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomSection {
    pub x: Vec<f64>,
    pub y0: f64,
    pub y1: f64,
    pub mass: f64,
}

/// Parse a TOML config file, surfacing line-numbered syntax errors.
pub fn load(path: &Path) -> Result<RawConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
}

/// Flag overrides applied over the file config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub epsilon: Option<f64>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

impl RawConfig {
    pub fn apply(&mut self, over: &Overrides) {
        if let Some(p) = &over.input {
            self.input.path = Some(p.clone());
        }
        if let Some(p) = &over.output {
            self.output.path = Some(p.clone());
        }
        if let Some(e) = over.epsilon {
            self.neighborhood.epsilon = Some(e);
        }
        if let Some(s) = over.seed {
            self.run.seed = Some(s);
        }
        if let Some(t) = over.threads {
            self.run.threads = Some(t);
        }
    }
}
