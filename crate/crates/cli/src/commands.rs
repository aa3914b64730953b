//! Subcommand implementations: evaluate, search, curve, oracle-check,
//! generate.

use crate::config::{ConfigError, OracleCheckSection, RawConfig};
use crate::data_io::{self, LoadedData, ReadError};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use robust_policy::datagen;
use robust_policy::estimators::{
    estimate_y0_mean, fit_conditional_cdfs, fit_delta_iv, fit_delta_regression,
    negative_rank_effects, rank_effects, rule_of_thumb_bandwidth, Basis, CdfGrouping,
    EstimatorBundle, Y0Method,
};
use robust_policy::model::{
    evaluate_rule, Dataset, NeighborhoodSpec, Observation, PolicyRule, ShiftKind,
};
use robust_policy::oracle::{
    joint_target_grid, po_target_grid, worst_case, GridOptions, GroundMetric, JointPoint,
    MassPoint, TransportInstance, TransportObjective,
};
use robust_policy::robust::{
    ate_bounds, evaluate_criterion, rw_alternative, rw_joint_empirical, rw_po,
    CouplingAssumption,
};
use robust_policy::search::{epsilon_curve, maximize, PolicyClassSpec};
use serde::Serialize;
use std::path::{Path, PathBuf};

/// Command-level failures with their exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Exit code 2.
    Config(String),
    /// Exit code 3.
    Data(String),
    /// Exit code 1: the oracle undercut a closed form.
    DualityViolation(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::DualityViolation(m) => write!(f, "duality violation: {m}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::DualityViolation(_) => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.0)
    }
}

impl From<ReadError> for CliError {
    fn from(e: ReadError) -> Self {
        match e {
            ReadError::Mapping(m) => CliError::Config(m),
            ReadError::Rows(m) => CliError::Data(m),
        }
    }
}

fn config_err<T>(message: impl Into<String>) -> Result<T, CliError> {
    Err(CliError::Config(message.into()))
}

fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn write_or_print(path: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match path {
        Some(p) => data_io::write_atomic(p, bytes).map_err(CliError::from),
        None => {
            let mut stdout = std::io::stdout().lock();
            use std::io::Write;
            stdout.write_all(bytes).map_err(|e| CliError::Config(e.to_string()))?;
            Ok(())
        }
    }
}

fn load_input(config: &RawConfig) -> Result<LoadedData, CliError> {
    let path = config
        .input
        .path
        .as_deref()
        .ok_or_else(|| CliError::Config("input.path is required (or pass --input)".into()))?;
    let bounds = config.bounds.to_bounds()?;
    Ok(data_io::read_dataset(path, &config.columns, bounds)?)
}

fn required_epsilon(config: &RawConfig) -> Result<f64, CliError> {
    config
        .neighborhood
        .epsilon
        .ok_or_else(|| CliError::Config("neighborhood.epsilon is required (or pass --epsilon)".into()))
}

/// Fit whatever the requested coupling needs.
fn build_bundle(
    config: &RawConfig,
    data: &Dataset,
    delta_column: Option<&[f64]>,
    coupling: CouplingAssumption,
) -> Result<EstimatorBundle, CliError> {
    let est = &config.estimators;
    let y0_method = match est.y0.as_deref() {
        None | Some("control-mean") => Y0Method::ControlMean,
        Some("ipw") => {
            let e = est
                .propensity
                .ok_or_else(|| CliError::Config("estimators.propensity required for ipw".into()))?;
            Y0Method::InversePropensity {
                propensity: vec![e; data.len()],
            }
        }
        Some(other) => return config_err(format!("estimators.y0: unknown method '{other}'")),
    };
    let y0_mean = estimate_y0_mean(data, &y0_method).map_err(data_err)?;
    let mut bundle = EstimatorBundle::new(y0_mean);

    let fit_cdfs = || -> Result<Vec<robust_policy::estimators::CdfPair>, CliError> {
        let bandwidth = est
            .bandwidth
            .unwrap_or_else(|| rule_of_thumb_bandwidth(data.len(), data.dim()));
        let grouping = match est.grouping.as_deref() {
            None | Some("x") => CdfGrouping::Covariates,
            Some("x-and-c") => CdfGrouping::CovariatesAndGroup,
            Some(other) => {
                return config_err(format!("estimators.grouping: unknown grouping '{other}'"))
            }
        };
        Ok(fit_conditional_cdfs(data, bandwidth, grouping)
            .map_err(data_err)?
            .pairs)
    };

    match coupling {
        CouplingAssumption::ConstantTreatmentEffects => {
            if let Some(delta) = delta_column {
                bundle = bundle.with_effects(delta.to_vec());
            } else {
                match est.effect.as_deref() {
                    None | Some("regression") => {
                        let basis = match est.basis.as_deref() {
                            None | Some("linear") => Basis::Linear,
                            Some("constant") => Basis::Constant,
                            Some(other) => {
                                return config_err(format!(
                                    "estimators.basis: unknown basis '{other}'"
                                ))
                            }
                        };
                        bundle = bundle
                            .with_delta_fn(fit_delta_regression(data, basis).map_err(data_err)?);
                    }
                    Some("iv") => {
                        let cells: Result<Vec<_>, ConfigError> =
                            est.cells.iter().map(|c| c.to_box()).collect();
                        let cells = cells?;
                        if cells.is_empty() {
                            return config_err("estimators.cells required for the iv effect fit");
                        }
                        bundle =
                            bundle.with_delta_fn(fit_delta_iv(data, &cells).map_err(data_err)?);
                    }
                    Some("column") => {
                        return config_err("estimators.effect = 'column' needs columns.delta")
                    }
                    Some(other) => {
                        return config_err(format!("estimators.effect: unknown source '{other}'"))
                    }
                }
            }
        }
        CouplingAssumption::PerfectPositiveDependence => {
            if let Some(delta) = delta_column {
                bundle = bundle.with_effects(delta.to_vec());
            } else {
                let cdfs = fit_cdfs()?;
                let effects = rank_effects(data, &cdfs).map_err(data_err)?;
                bundle = bundle.with_effects(effects).with_cond_cdfs(cdfs);
            }
        }
        CouplingAssumption::LeastFavorable => {
            if let Some(delta) = delta_column {
                bundle = bundle.with_negative_effects(delta.to_vec());
            } else {
                let cdfs = fit_cdfs()?;
                let effects = negative_rank_effects(data, &cdfs).map_err(data_err)?;
                bundle = bundle.with_negative_effects(effects).with_cond_cdfs(cdfs);
            }
        }
        CouplingAssumption::ConditionalIndependence => {
            bundle = bundle.with_cond_cdfs(fit_cdfs()?);
        }
    }
    Ok(bundle)
}

#[derive(Serialize)]
struct EvaluateReport {
    command: &'static str,
    coupling: &'static str,
    epsilon: f64,
    n: usize,
    rule: String,
    value: f64,
    eta_star: Option<f64>,
    floor_binding: bool,
}

pub fn cmd_evaluate(config: &RawConfig) -> Result<(), CliError> {
    let loaded = load_input(config)?;
    let data = &loaded.dataset;
    let epsilon = required_epsilon(config)?;
    let spec = config.neighborhood.to_spec(epsilon, data.dim())?;
    let coupling = config.coupling.to_coupling()?;
    let rule = config
        .rule
        .as_ref()
        .ok_or_else(|| CliError::Config("a [rule] section is required for evaluate".into()))?
        .to_rule(&config.columns.x)?;
    let bundle = build_bundle(config, data, loaded.delta.as_deref(), coupling)?;
    let result = evaluate_criterion(data, &rule, coupling, &bundle, &spec, data.bounds())
        .map_err(data_err)?;
    let report = EvaluateReport {
        command: "evaluate",
        coupling: coupling.name(),
        epsilon,
        n: data.len(),
        rule: rule.encoding(),
        value: result.value,
        eta_star: result.eta_star,
        floor_binding: result.floor_binding,
    };
    let mut bytes = serde_json::to_vec_pretty(&report).expect("report serializes");
    bytes.push(b'\n');
    write_or_print(config.output.path.as_deref(), &bytes)
}

#[derive(Serialize)]
struct RuleRow {
    rule: String,
    value: f64,
    eta_star: Option<f64>,
    floor_binding: bool,
}

#[derive(Serialize)]
struct SearchReportOut {
    command: &'static str,
    coupling: &'static str,
    epsilon: f64,
    n: usize,
    class_size: usize,
    best_rule: String,
    best_value: f64,
    eta_star: Option<f64>,
    floor_binding: bool,
    optimization_gap: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    per_rule: Option<Vec<RuleRow>>,
}

fn observed_cuts(data: &Dataset, dim: usize, max_cuts: usize) -> Vec<f64> {
    let mut values: Vec<f64> = data.observations().iter().map(|o| o.x[dim]).collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values.dedup();
    if values.len() <= max_cuts {
        return values;
    }
    // Evenly spaced quantile indices over the unique observed values.
    (0..max_cuts)
        .map(|i| values[i * (values.len() - 1) / (max_cuts - 1)])
        .collect()
}

fn resolve_class(config: &RawConfig, data: &Dataset) -> Result<PolicyClassSpec, CliError> {
    let section = config
        .class
        .as_ref()
        .ok_or_else(|| CliError::Config("a [class] section is required".into()))?;
    let observed = |dim: usize, max: usize| observed_cuts(data, dim, max);
    Ok(section.to_class(&config.columns.x, &observed)?)
}

pub fn cmd_search(config: &RawConfig) -> Result<(), CliError> {
    let loaded = load_input(config)?;
    let data = &loaded.dataset;
    let epsilon = required_epsilon(config)?;
    let spec = config.neighborhood.to_spec(epsilon, data.dim())?;
    let coupling = config.coupling.to_coupling()?;
    let class = resolve_class(config, data)?;
    let class_size = class.enumerate().map_err(|e| CliError::Config(e.to_string()))?.len();
    let bundle = build_bundle(config, data, loaded.delta.as_deref(), coupling)?;
    let report = maximize(
        data,
        &class,
        coupling,
        &bundle,
        &spec,
        data.bounds(),
        config.output.per_rule,
    )
    .map_err(data_err)?;
    let out = SearchReportOut {
        command: "search",
        coupling: coupling.name(),
        epsilon,
        n: data.len(),
        class_size,
        best_rule: report.best.rule.encoding(),
        best_value: report.best.result.value,
        eta_star: report.best.result.eta_star,
        floor_binding: report.best.result.floor_binding,
        optimization_gap: report.optimization_gap,
        per_rule: report.per_rule.map(|rows| {
            rows.into_iter()
                .map(|rv| RuleRow {
                    rule: rv.rule.encoding(),
                    value: rv.result.value,
                    eta_star: rv.result.eta_star,
                    floor_binding: rv.result.floor_binding,
                })
                .collect()
        }),
    };
    let mut bytes = serde_json::to_vec_pretty(&out).expect("report serializes");
    bytes.push(b'\n');
    write_or_print(config.output.path.as_deref(), &bytes)
}

pub fn cmd_curve(config: &RawConfig) -> Result<(), CliError> {
    let loaded = load_input(config)?;
    let data = &loaded.dataset;
    let grid = config
        .neighborhood
        .epsilon_grid
        .clone()
        .ok_or_else(|| CliError::Config("neighborhood.epsilon_grid is required for curve".into()))?;
    if grid.is_empty() || grid.windows(2).any(|w| w[0] > w[1]) || grid.iter().any(|&e| e < 0.0) {
        return config_err("neighborhood.epsilon_grid must be sorted ascending and nonnegative");
    }
    let base = config.neighborhood.to_spec(0.0, data.dim())?;
    let coupling = config.coupling.to_coupling()?;
    let class = resolve_class(config, data)?;
    let mut rules = class.enumerate().map_err(|e| CliError::Config(e.to_string()))?;
    match config.curve.rules.as_deref() {
        None | Some("class") => {}
        Some("sample") => {
            let count = config.curve.sample_count.unwrap_or(10).min(rules.len());
            let seed = config.run.seed.unwrap_or(0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rules.shuffle(&mut rng);
            rules.truncate(count);
            // Stable presentation order regardless of the draw order.
            rules.sort_by_key(|r| r.encoding());
        }
        Some(other) => return config_err(format!("curve.rules: unknown mode '{other}'")),
    }
    let bundle = build_bundle(config, data, loaded.delta.as_deref(), coupling)?;
    let rows = epsilon_curve(data, &rules, coupling, &bundle, &base, data.bounds(), &grid)
        .map_err(data_err)?;

    let mut csv = String::from("rule_id,epsilon,value\n");
    for row in &rows {
        csv.push_str(&format!("{},{},{}\n", row.rule_id, row.epsilon, row.value));
    }
    write_or_print(config.output.path.as_deref(), csv.as_bytes())?;

    // Human-readable legend for the rule ids.
    if config.output.path.is_some() {
        let legend: Vec<String> = rules.iter().map(PolicyRule::encoding).collect();
        println!(
            "{}",
            serde_json::json!({ "command": "curve", "rules": legend })
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct OracleReport {
    command: &'static str,
    criterion: String,
    closed_form: f64,
    oracle: f64,
    gap: f64,
    weak_duality_ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    warning: Option<String>,
}

pub fn cmd_oracle_check(config: &RawConfig) -> Result<(), CliError> {
    let section: &OracleCheckSection = config
        .oracle_check
        .as_ref()
        .ok_or_else(|| CliError::Config("an [oracle_check] section is required".into()))?;
    if section.atoms.len() > 50 {
        return config_err(format!(
            "oracle-check instances are capped at 50 atoms, got {}",
            section.atoms.len()
        ));
    }
    if section.atoms.is_empty() {
        return config_err("oracle_check.atoms must be nonempty");
    }
    let mass: f64 = section.atoms.iter().map(|a| a.mass).sum();
    if (mass - 1.0).abs() > 1e-9 {
        return config_err(format!("atom masses must sum to one, got {mass}"));
    }
    let bounds = config.bounds.to_bounds()?;
    let epsilon = section.epsilon;
    if epsilon < 0.0 {
        return config_err("oracle_check.epsilon must be nonnegative");
    }
    let atoms: Vec<MassPoint> = section
        .atoms
        .iter()
        .map(|a| MassPoint::new(JointPoint::new(a.x.clone(), a.y0, a.y1), a.mass))
        .collect();
    let dim = atoms[0].point.x.len();
    let steps = section.steps.unwrap_or(12);
    let opts = GridOptions {
        shift_steps: steps,
        overshoot: 1e-9,
        max_shift: section.max_shift,
    };

    let rule = || -> Result<PolicyRule, CliError> {
        config
            .rule
            .as_ref()
            .ok_or_else(|| CliError::Config("a [rule] section is required for this check".into()))?
            .to_rule(&config.columns.x.clone())
            .map_err(CliError::from)
    };
    // Rule dims may exceed named columns when atoms carry raw coordinates;
    // fall back to x1..xk names.
    let x_names: Vec<String> = if config.columns.x.is_empty() {
        (1..=dim).map(|i| format!("x{i}")).collect()
    } else {
        config.columns.x.clone()
    };
    let named_rule = || -> Result<PolicyRule, CliError> {
        config
            .rule
            .as_ref()
            .ok_or_else(|| CliError::Config("a [rule] section is required for this check".into()))?
            .to_rule(&x_names)
            .map_err(CliError::from)
    };
    let _ = rule;

    let (closed_form, oracle_value) = match section.criterion.as_str() {
        "po" => {
            let rule = named_rule()?;
            let mut welfare = 0.0;
            for a in &atoms {
                let treated = evaluate_rule(&rule, &a.point.x).map_err(data_err)?;
                welfare += a.mass * if treated { a.point.y1 } else { a.point.y0 };
            }
            let order = config.neighborhood.order.unwrap_or(1);
            let spec = match order {
                1 => NeighborhoodSpec::po_only(epsilon),
                2 => NeighborhoodSpec::po_only_order2(epsilon),
                other => return config_err(format!("order must be 1 or 2, got {other}")),
            }
            .map_err(|e| CliError::Config(e.to_string()))?;
            let closed = rw_po(welfare, &spec, &bounds).map_err(data_err)?.value;
            let objective = TransportObjective::Welfare(rule);
            let targets =
                po_target_grid(&atoms, &objective, epsilon, &bounds, opts).map_err(data_err)?;
            let metric = if order == 2 {
                GroundMetric::OutcomeShiftL2
            } else {
                GroundMetric::OutcomeShift
            };
            let wc = worst_case(&TransportInstance {
                sources: atoms.clone(),
                targets,
                metric,
                objective,
                order,
                budget: epsilon,
            })
            .map_err(data_err)?;
            (closed, wc.value)
        }
        "ate" => {
            let ate: f64 = atoms
                .iter()
                .map(|a| a.mass * (a.point.y1 - a.point.y0))
                .sum();
            let spec = NeighborhoodSpec::po_only(epsilon)
                .map_err(|e| CliError::Config(e.to_string()))?;
            let (lower, _) = ate_bounds(ate, &spec, &bounds);
            let objective = TransportObjective::TreatmentEffect;
            let targets =
                po_target_grid(&atoms, &objective, epsilon, &bounds, opts).map_err(data_err)?;
            let wc = worst_case(&TransportInstance {
                sources: atoms.clone(),
                targets,
                metric: GroundMetric::OutcomeShift,
                objective,
                order: 1,
                budget: epsilon,
            })
            .map_err(data_err)?;
            (lower, wc.value)
        }
        "alternative" => {
            let rule = named_rule()?;
            let mut e_y1_tau = 0.0;
            let mut e_y0 = 0.0;
            let mut e_tau = 0.0;
            for a in &atoms {
                let treated = evaluate_rule(&rule, &a.point.x).map_err(data_err)?;
                if treated {
                    e_y1_tau += a.mass * a.point.y1;
                    e_tau += a.mass;
                }
                e_y0 += a.mass * a.point.y0;
            }
            let spec = NeighborhoodSpec::po_only(epsilon)
                .map_err(|e| CliError::Config(e.to_string()))?;
            let closed = rw_alternative(e_y1_tau, e_y0, e_tau, &spec, &bounds)
                .map_err(data_err)?
                .value;
            let objective = TransportObjective::WelfareVersusUntreated(rule);
            let targets =
                po_target_grid(&atoms, &objective, epsilon, &bounds, opts).map_err(data_err)?;
            let wc = worst_case(&TransportInstance {
                sources: atoms.clone(),
                targets,
                metric: GroundMetric::OutcomeShift,
                objective,
                order: 1,
                budget: epsilon,
            })
            .map_err(data_err)?;
            (closed, wc.value)
        }
        "joint" => {
            let rule = named_rule()?;
            let scale = config
                .neighborhood
                .covariate_scale
                .clone()
                .unwrap_or_else(|| vec![1.0; dim]);
            let observations: Vec<Observation> = atoms
                .iter()
                .map(|a| {
                    let treated = evaluate_rule(&rule, &a.point.x)?;
                    let y = if treated { a.point.y1 } else { a.point.y0 };
                    Ok(Observation::new(a.point.x.clone(), y, treated).with_weight(a.mass))
                })
                .collect::<Result<_, robust_policy::model::ModelError>>()
                .map_err(data_err)?;
            let data = Dataset::new(observations, bounds).map_err(data_err)?;
            let effects: Vec<f64> = atoms.iter().map(|a| a.point.y1 - a.point.y0).collect();
            let y0_mean: f64 = atoms.iter().map(|a| a.mass * a.point.y0).sum();
            let bundle = EstimatorBundle::new(y0_mean).with_effects(effects);
            let spec = NeighborhoodSpec::new(
                epsilon,
                ShiftKind::PotentialOutcomesAndCovariates,
                robust_policy::model::MetricOrder::One,
                scale.clone(),
            )
            .map_err(|e| CliError::Config(e.to_string()))?;
            let closed = rw_joint_empirical(
                &data,
                &rule,
                CouplingAssumption::ConstantTreatmentEffects,
                &bundle,
                &spec,
                &bounds,
            )
            .map_err(data_err)?
            .value;
            let targets = joint_target_grid(&atoms, &rule, &scale, epsilon, &bounds, opts)
                .map_err(data_err)?;
            let wc = worst_case(&TransportInstance {
                sources: atoms.clone(),
                targets,
                metric: GroundMetric::Joint { scale },
                objective: TransportObjective::Welfare(rule),
                order: 1,
                budget: epsilon,
            })
            .map_err(data_err)?;
            (closed, wc.value)
        }
        other => return config_err(format!("oracle_check.criterion: unknown '{other}'")),
    };

    let gap = oracle_value - closed_form;
    let weak_duality_ok = gap >= -1e-7;
    let warning = (weak_duality_ok && gap > 1e-6).then(|| {
        format!("grid is coarse: oracle exceeds the closed form by {gap:.3e}")
    });
    let report = OracleReport {
        command: "oracle-check",
        criterion: section.criterion.clone(),
        closed_form,
        oracle: oracle_value,
        gap,
        weak_duality_ok,
        warning,
    };
    let mut bytes = serde_json::to_vec_pretty(&report).expect("report serializes");
    bytes.push(b'\n');
    write_or_print(config.output.path.as_deref(), &bytes)?;
    if !weak_duality_ok {
        return Err(CliError::DualityViolation(format!(
            "oracle {oracle_value} fell below the closed form {closed_form}"
        )));
    }
    Ok(())
}

pub fn cmd_generate(config: &RawConfig) -> Result<(), CliError> {
    let section = config
        .generate
        .as_ref()
        .ok_or_else(|| CliError::Config("a [generate] section is required".into()))?;
    let bounds = config.bounds.to_bounds()?;
    let spec = section.to_spec(bounds)?;
    let seed = config.run.seed.unwrap_or(0);
    let (data, truth) =
        datagen::generate(&spec, section.n, seed).map_err(|e| CliError::Config(e.to_string()))?;
    let x_names: Vec<String> = if config.columns.x.is_empty() {
        (1..=data.dim()).map(|i| format!("x{i}")).collect()
    } else {
        config.columns.x.clone()
    };
    let out_path: &PathBuf = config
        .output
        .path
        .as_ref()
        .ok_or_else(|| CliError::Config("output.path is required for generate".into()))?;
    data_io::write_atomic(out_path, data_io::dataset_to_csv(&data, &x_names).as_bytes())?;
    if let Some(truth_path) = &config.output.truth_path {
        data_io::write_atomic(truth_path, data_io::truth_to_csv(&truth).as_bytes())?;
    }
    println!(
        "{}",
        serde_json::json!({ "command": "generate", "n": data.len(), "e_y0": truth.e_y0 })
    );
    Ok(())
}
