//! Distributionally robust treatment rules over Wasserstein neighborhoods.
//!
//! The library evaluates worst-case social welfare when the target
//! population may differ from the experimental one — in the distribution of
//! potential outcomes alone, or jointly in outcomes and covariates — and
//! searches policy classes for rules that maximize the worst case.
//!
//! Module map:
//!
//! * [`model`] — datasets, policy rules, neighborhoods, plain welfare;
//! * [`geometry`] — distances from covariates to treatment/non-treatment
//!   regions per rule class;
//! * [`lp`] — dense two-phase simplex (Bland's rule);
//! * [`eta`] — the inner concave piecewise-linear maximization;
//! * [`estimators`] — treatment-effect and conditional-CDF nuisance fits;
//! * [`robust`] — the closed-form and empirical robust welfare criteria;
//! * [`oracle`] — brute-force optimal-transport adversary for verifying
//!   every closed form on discrete instances;
//! * [`search`] — exhaustive policy search and ε-curves;
//! * [`datagen`] — synthetic data with known ground truth.

pub mod datagen;
pub mod estimators;
pub mod eta;
pub mod geometry;
pub mod lp;
pub mod model;
pub mod oracle;
pub mod robust;
pub mod search;

pub use geometry::{box_distance, distance_profile, Dist, DistanceProfile};
pub use model::{
    evaluate_rule, sample_welfare, BoxRegion, CriterionResult, Dataset, MetricOrder, ModelError,
    NeighborhoodSpec, Observation, PolicyRule, ShiftKind, Sign, SupportBounds, ThresholdTerm,
};
