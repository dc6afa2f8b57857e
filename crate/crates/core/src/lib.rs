//! Estimators of treatment-specific mean outcomes and average treatment
//! effects in the population underlying the nested part of a partially nested
//! randomized trial design.
//!
//! The crate provides
//!
//! * [`data`]: observations, validated datasets and CSV ingestion;
//! * [`glm`]: logistic (IRLS) and linear nuisance regressions;
//! * [`estimators`]: trial-only, g-formula, weighting and augmented
//!   weighting estimators with weight diagnostics;
//! * [`inference`]: stacked estimating equations (sandwich) and bootstrap;
//! * [`simulation`]: the replication study harness;
//! * [`cli`]: the `partnest` command-line front end.
//!
//! ```
//! use partnest::estimators::{fit_nuisances, estimate_points, EstimatorKind, NuisanceConfig};
//! use partnest::simulation::{simulate_dataset, Scenario, ScenarioLabel};
//! use partnest::data::OutcomeKind;
//!
//! let scenario = Scenario::standard(ScenarioLabel::NoEm, OutcomeKind::Binary);
//! let data = simulate_dataset(&scenario, 7, 0);
//! let nuisances = fit_nuisances(&data, &NuisanceConfig::default()).unwrap();
//! let points = estimate_points(&data, &nuisances, &EstimatorKind::PROPOSED).unwrap();
//! assert_eq!(points.len(), 3);
//! ```

pub mod cli;
pub mod data;
pub mod estimators;
pub mod glm;
pub mod inference;
pub mod rng;
pub mod simulation;
pub mod stats;

pub use data::{Arm, Observation, OutcomeKind, Part, PartialNestDataset};
pub use estimators::{EstimateReport, Estimand, EstimatorKind, NuisanceConfig, NuisanceSet};
pub use glm::FittedModel;
pub use inference::{IntervalEstimate, StackedSystem};
pub use simulation::{Scenario, ScenarioLabel, SimulationReport};
