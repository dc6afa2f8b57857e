// The augmented estimator stays centred when either the outcome model or
// the participation model is wrong, while the estimator relying on the
// wrong model drifts.
//
// cargo run --release --example double_robustness [runs]

use std::error::Error;

use partnest::data::{FeatureSet, OutcomeKind};
use partnest::estimators::{Estimand, EstimatorKind, NuisanceConfig};
use partnest::simulation::{run_replications, ReplicationConfig, Scenario, ScenarioLabel};

pub fn run_example_with(runs: usize) -> Result<(), Box<dyn Error>> {
    let scenario = Scenario::standard(ScenarioLabel::NoEm, OutcomeKind::Binary);
    let settings = [
        ("all models correct", NuisanceConfig::default()),
        (
            "outcome model omits x3",
            NuisanceConfig {
                outcome_features: FeatureSet::Columns(vec![0, 1]),
                ..NuisanceConfig::default()
            },
        ),
        (
            "participation model has no covariates",
            NuisanceConfig {
                participation_features: FeatureSet::InterceptOnly,
                ..NuisanceConfig::default()
            },
        ),
    ];
    println!("scaled bias of E[Y^0|P=0] over {runs} runs");
    println!("{:<40} {:>7} {:>7} {:>7}", "setting", "g", "w", "aug");
    for (name, nuisances) in settings {
        let config = ReplicationConfig {
            nuisances,
            truth_draws: 1_000_000,
            ..ReplicationConfig::new(runs, 0, 17)
        };
        let report = run_replications(&scenario, &config)?;
        let bias = |k| report.cell(k, Estimand::Psi0).scaled_bias;
        println!(
            "{:<40} {:>7.3} {:>7.3} {:>7.3}",
            name,
            bias(EstimatorKind::GFormula),
            bias(EstimatorKind::Weighting),
            bias(EstimatorKind::Augmented)
        );
    }
    Ok(())
}

pub fn run_example() -> Result<(), Box<dyn Error>> {
    run_example_with(100)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    let runs = std::env::args().nth(1).map_or(Ok(300), |s| s.parse())?;
    run_example_with(runs)
}
