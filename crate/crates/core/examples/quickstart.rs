// Simulate one partially nested study, fit the nuisance models and print
// all four estimators with sandwich intervals.
//
// cargo run --release --example quickstart

use std::error::Error;

use partnest::data::OutcomeKind;
use partnest::estimators::{estimate_points, fit_nuisances, Estimand, EstimatorKind, NuisanceConfig};
use partnest::inference::sandwich_intervals;
use partnest::simulation::{simulate_dataset, Scenario, ScenarioLabel};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let scenario = Scenario::standard(ScenarioLabel::ModerateEm, OutcomeKind::Binary);
    let data = simulate_dataset(&scenario, 2024, 0);
    println!(
        "{} rows: {} in the nested part, {} randomized",
        data.len(),
        data.n0(),
        data.n_trial()
    );

    let nuisances = fit_nuisances(&data, &NuisanceConfig::default())?;
    for point in estimate_points(&data, &nuisances, &EstimatorKind::ALL)? {
        let ci = sandwich_intervals(&data, &nuisances, point.kind)?;
        for e in Estimand::ALL {
            let iv = ci[e.index()];
            println!(
                "{:>5} {:<12} {:.4}  95% CI [{:.4}, {:.4}]",
                point.kind.label(),
                e.label(),
                point.get(e),
                iv.lower,
                iv.upper
            );
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
