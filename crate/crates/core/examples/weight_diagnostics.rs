// Weight diagnostics under good overlap and under selection strong enough
// to threaten positivity.
//
// cargo run --release --example weight_diagnostics

use std::error::Error;

use partnest::cli::diagnostics_text;
use partnest::data::OutcomeKind;
use partnest::estimators::{fit_nuisances, weight_diagnostic, NuisanceConfig};
use partnest::simulation::{simulate_dataset, Scenario, ScenarioLabel};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let standard = Scenario::standard(ScenarioLabel::NoEm, OutcomeKind::Binary);
    let mut extreme = standard.clone();
    extreme.selection_beta = vec![-0.471, 2.0, 2.0, 2.0];

    for (name, scenario) in [("standard selection", standard), ("strong selection", extreme)] {
        let data = simulate_dataset(&scenario, 3, 0);
        let nuisances = fit_nuisances(&data, &NuisanceConfig::default())?;
        let d = weight_diagnostic(&data, &nuisances);
        println!("== {name} (any flag: {})", d.any_flag());
        print!("{}", diagnostics_text(&d));
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
