// Compare sandwich standard errors from the stacked estimating equations
// with pooled and part-stratified bootstrap standard errors.
//
// cargo run --release --example sandwich_vs_bootstrap

use std::error::Error;

use partnest::data::OutcomeKind;
use partnest::estimators::{fit_nuisances, Estimand, EstimatorKind, NuisanceConfig};
use partnest::inference::{bootstrap_with_fit, build_stack, sandwich_intervals, BootstrapOptions};
use partnest::simulation::{simulate_dataset, Scenario, ScenarioLabel};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let scenario = Scenario::standard(ScenarioLabel::StrongEm, OutcomeKind::Binary);
    let data = simulate_dataset(&scenario, 11, 0);
    let config = NuisanceConfig::default();
    let nuisances = fit_nuisances(&data, &config)?;

    let system = build_stack(&data, &nuisances, EstimatorKind::Augmented)?;
    println!("augmented stack has {} parameters:", system.dim());
    for block in &system.layout {
        println!("  {:<14} {:?}", block.name, block.range);
    }

    let kinds = EstimatorKind::PROPOSED;
    let pooled = bootstrap_with_fit(&data, &config, &nuisances, &kinds, &BootstrapOptions::new(300, 1))?;
    let stratified_options = BootstrapOptions {
        stratified: true,
        ..BootstrapOptions::new(300, 1)
    };
    let stratified = bootstrap_with_fit(&data, &config, &nuisances, &kinds, &stratified_options)?;

    println!("{:>5} {:<12} {:>9} {:>9} {:>9}", "est", "estimand", "sandwich", "boot", "strat");
    for ((kind, p), s) in kinds.iter().zip(&pooled).zip(&stratified) {
        let sw = sandwich_intervals(&data, &nuisances, *kind)?;
        for e in Estimand::ALL {
            let i = e.index();
            println!(
                "{:>5} {:<12} {:>9.5} {:>9.5} {:>9.5}",
                kind.label(),
                e.label(),
                sw[i].se,
                p.normal[i].se,
                s.normal[i].se
            );
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
