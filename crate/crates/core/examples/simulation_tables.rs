// Bias, SD and coverage tables for the three effect-modification scenarios.
// Defaults are small; pass `runs` and `bootstrap replicates` for a full study.
//
// cargo run --release --example simulation_tables [runs] [boot]

use std::error::Error;

use partnest::data::OutcomeKind;
use partnest::simulation::{render_tables, run_replications, ReplicationConfig, Scenario, ScenarioLabel};

pub fn run_example_with(runs: usize, boot: usize) -> Result<(), Box<dyn Error>> {
    let reports = ScenarioLabel::ALL
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            let config = ReplicationConfig {
                truth_draws: 1_000_000,
                ..ReplicationConfig::new(runs, boot, 100 + i as u64)
            };
            run_replications(&Scenario::standard(label, OutcomeKind::Binary), &config)
        })
        .collect::<Result<Vec<_>, _>>()?;
    print!("{}", render_tables(&reports));
    Ok(())
}

pub fn run_example() -> Result<(), Box<dyn Error>> {
    run_example_with(30, 0)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    let mut args = std::env::args().skip(1);
    let runs = args.next().map_or(Ok(200), |s| s.parse())?;
    let boot = args.next().map_or(Ok(0), |s| s.parse())?;
    run_example_with(runs, boot)
}
