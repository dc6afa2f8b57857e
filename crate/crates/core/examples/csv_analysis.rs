// Round trip through the CSV format: write a dataset, read it back with
// explicit covariate columns and run the same analysis as `partnest analyze`.
//
// cargo run --release --example csv_analysis

use std::error::Error;

use partnest::cli::{analyze, AnalyzeArgs, InferenceChoice, InputArgs};
use partnest::data::{parse_csv, OutcomeKind};
use partnest::estimators::EstimatorKind;
use partnest::simulation::{simulate_dataset, Scenario, ScenarioLabel};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let dir = std::env::temp_dir().join(format!("partnest-csv-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("study.csv");

    let scenario = Scenario::standard(ScenarioLabel::NoEm, OutcomeKind::Binary);
    simulate_dataset(&scenario, 5, 0).save_csv(&path)?;
    let text = std::fs::read_to_string(&path)?;
    println!("first lines of {}:", path.display());
    for line in text.lines().take(4) {
        println!("  {line}");
    }

    let data = parse_csv(&path, &["x1", "x2", "x3"], OutcomeKind::Binary)?;
    println!("parsed {} rows with covariates {:?}", data.len(), data.covariate_names());

    let args = AnalyzeArgs {
        input: InputArgs {
            input: path.clone(),
            covariates: None,
            outcome: None,
            known_treat_prob: None,
            normalized_weights: false,
            out: Some(dir.join("out")),
        },
        estimators: vec![EstimatorKind::GFormula, EstimatorKind::Augmented],
        inference: InferenceChoice::Sandwich,
        boot: 0,
        seed: None,
        stratified_boot: false,
    };
    let output = analyze(&args)?;
    print!("{}", output.text);
    println!("wrote {}", dir.join("out").join("analysis.csv").display());
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
