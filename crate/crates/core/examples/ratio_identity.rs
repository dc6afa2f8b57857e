// In the sampled data the fitted ratio q(x)/p(x) recovers the cohort ratio
// Pr[P=0|X=x] / Pr[S=1|X=x], even though the non-randomized rows of the
// non-nested part were never observed.
//
// cargo run --release --example ratio_identity

use std::error::Error;

use partnest::data::{FeatureSet, OutcomeKind};
use partnest::estimators::{fit_nuisances, NuisanceConfig, PartModel};
use partnest::rng::{stream, Purpose};
use partnest::simulation::{generate_full_nested, induce_partial_nesting, Scenario, ScenarioLabel};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let mut scenario = Scenario::standard(ScenarioLabel::NoEm, OutcomeKind::Binary);
    scenario.n_total = 50_000;
    let cohort = generate_full_nested(&scenario, &mut stream(8, Purpose::Cohort, 0));
    let data = induce_partial_nesting(&cohort);
    println!("cohort of {} reduced to {} sampled rows", cohort.rows.len(), data.len());

    // logit Pr[P=0 | X, sampled] is not linear in x here, so allow curvature
    let config = NuisanceConfig {
        part_features: FeatureSet::Quadratic,
        ..NuisanceConfig::default()
    };
    let nuisances = fit_nuisances(&data, &config)?;
    let PartModel::Fitted(part) = &nuisances.part else {
        return Err("expected rows from both parts".into());
    };

    println!("{:>24} {:>9} {:>9}", "x", "fitted", "cohort");
    let mut buf = Vec::new();
    for x in [[0.0, 0.0, 0.0], [0.3, -0.2, 0.1], [-0.4, 0.4, 0.0], [0.5, 0.5, -0.5]] {
        let fitted = part.predict(&x, &mut buf) / nuisances.participation.predict(&x, &mut buf);
        let cohort_ratio = (1.0 - scenario.part_prob) / scenario.participation_prob(&x);
        println!("{:>24} {:>9.4} {:>9.4}", format!("{x:?}"), fitted, cohort_ratio);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
