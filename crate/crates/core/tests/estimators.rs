mod common;

use common::{binary_covariate_fixture, stratified_oracle};
use partnest::data::{Arm, Observation, OutcomeKind, Part, PartialNestDataset};
use partnest::estimators::{
    estimate_augmented, estimate_g_formula, estimate_points, estimate_trial_only,
    estimate_weighting, fit_nuisances, part_exchangeability_test, weight_diagnostic,
    EstimationError, EstimatorKind, NuisanceConfig, TreatmentSpec,
};
use partnest::glm::IrlsOptions;
use partnest::simulation::{simulate_dataset, Scenario, ScenarioLabel};

fn tight() -> NuisanceConfig {
    NuisanceConfig {
        irls: IrlsOptions {
            tolerance: 1e-13,
            ..IrlsOptions::default()
        },
        ..NuisanceConfig::default()
    }
}

#[test]
fn saturated_models_make_all_estimators_agree_with_stratification() {
    let data = binary_covariate_fixture();
    let ns = fit_nuisances(&data, &tight()).unwrap();
    for arm in Arm::BOTH {
        let oracle = stratified_oracle(&data, arm);
        let g = estimate_g_formula(&data, &ns, arm).unwrap();
        let w = estimate_weighting(&data, &ns, arm).unwrap();
        let aug = estimate_augmented(&data, &ns, arm).unwrap();
        for v in [g, w, aug] {
            assert!((v - oracle).abs() < 1e-10, "{arm}: {v} vs {oracle}");
        }
    }
}

#[test]
fn stratified_oracle_by_hand() {
    // x = 0: 6 of 11 target rows; x = 1: 5 of 11.
    // control means: x = 0 -> 2/3, x = 1 -> 1/3
    // treated means: x = 0 -> 2/3, x = 1 -> 3/4
    let data = binary_covariate_fixture();
    let psi0 = 6.0 / 11.0 * 2.0 / 3.0 + 5.0 / 11.0 * 1.0 / 3.0;
    let psi1 = 6.0 / 11.0 * 2.0 / 3.0 + 5.0 / 11.0 * 3.0 / 4.0;
    assert!((stratified_oracle(&data, Arm::Control) - psi0).abs() < 1e-15);
    assert!((stratified_oracle(&data, Arm::Treated) - psi1).abs() < 1e-15);

    let ns = fit_nuisances(&data, &tight()).unwrap();
    // trial-only standardizes to the 13 trial rows: 6 with x = 0, 7 with x = 1
    let trial0 = 6.0 / 13.0 * 2.0 / 3.0 + 7.0 / 13.0 * 1.0 / 3.0;
    assert!((estimate_trial_only(&data, &ns, Arm::Control).unwrap() - trial0).abs() < 1e-10);
}

#[test]
fn point_estimates_are_consistent_across_entry_points() {
    let data = simulate_dataset(&Scenario::standard(ScenarioLabel::ModerateEm, OutcomeKind::Binary), 3, 0);
    let ns = fit_nuisances(&data, &NuisanceConfig::default()).unwrap();
    let points = estimate_points(&data, &ns, &EstimatorKind::ALL).unwrap();
    for p in points {
        let single = |arm| match p.kind {
            EstimatorKind::TrialOnly => estimate_trial_only(&data, &ns, arm),
            EstimatorKind::GFormula => estimate_g_formula(&data, &ns, arm),
            EstimatorKind::Weighting => estimate_weighting(&data, &ns, arm),
            EstimatorKind::Augmented => estimate_augmented(&data, &ns, arm),
        }
        .unwrap();
        assert_eq!(p.psi0, single(Arm::Control));
        assert_eq!(p.psi1, single(Arm::Treated));
        assert_eq!(p.ate, p.psi1 - p.psi0);
    }
}

#[test]
fn known_treatment_probability_changes_only_the_weights() {
    let data = simulate_dataset(&Scenario::standard(ScenarioLabel::NoEm, OutcomeKind::Binary), 4, 0);
    let known = NuisanceConfig {
        treatment: TreatmentSpec::Known(0.5),
        ..NuisanceConfig::default()
    };
    let a = fit_nuisances(&data, &NuisanceConfig::default()).unwrap();
    let b = fit_nuisances(&data, &known).unwrap();
    assert_eq!(
        estimate_g_formula(&data, &a, Arm::Treated).unwrap(),
        estimate_g_formula(&data, &b, Arm::Treated).unwrap()
    );
    let wa = estimate_weighting(&data, &a, Arm::Treated).unwrap();
    let wb = estimate_weighting(&data, &b, Arm::Treated).unwrap();
    assert!(wa != wb && (wa - wb).abs() < 0.15, "{wa} {wb}");
}

#[test]
fn normalized_weighting_is_exact_for_constant_outcomes() {
    let data = simulate_dataset(&Scenario::standard(ScenarioLabel::NoEm, OutcomeKind::Continuous), 5, 0);
    let constant = data.map_outcomes(|_| 2.5).unwrap();
    let config = NuisanceConfig {
        normalized_weights: true,
        ..NuisanceConfig::default()
    };
    let ns = fit_nuisances(&constant, &config).unwrap();
    for arm in Arm::BOTH {
        assert!((estimate_weighting(&constant, &ns, arm).unwrap() - 2.5).abs() < 1e-12);
    }
}

#[test]
fn estimation_errors_surface() {
    // trial rows only in the nested part, and only one arm
    let obs = vec![
        Observation::randomized(vec![0.1], Part::Nested, Arm::Treated, 1.0),
        Observation::randomized(vec![0.2], Part::Nested, Arm::Treated, 0.0),
        Observation::non_randomized(vec![0.3]),
    ];
    let data = PartialNestDataset::new(obs, vec!["x".into()], OutcomeKind::Binary).unwrap();
    assert!(matches!(
        fit_nuisances(&data, &NuisanceConfig::default()),
        Err(EstimationError::EmptyNuisanceSubset { .. })
    ));
    assert!(matches!(part_exchangeability_test(&data), Err(EstimationError::OnePartOnly)));
}

fn shift_nonnested(data: &PartialNestDataset, shift: f64) -> PartialNestDataset {
    let obs = data
        .observations()
        .iter()
        .cloned()
        .map(|mut o| {
            if o.part == Part::NonNested {
                o.y = o.y.map(|y| y + shift);
            }
            o
        })
        .collect();
    PartialNestDataset::new(obs, data.covariate_names().to_vec(), data.outcome_kind()).unwrap()
}

#[test]
fn exchangeability_test_size_and_power() {
    let scenario = Scenario::standard(ScenarioLabel::NoEm, OutcomeKind::Continuous);
    let runs = 400;
    let mut rejected_null = 0;
    let mut rejected_alt = 0;
    for run in 0..runs {
        let data = simulate_dataset(&scenario, 77, run);
        if part_exchangeability_test(&data).unwrap().p_value < 0.05 {
            rejected_null += 1;
        }
        let shifted = shift_nonnested(&data, 0.5);
        if part_exchangeability_test(&shifted).unwrap().p_value < 0.05 {
            rejected_alt += 1;
        }
    }
    let size = rejected_null as f64 / runs as f64;
    let power = rejected_alt as f64 / runs as f64;
    // binomial SE of the size estimate is about 0.011
    assert!((0.02..=0.085).contains(&size), "size {size}");
    assert!(power > 0.8, "power {power}");
}

#[test]
fn diagnostic_ratio_near_one_under_correct_models() {
    let scenario = Scenario::standard(ScenarioLabel::NoEm, OutcomeKind::Binary);
    for run in 0..20 {
        let data = simulate_dataset(&scenario, 8, run);
        let ns = fit_nuisances(&data, &NuisanceConfig::default()).unwrap();
        let d = weight_diagnostic(&data, &ns);
        assert!((0.85..=1.15).contains(&d.weight_sum_ratio), "{}", d.weight_sum_ratio);
        assert!(!d.low_participation_flag);
        assert!(d.part_exchangeability.is_some());
        let p = d.participation_prob_percentiles;
        assert!(p.windows(2).all(|w| w[0].1 <= w[1].1));
        assert!(d.min_participation_prob <= p[0].1);
    }
}

#[test]
fn positivity_flag_under_extreme_selection() {
    let mut scenario = Scenario::standard(ScenarioLabel::NoEm, OutcomeKind::Binary);
    scenario.selection_beta = vec![-0.471, 2.0, 2.0, 2.0];
    let data = simulate_dataset(&scenario, 9, 0);
    let ns = fit_nuisances(&data, &NuisanceConfig::default()).unwrap();
    let d = weight_diagnostic(&data, &ns);
    assert!(d.low_participation_flag);
    assert!(d.any_flag());
}
