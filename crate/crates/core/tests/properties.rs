use partnest::data::{read_csv, Arm, Observation, OutcomeKind, Part, PartialNestDataset};
use partnest::estimators::{estimate_points, fit_nuisances, EstimatorKind, NuisanceConfig};
use partnest::glm::{fit_logistic, fit_logistic_with, logistic_log_likelihood, IrlsOptions};
use partnest::simulation::{simulate_dataset, Scenario, ScenarioLabel};
use proptest::prelude::*;

fn observation() -> impl Strategy<Value = Observation> {
    (
        prop::collection::vec(-5.0..5.0f64, 2),
        0u8..3,
        any::<bool>(),
        any::<bool>(),
    )
        .prop_map(|(x, kind, treated, y)| {
            let arm = if treated { Arm::Treated } else { Arm::Control };
            let y = f64::from(u8::from(y));
            match kind {
                0 => Observation::non_randomized(x),
                1 => Observation::randomized(x, Part::Nested, arm, y),
                _ => Observation::randomized(x, Part::NonNested, arm, y),
            }
        })
}

fn dataset() -> impl Strategy<Value = PartialNestDataset> {
    prop::collection::vec(observation(), 1..40).prop_map(|obs| {
        PartialNestDataset::new(obs, vec!["x1".into(), "x2".into()], OutcomeKind::Binary).unwrap()
    })
}

fn simulated(seed: u64, kind: OutcomeKind) -> PartialNestDataset {
    simulate_dataset(&Scenario::standard(ScenarioLabel::ModerateEm, kind), seed, 0)
}

fn rebuild(data: &PartialNestDataset, obs: Vec<Observation>) -> PartialNestDataset {
    PartialNestDataset::new(obs, data.covariate_names().to_vec(), data.outcome_kind()).unwrap()
}

fn all_points(data: &PartialNestDataset, config: &NuisanceConfig) -> Vec<[f64; 3]> {
    let ns = fit_nuisances(data, config).unwrap();
    estimate_points(data, &ns, &EstimatorKind::ALL)
        .unwrap()
        .iter()
        .map(|p| p.values())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trip(data in dataset()) {
        let text = data.to_csv_string();
        let back = read_csv(text.as_bytes(), &["x1", "x2"], OutcomeKind::Binary).unwrap();
        prop_assert_eq!(back, data);
    }

    #[test]
    fn rows_partition_into_three_groups(data in dataset()) {
        let obs = data.observations();
        let target_trial = obs.iter().filter(|o| o.part == Part::Nested && o.in_trial).count();
        let target_only = obs.iter().filter(|o| o.part == Part::Nested && !o.in_trial).count();
        let other_trial = obs.iter().filter(|o| o.part == Part::NonNested && o.in_trial).count();
        prop_assert_eq!(target_trial + target_only + other_trial, data.len());
        prop_assert_eq!(target_trial + target_only, data.n0());
        prop_assert_eq!(other_trial, data.n1());
        prop_assert_eq!(target_trial + other_trial, data.n_trial());
        prop_assert!(obs.iter().all(|o| o.in_trial == o.arm.is_some()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn estimates_ignore_row_order(seed in 0u64..1000, shift in 1usize..500) {
        let data = simulated(seed, OutcomeKind::Binary);
        let mut obs = data.observations().to_vec();
        let k = shift % obs.len();
        obs.rotate_left(k);
        obs.reverse();
        let permuted = rebuild(&data, obs);
        let config = NuisanceConfig::default();
        for (a, b) in all_points(&data, &config).iter().zip(all_points(&permuted, &config)) {
            for (u, v) in a.iter().zip(b) {
                prop_assert!((u - v).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn outcome_shift_moves_means_not_contrasts(seed in 0u64..1000, c in -5.0..5.0f64) {
        let data = simulated(seed, OutcomeKind::Continuous);
        let shifted = data.map_outcomes(|y| y + c).unwrap();
        let config = NuisanceConfig { normalized_weights: true, ..NuisanceConfig::default() };
        let before = all_points(&data, &config);
        let after = all_points(&shifted, &config);
        for (b, a) in before.iter().zip(&after) {
            prop_assert!((a[0] - b[0] - c).abs() < 1e-9);
            prop_assert!((a[1] - b[1] - c).abs() < 1e-9);
            prop_assert!((a[2] - b[2]).abs() < 1e-9);
        }
    }

    #[test]
    fn exact_outcome_model_collapses_augmentation(seed in 0u64..1000, b in prop::array::uniform4(-2.0..2.0f64)) {
        let data = simulated(seed, OutcomeKind::Continuous);
        let obs: Vec<Observation> = data
            .observations()
            .iter()
            .cloned()
            .map(|mut o| {
                let lin = b[0] + b[1] * o.x[0] + b[2] * o.x[1] + b[3] * o.x[2];
                o.y = o.y.map(|_| if o.arm == Some(Arm::Treated) { lin + 1.0 } else { lin });
                o
            })
            .collect();
        let exact = rebuild(&data, obs);
        let p = all_points(&exact, &NuisanceConfig::default());
        // order: trial-only, g, w, aug
        for e in 0..3 {
            prop_assert!((p[3][e] - p[1][e]).abs() < 1e-9);
        }
        prop_assert!((p[1][2] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn logistic_fit_is_equivariant_under_rescaling(seed in 0u64..1000, scale in 0.2..5.0f64) {
        let data = simulated(seed, OutcomeKind::Binary);
        let (x, _) = partnest::data::design_matrix(&data, |_| true).unwrap();
        let y: Vec<f64> = data.observations().iter().map(|o| f64::from(u8::from(o.in_trial))).collect();
        let mut scaled = x.clone();
        scaled.column_mut(2).scale_mut(scale);
        let a = fit_logistic(&x, &y).unwrap();
        let b = fit_logistic(&scaled, &y).unwrap();
        prop_assert!((a.coefficients[2] - b.coefficients[2] * scale).abs() < 1e-7);
        for j in [0, 1, 3] {
            prop_assert!((a.coefficients[j] - b.coefficients[j]).abs() < 1e-7);
        }
    }

    #[test]
    fn irls_never_decreases_the_likelihood(seed in 0u64..1000) {
        let data = simulated(seed, OutcomeKind::Binary);
        let (x, rows) = partnest::data::design_matrix(&data, |o| o.in_arm(Arm::Treated)).unwrap();
        let y: Vec<f64> = rows.iter().map(|&i| data.observations()[i].y.unwrap()).collect();
        let mut last = f64::NEG_INFINITY;
        for k in 0..8 {
            let opts = IrlsOptions { max_iterations: k, ..IrlsOptions::default() };
            let fit = fit_logistic_with(&x, &y, &opts).unwrap();
            let ll = logistic_log_likelihood(&x, &y, &fit.coefficients);
            prop_assert!(ll >= last - 1e-9 * last.abs().max(1.0));
            last = ll;
        }
    }

    #[test]
    fn logistic_fit_matches_mean_response(seed in 0u64..1000) {
        let data = simulated(seed, OutcomeKind::Binary);
        let (x, rows) = partnest::data::design_matrix(&data, |o| o.in_trial).unwrap();
        let y: Vec<f64> = rows.iter().map(|&i| data.observations()[i].y.unwrap()).collect();
        let fit = fit_logistic(&x, &y).unwrap();
        let score = fit.score(&x, &y).unwrap();
        prop_assert!(score.iter().all(|s| s.abs() <= 1e-8));
        let mu = partnest::glm::predict(&fit, &x).unwrap();
        let gap = (mu.iter().sum::<f64>() - y.iter().sum::<f64>()).abs() / y.len() as f64;
        prop_assert!(gap < 1e-10);
    }
}
