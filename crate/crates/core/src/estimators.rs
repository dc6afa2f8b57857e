//! Target-population estimators for the partially nested design.
//!
//! Four nuisance regressions are fit on the observed (sampled) rows:
//!
//! * `g_a(X)`: outcome regression among randomized rows in arm `a`;
//! * `p(X)`: probability of trial participation, on all rows;
//! * `q(X)`: probability of belonging to the nested part, on all rows;
//! * `e_a(X)`: probability of assignment to `a` among randomized rows.
//!
//! Because `p` and `q` are both conditional on being sampled, their ratio
//! `q/p` is the same ratio as in the unsampled population, which is what makes
//! the weights `I(S=1, A=a) q / (p e_a)` usable without non-randomized rows
//! from the non-nested part.
//!
//! Every estimator averages over the nested-part rows, dividing by their
//! count `n0`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::data::{
    feature_matrix, Arm, FeatureSet, Observation, OutcomeKind, Part, PartialNestDataset,
};
use crate::glm::{self, FittedModel, GlmError, IrlsOptions, ModelKind};
use crate::inference::{BootstrapIntervals, IntervalEstimate};
use crate::stats;

/// Smallest fitted participation probability tolerated on a randomized row.
pub const POSITIVITY_FLOOR: f64 = 1e-6;
/// Weight-sum ratios outside this band raise the diagnostic flag.
pub const WEIGHT_RATIO_BAND: (f64, f64) = (0.8, 1.25);
/// A 1st percentile of fitted participation probability below this is flagged.
pub const LOW_PARTICIPATION_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EstimatorKind {
    TrialOnly,
    GFormula,
    Weighting,
    Augmented,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [
        EstimatorKind::TrialOnly,
        EstimatorKind::GFormula,
        EstimatorKind::Weighting,
        EstimatorKind::Augmented,
    ];
    pub const PROPOSED: [EstimatorKind; 3] = [
        EstimatorKind::GFormula,
        EstimatorKind::Weighting,
        EstimatorKind::Augmented,
    ];

    pub fn label(self) -> &'static str {
        match self {
            EstimatorKind::TrialOnly => "trial",
            EstimatorKind::GFormula => "g",
            EstimatorKind::Weighting => "w",
            EstimatorKind::Augmented => "aug",
        }
    }

    pub fn uses_outcome_model(self) -> bool {
        self != EstimatorKind::Weighting
    }

    pub fn uses_weights(self) -> bool {
        matches!(self, EstimatorKind::Weighting | EstimatorKind::Augmented)
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for EstimatorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "trial" => Ok(EstimatorKind::TrialOnly),
            "g" => Ok(EstimatorKind::GFormula),
            "w" => Ok(EstimatorKind::Weighting),
            "aug" => Ok(EstimatorKind::Augmented),
            other => Err(format!("unknown estimator `{other}` (expected trial, g, w or aug)")),
        }
    }
}

/// The three reported quantities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Estimand {
    Psi0,
    Psi1,
    Ate,
}

impl Estimand {
    pub const ALL: [Estimand; 3] = [Estimand::Psi0, Estimand::Psi1, Estimand::Ate];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Estimand::Psi0 => "E[Y^0|P=0]",
            Estimand::Psi1 => "E[Y^1|P=0]",
            Estimand::Ate => "ATE",
        }
    }
}

impl fmt::Display for Estimand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NuisanceRole {
    Outcome(Arm),
    Participation,
    Part,
    Treatment,
}

impl fmt::Display for NuisanceRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NuisanceRole::Outcome(a) => write!(f, "outcome model (arm {a})"),
            NuisanceRole::Participation => f.write_str("participation model"),
            NuisanceRole::Part => f.write_str("part model"),
            NuisanceRole::Treatment => f.write_str("treatment model"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("{role} failed: {source}")]
    Nuisance { role: NuisanceRole, source: GlmError },
    #[error("{role} did not converge")]
    NotConverged { role: NuisanceRole },
    #[error("{role} has no rows to fit on")]
    EmptyNuisanceSubset { role: NuisanceRole },
    #[error("no rows with p = 0")]
    NoTargetRows,
    #[error("no trial rows")]
    NoTrialRows,
    #[error("positivity violation: fitted participation probability {prob:e} on trial row {row}")]
    PositivityViolation { row: usize, prob: f64 },
    #[error("trial rows are only present in one part")]
    OnePartOnly,
}

/// How the treatment probability enters the weights.
#[derive(Debug, Clone, PartialEq)]
pub enum TreatmentSpec {
    /// Logistic regression of `a` among randomized rows.
    Estimated(FeatureSet),
    /// Known randomization probability of `a = 1`.
    Known(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceConfig {
    pub outcome_features: FeatureSet,
    pub participation_features: FeatureSet,
    pub part_features: FeatureSet,
    pub treatment: TreatmentSpec,
    /// Divide weighted sums by the weight total instead of `n0`.
    pub normalized_weights: bool,
    pub irls: IrlsOptions,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        NuisanceConfig {
            outcome_features: FeatureSet::MainEffects,
            participation_features: FeatureSet::MainEffects,
            part_features: FeatureSet::MainEffects,
            treatment: TreatmentSpec::Estimated(FeatureSet::MainEffects),
            normalized_weights: false,
            irls: IrlsOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceModel {
    pub fit: FittedModel,
    pub features: FeatureSet,
}

impl NuisanceModel {
    pub fn predict(&self, x: &[f64], buf: &mut Vec<f64>) -> f64 {
        self.features.expand_into(x, buf);
        self.fit.predict_row(buf)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PartModel {
    Fitted(NuisanceModel),
    /// No `p = 1` rows: `q` is identically one.
    FullyNested,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreatmentModel {
    Fitted(NuisanceModel),
    /// Known probability of `a = 1`.
    Known(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceSet {
    /// Indexed by [`Arm::index`].
    pub outcome: [NuisanceModel; 2],
    pub participation: NuisanceModel,
    pub part: PartModel,
    pub treatment: TreatmentModel,
    pub normalized_weights: bool,
}

/// Every nuisance prediction at every dataset row.
#[derive(Debug, Clone)]
pub struct Predictions {
    pub g: [Vec<f64>; 2],
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    /// Probability of `a = 1`.
    pub e1: Vec<f64>,
}

impl Predictions {
    pub fn e(&self, arm: Arm, i: usize) -> f64 {
        match arm {
            Arm::Treated => self.e1[i],
            Arm::Control => 1.0 - self.e1[i],
        }
    }
}

impl NuisanceSet {
    pub fn predictions(&self, data: &PartialNestDataset) -> Predictions {
        let n = data.len();
        let mut out = Predictions {
            g: [Vec::with_capacity(n), Vec::with_capacity(n)],
            p: Vec::with_capacity(n),
            q: Vec::with_capacity(n),
            e1: Vec::with_capacity(n),
        };
        let mut buf = Vec::new();
        for obs in data.observations() {
            for arm in Arm::BOTH {
                out.g[arm.index()].push(self.outcome[arm.index()].predict(&obs.x, &mut buf));
            }
            out.p.push(self.participation.predict(&obs.x, &mut buf));
            out.q.push(match &self.part {
                PartModel::Fitted(m) => m.predict(&obs.x, &mut buf),
                PartModel::FullyNested => 1.0,
            });
            out.e1.push(match &self.treatment {
                TreatmentModel::Fitted(m) => m.predict(&obs.x, &mut buf),
                TreatmentModel::Known(prob) => *prob,
            });
        }
        out
    }

    /// Every fitted model with its role.
    pub fn fitted_models(&self) -> Vec<(NuisanceRole, &NuisanceModel)> {
        let mut v = vec![
            (NuisanceRole::Outcome(Arm::Control), &self.outcome[0]),
            (NuisanceRole::Outcome(Arm::Treated), &self.outcome[1]),
            (NuisanceRole::Participation, &self.participation),
        ];
        if let PartModel::Fitted(m) = &self.part {
            v.push((NuisanceRole::Part, m));
        }
        if let TreatmentModel::Fitted(m) = &self.treatment {
            v.push((NuisanceRole::Treatment, m));
        }
        v
    }
}

fn fit_role(
    data: &PartialNestDataset,
    role: NuisanceRole,
    subset: impl Fn(&Observation) -> bool,
    response: impl Fn(&Observation) -> f64,
    features: &FeatureSet,
    kind: ModelKind,
    irls: &IrlsOptions,
    start: Option<&NuisanceModel>,
) -> Result<NuisanceModel, EstimationError> {
    let rows: Vec<&Observation> = data.observations().iter().filter(|o| subset(o)).collect();
    if rows.is_empty() {
        return Err(EstimationError::EmptyNuisanceSubset { role });
    }
    let x = feature_matrix(
        rows.iter().map(|o| o.x.as_slice()),
        rows.len(),
        data.dim(),
        features,
    );
    let y: Vec<f64> = rows.iter().map(|o| response(o)).collect();
    let fit = match kind {
        ModelKind::Logistic => {
            let opts = match start {
                Some(s) if s.features == *features => IrlsOptions {
                    start: Some(s.fit.coefficients.clone()),
                    ..irls.clone()
                },
                _ => irls.clone(),
            };
            glm::fit_logistic_with(&x, &y, &opts)
        }
        ModelKind::Linear => glm::fit_linear(&x, &y),
    }
    .map_err(|source| EstimationError::Nuisance { role, source })?;
    if !fit.converged {
        return Err(EstimationError::NotConverged { role });
    }
    Ok(NuisanceModel {
        fit: fit.with_description(role.to_string()),
        features: features.clone(),
    })
}

/// Fits all nuisance models on their natural subsets.
pub fn fit_nuisances(
    data: &PartialNestDataset,
    config: &NuisanceConfig,
) -> Result<NuisanceSet, EstimationError> {
    fit_nuisances_from(data, config, None)
}

/// As [`fit_nuisances`], starting each logistic fit from `start`'s
/// coefficients. Used for resampled data close to an original fit.
pub fn fit_nuisances_from(
    data: &PartialNestDataset,
    config: &NuisanceConfig,
    start: Option<&NuisanceSet>,
) -> Result<NuisanceSet, EstimationError> {
    let outcome_kind = match data.outcome_kind() {
        OutcomeKind::Binary => ModelKind::Logistic,
        OutcomeKind::Continuous => ModelKind::Linear,
    };
    let irls = &config.irls;
    let outcome_for = |arm: Arm| {
        fit_role(
            data,
            NuisanceRole::Outcome(arm),
            |o| o.in_arm(arm),
            |o| o.y.unwrap_or(0.0),
            &config.outcome_features,
            outcome_kind,
            irls,
            start.map(|s| &s.outcome[arm.index()]),
        )
    };
    let outcome = [outcome_for(Arm::Control)?, outcome_for(Arm::Treated)?];

    let participation = fit_role(
        data,
        NuisanceRole::Participation,
        |_| true,
        |o| f64::from(u8::from(o.in_trial)),
        &config.participation_features,
        ModelKind::Logistic,
        irls,
        start.map(|s| &s.participation),
    )?;

    let part = if data.n1() == 0 {
        PartModel::FullyNested
    } else {
        let start = start.and_then(|s| match &s.part {
            PartModel::Fitted(m) => Some(m),
            PartModel::FullyNested => None,
        });
        PartModel::Fitted(fit_role(
            data,
            NuisanceRole::Part,
            |_| true,
            |o| if o.part == Part::Nested { 1.0 } else { 0.0 },
            &config.part_features,
            ModelKind::Logistic,
            irls,
            start,
        )?)
    };

    let treatment = match &config.treatment {
        TreatmentSpec::Known(prob) => TreatmentModel::Known(*prob),
        TreatmentSpec::Estimated(features) => {
            let start = start.and_then(|s| match &s.treatment {
                TreatmentModel::Fitted(m) => Some(m),
                TreatmentModel::Known(_) => None,
            });
            TreatmentModel::Fitted(fit_role(
                data,
                NuisanceRole::Treatment,
                |o| o.in_trial,
                |o| o.arm.map_or(0.0, |a| f64::from(a.indicator())),
                features,
                ModelKind::Logistic,
                irls,
                start,
            )?)
        }
    };

    Ok(NuisanceSet {
        outcome,
        participation,
        part,
        treatment,
        normalized_weights: config.normalized_weights,
    })
}

fn check_target(data: &PartialNestDataset) -> Result<f64, EstimationError> {
    if data.n0() == 0 {
        return Err(EstimationError::NoTargetRows);
    }
    Ok(data.n0() as f64)
}

/// `I(S=1, A=a) q / (p e_a)` for every row.
pub fn weights_from(
    data: &PartialNestDataset,
    preds: &Predictions,
    arm: Arm,
) -> Result<Vec<f64>, EstimationError> {
    data.observations()
        .iter()
        .enumerate()
        .map(|(i, obs)| {
            if !obs.in_trial {
                return Ok(0.0);
            }
            if preds.p[i] < POSITIVITY_FLOOR {
                return Err(EstimationError::PositivityViolation {
                    row: i,
                    prob: preds.p[i],
                });
            }
            Ok(if obs.arm == Some(arm) {
                preds.q[i] / (preds.p[i] * preds.e(arm, i))
            } else {
                0.0
            })
        })
        .collect()
}

pub fn compute_weights(
    data: &PartialNestDataset,
    nuisances: &NuisanceSet,
    arm: Arm,
) -> Result<Vec<f64>, EstimationError> {
    weights_from(data, &nuisances.predictions(data), arm)
}

/// Divisor applied to weighted sums: 1, or the mean weight per target row
/// when weights are normalized.
fn weight_scale(nuisances: &NuisanceSet, weights: &[f64], n0: f64) -> f64 {
    if nuisances.normalized_weights {
        weights.iter().sum::<f64>() / n0
    } else {
        1.0
    }
}

fn g_formula_from(data: &PartialNestDataset, preds: &Predictions, arm: Arm) -> Result<f64, EstimationError> {
    let n0 = check_target(data)?;
    let total: f64 = data
        .observations()
        .iter()
        .zip(&preds.g[arm.index()])
        .filter(|(o, _)| o.is_target())
        .map(|(_, g)| g)
        .sum();
    Ok(total / n0)
}

fn weighting_from(
    data: &PartialNestDataset,
    nuisances: &NuisanceSet,
    preds: &Predictions,
    arm: Arm,
) -> Result<f64, EstimationError> {
    let n0 = check_target(data)?;
    let w = weights_from(data, preds, arm)?;
    let total: f64 = data
        .observations()
        .iter()
        .zip(&w)
        .map(|(o, wi)| wi * o.y.unwrap_or(0.0))
        .sum();
    Ok(total / (n0 * weight_scale(nuisances, &w, n0)))
}

fn augmented_from(
    data: &PartialNestDataset,
    nuisances: &NuisanceSet,
    preds: &Predictions,
    arm: Arm,
) -> Result<f64, EstimationError> {
    let n0 = check_target(data)?;
    let w = weights_from(data, preds, arm)?;
    let scale = weight_scale(nuisances, &w, n0);
    let g = &preds.g[arm.index()];
    let mut residual = 0.0;
    let mut standardized = 0.0;
    for (i, obs) in data.observations().iter().enumerate() {
        if w[i] != 0.0 {
            residual += w[i] * (obs.y.unwrap_or(0.0) - g[i]);
        }
        if obs.is_target() {
            standardized += g[i];
        }
    }
    Ok((residual / scale + standardized) / n0)
}

fn trial_only_from(data: &PartialNestDataset, preds: &Predictions, arm: Arm) -> Result<f64, EstimationError> {
    let (sum, count) = data
        .observations()
        .iter()
        .zip(&preds.g[arm.index()])
        .filter(|(o, _)| o.in_trial)
        .fold((0.0, 0usize), |(s, c), (_, g)| (s + g, c + 1));
    if count == 0 {
        return Err(EstimationError::NoTrialRows);
    }
    Ok(sum / count as f64)
}

/// Outcome-model standardization over all `p = 0` rows.
pub fn estimate_g_formula(
    data: &PartialNestDataset,
    nuisances: &NuisanceSet,
    arm: Arm,
) -> Result<f64, EstimationError> {
    g_formula_from(data, &nuisances.predictions(data), arm)
}

pub fn estimate_weighting(
    data: &PartialNestDataset,
    nuisances: &NuisanceSet,
    arm: Arm,
) -> Result<f64, EstimationError> {
    weighting_from(data, nuisances, &nuisances.predictions(data), arm)
}

/// Weighting estimator augmented with the outcome model.
pub fn estimate_augmented(
    data: &PartialNestDataset,
    nuisances: &NuisanceSet,
    arm: Arm,
) -> Result<f64, EstimationError> {
    augmented_from(data, nuisances, &nuisances.predictions(data), arm)
}

/// Outcome-model predictions averaged over trial participants only. Targets
/// the trial population, not the nested-part population.
pub fn estimate_trial_only(
    data: &PartialNestDataset,
    nuisances: &NuisanceSet,
    arm: Arm,
) -> Result<f64, EstimationError> {
    trial_only_from(data, &nuisances.predictions(data), arm)
}

/// Point estimates of one estimator for both arms and their contrast.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointEstimate {
    pub kind: EstimatorKind,
    pub psi0: f64,
    pub psi1: f64,
    pub ate: f64,
}

impl PointEstimate {
    fn new(kind: EstimatorKind, psi0: f64, psi1: f64) -> Self {
        PointEstimate {
            kind,
            psi0,
            psi1,
            ate: psi1 - psi0,
        }
    }

    pub fn get(&self, estimand: Estimand) -> f64 {
        match estimand {
            Estimand::Psi0 => self.psi0,
            Estimand::Psi1 => self.psi1,
            Estimand::Ate => self.ate,
        }
    }

    pub fn values(&self) -> [f64; 3] {
        [self.psi0, self.psi1, self.ate]
    }
}

/// Point estimates for several estimators sharing one prediction pass.
pub fn estimate_points(
    data: &PartialNestDataset,
    nuisances: &NuisanceSet,
    kinds: &[EstimatorKind],
) -> Result<Vec<PointEstimate>, EstimationError> {
    let preds = nuisances.predictions(data);
    kinds
        .iter()
        .map(|&kind| {
            let per_arm = |arm| match kind {
                EstimatorKind::TrialOnly => trial_only_from(data, &preds, arm),
                EstimatorKind::GFormula => g_formula_from(data, &preds, arm),
                EstimatorKind::Weighting => weighting_from(data, nuisances, &preds, arm),
                EstimatorKind::Augmented => augmented_from(data, nuisances, &preds, arm),
            };
            Ok(PointEstimate::new(kind, per_arm(Arm::Control)?, per_arm(Arm::Treated)?))
        })
        .collect()
}

/// Wald test for a part indicator added to each arm's outcome regression.
#[derive(Debug, Clone, PartialEq)]
pub struct ExchangeabilityTest {
    /// Sum of the per-arm squared Wald z statistics.
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    /// Per-arm `(coefficient, standard error)` of the `p = 1` indicator.
    pub per_arm: [(f64, f64); 2],
}

/// Tests whether trial outcomes differ between the two parts after adjusting
/// for covariates. Evidence of a difference speaks against exchangeability
/// between the parts.
pub fn part_exchangeability_test(
    data: &PartialNestDataset,
) -> Result<ExchangeabilityTest, EstimationError> {
    let mut per_arm = [(0.0, 0.0); 2];
    for arm in Arm::BOTH {
        let rows: Vec<&Observation> = data
            .observations()
            .iter()
            .filter(|o| o.in_arm(arm))
            .collect();
        let nested = rows.iter().filter(|o| o.part == Part::Nested).count();
        if nested == 0 || nested == rows.len() {
            return Err(EstimationError::OnePartOnly);
        }
        let d = data.dim();
        let mut x = DMatrix::zeros(rows.len(), d + 2);
        for (i, o) in rows.iter().enumerate() {
            x[(i, 0)] = 1.0;
            for j in 0..d {
                x[(i, j + 1)] = o.x[j];
            }
            x[(i, d + 1)] = f64::from(o.part.indicator());
        }
        let y: Vec<f64> = rows.iter().map(|o| o.y.unwrap_or(0.0)).collect();
        let role = NuisanceRole::Outcome(arm);
        let wrap = |source| EstimationError::Nuisance { role, source };
        let (fit, cov_scale) = match data.outcome_kind() {
            OutcomeKind::Binary => (glm::fit_logistic(&x, &y).map_err(wrap)?, 1.0),
            OutcomeKind::Continuous => {
                let fit = glm::fit_linear(&x, &y).map_err(wrap)?;
                let mu = glm::predict(&fit, &x).map_err(wrap)?;
                let rss: f64 = y.iter().zip(&mu).map(|(a, b)| (a - b) * (a - b)).sum();
                let dof = rows.len().saturating_sub(d + 2).max(1);
                (fit, rss / dof as f64)
            }
        };
        let info = fit.information(&x).map_err(wrap)?;
        let inv = info
            .try_inverse()
            .ok_or(EstimationError::Nuisance {
                role,
                source: GlmError::SingularInformation,
            })?;
        let coef = fit.coefficients[d + 1];
        let se = (inv[(d + 1, d + 1)] * cov_scale).sqrt();
        per_arm[arm.index()] = (coef, se);
    }
    let statistic: f64 = per_arm.iter().map(|(b, se)| (b / se).powi(2)).sum();
    // chi-square with two degrees of freedom
    let p_value = (-statistic / 2.0).exp();
    Ok(ExchangeabilityTest {
        statistic,
        df: 2,
        p_value,
        per_arm,
    })
}

/// Checks tied to positivity and to the mean of the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightDiagnostics {
    /// `sum_{s=1} q/p` divided by the number of `p = 0` rows; near one when the
    /// weight models are adequate.
    pub weight_sum_ratio: f64,
    pub weight_ratio_flag: bool,
    /// Smallest fitted participation probability among `p = 0` rows.
    pub min_participation_prob: f64,
    /// `(percentile, value)` of fitted participation probability among `p = 0` rows.
    pub participation_prob_percentiles: [(f64, f64); 5],
    pub low_participation_flag: bool,
    /// `None` when trial rows come from one part only.
    pub part_exchangeability: Option<ExchangeabilityTest>,
}

impl WeightDiagnostics {
    pub fn any_flag(&self) -> bool {
        self.weight_ratio_flag || self.low_participation_flag
    }
}

pub fn weight_diagnostic(data: &PartialNestDataset, nuisances: &NuisanceSet) -> WeightDiagnostics {
    let preds = nuisances.predictions(data);
    let obs = data.observations();
    let lhs: f64 = obs
        .iter()
        .enumerate()
        .filter(|(_, o)| o.in_trial)
        .map(|(i, _)| preds.q[i] / preds.p[i])
        .sum();
    let weight_sum_ratio = lhs / data.n0().max(1) as f64;

    let mut target_p: Vec<f64> = obs
        .iter()
        .enumerate()
        .filter(|(_, o)| o.is_target())
        .map(|(i, _)| preds.p[i])
        .collect();
    if target_p.is_empty() {
        target_p = preds.p.clone();
    }
    target_p.sort_by(f64::total_cmp);
    let percentiles = [1.0, 5.0, 50.0, 95.0, 99.0]
        .map(|pct| (pct, stats::quantile_sorted(&target_p, pct / 100.0)));

    WeightDiagnostics {
        weight_sum_ratio,
        weight_ratio_flag: !(WEIGHT_RATIO_BAND.0..=WEIGHT_RATIO_BAND.1).contains(&weight_sum_ratio),
        min_participation_prob: target_p[0],
        participation_prob_percentiles: percentiles,
        low_participation_flag: percentiles[0].1 < LOW_PARTICIPATION_THRESHOLD,
        part_exchangeability: part_exchangeability_test(data).ok(),
    }
}

/// Point estimates, intervals and diagnostics for one estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub estimator_kind: EstimatorKind,
    pub psi0: f64,
    pub psi1: f64,
    pub ate: f64,
    /// Indexed by [`Estimand::index`].
    pub sandwich: Option<[IntervalEstimate; 3]>,
    pub bootstrap: Option<BootstrapIntervals>,
    pub diagnostics: WeightDiagnostics,
}

impl EstimateReport {
    pub fn new(point: PointEstimate, diagnostics: WeightDiagnostics) -> Self {
        EstimateReport {
            estimator_kind: point.kind,
            psi0: point.psi0,
            psi1: point.psi1,
            ate: point.ate,
            sandwich: None,
            bootstrap: None,
            diagnostics,
        }
    }
}
