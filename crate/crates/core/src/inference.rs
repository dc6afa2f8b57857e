//! Standard errors and confidence intervals.
//!
//! Two routes are offered. The sandwich route stacks the score equations of
//! every nuisance regression an estimator uses together with the estimator's
//! own defining equation, so that nuisance estimation uncertainty propagates
//! into the target parameters. The bootstrap route resamples rows, refits
//! every nuisance model and recomputes the estimates.

use std::fmt;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::data::{Arm, FeatureSet, Part, PartialNestDataset};
use crate::estimators::{
    estimate_points, fit_nuisances, fit_nuisances_from, Estimand, EstimationError, EstimatorKind,
    NuisanceConfig, NuisanceModel, NuisanceSet, PartModel, PointEstimate, TreatmentModel,
};
use crate::glm::{expit, ModelKind};
use crate::rng::{self, Purpose};
use crate::stats::{self, Z_975};

/// Largest tolerated max-norm of the mean stacked estimating function at the
/// plug-in solution.
pub const STACK_TOLERANCE: f64 = 1e-6;
/// Fraction of bootstrap replicates allowed to fail before giving up.
pub const MAX_FAILED_FRACTION: f64 = 0.05;
pub const MIN_BOOTSTRAP_REPLICATES: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("stacked estimating equations are not solved at the plug-in estimate (max |mean| = {max_abs:e}): {reason}")]
    StackInconsistent { max_abs: f64, reason: String },
    #[error("bread matrix is singular")]
    SingularBread,
    #[error("{failed} of {total} bootstrap replicates failed")]
    TooManyFailedReplicates { failed: usize, total: usize },
    #[error("bootstrap needs at least {MIN_BOOTSTRAP_REPLICATES} replicates, got {0}")]
    TooFewReplicates(usize),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntervalMethod {
    Sandwich,
    BootstrapNormal,
    BootstrapPercentile,
}

impl fmt::Display for IntervalMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IntervalMethod::Sandwich => "sandwich",
            IntervalMethod::BootstrapNormal => "bootstrap_normal",
            IntervalMethod::BootstrapPercentile => "bootstrap_percentile",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalEstimate {
    pub point: f64,
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
    pub method: IntervalMethod,
}

impl IntervalEstimate {
    pub fn normal(point: f64, se: f64, method: IntervalMethod) -> Self {
        IntervalEstimate {
            point,
            se,
            lower: point - Z_975 * se,
            upper: point + Z_975 * se,
            method,
        }
    }

    pub fn covers(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }
}

/// A per-observation estimating function `m(O_i; theta)`.
pub trait EstimatingFunction: Send + Sync {
    fn dim(&self) -> usize;
    fn n_obs(&self) -> usize;
    /// Writes `m(O_i; theta)` into row `i` of `out` (`n_obs x dim`).
    fn evaluate(&self, theta: &[f64], out: &mut DMatrix<f64>);
}

/// A named contiguous range of parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub name: String,
    pub range: Range<usize>,
}

/// Stacked estimating equations and their plug-in solution.
pub struct StackedSystem {
    pub theta: Vec<f64>,
    pub layout: Vec<Block>,
    /// `(label, index into theta)` of each reported parameter.
    pub targets: Vec<(String, usize)>,
    equations: Box<dyn EstimatingFunction>,
}

impl fmt::Debug for StackedSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StackedSystem")
            .field("theta", &self.theta)
            .field("layout", &self.layout)
            .field("targets", &self.targets)
            .finish()
    }
}

impl StackedSystem {
    pub fn new(
        theta: Vec<f64>,
        layout: Vec<Block>,
        targets: Vec<(String, usize)>,
        equations: Box<dyn EstimatingFunction>,
    ) -> Self {
        assert_eq!(theta.len(), equations.dim(), "theta length must match stack dimension");
        StackedSystem {
            theta,
            layout,
            targets,
            equations,
        }
    }

    /// The stack `m = y - mu` whose solution is the sample mean.
    pub fn sample_mean(values: Vec<f64>) -> Self {
        let mean = stats::mean(&values);
        StackedSystem::new(
            vec![mean],
            vec![Block {
                name: "mean".into(),
                range: 0..1,
            }],
            vec![("mean".into(), 0)],
            Box::new(SampleMean { values }),
        )
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn n_obs(&self) -> usize {
        self.equations.n_obs()
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.layout.iter().find(|b| b.name == name)
    }

    /// Per-observation values at `theta` (`n_obs x dim`).
    pub fn estimating_function(&self, theta: &[f64]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n_obs(), self.dim());
        self.equations.evaluate(theta, &mut out);
        out
    }

    pub fn mean_estimating_function(&self, theta: &[f64]) -> DVector<f64> {
        column_means(&self.estimating_function(theta))
    }

    /// Mean of `-dm/dtheta` at the plug-in solution by central differences.
    pub fn bread(&self) -> DMatrix<f64> {
        let k = self.dim();
        let mut scratch = DMatrix::zeros(self.n_obs(), k);
        let mut bread = DMatrix::zeros(k, k);
        let mut theta = self.theta.clone();
        for j in 0..k {
            let h = 1e-6 * self.theta[j].abs().max(1.0);
            theta[j] = self.theta[j] + h;
            self.equations.evaluate(&theta, &mut scratch);
            let plus = column_means(&scratch);
            theta[j] = self.theta[j] - h;
            self.equations.evaluate(&theta, &mut scratch);
            let minus = column_means(&scratch);
            theta[j] = self.theta[j];
            for r in 0..k {
                bread[(r, j)] = -(plus[r] - minus[r]) / (2.0 * h);
            }
        }
        bread
    }

    /// Mean outer product of the estimating function at the plug-in solution.
    pub fn meat(&self) -> DMatrix<f64> {
        let m = self.estimating_function(&self.theta);
        m.tr_mul(&m) / self.n_obs() as f64
    }
}

fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows() as f64;
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / n))
}

struct SampleMean {
    values: Vec<f64>,
}

impl EstimatingFunction for SampleMean {
    fn dim(&self) -> usize {
        1
    }

    fn n_obs(&self) -> usize {
        self.values.len()
    }

    fn evaluate(&self, theta: &[f64], out: &mut DMatrix<f64>) {
        for (i, v) in self.values.iter().enumerate() {
            out[(i, 0)] = v - theta[0];
        }
    }
}

/// Row-major expanded features of every dataset row for one model.
struct FeatureRows {
    width: usize,
    values: Vec<f64>,
}

impl FeatureRows {
    fn new(data: &PartialNestDataset, features: &FeatureSet) -> Self {
        let width = features.width(data.dim());
        let mut values = Vec::with_capacity(width * data.len());
        let mut buf = Vec::with_capacity(width);
        for o in data.observations() {
            features.expand_into(&o.x, &mut buf);
            values.extend_from_slice(&buf);
        }
        FeatureRows { width, values }
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.width..(i + 1) * self.width]
    }
}

struct ModelBlock {
    kind: ModelKind,
    rows: FeatureRows,
    range: Range<usize>,
}

impl ModelBlock {
    #[inline]
    fn mean(&self, theta: &[f64], i: usize) -> f64 {
        let eta: f64 = theta[self.range.clone()]
            .iter()
            .zip(self.rows.row(i))
            .map(|(b, x)| b * x)
            .sum();
        match self.kind {
            ModelKind::Logistic => expit(eta),
            ModelKind::Linear => eta,
        }
    }

    /// Writes `weight * x_i * resid` into the block's columns of `out`.
    #[inline]
    fn score(&self, out: &mut DMatrix<f64>, i: usize, resid: f64) {
        for (j, x) in self.range.clone().zip(self.rows.row(i)) {
            out[(i, j)] = x * resid;
        }
    }
}

/// Per-row indicators needed by the estimator equations.
struct RowFacts {
    in_trial: bool,
    target: bool,
    arm: Option<Arm>,
    y: f64,
}

struct EstimatorStack {
    kind: EstimatorKind,
    rows: Vec<RowFacts>,
    outcome: Option<[ModelBlock; 2]>,
    participation: Option<ModelBlock>,
    part: Option<ModelBlock>,
    treatment: Option<ModelBlock>,
    known_treatment: f64,
    /// Normalizing constants, one per arm, when weights are normalized.
    kappa: Option<Range<usize>>,
    psi: usize,
}

impl EstimatingFunction for EstimatorStack {
    fn dim(&self) -> usize {
        self.psi + 3
    }

    fn n_obs(&self) -> usize {
        self.rows.len()
    }

    fn evaluate(&self, theta: &[f64], out: &mut DMatrix<f64>) {
        let psi = [theta[self.psi], theta[self.psi + 1]];
        let ate = theta[self.psi + 2];
        for (i, r) in self.rows.iter().enumerate() {
            let mut g = [0.0; 2];
            if let Some(models) = &self.outcome {
                for arm in Arm::BOTH {
                    let m = &models[arm.index()];
                    g[arm.index()] = m.mean(theta, i);
                    let resid = if r.in_trial && r.arm == Some(arm) {
                        r.y - g[arm.index()]
                    } else {
                        0.0
                    };
                    m.score(out, i, resid);
                }
            }

            let mut w = [0.0; 2];
            if let Some(pm) = &self.participation {
                let p = pm.mean(theta, i);
                pm.score(out, i, f64::from(u8::from(r.in_trial)) - p);
                let q = match &self.part {
                    Some(qm) => {
                        let q = qm.mean(theta, i);
                        qm.score(out, i, if r.target { 1.0 } else { 0.0 } - q);
                        q
                    }
                    None => 1.0,
                };
                let e1 = match &self.treatment {
                    Some(em) => {
                        let e1 = em.mean(theta, i);
                        let resid = match (r.in_trial, r.arm) {
                            (true, Some(a)) => f64::from(a.indicator()) - e1,
                            _ => 0.0,
                        };
                        em.score(out, i, resid);
                        e1
                    }
                    None => self.known_treatment,
                };
                if let (true, Some(a)) = (r.in_trial, r.arm) {
                    let e = if a == Arm::Treated { e1 } else { 1.0 - e1 };
                    w[a.index()] = q / (p * e);
                }
            }

            let target = if r.target { 1.0 } else { 0.0 };
            let mut kappa = [1.0; 2];
            if let Some(range) = &self.kappa {
                for arm in Arm::BOTH {
                    let col = range.start + arm.index();
                    kappa[arm.index()] = theta[col];
                    out[(i, col)] = w[arm.index()] - target * theta[col];
                }
            }

            for arm in Arm::BOTH {
                let a = arm.index();
                out[(i, self.psi + a)] = match self.kind {
                    EstimatorKind::TrialOnly => {
                        if r.in_trial {
                            g[a] - psi[a]
                        } else {
                            0.0
                        }
                    }
                    EstimatorKind::GFormula => target * (g[a] - psi[a]),
                    EstimatorKind::Weighting => w[a] * r.y / kappa[a] - target * psi[a],
                    EstimatorKind::Augmented => {
                        w[a] * (r.y - g[a]) / kappa[a] + target * (g[a] - psi[a])
                    }
                };
            }
            out[(i, self.psi + 2)] = psi[1] - psi[0] - ate;
        }
    }
}

/// Stacks the nuisance score equations used by `kind` with its estimating
/// equations for `psi(0)`, `psi(1)` and the ATE.
pub fn build_stack(
    data: &PartialNestDataset,
    nuisances: &NuisanceSet,
    kind: EstimatorKind,
) -> Result<StackedSystem, InferenceError> {
    let mut theta = Vec::new();
    let mut layout = Vec::new();
    let mut used: Vec<&NuisanceModel> = Vec::new();

    let mut push_model = |name: String, model: &NuisanceModel, theta: &mut Vec<f64>| -> ModelBlock {
        let start = theta.len();
        theta.extend_from_slice(&model.fit.coefficients);
        let range = start..theta.len();
        layout.push(Block {
            name,
            range: range.clone(),
        });
        ModelBlock {
            kind: model.fit.kind,
            rows: FeatureRows::new(data, &model.features),
            range,
        }
    };

    let outcome = if kind.uses_outcome_model() {
        used.extend(nuisances.outcome.iter());
        Some(Arm::BOTH.map(|arm| {
            push_model(
                format!("outcome_{arm}"),
                &nuisances.outcome[arm.index()],
                &mut theta,
            )
        }))
    } else {
        None
    };

    let (mut participation, mut part, mut treatment) = (None, None, None);
    let mut known_treatment = 0.5;
    if kind.uses_weights() {
        used.push(&nuisances.participation);
        participation = Some(push_model(
            "participation".into(),
            &nuisances.participation,
            &mut theta,
        ));
        if let PartModel::Fitted(m) = &nuisances.part {
            used.push(m);
            part = Some(push_model("part".into(), m, &mut theta));
        }
        match &nuisances.treatment {
            TreatmentModel::Fitted(m) => {
                used.push(m);
                treatment = Some(push_model("treatment".into(), m, &mut theta));
            }
            TreatmentModel::Known(p) => known_treatment = *p,
        }
    }

    if let Some(m) = used.iter().find(|m| !m.fit.converged) {
        return Err(InferenceError::StackInconsistent {
            max_abs: m.fit.final_gradient_norm,
            reason: format!("{} did not converge", m.fit.subset_description),
        });
    }

    let point = estimate_points(data, nuisances, &[kind])?[0];
    let kappa = if kind.uses_weights() && nuisances.normalized_weights {
        let start = theta.len();
        let preds = nuisances.predictions(data);
        for arm in Arm::BOTH {
            let w = crate::estimators::weights_from(data, &preds, arm)?;
            theta.push(w.iter().sum::<f64>() / data.n0() as f64);
        }
        layout.push(Block {
            name: "weight_scale".into(),
            range: start..start + 2,
        });
        Some(start..start + 2)
    } else {
        None
    };

    let psi = theta.len();
    theta.extend(point.values());
    layout.push(Block {
        name: "target".into(),
        range: psi..psi + 3,
    });

    let rows = data
        .observations()
        .iter()
        .map(|o| RowFacts {
            in_trial: o.in_trial,
            target: o.part == Part::Nested,
            arm: o.arm,
            y: o.y.unwrap_or(0.0),
        })
        .collect();
    let stack = EstimatorStack {
        kind,
        rows,
        outcome,
        participation,
        part,
        treatment,
        known_treatment,
        kappa,
        psi,
    };
    let targets = Estimand::ALL
        .iter()
        .map(|e| (e.label().to_string(), psi + e.index()))
        .collect();
    let system = StackedSystem::new(theta, layout, targets, Box::new(stack));

    let means = system.mean_estimating_function(&system.theta);
    let max_abs = means.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if !(max_abs <= STACK_TOLERANCE) {
        return Err(InferenceError::StackInconsistent {
            max_abs,
            reason: "mean estimating function is not zero".into(),
        });
    }
    Ok(system)
}

/// Symmetrized `A^-1 B A^-T / n` before symmetrization, as computed.
pub fn sandwich_covariance_raw(system: &StackedSystem) -> Result<DMatrix<f64>, InferenceError> {
    let bread = system.bread();
    let inv = bread.try_inverse().ok_or(InferenceError::SingularBread)?;
    if inv.iter().any(|v| !v.is_finite()) {
        return Err(InferenceError::SingularBread);
    }
    let meat = system.meat();
    Ok(&inv * meat * inv.transpose() / system.n_obs() as f64)
}

pub fn sandwich_covariance(system: &StackedSystem) -> Result<DMatrix<f64>, InferenceError> {
    let raw = sandwich_covariance_raw(system)?;
    Ok((&raw + raw.transpose()) * 0.5)
}

/// Normal-theory intervals for each target of the stack.
pub fn sandwich_se(system: &StackedSystem) -> Result<Vec<IntervalEstimate>, InferenceError> {
    let cov = sandwich_covariance(system)?;
    Ok(system
        .targets
        .iter()
        .map(|(_, j)| {
            IntervalEstimate::normal(
                system.theta[*j],
                cov[(*j, *j)].max(0.0).sqrt(),
                IntervalMethod::Sandwich,
            )
        })
        .collect())
}

/// Sandwich intervals for `psi(0)`, `psi(1)` and the ATE of one estimator.
pub fn sandwich_intervals(
    data: &PartialNestDataset,
    nuisances: &NuisanceSet,
    kind: EstimatorKind,
) -> Result<[IntervalEstimate; 3], InferenceError> {
    let system = build_stack(data, nuisances, kind)?;
    let v = sandwich_se(&system)?;
    Ok([v[0], v[1], v[2]])
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapOptions {
    pub replicates: usize,
    pub seed: u64,
    /// Resample `n0` rows from the nested part and `n1` from the other part
    /// instead of `n` rows from the pooled data.
    pub stratified: bool,
}

impl BootstrapOptions {
    pub fn new(replicates: usize, seed: u64) -> Self {
        BootstrapOptions {
            replicates,
            seed,
            stratified: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapIntervals {
    pub kind: EstimatorKind,
    /// `point +/- 1.96 se`; indexed by [`Estimand::index`].
    pub normal: [IntervalEstimate; 3],
    pub percentile: [IntervalEstimate; 3],
    pub replicates_used: usize,
    pub failed: usize,
}

fn resample_indices(data: &PartialNestDataset, options: &BootstrapOptions, replicate: usize) -> Vec<usize> {
    let mut rng = rng::stream(options.seed, Purpose::Bootstrap, replicate as u64);
    let n = data.len();
    if !options.stratified {
        return (0..n).map(|_| rng.random_range(0..n)).collect();
    }
    let (nested, other): (Vec<usize>, Vec<usize>) =
        (0..n).partition(|&i| data.observations()[i].part == Part::Nested);
    let mut out = Vec::with_capacity(n);
    for group in [nested, other] {
        if group.is_empty() {
            continue;
        }
        out.extend((0..group.len()).map(|_| group[rng.random_range(0..group.len())]));
    }
    out
}

/// Replicate estimates, `None` for replicates whose refit failed. Replicate
/// `r` always uses the random stream keyed by `(seed, r)`.
pub fn bootstrap_replicates(
    data: &PartialNestDataset,
    config: &NuisanceConfig,
    start: Option<&NuisanceSet>,
    kinds: &[EstimatorKind],
    options: &BootstrapOptions,
) -> Vec<Option<Vec<PointEstimate>>> {
    (0..options.replicates)
        .into_par_iter()
        .map(|r| {
            let indices = resample_indices(data, options, r);
            let sample = data.resample(&indices);
            let ns = fit_nuisances_from(&sample, config, start).ok()?;
            estimate_points(&sample, &ns, kinds).ok()
        })
        .collect()
}

/// Bootstrap intervals for several estimators from one set of replicates.
/// `nuisances` is the full-data fit; it supplies the point estimates and the
/// starting values of every refit.
pub fn bootstrap_with_fit(
    data: &PartialNestDataset,
    config: &NuisanceConfig,
    nuisances: &NuisanceSet,
    kinds: &[EstimatorKind],
    options: &BootstrapOptions,
) -> Result<Vec<BootstrapIntervals>, InferenceError> {
    if options.replicates < MIN_BOOTSTRAP_REPLICATES {
        return Err(InferenceError::TooFewReplicates(options.replicates));
    }
    let points = estimate_points(data, nuisances, kinds)?;
    let reps = bootstrap_replicates(data, config, Some(nuisances), kinds, options);
    let ok: Vec<&Vec<PointEstimate>> = reps.iter().flatten().collect();
    let failed = reps.len() - ok.len();
    if failed as f64 > MAX_FAILED_FRACTION * options.replicates as f64 {
        return Err(InferenceError::TooManyFailedReplicates {
            failed,
            total: options.replicates,
        });
    }
    Ok(points
        .iter()
        .enumerate()
        .map(|(k, point)| {
            let per = |e: Estimand| {
                let draws: Vec<f64> = ok.iter().map(|r| r[k].get(e)).collect();
                let se = stats::sd(&draws);
                let mut sorted = draws;
                sorted.sort_by(f64::total_cmp);
                let normal = IntervalEstimate::normal(point.get(e), se, IntervalMethod::BootstrapNormal);
                let percentile = IntervalEstimate {
                    point: point.get(e),
                    se,
                    lower: stats::quantile_sorted(&sorted, 0.025),
                    upper: stats::quantile_sorted(&sorted, 0.975),
                    method: IntervalMethod::BootstrapPercentile,
                };
                (normal, percentile)
            };
            let cells = Estimand::ALL.map(per);
            BootstrapIntervals {
                kind: point.kind,
                normal: cells.map(|c| c.0),
                percentile: cells.map(|c| c.1),
                replicates_used: ok.len(),
                failed,
            }
        })
        .collect())
}

/// Fits the nuisances on `data`, then bootstraps one estimator.
pub fn bootstrap(
    data: &PartialNestDataset,
    config: &NuisanceConfig,
    kind: EstimatorKind,
    replicates: usize,
    seed: u64,
) -> Result<BootstrapIntervals, InferenceError> {
    let nuisances = fit_nuisances(data, config)?;
    let mut out = bootstrap_with_fit(
        data,
        config,
        &nuisances,
        &[kind],
        &BootstrapOptions::new(replicates, seed),
    )?;
    Ok(out.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_mean_sandwich_matches_textbook() {
        let values = vec![1.0, 4.0, 2.5, -0.5, 3.0, 7.25];
        let n = values.len() as f64;
        let mean = stats::mean(&values);
        let pop_sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let system = StackedSystem::sample_mean(values);
        let ci = sandwich_se(&system).unwrap();
        assert!((ci[0].se - pop_sd / n.sqrt()).abs() < 1e-10);
        assert!((ci[0].point - mean).abs() < 1e-15);
        assert!(ci[0].lower < ci[0].point && ci[0].point < ci[0].upper);
    }

    #[test]
    fn interval_coverage() {
        let ci = IntervalEstimate::normal(1.0, 0.5, IntervalMethod::Sandwich);
        assert!(ci.covers(1.9));
        assert!(!ci.covers(2.0));
        assert_eq!(ci.method.to_string(), "sandwich");
    }
}
