//! Simulation harness: a fully nested cohort with selective trial
//! participation, reduced to a partially nested design by dropping the
//! non-randomized rows of one randomly chosen part, followed by repeated
//! estimation and summary of bias, spread and interval coverage.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::data::{Arm, Observation, OutcomeKind, Part, PartialNestDataset};
use crate::estimators::{
    estimate_points, fit_nuisances, Estimand, EstimationError, EstimatorKind, NuisanceConfig,
};
use crate::glm::expit;
use crate::inference::{
    bootstrap_with_fit, sandwich_intervals, BootstrapOptions, InferenceError, IntervalEstimate,
};
use crate::rng::{self, Purpose};
use crate::stats;

/// Failed runs beyond this fraction abort a replication study.
pub const MAX_FAILED_RUN_FRACTION: f64 = 0.02;
/// Default number of draws for the Monte Carlo truth.
pub const DEFAULT_TRUTH_DRAWS: usize = 10_000_000;

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("{failed} of {runs} runs failed (first failure: {first})")]
    TooManyFailedRuns {
        failed: usize,
        runs: usize,
        first: String,
    },
    #[error("no runs requested")]
    NoRuns,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScenarioLabel {
    NoEm,
    ModerateEm,
    StrongEm,
}

impl ScenarioLabel {
    pub const ALL: [ScenarioLabel; 3] = [
        ScenarioLabel::NoEm,
        ScenarioLabel::ModerateEm,
        ScenarioLabel::StrongEm,
    ];

    pub fn key(self) -> &'static str {
        match self {
            ScenarioLabel::NoEm => "no_em",
            ScenarioLabel::ModerateEm => "moderate_em",
            ScenarioLabel::StrongEm => "strong_em",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            ScenarioLabel::NoEm => "No EM",
            ScenarioLabel::ModerateEm => "Moderate EM",
            ScenarioLabel::StrongEm => "Strong EM",
        }
    }
}

impl fmt::Display for ScenarioLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for ScenarioLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScenarioLabel::ALL
            .into_iter()
            .find(|l| l.key() == s)
            .ok_or_else(|| format!("unknown scenario `{s}` (expected no_em, moderate_em or strong_em)"))
    }
}

/// Data-generating process for one simulation scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub label: ScenarioLabel,
    pub outcome_kind: OutcomeKind,
    /// Individuals in the fully nested cohort before dropping rows.
    pub n_total: usize,
    /// Logistic coefficients (intercept first) of trial participation.
    pub selection_beta: Vec<f64>,
    /// `Pr[P = 1]`, independent of everything else.
    pub part_prob: f64,
    /// `Pr[A = 1]` among trial participants.
    pub treat_prob: f64,
    pub zeta0: Vec<f64>,
    pub zeta1: Vec<f64>,
}

impl Scenario {
    /// The standard scenarios: three standard-normal covariates, about 40% of
    /// the cohort in the trial, half the cohort in each part, and outcome
    /// coefficients varying only in the treated arm.
    pub fn standard(label: ScenarioLabel, outcome_kind: OutcomeKind) -> Self {
        let zeta1 = match label {
            ScenarioLabel::StrongEm => vec![1.0, 0.0, 0.0, 0.5],
            ScenarioLabel::ModerateEm => vec![1.0, 0.0, 0.5, 0.5],
            ScenarioLabel::NoEm => vec![1.0, 0.5, 0.5, 0.5],
        };
        Scenario {
            label,
            outcome_kind,
            n_total: 750,
            selection_beta: vec![-0.471, 0.5, 0.5, 0.5],
            part_prob: 0.5,
            treat_prob: 0.5,
            zeta0: vec![0.5, 0.5, 0.5, 0.5],
            zeta1,
        }
    }

    pub fn dim(&self) -> usize {
        self.selection_beta.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        let bad = |m: &str| Err(SimulationError::InvalidScenario(m.to_string()));
        if self.selection_beta.len() < 2 {
            return bad("selection coefficients need an intercept and at least one covariate");
        }
        if self.zeta0.len() != self.selection_beta.len() || self.zeta1.len() != self.selection_beta.len() {
            return bad("outcome coefficient vectors must match the covariate dimension plus intercept");
        }
        for p in [self.part_prob, self.treat_prob] {
            if !(p > 0.0 && p < 1.0) {
                return bad("probabilities must lie strictly between 0 and 1");
            }
        }
        if self.n_total == 0 {
            return bad("n_total must be positive");
        }
        Ok(())
    }

    fn zeta(&self, arm: Arm) -> &[f64] {
        match arm {
            Arm::Control => &self.zeta0,
            Arm::Treated => &self.zeta1,
        }
    }

    /// `E[Y^a | X = x]`.
    pub fn conditional_mean(&self, arm: Arm, x: &[f64]) -> f64 {
        let eta = linear_predictor(self.zeta(arm), x);
        match self.outcome_kind {
            OutcomeKind::Binary => expit(eta),
            OutcomeKind::Continuous => eta,
        }
    }

    pub fn participation_prob(&self, x: &[f64]) -> f64 {
        expit(linear_predictor(&self.selection_beta, x))
    }
}

/// `coef[0] + coef[1..] . x`
fn linear_predictor(coef: &[f64], x: &[f64]) -> f64 {
    coef[0] + coef[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
}

/// One individual of the fully nested cohort, potential outcomes included.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortRow {
    pub x: Vec<f64>,
    pub in_trial: bool,
    pub part: Part,
    pub arm: Option<Arm>,
    pub y0: f64,
    pub y1: f64,
    /// Observed outcome, trial participants only.
    pub y: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FullCohort {
    pub rows: Vec<CohortRow>,
    pub outcome_kind: OutcomeKind,
    pub dim: usize,
}

fn draw_outcome<R: Rng + ?Sized>(scenario: &Scenario, arm: Arm, x: &[f64], rng: &mut R) -> f64 {
    match scenario.outcome_kind {
        OutcomeKind::Binary => {
            let p = scenario.conditional_mean(arm, x);
            f64::from(u8::from(rng.random::<f64>() < p))
        }
        OutcomeKind::Continuous => {
            let e: f64 = StandardNormal.sample(rng);
            scenario.conditional_mean(arm, x) + e
        }
    }
}

/// Draws the fully nested cohort, before any rows are dropped.
pub fn generate_full_nested<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> FullCohort {
    let dim = scenario.dim();
    let rows = (0..scenario.n_total)
        .map(|_| {
            let x: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
            let in_trial = rng.random::<f64>() < scenario.participation_prob(&x);
            let part = if rng.random::<f64>() < scenario.part_prob {
                Part::NonNested
            } else {
                Part::Nested
            };
            let arm = in_trial.then(|| {
                if rng.random::<f64>() < scenario.treat_prob {
                    Arm::Treated
                } else {
                    Arm::Control
                }
            });
            let y0 = draw_outcome(scenario, Arm::Control, &x, rng);
            let y1 = draw_outcome(scenario, Arm::Treated, &x, rng);
            let y = arm.map(|a| if a == Arm::Treated { y1 } else { y0 });
            CohortRow {
                x,
                in_trial,
                part,
                arm,
                y0,
                y1,
                y,
            }
        })
        .collect();
    FullCohort {
        rows,
        outcome_kind: scenario.outcome_kind,
        dim,
    }
}

/// Drops non-randomized rows of the non-nested part and hides potential
/// outcomes. Retained rows keep their order and values.
pub fn induce_partial_nesting(cohort: &FullCohort) -> PartialNestDataset {
    let observations = cohort
        .rows
        .iter()
        .filter(|r| r.in_trial || r.part == Part::Nested)
        .map(|r| Observation {
            x: r.x.clone(),
            part: r.part,
            in_trial: r.in_trial,
            arm: r.arm,
            y: r.y,
        })
        .collect();
    let names = (1..=cohort.dim).map(|j| format!("x{j}")).collect();
    PartialNestDataset::new(observations, names, cohort.outcome_kind)
        .expect("simulated rows satisfy the dataset invariants")
}

/// True target-population means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Truth {
    pub psi0: f64,
    pub psi1: f64,
    pub ate: f64,
}

impl Truth {
    pub fn get(&self, estimand: Estimand) -> f64 {
        match estimand {
            Estimand::Psi0 => self.psi0,
            Estimand::Psi1 => self.psi1,
            Estimand::Ate => self.ate,
        }
    }
}

/// Monte Carlo `E[Y^a | P = 0]` from `draws` cohort members.
///
/// Covariates come in antithetic pairs `(x, -x)` sharing one part draw, and
/// each retained member contributes its conditional mean `E[Y^a | X]` rather
/// than a Bernoulli or noisy draw; both keep the estimate unbiased. Since the
/// part indicator is independent of everything else in these scenarios, the
/// result also estimates `E[Y^a]`.
pub fn monte_carlo_truth<R: Rng + ?Sized>(scenario: &Scenario, draws: usize, rng: &mut R) -> Truth {
    let dim = scenario.dim();
    let mut x = vec![0.0; dim];
    let mut neg = vec![0.0; dim];
    let mut sums = [0.0_f64; 2];
    let mut count = 0usize;
    for _ in 0..draws.div_ceil(2) {
        for (xi, ni) in x.iter_mut().zip(neg.iter_mut()) {
            *xi = StandardNormal.sample(rng);
            *ni = -*xi;
        }
        if rng.random::<f64>() < scenario.part_prob {
            continue;
        }
        for arm in Arm::BOTH {
            sums[arm.index()] +=
                scenario.conditional_mean(arm, &x) + scenario.conditional_mean(arm, &neg);
        }
        count += 2;
    }
    let psi0 = sums[0] / count as f64;
    let psi1 = sums[1] / count as f64;
    Truth {
        psi0,
        psi1,
        ate: (sums[1] - sums[0]) / count as f64,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationConfig {
    pub runs: usize,
    /// Zero disables the bootstrap.
    pub bootstrap_replicates: usize,
    pub stratified_bootstrap: bool,
    pub seed: u64,
    pub truth_draws: usize,
    pub nuisances: NuisanceConfig,
}

impl ReplicationConfig {
    pub fn new(runs: usize, bootstrap_replicates: usize, seed: u64) -> Self {
        ReplicationConfig {
            runs,
            bootstrap_replicates,
            stratified_bootstrap: false,
            seed,
            truth_draws: DEFAULT_TRUTH_DRAWS,
            nuisances: NuisanceConfig::default(),
        }
    }
}

/// Per-run results, indexed `[EstimatorKind::ALL position][Estimand::index]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run: usize,
    pub n: usize,
    pub estimates: [[f64; 3]; 4],
    pub sandwich: [[IntervalEstimate; 3]; 4],
    pub bootstrap: Option<[[IntervalEstimate; 3]; 4]>,
    pub weight_sum_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub kind: EstimatorKind,
    pub estimand: Estimand,
    /// `sqrt(n_total) * mean(estimate - truth)`
    pub scaled_bias: f64,
    /// `sqrt(n_total) * sd(estimate)`
    pub scaled_sd: f64,
    pub coverage_sandwich: f64,
    pub coverage_bootstrap: Option<f64>,
    /// Mean standard errors, scaled like the SD.
    pub scaled_mean_se_sandwich: f64,
    pub scaled_mean_se_bootstrap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationReport {
    pub scenario: Scenario,
    pub truth: Truth,
    pub runs: usize,
    pub failed_runs: usize,
    pub bootstrap_replicates: usize,
    pub seed: u64,
    pub cells: Vec<Cell>,
    pub records: Vec<RunRecord>,
}

fn kind_index(kind: EstimatorKind) -> usize {
    EstimatorKind::ALL.iter().position(|&k| k == kind).unwrap()
}

#[derive(Debug)]
enum RunFailure {
    Estimation(EstimationError),
    Inference(InferenceError),
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunFailure::Estimation(e) => write!(f, "{e}"),
            RunFailure::Inference(e) => write!(f, "{e}"),
        }
    }
}

/// Simulated dataset of run `run` under `seed`.
pub fn simulate_dataset(scenario: &Scenario, seed: u64, run: usize) -> PartialNestDataset {
    let mut rng = rng::stream(seed, Purpose::Cohort, run as u64);
    induce_partial_nesting(&generate_full_nested(scenario, &mut rng))
}

fn one_run(scenario: &Scenario, config: &ReplicationConfig, run: usize) -> Result<RunRecord, RunFailure> {
    let data = simulate_dataset(scenario, config.seed, run);
    let ns = fit_nuisances(&data, &config.nuisances).map_err(RunFailure::Estimation)?;
    let points =
        estimate_points(&data, &ns, &EstimatorKind::ALL).map_err(RunFailure::Estimation)?;
    let mut estimates = [[0.0; 3]; 4];
    let mut sandwich = [[IntervalEstimate::normal(0.0, 0.0, crate::inference::IntervalMethod::Sandwich); 3]; 4];
    for (k, point) in points.iter().enumerate() {
        estimates[k] = point.values();
        sandwich[k] = sandwich_intervals(&data, &ns, point.kind).map_err(RunFailure::Inference)?;
    }
    let bootstrap = if config.bootstrap_replicates > 0 {
        let options = BootstrapOptions {
            replicates: config.bootstrap_replicates,
            seed: rng::child_seed(config.seed, Purpose::Bootstrap, run as u64),
            stratified: config.stratified_bootstrap,
        };
        let boot = bootstrap_with_fit(&data, &config.nuisances, &ns, &EstimatorKind::ALL, &options)
            .map_err(RunFailure::Inference)?;
        let mut out = sandwich;
        for b in boot {
            out[kind_index(b.kind)] = b.normal;
        }
        Some(out)
    } else {
        None
    };
    let weight_sum_ratio = crate::estimators::weight_diagnostic(&data, &ns).weight_sum_ratio;
    Ok(RunRecord {
        run,
        n: data.len(),
        estimates,
        sandwich,
        bootstrap,
        weight_sum_ratio,
    })
}

/// Repeats generate / estimate / summarize `runs` times. Each run draws from
/// its own keyed random stream, so the report does not depend on scheduling.
pub fn run_replications(
    scenario: &Scenario,
    config: &ReplicationConfig,
) -> Result<SimulationReport, SimulationError> {
    scenario.validate()?;
    if config.runs == 0 {
        return Err(SimulationError::NoRuns);
    }
    let truth = monte_carlo_truth(
        scenario,
        config.truth_draws,
        &mut rng::stream(config.seed, Purpose::Truth, 0),
    );
    let results: Vec<Result<RunRecord, RunFailure>> = (0..config.runs)
        .into_par_iter()
        .map(|run| one_run(scenario, config, run))
        .collect();
    let failed = results.iter().filter(|r| r.is_err()).count();
    if failed as f64 > MAX_FAILED_RUN_FRACTION * config.runs as f64 {
        let first = results
            .iter()
            .find_map(|r| r.as_ref().err().map(|e| e.to_string()))
            .unwrap_or_default();
        return Err(SimulationError::TooManyFailedRuns {
            failed,
            runs: config.runs,
            first,
        });
    }
    let records: Vec<RunRecord> = results.into_iter().filter_map(Result::ok).collect();
    let cells = summarize(scenario, &truth, &records);
    Ok(SimulationReport {
        scenario: scenario.clone(),
        truth,
        runs: config.runs,
        failed_runs: failed,
        bootstrap_replicates: config.bootstrap_replicates,
        seed: config.seed,
        cells,
        records,
    })
}

fn summarize(scenario: &Scenario, truth: &Truth, records: &[RunRecord]) -> Vec<Cell> {
    let scale = (scenario.n_total as f64).sqrt();
    let mut cells = Vec::new();
    for (k, &kind) in EstimatorKind::ALL.iter().enumerate() {
        for estimand in Estimand::ALL {
            let e = estimand.index();
            let t = truth.get(estimand);
            let est: Vec<f64> = records.iter().map(|r| r.estimates[k][e]).collect();
            let coverage = |iv: &dyn Fn(&RunRecord) -> IntervalEstimate| {
                records.iter().filter(|r| iv(r).covers(t)).count() as f64 / records.len() as f64
            };
            let mean_se = |iv: &dyn Fn(&RunRecord) -> IntervalEstimate| {
                scale * records.iter().map(|r| iv(r).se).sum::<f64>() / records.len() as f64
            };
            let has_boot = records.first().is_some_and(|r| r.bootstrap.is_some());
            let boot = |r: &RunRecord| r.bootstrap.as_ref().expect("bootstrap recorded")[k][e];
            cells.push(Cell {
                kind,
                estimand,
                scaled_bias: scale * (stats::mean(&est) - t),
                scaled_sd: scale * stats::sd(&est),
                coverage_sandwich: coverage(&|r| r.sandwich[k][e]),
                coverage_bootstrap: has_boot.then(|| coverage(&boot)),
                scaled_mean_se_sandwich: mean_se(&|r| r.sandwich[k][e]),
                scaled_mean_se_bootstrap: has_boot.then(|| mean_se(&boot)),
            });
        }
    }
    cells
}

impl SimulationReport {
    pub fn cell(&self, kind: EstimatorKind, estimand: Estimand) -> &Cell {
        self.cells
            .iter()
            .find(|c| c.kind == kind && c.estimand == estimand)
            .expect("every kind/estimand cell is present")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "scenario,outcome,estimand,estimator,truth,scaled_bias,scaled_sd,coverage_sandwich,coverage_bootstrap,scaled_mean_se_sandwich,scaled_mean_se_bootstrap,runs,failed_runs,bootstrap_replicates,seed\n",
        );
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                self.scenario.label,
                self.scenario.outcome_kind,
                c.estimand,
                c.kind,
                self.truth.get(c.estimand),
                c.scaled_bias,
                c.scaled_sd,
                c.coverage_sandwich,
                opt(c.coverage_bootstrap),
                c.scaled_mean_se_sandwich,
                opt(c.scaled_mean_se_bootstrap),
                self.runs,
                self.failed_runs,
                self.bootstrap_replicates,
                self.seed
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        render_tables(std::slice::from_ref(self))
    }
}

/// Aligned bias, SD and coverage tables for one or more scenarios.
pub fn render_tables(reports: &[SimulationReport]) -> String {
    let mut out = String::new();
    let proposed = EstimatorKind::PROPOSED;
    let header = |out: &mut String, title: &str, cols: &[&str]| {
        let _ = writeln!(out, "{title}");
        let _ = write!(out, "{:<12} {:<12}", "Scenario", "Estimand");
        for c in cols {
            let _ = write!(out, " {c:>8}");
        }
        out.push('\n');
    };
    let rows = |out: &mut String, f: &dyn Fn(&SimulationReport, Estimand) -> Vec<String>| {
        for r in reports {
            for (i, e) in Estimand::ALL.iter().enumerate() {
                let name = if i == 0 { r.scenario.label.title() } else { "" };
                let _ = write!(out, "{:<12} {:<12}", name, e.label());
                for v in f(r, *e) {
                    let _ = write!(out, " {v:>8}");
                }
                out.push('\n');
            }
        }
        out.push('\n');
    };
    let fmt3 = |v: f64| format!("{v:.3}");

    header(&mut out, "Scaled bias", &["Trial", "g", "w", "aug"]);
    rows(&mut out, &|r, e| {
        EstimatorKind::ALL
            .iter()
            .map(|&k| fmt3(r.cell(k, e).scaled_bias))
            .collect()
    });
    header(&mut out, "Scaled standard deviation", &["Trial", "g", "w", "aug"]);
    rows(&mut out, &|r, e| {
        EstimatorKind::ALL
            .iter()
            .map(|&k| fmt3(r.cell(k, e).scaled_sd))
            .collect()
    });
    header(
        &mut out,
        "Coverage (sandwich | bootstrap)",
        &["sw g", "sw w", "sw aug", "bs g", "bs w", "bs aug"],
    );
    rows(&mut out, &|r, e| {
        let mut v: Vec<String> = proposed
            .iter()
            .map(|&k| fmt3(r.cell(k, e).coverage_sandwich))
            .collect();
        v.extend(proposed.iter().map(|&k| {
            r.cell(k, e)
                .coverage_bootstrap
                .map_or_else(|| "-".to_string(), fmt3)
        }));
        v
    });
    for r in reports {
        let _ = writeln!(
            out,
            "{} ({}): truth psi0={:.6} psi1={:.6} ate={:.6}; runs={} failed={} bootstrap={} seed={}",
            r.scenario.label.title(),
            r.scenario.outcome_kind,
            r.truth.psi0,
            r.truth.psi1,
            r.truth.ate,
            r.runs,
            r.failed_runs,
            r.bootstrap_replicates,
            r.seed
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenarios_validate() {
        for label in ScenarioLabel::ALL {
            let s = Scenario::standard(label, OutcomeKind::Binary);
            s.validate().unwrap();
            assert_eq!(s.zeta1.len(), 4);
            assert_eq!(label.key().parse::<ScenarioLabel>().unwrap(), label);
        }
        let mut s = Scenario::standard(ScenarioLabel::NoEm, OutcomeKind::Binary);
        s.part_prob = 1.0;
        assert!(s.validate().is_err());
        s.part_prob = 0.5;
        s.zeta1.pop();
        assert!(s.validate().is_err());
    }

    #[test]
    fn induce_drops_only_unsampled_rows() {
        let row = |in_trial, part, arm: Option<Arm>| CohortRow {
            x: vec![0.1, 0.2, 0.3],
            in_trial,
            part,
            arm,
            y0: 0.0,
            y1: 1.0,
            y: arm.map(|a| f64::from(a.indicator())),
        };
        let cohort = FullCohort {
            rows: vec![
                row(true, Part::Nested, Some(Arm::Treated)),
                row(false, Part::Nested, None),
                row(true, Part::NonNested, Some(Arm::Control)),
                row(false, Part::NonNested, None),
            ],
            outcome_kind: OutcomeKind::Binary,
            dim: 3,
        };
        let d = induce_partial_nesting(&cohort);
        assert_eq!(d.len(), 3);
        assert_eq!(d.n0(), 2);
        assert_eq!(d.n1(), 1);
        assert_eq!(d.observations()[2].y, Some(0.0));
    }

    #[test]
    fn continuous_truth_is_intercept() {
        let s = Scenario::standard(ScenarioLabel::StrongEm, OutcomeKind::Continuous);
        let t = monte_carlo_truth(&s, 10_000, &mut rng::stream(1, Purpose::Truth, 0));
        assert!((t.psi0 - 0.5).abs() < 1e-12);
        assert!((t.psi1 - 1.0).abs() < 1e-12);
    }
}
