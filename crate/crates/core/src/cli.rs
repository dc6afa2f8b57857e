//! Command-line front end: `analyze`, `simulate` and `diagnose`.
//!
//! Exit codes: 0 on success, 2 for input validation or usage errors, 3 for
//! estimation failures (positivity, separation, too many failed runs).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::data::{self, DataError, OutcomeKind, PartialNestDataset};
use crate::estimators::{
    estimate_points, fit_nuisances, weight_diagnostic, Estimand, EstimateReport, EstimationError,
    EstimatorKind, NuisanceConfig, TreatmentSpec, WeightDiagnostics,
};
use crate::inference::{bootstrap_with_fit, sandwich_intervals, BootstrapOptions, InferenceError};
use crate::simulation::{
    render_tables, run_replications, ReplicationConfig, Scenario, ScenarioLabel, SimulationError,
    SimulationReport, DEFAULT_TRUTH_DRAWS,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error("cannot write output: {0}")]
    Output(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Data(_) => 2,
            CliError::Estimation(_) | CliError::Inference(_) | CliError::Simulation(_) => 3,
            CliError::Output(_) => 1,
        }
    }

    pub fn category(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Data(_) => "validation",
            CliError::Estimation(_) => "estimation",
            CliError::Inference(_) => "inference",
            CliError::Simulation(_) => "simulation",
            CliError::Output(_) => "output",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "partnest", version, about = "Target-population estimates for partially nested trials")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Worker threads for bootstrap and simulation (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate psi(0), psi(1) and the ATE from a CSV file.
    Analyze(AnalyzeArgs),
    /// Run the replication study for a scenario.
    Simulate(SimulateArgs),
    /// Weight-sum ratio, positivity percentiles and the part-exchangeability test.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InferenceChoice {
    Sandwich,
    Boot,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutcomeChoice {
    Binary,
    Continuous,
}

impl From<OutcomeChoice> for OutcomeKind {
    fn from(c: OutcomeChoice) -> Self {
        match c {
            OutcomeChoice::Binary => OutcomeKind::Binary,
            OutcomeChoice::Continuous => OutcomeKind::Continuous,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Comma-separated covariate columns (default: every column except p, s, a, y).
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    /// Outcome type (default: binary when every outcome is 0 or 1).
    #[arg(long, value_enum)]
    pub outcome: Option<OutcomeChoice>,
    /// Use this known probability of a = 1 instead of a treatment model.
    #[arg(long)]
    pub known_treat_prob: Option<f64>,
    /// Divide weighted sums by the weight total instead of the target count.
    #[arg(long)]
    pub normalized_weights: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_delimiter = ',', default_value = "g,w,aug")]
    pub estimators: Vec<EstimatorKind>,
    #[arg(long, value_enum, default_value = "both")]
    pub inference: InferenceChoice,
    #[arg(long, default_value_t = 1000)]
    pub boot: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub stratified_boot: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// no_em, moderate_em, strong_em or all.
    #[arg(long)]
    pub scenario: String,
    #[arg(long, value_enum, default_value = "binary")]
    pub outcome: OutcomeChoice,
    #[arg(long, default_value_t = 1000)]
    pub runs: usize,
    /// Bootstrap replicates per run; 0 skips the bootstrap.
    #[arg(long, default_value_t = 1000)]
    pub boot: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_TRUTH_DRAWS)]
    pub truth_draws: usize,
    #[arg(long)]
    pub stratified_boot: bool,
    #[arg(long)]
    pub known_treat_prob: Option<f64>,
    #[arg(long)]
    pub normalized_weights: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub input: InputArgs,
}

fn nuisance_config(known: Option<f64>, normalized: bool) -> Result<NuisanceConfig, CliError> {
    let treatment = match known {
        Some(p) if p > 0.0 && p < 1.0 => TreatmentSpec::Known(p),
        Some(p) => {
            return Err(CliError::Usage(format!(
                "--known-treat-prob must lie strictly between 0 and 1, got {p}"
            )))
        }
        None => TreatmentSpec::Estimated(Default::default()),
    };
    Ok(NuisanceConfig {
        treatment,
        normalized_weights: normalized,
        ..NuisanceConfig::default()
    })
}

/// Reads the input CSV, inferring covariates and outcome type when not given.
pub fn load_input(args: &InputArgs) -> Result<PartialNestDataset, CliError> {
    let covariates: Vec<String> = match &args.covariates {
        Some(c) => c.clone(),
        None => {
            let mut rdr = csv::Reader::from_path(&args.input).map_err(DataError::from)?;
            rdr.headers()
                .map_err(DataError::from)?
                .iter()
                .map(str::trim)
                .filter(|h| !["p", "s", "a", "y"].contains(h))
                .map(String::from)
                .collect()
        }
    };
    let names: Vec<&str> = covariates.iter().map(String::as_str).collect();
    let kind = match args.outcome {
        Some(k) => k.into(),
        None => {
            let d = data::parse_csv(&args.input, &names, OutcomeKind::Continuous)?;
            let binary = d
                .observations()
                .iter()
                .filter_map(|o| o.y)
                .all(|y| y == 0.0 || y == 1.0);
            if !binary {
                return Ok(d);
            }
            OutcomeKind::Binary
        }
    };
    Ok(data::parse_csv(&args.input, &names, kind)?)
}

/// Everything `analyze` computes.
#[derive(Debug, Clone)]
pub struct AnalysisOutput {
    pub reports: Vec<EstimateReport>,
    pub csv: String,
    pub text: String,
}

pub fn analyze(args: &AnalyzeArgs) -> Result<AnalysisOutput, CliError> {
    let data = load_input(&args.input)?;
    let config = nuisance_config(args.input.known_treat_prob, args.input.normalized_weights)?;
    let want_boot = matches!(args.inference, InferenceChoice::Boot | InferenceChoice::Both);
    let want_sandwich = matches!(args.inference, InferenceChoice::Sandwich | InferenceChoice::Both);
    if want_boot && args.seed.is_none() {
        return Err(CliError::Usage("--seed is required for the bootstrap".into()));
    }
    let mut kinds = args.estimators.clone();
    kinds.sort();
    kinds.dedup();

    let ns = fit_nuisances(&data, &config)?;
    let diagnostics = weight_diagnostic(&data, &ns);
    let points = estimate_points(&data, &ns, &kinds)?;
    let mut reports: Vec<EstimateReport> = points
        .iter()
        .map(|p| EstimateReport::new(*p, diagnostics.clone()))
        .collect();
    if want_sandwich {
        for r in &mut reports {
            r.sandwich = Some(sandwich_intervals(&data, &ns, r.estimator_kind)?);
        }
    }
    if want_boot {
        let options = BootstrapOptions {
            replicates: args.boot,
            seed: args.seed.unwrap_or_default(),
            stratified: args.stratified_boot,
        };
        let boot = bootstrap_with_fit(&data, &config, &ns, &kinds, &options)?;
        for (r, b) in reports.iter_mut().zip(boot) {
            r.bootstrap = Some(b);
        }
    }

    let csv = analysis_csv(&reports);
    let text = analysis_text(&data, &reports, &diagnostics);
    if let Some(dir) = &args.input.out {
        write_outputs(dir, "analysis", &csv, &text)?;
        write_outputs(dir, "diagnostics", &diagnostics_csv(&diagnostics), &diagnostics_text(&diagnostics))?;
    }
    Ok(AnalysisOutput { reports, csv, text })
}

fn write_outputs(dir: &Path, stem: &str, csv: &str, text: &str) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(format!("{stem}.csv")), csv)?;
    std::fs::write(dir.join(format!("{stem}.txt")), text)?;
    Ok(())
}

/// One row per estimator, estimand and interval method. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn analysis_csv(reports: &[EstimateReport]) -> String {
    let mut out = String::from("estimator,estimand,estimate,method,se,lower,upper\n");
    for r in reports {
        let points = [r.psi0, r.psi1, r.ate];
        for e in Estimand::ALL {
            let mut intervals = Vec::new();
            if let Some(s) = &r.sandwich {
                intervals.push(s[e.index()]);
            }
            if let Some(b) = &r.bootstrap {
                intervals.push(b.normal[e.index()]);
                intervals.push(b.percentile[e.index()]);
            }
            if intervals.is_empty() {
                let _ = writeln!(out, "{},{},{},none,,,", r.estimator_kind, e, points[e.index()]);
            }
            for iv in intervals {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    r.estimator_kind,
                    e,
                    points[e.index()],
                    iv.method,
                    iv.se,
                    iv.lower,
                    iv.upper
                );
            }
        }
    }
    out
}

fn analysis_text(
    data: &PartialNestDataset,
    reports: &[EstimateReport],
    diagnostics: &WeightDiagnostics,
) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "n = {} (n0 = {}, n1 = {}, trial = {}), outcome: {}",
        data.len(),
        data.n0(),
        data.n1(),
        data.n_trial(),
        data.outcome_kind()
    );
    let _ = writeln!(
        out,
        "{:<6} {:<12} {:>10} {:>22} {:>10} {:>10} {:>10}",
        "est", "estimand", "estimate", "method", "se", "lower", "upper"
    );
    for r in reports {
        let points = [r.psi0, r.psi1, r.ate];
        for e in Estimand::ALL {
            let mut rows = Vec::new();
            if let Some(s) = &r.sandwich {
                rows.push(s[e.index()]);
            }
            if let Some(b) = &r.bootstrap {
                rows.push(b.normal[e.index()]);
                rows.push(b.percentile[e.index()]);
            }
            if rows.is_empty() {
                let _ = writeln!(out, "{:<6} {:<12} {:>10.5}", r.estimator_kind.label(), e.label(), points[e.index()]);
            }
            for iv in rows {
                let _ = writeln!(
                    out,
                    "{:<6} {:<12} {:>10.5} {:>22} {:>10.5} {:>10.5} {:>10.5}",
                    r.estimator_kind.label(),
                    e.label(),
                    points[e.index()],
                    iv.method.to_string(),
                    iv.se,
                    iv.lower,
                    iv.upper
                );
            }
        }
        if let Some(b) = &r.bootstrap {
            if b.failed > 0 {
                let _ = writeln!(
                    out,
                    "warning: {} of {} bootstrap replicates failed and were dropped ({})",
                    b.failed,
                    b.failed + b.replicates_used,
                    r.estimator_kind
                );
            }
        }
    }
    out.push('\n');
    out.push_str(&diagnostics_text(diagnostics));
    out
}

pub fn diagnostics_csv(d: &WeightDiagnostics) -> String {
    let mut out = String::from("quantity,value\n");
    let _ = writeln!(out, "weight_sum_ratio,{}", d.weight_sum_ratio);
    let _ = writeln!(out, "weight_ratio_flag,{}", d.weight_ratio_flag);
    let _ = writeln!(out, "min_participation_prob,{}", d.min_participation_prob);
    for (pct, v) in d.participation_prob_percentiles {
        let _ = writeln!(out, "participation_prob_p{pct},{v}");
    }
    let _ = writeln!(out, "low_participation_flag,{}", d.low_participation_flag);
    match &d.part_exchangeability {
        Some(t) => {
            let _ = writeln!(out, "part_exchangeability_stat,{}", t.statistic);
            let _ = writeln!(out, "part_exchangeability_df,{}", t.df);
            let _ = writeln!(out, "part_exchangeability_p_value,{}", t.p_value);
        }
        None => {
            let _ = writeln!(out, "part_exchangeability_stat,not_applicable");
        }
    }
    out
}

pub fn diagnostics_text(d: &WeightDiagnostics) -> String {
    let mut out = String::from("Diagnostics\n");
    let flag = |b: bool| if b { "  [FLAG]" } else { "" };
    let _ = writeln!(
        out,
        "  weight-sum ratio: {:.4}{}",
        d.weight_sum_ratio,
        flag(d.weight_ratio_flag)
    );
    let _ = writeln!(out, "  min fitted participation prob (p = 0 rows): {:.4e}", d.min_participation_prob);
    let pcts: Vec<String> = d
        .participation_prob_percentiles
        .iter()
        .map(|(p, v)| format!("p{p}={v:.4}"))
        .collect();
    let _ = writeln!(
        out,
        "  participation prob percentiles: {}{}",
        pcts.join(" "),
        flag(d.low_participation_flag)
    );
    match &d.part_exchangeability {
        Some(t) => {
            let _ = writeln!(
                out,
                "  part exchangeability: chi2({}) = {:.4}, p = {:.4}",
                t.df, t.statistic, t.p_value
            );
        }
        None => out.push_str("  part exchangeability: not applicable (trial rows in one part only)\n"),
    }
    out
}

pub fn diagnose(args: &DiagnoseArgs) -> Result<(WeightDiagnostics, String), CliError> {
    let data = load_input(&args.input)?;
    let config = nuisance_config(args.input.known_treat_prob, args.input.normalized_weights)?;
    let ns = fit_nuisances(&data, &config)?;
    let diagnostics = weight_diagnostic(&data, &ns);
    let text = diagnostics_text(&diagnostics);
    if let Some(dir) = &args.input.out {
        write_outputs(dir, "diagnostics", &diagnostics_csv(&diagnostics), &text)?;
    }
    Ok((diagnostics, text))
}

pub fn simulate(args: &SimulateArgs) -> Result<(Vec<SimulationReport>, String), CliError> {
    let seed = args
        .seed
        .ok_or_else(|| CliError::Usage("--seed is required for simulate".into()))?;
    let labels: Vec<ScenarioLabel> = if args.scenario == "all" {
        ScenarioLabel::ALL.to_vec()
    } else {
        vec![args.scenario.parse().map_err(CliError::Usage)?]
    };
    let config = ReplicationConfig {
        runs: args.runs,
        bootstrap_replicates: args.boot,
        stratified_bootstrap: args.stratified_boot,
        seed,
        truth_draws: args.truth_draws,
        nuisances: nuisance_config(args.known_treat_prob, args.normalized_weights)?,
    };
    let reports = labels
        .iter()
        .map(|&l| run_replications(&Scenario::standard(l, args.outcome.into()), &config))
        .collect::<Result<Vec<_>, _>>()?;
    let text = render_tables(&reports);
    if let Some(dir) = &args.out {
        let csv: String = reports
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let c = r.to_csv();
                if i == 0 {
                    c
                } else {
                    c.split_once('\n').map(|(_, rest)| rest.to_string()).unwrap_or_default()
                }
            })
            .collect();
        write_outputs(dir, "simulation", &csv, &text)?;
    }
    Ok((reports, text))
}

/// Runs the CLI on `args` and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.threads {
        // fails only if a pool already exists, which keeps its size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let result = match &cli.command {
        Command::Analyze(a) => analyze(a).map(|o| o.text),
        Command::Simulate(a) => simulate(a).map(|(_, t)| t),
        Command::Diagnose(a) => diagnose(a).map(|(_, t)| t),
    };
    match result {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("error[code={}][{}]: {e}", e.exit_code(), e.category());
            e.exit_code()
        }
    }
}
