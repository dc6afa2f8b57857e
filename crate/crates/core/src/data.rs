//! Observations and datasets for the partially nested trial design.
//!
//! Every stored row is a sampled individual. In the nested part (`p = 0`) the
//! trial is embedded in a cohort of trial-eligible individuals, so both
//! randomized (`s = 1`) and non-randomized (`s = 0`) rows appear. In the
//! non-nested part (`p = 1`) only randomized individuals are collected.
//! Treatment and outcome are only ever read from randomized rows.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use thiserror::Error;

/// Which part of the study a row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Part {
    /// `p = 0`: the trial is nested in a cohort of eligible individuals.
    Nested,
    /// `p = 1`: only trial participants were collected.
    NonNested,
}

impl Part {
    pub fn indicator(self) -> u8 {
        match self {
            Part::Nested => 0,
            Part::NonNested => 1,
        }
    }
}

/// Randomized treatment arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Arm {
    Control,
    Treated,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Control, Arm::Treated];

    pub fn indicator(self) -> u8 {
        match self {
            Arm::Control => 0,
            Arm::Treated => 1,
        }
    }

    pub fn index(self) -> usize {
        self.indicator() as usize
    }

    pub fn from_indicator(v: u8) -> Option<Arm> {
        match v {
            0 => Some(Arm::Control),
            1 => Some(Arm::Treated),
            _ => None,
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.indicator())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutcomeKind {
    Binary,
    Continuous,
}

impl fmt::Display for OutcomeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OutcomeKind::Binary => f.write_str("binary"),
            OutcomeKind::Continuous => f.write_str("continuous"),
        }
    }
}

/// Row-level rules every observation must satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    /// `s = 0` rows carry no treatment or outcome.
    NoTreatmentDataOutsideTrial,
    /// `s = 1` rows carry both treatment and outcome.
    TrialRowsComplete,
    /// `p = 1` implies `s = 1`.
    PartialNesting,
    /// Binary datasets only hold outcomes in {0, 1}.
    BinaryOutcome,
    /// Covariates and outcomes must be finite.
    FiniteValues,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = match self {
            Rule::NoTreatmentDataOutsideTrial => {
                "no-treatment-data rule: s = 0 rows must leave a and y empty"
            }
            Rule::TrialRowsComplete => "trial-row rule: s = 1 rows must carry both a and y",
            Rule::PartialNesting => {
                "partial-nesting rule: p = 1 rows must be trial participants (s = 1)"
            }
            Rule::BinaryOutcome => "binary-outcome rule: y must be 0 or 1",
            Rule::FiniteValues => "finite-value rule: covariates and y must be finite",
        };
        f.write_str(msg)
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: covariate `{column}` is not numeric ({value:?})")]
    NonNumericCovariate {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: column `{column}` has invalid value {value:?}")]
    InvalidField {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: violates the {rule}")]
    InvariantViolation { row: usize, rule: Rule },
    #[error("row {row}: expected {expected} covariates, found {found}")]
    DimensionMismatch {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("dataset has no rows")]
    Empty,
    #[error("row subset is empty")]
    EmptySubset,
}

/// One sampled individual.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub x: Vec<f64>,
    pub part: Part,
    pub in_trial: bool,
    pub arm: Option<Arm>,
    pub y: Option<f64>,
}

impl Observation {
    /// A randomized individual from either part.
    pub fn randomized(x: Vec<f64>, part: Part, arm: Arm, y: f64) -> Self {
        Observation {
            x,
            part,
            in_trial: true,
            arm: Some(arm),
            y: Some(y),
        }
    }

    /// A non-randomized individual; these only exist in the nested part.
    pub fn non_randomized(x: Vec<f64>) -> Self {
        Observation {
            x,
            part: Part::Nested,
            in_trial: false,
            arm: None,
            y: None,
        }
    }

    pub fn is_target(&self) -> bool {
        self.part == Part::Nested
    }

    /// True for randomized rows assigned to `arm`.
    pub fn in_arm(&self, arm: Arm) -> bool {
        self.in_trial && self.arm == Some(arm)
    }

    pub fn check(&self, kind: OutcomeKind) -> Result<(), Rule> {
        if self.part == Part::NonNested && !self.in_trial {
            return Err(Rule::PartialNesting);
        }
        if self.in_trial {
            if self.arm.is_none() || self.y.is_none() {
                return Err(Rule::TrialRowsComplete);
            }
        } else if self.arm.is_some() || self.y.is_some() {
            return Err(Rule::NoTreatmentDataOutsideTrial);
        }
        if self.x.iter().any(|v| !v.is_finite()) || self.y.is_some_and(|y| !y.is_finite()) {
            return Err(Rule::FiniteValues);
        }
        if kind == OutcomeKind::Binary && self.y.is_some_and(|y| y != 0.0 && y != 1.0) {
            return Err(Rule::BinaryOutcome);
        }
        Ok(())
    }
}

/// A validated collection of observations. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialNestDataset {
    observations: Vec<Observation>,
    covariate_names: Vec<String>,
    n0: usize,
    n1: usize,
    outcome_kind: OutcomeKind,
}

impl PartialNestDataset {
    pub fn new(
        observations: Vec<Observation>,
        covariate_names: Vec<String>,
        outcome_kind: OutcomeKind,
    ) -> Result<Self, DataError> {
        if observations.is_empty() {
            return Err(DataError::Empty);
        }
        let dim = covariate_names.len();
        let mut n0 = 0;
        for (row, obs) in observations.iter().enumerate() {
            if obs.x.len() != dim {
                return Err(DataError::DimensionMismatch {
                    row,
                    expected: dim,
                    found: obs.x.len(),
                });
            }
            obs.check(outcome_kind)
                .map_err(|rule| DataError::InvariantViolation { row, rule })?;
            if obs.is_target() {
                n0 += 1;
            }
        }
        let n1 = observations.len() - n0;
        Ok(PartialNestDataset {
            observations,
            covariate_names,
            n0,
            n1,
            outcome_kind,
        })
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn dim(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Rows with `p = 0`.
    pub fn n0(&self) -> usize {
        self.n0
    }

    /// Rows with `p = 1`.
    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn outcome_kind(&self) -> OutcomeKind {
        self.outcome_kind
    }

    pub fn n_trial(&self) -> usize {
        self.observations.iter().filter(|o| o.in_trial).count()
    }

    /// A new dataset made of the rows at `indices` (repeats allowed). Rows are
    /// already valid so only the counts are recomputed.
    pub fn resample(&self, indices: &[usize]) -> PartialNestDataset {
        let observations: Vec<Observation> = indices
            .iter()
            .map(|&i| self.observations[i].clone())
            .collect();
        let n0 = observations.iter().filter(|o| o.is_target()).count();
        PartialNestDataset {
            n1: observations.len() - n0,
            n0,
            observations,
            covariate_names: self.covariate_names.clone(),
            outcome_kind: self.outcome_kind,
        }
    }

    /// Same rows with every trial outcome replaced by `f(y)`.
    pub fn map_outcomes(&self, f: impl Fn(f64) -> f64) -> Result<Self, DataError> {
        let observations = self
            .observations
            .iter()
            .map(|o| Observation {
                y: o.y.map(&f),
                ..o.clone()
            })
            .collect();
        PartialNestDataset::new(observations, self.covariate_names.clone(), self.outcome_kind)
    }

    /// Writes the dataset in the ingestion CSV layout.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.covariate_names.iter().map(String::as_str).collect();
        header.extend(["p", "s", "a", "y"]);
        w.write_record(&header)?;
        for obs in &self.observations {
            let mut record: Vec<String> = obs.x.iter().map(|v| v.to_string()).collect();
            record.push(obs.part.indicator().to_string());
            record.push(u8::from(obs.in_trial).to_string());
            record.push(obs.arm.map(|a| a.to_string()).unwrap_or_default());
            record.push(obs.y.map(|y| y.to_string()).unwrap_or_default());
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)
            .expect("writing to an in-memory buffer cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Reads and validates a dataset from a CSV file.
pub fn parse_csv(
    path: impl AsRef<Path>,
    covariate_columns: &[&str],
    outcome_kind: OutcomeKind,
) -> Result<PartialNestDataset, DataError> {
    let file = std::fs::File::open(path)?;
    read_csv(std::io::BufReader::new(file), covariate_columns, outcome_kind)
}

/// Like [`parse_csv`] but from any reader.
pub fn read_csv<R: Read>(
    reader: R,
    covariate_columns: &[&str],
    outcome_kind: OutcomeKind,
) -> Result<PartialNestDataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| -> Result<usize, DataError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let cov_idx: Vec<usize> = covariate_columns
        .iter()
        .map(|c| column(c))
        .collect::<Result<_, _>>()?;
    let (p_idx, s_idx, a_idx, y_idx) = (column("p")?, column("s")?, column("a")?, column("y")?);

    let mut observations = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let field = |idx: usize| record.get(idx).unwrap_or("");
        let invalid = |name: &str, value: &str| DataError::InvalidField {
            row,
            column: name.to_string(),
            value: value.to_string(),
        };

        let mut x = Vec::with_capacity(cov_idx.len());
        for (&idx, name) in cov_idx.iter().zip(covariate_columns) {
            let raw = field(idx);
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => x.push(v),
                _ => {
                    return Err(DataError::NonNumericCovariate {
                        row,
                        column: name.to_string(),
                        value: raw.to_string(),
                    })
                }
            }
        }
        let part = match field(p_idx) {
            "0" => Part::Nested,
            "1" => Part::NonNested,
            other => return Err(invalid("p", other)),
        };
        let in_trial = match field(s_idx) {
            "0" => false,
            "1" => true,
            other => return Err(invalid("s", other)),
        };
        let arm = match field(a_idx) {
            "" => None,
            "0" => Some(Arm::Control),
            "1" => Some(Arm::Treated),
            other => return Err(invalid("a", other)),
        };
        let y = match field(y_idx) {
            "" => None,
            raw => match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Some(v),
                _ => return Err(invalid("y", raw)),
            },
        };
        let obs = Observation {
            x,
            part,
            in_trial,
            arm,
            y,
        };
        obs.check(outcome_kind)
            .map_err(|rule| DataError::InvariantViolation { row, rule })?;
        observations.push(obs);
    }
    PartialNestDataset::new(
        observations,
        covariate_columns.iter().map(|s| s.to_string()).collect(),
        outcome_kind,
    )
}

/// How covariates enter a regression. The intercept is always prepended.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum FeatureSet {
    /// Intercept plus every covariate.
    #[default]
    MainEffects,
    /// Intercept only.
    InterceptOnly,
    /// Intercept plus the listed covariate columns.
    Columns(Vec<usize>),
    /// Intercept, main effects, squares and pairwise products.
    Quadratic,
}

impl FeatureSet {
    pub fn width(&self, dim: usize) -> usize {
        match self {
            FeatureSet::MainEffects => 1 + dim,
            FeatureSet::InterceptOnly => 1,
            FeatureSet::Columns(cols) => 1 + cols.len(),
            FeatureSet::Quadratic => 1 + dim + dim * (dim + 1) / 2,
        }
    }

    /// Expands one covariate vector into `out` (cleared first).
    pub fn expand_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.push(1.0);
        match self {
            FeatureSet::MainEffects => out.extend_from_slice(x),
            FeatureSet::InterceptOnly => {}
            FeatureSet::Columns(cols) => out.extend(cols.iter().map(|&c| x[c])),
            FeatureSet::Quadratic => {
                out.extend_from_slice(x);
                for i in 0..x.len() {
                    for j in i..x.len() {
                        out.push(x[i] * x[j]);
                    }
                }
            }
        }
    }

    pub fn expand(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.width(x.len()));
        self.expand_into(x, &mut out);
        out
    }
}

/// Intercept-prepended covariates for the selected rows, in dataset order,
/// together with the dataset index of each matrix row.
pub fn design_matrix(
    data: &PartialNestDataset,
    subset: impl Fn(&Observation) -> bool,
) -> Result<(DMatrix<f64>, Vec<usize>), DataError> {
    design_matrix_with(data, subset, &FeatureSet::MainEffects)
}

pub fn design_matrix_with(
    data: &PartialNestDataset,
    subset: impl Fn(&Observation) -> bool,
    features: &FeatureSet,
) -> Result<(DMatrix<f64>, Vec<usize>), DataError> {
    let rows: Vec<usize> = data
        .observations()
        .iter()
        .enumerate()
        .filter(|(_, o)| subset(o))
        .map(|(i, _)| i)
        .collect();
    if rows.is_empty() {
        return Err(DataError::EmptySubset);
    }
    let matrix = feature_matrix(
        rows.iter().map(|&i| data.observations()[i].x.as_slice()),
        rows.len(),
        data.dim(),
        features,
    );
    Ok((matrix, rows))
}

/// Expanded features for an arbitrary sequence of covariate vectors.
pub(crate) fn feature_matrix<'a>(
    xs: impl Iterator<Item = &'a [f64]>,
    n: usize,
    dim: usize,
    features: &FeatureSet,
) -> DMatrix<f64> {
    let width = features.width(dim);
    let mut m = DMatrix::zeros(n, width);
    let mut buf = Vec::with_capacity(width);
    for (i, x) in xs.enumerate() {
        features.expand_into(x, &mut buf);
        for (j, v) in buf.iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "x,p,s,a,y\n1.0,0,1,1,1\n0.5,0,0,,\n-1,1,1,0,0\n";

    fn minimal() -> PartialNestDataset {
        read_csv(MINIMAL.as_bytes(), &["x"], OutcomeKind::Binary).unwrap()
    }

    #[test]
    fn parses_minimal_instance() {
        let d = minimal();
        assert_eq!(d.len(), 3);
        assert_eq!(d.n0(), 2);
        assert_eq!(d.n1(), 1);
        assert_eq!(d.observations()[1].arm, None);
        assert_eq!(d.observations()[2].x, vec![-1.0]);
    }

    #[test]
    fn rejects_non_nested_non_randomized_row() {
        let csv = "x,p,s,a,y\n1.0,0,1,1,1\n0.3,1,0,,\n";
        match read_csv(csv.as_bytes(), &["x"], OutcomeKind::Binary) {
            Err(DataError::InvariantViolation { row, rule }) => {
                assert_eq!(row, 1);
                assert_eq!(rule, Rule::PartialNesting);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_treatment_outside_trial() {
        let csv = "x,p,s,a,y\n0.5,0,0,1,\n";
        let err = read_csv(csv.as_bytes(), &["x"], OutcomeKind::Binary).unwrap_err();
        assert!(matches!(
            err,
            DataError::InvariantViolation {
                row: 0,
                rule: Rule::NoTreatmentDataOutsideTrial
            }
        ));
        assert!(err.to_string().contains("no-treatment-data"));
    }

    #[test]
    fn rejects_sentinels_and_missing_columns() {
        let csv = "x,p,s,a,y\n0.5,0,1,1,NA\n";
        assert!(matches!(
            read_csv(csv.as_bytes(), &["x"], OutcomeKind::Continuous),
            Err(DataError::InvalidField { .. })
        ));
        let csv = "x,p,s,a,y\n0.5,0,1,-9,1\n";
        assert!(matches!(
            read_csv(csv.as_bytes(), &["x"], OutcomeKind::Continuous),
            Err(DataError::InvalidField { .. })
        ));
        let csv = "x,p,s,y\n0.5,0,1,1\n";
        assert!(matches!(
            read_csv(csv.as_bytes(), &["x"], OutcomeKind::Continuous),
            Err(DataError::MissingColumn(c)) if c == "a"
        ));
        let csv = "x,p,s,a,y\nabc,0,1,1,1\n";
        assert!(matches!(
            read_csv(csv.as_bytes(), &["x"], OutcomeKind::Continuous),
            Err(DataError::NonNumericCovariate { row: 0, .. })
        ));
    }

    #[test]
    fn rejects_incomplete_trial_row_and_non_binary_outcome() {
        let csv = "x,p,s,a,y\n0.5,0,1,1,\n";
        assert!(matches!(
            read_csv(csv.as_bytes(), &["x"], OutcomeKind::Continuous),
            Err(DataError::InvariantViolation {
                rule: Rule::TrialRowsComplete,
                ..
            })
        ));
        let csv = "x,p,s,a,y\n0.5,0,1,1,0.5\n";
        assert!(matches!(
            read_csv(csv.as_bytes(), &["x"], OutcomeKind::Binary),
            Err(DataError::InvariantViolation {
                rule: Rule::BinaryOutcome,
                ..
            })
        ));
        assert!(read_csv(csv.as_bytes(), &["x"], OutcomeKind::Continuous).is_ok());
    }

    #[test]
    fn design_matrix_prepends_intercept() {
        let d = minimal();
        let (m, rows) = design_matrix(&d, |_| true).unwrap();
        assert_eq!(m.shape(), (3, 2));
        assert!(m.column(0).iter().all(|&v| v == 1.0));
        assert_eq!(rows, vec![0, 1, 2]);

        let (m, rows) = design_matrix(&d, |o| o.in_trial).unwrap();
        assert_eq!(m.shape(), (2, 2));
        assert_eq!(rows, vec![0, 2]);
        assert_eq!(m[(1, 1)], -1.0);

        let err = design_matrix(&d, |o| o.part == Part::NonNested && !o.in_trial).unwrap_err();
        assert!(matches!(err, DataError::EmptySubset));
    }

    #[test]
    fn quadratic_features() {
        let f = FeatureSet::Quadratic;
        assert_eq!(f.width(2), 6);
        assert_eq!(f.expand(&[2.0, 3.0]), vec![1.0, 2.0, 3.0, 4.0, 6.0, 9.0]);
        assert_eq!(FeatureSet::Columns(vec![1]).expand(&[2.0, 3.0]), vec![1.0, 3.0]);
    }

    #[test]
    fn serializes_in_ingestion_layout() {
        let d = minimal();
        let text = d.to_csv_string();
        assert_eq!(text, "x,p,s,a,y\n1,0,1,1,1\n0.5,0,0,,\n-1,1,1,0,0\n");
        let back = read_csv(text.as_bytes(), &["x"], OutcomeKind::Binary).unwrap();
        assert_eq!(back, d);
    }
}
