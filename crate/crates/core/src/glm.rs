//! Unpenalized nuisance regressions: Bernoulli-logit by IRLS and Gaussian
//! identity by least squares.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Logistic,
    Linear,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GlmError {
    #[error("response has a single class")]
    OneClassResponse,
    #[error("response values must be 0 or 1")]
    NonBinaryResponse,
    #[error("separation detected: coefficient magnitude exceeded {bound} at iteration {iteration}")]
    SeparationDetected { iteration: usize, bound: f64 },
    #[error("information matrix is singular")]
    SingularInformation,
    #[error("design matrix is rank deficient (rank {rank} < {cols} columns)")]
    RankDeficient { rank: usize, cols: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("need at least {needed} rows, found {found}")]
    TooFewRows { needed: usize, found: usize },
}

/// A fitted regression and the record of how it got there.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub kind: ModelKind,
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Max-norm of the summed score at the returned coefficients.
    pub final_gradient_norm: f64,
    pub subset_description: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrlsOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub max_halvings: usize,
    pub separation_bound: f64,
    /// Starting coefficients; zeros when absent.
    pub start: Option<Vec<f64>>,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        IrlsOptions {
            tolerance: 1e-8,
            max_iterations: 50,
            max_halvings: 10,
            separation_bound: 30.0,
            start: None,
        }
    }
}

#[inline]
pub fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `ln(1 + e^eta)` without overflow.
#[inline]
fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

/// Bernoulli log-likelihood of `beta`.
pub fn logistic_log_likelihood(x: &DMatrix<f64>, y: &[f64], beta: &[f64]) -> f64 {
    let eta = x * DVector::from_column_slice(beta);
    eta.iter()
        .zip(y)
        .map(|(&e, &yi)| yi * e - softplus(e))
        .sum()
}

fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

struct LogisticState {
    loglik: f64,
    score: DVector<f64>,
    info: DMatrix<f64>,
}

/// Log-likelihood, summed score and information at `beta`. `scaled` is a
/// scratch matrix of the same shape as `x`.
fn logistic_state(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta: &DVector<f64>,
    scaled: &mut DMatrix<f64>,
) -> LogisticState {
    let eta = x * beta;
    let n = x.nrows();
    let mut resid = DVector::zeros(n);
    let mut w = DVector::zeros(n);
    let mut loglik = 0.0;
    for i in 0..n {
        let e = eta[i];
        let mu = expit(e);
        resid[i] = y[i] - mu;
        w[i] = mu * (1.0 - mu);
        loglik += y[i] * e - softplus(e);
    }
    for j in 0..x.ncols() {
        let src = x.column(j);
        let mut dst = scaled.column_mut(j);
        for i in 0..n {
            dst[i] = src[i] * w[i];
        }
    }
    LogisticState {
        loglik,
        score: x.tr_mul(&resid),
        info: x.tr_mul(scaled),
    }
}

fn solve_newton(info: &DMatrix<f64>, score: &DVector<f64>) -> Option<DVector<f64>> {
    let max_diag = info.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let chol = info.clone().cholesky()?;
    let l = chol.l_dirty();
    let min_pivot = (0..info.nrows()).fold(f64::INFINITY, |m, i| m.min(l[(i, i)] * l[(i, i)]));
    if !(min_pivot > 1e-13 * max_diag) {
        return None;
    }
    Some(chol.solve(score))
}

/// Maximum-likelihood logistic regression with default options.
pub fn fit_logistic(x: &DMatrix<f64>, y: &[f64]) -> Result<FittedModel, GlmError> {
    fit_logistic_with(x, y, &IrlsOptions::default())
}

/// Newton-Raphson / IRLS with step-halving. Stops when the max-norm of the
/// summed score drops to `tolerance`.
pub fn fit_logistic_with(
    x: &DMatrix<f64>,
    y: &[f64],
    options: &IrlsOptions,
) -> Result<FittedModel, GlmError> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(GlmError::DimensionMismatch {
            expected: n,
            found: y.len(),
        });
    }
    if n < 2 {
        return Err(GlmError::TooFewRows { needed: 2, found: n });
    }
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(GlmError::NonBinaryResponse);
    }
    let ones = y.iter().filter(|&&v| v == 1.0).count();
    if ones == 0 || ones == n {
        return Err(GlmError::OneClassResponse);
    }

    let y = DVector::from_column_slice(y);
    let mut beta = match &options.start {
        Some(s) if s.len() == p => DVector::from_column_slice(s),
        Some(s) => {
            return Err(GlmError::DimensionMismatch {
                expected: p,
                found: s.len(),
            })
        }
        None => DVector::zeros(p),
    };
    let mut scaled = DMatrix::zeros(n, p);
    let mut state = logistic_state(x, &y, &beta, &mut scaled);
    let mut iterations = 0;

    while max_abs(state.score.iter().copied()) > options.tolerance
        && iterations < options.max_iterations
    {
        let delta = solve_newton(&state.info, &state.score).ok_or(GlmError::SingularInformation)?;
        iterations += 1;
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=options.max_halvings {
            let candidate = &beta + &delta * step;
            let cand_state = logistic_state(x, &y, &candidate, &mut scaled);
            // Rounding can make a converging step look like a tiny decrease.
            if cand_state.loglik >= state.loglik - 1e-12 * (1.0 + state.loglik.abs()) {
                accepted = Some((candidate, cand_state));
                break;
            }
            step *= 0.5;
        }
        let Some((candidate, cand_state)) = accepted else {
            break;
        };
        if max_abs(candidate.iter().copied()) > options.separation_bound {
            return Err(GlmError::SeparationDetected {
                iteration: iterations,
                bound: options.separation_bound,
            });
        }
        beta = candidate;
        state = cand_state;
    }

    let final_gradient_norm = max_abs(state.score.iter().copied());
    Ok(FittedModel {
        kind: ModelKind::Logistic,
        coefficients: beta.iter().copied().collect(),
        converged: final_gradient_norm <= options.tolerance,
        iterations,
        final_gradient_norm,
        subset_description: String::new(),
    })
}

/// Ordinary least squares through a singular value decomposition.
pub fn fit_linear(x: &DMatrix<f64>, y: &[f64]) -> Result<FittedModel, GlmError> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(GlmError::DimensionMismatch {
            expected: n,
            found: y.len(),
        });
    }
    if n < p || n == 0 {
        return Err(GlmError::TooFewRows {
            needed: p.max(1),
            found: n,
        });
    }
    let svd = x.clone().svd(true, true);
    let sv = &svd.singular_values;
    let largest = sv.iter().fold(0.0_f64, |m, v| m.max(*v));
    let cutoff = largest * 1e-10;
    let rank = sv.iter().filter(|&&s| s > cutoff).count();
    if rank < p {
        return Err(GlmError::RankDeficient { rank, cols: p });
    }
    let yv = DVector::from_column_slice(y);
    let beta = svd
        .solve(&yv, cutoff)
        .map_err(|_| GlmError::RankDeficient { rank, cols: p })?;
    let resid = &yv - x * &beta;
    let final_gradient_norm = max_abs(x.tr_mul(&resid).iter().copied());
    Ok(FittedModel {
        kind: ModelKind::Linear,
        coefficients: beta.iter().copied().collect(),
        converged: true,
        iterations: 1,
        final_gradient_norm,
        subset_description: String::new(),
    })
}

impl FittedModel {
    pub fn with_description(mut self, description: impl Into<String>) -> Self {
        self.subset_description = description.into();
        self
    }

    pub fn width(&self) -> usize {
        self.coefficients.len()
    }

    /// Mean response for one already-expanded feature row.
    #[inline]
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        predict_with(self.kind, &self.coefficients, row)
    }

    /// Summed score `X'(y - mu)` at the fitted coefficients.
    pub fn score(&self, x: &DMatrix<f64>, y: &[f64]) -> Result<DVector<f64>, GlmError> {
        let mu = predict(self, x)?;
        let resid = DVector::from_iterator(y.len(), y.iter().zip(&mu).map(|(a, b)| a - b));
        Ok(x.tr_mul(&resid))
    }

    /// Summed information `X'WX` (the negative Hessian of the log-likelihood for
    /// the logistic kind, the Gram matrix for the linear kind).
    pub fn information(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, GlmError> {
        let mu = predict(self, x)?;
        let mut scaled = x.clone();
        if self.kind == ModelKind::Logistic {
            for j in 0..x.ncols() {
                for (i, m) in mu.iter().enumerate() {
                    scaled[(i, j)] *= m * (1.0 - m);
                }
            }
        }
        Ok(x.tr_mul(&scaled))
    }
}

#[inline]
pub(crate) fn predict_with(kind: ModelKind, coefficients: &[f64], row: &[f64]) -> f64 {
    let eta: f64 = coefficients.iter().zip(row).map(|(b, x)| b * x).sum();
    match kind {
        ModelKind::Logistic => expit(eta),
        ModelKind::Linear => eta,
    }
}

/// Probabilities for the logistic kind, the linear predictor otherwise.
pub fn predict(model: &FittedModel, x: &DMatrix<f64>) -> Result<Vec<f64>, GlmError> {
    if x.ncols() != model.coefficients.len() {
        return Err(GlmError::DimensionMismatch {
            expected: model.coefficients.len(),
            found: x.ncols(),
        });
    }
    let eta = x * DVector::from_column_slice(&model.coefficients);
    Ok(match model.kind {
        ModelKind::Logistic => eta.iter().map(|&e| expit(e)).collect(),
        ModelKind::Linear => eta.iter().copied().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intercept(n: usize) -> DMatrix<f64> {
        DMatrix::from_element(n, 1, 1.0)
    }

    #[test]
    fn intercept_only_logistic_is_logit_of_mean() {
        let y = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let m = fit_logistic(&intercept(8), &y).unwrap();
        assert!(m.converged);
        assert!((m.coefficients[0] - (-1.0986122886681098)).abs() < 1e-10);

        let y = [1.0, 0.0, 1.0, 0.0];
        let m = fit_logistic(&intercept(4), &y).unwrap();
        assert!(m.coefficients[0].abs() < 1e-12);
    }

    #[test]
    fn logistic_error_paths() {
        assert_eq!(
            fit_logistic(&intercept(3), &[1.0, 1.0, 1.0]).unwrap_err(),
            GlmError::OneClassResponse
        );
        assert_eq!(
            fit_logistic(&intercept(2), &[1.0, 0.5]).unwrap_err(),
            GlmError::NonBinaryResponse
        );
        // perfectly separated by the covariate
        let x = DMatrix::from_row_slice(4, 2, &[1.0, -0.2, 1.0, -0.1, 1.0, 0.1, 1.0, 0.2]);
        assert!(matches!(
            fit_logistic(&x, &[0.0, 0.0, 1.0, 1.0]).unwrap_err(),
            GlmError::SeparationDetected { .. }
        ));
        // duplicated column
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(
            fit_logistic(&x, &[0.0, 1.0, 1.0, 1.0]).unwrap_err(),
            GlmError::SingularInformation
        );
    }

    #[test]
    fn unconverged_when_iterations_exhausted() {
        let x = DMatrix::from_row_slice(6, 2, &[1.0, -1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, -2.0, 1.0, 0.5]);
        let y = [0.0, 1.0, 1.0, 1.0, 0.0, 0.0];
        let opts = IrlsOptions {
            max_iterations: 1,
            ..IrlsOptions::default()
        };
        let m = fit_logistic_with(&x, &y, &opts).unwrap();
        assert!(!m.converged);
        assert_eq!(m.iterations, 1);
        let full = fit_logistic(&x, &y).unwrap();
        assert!(full.converged);
        assert!(full.final_gradient_norm <= 1e-8);
    }

    #[test]
    fn linear_fits() {
        let m = fit_linear(&intercept(3), &[1.0, 2.0, 3.0]).unwrap();
        assert!((m.coefficients[0] - 2.0).abs() < 1e-12);

        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, -3.0]);
        let y: Vec<f64> = (0..4).map(|i| 1.0 + 0.5 * x[(i, 1)]).collect();
        let m = fit_linear(&x, &y).unwrap();
        assert!((m.coefficients[0] - 1.0).abs() < 1e-13);
        assert!((m.coefficients[1] - 0.5).abs() < 1e-13);

        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert!(matches!(
            fit_linear(&x, &[1.0, 2.0, 3.0]).unwrap_err(),
            GlmError::RankDeficient { rank: 1, cols: 2 }
        ));
    }

    #[test]
    fn predictions() {
        let logistic = FittedModel {
            kind: ModelKind::Logistic,
            coefficients: vec![0.0],
            converged: true,
            iterations: 0,
            final_gradient_norm: 0.0,
            subset_description: String::new(),
        };
        assert_eq!(predict(&logistic, &intercept(1)).unwrap(), vec![0.5]);

        let selection = FittedModel {
            coefficients: vec![-0.471, 0.5, 0.5, 0.5],
            ..logistic.clone()
        };
        let row = DMatrix::from_row_slice(1, 4, &[1.0, 0.0, 0.0, 0.0]);
        let p = predict(&selection, &row).unwrap()[0];
        // 1 / (1 + e^0.471)
        assert!((p - 0.384_378_7).abs() < 1e-6);
        assert!(matches!(
            predict(&selection, &intercept(1)),
            Err(GlmError::DimensionMismatch { expected: 4, found: 1 })
        ));

        let linear = FittedModel {
            kind: ModelKind::Linear,
            coefficients: vec![2.0],
            ..logistic
        };
        assert_eq!(predict(&linear, &intercept(2)).unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn expit_is_stable() {
        assert_eq!(expit(800.0), 1.0);
        assert_eq!(expit(-800.0), 0.0);
        assert!((expit(logit(0.3)) - 0.3).abs() < 1e-15);
        assert!((softplus(-800.0)).abs() < 1e-300);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
    }
}
