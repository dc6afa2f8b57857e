#![allow(dead_code)]

use partnest::data::{Arm, Observation, OutcomeKind, Part, PartialNestDataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Plain Newton-Raphson for logistic regression on row-major data.
pub fn newton_logistic(rows: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let p = rows[0].len();
    let mut beta = vec![0.0; p];
    for _ in 0..100 {
        let mut grad = vec![0.0; p];
        let mut hess = vec![vec![0.0; p]; p];
        for (x, &yi) in rows.iter().zip(y) {
            let eta: f64 = x.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let mu = sigmoid(eta);
            for j in 0..p {
                grad[j] += x[j] * (yi - mu);
                for k in 0..p {
                    hess[j][k] += x[j] * x[k] * mu * (1.0 - mu);
                }
            }
        }
        let step = solve(hess, grad);
        let size = step.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        for j in 0..p {
            beta[j] += step[j];
        }
        if size < 1e-13 {
            break;
        }
    }
    beta
}

/// Least squares through the normal equations.
pub fn normal_equations(rows: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let p = rows[0].len();
    let mut xtx = vec![vec![0.0; p]; p];
    let mut xty = vec![0.0; p];
    for (x, &yi) in rows.iter().zip(y) {
        for j in 0..p {
            xty[j] += x[j] * yi;
            for k in 0..p {
                xtx[j][k] += x[j] * x[k];
            }
        }
    }
    solve(xtx, xty)
}

pub fn to_matrix(rows: &[Vec<f64>]) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
}

/// A dataset with one binary covariate and every part/arm/outcome cell
/// populated, so saturated models are identified.
pub fn binary_covariate_fixture() -> PartialNestDataset {
    let mut obs = Vec::new();
    // (x, part, arm, y) trial rows; each (x, arm) cell has both outcomes
    let trial: &[(f64, Part, Arm, f64)] = &[
        (0.0, Part::Nested, Arm::Control, 0.0),
        (0.0, Part::Nested, Arm::Control, 1.0),
        (0.0, Part::NonNested, Arm::Control, 1.0),
        (0.0, Part::Nested, Arm::Treated, 1.0),
        (0.0, Part::NonNested, Arm::Treated, 0.0),
        (0.0, Part::NonNested, Arm::Treated, 1.0),
        (1.0, Part::Nested, Arm::Control, 1.0),
        (1.0, Part::NonNested, Arm::Control, 0.0),
        (1.0, Part::NonNested, Arm::Control, 0.0),
        (1.0, Part::Nested, Arm::Treated, 1.0),
        (1.0, Part::Nested, Arm::Treated, 0.0),
        (1.0, Part::NonNested, Arm::Treated, 1.0),
        (1.0, Part::NonNested, Arm::Treated, 1.0),
    ];
    for &(x, part, arm, y) in trial {
        obs.push(Observation::randomized(vec![x], part, arm, y));
    }
    for x in [0.0, 0.0, 0.0, 1.0, 1.0] {
        obs.push(Observation::non_randomized(vec![x]));
    }
    PartialNestDataset::new(obs, vec!["x".into()], OutcomeKind::Binary).unwrap()
}

/// Stratified standardization by hand: within each covariate level, the
/// arm-specific outcome mean among trial rows, weighted by the share of
/// that level among `p = 0` rows.
pub fn stratified_oracle(data: &PartialNestDataset, arm: Arm) -> f64 {
    let mut levels: Vec<Vec<f64>> = data.observations().iter().map(|o| o.x.clone()).collect();
    levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
    levels.dedup();
    let n0 = data.n0() as f64;
    levels
        .iter()
        .map(|lv| {
            let share = data
                .observations()
                .iter()
                .filter(|o| o.part == Part::Nested && &o.x == lv)
                .count() as f64
                / n0;
            let ys: Vec<f64> = data
                .observations()
                .iter()
                .filter(|o| o.in_arm(arm) && &o.x == lv)
                .map(|o| o.y.unwrap())
                .collect();
            if share == 0.0 {
                0.0
            } else {
                share * ys.iter().sum::<f64>() / ys.len() as f64
            }
        })
        .sum()
}

/// Standard-normal draw by Box-Muller, independent of the crate's sampler.
pub fn normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Eigenvalues of a symmetric tridiagonal matrix by bisection on Sturm counts.
fn tridiagonal_eigen(diag: &[f64], off: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let bound = diag.iter().map(|d| d.abs()).fold(0.0, f64::max)
        + 2.0 * off.iter().map(|d| d.abs()).fold(0.0, f64::max);
    let count_below = |x: f64| {
        let mut count = 0;
        let mut d = 1.0;
        for i in 0..n {
            let o2 = if i == 0 { 0.0 } else { off[i - 1] * off[i - 1] };
            d = diag[i] - x - if i == 0 { 0.0 } else { o2 / d };
            if d == 0.0 {
                d = 1e-300;
            }
            if d < 0.0 {
                count += 1;
            }
        }
        count
    };
    (0..n)
        .map(|k| {
            let (mut lo, mut hi) = (-bound - 1.0, bound + 1.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if count_below(mid) > k {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            0.5 * (lo + hi)
        })
        .collect()
}

/// Gauss-Hermite nodes and weights for the standard normal density
/// (probabilists' convention), via the Golub-Welsch Jacobi matrix.
pub fn gauss_hermite(n: usize) -> Vec<(f64, f64)> {
    let off: Vec<f64> = (1..n).map(|k| (k as f64).sqrt()).collect();
    let nodes = tridiagonal_eigen(&vec![0.0; n], &off);
    nodes
        .into_iter()
        .map(|x| {
            // weight = 1 / sum_k He_k(x)^2 / k!
            let (mut h0, mut h1) = (1.0, x);
            let mut s = 1.0 + if n > 1 { x * x } else { 0.0 };
            let mut fact = 1.0;
            for k in 1..n - 1 {
                let h2 = x * h1 - k as f64 * h0;
                fact *= (k + 1) as f64;
                s += h2 * h2 / fact;
                h0 = h1;
                h1 = h2;
            }
            (x, 1.0 / s)
        })
        .collect()
}

/// `E[expit(c + s Z)]` for standard normal `Z`.
pub fn expected_expit(c: f64, s: f64) -> f64 {
    gauss_hermite(80)
        .iter()
        .map(|(x, w)| w * sigmoid(c + s * x))
        .sum()
}
