//! Naive shift-by-one predictor and ordinary least squares.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// Ridge added to the correlation matrix when it is numerically singular.
pub const RIDGE_FALLBACK: f64 = 1e-8;
const PIVOT_TOLERANCE: f64 = 1e-10;

/// Predict the next red time as the current one.
pub fn naive_predict(row: &[f64], red_column: usize) -> Result<f64> {
    row.get(red_column).copied().ok_or(Error::Shape {
        expected: red_column + 1,
        got: row.len(),
    })
}

/// Naive predictions for rows `from..` of a dataset.
///
/// Uses the target signal's red column when the matrix has one; otherwise
/// the previous row's target, which is the same red time.
pub fn naive_from_matrix(m: &FeatureMatrix, from: usize) -> Result<Vec<f64>> {
    match m.schema.target_red_column() {
        Some(col) => (from..m.n_rows())
            .map(|i| naive_predict(&m.rows[i], col))
            .collect(),
        None if from >= 1 => Ok(m.targets[from - 1..m.n_rows() - 1].to_vec()),
        None => Err(Error::TooFewRows(
            "first row has no earlier cycle for the naive predictor".into(),
        )),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    /// Standard deviation of the training residuals.
    pub residual_std: f64,
}

impl LinearModel {
    pub fn predict(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.coefficients.len() {
            return Err(Error::Shape {
                expected: self.coefficients.len(),
                got: row.len(),
            });
        }
        Ok(self.intercept + dot(&self.coefficients, row))
    }
}

pub fn linear_predict(model: &LinearModel, row: &[f64]) -> Result<f64> {
    model.predict(row)
}

/// Least-squares fit with intercept.
///
/// The normal equations are solved on centered, unit-variance columns with a
/// Cholesky factorization. When a pivot collapses (collinear columns) the
/// system is re-solved with [`RIDGE_FALLBACK`] on the diagonal. Constant
/// columns get coefficient zero.
pub fn ols_fit(x: &[Vec<f64>], y: &[f64]) -> Result<LinearModel> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::Shape {
            expected: n,
            got: y.len(),
        });
    }
    if n == 0 {
        return Err(Error::TooFewRows("OLS needs at least one row".into()));
    }
    let p = x[0].len();
    if let Some(bad) = x.iter().find(|r| r.len() != p) {
        return Err(Error::Shape {
            expected: p,
            got: bad.len(),
        });
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("OLS input".into()));
    }
    if n < p + 1 {
        return Err(Error::TooFewRows(format!(
            "OLS needs at least {} rows for {p} columns, got {n}",
            p + 1
        )));
    }

    let nf = n as f64;
    let y_mean = y.iter().sum::<f64>() / nf;
    let mut mean = vec![0.0; p];
    for r in x {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= nf);
    let mut scale = vec![0.0; p];
    for r in x {
        for j in 0..p {
            scale[j] += (r[j] - mean[j]).powi(2);
        }
    }
    // Columns with no spread relative to their magnitude are treated as constant.
    let active: Vec<usize> = (0..p)
        .filter(|&j| {
            let sd = (scale[j] / nf).sqrt();
            sd > 1e-12 * mean[j].abs().max(1e-300)
        })
        .collect();
    for &j in &active {
        scale[j] = (scale[j] / nf).sqrt();
    }

    let q = active.len();
    let mut gram = vec![0.0; q * q];
    let mut rhs = vec![0.0; q];
    let mut z = vec![0.0; q];
    for (r, &yv) in x.iter().zip(y) {
        for (a, &j) in active.iter().enumerate() {
            z[a] = (r[j] - mean[j]) / scale[j];
        }
        let yc = yv - y_mean;
        for a in 0..q {
            rhs[a] += z[a] * yc;
            for b in 0..=a {
                gram[a * q + b] += z[a] * z[b];
            }
        }
    }
    for a in 0..q {
        for b in 0..a {
            gram[b * q + a] = gram[a * q + b];
        }
    }

    let beta_std = match cholesky_solve(&gram, &rhs, q, 0.0) {
        Some(b) => b,
        None => {
            let ridge = RIDGE_FALLBACK * nf;
            cholesky_solve(&gram, &rhs, q, ridge)
                .ok_or_else(|| Error::Training("normal equations are singular".into()))?
        }
    };

    let mut coefficients = vec![0.0; p];
    for (a, &j) in active.iter().enumerate() {
        coefficients[j] = beta_std[a] / scale[j];
    }
    let intercept = y_mean - dot(&coefficients, &mean);
    let mut model = LinearModel {
        intercept,
        coefficients,
        residual_std: 0.0,
    };
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(r, &yv)| (yv - model.predict(r).unwrap()).powi(2))
        .sum();
    model.residual_std = (sse / nf).sqrt();
    if !model.intercept.is_finite() || model.coefficients.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("OLS solution".into()));
    }
    Ok(model)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solve `(A + ridge·I) x = b` for symmetric `A` (row-major `q×q`). Returns
/// `None` when a pivot falls below the relative tolerance.
fn cholesky_solve(a: &[f64], b: &[f64], q: usize, ridge: f64) -> Option<Vec<f64>> {
    let mut l = vec![0.0; q * q];
    for i in 0..q {
        for j in 0..=i {
            let mut s = a[i * q + j];
            if i == j {
                s += ridge;
            }
            for k in 0..j {
                s -= l[i * q + k] * l[j * q + k];
            }
            if i == j {
                let diag = a[i * q + i] + ridge;
                if s <= PIVOT_TOLERANCE * diag || s <= 0.0 {
                    return None;
                }
                l[i * q + i] = s.sqrt();
            } else {
                l[i * q + j] = s / l[j * q + j];
            }
        }
    }
    let mut z = vec![0.0; q];
    for i in 0..q {
        let s: f64 = b[i] - (0..i).map(|k| l[i * q + k] * z[k]).sum::<f64>();
        z[i] = s / l[i * q + i];
    }
    let mut x = vec![0.0; q];
    for i in (0..q).rev() {
        let s: f64 = z[i] - (i + 1..q).map(|k| l[k * q + i] * x[k]).sum::<f64>();
        x[i] = s / l[i * q + i];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn naive_returns_current_red() {
        assert_eq!(naive_predict(&[5.0, 38.0], 1).unwrap(), 38.0);
        assert!(naive_predict(&[5.0], 3).is_err());
    }

    #[test]
    fn exact_line() {
        let x = vec![vec![1.0], vec![2.0], vec![3.0]];
        let m = ols_fit(&x, &[2.0, 4.0, 6.0]).unwrap();
        assert_abs_diff_eq!(m.intercept, 0.0, epsilon = 1e-8);
        assert_abs_diff_eq!(m.coefficients[0], 2.0, epsilon = 1e-8);
    }

    #[test]
    fn constant_target_and_collinear_columns() {
        let x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let m = ols_fit(&x, &[7.0; 6]).unwrap();
        assert_abs_diff_eq!(m.intercept, 7.0, epsilon = 1e-8);
        for c in &m.coefficients {
            assert_abs_diff_eq!(*c, 0.0, epsilon = 1e-8);
        }
        let zeros = vec![vec![0.0, 0.0]; 4];
        let m = ols_fit(&zeros, &[3.0; 4]).unwrap();
        assert_eq!(m.coefficients, vec![0.0, 0.0]);
        assert_abs_diff_eq!(m.intercept, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn predict_arithmetic() {
        let m = LinearModel {
            intercept: 1.0,
            coefficients: vec![2.0],
            residual_std: 0.0,
        };
        assert_eq!(m.predict(&[3.0]).unwrap(), 7.0);
        assert_eq!(m.predict(&[0.0]).unwrap(), 1.0);
        assert!(m.predict(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            ols_fit(&[vec![f64::NAN], vec![1.0]], &[1.0, 2.0]),
            Err(Error::NonFinite(_))
        ));
        assert!(ols_fit(&[vec![1.0, 2.0]], &[1.0]).is_err());
    }

    #[test]
    fn recovers_coefficients_under_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let beta: Vec<f64> = (0..10).map(|_| rng.random_range(-3.0..3.0)).collect();
        let noise = Normal::new(0.0, 0.1).unwrap();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..5000 {
            let row: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
            y.push(1.5 + dot(&beta, &row) + noise.sample(&mut rng));
            x.push(row);
        }
        let m = ols_fit(&x, &y).unwrap();
        for (b, want) in m.coefficients.iter().zip(&beta) {
            assert!((b - want).abs() < 0.05, "{b} vs {want}");
        }
        // residuals are orthogonal to every column
        let resid: Vec<f64> = x.iter().zip(&y).map(|(r, v)| v - m.predict(r).unwrap()).collect();
        let ynorm = dot(&y, &y).sqrt();
        for j in 0..10 {
            let col: Vec<f64> = x.iter().map(|r| r[j]).collect();
            let cnorm = dot(&col, &col).sqrt();
            assert!(dot(&col, &resid).abs() <= 1e-6 * cnorm * ynorm);
        }
    }
}
