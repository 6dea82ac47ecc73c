//! Ordinary least squares on small design matrices.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{StatsError, StatsResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    /// Coefficient of determination relative to the intercept-only model.
    pub r_squared: f64,
    pub residuals: Vec<f64>,
}

/// Least squares of `y` on the given design rows.
///
/// Requires at least one more row than columns and a full-rank design;
/// rank deficiency is reported with the offending column indices.
pub fn ols(rows: &[Vec<f64>], y: &[f64]) -> StatsResult<OlsFit> {
    let n = rows.len();
    if n == 0 || n != y.len() {
        return Err(StatsError::InvalidArgument(format!(
            "design has {n} rows but y has {}",
            y.len()
        )));
    }
    let p = rows[0].len();
    if p == 0 || rows.iter().any(|r| r.len() != p) {
        return Err(StatsError::InvalidArgument(
            "design rows must be non-empty and of equal length".into(),
        ));
    }
    if n < p + 1 {
        return Err(StatsError::InsufficientData(format!(
            "need at least {} rows for {p} columns, got {n}",
            p + 1
        )));
    }

    let x = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
    let yv = DVector::from_column_slice(y);

    let qr = x.clone().qr();
    let r = qr.r();
    let max_diag = (0..p).map(|i| r[(i, i)].abs()).fold(0.0f64, f64::max);
    let tol = max_diag * 1e-10 + f64::MIN_POSITIVE;
    let collinear: Vec<usize> = (0..p).filter(|&i| r[(i, i)].abs() <= tol).collect();
    if !collinear.is_empty() {
        return Err(StatsError::RankDeficient { columns: collinear });
    }

    let qty = qr.q().transpose() * &yv;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or(StatsError::RankDeficient {
            columns: (0..p).collect(),
        })?;

    let fitted = &x * &beta;
    let residuals: Vec<f64> = (0..n).map(|i| y[i] - fitted[i]).collect();
    let ss_res: f64 = residuals.iter().map(|e| e * e).sum();
    let mean = y.iter().sum::<f64>() / n as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    let r_squared = if ss_tot == 0.0 {
        0.0
    } else {
        1.0 - ss_res / ss_tot
    };

    Ok(OlsFit {
        coefficients: beta.iter().copied().collect(),
        r_squared,
        residuals,
    })
}

/// Leverage (hat) values for a simple regression `y = b0 + b1 x`, used by
/// studentized-residual outlier screens.
pub fn simple_regression_leverage(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    x.iter()
        .map(|v| {
            if sxx == 0.0 {
                1.0 / n
            } else {
                1.0 / n + (v - mean) * (v - mean) / sxx
            }
        })
        .collect()
}
