use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::gaussian::{Matrix, Vector};

/// Ridge fit with an unpenalized intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeFit {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub chosen_lambda: f64,
    /// Leave-one-out mean squared error per grid value, in grid order.
    pub loo_mse: Vec<(f64, f64)>,
}

impl RidgeFit {
    pub fn predict(&self, features: &[f64]) -> f64 {
        self.bias
            + self
                .weights
                .iter()
                .zip(features)
                .map(|(w, f)| w * f)
                .sum::<f64>()
    }
}

fn design(features: &[Vec<f64>]) -> Result<Matrix> {
    let n = features.len();
    let k = features.first().map(|r| r.len()).unwrap_or(0);
    if let Some(r) = features.iter().find(|r| r.len() != k) {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: r.len(),
        });
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite feature".into()));
    }
    Ok(Matrix::from_fn(n, k + 1, |i, j| {
        if j == 0 {
            1.0
        } else {
            features[i][j - 1]
        }
    }))
}

fn penalized_solve(x: &Matrix, y: &Vector, lambda: f64) -> Result<Vector> {
    let mut gram = x.transpose() * x;
    for j in 1..gram.ncols() {
        gram[(j, j)] += lambda;
    }
    let rhs = x.transpose() * y;
    gram.cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or_else(|| Error::Degenerate("ridge normal equations are singular".into()))
}

fn check_inputs(features: &[Vec<f64>], targets: &[f64]) -> Result<()> {
    if features.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "ridge needs at least 3 rows, got {}",
            features.len()
        )));
    }
    if features.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            got: targets.len(),
        });
    }
    if targets.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidArgument("non-finite target".into()));
    }
    if features.iter().all(|r| r == &features[0]) {
        return Err(Error::Degenerate("all feature rows are identical".into()));
    }
    Ok(())
}

/// LOO mean squared error via the hat-matrix identity
/// `e_(i) = r_i / (1 - H_ii)`, exact for a fixed penalty.
pub fn loo_mse_shortcut(features: &[Vec<f64>], targets: &[f64], lambda: f64) -> Result<f64> {
    check_inputs(features, targets)?;
    let x = design(features)?;
    let y = Vector::from_column_slice(targets);
    let beta = penalized_solve(&x, &y, lambda)?;
    let mut gram = x.transpose() * &x;
    for j in 1..gram.ncols() {
        gram[(j, j)] += lambda;
    }
    let inv = gram
        .cholesky()
        .ok_or_else(|| Error::Degenerate("ridge normal equations are singular".into()))?
        .inverse();
    let n = x.nrows();
    let mut sse = 0.0;
    for i in 0..n {
        let row = x.row(i);
        let leverage = (row * &inv * row.transpose())[(0, 0)];
        if 1.0 - leverage < 1e-12 {
            return Err(Error::Degenerate(format!("row {i} has leverage 1")));
        }
        let resid = y[i] - (row * &beta)[(0, 0)];
        let e = resid / (1.0 - leverage);
        sse += e * e;
    }
    Ok(sse / n as f64)
}

/// LOO mean squared error by refitting with each row held out.
pub fn loo_mse_refit(features: &[Vec<f64>], targets: &[f64], lambda: f64) -> Result<f64> {
    check_inputs(features, targets)?;
    let x = design(features)?;
    let n = x.nrows();
    let mut sse = 0.0;
    for i in 0..n {
        let keep: Vec<usize> = (0..n).filter(|&r| r != i).collect();
        let xi = x.select_rows(&keep);
        let yi = Vector::from_iterator(n - 1, keep.iter().map(|&r| targets[r]));
        let beta = penalized_solve(&xi, &yi, lambda)?;
        let e = targets[i] - (x.row(i) * &beta)[(0, 0)];
        sse += e * e;
    }
    Ok(sse / n as f64)
}

/// Fits ridge for each `λ` in the grid, picks the one with the smallest exact
/// LOO error (first on ties), and refits on all rows.
pub fn ridge_fit_loo(
    features: &[Vec<f64>],
    targets: &[f64],
    lambda_grid: &[f64],
) -> Result<RidgeFit> {
    check_inputs(features, targets)?;
    if lambda_grid.is_empty() {
        return Err(Error::EmptyInput("lambda grid"));
    }
    if lambda_grid.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
        return Err(Error::InvalidArgument("lambda must be positive".into()));
    }
    let mut loo_mse = Vec::with_capacity(lambda_grid.len());
    for &lambda in lambda_grid {
        loo_mse.push((lambda, loo_mse_shortcut(features, targets, lambda)?));
    }
    let (chosen_lambda, _) = loo_mse
        .iter()
        .copied()
        .fold((f64::NAN, f64::INFINITY), |best, cur| {
            if cur.1 < best.1 {
                cur
            } else {
                best
            }
        });
    let x = design(features)?;
    let beta = penalized_solve(&x, &Vector::from_column_slice(targets), chosen_lambda)?;
    Ok(RidgeFit {
        weights: beta.iter().skip(1).copied().collect(),
        bias: beta[0],
        chosen_lambda,
        loo_mse,
    })
}

pub const LOGIT_CLAMP: f64 = 1e-4;

/// OLS fit of `logit(y)` on `logit(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Ratio where the fitted line meets `y = x`; absent when the slope is 1.
    pub fixed_point: Option<f64>,
    /// Number of input ratios clamped into `[ε, 1 - ε]`.
    pub clamped: usize,
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn logit_regression(x_ratios: &[f64], y_ratios: &[f64]) -> Result<LogitFit> {
    let n = x_ratios.len();
    if n != y_ratios.len() {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: y_ratios.len(),
        });
    }
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "logit regression needs at least 3 pairs, got {n}"
        )));
    }
    let mut clamped = 0;
    let mut to_logit = |p: f64| -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("ratio {p} outside [0, 1]")));
        }
        let q = p.clamp(LOGIT_CLAMP, 1.0 - LOGIT_CLAMP);
        if q != p {
            clamped += 1;
        }
        Ok(logit(q))
    };
    let lx = x_ratios.iter().map(|&p| to_logit(p)).collect::<Result<Vec<_>>>()?;
    let ly = y_ratios.iter().map(|&p| to_logit(p)).collect::<Result<Vec<_>>>()?;
    let mx = lx.iter().sum::<f64>() / n as f64;
    let my = ly.iter().sum::<f64>() / n as f64;
    let sxx: f64 = lx.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = ly.iter().map(|v| (v - my).powi(2)).sum();
    if sxx <= 1e-300 {
        return Err(Error::Degenerate("x ratios have no spread".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let fixed_point = if (slope - 1.0).abs() < 1e-9 {
        None
    } else {
        Some(sigmoid(intercept / (1.0 - slope)))
    };
    Ok(LogitFit {
        slope,
        intercept,
        r_squared,
        fixed_point,
        clamped,
    })
}
