use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Largest data or embedding dimension supported by the stack-allocated kernels.
pub const MAX_DIM: usize = 16;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// A multivariate normal `N(mean, cov)` with a validated SPD covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GaussianRepr", into = "GaussianRepr")]
pub struct GaussianParams {
    mean: Vector,
    cov: Matrix,
}

#[derive(Serialize, Deserialize)]
struct GaussianRepr {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

impl TryFrom<GaussianRepr> for GaussianParams {
    type Error = Error;

    fn try_from(r: GaussianRepr) -> Result<Self> {
        let d = r.mean.len();
        if r.cov.len() != d || r.cov.iter().any(|row| row.len() != d) {
            return Err(Error::InvalidArgument(format!(
                "covariance must be {d}x{d} to match the mean"
            )));
        }
        let cov = Matrix::from_fn(d, d, |i, j| r.cov[i][j]);
        GaussianParams::new(Vector::from_vec(r.mean), cov)
    }
}

impl From<GaussianParams> for GaussianRepr {
    fn from(p: GaussianParams) -> Self {
        let d = p.dim();
        GaussianRepr {
            mean: p.mean.iter().copied().collect(),
            cov: (0..d).map(|i| (0..d).map(|j| p.cov[(i, j)]).collect()).collect(),
        }
    }
}

impl GaussianParams {
    pub fn new(mean: Vector, cov: Matrix) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::EmptyInput("gaussian mean"));
        }
        if d > MAX_DIM {
            return Err(Error::InvalidArgument(format!(
                "dimension {d} exceeds the supported maximum {MAX_DIM}"
            )));
        }
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: cov.nrows(),
            });
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite gaussian parameter".into()));
        }
        check_spd(&cov)?;
        Ok(Self { mean, cov })
    }

    /// Isotropic `N(mean, scale² I)`.
    pub fn isotropic(mean: &[f64], scale: f64) -> Result<Self> {
        let d = mean.len();
        Self::new(
            Vector::from_column_slice(mean),
            Matrix::identity(d, d) * (scale * scale),
        )
    }

    /// `N(mean, diag(var))`.
    pub fn diagonal(mean: &[f64], var: &[f64]) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                got: var.len(),
            });
        }
        Self::new(
            Vector::from_column_slice(mean),
            Matrix::from_diagonal(&Vector::from_column_slice(var)),
        )
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &Vector {
        &self.mean
    }

    pub fn cov(&self) -> &Matrix {
        &self.cov
    }

    /// Same mean, covariance `cov + extra_var * I` (the σ-convolved law).
    pub fn inflated(&self, extra_var: f64) -> Result<Self> {
        let d = self.dim();
        Self::new(
            self.mean.clone(),
            &self.cov + Matrix::identity(d, d) * extra_var,
        )
    }

    /// Same mean, covariance multiplied by `factor`.
    pub fn scaled_cov(&self, factor: f64) -> Result<Self> {
        Self::new(self.mean.clone(), &self.cov * factor)
    }

    pub fn with_mean(&self, mean: Vector) -> Result<Self> {
        Self::new(mean, self.cov.clone())
    }

    pub fn logpdf(&self, x: &[f64]) -> Result<f64> {
        gaussian_logpdf(x, self)
    }
}

fn check_spd(cov: &Matrix) -> Result<()> {
    let d = cov.nrows();
    for i in 0..d {
        for j in 0..i {
            let (a, b) = (cov[(i, j)], cov[(j, i)]);
            if (a - b).abs() > 1e-10 * (1.0 + a.abs().max(b.abs())) {
                return Err(Error::NotPositiveDefinite);
            }
        }
    }
    Cholesky::new(cov.clone())
        .map(|_| ())
        .ok_or(Error::NotPositiveDefinite)
}

/// `log N(x; mean, cov)` via a Cholesky factorization.
pub fn gaussian_logpdf(x: &[f64], p: &GaussianParams) -> Result<f64> {
    let d = p.dim();
    if x.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: x.len(),
        });
    }
    let chol = Cholesky::new(p.cov.clone()).ok_or(Error::NotPositiveDefinite)?;
    let diff = Vector::from_column_slice(x) - &p.mean;
    let l = chol.l();
    let z = l
        .solve_lower_triangular(&diff)
        .ok_or(Error::NotPositiveDefinite)?;
    let log_det: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok(-0.5 * (z.dot(&z) + log_det + d as f64 * LN_2PI))
}

/// Inverse of an SPD matrix.
pub fn spd_inverse(m: &Matrix) -> Result<Matrix> {
    Cholesky::new(m.clone())
        .map(|c| c.inverse())
        .ok_or(Error::NotPositiveDefinite)
}

/// Gaussian component pre-factored for repeated density and score evaluation
/// under isotropic noise inflation: `Σ = Q Λ Qᵀ`, so
/// `(Σ + s² I)⁻¹ = Q (Λ + s²)⁻¹ Qᵀ`.
#[derive(Debug, Clone)]
pub(crate) struct EigenGaussian {
    pub(crate) mean: Vec<f64>,
    /// Row-major eigenvector matrix: `q[i * d + k]` is entry (i, k) of Q.
    pub(crate) q: Vec<f64>,
    pub(crate) lambda: Vec<f64>,
}

impl EigenGaussian {
    pub(crate) fn new(p: &GaussianParams) -> Self {
        let d = p.dim();
        let eig = SymmetricEigen::<f64, Dyn>::new(p.cov.clone());
        let mut q = vec![0.0; d * d];
        for i in 0..d {
            for k in 0..d {
                q[i * d + k] = eig.eigenvectors[(i, k)];
            }
        }
        Self {
            mean: p.mean.iter().copied().collect(),
            q,
            lambda: eig.eigenvalues.iter().copied().collect(),
        }
    }

    pub(crate) fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Log density of `N(mean, Σ + s2 I)` at `x`; writes the score
    /// `-(Σ + s2 I)⁻¹ (x - mean)` into `score`.
    #[inline]
    pub(crate) fn logpdf_and_score(&self, x: &[f64], s2: f64, score: &mut [f64]) -> f64 {
        let d = self.dim();
        let mut diff = [0.0; MAX_DIM];
        for i in 0..d {
            diff[i] = x[i] - self.mean[i];
        }
        let mut z = [0.0; MAX_DIM];
        let mut quad = 0.0;
        let mut log_det = 0.0;
        for k in 0..d {
            let mut proj = 0.0;
            for i in 0..d {
                proj += self.q[i * d + k] * diff[i];
            }
            let var = self.lambda[k] + s2;
            z[k] = proj / var;
            quad += proj * z[k];
            log_det += var.ln();
        }
        for i in 0..d {
            let mut acc = 0.0;
            for k in 0..d {
                acc += self.q[i * d + k] * z[k];
            }
            score[i] = -acc;
        }
        -0.5 * (quad + log_det + d as f64 * LN_2PI)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_normal_values() {
        let p = GaussianParams::isotropic(&[0.0], 1.0).unwrap();
        let at0 = p.logpdf(&[0.0]).unwrap();
        let at1 = p.logpdf(&[1.0]).unwrap();
        assert!((at0 - (-0.5 * (2.0 * std::f64::consts::PI).ln())).abs() < 1e-12);
        assert!((at0 + 0.918_938_533_2).abs() < 1e-9);
        assert!((at1 + 1.418_938_533_2).abs() < 1e-9);
    }

    #[test]
    fn normalizes_in_2d() {
        // brute-force quadrature over a wide box
        let p = GaussianParams::new(
            Vector::from_vec(vec![1.0, 2.0]),
            Matrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
        )
        .unwrap();
        let h = 0.02;
        let mut total = 0.0;
        let n = ((24.0 / h) as i64, (16.0 / h) as i64);
        for i in 0..n.0 {
            for j in 0..n.1 {
                let x = [-11.0 + (i as f64 + 0.5) * h, -6.0 + (j as f64 + 0.5) * h];
                total += p.logpdf(&x).unwrap().exp() * h * h;
            }
        }
        assert!((total - 1.0).abs() < 1e-6, "integral {total}");
        // pointwise value against the closed form
        let v = p.logpdf(&[0.0, 0.0]).unwrap();
        let det: f64 = 2.0 * 1.0 - 0.25;
        let inv = [1.0 / det, -0.5 / det, -0.5 / det, 2.0 / det];
        let (dx, dy) = (-1.0, -2.0);
        let quad = dx * (inv[0] * dx + inv[1] * dy) + dy * (inv[2] * dx + inv[3] * dy);
        let expect = -0.5 * (quad + det.ln() + 2.0 * LN_2PI);
        assert!((v - expect).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_spd() {
        let bad = GaussianParams::new(
            Vector::from_vec(vec![0.0, 0.0]),
            Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]),
        );
        assert!(matches!(bad, Err(Error::NotPositiveDefinite)));
        let asym = GaussianParams::new(
            Vector::from_vec(vec![0.0, 0.0]),
            Matrix::from_row_slice(2, 2, &[1.0, 0.2, 0.0, 1.0]),
        );
        assert!(asym.is_err());
    }

    #[test]
    fn eigen_kernel_matches_cholesky_path() {
        let p = GaussianParams::new(
            Vector::from_vec(vec![0.3, -1.0]),
            Matrix::from_row_slice(2, 2, &[1.5, -0.4, -0.4, 0.7]),
        )
        .unwrap();
        let eg = EigenGaussian::new(&p);
        let x = [0.9, 0.1];
        let mut s = [0.0; 2];
        for s2 in [0.0, 0.3, 4.0] {
            let lp = eg.logpdf_and_score(&x, s2, &mut s);
            let reference = p.inflated(s2).unwrap().logpdf(&x).unwrap();
            assert!((lp - reference).abs() < 1e-12);
        }
    }

    #[test]
    fn serde_roundtrip() {
        let p = GaussianParams::diagonal(&[1.0, -2.0], &[0.5, 2.0]).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        let back: GaussianParams = serde_json::from_str(&s).unwrap();
        assert_eq!(p, back);
        let bad = r#"{"mean":[0.0,0.0],"cov":[[1.0,3.0],[3.0,1.0]]}"#;
        assert!(serde_json::from_str::<GaussianParams>(bad).is_err());
    }
}
