use crate::error::{Error, Result};

use super::gaussian::{EigenGaussian, GaussianParams, MAX_DIM};

/// Weighted Gaussian mixture, pre-factored so that the density and score of
/// its noise-convolved version (every covariance inflated by `s2 I`) can be
/// evaluated without allocation.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    comps: Vec<EigenGaussian>,
    log_weights: Vec<f64>,
    dim: usize,
}

impl GaussianMixture {
    /// Weights must be positive; they are normalized to sum to one.
    pub fn new(weights: &[f64], params: &[GaussianParams]) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptyInput("mixture components"));
        }
        if weights.len() != params.len() {
            return Err(Error::DimensionMismatch {
                expected: weights.len(),
                got: params.len(),
            });
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidArgument(
                "mixture weights must be positive and finite".into(),
            ));
        }
        let dim = params[0].dim();
        if let Some(p) = params.iter().find(|p| p.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: p.dim(),
            });
        }
        let total: f64 = weights.iter().sum();
        Ok(Self {
            comps: params.iter().map(EigenGaussian::new).collect(),
            log_weights: weights.iter().map(|w| (w / total).ln()).collect(),
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.comps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.comps.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|l| l.exp()).collect()
    }

    /// Log density of the mixture convolved with `N(0, s2 I)`.
    pub fn log_density(&self, x: &[f64], s2: f64) -> f64 {
        let mut scratch = [0.0; MAX_DIM];
        self.log_density_and_score(x, s2, &mut scratch[..self.dim])
    }

    /// Score `∇ log p` of the convolved mixture, written to `out`.
    pub fn score_into(&self, x: &[f64], s2: f64, out: &mut [f64]) {
        self.log_density_and_score(x, s2, out);
    }

    /// Joint evaluation; responsibilities are accumulated in log space with a
    /// running max so no component array is allocated.
    pub fn log_density_and_score(&self, x: &[f64], s2: f64, out: &mut [f64]) -> f64 {
        let d = self.dim;
        debug_assert_eq!(x.len(), d);
        let mut comp_score = [0.0; MAX_DIM];
        let mut acc = [0.0; MAX_DIM];
        let mut max_lp = f64::NEG_INFINITY;
        let mut total = 0.0;
        for (c, lw) in self.comps.iter().zip(&self.log_weights) {
            let lp = lw + c.logpdf_and_score(x, s2, &mut comp_score[..d]);
            if lp > max_lp {
                let rescale = if total == 0.0 { 0.0 } else { (max_lp - lp).exp() };
                total *= rescale;
                for v in acc[..d].iter_mut() {
                    *v *= rescale;
                }
                max_lp = lp;
            }
            let r = (lp - max_lp).exp();
            total += r;
            for i in 0..d {
                acc[i] += r * comp_score[i];
            }
        }
        for i in 0..d {
            out[i] = acc[i] / total;
        }
        max_lp + total.ln()
    }

    /// Posterior component probabilities at `x` under the convolved mixture.
    pub fn responsibilities(&self, x: &[f64], s2: f64) -> Vec<f64> {
        let d = self.dim;
        let mut scratch = [0.0; MAX_DIM];
        let lps: Vec<f64> = self
            .comps
            .iter()
            .zip(&self.log_weights)
            .map(|(c, lw)| lw + c.logpdf_and_score(x, s2, &mut scratch[..d]))
            .collect();
        let m = lps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut r: Vec<f64> = lps.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = r.iter().sum();
        r.iter_mut().for_each(|v| *v /= s);
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_comp() -> GaussianMixture {
        GaussianMixture::new(
            &[0.3, 0.7],
            &[
                GaussianParams::diagonal(&[-1.0, 0.5], &[0.5, 1.2]).unwrap(),
                GaussianParams::new(
                    nalgebra::DVector::from_vec(vec![1.5, -0.5]),
                    nalgebra::DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.8]),
                )
                .unwrap(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn score_matches_finite_difference() {
        let m = two_comp();
        let h = 1e-5;
        for (x, s2) in [([0.1, 0.2], 0.0), ([2.0, -1.0], 0.5), ([-3.0, 4.0], 9.0)] {
            let mut s = [0.0; 2];
            m.score_into(&x, s2, &mut s);
            for i in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[i] += h;
                xm[i] -= h;
                let fd = (m.log_density(&xp, s2) - m.log_density(&xm, s2)) / (2.0 * h);
                assert!((fd - s[i]).abs() < 1e-6 * (1.0 + fd.abs()), "{fd} vs {}", s[i]);
            }
        }
    }

    #[test]
    fn far_tail_is_stable() {
        let m = two_comp();
        let mut s = [0.0; 2];
        let lp = m.log_density_and_score(&[400.0, -300.0], 0.0, &mut s);
        assert!(lp.is_finite() && s.iter().all(|v| v.is_finite()));
        let r = m.responsibilities(&[400.0, -300.0], 0.0);
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_midpoint_has_zero_score() {
        let m = GaussianMixture::new(
            &[0.5, 0.5],
            &[
                GaussianParams::isotropic(&[-2.0, 0.0], 1.0).unwrap(),
                GaussianParams::isotropic(&[2.0, 0.0], 1.0).unwrap(),
            ],
        )
        .unwrap();
        let mut s = [1.0; 2];
        m.score_into(&[0.0, 0.0], 0.3, &mut s);
        assert_eq!(s, [0.0, 0.0]);
    }

    #[test]
    fn rejects_bad_weights() {
        let p = GaussianParams::isotropic(&[0.0], 1.0).unwrap();
        assert!(GaussianMixture::new(&[0.0], &[p.clone()]).is_err());
        assert!(GaussianMixture::new(&[], &[]).is_err());
        assert!(GaussianMixture::new(&[1.0, 1.0], &[p]).is_err());
    }
}
