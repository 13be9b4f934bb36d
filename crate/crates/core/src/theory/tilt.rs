use crate::diffusion::{GuidancePotential, NoiseLevel, PotentialKind};
use crate::error::{Error, Result};
use crate::numerics::{EigenGaussian, MAX_DIM};

use super::closed_form::{GaussianGroupModel, LogAffinePotential};

const MAX_GROUPS: usize = 8;

/// Exact guidance drift that makes the reverse SDE land on the endpoint law
/// `p_0(x) ℓ(x)^w / E[ℓ^w]` when the data law is a Gaussian group mixture.
///
/// With `h(x) = E[ℓ(X_0)^w | X_t = x] = Σ_a P_t(a | x) C_{t,a}(w) f_{t,a}(x)^w`,
/// the output is `∇ log h / w`, so that a guidance scale of `w` adds
/// exactly `∇ log h`. For a single group this reduces to `∇ log f_t`.
#[derive(Debug, Clone)]
pub struct EndpointTiltPotential {
    comps: Vec<EigenGaussian>,
    log_priors: Vec<f64>,
    beta: Vec<f64>,
    c: f64,
    w: f64,
}

impl EndpointTiltPotential {
    /// `w` must be the guidance scale the potential will be used with.
    pub fn new(model: &GaussianGroupModel, pot: &LogAffinePotential, w: f64) -> Result<Self> {
        model.validate()?;
        if pot.dim() != model.dim() {
            return Err(Error::DimensionMismatch {
                expected: model.dim(),
                got: pot.dim(),
            });
        }
        if model.groups.len() > MAX_GROUPS {
            return Err(Error::InvalidArgument(format!("at most {MAX_GROUPS} groups")));
        }
        if model.dim() > MAX_DIM {
            return Err(Error::InvalidArgument(format!("dimension above {MAX_DIM}")));
        }
        if !(w.is_finite() && w > 0.0) {
            return Err(Error::InvalidArgument("tilt exponent must be positive".into()));
        }
        Ok(Self {
            comps: model.groups.iter().map(|(_, p)| EigenGaussian::new(p)).collect(),
            log_priors: model.groups.iter().map(|(pi, _)| pi.ln()).collect(),
            beta: pot.beta.clone(),
            c: pot.c,
            w,
        })
    }

    pub fn exponent(&self) -> f64 {
        self.w
    }

    /// `log h`; the Gaussian normalizers cancel between numerator and denominator.
    /// Writes `∇ log h` into `grad`.
    fn log_h_and_grad(&self, x: &[f64], s2: f64, grad: &mut [f64]) -> f64 {
        let d = x.len();
        let w = self.w;
        let n = self.comps.len();
        let mut lq = [0.0; MAX_GROUPS];
        let mut lr = [0.0; MAX_GROUPS];
        let mut tilt_score = [[0.0; MAX_DIM]; MAX_GROUPS];
        let mut plain_score = [[0.0; MAX_DIM]; MAX_GROUPS];
        for (a, g) in self.comps.iter().enumerate() {
            let mut proj = [0.0; MAX_DIM];
            let mut bp = [0.0; MAX_DIM];
            for k in 0..d {
                let (mut pk, mut bk) = (0.0, 0.0);
                for i in 0..d {
                    let q = g.q[i * d + k];
                    pk += q * (x[i] - g.mean[i]);
                    bk += q * self.beta[i];
                }
                proj[k] = pk;
                bp[k] = bk;
            }
            let mut quad = 0.0;
            let mut log_det = 0.0;
            let mut b_m = 0.0;
            let mut b_v_b = 0.0;
            let mut zs = [0.0; MAX_DIM];
            let mut kb = [0.0; MAX_DIM];
            for k in 0..d {
                let lam = g.lambda[k];
                let var = lam + s2;
                zs[k] = proj[k] / var;
                quad += proj[k] * zs[k];
                log_det += var.ln();
                b_m += bp[k] * lam / var * proj[k];
                b_v_b += bp[k] * bp[k] * lam * s2 / var;
                kb[k] = bp[k] * lam / var;
            }
            let mu_b: f64 = (0..d).map(|i| self.beta[i] * g.mean[i]).sum();
            let log_n = -0.5 * (quad + log_det);
            let log_big_h = w * self.c + w * (mu_b + b_m) + 0.5 * w * w * b_v_b;
            lr[a] = self.log_priors[a] + log_n;
            lq[a] = lr[a] + log_big_h;
            for i in 0..d {
                let (mut s, mut t) = (0.0, 0.0);
                for k in 0..d {
                    s += g.q[i * d + k] * zs[k];
                    t += g.q[i * d + k] * kb[k];
                }
                plain_score[a][i] = -s;
                tilt_score[a][i] = -s + w * t;
            }
        }
        let lse = |v: &[f64]| {
            let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            m + v.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
        };
        let zq = lse(&lq[..n]);
        let zr = lse(&lr[..n]);
        grad[..d].iter_mut().for_each(|g| *g = 0.0);
        for a in 0..n {
            let q = (lq[a] - zq).exp();
            let r = (lr[a] - zr).exp();
            for i in 0..d {
                grad[i] += q * tilt_score[a][i] - r * plain_score[a][i];
            }
        }
        zq - zr
    }

    /// `log h_t^(w)(x)`.
    pub fn log_tilt(&self, x: &[f64], level: NoiseLevel) -> f64 {
        let mut g = [0.0; MAX_DIM];
        self.log_h_and_grad(x, level.variance(), &mut g[..x.len()])
    }
}

impl GuidancePotential for EndpointTiltPotential {
    fn dim(&self) -> usize {
        self.beta.len()
    }

    fn grad_log_potential_into(&self, x: &[f64], level: NoiseLevel, out: &mut [f64]) {
        self.log_h_and_grad(x, level.variance(), out);
        let inv = 1.0 / self.w;
        out.iter_mut().for_each(|v| *v *= inv);
    }

    fn kind(&self) -> PotentialKind {
        PotentialKind::Theory
    }
}
