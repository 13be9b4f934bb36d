use serde::{Deserialize, Serialize};

use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::numerics::{spd_inverse, GaussianMixture, GaussianParams, Matrix, Vector};
use crate::world::{Component, MixtureWorld};

/// `ℓ(x) = exp(βᵀx + c)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogAffinePotential {
    pub beta: Vec<f64>,
    pub c: f64,
}

impl LogAffinePotential {
    pub fn new(beta: Vec<f64>, c: f64) -> Result<Self> {
        if beta.iter().any(|b| !b.is_finite()) || !c.is_finite() {
            return Err(Error::InvalidArgument("potential must be finite".into()));
        }
        Ok(Self { beta, c })
    }

    pub fn dim(&self) -> usize {
        self.beta.len()
    }

    pub fn beta_vec(&self) -> Vector {
        Vector::from_column_slice(&self.beta)
    }

    pub fn log_value(&self, x: &[f64]) -> f64 {
        self.c + self.beta.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if self.dim() == d {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: d,
                got: self.dim(),
            })
        }
    }
}

/// `exp(slopeᵀ x + offset)` kept in log form; the exponents of both `f_t`
/// and `h_t^(w)` have this shape for a Gaussian data law.
#[derive(Debug, Clone, PartialEq)]
pub struct LogAffineForm {
    pub slope: Vector,
    pub offset: f64,
}

impl LogAffineForm {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.offset + self.slope.iter().zip(x).map(|(s, v)| s * v).sum::<f64>()
    }
}

fn check_x(x: &[f64], p: &GaussianParams) -> Result<()> {
    if x.len() != p.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: x.len(),
        });
    }
    Ok(())
}

/// `K = Σ (Σ + s2 I)⁻¹` and `V = (Σ⁻¹ + s2⁻¹ I)⁻¹ = s2 K`, written so that
/// `s2 = 0` is handled without inverting `Σ`.
fn gain_and_cov(p: &GaussianParams, s2: f64) -> Result<(Matrix, Matrix)> {
    let d = p.dim();
    let inflated = p.cov() + Matrix::identity(d, d) * s2;
    let inv = spd_inverse(&inflated)?;
    let k = p.cov() * inv;
    let v = &k * s2;
    // symmetrize against round-off
    let v = (&v + v.transpose()) * 0.5;
    Ok((k, v))
}

/// Posterior mean and covariance of `X_0 | X_t = x` for `X_0 ~ p` at noise
/// variance `s2`.
pub fn posterior_moments_at(x: &[f64], s2: f64, p: &GaussianParams) -> Result<(Vector, Matrix)> {
    check_x(x, p)?;
    let (k, v) = gain_and_cov(p, s2)?;
    let xv = Vector::from_column_slice(x);
    Ok((p.mean() + &k * (xv - p.mean()), v))
}

/// `m_t(x) = μ + Σ(Σ + σ_t² I)⁻¹(x − μ)`, `V_t = (Σ⁻¹ + σ_t⁻² I)⁻¹`.
pub fn posterior_moments(
    x: &[f64],
    t: f64,
    p: &GaussianParams,
    schedule: &NoiseSchedule,
) -> Result<(Vector, Matrix)> {
    let s = schedule.sigma(t)?;
    posterior_moments_at(x, s * s, p)
}

/// Exponent of `f_t(x) = E[ℓ(X_0) | X_t = x] = exp(c + βᵀm_t(x) + ½ βᵀV_tβ)`.
pub fn noisy_potential_form(pot: &LogAffinePotential, p: &GaussianParams, s2: f64) -> Result<LogAffineForm> {
    pot.check_dim(p.dim())?;
    let (k, v) = gain_and_cov(p, s2)?;
    let beta = pot.beta_vec();
    // βᵀ(μ + K(x − μ)) = (Kᵀβ)ᵀx + βᵀ(I − K)μ
    let slope = k.transpose() * &beta;
    let offset = pot.c + beta.dot(p.mean()) - slope.dot(p.mean()) + 0.5 * beta.dot(&(&v * &beta));
    Ok(LogAffineForm { slope, offset })
}

/// `log C_t(w) = ½ (w² − w) βᵀV_tβ`, the x-free factor in `h = C f^w`.
pub fn log_tilt_constant(pot: &LogAffinePotential, p: &GaussianParams, s2: f64, w: f64) -> Result<f64> {
    pot.check_dim(p.dim())?;
    let (_, v) = gain_and_cov(p, s2)?;
    let beta = pot.beta_vec();
    Ok(0.5 * (w * w - w) * beta.dot(&(&v * &beta)))
}

/// Exponent of `h_t^(w)(x) = E[ℓ(X_0)^w | X_t = x]`, derived directly from
/// the lognormal moment of the posterior (not from `f_t`).
pub fn tilt_form(pot: &LogAffinePotential, p: &GaussianParams, s2: f64, w: f64) -> Result<LogAffineForm> {
    pot.check_dim(p.dim())?;
    let (k, v) = gain_and_cov(p, s2)?;
    let wb = pot.beta_vec() * w;
    let slope = k.transpose() * &wb;
    let offset = w * pot.c + wb.dot(p.mean()) - slope.dot(p.mean()) + 0.5 * wb.dot(&(&v * &wb));
    Ok(LogAffineForm { slope, offset })
}

pub fn noisy_potential(x: &[f64], t: f64, pot: &LogAffinePotential, p: &GaussianParams, schedule: &NoiseSchedule) -> Result<f64> {
    check_x(x, p)?;
    let s = schedule.sigma(t)?;
    Ok(noisy_potential_form(pot, p, s * s)?.eval(x).exp())
}

/// `h_t^(w)(x) = C_t(w) f_t(x)^w`, assembled from the two factors.
pub fn tilt_factor(
    x: &[f64],
    t: f64,
    w: f64,
    pot: &LogAffinePotential,
    p: &GaussianParams,
    schedule: &NoiseSchedule,
) -> Result<f64> {
    check_x(x, p)?;
    let s2 = schedule.sigma(t)?.powi(2);
    let log_f = noisy_potential_form(pot, p, s2)?.eval(x);
    Ok((log_tilt_constant(pot, p, s2, w)? + w * log_f).exp())
}

/// `∇ log f_t = (Σ + σ_t² I)⁻¹ Σ β`, constant in `x`.
pub fn noisy_potential_gradient(t: f64, pot: &LogAffinePotential, p: &GaussianParams, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    let s2 = schedule.sigma(t)?.powi(2);
    Ok(noisy_potential_form(pot, p, s2)?.slope.iter().copied().collect())
}

/// `∇ log h_t^(w)`, read off the exponent of `h` itself.
pub fn tilt_gradient(
    t: f64,
    w: f64,
    pot: &LogAffinePotential,
    p: &GaussianParams,
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>> {
    let s2 = schedule.sigma(t)?.powi(2);
    Ok(tilt_form(pot, p, s2, w)?.slope.iter().copied().collect())
}

/// Checks the identity `log h = log C + w log f` coefficient by coefficient
/// and returns the largest relative discrepancy.
pub fn tilt_identity_residual(pot: &LogAffinePotential, p: &GaussianParams, s2: f64, w: f64) -> Result<f64> {
    let f = noisy_potential_form(pot, p, s2)?;
    let h = tilt_form(pot, p, s2, w)?;
    let c = log_tilt_constant(pot, p, s2, w)?;
    let rel = |a: f64, b: f64| (a - b).abs() / (1.0 + a.abs().max(b.abs()));
    let mut worst = rel(h.offset, c + w * f.offset);
    for (hs, fs) in h.slope.iter().zip(f.slope.iter()) {
        worst = worst.max(rel(*hs, w * fs));
    }
    Ok(worst)
}

/// `log M_a(w) = w c + w βᵀμ_a + ½ w² βᵀΣ_aβ`.
pub fn log_endpoint_moment(group: &GaussianParams, pot: &LogAffinePotential, w: f64) -> Result<f64> {
    if !(w >= 0.0) {
        return Err(Error::InvalidArgument("guidance scale must be non-negative".into()));
    }
    pot.check_dim(group.dim())?;
    let beta = pot.beta_vec();
    Ok(w * pot.c + w * beta.dot(group.mean()) + 0.5 * w * w * beta.dot(&(group.cov() * &beta)))
}

/// `M_a(w) = E[ℓ(X_0)^w | A = a]`.
pub fn endpoint_moment(group: &GaussianParams, pot: &LogAffinePotential, w: f64) -> Result<f64> {
    log_endpoint_moment(group, pot, w).map(f64::exp)
}

/// Groups with priors and Gaussian class-conditional laws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianGroupModel {
    pub groups: Vec<(f64, GaussianParams)>,
}

impl GaussianGroupModel {
    pub fn new(groups: Vec<(f64, GaussianParams)>) -> Result<Self> {
        let m = Self { groups };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups.len() < 2 {
            return Err(Error::InvalidArgument("need at least two groups".into()));
        }
        let d = self.groups[0].1.dim();
        if self.groups.iter().any(|(_, p)| p.dim() != d) {
            return Err(Error::InvalidArgument("groups must share a dimension".into()));
        }
        if self.groups.iter().any(|(pi, _)| !(pi.is_finite() && *pi > 0.0)) {
            return Err(Error::InvalidArgument("group priors must be positive".into()));
        }
        if (self.priors().iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("group priors must sum to one".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.groups[0].1.dim()
    }

    pub fn priors(&self) -> Vec<f64> {
        self.groups.iter().map(|(p, _)| *p).collect()
    }

    /// Clean data law as a scoreable mixture (group order preserved).
    pub fn mixture(&self) -> Result<GaussianMixture> {
        let params: Vec<GaussianParams> = self.groups.iter().map(|(_, p)| p.clone()).collect();
        GaussianMixture::new(&self.priors(), &params)
    }

    /// Single-condition world (condition 1) with a uniform target, for
    /// classification with the world's Bayes posterior.
    pub fn to_world(&self) -> Result<MixtureWorld> {
        let n = self.groups.len();
        let comps = self
            .groups
            .iter()
            .enumerate()
            .map(|(a, (pi, p))| Component {
                group: a,
                condition: 1,
                weight: *pi,
                params: p.clone(),
            })
            .collect();
        MixtureWorld::new(n, comps, vec![vec![1.0 / n as f64; n]; 2])
    }

    /// Moment-matched single Gaussian of the whole mixture.
    pub fn pooled(&self) -> Result<GaussianParams> {
        let d = self.dim();
        let mut mean = Vector::zeros(d);
        for (pi, p) in &self.groups {
            mean += p.mean() * *pi;
        }
        let mut cov = Matrix::zeros(d, d);
        for (pi, p) in &self.groups {
            let diff = p.mean() - &mean;
            cov += (p.cov() + &diff * diff.transpose()) * *pi;
        }
        GaussianParams::new(mean, cov)
    }

    /// Mean vector and covariance trace of the data law (for SDE initialization).
    pub fn moments(&self) -> Result<(Vec<f64>, f64)> {
        let p = self.pooled()?;
        Ok((p.mean().iter().copied().collect(), p.cov().trace()))
    }
}

/// `Q^w(a) = π_a M_a(w) / Σ π_a' M_a'(w)`, computed in log space.
pub fn group_reweighting(model: &GaussianGroupModel, pot: &LogAffinePotential, w: f64) -> Result<Vec<f64>> {
    model.validate()?;
    let logs = model
        .groups
        .iter()
        .map(|(pi, p)| Ok(pi.ln() + log_endpoint_moment(p, pot, w)?))
        .collect::<Result<Vec<f64>>>()?;
    Ok(softmax(&logs))
}

fn softmax(logs: &[f64]) -> Vec<f64> {
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Result of the target-ratio invariance check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioInvarianceReport {
    pub w_grid: Vec<f64>,
    pub t_grid: Vec<f64>,
    /// `ratio[ti][wi][a] = p_t^w(a) / p_t^w(0)`.
    pub ratios: Vec<Vec<Vec<f64>>>,
    /// Per scale, the largest deviation from the `w = 0` ratio over times and groups.
    pub deviation_by_w: Vec<f64>,
    pub max_deviation: f64,
}

/// Group ratios of the guided target `p_t^w(x) ∝ p_t(x) f_t(x)^w`, where
/// `f_t` is the conditional expectation of `ℓ` under the moment-matched
/// Gaussian of the model. Each `E[f_t(X_t)^w | a]` is a lognormal moment
/// because `X_t | a ~ N(μ_a, Σ_a + σ_t² I)`.
pub fn check_ratio_invariance(
    model: &GaussianGroupModel,
    pot: &LogAffinePotential,
    w_grid: &[f64],
    t_grid: &[f64],
    schedule: &NoiseSchedule,
) -> Result<RatioInvarianceReport> {
    model.validate()?;
    if w_grid.is_empty() || t_grid.is_empty() {
        return Err(Error::EmptyInput("scale and time grids"));
    }
    let reference = model.pooled()?;
    let d = model.dim();
    let mut ratios = Vec::with_capacity(t_grid.len());
    let mut deviation_by_w = vec![0.0f64; w_grid.len()];
    for &t in t_grid {
        let s2 = schedule.sigma(t)?.powi(2);
        let form = noisy_potential_form(pot, &reference, s2)?;
        let b = &form.slope;
        let log_group = |w: f64| -> Vec<f64> {
            model
                .groups
                .iter()
                .map(|(pi, p)| {
                    let noisy = p.cov() + Matrix::identity(d, d) * s2;
                    pi.ln() + w * form.offset + w * b.dot(p.mean()) + 0.5 * w * w * b.dot(&(&noisy * b))
                })
                .collect()
        };
        let base = log_group(0.0);
        let base_ratio: Vec<f64> = base.iter().map(|l| (l - base[0]).exp()).collect();
        let mut per_w = Vec::with_capacity(w_grid.len());
        for (wi, &w) in w_grid.iter().enumerate() {
            let lg = log_group(w);
            let r: Vec<f64> = lg.iter().map(|l| (l - lg[0]).exp()).collect();
            let dev = r
                .iter()
                .zip(&base_ratio)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            deviation_by_w[wi] = deviation_by_w[wi].max(dev);
            per_w.push(r);
        }
        ratios.push(per_w);
    }
    let max_deviation = deviation_by_w.iter().copied().fold(0.0, f64::max);
    Ok(RatioInvarianceReport {
        w_grid: w_grid.to_vec(),
        t_grid: t_grid.to_vec(),
        ratios,
        deviation_by_w,
        max_deviation,
    })
}
