use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::MAX_DIM;

use super::schedule::{NoiseLevel, NoiseSchedule};
use super::score::{guided_score, GuidancePotential, ScoreFn};

/// Integrator settings shared by both samplers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub n_steps: usize,
    /// Integration stops at `t_min` to stay clear of the σ → 0 singularity.
    pub t_min: f64,
    /// Apply one final posterior-mean step `x + σ² s(x)` at `t_min`.
    pub denoise_endpoint: bool,
}

impl SamplerConfig {
    pub fn sde() -> Self {
        Self {
            n_steps: 256,
            t_min: 1e-3,
            denoise_endpoint: true,
        }
    }

    pub fn ode() -> Self {
        Self {
            n_steps: 100,
            t_min: 1e-3,
            denoise_endpoint: true,
        }
    }

    pub fn with_steps(mut self, n_steps: usize) -> Self {
        self.n_steps = n_steps;
        self
    }

    fn validate(&self, schedule: &NoiseSchedule) -> Result<()> {
        if self.n_steps < 2 {
            return Err(Error::InvalidArgument("n_steps must be at least 2".into()));
        }
        if !(self.t_min > 0.0 && self.t_min < schedule.horizon) {
            return Err(Error::InvalidArgument("t_min must lie in (0, T)".into()));
        }
        Ok(())
    }

    fn times(&self, schedule: &NoiseSchedule) -> Vec<f64> {
        let span = schedule.horizon - self.t_min;
        (0..=self.n_steps)
            .map(|k| {
                if k == self.n_steps {
                    self.t_min
                } else {
                    schedule.horizon - span * k as f64 / self.n_steps as f64
                }
            })
            .collect()
    }
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self::sde()
    }
}

/// Initial law `N(mean, var I)` of the reverse SDE at `t = T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdeInit {
    pub mean: Vec<f64>,
    pub var: f64,
}

impl SdeInit {
    /// `N(μ_data, (σ_max² + tr(Σ_data)/d) I)`.
    pub fn from_data(mean: &[f64], cov_trace: f64, schedule: &NoiseSchedule) -> Self {
        let d = mean.len() as f64;
        Self {
            mean: mean.to_vec(),
            var: schedule.sigma_max * schedule.sigma_max + cov_trace / d,
        }
    }
}

/// A recorded sampler path.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Strictly decreasing integration times, `T` first.
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub seed: u64,
    /// Final sample (the last state, denoised when configured).
    pub endpoint: Vec<f64>,
}

/// Independent reproducible stream for chain `stream` under `seed`.
pub fn chain_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `x0 + σ_t ε`.
pub fn forward_corrupt<R: Rng + ?Sized>(
    x0: &[f64],
    t: f64,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let sigma = schedule.sigma(t)?;
    Ok(x0
        .iter()
        .map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect())
}

fn check_finite(x: &[f64], step: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteState { step })
    }
}

fn denoise<S: ScoreFn + ?Sized>(score: &S, x: &mut [f64], schedule: &NoiseSchedule, t: f64) {
    let lvl = schedule.level_at(t);
    let mut s = [0.0; MAX_DIM];
    let d = x.len();
    score.score_into(x, lvl, &mut s[..d]);
    for i in 0..d {
        x[i] += lvl.variance() * s[i];
    }
}

/// Karras spacing exponent for the ODE grid; concentrates steps at low noise.
const ODE_GRID_RHO: f64 = 7.0;

/// Decreasing noise levels `σ_i = (σ_T^{1/ρ} + i/n (σ_lo^{1/ρ} - σ_T^{1/ρ}))^ρ`.
fn ode_sigmas(cfg: &SamplerConfig, schedule: &NoiseSchedule) -> Vec<f64> {
    let hi = schedule.sigma_max.powf(1.0 / ODE_GRID_RHO);
    let lo = schedule.sigma_at(cfg.t_min).powf(1.0 / ODE_GRID_RHO);
    (0..=cfg.n_steps)
        .map(|k| {
            if k == cfg.n_steps {
                schedule.sigma_at(cfg.t_min)
            } else if k == 0 {
                schedule.sigma_max
            } else {
                (hi + (lo - hi) * k as f64 / cfg.n_steps as f64).powf(ODE_GRID_RHO)
            }
        })
        .collect()
}

/// Heun integration of the probability-flow ODE
/// `dx/dt = -σ̇_t σ_t ∇log p_t(x)` from `T` down to `t_min`.
///
/// The ODE is integrated in σ (`dx/dσ = -σ ∇log p`) on a Karras grid.
pub fn sample_pf_ode<S: ScoreFn + ?Sized>(
    score: &S,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
    x_t: &[f64],
) -> Result<Trajectory> {
    cfg.validate(schedule)?;
    let d = score.dim();
    if x_t.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: x_t.len(),
        });
    }
    let sigmas = ode_sigmas(cfg, schedule);
    let times: Vec<f64> = sigmas
        .iter()
        .enumerate()
        .map(|(k, &s)| match k {
            0 => schedule.horizon,
            k if k == cfg.n_steps => cfg.t_min,
            _ => schedule.time_of_sigma(s),
        })
        .collect();
    let mut x = x_t.to_vec();
    let mut states = Vec::with_capacity(times.len());
    states.push(x.clone());
    let mut d1 = [0.0; MAX_DIM];
    let mut d2 = [0.0; MAX_DIM];
    let mut x_pred = [0.0; MAX_DIM];
    for k in 0..cfg.n_steps {
        let (s0, s1) = (sigmas[k], sigmas[k + 1]);
        let ds = s1 - s0;
        score.score_into(&x, NoiseLevel { t: times[k], sigma: s0 }, &mut d1[..d]);
        d1[..d].iter_mut().for_each(|v| *v *= -s0);
        for i in 0..d {
            x_pred[i] = x[i] + ds * d1[i];
        }
        score.score_into(&x_pred[..d], NoiseLevel { t: times[k + 1], sigma: s1 }, &mut d2[..d]);
        d2[..d].iter_mut().for_each(|v| *v *= -s1);
        for i in 0..d {
            x[i] += 0.5 * ds * (d1[i] + d2[i]);
        }
        check_finite(&x, k)?;
        states.push(x.clone());
    }
    let mut endpoint = x;
    if cfg.denoise_endpoint {
        denoise(score, &mut endpoint, schedule, cfg.t_min);
        check_finite(&endpoint, cfg.n_steps)?;
    }
    Ok(Trajectory {
        times,
        states,
        seed: 0,
        endpoint,
    })
}

fn run_sde<S: ScoreFn + ?Sized, R: Rng + ?Sized>(
    score: &S,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
    init: &SdeInit,
    rng: &mut R,
    mut record: Option<&mut Vec<Vec<f64>>>,
) -> Result<Vec<f64>> {
    let d = score.dim();
    if init.mean.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: init.mean.len(),
        });
    }
    let times = cfg.times(schedule);
    let init_sd = init.var.sqrt();
    let mut z: Vec<f64> = init
        .mean
        .iter()
        .map(|m| m + init_sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    if let Some(r) = record.as_deref_mut() {
        r.push(z.clone());
    }
    let mut s = [0.0; MAX_DIM];
    for (k, win) in times.windows(2).enumerate() {
        let lvl = schedule.level_at(win[0]);
        // variance-matched increment ∫ g² dt = σ²(t_k) - σ²(t_{k+1})
        let dv = lvl.variance() - schedule.sigma_at(win[1]).powi(2);
        let noise_sd = dv.sqrt();
        score.score_into(&z, lvl, &mut s[..d]);
        for i in 0..d {
            z[i] += dv * s[i] + noise_sd * rng.sample::<f64, _>(StandardNormal);
        }
        check_finite(&z, k)?;
        if let Some(r) = record.as_deref_mut() {
            r.push(z.clone());
        }
    }
    if cfg.denoise_endpoint {
        denoise(score, &mut z, schedule, cfg.t_min);
        check_finite(&z, cfg.n_steps)?;
    }
    Ok(z)
}

/// Euler–Maruyama integration of the guided reverse VE-SDE
/// `dZ = g²(τ) (s_τ(Z) + w ∇log f_τ(Z)) ds + g(τ) dB`, `τ = T - s`,
/// recording every state.
#[allow(clippy::too_many_arguments)]
pub fn sample_reverse_sde<S, P>(
    score: &S,
    potential: &P,
    w: f64,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
    init: &SdeInit,
    seed: u64,
    stream: u64,
) -> Result<Trajectory>
where
    S: ScoreFn + ?Sized,
    P: GuidancePotential + ?Sized,
{
    cfg.validate(schedule)?;
    let guided = guided_score(score, potential, w);
    let mut rng = chain_rng(seed, stream);
    let mut states = Vec::with_capacity(cfg.n_steps + 1);
    let endpoint = run_sde(&guided, schedule, cfg, init, &mut rng, Some(&mut states))?;
    Ok(Trajectory {
        times: cfg.times(schedule),
        states,
        seed,
        endpoint,
    })
}

/// Endpoint of a single reverse-SDE chain driven by an already-assembled
/// score (guided, composed, or plain).
pub fn reverse_sde_endpoint<S: ScoreFn + ?Sized, R: Rng + ?Sized>(
    score: &S,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
    init: &SdeInit,
    rng: &mut R,
) -> Result<Vec<f64>> {
    cfg.validate(schedule)?;
    run_sde(score, schedule, cfg, init, rng, None)
}

/// Endpoints of `n_paths` independent chains; chain `i` uses stream `i` of
/// `seed`, so results do not depend on the thread count.
pub fn reverse_sde_endpoints<S: ScoreFn + ?Sized>(
    score: &S,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
    init: &SdeInit,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    cfg.validate(schedule)?;
    (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = chain_rng(seed, i);
            run_sde(score, schedule, cfg, init, &mut rng, None)
        })
        .collect()
}
