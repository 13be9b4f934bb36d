use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffusion::{NoiseLevel, NoiseSchedule};
use crate::error::{Error, Result};
use crate::numerics::sigmoid;

/// Number of time features appended to the scaled input.
pub const N_TIME_FEATURES: usize = 3;
/// Largest supported hidden width (scratch buffers live on the stack).
pub const MAX_WIDTH: usize = 256;
/// The logSNR feature is divided by this so it stays O(1).
const LOG_SNR_SCALE: f64 = 4.0;

/// Shape of the network; serialized as the header of the parameter file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: [usize; 2],
    pub activation: String,
}

impl Architecture {
    pub fn new(input_dim: usize, hidden: [usize; 2]) -> Result<Self> {
        let a = Self {
            input_dim,
            hidden,
            activation: "tanh".into(),
        };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.input_dim > crate::numerics::MAX_DIM {
            return Err(Error::InvalidArgument("unsupported input dimension".into()));
        }
        if self.hidden.iter().any(|&h| h == 0 || h > MAX_WIDTH) {
            return Err(Error::InvalidArgument(format!("hidden widths must lie in 1..={MAX_WIDTH}")));
        }
        if self.activation != "tanh" {
            return Err(Error::InvalidArgument("only tanh activations are supported".into()));
        }
        Ok(())
    }

    fn n_in(&self) -> usize {
        self.input_dim + N_TIME_FEATURES
    }

    pub fn n_params(&self) -> usize {
        let [h1, h2] = self.hidden;
        h1 * self.n_in() + h1 + h2 * h1 + h2 + h2 + 1
    }

    /// Offsets of `(W1, b1, W2, b2, w3, b3)` in the flat parameter vector;
    /// weight matrices are row-major `fan_out × fan_in`.
    pub fn offsets(&self) -> [usize; 6] {
        let [h1, h2] = self.hidden;
        let w1 = 0;
        let b1 = w1 + h1 * self.n_in();
        let w2 = b1 + h1;
        let b2 = w2 + h2 * h1;
        let w3 = b2 + h2;
        let b3 = w3 + h2;
        [w1, b1, w2, b2, w3, b3]
    }
}

/// Per-evaluation activations kept for the backward pass.
pub(crate) struct Trace {
    z0: [f64; crate::numerics::MAX_DIM + N_TIME_FEATURES],
    h1: [f64; MAX_WIDTH],
    h2: [f64; MAX_WIDTH],
    c_in: f64,
    pub(crate) logit: f64,
}

/// Time-conditioned binary classifier `p_φ(y = 1 | x_t, t)`: a two-hidden-
/// layer tanh perceptron on `(c_in x, logSNR, sin πt, cos πt)` with
/// `c_in = 1 / sqrt(1 + σ²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoisyClassifier {
    pub architecture: Architecture,
    pub schedule: NoiseSchedule,
    pub params: Vec<f64>,
}

impl NoisyClassifier {
    /// Gaussian initialization with variance `1 / fan_in`.
    pub fn init<R: Rng + ?Sized>(architecture: Architecture, schedule: NoiseSchedule, rng: &mut R) -> Result<Self> {
        architecture.validate()?;
        let [h1, h2] = architecture.hidden;
        let n_in = architecture.n_in();
        let mut params = Vec::with_capacity(architecture.n_params());
        let mut layer = |fan_out: usize, fan_in: usize, params: &mut Vec<f64>| {
            let sd = (1.0 / fan_in as f64).sqrt();
            for _ in 0..fan_out * fan_in {
                params.push(sd * rng.sample::<f64, _>(StandardNormal));
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        };
        layer(h1, n_in, &mut params);
        layer(h2, h1, &mut params);
        layer(1, h2, &mut params);
        Ok(Self {
            architecture,
            schedule,
            params,
        })
    }

    /// All-zero parameters: `p = 1/2` everywhere.
    pub fn zeroed(architecture: Architecture, schedule: NoiseSchedule) -> Result<Self> {
        architecture.validate()?;
        let n = architecture.n_params();
        Ok(Self {
            architecture,
            schedule,
            params: vec![0.0; n],
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.architecture.validate()?;
        self.schedule.validate()?;
        if self.params.len() != self.architecture.n_params() {
            return Err(Error::DimensionMismatch {
                expected: self.architecture.n_params(),
                got: self.params.len(),
            });
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument("classifier parameters must be finite".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn input_dim(&self) -> usize {
        self.architecture.input_dim
    }

    pub(crate) fn forward_with(&self, params: &[f64], x: &[f64], level: NoiseLevel) -> Trace {
        let arch = &self.architecture;
        let d = arch.input_dim;
        let n_in = arch.n_in();
        let [h1n, h2n] = arch.hidden;
        let [w1, b1, w2, b2, w3, b3] = arch.offsets();
        let c_in = 1.0 / (1.0 + level.variance()).sqrt();
        let mut tr = Trace {
            z0: [0.0; crate::numerics::MAX_DIM + N_TIME_FEATURES],
            h1: [0.0; MAX_WIDTH],
            h2: [0.0; MAX_WIDTH],
            c_in,
            logit: 0.0,
        };
        for i in 0..d {
            tr.z0[i] = c_in * x[i];
        }
        let phase = std::f64::consts::PI * level.t;
        tr.z0[d] = level.log_snr() / LOG_SNR_SCALE;
        tr.z0[d + 1] = phase.sin();
        tr.z0[d + 2] = phase.cos();
        for j in 0..h1n {
            let row = &params[w1 + j * n_in..w1 + (j + 1) * n_in];
            let a: f64 = row.iter().zip(&tr.z0[..n_in]).map(|(w, z)| w * z).sum::<f64>() + params[b1 + j];
            tr.h1[j] = a.tanh();
        }
        for j in 0..h2n {
            let row = &params[w2 + j * h1n..w2 + (j + 1) * h1n];
            let a: f64 = row.iter().zip(&tr.h1[..h1n]).map(|(w, h)| w * h).sum::<f64>() + params[b2 + j];
            tr.h2[j] = a.tanh();
        }
        tr.logit = params[w3..w3 + h2n]
            .iter()
            .zip(&tr.h2[..h2n])
            .map(|(w, h)| w * h)
            .sum::<f64>()
            + params[b3];
        tr
    }

    /// Accumulates `g · ∂logit/∂θ` into `grad`; optionally writes
    /// `g · ∂logit/∂x` into `dx`.
    pub(crate) fn backward_with(
        &self,
        params: &[f64],
        tr: &Trace,
        g: f64,
        grad: Option<&mut [f64]>,
        dx: Option<&mut [f64]>,
    ) {
        let arch = &self.architecture;
        let d = arch.input_dim;
        let n_in = arch.n_in();
        let [h1n, h2n] = arch.hidden;
        let [w1, b1, w2, b2, w3, b3] = arch.offsets();
        let mut d2 = [0.0; MAX_WIDTH];
        for j in 0..h2n {
            d2[j] = g * params[w3 + j] * (1.0 - tr.h2[j] * tr.h2[j]);
        }
        let mut d1 = [0.0; MAX_WIDTH];
        for k in 0..h1n {
            let mut acc = 0.0;
            for j in 0..h2n {
                acc += params[w2 + j * h1n + k] * d2[j];
            }
            d1[k] = acc * (1.0 - tr.h1[k] * tr.h1[k]);
        }
        if let Some(grad) = grad {
            for j in 0..h2n {
                grad[w3 + j] += g * tr.h2[j];
            }
            grad[b3] += g;
            for j in 0..h2n {
                let row = &mut grad[w2 + j * h1n..w2 + (j + 1) * h1n];
                for (gw, h) in row.iter_mut().zip(&tr.h1[..h1n]) {
                    *gw += d2[j] * h;
                }
                grad[b2 + j] += d2[j];
            }
            for k in 0..h1n {
                let row = &mut grad[w1 + k * n_in..w1 + (k + 1) * n_in];
                for (gw, z) in row.iter_mut().zip(&tr.z0[..n_in]) {
                    *gw += d1[k] * z;
                }
                grad[b1 + k] += d1[k];
            }
        }
        if let Some(dx) = dx {
            for (i, out) in dx.iter_mut().enumerate().take(d) {
                let mut acc = 0.0;
                for k in 0..h1n {
                    acc += params[w1 + k * n_in + i] * d1[k];
                }
                *out = tr.c_in * acc;
            }
        }
    }

    pub fn logit(&self, x: &[f64], level: NoiseLevel) -> f64 {
        self.forward_with(&self.params, x, level).logit
    }

    /// `p_φ(y = 1 | x_t, t)`.
    pub fn prob(&self, x: &[f64], level: NoiseLevel) -> f64 {
        sigmoid(self.logit(x, level))
    }

    /// `∇_x log p_φ(y | x_t, t)` by backpropagation.
    pub fn grad_log_prob_into(&self, x: &[f64], level: NoiseLevel, y: usize, out: &mut [f64]) {
        let tr = self.forward_with(&self.params, x, level);
        let p = sigmoid(tr.logit);
        // d log p(y=1)/dlogit = 1 - p;  d log p(y=0)/dlogit = -p
        let g = if y == 1 { 1.0 - p } else { -p };
        self.backward_with(&self.params, &tr, g, None, Some(out));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::chain_rng;

    #[test]
    fn param_count_and_layout() {
        let a = Architecture::new(2, [4, 3]).unwrap();
        assert_eq!(a.n_params(), 4 * 5 + 4 + 3 * 4 + 3 + 3 + 1);
        assert_eq!(a.offsets()[5], a.n_params() - 1);
        assert!(Architecture::new(2, [0, 3]).is_err());
    }

    #[test]
    fn parameter_gradient_matches_finite_difference() {
        let a = Architecture::new(2, [5, 4]).unwrap();
        let c = NoisyClassifier::init(a, NoiseSchedule::default(), &mut chain_rng(1, 0)).unwrap();
        let lvl = NoiseLevel { t: 0.4, sigma: 0.7 };
        let x = [0.3, -1.1];
        let tr = c.forward_with(&c.params, &x, lvl);
        let mut g = vec![0.0; c.params.len()];
        c.backward_with(&c.params, &tr, 1.0, Some(&mut g), None);
        let h = 1e-6;
        for k in 0..c.params.len() {
            let mut p = c.params.clone();
            p[k] += h;
            let up = c.forward_with(&p, &x, lvl).logit;
            p[k] -= 2.0 * h;
            let dn = c.forward_with(&p, &x, lvl).logit;
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-7 * (1.0 + fd.abs()), "param {k}: {fd} vs {}", g[k]);
        }
    }
}
