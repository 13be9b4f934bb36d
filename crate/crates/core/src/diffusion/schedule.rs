use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Variance-exploding noise schedule with geometric interpolation
/// `σ_t = σ_min (σ_max / σ_min)^t` over `t ∈ (0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSchedule {
    pub sigma_min: f64,
    pub sigma_max: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
}

fn default_horizon() -> f64 {
    1.0
}

impl Default for NoiseSchedule {
    /// `σ_max` is 20x the unit data scale.
    fn default() -> Self {
        Self {
            sigma_min: 2e-3,
            sigma_max: 20.0,
            horizon: 1.0,
        }
    }
}

/// A time together with its noise level; what score and potential
/// evaluations receive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseLevel {
    pub t: f64,
    pub sigma: f64,
}

impl NoiseLevel {
    pub fn variance(&self) -> f64 {
        self.sigma * self.sigma
    }

    /// `-2 ln σ` under the unit-data convention.
    pub fn log_snr(&self) -> f64 {
        -2.0 * self.sigma.ln()
    }
}

impl NoiseSchedule {
    pub fn new(sigma_min: f64, sigma_max: f64) -> Result<Self> {
        let s = Self {
            sigma_min,
            sigma_max,
            horizon: 1.0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min.is_finite() && self.sigma_min > 0.0) {
            return Err(Error::InvalidArgument("sigma_min must be positive".into()));
        }
        if !(self.sigma_max.is_finite() && self.sigma_max > self.sigma_min) {
            return Err(Error::InvalidArgument(
                "sigma_max must exceed sigma_min".into(),
            ));
        }
        if (self.horizon - 1.0).abs() > 0.0 {
            return Err(Error::InvalidArgument("time horizon is fixed to 1".into()));
        }
        Ok(())
    }

    fn check(&self, t: f64) -> Result<()> {
        if t > 0.0 && t <= self.horizon {
            Ok(())
        } else {
            Err(Error::TimeOutOfRange {
                t,
                horizon: self.horizon,
            })
        }
    }

    fn log_ratio(&self) -> f64 {
        (self.sigma_max / self.sigma_min).ln()
    }

    pub(crate) fn sigma_at(&self, t: f64) -> f64 {
        if t >= self.horizon {
            return self.sigma_max;
        }
        self.sigma_min * (self.log_ratio() * t / self.horizon).exp()
    }

    pub fn sigma(&self, t: f64) -> Result<f64> {
        self.check(t)?;
        Ok(self.sigma_at(t))
    }

    pub fn log_snr(&self, t: f64) -> Result<f64> {
        Ok(-2.0 * self.sigma(t)?.ln())
    }

    /// `g(t)² = d σ_t² / dt = 2 ln(σ_max/σ_min) σ_t²` for the geometric schedule.
    pub fn g_squared(&self, t: f64) -> Result<f64> {
        let s = self.sigma(t)?;
        Ok(2.0 * self.log_ratio() / self.horizon * s * s)
    }

    pub fn level(&self, t: f64) -> Result<NoiseLevel> {
        Ok(NoiseLevel {
            t,
            sigma: self.sigma(t)?,
        })
    }

    pub(crate) fn level_at(&self, t: f64) -> NoiseLevel {
        NoiseLevel {
            t,
            sigma: self.sigma_at(t),
        }
    }

    /// Inverse map from a noise level back to time (clamped to the horizon).
    pub fn time_of_sigma(&self, sigma: f64) -> f64 {
        ((sigma / self.sigma_min).ln() / self.log_ratio() * self.horizon).clamp(0.0, self.horizon)
    }

    pub fn log_snr_range(&self) -> (f64, f64) {
        (-2.0 * self.sigma_max.ln(), -2.0 * self.sigma_min.ln())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_unit_noise() {
        let s = NoiseSchedule::new(0.01, 10.0).unwrap();
        assert!((s.sigma(1.0).unwrap() - 10.0).abs() < 1e-12);
        assert!((s.sigma(1e-9).unwrap() - 0.01).abs() < 1e-9);
        let t1 = s.time_of_sigma(1.0);
        assert!(s.log_snr(t1).unwrap().abs() < 1e-12);
    }

    #[test]
    fn g_squared_matches_finite_difference() {
        let s = NoiseSchedule::new(0.01, 10.0).unwrap();
        let h = 1e-5;
        let fd = (s.sigma(0.5 + h).unwrap().powi(2) - s.sigma(0.5 - h).unwrap().powi(2)) / (2.0 * h);
        let g2 = s.g_squared(0.5).unwrap();
        assert!(((fd - g2) / g2).abs() < 1e-6);
    }

    #[test]
    fn rejects_out_of_range() {
        let s = NoiseSchedule::default();
        assert!(s.sigma(0.0).is_err());
        assert!(s.sigma(1.5).is_err());
        assert!(s.sigma(-0.1).is_err());
        assert!(NoiseSchedule::new(1.0, 0.5).is_err());
        assert!(NoiseSchedule::new(0.0, 0.5).is_err());
    }

    #[test]
    fn strictly_increasing() {
        let s = NoiseSchedule::default();
        let sig: Vec<f64> = (1..=100).map(|i| s.sigma(i as f64 / 100.0).unwrap()).collect();
        assert!(sig.windows(2).all(|w| w[1] > w[0]));
    }
}
