use std::fmt;

use serde::{Deserialize, Serialize};

use crate::numerics::GaussianMixture;

use super::schedule::NoiseLevel;

/// A time-dependent score field `x ↦ ∇ log p_t(x)`.
pub trait ScoreFn: Send + Sync {
    fn dim(&self) -> usize;

    fn score_into(&self, x: &[f64], level: NoiseLevel, out: &mut [f64]);

    fn score(&self, x: &[f64], level: NoiseLevel) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.score_into(x, level, &mut out);
        out
    }
}

/// Where a guidance potential comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PotentialKind {
    Cg,
    Cfg,
    StayFair,
    Ag,
    Theory,
}

impl fmt::Display for PotentialKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PotentialKind::Cg => "cg",
            PotentialKind::Cfg => "cfg",
            PotentialKind::StayFair => "stayfair",
            PotentialKind::Ag => "ag",
            PotentialKind::Theory => "theory",
        };
        f.write_str(s)
    }
}

/// The guidance function `f(x_t, t)`, exposed through `∇ log f`.
pub trait GuidancePotential: Send + Sync {
    fn dim(&self) -> usize;

    fn grad_log_potential_into(&self, x: &[f64], level: NoiseLevel, out: &mut [f64]);

    fn kind(&self) -> PotentialKind;

    fn grad_log_potential(&self, x: &[f64], level: NoiseLevel) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.grad_log_potential_into(x, level, &mut out);
        out
    }
}

impl<S: ScoreFn + ?Sized> ScoreFn for &S {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn score_into(&self, x: &[f64], level: NoiseLevel, out: &mut [f64]) {
        (**self).score_into(x, level, out)
    }
}

impl<S: ScoreFn + ?Sized> ScoreFn for Box<S> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn score_into(&self, x: &[f64], level: NoiseLevel, out: &mut [f64]) {
        (**self).score_into(x, level, out)
    }
}

impl<P: GuidancePotential + ?Sized> GuidancePotential for &P {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn grad_log_potential_into(&self, x: &[f64], level: NoiseLevel, out: &mut [f64]) {
        (**self).grad_log_potential_into(x, level, out)
    }

    fn kind(&self) -> PotentialKind {
        (**self).kind()
    }
}

impl<P: GuidancePotential + ?Sized> GuidancePotential for Box<P> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn grad_log_potential_into(&self, x: &[f64], level: NoiseLevel, out: &mut [f64]) {
        (**self).grad_log_potential_into(x, level, out)
    }

    fn kind(&self) -> PotentialKind {
        (**self).kind()
    }
}

/// A fixed mixture is a model whose noisy score is available in closed form.
impl ScoreFn for GaussianMixture {
    fn dim(&self) -> usize {
        GaussianMixture::dim(self)
    }

    fn score_into(&self, x: &[f64], level: NoiseLevel, out: &mut [f64]) {
        GaussianMixture::score_into(self, x, level.variance(), out)
    }
}

/// Adapts a closure into a [`ScoreFn`].
pub struct FnScore<F> {
    dim: usize,
    f: F,
}

impl<F> FnScore<F>
where
    F: Fn(&[f64], NoiseLevel, &mut [f64]) + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> ScoreFn for FnScore<F>
where
    F: Fn(&[f64], NoiseLevel, &mut [f64]) + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn score_into(&self, x: &[f64], level: NoiseLevel, out: &mut [f64]) {
        (self.f)(x, level, out)
    }
}

/// Adapts a closure into a [`GuidancePotential`].
pub struct FnPotential<F> {
    dim: usize,
    kind: PotentialKind,
    f: F,
}

impl<F> FnPotential<F>
where
    F: Fn(&[f64], NoiseLevel, &mut [f64]) + Send + Sync,
{
    pub fn new(dim: usize, kind: PotentialKind, f: F) -> Self {
        Self { dim, kind, f }
    }
}

impl<F> GuidancePotential for FnPotential<F>
where
    F: Fn(&[f64], NoiseLevel, &mut [f64]) + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn grad_log_potential_into(&self, x: &[f64], level: NoiseLevel, out: &mut [f64]) {
        (self.f)(x, level, out)
    }

    fn kind(&self) -> PotentialKind {
        self.kind
    }
}

/// `∇ log p(x_t) + w ∇ log f(x_t, t)`.
pub struct GuidedScore<S, P> {
    base: S,
    potential: P,
    w: f64,
}

impl<S: ScoreFn, P: GuidancePotential> ScoreFn for GuidedScore<S, P> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn score_into(&self, x: &[f64], level: NoiseLevel, out: &mut [f64]) {
        self.base.score_into(x, level, out);
        // w = 0 returns the base score untouched (no -0.0 + 0.0 rewrites)
        if self.w == 0.0 {
            return;
        }
        let mut g = [0.0; crate::numerics::MAX_DIM];
        let d = out.len();
        self.potential.grad_log_potential_into(x, level, &mut g[..d]);
        for i in 0..d {
            out[i] += self.w * g[i];
        }
    }
}

pub fn guided_score<S: ScoreFn, P: GuidancePotential>(
    base: S,
    potential: P,
    w: f64,
) -> GuidedScore<S, P> {
    debug_assert_eq!(base.dim(), potential.dim());
    GuidedScore { base, potential, w }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> impl ScoreFn {
        FnScore::new(2, |x: &[f64], l: NoiseLevel, out: &mut [f64]| {
            out[0] = -x[0] / (1.0 + l.variance());
            out[1] = -0.0;
        })
    }

    fn pot() -> impl GuidancePotential {
        FnPotential::new(2, PotentialKind::Theory, |x: &[f64], _l: NoiseLevel, out: &mut [f64]| {
            out[0] = x[1].sin();
            out[1] = 0.5 * x[0];
        })
    }

    #[test]
    fn zero_scale_is_bitwise_base() {
        let lvl = NoiseLevel { t: 0.5, sigma: 0.7 };
        let x = [0.3, -1.2];
        let g = guided_score(base(), pot(), 0.0);
        let a = g.score(&x, lvl);
        let b = base().score(&x, lvl);
        assert_eq!(a[0].to_bits(), b[0].to_bits());
        assert_eq!(a[1].to_bits(), b[1].to_bits());
    }

    #[test]
    fn affine_in_scale() {
        let lvl = NoiseLevel { t: 0.5, sigma: 0.7 };
        let x = [0.3, -1.2];
        let s1 = guided_score(base(), pot(), 1.5).score(&x, lvl);
        let s2 = guided_score(base(), pot(), 2.25).score(&x, lvl);
        let s12 = guided_score(base(), pot(), 3.75).score(&x, lvl);
        let b = base().score(&x, lvl);
        for i in 0..2 {
            assert!((s1[i] + s2[i] - b[i] - s12[i]).abs() < 1e-12);
        }
    }
}
