//! Guidance potentials built from world models. Covers classifier-free
//! guidance with an optional shifted null, autoguidance and composition
//! with a debiased model.
//!
//! Every implicit potential here is a difference of two model scores,
//! `∇ log f = ∇ log p_plus − ∇ log p_minus`. The guided sampling score is
//! `∇ log p(x_t | ∅) + w ∇ log f`, with the base always the unshifted
//! null-prompt model.

use serde::{Deserialize, Serialize};

use crate::diffusion::{guided_score, GuidancePotential, GuidedScore, NoiseLevel, PotentialKind, ScoreFn};
use crate::error::{Error, Result};
use crate::numerics::{norm, GaussianMixture, MAX_DIM};
use crate::world::{EmbeddingWorldMap, PromptEmbedding};

/// Scale grid of the SD1.5-analog sweeps.
pub const W_GRID_SD15: [f64; 5] = [2.5, 5.0, 7.5, 10.0, 12.5];
/// Scale grid of the SD3-analog sweeps.
pub const W_GRID_SD3: [f64; 5] = [1.5, 3.0, 4.5, 6.0, 7.5];

/// `∇ log p_plus − ∇ log p_minus` for two fixed mixtures.
#[derive(Debug, Clone)]
pub struct DifferencePotential {
    plus: GaussianMixture,
    minus: GaussianMixture,
    kind: PotentialKind,
}

impl DifferencePotential {
    pub fn new(plus: GaussianMixture, minus: GaussianMixture, kind: PotentialKind) -> Result<Self> {
        if plus.dim() != minus.dim() {
            return Err(Error::DimensionMismatch {
                expected: plus.dim(),
                got: minus.dim(),
            });
        }
        Ok(Self { plus, minus, kind })
    }

    pub fn plus(&self) -> &GaussianMixture {
        &self.plus
    }

    pub fn minus(&self) -> &GaussianMixture {
        &self.minus
    }

    /// `log f` up to a constant: the log density ratio of the two branches.
    pub fn log_ratio(&self, x: &[f64], level: NoiseLevel) -> f64 {
        self.plus.log_density(x, level.variance()) - self.minus.log_density(x, level.variance())
    }
}

impl GuidancePotential for DifferencePotential {
    fn dim(&self) -> usize {
        self.plus.dim()
    }

    fn grad_log_potential_into(&self, x: &[f64], level: NoiseLevel, out: &mut [f64]) {
        let d = out.len();
        let mut m = [0.0; MAX_DIM];
        self.plus.score_into(x, level.variance(), out);
        self.minus.score_into(x, level.variance(), &mut m[..d]);
        for i in 0..d {
            out[i] -= m[i];
        }
    }

    fn kind(&self) -> PotentialKind {
        self.kind
    }
}

/// Implicit classifier `p(x | prompt) / p(x | null)`.
pub fn cfg_potential(
    map: &EmbeddingWorldMap,
    prompt: &PromptEmbedding,
    null: &PromptEmbedding,
) -> Result<DifferencePotential> {
    DifferencePotential::new(map.mixture(prompt)?, map.mixture(null)?, PotentialKind::Cfg)
}

/// Shift of the null prompt along the attribute direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NullShiftConfig {
    pub alpha: f64,
    pub direction: Vec<f64>,
    pub base_null: PromptEmbedding,
}

impl NullShiftConfig {
    pub fn new(alpha: f64, direction: Vec<f64>, base_null: PromptEmbedding) -> Result<Self> {
        let c = Self {
            alpha,
            direction,
            base_null,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() {
            return Err(Error::InvalidArgument("alpha must be finite".into()));
        }
        if (norm(&self.direction) - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("shift direction must be unit length".into()));
        }
        if self.direction.len() != self.base_null.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.base_null.dim(),
                got: self.direction.len(),
            });
        }
        Ok(())
    }
}

/// `E(∅_y) = E(∅) + α ĝ`; `α = 0` returns the base null untouched.
pub fn stayfair_null(cfg: &NullShiftConfig) -> Result<PromptEmbedding> {
    cfg.validate()?;
    if cfg.alpha == 0.0 {
        return Ok(cfg.base_null.clone());
    }
    Ok(cfg.base_null.shifted(cfg.alpha, &cfg.direction))
}

/// Classifier-free potential with the adaptive null branch.
pub fn stayfair_potential(
    map: &EmbeddingWorldMap,
    prompt: &PromptEmbedding,
    shift: &NullShiftConfig,
) -> Result<DifferencePotential> {
    let null = stayfair_null(shift)?;
    DifferencePotential::new(map.mixture(prompt)?, map.mixture(&null)?, PotentialKind::StayFair)
}

/// Autoguidance: the same prompt on a strong and a degraded model.
pub fn ag_potential(
    strong: &EmbeddingWorldMap,
    weak: &EmbeddingWorldMap,
    prompt: &PromptEmbedding,
) -> Result<DifferencePotential> {
    DifferencePotential::new(strong.mixture(prompt)?, weak.mixture(prompt)?, PotentialKind::Ag)
}

/// Guided score `∇ log p(x | ∅) + w (∇ log p(x | y) − ∇ log p(x | ∅_y))`
/// with `∅_y` shifted by `alpha` along the map's attribute direction.
pub fn stayfair_guided(
    map: &EmbeddingWorldMap,
    prompt: &PromptEmbedding,
    alpha: f64,
    w: f64,
) -> Result<GuidedScore<GaussianMixture, DifferencePotential>> {
    let null = PromptEmbedding::null(map.embed_dim());
    let shift = NullShiftConfig::new(alpha, map.direction.clone(), null.clone())?;
    let pot = stayfair_potential(map, prompt, &shift)?;
    Ok(guided_score(map.mixture(&null)?, pot, w))
}

/// `fair + (w − w_ref)(cond − null)`: guidance applied only to deviations
/// from the reference scale at which the fair model was debiased.
pub struct ComposedScore<F, C, N> {
    fair: F,
    cond: C,
    null: N,
    w: f64,
    w_ref: f64,
}

impl<F: ScoreFn, C: ScoreFn, N: ScoreFn> ScoreFn for ComposedScore<F, C, N> {
    fn dim(&self) -> usize {
        self.fair.dim()
    }

    fn score_into(&self, x: &[f64], level: NoiseLevel, out: &mut [f64]) {
        self.fair.score_into(x, level, out);
        if self.w == self.w_ref {
            return;
        }
        let d = out.len();
        let mut c = [0.0; MAX_DIM];
        let mut n = [0.0; MAX_DIM];
        self.cond.score_into(x, level, &mut c[..d]);
        self.null.score_into(x, level, &mut n[..d]);
        let k = self.w - self.w_ref;
        for i in 0..d {
            out[i] += k * (c[i] - n[i]);
        }
    }
}

pub fn compose_with_fair_model<F: ScoreFn, C: ScoreFn, N: ScoreFn>(
    fair: F,
    cond: C,
    null: N,
    w: f64,
    w_ref: f64,
) -> Result<ComposedScore<F, C, N>> {
    if !(w_ref >= 0.0 && w_ref.is_finite()) {
        return Err(Error::InvalidArgument("w_ref must be non-negative".into()));
    }
    if !w.is_finite() {
        return Err(Error::InvalidArgument("w must be finite".into()));
    }
    if cond.dim() != fair.dim() || null.dim() != fair.dim() {
        return Err(Error::DimensionMismatch {
            expected: fair.dim(),
            got: cond.dim().max(null.dim()),
        });
    }
    Ok(ComposedScore {
        fair,
        cond,
        null,
        w,
        w_ref,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{orthonormal_frame, EMBED_DIM};

    fn setup() -> (Vec<Vec<f64>>, EmbeddingWorldMap, PromptEmbedding) {
        let f = orthonormal_frame(EMBED_DIM, 3);
        let m = EmbeddingWorldMap::preset(&f, 0.2, 0.1).unwrap();
        let p = EmbeddingWorldMap::prompt_in_frame(&f, 4.0, 1.2, &[0.3], "p").unwrap();
        (f, m, p)
    }

    fn lvl() -> NoiseLevel {
        NoiseLevel { t: 0.4, sigma: 0.9 }
    }

    #[test]
    fn self_cancelling_potential() {
        let (_, m, p) = setup();
        let pot = cfg_potential(&m, &p, &p).unwrap();
        assert!(pot.grad_log_potential(&[0.3, -1.0], lvl()).iter().all(|v| *v == 0.0));
        let ag = ag_potential(&m, &m, &p).unwrap();
        assert!(ag.grad_log_potential(&[0.3, -1.0], lvl()).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn null_shift_roundtrip() {
        let (_, m, _) = setup();
        let base = PromptEmbedding::new((0..EMBED_DIM).map(|i| i as f64 * 0.1).collect(), "n").unwrap();
        let zero = NullShiftConfig::new(0.0, m.direction.clone(), base.clone()).unwrap();
        assert_eq!(stayfair_null(&zero).unwrap(), base);
        let fwd = NullShiftConfig::new(7.5, m.direction.clone(), base.clone()).unwrap();
        let there = stayfair_null(&fwd).unwrap();
        let back = stayfair_null(&NullShiftConfig::new(-7.5, m.direction.clone(), there).unwrap()).unwrap();
        for (a, b) in back.e.iter().zip(&base.e) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(NullShiftConfig::new(1.0, vec![1.0; EMBED_DIM], base).is_err());
    }

    #[test]
    fn composition_at_reference_is_fair_score() {
        let (_, m, p) = setup();
        let fair = m.debiased(0.5).unwrap().mixture(&p).unwrap();
        let cond = m.mixture(&p).unwrap();
        let null = m.mixture(&PromptEmbedding::null(EMBED_DIM)).unwrap();
        let s = compose_with_fair_model(&fair, &cond, &null, 7.5, 7.5).unwrap();
        let x = [0.4, 0.2];
        assert_eq!(s.score(&x, lvl()), ScoreFn::score(&fair, &x, lvl()));
        assert!(compose_with_fair_model(&fair, &cond, &null, 1.0, -1.0).is_err());
    }
}
