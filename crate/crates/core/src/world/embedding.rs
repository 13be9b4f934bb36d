use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffusion::NoiseLevel;
use crate::error::{Error, Result};
use crate::numerics::{dot, norm, sigmoid, GaussianMixture, GaussianParams, Vector};

/// Default embedding dimension.
pub const EMBED_DIM: usize = 8;

/// A prompt, represented only through its embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptEmbedding {
    pub e: Vec<f64>,
    #[serde(default)]
    pub label: String,
}

impl PromptEmbedding {
    pub fn new(e: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if e.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("embedding must be finite".into()));
        }
        Ok(Self {
            e,
            label: label.into(),
        })
    }

    /// The empty prompt `E(∅) = 0`.
    pub fn null(k: usize) -> Self {
        Self {
            e: vec![0.0; k],
            label: "null".into(),
        }
    }

    pub fn dim(&self) -> usize {
        self.e.len()
    }

    /// `e + alpha * direction`.
    pub fn shifted(&self, alpha: f64, direction: &[f64]) -> Self {
        Self {
            e: self.e.iter().zip(direction).map(|(v, g)| v + alpha * g).collect(),
            label: self.label.clone(),
        }
    }
}

/// Geometry of one group: a base Gaussian whose mean moves affinely with the
/// prompt, `mean(e) = base.mean + A e`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupGeometry {
    pub base: GaussianParams,
    /// `d` rows of length `k`.
    pub mean_map: Vec<Vec<f64>>,
}

/// Maps prompt embeddings to two-group conditional mixtures: the weight of
/// group 1 is `sigmoid(κ ⟨e, ĝ⟩ + b0)` and each group's mean follows its
/// affine map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingWorldMap {
    /// Unit attribute direction ĝ.
    pub direction: Vec<f64>,
    /// Sensitivity κ of the group logit to the attribute component.
    pub sensitivity: f64,
    pub base_logit: f64,
    pub groups: [GroupGeometry; 2],
    /// Covariance multiplier (1 for the reference model).
    #[serde(default = "one")]
    pub cov_scale: f64,
    /// Fraction of the group-1 weight pulled toward 1/2 (0 for the reference model).
    #[serde(default)]
    pub uniform_mix: f64,
    /// Replaces the prompt-dependent group-1 weight when set.
    #[serde(default)]
    pub fixed_weight: Option<f64>,
}

fn one() -> f64 {
    1.0
}

impl EmbeddingWorldMap {
    pub fn validate(&self) -> Result<()> {
        let k = self.direction.len();
        if k == 0 {
            return Err(Error::EmptyInput("attribute direction"));
        }
        if (norm(&self.direction) - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("attribute direction must be unit length".into()));
        }
        if !(self.sensitivity.is_finite() && self.base_logit.is_finite()) {
            return Err(Error::InvalidArgument("sensitivity and base logit must be finite".into()));
        }
        if !(self.cov_scale.is_finite() && self.cov_scale > 0.0) {
            return Err(Error::InvalidArgument("cov_scale must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.uniform_mix) {
            return Err(Error::InvalidArgument("uniform_mix must lie in [0, 1]".into()));
        }
        if let Some(p) = self.fixed_weight {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::InvalidArgument("fixed_weight must lie in (0, 1)".into()));
            }
        }
        let d = self.groups[0].base.dim();
        for g in &self.groups {
            if g.base.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: g.base.dim(),
                });
            }
            if g.mean_map.len() != d || g.mean_map.iter().any(|r| r.len() != k) {
                return Err(Error::InvalidArgument(format!("mean_map must be {d} x {k}")));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn embed_dim(&self) -> usize {
        self.direction.len()
    }

    pub fn data_dim(&self) -> usize {
        self.groups[0].base.dim()
    }

    /// `⟨e, ĝ⟩`.
    pub fn attribute_score(&self, e: &PromptEmbedding) -> f64 {
        dot(&e.e, &self.direction)
    }

    /// Weight of group 1 under prompt `e`.
    pub fn group_weight(&self, e: &PromptEmbedding) -> f64 {
        if let Some(p) = self.fixed_weight {
            return p;
        }
        let p = sigmoid(self.sensitivity * self.attribute_score(e) + self.base_logit);
        (1.0 - self.uniform_mix) * p + self.uniform_mix * 0.5
    }

    fn check(&self, e: &PromptEmbedding) -> Result<()> {
        if e.dim() != self.embed_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.embed_dim(),
                got: e.dim(),
            });
        }
        Ok(())
    }

    /// Per-group Gaussians under prompt `e`.
    pub fn group_params(&self, e: &PromptEmbedding) -> Result<[GaussianParams; 2]> {
        self.check(e)?;
        let make = |g: &GroupGeometry| -> Result<GaussianParams> {
            let shift = Vector::from_iterator(
                g.mean_map.len(),
                g.mean_map.iter().map(|row| dot(row, &e.e)),
            );
            GaussianParams::new(g.base.mean() + shift, g.base.cov() * self.cov_scale)
        };
        Ok([make(&self.groups[0])?, make(&self.groups[1])?])
    }

    /// The model `p(x | e)` as a two-component mixture (group 0 first).
    pub fn mixture(&self, e: &PromptEmbedding) -> Result<GaussianMixture> {
        let p = self.group_weight(e);
        let params = self.group_params(e)?;
        GaussianMixture::new(&[1.0 - p, p], &params)
    }

    /// Group posterior `p(a | x0, e)` of a clean sample.
    pub fn group_posterior(&self, x0: &[f64], e: &PromptEmbedding) -> Result<Vec<f64>> {
        Ok(self.mixture(e)?.responsibilities(x0, 0.0))
    }

    /// Degraded copy used as the weak branch of autoguidance: covariances
    /// ×1.5 and group weights moved 30% toward uniform.
    pub fn weakened(&self) -> Self {
        Self {
            cov_scale: self.cov_scale * 1.5,
            uniform_mix: 1.0 - 0.7 * (1.0 - self.uniform_mix),
            ..self.clone()
        }
    }

    /// Copy whose group weight is pinned to `p` for every prompt.
    pub fn debiased(&self, p: f64) -> Result<Self> {
        let m = Self {
            fixed_weight: Some(p),
            ..self.clone()
        };
        m.validate()?;
        Ok(m)
    }

    /// Two groups at `(∓1.5, 0)` with covariance `0.5 I`; the second data
    /// axis follows the prompt's component along the content direction.
    /// `frame` must come from [`orthonormal_frame`].
    pub fn preset(frame: &[Vec<f64>], sensitivity: f64, base_logit: f64) -> Result<Self> {
        if frame.len() < 2 {
            return Err(Error::InvalidArgument("frame needs an attribute and a content axis".into()));
        }
        let k = frame[0].len();
        let group = |x0: f64| -> Result<GroupGeometry> {
            Ok(GroupGeometry {
                base: GaussianParams::diagonal(&[x0, 0.0], &[0.5, 0.5])?,
                mean_map: vec![vec![0.0; k], frame[1].clone()],
            })
        };
        let m = Self {
            direction: frame[0].clone(),
            sensitivity,
            base_logit,
            groups: [group(-1.5)?, group(1.5)?],
            cov_scale: 1.0,
            uniform_mix: 0.0,
            fixed_weight: None,
        };
        m.validate()?;
        Ok(m)
    }

    /// `score · ĝ + content · ĉ + noise` in the preset frame.
    pub fn prompt_in_frame(
        frame: &[Vec<f64>],
        score: f64,
        content: f64,
        residual: &[f64],
        label: impl Into<String>,
    ) -> Result<PromptEmbedding> {
        let k = frame[0].len();
        let mut e: Vec<f64> = (0..k).map(|i| score * frame[0][i] + content * frame[1][i]).collect();
        for (j, r) in residual.iter().enumerate() {
            let axis = frame.get(j + 2).ok_or_else(|| {
                Error::InvalidArgument("residual longer than the remaining frame".into())
            })?;
            e.iter_mut().zip(axis).for_each(|(v, a)| *v += r * a);
        }
        PromptEmbedding::new(e, label)
    }
}

/// Score of `p(x_t | e)`, built on the fly.
pub fn embedded_conditional_score(
    x: &[f64],
    level: NoiseLevel,
    e: &PromptEmbedding,
    map: &EmbeddingWorldMap,
) -> Result<Vec<f64>> {
    let mix = map.mixture(e)?;
    if x.len() != mix.dim() {
        return Err(Error::DimensionMismatch {
            expected: mix.dim(),
            got: x.len(),
        });
    }
    let mut out = vec![0.0; mix.dim()];
    mix.score_into(x, level.variance(), &mut out);
    Ok(out)
}

/// A seeded random orthonormal basis of `R^k` (Gram–Schmidt on Gaussian draws).
pub fn orthonormal_frame(k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frame: Vec<Vec<f64>> = Vec::with_capacity(k);
    while frame.len() < k {
        let mut v: Vec<f64> = (0..k).map(|_| StandardNormal.sample(&mut rng)).collect();
        for b in &frame {
            let p = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let n = norm(&v);
        if n > 1e-6 {
            v.iter_mut().for_each(|x| *x /= n);
            frame.push(v);
        }
    }
    frame
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(kappa: f64) -> (Vec<Vec<f64>>, EmbeddingWorldMap) {
        let f = orthonormal_frame(EMBED_DIM, 7);
        let m = EmbeddingWorldMap::preset(&f, kappa, 0.0).unwrap();
        (f, m)
    }

    #[test]
    fn frame_is_orthonormal() {
        let f = orthonormal_frame(8, 1);
        for i in 0..8 {
            for j in 0..8 {
                let d = dot(&f[i], &f[j]);
                assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn null_and_direction_weights() {
        let (f, m) = map(2.0);
        assert_eq!(m.group_weight(&PromptEmbedding::null(8)), 0.5);
        let e = PromptEmbedding::new(f[0].clone(), "g").unwrap();
        assert!((m.group_weight(&e) - 0.880_797_077_977_882_3).abs() < 1e-12);
    }

    #[test]
    fn attribute_shift_moves_only_the_logit() {
        let (f, m) = map(0.3);
        let e = EmbeddingWorldMap::prompt_in_frame(&f, 1.0, 0.8, &[0.2, -0.1], "p").unwrap();
        let shifted = e.shifted(2.5, &m.direction);
        let a = m.group_params(&e).unwrap();
        let b = m.group_params(&shifted).unwrap();
        for g in 0..2 {
            assert!((a[g].mean() - b[g].mean()).norm() < 1e-12);
        }
        let logit = |p: f64| (p / (1.0 - p)).ln();
        let dl = logit(m.group_weight(&shifted)) - logit(m.group_weight(&e));
        assert!((dl - 0.3 * 2.5).abs() < 1e-12);
    }

    #[test]
    fn weakened_and_debiased() {
        let (f, m) = map(1.0);
        let e = EmbeddingWorldMap::prompt_in_frame(&f, 2.0, 0.0, &[], "p").unwrap();
        let p = m.group_weight(&e);
        assert!((m.weakened().group_weight(&e) - (0.7 * p + 0.15)).abs() < 1e-12);
        assert_eq!(m.debiased(0.5).unwrap().group_weight(&e), 0.5);
        assert!(m.debiased(1.0).is_err());
    }

    #[test]
    fn rejects_bad_maps() {
        let (_, mut m) = map(1.0);
        m.direction[0] += 0.1;
        assert!(m.validate().is_err());
        let (_, m) = map(1.0);
        let text = serde_json::to_string(&m).unwrap();
        assert_eq!(EmbeddingWorldMap::from_json(&text).unwrap(), m);
        assert!(EmbeddingWorldMap::from_json(&text.replace("\"sensitivity\"", "\"bogus\":0,\"sensitivity\"")).is_err());
    }
}
