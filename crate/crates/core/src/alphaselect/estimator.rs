use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, norm, ridge_fit_loo, RidgeFit};
use crate::world::PromptEmbedding;

use super::search::{AlphaGrid, AlphaRecord};

/// Ridge penalties tried by leave-one-out selection.
pub const RIDGE_GRID: [f64; 6] = [0.01, 0.1, 1.0, 10.0, 100.0, 1000.0];

/// Fraction of prompts held out by label hash.
pub const HOLDOUT_FRAC: f64 = 0.15;

/// Normalized mean of `(first − second)` over paired embeddings.
pub fn gender_direction(pairs: &[(PromptEmbedding, PromptEmbedding)]) -> Result<Vec<f64>> {
    let first = pairs.first().ok_or(Error::EmptyInput("direction pairs"))?;
    let k = first.0.dim();
    let mut acc = vec![0.0; k];
    for (a, b) in pairs {
        if a.dim() != k || b.dim() != k {
            return Err(Error::DimensionMismatch { expected: k, got: a.dim().max(b.dim()) });
        }
        for i in 0..k {
            acc[i] += a.e[i] - b.e[i];
        }
    }
    let n = norm(&acc);
    if !(n > 1e-12 * pairs.len() as f64) {
        return Err(Error::Degenerate("paired differences cancel".into()));
    }
    Ok(acc.into_iter().map(|v| v / n).collect())
}

/// `(score, level) = (⟨e, ĝ⟩, |⟨e, ĝ⟩|)`.
pub fn prompt_features(prompt: &PromptEmbedding, direction: &[f64]) -> (f64, f64) {
    let s = dot(&prompt.e, direction);
    (s, s.abs())
}

/// Ridge map from prompt features to `α*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaEstimator {
    pub direction: Vec<f64>,
    pub ridge: RidgeFit,
}

impl AlphaEstimator {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let e: Self = serde_json::from_str(text)?;
        if (norm(&e.direction) - 1.0).abs() > 1e-9 || e.ridge.weights.len() != 2 {
            return Err(Error::InvalidArgument("malformed alpha estimator".into()));
        }
        Ok(e)
    }

    /// Unsnapped prediction.
    pub fn raw(&self, prompt: &PromptEmbedding) -> f64 {
        let (s, l) = prompt_features(prompt, &self.direction);
        self.ridge.predict(&[s, l])
    }
}

/// Fits the estimator on oracle records; features are recomputed from the
/// prompts under `direction`.
pub fn fit_alpha_estimator(records: &[AlphaRecord], direction: &[f64]) -> Result<AlphaEstimator> {
    if records.len() < 3 {
        return Err(Error::InvalidArgument("need at least three records".into()));
    }
    let features: Vec<Vec<f64>> = records
        .iter()
        .map(|r| {
            let (s, l) = prompt_features(&r.prompt, direction);
            vec![s, l]
        })
        .collect();
    let targets: Vec<f64> = records.iter().map(|r| r.alpha_star).collect();
    let ridge = ridge_fit_loo(&features, &targets, &RIDGE_GRID)?;
    Ok(AlphaEstimator {
        direction: direction.to_vec(),
        ridge,
    })
}

/// Estimated `α` snapped onto `grid`; no simulation involved.
pub fn predict_alpha(est: &AlphaEstimator, prompt: &PromptEmbedding, grid: &AlphaGrid) -> f64 {
    grid.snap(est.raw(prompt))
}

/// One JSON object per line.
pub fn records_to_jsonl(records: &[AlphaRecord]) -> Result<String> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}

pub fn records_from_jsonl(text: &str) -> Result<Vec<AlphaRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// 64-bit FNV-1a; a stable hash for label-based splits.
fn label_hash(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Indices `(train, held_out)`: the `round(frac · n)` labels with the
/// smallest hashes are held out.
pub fn holdout_split(labels: &[&str], frac: f64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by_key(|&i| (label_hash(labels[i]), i));
    let k = (frac * labels.len() as f64).round() as usize;
    let mut held: Vec<usize> = order[..k].to_vec();
    let mut train: Vec<usize> = order[k..].to_vec();
    held.sort_unstable();
    train.sort_unstable();
    (train, held)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::chain_rng;
    use crate::world::{orthonormal_frame, EMBED_DIM};
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn single_pair_direction() {
        let f = orthonormal_frame(EMBED_DIM, 4);
        let base: Vec<f64> = f[1].iter().map(|v| 2.0 * v).collect();
        let plus = PromptEmbedding::new(base.iter().zip(&f[0]).map(|(b, g)| b + g).collect(), "f").unwrap();
        let minus = PromptEmbedding::new(base.iter().zip(&f[0]).map(|(b, g)| b - g).collect(), "m").unwrap();
        let d = gender_direction(&[(plus.clone(), minus.clone())]).unwrap();
        for (a, b) in d.iter().zip(&f[0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(gender_direction(&[(plus.clone(), minus.clone()), (minus, plus)]).is_err());
        assert!(gender_direction(&[]).is_err());
    }

    #[test]
    fn noisy_pairs_concentrate() {
        let f = orthonormal_frame(EMBED_DIM, 5);
        let mut rng = chain_rng(6, 0);
        let mut noisy = |sign: f64| {
            let e = f[0]
                .iter()
                .map(|g| sign * g + 0.1 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            PromptEmbedding::new(e, "p").unwrap()
        };
        let pairs: Vec<_> = (0..28).map(|_| (noisy(1.0), noisy(-1.0))).collect();
        let d = gender_direction(&pairs).unwrap();
        assert!(dot(&d, &f[0]) > 0.99);
    }

    #[test]
    fn holdout_is_stable_and_sized() {
        let labels: Vec<String> = (0..132).map(|i| format!("prompt-{i}")).collect();
        let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
        let (tr, ho) = holdout_split(&refs, HOLDOUT_FRAC);
        assert_eq!((tr.len(), ho.len()), (112, 20));
        assert_eq!(holdout_split(&refs, HOLDOUT_FRAC), (tr, ho));
        assert_eq!(label_hash(""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(label_hash("a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn jsonl_roundtrip() {
        let p = PromptEmbedding::new(vec![0.5; EMBED_DIM], "x").unwrap();
        let r = AlphaRecord {
            prompt: p,
            alpha_star: 2.5,
            bias_curve: vec![],
            features: (1.0, 1.0),
            saturated: false,
            fallback: false,
            flattest_alpha: 2.5,
        };
        let text = records_to_jsonl(&[r.clone(), r.clone()]).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(records_from_jsonl(&text).unwrap(), vec![r.clone(), r]);
    }
}
