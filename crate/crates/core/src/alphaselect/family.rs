use rand::Rng;
use rand_distr::StandardNormal;

use crate::diffusion::chain_rng;
use crate::error::Result;
use crate::world::{EmbeddingWorldMap, PromptEmbedding};

/// `n` labeled prompts in a preset frame (at least six axes): attribute
/// score uniform on `(-12, 12)`, content weight uniform on `(0.5, 1.5)` and
/// four residual components with standard deviation 0.3.
pub fn prompt_family(frame: &[Vec<f64>], n: usize, seed: u64) -> Result<Vec<PromptEmbedding>> {
    let mut rng = chain_rng(seed, 70);
    (0..n)
        .map(|k| {
            let score = rng.random_range(-12.0..12.0);
            let content = rng.random_range(0.5..1.5);
            let residual: Vec<f64> = (0..4).map(|_| 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
            EmbeddingWorldMap::prompt_in_frame(frame, score, content, &residual, format!("occupation-{k:03}"))
        })
        .collect()
}

/// Paired template embeddings `(e + ĝ + ε, e − ĝ + ε')` with `ε ~ N(0, 0.1² I)`.
pub fn template_pairs(
    prompts: &[PromptEmbedding],
    direction: &[f64],
    seed: u64,
) -> Result<Vec<(PromptEmbedding, PromptEmbedding)>> {
    let mut rng = chain_rng(seed, 71);
    let mut side = |e: &PromptEmbedding, sign: f64| {
        let v = e
            .e
            .iter()
            .zip(direction)
            .map(|(x, g)| x + sign * g + 0.1 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        PromptEmbedding::new(v, e.label.clone())
    };
    prompts.iter().map(|p| Ok((side(p, 1.0)?, side(p, -1.0)?))).collect()
}
