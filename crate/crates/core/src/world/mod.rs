//! Synthetic data worlds: labeled Gaussian mixtures that stand in for a
//! trained diffusion model, and an embedding-parameterized family of
//! conditional mixtures driven by prompt vectors.
//!
//! Conventions: the tracked ("female-analog") group is group 1; the empty
//! prompt is the zero embedding; the attribute texts are `±ĝ`.

mod embedding;
mod mixture;

pub use embedding::{
    embedded_conditional_score, orthonormal_frame, EmbeddingWorldMap, GroupGeometry,
    PromptEmbedding, EMBED_DIM,
};
pub use mixture::{Component, Dataset, MixtureWorld, N_CONDITIONS, TRACKED_GROUP};
pub(crate) use mixture::check_distribution;
