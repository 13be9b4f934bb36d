//! Choosing the null-prompt shift: an oracle search per prompt that
//! locates where the two-scale guidance bias changes sign, and a ridge
//! estimator that predicts the shift from two prompt features.

mod estimator;
mod family;
mod search;

pub use estimator::{
    fit_alpha_estimator, gender_direction, holdout_split, predict_alpha, prompt_features, records_from_jsonl,
    records_to_jsonl, AlphaEstimator, HOLDOUT_FRAC, RIDGE_GRID,
};
pub use family::{prompt_family, template_pairs};
pub use search::{
    prompt_init, search_alpha_star, search_sign_change, stayfair_bias, AlphaGrid, AlphaRecord, BiasProbe, CurvePoint,
    SignChange,
};
