//! Closed-form oracle for Gaussian data under log-affine guidance.
//!
//! For `X_0 ~ N(μ, Σ)` and `X_t = X_0 + σ_t ε`, the posterior of `X_0`
//! given `X_t = x` is Gaussian with mean `m_t(x)` and covariance `V_t`, so
//! conditional expectations of `ℓ(x) = exp(βᵀx + c)` and of its powers are
//! lognormal moments. This module provides those moments, the resulting
//! endpoint and group reweighting, a target-ratio invariance check, and the
//! exact tilt drift used to test the sampler.

mod closed_form;
mod tilt;

pub use closed_form::{
    check_ratio_invariance, endpoint_moment, noisy_potential, noisy_potential_gradient, tilt_gradient, group_reweighting, tilt_identity_residual,
    tilt_factor, log_endpoint_moment, noisy_potential_form, tilt_form, log_tilt_constant, posterior_moments,
    posterior_moments_at, GaussianGroupModel, LogAffineForm, LogAffinePotential, RatioInvarianceReport,
};
pub use tilt::EndpointTiltPotential;

/// Guidance scales of the classifier-guidance sweep.
pub const CG_W_GRID: [f64; 8] = [0.0, 1.0, 3.0, 5.0, 7.0, 9.0, 11.0, 13.0];
