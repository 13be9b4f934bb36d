//! Variance-exploding diffusion: the noise schedule, forward corruption,
//! guided score assembly, and the two samplers (probability-flow ODE with
//! Heun steps, reverse SDE with Euler–Maruyama steps).

mod sampler;
mod schedule;
mod score;

pub use sampler::{
    chain_rng, forward_corrupt, reverse_sde_endpoint, reverse_sde_endpoints, sample_pf_ode,
    sample_reverse_sde, SamplerConfig, SdeInit, Trajectory,
};
pub use schedule::{NoiseLevel, NoiseSchedule};
pub use score::{
    guided_score, FnPotential, FnScore, GuidancePotential, GuidedScore, PotentialKind, ScoreFn,
};
