//! Time-conditioned noisy classifiers and the potentials they induce.
//!
//! A small tanh network is trained on `(x_t, t)` pairs drawn by corrupting a
//! labeled dataset. Four regimes are available: plain cross-entropy, group
//! reweighting, group DRO, and cross-entropy plus a minibatch Wasserstein
//! penalty that matches output distributions across groups within each
//! condition. The gradient of `log p(y | x_t, t)` serves as a
//! classifier-guidance potential.

mod mlp;
mod train;
mod wdp;

pub use mlp::{Architecture, NoisyClassifier, MAX_WIDTH, N_TIME_FEATURES};
pub use train::{
    objective, train, CurvePoint, MatchingSet, Minibatch, NoisyExample, ObjectiveValue, TrainConfig, TrainMethod,
    TrainReport, WdpConfig, T_FLOOR,
};
pub use wdp::{wdp_distance, wdp_minibatch_loss, wdp_subgradient, WdpSample};

use crate::diffusion::{GuidancePotential, NoiseLevel, PotentialKind};
use crate::error::{Error, Result};
use crate::world::N_CONDITIONS;

/// `∇_x log p_φ(y | x_t, t)` of a trained classifier.
#[derive(Debug, Clone)]
pub struct ClassifierPotential {
    clf: NoisyClassifier,
    target: usize,
}

impl ClassifierPotential {
    pub fn classifier(&self) -> &NoisyClassifier {
        &self.clf
    }

    pub fn target(&self) -> usize {
        self.target
    }
}

impl GuidancePotential for ClassifierPotential {
    fn dim(&self) -> usize {
        self.clf.input_dim()
    }

    fn grad_log_potential_into(&self, x: &[f64], level: NoiseLevel, out: &mut [f64]) {
        self.clf.grad_log_prob_into(x, level, self.target, out);
    }

    fn kind(&self) -> PotentialKind {
        PotentialKind::Cg
    }
}

/// Classifier-guidance potential toward condition `y`.
pub fn cg_potential(clf: &NoisyClassifier, y: usize) -> Result<ClassifierPotential> {
    if y >= N_CONDITIONS {
        return Err(Error::InvalidArgument(format!("condition {y} out of range")));
    }
    clf.validate()?;
    Ok(ClassifierPotential {
        clf: clf.clone(),
        target: y,
    })
}
