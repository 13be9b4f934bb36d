use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{chain_rng, reverse_sde_endpoint, SamplerConfig, ScoreFn, SdeInit};
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::numerics::wilson_interval;

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

/// Measured group distribution at one guidance scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub w: f64,
    pub n_samples: usize,
    /// Mean Bayes posterior per group.
    pub group_ratio: Vec<f64>,
    /// 95% Wilson interval of the hard-label proportion per group.
    pub ratio_ci: Vec<(f64, f64)>,
    /// Standard error of the soft ratio per group.
    pub ratio_se: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub entries: Vec<SweepEntry>,
}

impl SweepResult {
    pub fn w_grid(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.w).collect()
    }

    /// Soft ratios of `group` across the grid.
    pub fn ratios(&self, group: usize) -> Vec<f64> {
        self.entries.iter().map(|e| e.group_ratio[group]).collect()
    }

    pub fn n_groups(&self) -> usize {
        self.entries.first().map_or(0, |e| e.group_ratio.len())
    }
}

/// How chain seeds relate across scales.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Seeding {
    /// Each scale gets its own block of streams.
    Disjoint,
    /// All scales reuse the same streams (common random numbers).
    Common,
}

/// Sampler settings shared by every scale of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSetup {
    pub schedule: NoiseSchedule,
    pub sampler: SamplerConfig,
    pub init: SdeInit,
    pub n_per_w: usize,
    pub seed: u64,
    pub seeding: Seeding,
}

/// Soft ratio, its standard error, and hard-label Wilson intervals from the
/// posteriors of a batch of samples.
pub fn group_ratios(posteriors: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>, Vec<(f64, f64)>)> {
    let n = posteriors.len();
    if n == 0 {
        return Err(Error::EmptyInput("posteriors"));
    }
    let k = posteriors[0].len();
    let mut mean = vec![0.0; k];
    let mut hard = vec![0usize; k];
    for p in posteriors {
        if p.len() != k {
            return Err(Error::DimensionMismatch { expected: k, got: p.len() });
        }
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
        let arg = p
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map_or(0, |(i, _)| i);
        hard[arg] += 1;
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let se = (0..k)
        .map(|a| {
            if n < 2 {
                return 0.0;
            }
            let var = posteriors.iter().map(|p| (p[a] - mean[a]).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        })
        .collect();
    let ci = hard.iter().map(|&h| wilson_interval(h, n, Z_95)).collect();
    Ok((mean, se, ci))
}

/// Runs the reverse SDE at every scale and records the group distribution
/// of the endpoints. `assemble(w)` builds the full sampling score at scale
/// `w`; `posterior(x)` returns the Bayes group posterior of a clean sample.
pub fn measure_sweep<S, A, P>(assemble: A, posterior: P, w_grid: &[f64], setup: &SweepSetup) -> Result<SweepResult>
where
    S: ScoreFn,
    A: Fn(f64) -> Result<S>,
    P: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    if setup.n_per_w < 100 {
        return Err(Error::InvalidArgument("need at least 100 samples per scale".into()));
    }
    if w_grid.is_empty() {
        return Err(Error::EmptyInput("guidance grid"));
    }
    let mut entries = Vec::with_capacity(w_grid.len());
    for (wi, &w) in w_grid.iter().enumerate() {
        let wrap = |e: Error| Error::SweepFailed { w, source: Box::new(e) };
        let score = assemble(w).map_err(wrap)?;
        let block = match setup.seeding {
            Seeding::Disjoint => (wi as u64) << 32,
            Seeding::Common => 0,
        };
        let posteriors = (0..setup.n_per_w as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = chain_rng(setup.seed, block | i);
                let x = reverse_sde_endpoint(&score, &setup.schedule, &setup.sampler, &setup.init, &mut rng)?;
                posterior(&x)
            })
            .collect::<Result<Vec<_>>>()
            .map_err(wrap)?;
        let (group_ratio, ratio_se, ratio_ci) = group_ratios(&posteriors)?;
        entries.push(SweepEntry {
            w,
            n_samples: setup.n_per_w,
            group_ratio,
            ratio_ci,
            ratio_se,
        });
    }
    Ok(SweepResult { entries })
}
