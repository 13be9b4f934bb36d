use crate::classifier::{cg_potential, train, wdp_distance, NoisyClassifier, TrainConfig, TrainMethod, WdpConfig};
use crate::diffusion::{chain_rng, guided_score, NoiseSchedule, SamplerConfig, SdeInit};
use crate::error::Result;
use crate::metrics::{decompose_bias, measure_sweep, Seeding, SweepSetup};
use crate::theory::CG_W_GRID;
use crate::world::{MixtureWorld, TRACKED_GROUP};

use super::theory::noise_bins;
use super::Verdict;

const SEED: u64 = 0xc14;
pub(crate) const TRAIN_SIZE: usize = 20_000;
pub(crate) const TRAIN_STEPS: usize = 2000;
const SWEEP_PATHS: usize = 2000;
const SWEEP_STEPS: usize = 128;

/// Guided sweep summary of one classifier: `(range of the tracked-group
/// ratio, mean group distance across noise bins, ratios)`.
pub(crate) fn evaluate_classifier(clf: &NoisyClassifier, world: &MixtureWorld) -> Result<(f64, f64, Vec<f64>)> {
    let schedule = NoiseSchedule::default();
    let (mean, trace) = world.moments(Some(1));
    let setup = SweepSetup {
        schedule,
        sampler: SamplerConfig::sde().with_steps(SWEEP_STEPS),
        init: SdeInit::from_data(&mean, trace, &schedule),
        n_per_w: SWEEP_PATHS,
        seed: SEED,
        seeding: Seeding::Common,
    };
    let base = world.conditional(1)?.clone();
    let pot = cg_potential(clf, 1)?;
    let sweep = measure_sweep(
        |w| Ok(guided_score(base.clone(), pot.clone(), w)),
        |x| world.group_posterior(x, Some(1)),
        &CG_W_GRID,
        &setup,
    )?;
    let report = decompose_bias(&sweep, world.target(1)?, 0.0)?;
    let dist = wdp_distance(clf, world, 1, &noise_bins(), 1000, &mut chain_rng(SEED, 1))?;
    let mean_dist = dist.iter().sum::<f64>() / dist.len() as f64;
    Ok((report.summary.range, mean_dist, sweep.ratios(TRACKED_GROUP)))
}

pub(crate) fn penalized_classifier() -> Result<Verdict> {
    let mut v = Verdict::new();
    let world = MixtureWorld::strong_imbalance();
    let schedule = NoiseSchedule::default();
    let data = world.sample(TRAIN_SIZE, &mut chain_rng(SEED, 0))?;
    let wdp = WdpConfig::default();
    let mut results = Vec::new();
    for method in [TrainMethod::Ce, TrainMethod::Rw, TrainMethod::Gdro, TrainMethod::Wdp] {
        let cfg = TrainConfig::new(method, TRAIN_STEPS, SEED);
        let (clf, _) = train(&data, &schedule, &cfg, &wdp)?;
        let (range, dist, ratios) = evaluate_classifier(&clf, &world)?;
        let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.3}")).collect();
        v.note(format!("{method:?}: range {range:.4}, mean group distance {dist:.4}, ratios [{}]", shown.join(", ")));
        results.push((method, range, dist));
    }
    let (_, ce_range, ce_dist) = results[0];
    let (_, wdp_range, wdp_dist) = results[3];
    v.check(
        wdp_range <= 0.5 * ce_range,
        format!("range ratio penalized/plain = {:.3} (gate 0.5)", wdp_range / ce_range),
    );
    v.check(
        wdp_dist <= 0.5 * ce_dist,
        format!("group distance ratio penalized/plain = {:.3} (gate 0.5)", wdp_dist / ce_dist),
    );
    for &(method, range, _) in &results[1..3] {
        if (wdp_range..=ce_range).contains(&range) {
            v.note(format!("{method:?} baseline is intermediate ({range:.4})"));
        } else {
            v.note(format!(
                "flagged: {method:?} baseline range {range:.4} is outside [{wdp_range:.4}, {ce_range:.4}]"
            ));
        }
    }
    Ok(v)
}
