use rand::Rng;
use rand_distr::StandardNormal;

use crate::diffusion::chain_rng;
use crate::error::Result;
use crate::metrics::{amplification_analysis, Seeding, SweepSetup};
use crate::numerics::{logit, sigmoid};
use crate::world::{EmbeddingWorldMap, TRACKED_GROUP};

use super::Verdict;

const SEED: u64 = 0xa3;
const SLOPE: f64 = 1.8;
const INTERCEPT: f64 = 0.3;

pub(crate) fn amplification_fit() -> Result<Verdict> {
    let mut v = Verdict::new();

    // synthetic family: logit(high) = 1.8 logit(low) + 0.3 + noise
    let mut rng = chain_rng(SEED, 0);
    let low: Vec<f64> = (0..40).map(|_| sigmoid(rng.random_range(-2.0..2.0))).collect();
    let high: Vec<f64> = low
        .iter()
        .map(|&p| sigmoid(SLOPE * logit(p) + INTERCEPT + 0.05 * rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let rep = amplification_analysis(&low, &high)?;
    let want_fp = sigmoid(INTERCEPT / (1.0 - SLOPE));
    let fp = rep.fit.fixed_point.unwrap_or(f64::NAN);
    v.check((rep.fit.slope - SLOPE).abs() <= 0.1, format!("synthetic slope {:.4} (true {SLOPE})", rep.fit.slope));
    v.check((fp - want_fp).abs() <= 0.03, format!("synthetic fixed point {fp:.4} (true {want_fp:.4})"));

    // toy world without a null shift: 12 prompts, lowest vs highest scale
    let frame = crate::world::orthonormal_frame(crate::world::EMBED_DIM, 11);
    let map = EmbeddingWorldMap::preset(&frame, 0.05, 0.0)?;
    let schedule = crate::diffusion::NoiseSchedule::default();
    let scales = [crate::guidance::W_GRID_SD15[0], crate::guidance::W_GRID_SD15[4]];
    let (mut lo, mut hi) = (Vec::new(), Vec::new());
    for k in 0..12 {
        let score = -15.0 + 30.0 * k as f64 / 11.0;
        let content = 0.5 + 0.1 * k as f64;
        let prompt = EmbeddingWorldMap::prompt_in_frame(&frame, score, content, &[0.2], format!("prompt-{k}"))?;
        let setup = SweepSetup {
            schedule,
            sampler: crate::diffusion::SamplerConfig::sde(),
            init: crate::alphaselect::prompt_init(&map, &prompt, &schedule)?,
            n_per_w: 2000,
            seed: SEED + k,
            seeding: Seeding::Disjoint,
        };
        let sweep = crate::metrics::measure_sweep(
            |w| crate::guidance::stayfair_guided(&map, &prompt, 0.0, w),
            |x| map.group_posterior(x, &prompt),
            &scales,
            &setup,
        )?;
        let r = sweep.ratios(TRACKED_GROUP);
        lo.push(r[0]);
        hi.push(r[1]);
    }
    let toy = amplification_analysis(&lo, &hi)?;
    v.note(format!(
        "toy sweep: slope {:.3}, intercept {:.3}, {} amplified, {} mitigated",
        toy.fit.slope, toy.fit.intercept, toy.amplified, toy.mitigated
    ));
    v.check(toy.fit.r_squared > 0.8, format!("toy sweep regression r² {:.4} (gate 0.8)", toy.fit.r_squared));
    Ok(v)
}
