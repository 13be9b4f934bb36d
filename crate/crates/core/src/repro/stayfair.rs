use rand::Rng;
use rand_distr::StandardNormal;

use crate::alphaselect::{
    fit_alpha_estimator, gender_direction, prompt_family, template_pairs, holdout_split, predict_alpha, prompt_init, search_alpha_star, stayfair_bias,
    AlphaGrid, AlphaRecord, BiasProbe, HOLDOUT_FRAC,
};
use crate::diffusion::{
    chain_rng, guided_score, reverse_sde_endpoints, NoiseSchedule, SamplerConfig, ScoreFn,
};
use crate::error::Result;
use crate::guidance::{cfg_potential, compose_with_fair_model, stayfair_guided, W_GRID_SD15};
use crate::metrics::{measure_sweep, Seeding, SweepResult, SweepSetup, Z_95};
use crate::numerics::{dot, mean_and_se};
use crate::world::{orthonormal_frame, EmbeddingWorldMap, PromptEmbedding, EMBED_DIM, TRACKED_GROUP};

use super::Verdict;

const SEED: u64 = 0x5f;
/// Attribute sensitivity of the embedding world; small enough that the
/// two-scale bias stays monotone across the whole shift grid.
pub(crate) const SENSITIVITY: f64 = 0.01;
const FRAME_SEED: u64 = 11;
const W_LOW: f64 = 2.5;
const W_HIGH: f64 = 12.5;

pub(crate) fn embedding_world() -> Result<(Vec<Vec<f64>>, EmbeddingWorldMap)> {
    let frame = orthonormal_frame(EMBED_DIM, FRAME_SEED);
    let map = EmbeddingWorldMap::preset(&frame, SENSITIVITY, 0.0)?;
    Ok((frame, map))
}

/// A prompt leaning toward group 1 (`⟨e, ĝ⟩ = 10`).
pub(crate) fn focus_prompt(frame: &[Vec<f64>]) -> Result<PromptEmbedding> {
    EmbeddingWorldMap::prompt_in_frame(frame, 10.0, 1.0, &[0.3], "focus")
}

fn probe(n: usize, steps: usize, seed: u64) -> BiasProbe {
    let mut p = BiasProbe::new(W_LOW, W_HIGH, n, seed);
    p.sampler = SamplerConfig::sde().with_steps(steps);
    p
}

/// StayFair sweep of `prompt` over the five-point grid.
fn shift_sweep(
    map: &EmbeddingWorldMap,
    prompt: &PromptEmbedding,
    alpha: f64,
    n: usize,
    steps: usize,
    seeding: Seeding,
    seed: u64,
) -> Result<SweepResult> {
    let schedule = NoiseSchedule::default();
    let setup = SweepSetup {
        schedule,
        sampler: SamplerConfig::sde().with_steps(steps),
        init: prompt_init(map, prompt, &schedule)?,
        n_per_w: n,
        seed,
        seeding,
    };
    measure_sweep(
        |w| stayfair_guided(map, prompt, alpha, w),
        |x| map.group_posterior(x, prompt),
        &W_GRID_SD15,
        &setup,
    )
}

/// Range of the tracked-group ratio and its 95% interval, from the soft
/// standard errors at the two extreme scales (independent draws).
fn range_with_ci(sweep: &SweepResult) -> (f64, f64, f64) {
    let e = &sweep.entries;
    let g = TRACKED_GROUP;
    let hi = e.iter().max_by(|a, b| a.group_ratio[g].total_cmp(&b.group_ratio[g])).expect("non-empty");
    let lo = e.iter().min_by(|a, b| a.group_ratio[g].total_cmp(&b.group_ratio[g])).expect("non-empty");
    let range = hi.group_ratio[g] - lo.group_ratio[g];
    let half = Z_95 * (hi.ratio_se[g].powi(2) + lo.ratio_se[g].powi(2)).sqrt();
    (range, range - half, range + half)
}

fn fmt_ratios(s: &SweepResult) -> String {
    s.ratios(TRACKED_GROUP).iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>().join(", ")
}

/// Bitwise comparison of two scores on random states and noise levels.
fn bitwise_equal(a: &dyn ScoreFn, b: &dyn ScoreFn, n: usize, seed: u64) -> Result<bool> {
    let schedule = NoiseSchedule::default();
    let mut rng = chain_rng(seed, 99);
    let d = a.dim();
    let (mut sa, mut sb) = (vec![0.0; d], vec![0.0; d]);
    for _ in 0..n {
        let x: Vec<f64> = (0..d).map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let level = schedule.level(rng.random_range(1e-3..1.0))?;
        a.score_into(&x, level, &mut sa);
        b.score_into(&x, level, &mut sb);
        if sa.iter().zip(&sb).any(|(p, q)| p.to_bits() != q.to_bits()) {
            return Ok(false);
        }
    }
    Ok(true)
}

pub(crate) fn null_shift_effect() -> Result<Verdict> {
    let mut v = Verdict::new();
    let (frame, map) = embedding_world()?;
    let prompt = focus_prompt(&frame)?;
    let schedule = NoiseSchedule::default();

    let null = PromptEmbedding::null(map.embed_dim());
    let mut identical = true;
    for &w in &W_GRID_SD15 {
        let shifted = stayfair_guided(&map, &prompt, 0.0, w)?;
        let plain = guided_score(map.mixture(&null)?, cfg_potential(&map, &prompt, &null)?, w);
        identical &= bitwise_equal(&shifted, &plain, 500, SEED)?;
        let init = prompt_init(&map, &prompt, &schedule)?;
        let cfg = SamplerConfig::sde().with_steps(64);
        let a = reverse_sde_endpoints(&shifted, &schedule, &cfg, &init, 64, SEED)?;
        let b = reverse_sde_endpoints(&plain, &schedule, &cfg, &init, 64, SEED)?;
        identical &= a
            .iter()
            .flatten()
            .zip(b.iter().flatten())
            .all(|(p, q)| p.to_bits() == q.to_bits());
    }
    v.check(identical, "zero shift reproduces classifier-free guidance bit for bit (scores and sampled paths)".into());

    let rec = search_alpha_star(&map, &prompt, &map.direction, &AlphaGrid::sd15(), &probe(4000, 256, SEED))?;
    v.note(format!(
        "oracle shift {} after {} curve evaluations (saturated {}, fallback {})",
        rec.alpha_star,
        rec.bias_curve.len(),
        rec.saturated,
        rec.fallback
    ));
    let plain = shift_sweep(&map, &prompt, 0.0, 4000, 256, Seeding::Disjoint, SEED + 1)?;
    let fair = shift_sweep(&map, &prompt, rec.alpha_star, 4000, 256, Seeding::Disjoint, SEED + 2)?;
    let (r0, lo0, hi0) = range_with_ci(&plain);
    let (r1, lo1, hi1) = range_with_ci(&fair);
    v.note(format!("no shift: ratios [{}], range {r0:.4} [{lo0:.4}, {hi0:.4}]", fmt_ratios(&plain)));
    v.note(format!("oracle shift: ratios [{}], range {r1:.4} [{lo1:.4}, {hi1:.4}]", fmt_ratios(&fair)));
    v.check(r1 <= 0.6 * r0, format!("range ratio {:.3} (gate 0.6)", r1 / r0));
    v.check(hi1 < lo0, format!("95% intervals separate: {hi1:.4} < {lo0:.4}"));
    Ok(v)
}

pub(crate) fn shift_monotonicity() -> Result<Verdict> {
    let mut v = Verdict::new();
    let (frame, map) = embedding_world()?;
    let grid = AlphaGrid::sd15();
    for (k, score) in [-10.0, 0.0, 10.0].into_iter().enumerate() {
        let prompt = EmbeddingWorldMap::prompt_in_frame(&frame, score, 1.0, &[0.3], format!("score {score}"))?;
        // one probe seed for every shift: common random numbers along the curve
        let p = probe(4000, 256, SEED + 10 + k as u64);
        let curve = grid
            .points()
            .into_iter()
            .map(|a| stayfair_bias(&map, &prompt, a, &p).map(|(b, h)| (a, b, h)))
            .collect::<Result<Vec<_>>>()?;
        let dir = (curve[curve.len() - 1].1 - curve[0].1).signum();
        let mut worst = f64::NEG_INFINITY;
        for w in curve.windows(2) {
            let pooled = ((w[0].2.powi(2) + w[1].2.powi(2)) / 2.0).sqrt();
            let against = -(w[1].1 - w[0].1) * dir;
            worst = worst.max(against - 2.0 * pooled);
        }
        let shown: Vec<String> = curve.iter().map(|(_, b, _)| format!("{b:+.3}")).collect();
        v.note(format!("score {score}: bias over the grid [{}]", shown.join(", ")));
        v.check(
            worst <= 0.0,
            format!("score {score}: largest step against the trend minus twice the pooled half-width = {worst:+.4}"),
        );
    }
    Ok(v)
}

fn gap_verdict(name: &str, diffs: &[f64], v: &mut Verdict) {
    let (m, se) = mean_and_se(diffs);
    let half = Z_95 * se;
    let state = if m - half > 0.0 {
        "resolved"
    } else if m + half < 0.0 {
        "reversed"
    } else {
        "tie"
    };
    v.check(state != "reversed", format!("{name}: mean gap {m:+.4} ± {half:.4} ({state})"));
}

pub(crate) fn estimator_ordering() -> Result<Verdict> {
    let mut v = Verdict::new();
    let (frame, map) = embedding_world()?;
    let prompts = prompt_family(&frame, 132, SEED)?;
    let labels: Vec<&str> = prompts.iter().map(|p| p.label.as_str()).collect();
    let (train_idx, held_idx) = holdout_split(&labels, HOLDOUT_FRAC);
    v.note(format!("{} training prompts, {} held out", train_idx.len(), held_idx.len()));

    let pair_src: Vec<PromptEmbedding> = train_idx.iter().take(28).map(|&i| prompts[i].clone()).collect();
    let direction = gender_direction(&template_pairs(&pair_src, &map.direction, SEED)?)?;
    v.note(format!("estimated direction cosine with the true axis: {:.4}", dot(&direction, &map.direction)));

    let grid = AlphaGrid::sd15();
    let search = |i: usize| search_alpha_star(&map, &prompts[i], &direction, &grid, &probe(1000, 128, SEED + 20));
    let train_recs = train_idx.iter().map(|&i| search(i)).collect::<Result<Vec<AlphaRecord>>>()?;
    let held_recs = held_idx.iter().map(|&i| search(i)).collect::<Result<Vec<AlphaRecord>>>()?;
    let est = fit_alpha_estimator(&train_recs, &direction)?;
    v.note(format!(
        "ridge: weights {:?}, intercept {:.3}, penalty {}",
        est.ridge.weights.iter().map(|w| (w * 1e3).round() / 1e3).collect::<Vec<_>>(),
        est.ridge.bias,
        est.ridge.chosen_lambda
    ));

    let mut within_step = 0;
    let (mut r_plain, mut r_pred, mut r_oracle) = (Vec::new(), Vec::new(), Vec::new());
    for (k, rec) in held_recs.iter().enumerate() {
        let pred = predict_alpha(&est, &rec.prompt, &grid);
        if (pred - rec.alpha_star).abs() <= grid.step + 1e-9 {
            within_step += 1;
        }
        let seed = SEED + 100 + k as u64;
        let range = |alpha: f64| -> Result<f64> {
            let s = shift_sweep(&map, &rec.prompt, alpha, 2000, 256, Seeding::Common, seed)?;
            Ok(range_with_ci(&s).0)
        };
        r_plain.push(range(0.0)?);
        r_pred.push(range(pred)?);
        r_oracle.push(range(rec.alpha_star)?);
    }
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    v.note(format!(
        "held-out mean range: oracle {:.4}, prompt-based {:.4}, no shift {:.4}",
        mean(&r_oracle),
        mean(&r_pred),
        mean(&r_plain)
    ));
    v.note(format!(
        "held-out predictions within one grid step of the oracle: {within_step}/{}",
        held_recs.len()
    ));
    let d1: Vec<f64> = r_pred.iter().zip(&r_oracle).map(|(p, o)| p - o).collect();
    let d2: Vec<f64> = r_plain.iter().zip(&r_pred).map(|(c, p)| c - p).collect();
    gap_verdict("prompt-based minus oracle", &d1, &mut v);
    gap_verdict("no shift minus prompt-based", &d2, &mut v);
    Ok(v)
}

pub(crate) fn fair_model_composition() -> Result<Verdict> {
    let mut v = Verdict::new();
    let (frame, map) = embedding_world()?;
    let prompt = focus_prompt(&frame)?;
    let fair = map.debiased(0.5)?;
    let schedule = NoiseSchedule::default();
    let w_ref = W_GRID_SD15[2];

    let rec = search_alpha_star(&map, &prompt, &map.direction, &AlphaGrid::sd15(), &probe(4000, 256, SEED))?;
    let null = PromptEmbedding::null(map.embed_dim()).shifted(rec.alpha_star, &map.direction);
    let compose = |w: f64, null: &PromptEmbedding| {
        compose_with_fair_model(fair.mixture(&prompt)?, map.mixture(&prompt)?, map.mixture(null)?, w, w_ref)
    };
    let at_ref = compose(w_ref, &null)?;
    v.check(
        bitwise_equal(&at_ref, &fair.mixture(&prompt)?, 2000, SEED)?,
        format!("composed score at the reference scale {w_ref} equals the fair model bit for bit"),
    );
    v.note(format!("oracle shift on the biased model: {}", rec.alpha_star));

    let setup = SweepSetup {
        schedule,
        sampler: SamplerConfig::sde(),
        init: prompt_init(&fair, &prompt, &schedule)?,
        n_per_w: 4000,
        seed: SEED + 3,
        seeding: Seeding::Common,
    };
    let run = |null: &PromptEmbedding| {
        measure_sweep(|w| compose(w, null), |x| fair.group_posterior(x, &prompt), &W_GRID_SD15, &setup)
    };
    let sweep = run(&null)?;
    let (range, _, _) = range_with_ci(&sweep);
    v.note(format!("composed with oracle shift: ratios [{}]", fmt_ratios(&sweep)));
    v.check(range < 0.03, format!("ratio range {range:.4} (gate 0.03)"));
    let plain = run(&PromptEmbedding::null(map.embed_dim()))?;
    v.note(format!(
        "contrast, composed without shift: ratios [{}], range {:.4}",
        fmt_ratios(&plain),
        range_with_ci(&plain).0
    ));
    Ok(v)
}
