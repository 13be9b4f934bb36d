use fairguide::alphaselect::{
    fit_alpha_estimator, gender_direction, holdout_split, predict_alpha, prompt_family, search_alpha_star,
    stayfair_bias, template_pairs, AlphaGrid, AlphaRecord, BiasProbe, HOLDOUT_FRAC,
};
use fairguide::diffusion::SamplerConfig;
use fairguide::numerics::dot;
use fairguide::world::{orthonormal_frame, EmbeddingWorldMap, EMBED_DIM};

fn cheap_probe(seed: u64) -> BiasProbe {
    let mut p = BiasProbe::new(2.5, 12.5, 200, seed);
    p.sampler = SamplerConfig::sde().with_steps(64);
    p
}

fn world() -> (Vec<Vec<f64>>, EmbeddingWorldMap) {
    let frame = orthonormal_frame(EMBED_DIM, 11);
    let map = EmbeddingWorldMap::preset(&frame, 0.01, 0.0).unwrap();
    (frame, map)
}

/// Smallest-|α| sign change from a full scan of the same (deterministic) curve.
fn full_scan(map: &EmbeddingWorldMap, rec: &AlphaRecord, grid: &AlphaGrid, probe: &BiasProbe) -> Option<f64> {
    let curve: Vec<(f64, f64)> = grid
        .points()
        .into_iter()
        .map(|a| (a, stayfair_bias(map, &rec.prompt, a, probe).unwrap().0))
        .collect();
    let sign = |b: f64| if b.abs() <= 1e-12 { 0.0 } else { b.signum() };
    let mut picks: Vec<f64> = curve.iter().filter(|p| sign(p.1) == 0.0).map(|p| p.0).collect();
    for w in curve.windows(2) {
        if sign(w[0].1) * sign(w[1].1) < 0.0 {
            picks.push(if w[1].0.abs() < w[0].0.abs() { w[1].0 } else { w[0].0 });
        }
    }
    picks.into_iter().min_by(|a, b| a.abs().total_cmp(&b.abs()))
}

#[test]
fn neutral_prompt_needs_no_shift() {
    let (frame, map) = world();
    let prompt = EmbeddingWorldMap::prompt_in_frame(&frame, 0.0, 1.0, &[0.2], "neutral").unwrap();
    let (bias, _) = stayfair_bias(&map, &prompt, 0.0, &cheap_probe(3)).unwrap();
    assert!(bias.abs() <= 1e-12, "{bias}");
    let rec = search_alpha_star(&map, &prompt, &map.direction, &AlphaGrid::sd15(), &cheap_probe(3)).unwrap();
    assert_eq!(rec.alpha_star, 0.0);
    assert!(!rec.saturated);
}

#[test]
fn bisection_matches_full_scan() {
    let (frame, map) = world();
    let grid = AlphaGrid::sd15();
    let probe = cheap_probe(4);
    for score in [-9.0, -2.0, 6.5, 11.0] {
        let prompt = EmbeddingWorldMap::prompt_in_frame(&frame, score, 1.0, &[0.3], "p").unwrap();
        let rec = search_alpha_star(&map, &prompt, &map.direction, &grid, &probe).unwrap();
        assert!(!rec.fallback && !rec.saturated, "score {score}");
        assert_eq!(Some(rec.alpha_star), full_scan(&map, &rec, &grid, &probe), "score {score}");
        // fewer evaluations than the grid has points
        assert!(rec.bias_curve.len() < grid.points().len());
    }
}

#[test]
fn held_out_predictions_land_within_one_step() {
    let (frame, map) = world();
    let prompts = prompt_family(&frame, 132, 21).unwrap();
    let labels: Vec<&str> = prompts.iter().map(|p| p.label.as_str()).collect();
    let (train_idx, held_idx) = holdout_split(&labels, HOLDOUT_FRAC);
    assert_eq!(held_idx.len(), 20);
    let src: Vec<_> = train_idx.iter().take(28).map(|&i| prompts[i].clone()).collect();
    let direction = gender_direction(&template_pairs(&src, &map.direction, 21).unwrap()).unwrap();
    assert!(dot(&direction, &map.direction) > 0.99);

    let grid = AlphaGrid::sd15();
    let probe = cheap_probe(22);
    let search = |i: usize| search_alpha_star(&map, &prompts[i], &direction, &grid, &probe).unwrap();
    let train: Vec<AlphaRecord> = train_idx.iter().map(|&i| search(i)).collect();
    let est = fit_alpha_estimator(&train, &direction).unwrap();
    let within = held_idx
        .iter()
        .filter(|&&i| {
            let rec = search(i);
            (predict_alpha(&est, &prompts[i], &grid) - rec.alpha_star).abs() <= grid.step + 1e-9
        })
        .count();
    assert!(within >= 16, "{within}/20 within one grid step");
}
