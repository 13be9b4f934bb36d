use fairguide::diffusion::{chain_rng, NoiseSchedule};
use fairguide::numerics::sigmoid;
use fairguide::world::{orthonormal_frame, EmbeddingWorldMap, MixtureWorld, PromptEmbedding, EMBED_DIM};

#[test]
fn strong_imbalance_sample_frequencies() {
    let world = MixtureWorld::strong_imbalance();
    let data = world.sample(40_000, &mut chain_rng(1, 0)).unwrap();
    for y in 0..2 {
        let idx: Vec<usize> = (0..data.len()).filter(|&i| data.condition[i] == y).collect();
        let share = idx.iter().filter(|&&i| data.group[i] == 1).count() as f64 / idx.len() as f64;
        let want = if y == 1 { 0.85 } else { 0.15 };
        let se = (want * (1.0 - want) / idx.len() as f64).sqrt();
        assert!((share - want).abs() < 4.0 * se, "y={y}: {share}");
    }
    let prior = world.group_prior(Some(1));
    assert!((prior[0] - 0.15).abs() < 1e-12 && (prior[1] - 0.85).abs() < 1e-12);
    assert_eq!(world.target(1).unwrap(), &[0.5, 0.5]);
}

#[test]
fn posteriors_are_distributions_and_agree_with_the_clean_limit() {
    let world = MixtureWorld::weak_imbalance();
    let schedule = NoiseSchedule::default();
    let mut rng = chain_rng(2, 0);
    let data = world.sample(50, &mut rng).unwrap();
    for x in &data.x {
        let clean = world.group_posterior(x, Some(1)).unwrap();
        assert!((clean.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let near = world
            .group_posterior_noisy(x, schedule.level(1e-4).unwrap().variance(), Some(1))
            .unwrap();
        assert!((near[1] - clean[1]).abs() < 1e-3);
        // at very high noise the posterior returns to the prior
        let far = world.group_posterior_noisy(x, 1e8, Some(1)).unwrap();
        assert!((far[1] - 0.6).abs() < 1e-3, "{far:?}");
    }
}

#[test]
fn mixture_world_json_round_trip() {
    let world = MixtureWorld::strong_imbalance();
    let text = world.to_json().unwrap();
    let back = MixtureWorld::from_json(&text).unwrap();
    assert_eq!(back.to_json().unwrap(), text);
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["target"][0] = serde_json::json!([0.9, 0.5]);
    assert!(MixtureWorld::from_json(&v.to_string()).is_err());
}

#[test]
fn embedding_group_weight_follows_the_attribute_score() {
    let frame = orthonormal_frame(EMBED_DIM, 11);
    let map = EmbeddingWorldMap::preset(&frame, 0.05, -0.2).unwrap();
    for score in [-12.0, -3.0, 0.0, 4.0, 15.0] {
        let p = EmbeddingWorldMap::prompt_in_frame(&frame, score, 1.0, &[0.4, -0.2], "p").unwrap();
        assert!((map.attribute_score(&p) - score).abs() < 1e-12);
        assert!((map.group_weight(&p) - sigmoid(0.05 * score - 0.2)).abs() < 1e-15);
    }
    let fair = map.debiased(0.5).unwrap();
    let p = EmbeddingWorldMap::prompt_in_frame(&frame, 9.0, 1.0, &[], "p").unwrap();
    assert_eq!(fair.group_weight(&p), 0.5);
    let weak = map.weakened();
    assert!((weak.group_weight(&p) - 0.5).abs() < (map.group_weight(&p) - 0.5).abs());
    assert!(map.mixture(&PromptEmbedding::null(3)).is_err());
}

#[test]
fn frames_are_orthonormal_and_seeded() {
    let f = orthonormal_frame(EMBED_DIM, 4);
    for i in 0..EMBED_DIM {
        for j in 0..EMBED_DIM {
            let d: f64 = f[i].iter().zip(&f[j]).map(|(a, b)| a * b).sum();
            assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
        }
    }
    assert_eq!(f, orthonormal_frame(EMBED_DIM, 4));
    assert_ne!(f, orthonormal_frame(EMBED_DIM, 5));
}
