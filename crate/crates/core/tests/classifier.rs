use fairguide::classifier::{
    cg_potential, objective, train, wdp_distance, Architecture, MatchingSet, Minibatch, NoisyClassifier,
    NoisyExample, TrainConfig, TrainMethod, WdpConfig,
};
use fairguide::diffusion::{chain_rng, forward_corrupt, GuidancePotential, NoiseSchedule};
use fairguide::numerics::{sigmoid, GaussianParams};
use fairguide::world::{Component, Dataset, MixtureWorld};
use rand::Rng;

fn schedule() -> NoiseSchedule {
    NoiseSchedule::default()
}

fn random_classifier(seed: u64, hidden: [usize; 2]) -> NoisyClassifier {
    NoisyClassifier::init(Architecture::new(2, hidden).unwrap(), schedule(), &mut chain_rng(seed, 0)).unwrap()
}

/// Conditions far apart along the second axis; Bayes error below 1e-6.
fn separable_world() -> MixtureWorld {
    world_with_group_offset(1.0)
}

fn world_with_group_offset(offset: f64) -> MixtureWorld {
    let mut comps = Vec::new();
    for y in 0..2 {
        for a in 0..2 {
            let mean = [if a == 1 { offset } else { -offset }, if y == 1 { 2.5 } else { -2.5 }];
            comps.push(Component {
                group: a,
                condition: y,
                weight: 1.0,
                params: GaussianParams::diagonal(&mean, &[0.25, 0.25]).unwrap(),
            });
        }
    }
    MixtureWorld::new(2, comps, vec![vec![0.5, 0.5]; 2]).unwrap()
}

fn example<R: Rng>(rng: &mut R, condition: usize, group: usize) -> NoisyExample {
    let t = 0.05 + 0.9 * rng.random::<f64>();
    NoisyExample {
        x: vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
        level: schedule().level(t).unwrap(),
        condition,
        group,
    }
}

fn random_batch(seed: u64) -> Minibatch {
    let mut rng = chain_rng(seed, 1);
    let ce = (0..12).map(|i| example(&mut rng, i % 2, (i / 2) % 2)).collect();
    let matching = (0..2)
        .map(|y| MatchingSet {
            condition: y,
            groups: (0..2).map(|a| (0..4).map(|_| example(&mut rng, y, a)).collect()).collect(),
        })
        .collect();
    Minibatch { ce, matching }
}

#[test]
fn input_gradient_matches_finite_differences() {
    let clf = random_classifier(7, [16, 16]);
    let mut rng = chain_rng(8, 0);
    for y in [0, 1] {
        let pot = cg_potential(&clf, y).unwrap();
        for _ in 0..20 {
            let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let level = schedule().level(rng.random_range(0.01..1.0)).unwrap();
            let g = pot.grad_log_potential(&x, level);
            let logp = |x: &[f64]| {
                let p = clf.prob(x, level);
                if y == 1 { p.ln() } else { (1.0 - p).ln() }
            };
            let h = 1e-5;
            for i in 0..2 {
                let (mut up, mut dn) = (x, x);
                up[i] += h;
                dn[i] -= h;
                let fd = (logp(&up) - logp(&dn)) / (2.0 * h);
                let scale = fd.abs().max(g[i].abs()).max(1e-6);
                assert!((fd - g[i]).abs() / scale < 1e-4, "{fd} vs {}", g[i]);
            }
        }
    }
}

#[test]
fn zeroed_classifier_has_no_guidance() {
    let clf = NoisyClassifier::zeroed(Architecture::new(2, [8, 8]).unwrap(), schedule()).unwrap();
    let pot = cg_potential(&clf, 1).unwrap();
    let mut rng = chain_rng(2, 0);
    for _ in 0..20 {
        let x = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
        let level = schedule().level(rng.random_range(0.01..1.0)).unwrap();
        assert!(pot.grad_log_potential(&x, level).iter().all(|v| *v == 0.0));
        assert_eq!(clf.prob(&x, level), 0.5);
    }
    assert!(cg_potential(&clf, 2).is_err());
}

#[test]
fn guidance_is_logistic_times_logit_gradient() {
    // log p(1|x) has gradient (1 - p) ∇logit, log p(0|x) has -p ∇logit
    let clf = random_classifier(11, [6, 5]);
    let level = schedule().level(0.3).unwrap();
    let x = [0.7, -0.2];
    let h = 1e-6;
    let dlogit: Vec<f64> = (0..2)
        .map(|i| {
            let (mut up, mut dn) = (x, x);
            up[i] += h;
            dn[i] -= h;
            (clf.logit(&up, level) - clf.logit(&dn, level)) / (2.0 * h)
        })
        .collect();
    let p = clf.prob(&x, level);
    let g1 = cg_potential(&clf, 1).unwrap().grad_log_potential(&x, level);
    let g0 = cg_potential(&clf, 0).unwrap().grad_log_potential(&x, level);
    for i in 0..2 {
        assert!((g1[i] - (1.0 - p) * dlogit[i]).abs() < 1e-8);
        assert!((g0[i] + p * dlogit[i]).abs() < 1e-8);
    }
}

fn check_objective_gradient(weights: Option<&[f64]>, wdp: &WdpConfig) {
    let clf = random_classifier(3, [7, 6]);
    let batch = random_batch(4);
    let base = objective(&clf, &clf.params, &batch, 2, weights, wdp, None).unwrap();
    let plans = base.plans.clone();
    let h = 1e-6;
    let mut worst = 0.0f64;
    for k in 0..clf.params.len() {
        let mut p = clf.params.clone();
        p[k] += h;
        let up = objective(&clf, &p, &batch, 2, weights, wdp, Some(&plans)).unwrap().loss;
        p[k] -= 2.0 * h;
        let dn = objective(&clf, &p, &batch, 2, weights, wdp, Some(&plans)).unwrap().loss;
        let fd = (up - dn) / (2.0 * h);
        let g = base.grad[k];
        let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-3);
        worst = worst.max(rel);
    }
    assert!(worst < 1e-4, "relative gradient error {worst}");
}

#[test]
fn objective_gradients_match_finite_differences() {
    let plain = WdpConfig {
        lambda: 0.0,
        ..WdpConfig::default()
    };
    check_objective_gradient(None, &plain);
    check_objective_gradient(Some(&[0.3, 0.7]), &plain);
    check_objective_gradient(None, &WdpConfig::default());
}

fn train_set(world: &MixtureWorld, n: usize, seed: u64) -> Dataset {
    world.sample(n, &mut chain_rng(seed, 9)).unwrap()
}

fn small_cfg(method: TrainMethod, seed: u64) -> TrainConfig {
    TrainConfig {
        batch: 32,
        hidden: [16, 16],
        ..TrainConfig::new(method, 60, seed)
    }
}

#[test]
fn training_is_deterministic_and_lambda_zero_is_cross_entropy() {
    let data = train_set(&MixtureWorld::strong_imbalance(), 500, 1);
    let sch = schedule();
    let wdp = WdpConfig::default();
    let (a, ra) = train(&data, &sch, &small_cfg(TrainMethod::Wdp, 5), &wdp).unwrap();
    let (b, rb) = train(&data, &sch, &small_cfg(TrainMethod::Wdp, 5), &wdp).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(ra.to_csv(), rb.to_csv());
    assert!(ra.curve.iter().skip(1).any(|p| p.wdp_loss > 0.0));

    let off = WdpConfig {
        lambda: 0.0,
        ..wdp
    };
    let (w0, _) = train(&data, &sch, &small_cfg(TrainMethod::Wdp, 5), &off).unwrap();
    let (ce, _) = train(&data, &sch, &small_cfg(TrainMethod::Ce, 5), &off).unwrap();
    assert_eq!(w0.params, ce.params);

    for m in [TrainMethod::Rw, TrainMethod::Gdro] {
        let (c, r) = train(&data, &sch, &small_cfg(m, 5), &off).unwrap();
        assert!(c.params.iter().all(|p| p.is_finite()));
        assert!(r.to_csv().starts_with("step,ce_loss,wdp_loss,group_loss_0,group_loss_1\n"));
    }
}

#[test]
fn training_rejects_bad_inputs_and_reports_divergence() {
    let sch = schedule();
    let data = train_set(&MixtureWorld::weak_imbalance(), 200, 2);
    let only_y0 = Dataset {
        x: data.x.iter().zip(&data.condition).filter(|(_, c)| **c == 0).map(|(x, _)| x.clone()).collect(),
        group: data.group.iter().zip(&data.condition).filter(|(_, c)| **c == 0).map(|(g, _)| *g).collect(),
        condition: vec![0; data.condition.iter().filter(|c| **c == 0).count()],
    };
    assert!(train(&only_y0, &sch, &small_cfg(TrainMethod::Ce, 1), &WdpConfig::default()).is_err());
    let mut cfg = small_cfg(TrainMethod::Ce, 1);
    cfg.warmup_frac = 1.0;
    assert!(train(&data, &sch, &cfg, &WdpConfig::default()).is_err());
    let mut cfg = small_cfg(TrainMethod::Ce, 1);
    cfg.lr = 1e6;
    match train(&data, &sch, &cfg, &WdpConfig::default()) {
        Err(fairguide::Error::TrainingDiverged { lr, .. }) => assert_eq!(lr, 1e6),
        Ok(_) => {}
        Err(e) => panic!("unexpected error {e}"),
    }
}

#[test]
fn separable_world_is_learned_at_low_noise() {
    let world = separable_world();
    let data = train_set(&world, 4000, 3);
    let cfg = TrainConfig {
        steps: 800,
        batch: 64,
        hidden: [32, 32],
        ..TrainConfig::new(TrainMethod::Ce, 800, 4)
    };
    let (clf, _) = train(&data, &schedule(), &cfg, &WdpConfig::default()).unwrap();
    let test = world.sample(2000, &mut chain_rng(99, 0)).unwrap();
    let sch = schedule();
    let level = sch.level(fairguide::classifier::T_FLOOR).unwrap();
    assert!((level.sigma - 2e-3).abs() < 1e-4);
    let mut rng = chain_rng(100, 0);
    let correct = test
        .x
        .iter()
        .zip(&test.condition)
        .filter(|(x, y)| {
            let xt = forward_corrupt(x, level.t, &sch, &mut rng).unwrap();
            (clf.prob(&xt, level) > 0.5) == (**y == 1)
        })
        .count();
    let acc = correct as f64 / test.len() as f64;
    assert!(acc > 0.95, "held-out accuracy {acc}");
}

#[test]
fn classifier_json_roundtrip() {
    let clf = random_classifier(9, [5, 4]);
    let text = clf.to_json().unwrap();
    assert!(text.contains("\"architecture\""));
    assert_eq!(NoisyClassifier::from_json(&text).unwrap(), clf);
    let broken = text.replacen("\"activation\": \"tanh\"", "\"activation\": \"relu\"", 1);
    assert!(NoisyClassifier::from_json(&broken).is_err());
}

#[test]
fn wdp_distance_limits() {
    let world = separable_world();
    let sch = schedule();
    let bins = [0.05, 0.2, 0.4];
    let flat = NoisyClassifier::zeroed(Architecture::new(2, [4, 4]).unwrap(), sch).unwrap();
    let d = wdp_distance(&flat, &world, 1, &bins, 200, &mut chain_rng(1, 0)).unwrap();
    assert!(d.iter().all(|v| *v == 0.0));
    assert!(wdp_distance(&flat, &world, 1, &bins, 50, &mut chain_rng(1, 0)).is_err());

    // one saturated unit reading the group axis: outputs ≈ 0 for group 0, ≈ 1 for group 1
    let world = world_with_group_offset(3.0);
    let arch = Architecture::new(2, [1, 1]).unwrap();
    let mut sep = NoisyClassifier::zeroed(arch.clone(), sch).unwrap();
    let [w1, _, w2, _, w3, _] = arch.offsets();
    sep.params[w1] = 40.0;
    sep.params[w2] = 40.0;
    sep.params[w3] = 40.0;
    let d = wdp_distance(&sep, &world, 1, &bins, 400, &mut chain_rng(2, 0)).unwrap();
    assert!(d.iter().all(|v| (v - 1.0).abs() < 0.02), "{d:?}");
    let p = sigmoid(40.0);
    assert!(p > 0.999);
}
