use rand::Rng;
use rand_distr::StandardNormal;

use crate::classifier::{
    cg_potential, objective, Architecture, MatchingSet, Minibatch, NoisyClassifier, NoisyExample, WdpConfig,
};
use crate::diffusion::{chain_rng, GuidancePotential, NoiseSchedule};
use crate::error::Result;
use crate::numerics::{
    loo_mse_refit, loo_mse_shortcut, solve_balanced_ot, wasserstein1_1d, GaussianParams, Matrix, Vector,
};
use crate::theory::{tilt_gradient, tilt_factor, EndpointTiltPotential, GaussianGroupModel, LogAffinePotential};
use crate::world::MixtureWorld;

use super::lp::transport_lp_w1;
use super::Verdict;

const SEED: u64 = 0x0c9;

/// Minimum of `(1/n) Σ c[i, σ(i)]` over all permutations (Heap's algorithm).
pub(crate) fn brute_force_assignment(cost: &Matrix) -> f64 {
    let n = cost.nrows();
    let mut perm: Vec<usize> = (0..n).collect();
    let eval = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum::<f64>() / n as f64;
    let mut best = eval(&perm);
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(eval(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Central differences of `f` at `x` with step `h`.
fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let (mut up, mut dn) = (x.to_vec(), x.to_vec());
            up[i] += h;
            dn[i] -= h;
            (f(&up) - f(&dn)) / (2.0 * h)
        })
        .collect()
}

fn worst_rel(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| rel_err(*x, *y, floor)).fold(0.0, f64::max)
}

fn ot_checks(v: &mut Verdict) -> Result<()> {
    let mut rng = chain_rng(SEED, 1);
    let mut worst = 0.0f64;
    for trial in 0..200 {
        let n = rng.random_range(1..=6);
        // every fourth instance uses small integer costs to force ties
        let cost = Matrix::from_fn(n, n, |_, _| {
            if trial % 4 == 0 {
                rng.random_range(0..3) as f64
            } else {
                rng.random::<f64>()
            }
        });
        let plan = solve_balanced_ot(&cost)?;
        worst = worst.max((plan.cost_total - brute_force_assignment(&cost)).abs());
    }
    v.check(worst <= 1e-12, format!("assignment solver vs permutation minimum, 200 trials: max gap {worst:.2e}"));
    Ok(())
}

fn w1_checks(v: &mut Verdict) -> Result<()> {
    let mut rng = chain_rng(SEED, 2);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(1..=7);
        let u: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let w: Vec<f64> = (0..n).map(|_| 0.5 + 2.0 * rng.random::<f64>()).collect();
        worst = worst.max((wasserstein1_1d(&u, &w)? - transport_lp_w1(&u, &w)?).abs());
    }
    v.check(worst <= 1e-9, format!("sorted W1 vs transport LP, 200 trials: max gap {worst:.2e}"));
    Ok(())
}

fn ridge_checks(v: &mut Verdict) -> Result<()> {
    let mut rng = chain_rng(SEED, 3);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(6..=30);
        let p = rng.random_range(1..=4);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let y: Vec<f64> = x
            .iter()
            .map(|r| r.iter().sum::<f64>() + 0.3 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        for lambda in [0.01, 1.0, 100.0] {
            worst = worst.max((loo_mse_shortcut(&x, &y, lambda)? - loo_mse_refit(&x, &y, lambda)?).abs());
        }
    }
    v.check(worst <= 1e-9, format!("ridge LOO shortcut vs refit, 150 fits: max gap {worst:.2e}"));
    Ok(())
}

fn example<R: Rng>(rng: &mut R, schedule: &NoiseSchedule, condition: usize, group: usize) -> Result<NoisyExample> {
    Ok(NoisyExample {
        x: vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
        level: schedule.level(rng.random_range(0.05..0.95))?,
        condition,
        group,
    })
}

fn classifier_checks(v: &mut Verdict) -> Result<()> {
    let schedule = NoiseSchedule::default();
    let mut rng = chain_rng(SEED, 4);
    let clf = NoisyClassifier::init(Architecture::new(2, [12, 10])?, schedule, &mut rng)?;
    let mut worst_input = 0.0f64;
    for y in 0..2 {
        let pot = cg_potential(&clf, y)?;
        for _ in 0..20 {
            let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let level = schedule.level(rng.random_range(0.01..1.0))?;
            let log_p = |z: &[f64]| {
                let p = clf.prob(z, level);
                if y == 1 {
                    p.ln()
                } else {
                    (1.0 - p).ln()
                }
            };
            let fd = fd_gradient(log_p, &x, 1e-5);
            worst_input = worst_input.max(worst_rel(&pot.grad_log_potential(&x, level), &fd, 1e-6));
        }
    }
    v.check(worst_input < 1e-4, format!("classifier input gradient vs finite differences: max rel {worst_input:.2e}"));

    let mut batch = Minibatch {
        ce: Vec::new(),
        matching: Vec::new(),
    };
    for i in 0..12 {
        batch.ce.push(example(&mut rng, &schedule, i % 2, (i / 2) % 2)?);
    }
    for y in 0..2 {
        let mut groups = Vec::new();
        for a in 0..2 {
            groups.push((0..4).map(|_| example(&mut rng, &schedule, y, a)).collect::<Result<Vec<_>>>()?);
        }
        batch.matching.push(MatchingSet { condition: y, groups });
    }
    let mut worst_param = 0.0f64;
    for (weights, lambda) in [(None, 0.0), (Some([0.3, 0.7]), 0.0), (None, 3.0)] {
        let wdp = WdpConfig {
            lambda,
            ..WdpConfig::default()
        };
        let q = weights.as_ref().map(|w| &w[..]);
        let base = objective(&clf, &clf.params, &batch, 2, q, &wdp, None)?;
        let plans = base.plans.clone();
        let loss = |p: &[f64]| {
            objective(&clf, p, &batch, 2, q, &wdp, Some(&plans))
                .map(|o| o.loss)
                .unwrap_or(f64::NAN)
        };
        let fd = fd_gradient(loss, &clf.params, 1e-6);
        worst_param = worst_param.max(worst_rel(&base.grad, &fd, 1e-3));
    }
    v.check(
        worst_param < 1e-4,
        format!("training objective parameter gradient (plain, group-weighted, transport penalty): max rel {worst_param:.2e}"),
    );
    Ok(())
}

fn score_checks(v: &mut Verdict) -> Result<()> {
    let schedule = NoiseSchedule::default();
    let world = MixtureWorld::strong_imbalance();
    let mut rng = chain_rng(SEED, 5);
    let mut worst = 0.0f64;
    for _ in 0..40 {
        let x = [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
        let level = schedule.level(rng.random_range(0.01..1.0))?;
        let y = rng.random_range(0..2);
        let mix = world.conditional(y)?;
        let fd = fd_gradient(|z| mix.log_density(z, level.variance()), &x, 1e-5);
        let mut s = [0.0; 2];
        mix.score_into(&x, level.variance(), &mut s);
        worst = worst.max(worst_rel(&s, &fd, 1e-6));
    }
    v.check(worst < 1e-6, format!("mixture score vs finite differences of log density: max rel {worst:.2e}"));
    Ok(())
}

fn tilt_checks(v: &mut Verdict) -> Result<()> {
    let schedule = NoiseSchedule::default();
    let spd = GaussianParams::new(
        Vector::from_vec(vec![0.4, -0.2]),
        Matrix::from_row_slice(2, 2, &[1.3, 0.4, 0.4, 0.7]),
    )?;
    let pot = LogAffinePotential::new(vec![0.8, 0.3], -0.2)?;
    let mut worst_single = 0.0f64;
    for (t, w) in [(0.2, 0.5), (0.5, 2.0), (0.8, 7.0)] {
        let x = [0.3, -0.7];
        let fd = fd_gradient(|z| tilt_factor(z, t, w, &pot, &spd, &schedule).map_or(f64::NAN, f64::ln), &x, 1e-5);
        worst_single = worst_single.max(worst_rel(&tilt_gradient(t, w, &pot, &spd, &schedule)?, &fd, 1e-6));
    }
    v.check(worst_single < 1e-6, format!("single-Gaussian log h gradient: max rel {worst_single:.2e}"));

    let model = GaussianGroupModel::new(vec![(0.4, GaussianParams::diagonal(&[-1.0, 0.0], &[0.6, 1.1])?), (0.6, spd)])?;
    let mut rng = chain_rng(SEED, 6);
    let mut worst = 0.0f64;
    for w in [0.5, 2.0, 5.0] {
        let tilt = EndpointTiltPotential::new(&model, &pot, w)?;
        for _ in 0..10 {
            let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let level = schedule.level(rng.random_range(0.05..0.95))?;
            let fd = fd_gradient(|z| tilt.log_tilt(z, level), &x, 1e-6);
            // the potential reports ∇ log h / w
            let g: Vec<f64> = tilt.grad_log_potential(&x, level).iter().map(|g| g * w).collect();
            worst = worst.max(worst_rel(&g, &fd, 1e-4));
        }
    }
    v.check(worst < 1e-6, format!("group-mixture log h gradient: max rel {worst:.2e}"));
    Ok(())
}

pub(crate) fn oracle_equivalences() -> Result<Verdict> {
    let mut v = Verdict::new();
    ot_checks(&mut v)?;
    w1_checks(&mut v)?;
    ridge_checks(&mut v)?;
    classifier_checks(&mut v)?;
    score_checks(&mut v)?;
    tilt_checks(&mut v)?;
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brute_force_small_cases() {
        let c = Matrix::from_row_slice(3, 3, &[4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0]);
        assert!((brute_force_assignment(&c) - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(brute_force_assignment(&Matrix::from_element(1, 1, 2.5)), 2.5);
    }
}
