use rand::Rng;

use crate::diffusion::{forward_corrupt, NoiseSchedule};
use crate::error::{Error, Result};
use crate::numerics::{solve_balanced_ot, wasserstein1_1d, Matrix, TransportPlan};
use crate::world::MixtureWorld;

use super::NoisyClassifier;

/// One classifier output entering the matching: probability and time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WdpSample {
    pub prob: f64,
    pub t: f64,
}

/// Exact minibatch WDP between two groups' outputs.
///
/// The plan minimizes `|u - v| + γ |logSNR(t) - logSNR(t')|`; the returned
/// loss charges only `|u - v|` under that plan, i.e. `Σ π_ij |u_i - v_j|`
/// with `π` carrying mass `1/n` per matched pair.
pub fn wdp_minibatch_loss(
    outputs_a: &[WdpSample],
    outputs_b: &[WdpSample],
    gamma: f64,
    schedule: &NoiseSchedule,
) -> Result<(f64, TransportPlan)> {
    if outputs_a.len() != outputs_b.len() {
        return Err(Error::DimensionMismatch {
            expected: outputs_a.len(),
            got: outputs_b.len(),
        });
    }
    if outputs_a.is_empty() {
        return Err(Error::EmptyInput("WDP minibatch"));
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidArgument("gamma must be non-negative".into()));
    }
    let snr = |s: &WdpSample| schedule.log_snr(s.t);
    let la = outputs_a.iter().map(snr).collect::<Result<Vec<_>>>()?;
    let lb = outputs_b.iter().map(snr).collect::<Result<Vec<_>>>()?;
    let n = outputs_a.len();
    let cost = Matrix::from_fn(n, n, |i, j| {
        (outputs_a[i].prob - outputs_b[j].prob).abs() + gamma * (la[i] - lb[j]).abs()
    });
    let plan = solve_balanced_ot(&cost)?;
    let loss = plan_loss(outputs_a, outputs_b, &plan);
    Ok((loss, plan))
}

pub(crate) fn plan_loss(a: &[WdpSample], b: &[WdpSample], plan: &TransportPlan) -> f64 {
    let m = 1.0 / plan.n() as f64;
    plan.assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| m * (a[i].prob - b[j].prob).abs())
        .sum()
}

/// Fixed-plan subgradients `(∂/∂u_i, ∂/∂v_j)` of the plan loss.
pub fn wdp_subgradient(a: &[WdpSample], b: &[WdpSample], plan: &TransportPlan) -> (Vec<f64>, Vec<f64>) {
    let m = 1.0 / plan.n() as f64;
    let mut du = vec![0.0; a.len()];
    let mut dv = vec![0.0; b.len()];
    for (i, &j) in plan.assignment.iter().enumerate() {
        let s = m * sign(a[i].prob - b[j].prob);
        du[i] += s;
        dv[j] -= s;
    }
    (du, dv)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Monte-Carlo group-to-group W1 of `p_φ(y | X_t, t)` given condition `y`,
/// one value per time in `t_bins`, for the first two groups.
/// Each bin draws fresh `(x_0, ε)` from the world cells `(y, a)`.
pub fn wdp_distance<R: Rng + ?Sized>(
    clf: &NoisyClassifier,
    world: &MixtureWorld,
    y: usize,
    t_bins: &[f64],
    n_eval: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if n_eval < 100 {
        return Err(Error::InvalidArgument("need at least 100 evaluations per group and bin".into()));
    }
    if t_bins.is_empty() {
        return Err(Error::EmptyInput("time bins"));
    }
    for a in 0..2 {
        world.group_conditional(y, a)?;
    }
    let schedule = clf.schedule;
    let mut out = Vec::with_capacity(t_bins.len());
    for &t in t_bins {
        let level = schedule.level(t)?;
        let mut probs = [Vec::with_capacity(n_eval), Vec::with_capacity(n_eval)];
        for (a, p) in probs.iter_mut().enumerate() {
            let data = sample_cell(world, y, a, n_eval, rng)?;
            for x0 in &data {
                let xt = forward_corrupt(x0, t, &schedule, rng)?;
                let py1 = clf.prob(&xt, level);
                p.push(if y == 1 { py1 } else { 1.0 - py1 });
            }
        }
        out.push(wasserstein1_1d(&probs[0], &probs[1])?);
    }
    Ok(out)
}

/// `n` clean draws from cell `(y, a)`.
pub(crate) fn sample_cell<R: Rng + ?Sized>(
    world: &MixtureWorld,
    y: usize,
    a: usize,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let cell = world.group_conditional(y, a)?;
    let comps: Vec<_> = world
        .components()
        .iter()
        .filter(|c| c.condition == y && c.group == a)
        .cloned()
        .collect();
    debug_assert_eq!(comps.len(), cell.len());
    let sub = MixtureWorld::new(world.n_groups(), comps, vec![vec![1.0 / world.n_groups() as f64; world.n_groups()]; 2])?;
    Ok(sub.sample(n, rng)?.x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::chain_rng;
    use rand::Rng;

    fn s(prob: f64, t: f64) -> WdpSample {
        WdpSample { prob, t }
    }

    #[test]
    fn single_pair_and_identical_sets() {
        let sch = NoiseSchedule::default();
        let (l, _) = wdp_minibatch_loss(&[s(0.8, 0.3)], &[s(0.3, 0.9)], 0.2, &sch).unwrap();
        assert!((l - 0.5).abs() < 1e-15);
        let a = [s(0.1, 0.2), s(0.7, 0.5), s(0.4, 0.9)];
        let b = [a[2], a[0], a[1]];
        let (l, _) = wdp_minibatch_loss(&a, &b, 0.2, &sch).unwrap();
        assert_eq!(l, 0.0);
        assert!(wdp_minibatch_loss(&a, &b[..2], 0.2, &sch).is_err());
    }

    #[test]
    fn matches_permutation_brute_force() {
        let sch = NoiseSchedule::default();
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let mut rng = chain_rng(5, 0);
        for _ in 0..100 {
            let mut draw = || s(rng.random::<f64>(), 0.01 + 0.99 * rng.random::<f64>());
            let a = [draw(), draw(), draw()];
            let b = [draw(), draw(), draw()];
            let snr = |x: &WdpSample| sch.log_snr(x.t).unwrap();
            let composite = |p: &[usize; 3]| -> f64 {
                (0..3)
                    .map(|i| (a[i].prob - b[p[i]].prob).abs() + 0.2 * (snr(&a[i]) - snr(&b[p[i]])).abs())
                    .sum::<f64>()
                    / 3.0
            };
            let best = perms
                .iter()
                .min_by(|p, q| composite(p).total_cmp(&composite(q)))
                .unwrap();
            let (loss, plan) = wdp_minibatch_loss(&a, &b, 0.2, &sch).unwrap();
            assert!((plan.cost_total - composite(best)).abs() < 1e-12);
            let expect: f64 = (0..3).map(|i| (a[i].prob - b[best[i]].prob).abs()).sum::<f64>() / 3.0;
            assert!((loss - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn subgradient_is_fixed_plan_derivative() {
        let sch = NoiseSchedule::default();
        let a = [s(0.9, 0.2), s(0.2, 0.5)];
        let b = [s(0.4, 0.3), s(0.1, 0.6)];
        let (_, plan) = wdp_minibatch_loss(&a, &b, 0.0, &sch).unwrap();
        let (du, dv) = wdp_subgradient(&a, &b, &plan);
        let h = 1e-7;
        for i in 0..2 {
            let mut ap = a;
            ap[i].prob += h;
            let fd = (plan_loss(&ap, &b, &plan) - plan_loss(&a, &b, &plan)) / h;
            assert!((fd - du[i]).abs() < 1e-6);
            let mut bp = b;
            bp[i].prob += h;
            let fd = (plan_loss(&a, &bp, &plan) - plan_loss(&a, &b, &plan)) / h;
            assert!((fd - dv[i]).abs() < 1e-6);
        }
    }
}
