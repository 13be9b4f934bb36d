use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffusion::{chain_rng, NoiseLevel, NoiseSchedule};
use crate::error::{Error, Result};
use crate::numerics::{sigmoid, TransportPlan};
use crate::world::{Dataset, N_CONDITIONS};

use super::mlp::{Architecture, NoisyClassifier};
use super::wdp::{plan_loss, wdp_minibatch_loss, wdp_subgradient, WdpSample};

/// Smallest training time; matches the sampler's default stopping time.
pub const T_FLOOR: f64 = 1e-3;
const MOMENTUM: f64 = 0.9;
const GDRO_STEP: f64 = 0.01;
/// Spread of the window-center density in logSNR units.
const CENTER_LOG_SNR_SD: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMethod {
    Ce,
    Rw,
    Gdro,
    Wdp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    #[serde(default = "default_warmup")]
    pub warmup_frac: f64,
    pub method: TrainMethod,
    #[serde(default = "default_hidden")]
    pub hidden: [usize; 2],
    /// Learning-curve sampling period in steps.
    #[serde(default = "default_log_every")]
    pub log_every: usize,
}

fn default_warmup() -> f64 {
    0.05
}

fn default_hidden() -> [usize; 2] {
    [64, 64]
}

fn default_log_every() -> usize {
    50
}

impl TrainConfig {
    pub fn new(method: TrainMethod, steps: usize, seed: u64) -> Self {
        Self {
            steps,
            batch: 512,
            lr: 0.05,
            seed,
            warmup_frac: default_warmup(),
            method,
            hidden: default_hidden(),
            log_every: default_log_every(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch < 2 {
            return Err(Error::InvalidArgument("need at least one step and a batch of two".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return Err(Error::InvalidArgument("warmup_frac must lie in [0, 1)".into()));
        }
        if self.log_every == 0 {
            return Err(Error::InvalidArgument("log_every must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WdpConfig {
    pub lambda: f64,
    pub gamma: f64,
    pub window_width: f64,
    /// Draw the matching minibatch with equal counts per group.
    pub group_resample: bool,
}

impl Default for WdpConfig {
    fn default() -> Self {
        Self {
            lambda: 3.0,
            gamma: 0.2,
            window_width: 0.5,
            group_resample: true,
        }
    }
}

impl WdpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) || !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::InvalidArgument("lambda and gamma must be non-negative".into()));
        }
        if !(self.window_width > 0.0 && self.window_width <= 1.0) {
            return Err(Error::InvalidArgument("window_width must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// One row of the learning curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub ce_loss: f64,
    pub wdp_loss: f64,
    pub group_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub curve: Vec<CurvePoint>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let ng = self.curve.first().map_or(0, |p| p.group_losses.len());
        let mut s = String::from("step,ce_loss,wdp_loss");
        for a in 0..ng {
            s.push_str(&format!(",group_loss_{a}"));
        }
        s.push('\n');
        for p in &self.curve {
            s.push_str(&format!("{},{},{}", p.step, p.ce_loss, p.wdp_loss));
            for g in &p.group_losses {
                s.push_str(&format!(",{g}"));
            }
            s.push('\n');
        }
        s
    }
}

/// A noisy training example.
#[derive(Debug, Clone)]
pub struct NoisyExample {
    pub x: Vec<f64>,
    pub level: NoiseLevel,
    pub condition: usize,
    pub group: usize,
}

/// Per-condition matching sets, `groups[a]` holding equal counts.
#[derive(Debug, Clone)]
pub struct MatchingSet {
    pub condition: usize,
    pub groups: Vec<Vec<NoisyExample>>,
}

/// Everything one optimizer step sees.
#[derive(Debug, Clone, Default)]
pub struct Minibatch {
    pub ce: Vec<NoisyExample>,
    pub matching: Vec<MatchingSet>,
}

/// Loss terms and gradient of the training objective on one minibatch.
#[derive(Debug, Clone)]
pub struct ObjectiveValue {
    pub loss: f64,
    pub ce_loss: f64,
    pub wdp_loss: f64,
    pub group_losses: Vec<f64>,
    pub grad: Vec<f64>,
    /// Plans per matching set, then per unordered group pair `(a < b)`.
    pub plans: Vec<Vec<TransportPlan>>,
}

fn bce(logit: f64, y: usize) -> f64 {
    // -log sigmoid(±logit), stable
    let z = if y == 1 { logit } else { -logit };
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

/// Training objective at `params`:
/// `Σ_a q_a L_a` (with `group_weights = q`) or the plain batch mean when
/// `group_weights` is `None`, plus `λ Σ_y Σ_{a<b} WDP`. Plans are solved
/// afresh unless `fixed_plans` is supplied; either way they enter the
/// gradient as constants.
pub fn objective(
    clf: &NoisyClassifier,
    params: &[f64],
    batch: &Minibatch,
    n_groups: usize,
    group_weights: Option<&[f64]>,
    wdp: &WdpConfig,
    fixed_plans: Option<&[Vec<TransportPlan>]>,
) -> Result<ObjectiveValue> {
    if let Some(e) = batch.ce.iter().find(|e| e.group >= n_groups) {
        return Err(Error::InvalidArgument(format!("group {} out of range", e.group)));
    }
    if group_weights.is_some_and(|q| q.len() != n_groups) {
        return Err(Error::DimensionMismatch {
            expected: n_groups,
            got: group_weights.map_or(0, <[f64]>::len),
        });
    }
    let mut grad = vec![0.0; params.len()];
    let mut group_sum = vec![0.0; n_groups];
    let mut group_n = vec![0usize; n_groups];
    let mut traces = Vec::with_capacity(batch.ce.len());
    for e in &batch.ce {
        let tr = clf.forward_with(params, &e.x, e.level);
        group_sum[e.group] += bce(tr.logit, e.condition);
        group_n[e.group] += 1;
        traces.push(tr);
    }
    let group_losses: Vec<f64> = group_sum
        .iter()
        .zip(&group_n)
        .map(|(s, &n)| if n > 0 { s / n as f64 } else { 0.0 })
        .collect();
    let ce_loss = group_sum.iter().sum::<f64>() / batch.ce.len().max(1) as f64;
    let data_loss = match group_weights {
        Some(q) => q.iter().zip(&group_losses).map(|(q, l)| q * l).sum(),
        None => ce_loss,
    };
    for (e, tr) in batch.ce.iter().zip(&traces) {
        let weight = match group_weights {
            Some(q) => q[e.group] / group_n[e.group] as f64,
            None => 1.0 / batch.ce.len() as f64,
        };
        let p = sigmoid(tr.logit);
        let target = if e.condition == 1 { 1.0 } else { 0.0 };
        clf.backward_with(params, tr, weight * (p - target), Some(&mut grad), None);
    }

    let mut wdp_loss = 0.0;
    let mut plans = Vec::with_capacity(batch.matching.len());
    if wdp.lambda > 0.0 {
        for (si, set) in batch.matching.iter().enumerate() {
            let mut outs = Vec::with_capacity(set.groups.len());
            let mut set_traces = Vec::with_capacity(set.groups.len());
            for g in &set.groups {
                let mut o = Vec::with_capacity(g.len());
                let mut tv = Vec::with_capacity(g.len());
                for e in g {
                    let tr = clf.forward_with(params, &e.x, e.level);
                    let p1 = sigmoid(tr.logit);
                    o.push(WdpSample {
                        prob: if set.condition == 1 { p1 } else { 1.0 - p1 },
                        t: e.level.t,
                    });
                    tv.push(tr);
                }
                outs.push(o);
                set_traces.push(tv);
            }
            let mut set_plans = Vec::new();
            let mut pair = 0;
            for a in 0..outs.len() {
                for b in a + 1..outs.len() {
                    let plan = match fixed_plans {
                        Some(fp) => fp[si][pair].clone(),
                        None => wdp_minibatch_loss(&outs[a], &outs[b], wdp.gamma, &clf.schedule)?.1,
                    };
                    wdp_loss += plan_loss(&outs[a], &outs[b], &plan);
                    let (du, dv) = wdp_subgradient(&outs[a], &outs[b], &plan);
                    for (side, d) in [(a, du), (b, dv)] {
                        for (k, dk) in d.into_iter().enumerate() {
                            if dk == 0.0 {
                                continue;
                            }
                            let tr = &set_traces[side][k];
                            let p1 = sigmoid(tr.logit);
                            // d prob / d logit, with the sign flip for condition 0
                            let dp = p1 * (1.0 - p1) * if set.condition == 1 { 1.0 } else { -1.0 };
                            clf.backward_with(params, tr, wdp.lambda * dk * dp, Some(&mut grad), None);
                        }
                    }
                    set_plans.push(plan);
                    pair += 1;
                }
            }
            plans.push(set_plans);
        }
    }
    Ok(ObjectiveValue {
        loss: data_loss + wdp.lambda * wdp_loss,
        ce_loss,
        wdp_loss,
        group_losses,
        grad,
        plans,
    })
}

/// Indices of a dataset by group and by `(condition, group)` cell.
struct Index {
    by_group: Vec<Vec<usize>>,
    by_cell: Vec<Vec<Vec<usize>>>,
}

impl Index {
    fn new(data: &Dataset, n_groups: usize) -> Self {
        let mut by_group = vec![Vec::new(); n_groups];
        let mut by_cell = vec![vec![Vec::new(); n_groups]; N_CONDITIONS];
        for i in 0..data.len() {
            by_group[data.group[i]].push(i);
            by_cell[data.condition[i]][data.group[i]].push(i);
        }
        Self { by_group, by_cell }
    }
}

/// Window centers: logSNR from a normal at 0 truncated to the schedule range.
fn draw_window<R: Rng + ?Sized>(schedule: &NoiseSchedule, width: f64, rng: &mut R) -> (f64, f64) {
    let (lo, hi) = schedule.log_snr_range();
    let center_snr = loop {
        let v: f64 = CENTER_LOG_SNR_SD * rng.sample::<f64, _>(StandardNormal);
        if (lo..=hi).contains(&v) {
            break v;
        }
    };
    let center = schedule.time_of_sigma((-0.5 * center_snr).exp());
    let start = (center - 0.5 * width).clamp(T_FLOOR, 1.0 - width.min(1.0 - T_FLOOR));
    (start, (start + width).min(1.0))
}

fn noisy<R: Rng + ?Sized>(
    data: &Dataset,
    i: usize,
    window: (f64, f64),
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> NoisyExample {
    let t = rng.random_range(window.0..=window.1);
    let level = schedule.level_at(t);
    let x = data.x[i]
        .iter()
        .map(|v| v + level.sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    NoisyExample {
        x,
        level,
        condition: data.condition[i],
        group: data.group[i],
    }
}

/// Trains a noisy classifier with SGD and momentum.
///
/// Deterministic in `(dataset, schedule, cfg, wdp)`. With `method = wdp`
/// and `λ = 0` the run is step-for-step identical to `method = ce`.
pub fn train(
    dataset: &Dataset,
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    wdp: &WdpConfig,
) -> Result<(NoisyClassifier, TrainReport)> {
    cfg.validate()?;
    wdp.validate()?;
    schedule.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    let n_groups = dataset.group.iter().max().map_or(0, |g| g + 1).max(2);
    let index = Index::new(dataset, n_groups);
    for y in 0..N_CONDITIONS {
        if index.by_cell[y].iter().all(Vec::is_empty) {
            return Err(Error::InvalidArgument(format!("training set lacks condition {y}")));
        }
    }
    let needs_groups = cfg.method != TrainMethod::Ce;
    if needs_groups && index.by_group.iter().any(Vec::is_empty) {
        return Err(Error::InvalidArgument("every group must be present for group-aware training".into()));
    }
    let use_wdp = cfg.method == TrainMethod::Wdp && wdp.lambda > 0.0;
    if use_wdp {
        for y in 0..N_CONDITIONS {
            if index.by_cell[y].iter().any(Vec::is_empty) {
                return Err(Error::InvalidArgument(format!("condition {y} lacks a group for matching")));
            }
        }
    }

    let arch = Architecture::new(dataset.dim(), cfg.hidden)?;
    let mut rng = chain_rng(cfg.seed, 0);
    let mut clf = NoisyClassifier::init(arch, *schedule, &mut rng)?;
    let mut velocity = vec![0.0; clf.params.len()];
    let mut q = vec![1.0 / n_groups as f64; n_groups];
    let warmup = (cfg.warmup_frac * cfg.steps as f64).ceil() as usize;
    let per_group = (cfg.batch / (2 * n_groups)).max(2);
    let all: Vec<usize> = (0..dataset.len()).collect();
    let mut curve = Vec::new();

    for step in 0..cfg.steps {
        let window = draw_window(schedule, wdp.window_width, &mut rng);
        let mut batch = Minibatch::default();
        for _ in 0..cfg.batch {
            let i = match cfg.method {
                TrainMethod::Rw => {
                    let g = rng.random_range(0..n_groups);
                    *index.by_group[g].choose(&mut rng).expect("non-empty group")
                }
                _ => *all.choose(&mut rng).expect("non-empty data"),
            };
            batch.ce.push(noisy(dataset, i, window, schedule, &mut rng));
        }
        if use_wdp && step >= warmup {
            for y in 0..N_CONDITIONS {
                let groups: Vec<Vec<NoisyExample>> = if wdp.group_resample {
                    (0..n_groups)
                        .map(|a| {
                            (0..per_group)
                                .map(|_| {
                                    let i = *index.by_cell[y][a].choose(&mut rng).expect("non-empty cell");
                                    noisy(dataset, i, window, schedule, &mut rng)
                                })
                                .collect()
                        })
                        .collect()
                } else {
                    // natural frequencies, truncated to the rarest group's count
                    let pool: Vec<usize> = index.by_cell[y].iter().flatten().copied().collect();
                    let mut groups = vec![Vec::new(); n_groups];
                    for _ in 0..per_group * n_groups {
                        let i = *pool.choose(&mut rng).expect("non-empty condition");
                        groups[dataset.group[i]].push(noisy(dataset, i, window, schedule, &mut rng));
                    }
                    let m = groups.iter().map(Vec::len).min().unwrap_or(0);
                    groups.iter_mut().for_each(|g| g.truncate(m));
                    groups
                };
                if groups[0].is_empty() {
                    continue;
                }
                batch.matching.push(MatchingSet { condition: y, groups });
            }
        }
        let weights = (cfg.method == TrainMethod::Gdro).then_some(&q[..]);
        let mut obj = objective(&clf, &clf.params, &batch, n_groups, weights, wdp, None)?;
        if !obj.loss.is_finite() || obj.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::TrainingDiverged {
                step,
                lr: cfg.lr,
                detail: format!("loss = {}", obj.loss),
            });
        }
        if cfg.method == TrainMethod::Gdro {
            // exponential weights on the per-group losses, for the next step
            for (qa, la) in q.iter_mut().zip(&obj.group_losses) {
                *qa *= (GDRO_STEP * la).exp();
            }
            let s: f64 = q.iter().sum();
            q.iter_mut().for_each(|v| *v /= s);
        }
        for ((p, v), g) in clf.params.iter_mut().zip(velocity.iter_mut()).zip(&obj.grad) {
            *v = MOMENTUM * *v + g;
            *p -= cfg.lr * *v;
        }
        if clf.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::TrainingDiverged {
                step,
                lr: cfg.lr,
                detail: "non-finite parameters after update".into(),
            });
        }
        if step % cfg.log_every == 0 || step + 1 == cfg.steps {
            curve.push(CurvePoint {
                step,
                ce_loss: obj.ce_loss,
                wdp_loss: obj.wdp_loss,
                group_losses: std::mem::take(&mut obj.group_losses),
            });
        }
    }
    Ok((clf, TrainReport { curve }))
}
