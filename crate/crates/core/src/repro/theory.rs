use rand::Rng;

use crate::diffusion::{chain_rng, guided_score, reverse_sde_endpoints, NoiseSchedule, SamplerConfig, SdeInit};
use crate::error::Result;
use crate::guidance::{stayfair_guided, W_GRID_SD15};
use crate::metrics::{decompose_bias, measure_sweep, BiasReport, Seeding, SweepEntry, SweepResult, SweepSetup};
use crate::numerics::{mean_and_se, sigmoid, GaussianParams, Matrix, Vector};
use crate::theory::{check_ratio_invariance, group_reweighting, EndpointTiltPotential, GaussianGroupModel, LogAffinePotential, CG_W_GRID};

use super::stayfair::{embedding_world, focus_prompt};
use super::Verdict;

const SEED: u64 = 0x7e0;

/// Ten noise-level bin centres in `(0, 1)`.
pub fn noise_bins() -> Vec<f64> {
    (0..10).map(|i| 0.05 + 0.1 * i as f64).collect()
}

/// Three groups with a shared covariance whose eigenvector is the potential
/// direction; group means differ only orthogonally to it.
pub fn parity_model() -> Result<(GaussianGroupModel, LogAffinePotential)> {
    let cov = Matrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 0.6, 0.2, 0.0, 0.2, 0.9]);
    let g = |m: [f64; 3]| GaussianParams::new(Vector::from_row_slice(&m), cov.clone());
    let model = GaussianGroupModel::new(vec![
        (0.2, g([0.0, -1.0, 0.5])?),
        (0.5, g([0.0, 1.0, 0.0])?),
        (0.3, g([0.0, 0.3, -1.2])?),
    ])?;
    Ok((model, LogAffinePotential::new(vec![0.7, 0.0, 0.0], 0.1)?))
}

pub(crate) fn target_ratio_invariance() -> Result<Verdict> {
    let mut v = Verdict::new();
    let schedule = NoiseSchedule::default();
    let (model, pot) = parity_model()?;
    let rep = check_ratio_invariance(&model, &pot, &CG_W_GRID, &noise_bins(), &schedule)?;
    v.check(
        rep.max_deviation < 1e-9,
        format!("parity construction: max ratio deviation {:.2e} over 8 scales x 10 noise levels", rep.max_deviation),
    );
    // contrast: tilt the potential toward the group-mean axis
    let skew = LogAffinePotential::new(vec![0.7, 0.4, 0.0], 0.1)?;
    let contrast = check_ratio_invariance(&model, &skew, &CG_W_GRID, &noise_bins(), &schedule)?;
    v.note(format!("contrast without parity: max deviation {:.3}", contrast.max_deviation));
    Ok(v)
}

pub struct TransferCase {
    pub name: &'static str,
    pub model: GaussianGroupModel,
    pub potential: LogAffinePotential,
}

/// Parity case (equal covariances, potential along a shared eigenvector,
/// means offset orthogonally) and a one-dimensional non-parity case whose
/// group-1 share is `sigmoid(w)`.
pub fn transfer_cases() -> Result<Vec<TransferCase>> {
    Ok(vec![
        TransferCase {
            name: "parity",
            model: GaussianGroupModel::new(vec![
                (0.3, GaussianParams::diagonal(&[-1.0, 0.0], &[1.0, 0.5])?),
                (0.7, GaussianParams::diagonal(&[1.0, 0.0], &[1.0, 0.5])?),
            ])?,
            potential: LogAffinePotential::new(vec![0.0, 1.0], 0.0)?,
        },
        TransferCase {
            name: "non-parity",
            model: GaussianGroupModel::new(vec![
                (0.5, GaussianParams::isotropic(&[0.0], 1.0)?),
                (0.5, GaussianParams::isotropic(&[1.0], 1.0)?),
            ])?,
            potential: LogAffinePotential::new(vec![1.0], 0.0)?,
        },
    ])
}

/// Sampler for the transfer check; fine enough that discretization bias
/// stays well inside the Monte-Carlo interval at 10⁵ paths.
pub const TRANSFER_STEPS: usize = 1024;
pub const TRANSFER_PATHS: usize = 100_000;

/// Soft group-1 share and its standard error among `n` guided endpoints.
pub fn guided_group_share(case: &TransferCase, w: f64, n: usize, steps: usize, seed: u64) -> Result<(f64, f64)> {
    let schedule = NoiseSchedule::default();
    let mix = case.model.mixture()?;
    let (mean, trace) = case.model.moments()?;
    let init = SdeInit::from_data(&mean, trace, &schedule);
    let cfg = SamplerConfig::sde().with_steps(steps);
    let xs = if w == 0.0 {
        reverse_sde_endpoints(&mix, &schedule, &cfg, &init, n, seed)?
    } else {
        let tilt = EndpointTiltPotential::new(&case.model, &case.potential, w)?;
        reverse_sde_endpoints(&guided_score(mix.clone(), tilt, w), &schedule, &cfg, &init, n, seed)?
    };
    let post: Vec<f64> = xs.iter().map(|x| mix.responsibilities(x, 0.0)[1]).collect();
    Ok(mean_and_se(&post))
}

pub(crate) fn sampler_transfer() -> Result<Verdict> {
    let mut v = Verdict::new();
    for case in transfer_cases()? {
        let mut share_at_zero = None;
        for w in [0.0, 1.0, 2.0] {
            let want = group_reweighting(&case.model, &case.potential, w)?[1];
            let (q, se) = guided_group_share(&case, w, TRANSFER_PATHS, TRANSFER_STEPS, SEED)?;
            let z = (q - want) / se;
            v.check(
                z.abs() <= 3.0,
                format!("{} w={w}: share {q:.5} vs closed form {want:.5} (se {se:.5}, z {z:+.2})", case.name),
            );
            let q0 = *share_at_zero.get_or_insert(q);
            if case.name == "parity" {
                v.note(format!("{} w={w}: guidance bias {:+.5}", case.name, q - q0));
            }
        }
    }
    v.note(format!("non-parity closed form at w=1 is sigmoid(1) = {:.4}", sigmoid(1.0)));
    Ok(v)
}

fn identity_gap(report: &BiasReport, sweep: &SweepResult) -> (f64, f64) {
    let mut stored = 0.0f64;
    let mut direct = 0.0f64;
    for (e, s) in report.entries.iter().zip(&sweep.entries) {
        for a in 0..e.ratio.len() {
            stored = stored.max((e.total_bias[a] - (e.guidance_bias[a] + e.model_bias[a])).abs());
            direct = direct.max((e.total_bias[a] - (s.group_ratio[a] - report.target[a])).abs());
        }
    }
    (stored, direct)
}

pub(crate) fn decomposition_identity() -> Result<Verdict> {
    let mut v = Verdict::new();
    let mut sweeps: Vec<(String, SweepResult, Vec<f64>, f64)> = Vec::new();
    let mut rng = chain_rng(SEED, 3);
    for k in 0..200 {
        let n_groups = rng.random_range(2..=4);
        let n_w = rng.random_range(2..=8);
        let entries = (0..n_w)
            .map(|i| {
                let raw: Vec<f64> = (0..n_groups).map(|_| rng.random::<f64>() + 1e-3).collect();
                let s: f64 = raw.iter().sum();
                SweepEntry {
                    w: i as f64 * 1.5,
                    n_samples: 100,
                    group_ratio: raw.iter().map(|r| r / s).collect(),
                    ratio_ci: vec![(0.0, 1.0); n_groups],
                    ratio_se: vec![0.0; n_groups],
                }
            })
            .collect();
        let target = vec![1.0 / n_groups as f64; n_groups];
        let w_ref = rng.random_range(0.0..(n_w - 1) as f64 * 1.5);
        sweeps.push((format!("random {k}"), SweepResult { entries }, target, w_ref));
    }
    let (frame, map) = embedding_world()?;
    let prompt = focus_prompt(&frame)?;
    let schedule = NoiseSchedule::default();
    let setup = SweepSetup {
        schedule,
        sampler: SamplerConfig::sde().with_steps(128),
        init: crate::alphaselect::prompt_init(&map, &prompt, &schedule)?,
        n_per_w: 500,
        seed: SEED,
        seeding: Seeding::Disjoint,
    };
    for alpha in [0.0, 10.0] {
        let sweep = measure_sweep(
            |w| stayfair_guided(&map, &prompt, alpha, w),
            |x| map.group_posterior(x, &prompt),
            &W_GRID_SD15,
            &setup,
        )?;
        sweeps.push((format!("null shift {alpha}"), sweep, vec![0.5, 0.5], W_GRID_SD15[0]));
    }
    let mut worst_stored = 0.0f64;
    let mut worst_direct = 0.0f64;
    let mut n_entries = 0;
    for (_, sweep, target, w_ref) in &sweeps {
        let report = decompose_bias(sweep, target, *w_ref)?;
        let (s, d) = identity_gap(&report, sweep);
        worst_stored = worst_stored.max(s);
        worst_direct = worst_direct.max(d);
        n_entries += report.entries.len();
    }
    v.check(
        worst_stored <= 1e-15 && worst_direct <= 1e-15,
        format!(
            "{} sweeps, {n_entries} entries: |total - (guidance + model)| <= {worst_stored:.1e}, |total - (ratio - target)| <= {worst_direct:.1e}",
            sweeps.len()
        ),
    );
    Ok(v)
}
