use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{chain_rng, reverse_sde_endpoint, SamplerConfig, SdeInit};
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::guidance::stayfair_guided;
use crate::metrics::Z_95;
use crate::numerics::mean_and_se;
use crate::world::{EmbeddingWorldMap, PromptEmbedding, TRACKED_GROUP};

/// Evenly spaced shift grid `{lo, lo + step, …, hi}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaGrid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl AlphaGrid {
    pub fn new(lo: f64, hi: f64, step: f64) -> Result<Self> {
        let g = Self { lo, hi, step };
        g.validate()?;
        Ok(g)
    }

    /// `[-15, 15]` in steps of 2.5.
    pub fn sd15() -> Self {
        Self { lo: -15.0, hi: 15.0, step: 2.5 }
    }

    /// `[-10, 5]` in steps of 2.5.
    pub fn sd3() -> Self {
        Self { lo: -10.0, hi: 5.0, step: 2.5 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(Error::InvalidArgument("alpha grid needs lo < hi".into()));
        }
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(Error::InvalidArgument("alpha grid step must be positive".into()));
        }
        let n = (self.hi - self.lo) / self.step;
        if (n - n.round()).abs() > 1e-9 {
            return Err(Error::InvalidArgument("alpha grid span must be a multiple of the step".into()));
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<f64> {
        let n = ((self.hi - self.lo) / self.step).round() as usize;
        (0..=n).map(|k| self.lo + k as f64 * self.step).collect()
    }

    /// Nearest grid point; exact midpoints go to the smaller `|α|`.
    pub fn snap(&self, alpha: f64) -> f64 {
        let pts = self.points();
        let mut best = pts[0];
        for &p in &pts {
            let (d, db) = ((p - alpha).abs(), (best - alpha).abs());
            if d < db - 1e-12 || ((d - db).abs() <= 1e-12 && p.abs() < best.abs()) {
                best = p;
            }
        }
        best
    }
}

/// One evaluated point of the bias curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub alpha: f64,
    pub bias: f64,
    /// 95% half-width of the bias estimate.
    pub half_width: f64,
}

/// Result of a sign-change search over a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignChange {
    pub alpha_star: f64,
    /// Evaluated points sorted by `α`.
    pub curve: Vec<CurvePoint>,
    /// No sign change on the grid; `alpha_star` is the endpoint with the smaller `|bias|`.
    pub saturated: bool,
    /// Bisection saw a non-monotone curve and the full grid was scanned.
    pub fallback: bool,
    /// Evaluated point with the smallest `|bias|`.
    pub flattest_alpha: f64,
}

/// Bias estimates this small are rounding residue and count as zero.
const ZERO_BIAS: f64 = 1e-12;

fn sign(b: f64) -> f64 {
    if b.abs() <= ZERO_BIAS {
        0.0
    } else {
        b.signum()
    }
}

fn sign_change_pick(curve: &[CurvePoint]) -> Option<f64> {
    let mut best: Option<f64> = None;
    let mut consider = |a: f64| {
        if best.is_none_or(|b| a.abs() < b.abs()) {
            best = Some(a);
        }
    };
    for p in curve {
        if sign(p.bias) == 0.0 {
            consider(p.alpha);
        }
    }
    for w in curve.windows(2) {
        if sign(w[0].bias) * sign(w[1].bias) < 0.0 {
            let pick = if w[1].alpha.abs() < w[0].alpha.abs() { w[1].alpha } else { w[0].alpha };
            consider(pick);
        }
    }
    best
}

fn monotone_violation(curve: &[CurvePoint]) -> bool {
    let (first, last) = (curve[0], curve[curve.len() - 1]);
    let dir = (last.bias - first.bias).signum();
    curve.windows(2).any(|w| {
        let step = (w[1].bias - w[0].bias) * dir;
        let tol = (w[0].half_width.powi(2) + w[1].half_width.powi(2)).sqrt();
        step < -tol
    })
}

/// Smallest-`|α|` sign change of a monotone bias curve, found by bisection
/// over grid indices. Falls back to a full scan (flagged) when the points
/// seen contradict monotonicity beyond their confidence half-widths.
pub fn search_sign_change<F>(grid: &AlphaGrid, mut eval: F) -> Result<SignChange>
where
    F: FnMut(f64) -> Result<(f64, f64)>,
{
    grid.validate()?;
    let pts = grid.points();
    let mut seen: Vec<Option<CurvePoint>> = vec![None; pts.len()];
    let mut at = |i: usize, seen: &mut Vec<Option<CurvePoint>>| -> Result<CurvePoint> {
        if let Some(p) = seen[i] {
            return Ok(p);
        }
        let (bias, half_width) = eval(pts[i])?;
        let p = CurvePoint { alpha: pts[i], bias, half_width };
        seen[i] = Some(p);
        Ok(p)
    };
    let n = pts.len();
    let lo = at(0, &mut seen)?;
    let hi = at(n - 1, &mut seen)?;
    let collect = |seen: &[Option<CurvePoint>]| seen.iter().flatten().copied().collect::<Vec<_>>();
    let finish = |curve: Vec<CurvePoint>, alpha_star: f64, saturated: bool, fallback: bool| {
        let flattest_alpha = curve
            .iter()
            .min_by(|a, b| a.bias.abs().total_cmp(&b.bias.abs()).then(a.alpha.abs().total_cmp(&b.alpha.abs())))
            .map_or(alpha_star, |p| p.alpha);
        SignChange { alpha_star, curve, saturated, fallback, flattest_alpha }
    };

    if sign(lo.bias) * sign(hi.bias) > 0.0 {
        let curve = collect(&seen);
        let a = if lo.bias.abs() <= hi.bias.abs() { lo.alpha } else { hi.alpha };
        return Ok(finish(curve, a, true, false));
    }
    // invariant: bias(l) and bias(r) have opposite signs (or one is zero)
    let (mut l, mut r) = (0, n - 1);
    while r - l > 1 {
        let m = (l + r) / 2;
        let pm = at(m, &mut seen)?;
        let pl = seen[l].expect("evaluated");
        if sign(pm.bias) == 0.0 {
            break;
        }
        if sign(pl.bias) * sign(pm.bias) < 0.0 || sign(pl.bias) == 0.0 {
            r = m;
        } else {
            l = m;
        }
    }
    // the zero (if any) may sit on either side; make sure both neighbours of
    // the bracket are known so the smaller-|α| rule has what it needs
    let _ = at(l, &mut seen)?;
    let _ = at(r, &mut seen)?;
    let curve = collect(&seen);
    if !monotone_violation(&curve) {
        let a = sign_change_pick(&curve).expect("bracket holds a sign change");
        return Ok(finish(curve, a, false, false));
    }
    for i in 0..n {
        at(i, &mut seen)?;
    }
    let curve = collect(&seen);
    match sign_change_pick(&curve) {
        Some(a) => Ok(finish(curve, a, false, true)),
        None => {
            let a = curve
                .iter()
                .min_by(|a, b| a.bias.abs().total_cmp(&b.bias.abs()))
                .map_or(0.0, |p| p.alpha);
            Ok(finish(curve, a, true, true))
        }
    }
}

/// Sampler settings for bias-curve estimation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasProbe {
    pub schedule: NoiseSchedule,
    pub sampler: SamplerConfig,
    pub w_low: f64,
    pub w_high: f64,
    pub n_per_point: usize,
    pub seed: u64,
}

impl BiasProbe {
    pub fn new(w_low: f64, w_high: f64, n_per_point: usize, seed: u64) -> Self {
        Self {
            schedule: NoiseSchedule::default(),
            sampler: SamplerConfig::sde(),
            w_low,
            w_high,
            n_per_point,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w_low < self.w_high) {
            return Err(Error::InvalidArgument("w_low must be below w_high".into()));
        }
        if self.n_per_point < 2 {
            return Err(Error::InvalidArgument("need at least two samples per point".into()));
        }
        Ok(())
    }
}

/// Initial law matched to the prompt's unguided model.
pub fn prompt_init(map: &EmbeddingWorldMap, prompt: &PromptEmbedding, schedule: &NoiseSchedule) -> Result<SdeInit> {
    let mix = map.mixture(prompt)?;
    let params = map.group_params(prompt)?;
    let w = mix.weights();
    let d = map.data_dim();
    let mut mean = vec![0.0; d];
    for (wa, p) in w.iter().zip(&params) {
        for (m, v) in mean.iter_mut().zip(p.mean().iter()) {
            *m += wa * v;
        }
    }
    let mut trace = 0.0;
    for (wa, p) in w.iter().zip(&params) {
        let dev: f64 = p.mean().iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum();
        trace += wa * (p.cov().trace() + dev);
    }
    Ok(SdeInit::from_data(&mean, trace, schedule))
}

/// `Bias_G = Q^{w_high} − Q^{w_low}` of the tracked group under StayFair
/// with shift `alpha`, and its 95% half-width. Both scales and every `α`
/// share the chain streams, so the difference is paired path by path.
pub fn stayfair_bias(
    map: &EmbeddingWorldMap,
    prompt: &PromptEmbedding,
    alpha: f64,
    probe: &BiasProbe,
) -> Result<(f64, f64)> {
    probe.validate()?;
    let init = prompt_init(map, prompt, &probe.schedule)?;
    let low = stayfair_guided(map, prompt, alpha, probe.w_low)?;
    let high = stayfair_guided(map, prompt, alpha, probe.w_high)?;
    let diffs = (0..probe.n_per_point as u64)
        .into_par_iter()
        .map(|i| {
            let mut r1 = chain_rng(probe.seed, i);
            let mut r2 = chain_rng(probe.seed, i);
            let a = reverse_sde_endpoint(&low, &probe.schedule, &probe.sampler, &init, &mut r1)?;
            let b = reverse_sde_endpoint(&high, &probe.schedule, &probe.sampler, &init, &mut r2)?;
            let qa = map.group_posterior(&a, prompt)?[TRACKED_GROUP];
            let qb = map.group_posterior(&b, prompt)?[TRACKED_GROUP];
            Ok(qb - qa)
        })
        .collect::<Result<Vec<f64>>>()?;
    let (m, se) = mean_and_se(&diffs);
    Ok((m, Z_95 * se))
}

/// Per-prompt outcome of the oracle search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaRecord {
    pub prompt: PromptEmbedding,
    pub alpha_star: f64,
    pub bias_curve: Vec<CurvePoint>,
    /// `(⟨e, ĝ⟩, |⟨e, ĝ⟩|)` under the direction used for the features.
    pub features: (f64, f64),
    pub saturated: bool,
    pub fallback: bool,
    pub flattest_alpha: f64,
}

/// Oracle `α*` for one prompt: sign change of the StayFair two-scale bias.
/// Features use `direction` (typically an estimated attribute direction).
pub fn search_alpha_star(
    map: &EmbeddingWorldMap,
    prompt: &PromptEmbedding,
    direction: &[f64],
    grid: &AlphaGrid,
    probe: &BiasProbe,
) -> Result<AlphaRecord> {
    let sc = search_sign_change(grid, |a| stayfair_bias(map, prompt, a, probe))?;
    let s = crate::numerics::dot(&prompt.e, direction);
    Ok(AlphaRecord {
        prompt: prompt.clone(),
        alpha_star: sc.alpha_star,
        bias_curve: sc.curve,
        features: (s, s.abs()),
        saturated: sc.saturated,
        fallback: sc.fallback,
        flattest_alpha: sc.flattest_alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(values: &'static [(f64, f64)]) -> impl FnMut(f64) -> Result<(f64, f64)> {
        move |a| {
            Ok(values
                .iter()
                .find(|(x, _)| (x - a).abs() < 1e-12)
                .map(|(_, b)| (*b, 0.0))
                .expect("grid point"))
        }
    }

    #[test]
    fn grid_points_and_snapping() {
        let g = AlphaGrid::sd15();
        assert_eq!(g.points().len(), 13);
        assert_eq!(g.snap(1.26), 2.5);
        assert_eq!(g.snap(1.25), 0.0);
        assert_eq!(g.snap(-1.25), 0.0);
        assert_eq!(g.snap(-3.75), -2.5);
        assert_eq!(g.snap(40.0), 15.0);
        assert_eq!(AlphaGrid::sd3().points(), vec![-10.0, -7.5, -5.0, -2.5, 0.0, 2.5, 5.0]);
        assert!(AlphaGrid::new(0.0, 1.0, 0.3).is_err());
    }

    #[test]
    fn smallest_alpha_past_the_sign_change() {
        let g = AlphaGrid::new(-5.0, 2.5, 2.5).unwrap();
        let r = search_sign_change(&g, curve(&[(-5.0, -0.2), (-2.5, -0.1), (0.0, 0.05), (2.5, 0.15)])).unwrap();
        assert_eq!(r.alpha_star, 0.0);
        assert!(!r.saturated && !r.fallback);
    }

    #[test]
    fn saturation_is_flagged() {
        let g = AlphaGrid::new(-5.0, 2.5, 2.5).unwrap();
        let r = search_sign_change(&g, curve(&[(-5.0, 0.3), (-2.5, 0.2), (0.0, 0.1), (2.5, 0.05)])).unwrap();
        assert!(r.saturated);
        assert_eq!(r.alpha_star, 2.5);
    }

    #[test]
    fn bisection_agrees_with_full_scan_on_monotone_curves() {
        let g = AlphaGrid::sd15();
        for k in 0..200 {
            let root = -16.0 + 0.16 * k as f64;
            let slope = if k % 2 == 0 { -0.03 } else { 0.02 };
            let f = |a: f64| Ok((slope * (a - root), 0.0));
            let fast = search_sign_change(&g, f).unwrap();
            let full: Vec<CurvePoint> = g
                .points()
                .into_iter()
                .map(|a| CurvePoint { alpha: a, bias: slope * (a - root), half_width: 0.0 })
                .collect();
            match sign_change_pick(&full) {
                Some(a) => assert_eq!(fast.alpha_star, a, "root {root}"),
                None => assert!(fast.saturated),
            }
            assert!(!fast.fallback);
            assert!(fast.curve.len() <= 6);
        }
    }

    #[test]
    fn non_monotone_curve_falls_back() {
        let g = AlphaGrid::new(-5.0, 5.0, 2.5).unwrap();
        let r = search_sign_change(
            &g,
            curve(&[(-5.0, 0.3), (-2.5, 0.2), (0.0, 0.1), (2.5, 0.35), (5.0, -0.3)]),
        )
        .unwrap();
        assert!(r.fallback);
        assert_eq!(r.curve.len(), 5);
        assert_eq!(r.alpha_star, 2.5);
    }
}
