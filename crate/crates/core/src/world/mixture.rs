use nalgebra::Cholesky;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffusion::NoiseLevel;
use crate::error::{Error, Result};
use crate::numerics::{GaussianMixture, GaussianParams, Vector};

/// Binary conditions: `y ∈ {0, 1}`.
pub const N_CONDITIONS: usize = 2;

/// The group whose ratio is tracked in summaries and plots.
pub const TRACKED_GROUP: usize = 1;

/// One Gaussian cell of the world, tagged with its labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    pub group: usize,
    pub condition: usize,
    pub weight: f64,
    pub params: GaussianParams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WorldSpec {
    n_groups: usize,
    components: Vec<Component>,
    /// `target[y][a] = T(a | y)`.
    target: Vec<Vec<f64>>,
}

/// Labeled draws from a world.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub x: Vec<Vec<f64>>,
    pub group: Vec<usize>,
    pub condition: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }
}

/// Finite mixture of labeled Gaussian cells with a per-condition target
/// group distribution. Immutable once built; every sub-mixture used for
/// scoring is pre-factored at construction.
#[derive(Debug, Clone)]
pub struct MixtureWorld {
    spec: WorldSpec,
    marginal: GaussianMixture,
    by_condition: Vec<Option<GaussianMixture>>,
    /// Indexed `y * n_groups + a`.
    by_cell: Vec<Option<GaussianMixture>>,
    chol: Vec<Vec<f64>>,
}

impl Serialize for MixtureWorld {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.spec.serialize(s)
    }
}

impl<'de> Deserialize<'de> for MixtureWorld {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let spec = WorldSpec::deserialize(d)?;
        Self::new(spec.n_groups, spec.components, spec.target).map_err(serde::de::Error::custom)
    }
}

fn sub_mixture<'a>(comps: impl Iterator<Item = &'a Component>) -> Result<Option<GaussianMixture>> {
    let (w, p): (Vec<f64>, Vec<GaussianParams>) =
        comps.map(|c| (c.weight, c.params.clone())).unzip();
    if w.is_empty() {
        Ok(None)
    } else {
        GaussianMixture::new(&w, &p).map(Some)
    }
}

impl MixtureWorld {
    /// Weights are normalized to sum to one; each `target[y]` must be a
    /// distribution over the `n_groups` groups.
    pub fn new(n_groups: usize, mut components: Vec<Component>, target: Vec<Vec<f64>>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::EmptyInput("world components"));
        }
        if n_groups < 2 {
            return Err(Error::InvalidArgument("a world needs at least two groups".into()));
        }
        for c in &components {
            if c.group >= n_groups || c.condition >= N_CONDITIONS {
                return Err(Error::InvalidArgument(format!(
                    "component label (group {}, condition {}) out of range",
                    c.group, c.condition
                )));
            }
            if !(c.weight.is_finite() && c.weight > 0.0) {
                return Err(Error::InvalidArgument("component weights must be positive".into()));
            }
        }
        let dim = components[0].params.dim();
        if let Some(c) = components.iter().find(|c| c.params.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: c.params.dim(),
            });
        }
        if target.len() != N_CONDITIONS {
            return Err(Error::InvalidArgument("target needs one row per condition".into()));
        }
        for row in &target {
            check_distribution(row, n_groups)?;
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        components.iter_mut().for_each(|c| c.weight /= total);

        let marginal = sub_mixture(components.iter())?.expect("non-empty");
        let by_condition = (0..N_CONDITIONS)
            .map(|y| sub_mixture(components.iter().filter(|c| c.condition == y)))
            .collect::<Result<Vec<_>>>()?;
        let mut by_cell = Vec::with_capacity(N_CONDITIONS * n_groups);
        for y in 0..N_CONDITIONS {
            for a in 0..n_groups {
                by_cell.push(sub_mixture(
                    components.iter().filter(|c| c.condition == y && c.group == a),
                )?);
            }
        }
        let chol = components
            .iter()
            .map(|c| {
                let l = Cholesky::new(c.params.cov().clone())
                    .ok_or(Error::NotPositiveDefinite)?
                    .l();
                Ok(l.transpose().as_slice().to_vec())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec: WorldSpec {
                n_groups,
                components,
                target,
            },
            marginal,
            by_condition,
            by_cell,
            chol,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn dim(&self) -> usize {
        self.marginal.dim()
    }

    pub fn n_groups(&self) -> usize {
        self.spec.n_groups
    }

    pub fn components(&self) -> &[Component] {
        &self.spec.components
    }

    /// `T(· | y)`.
    pub fn target(&self, y: usize) -> Result<&[f64]> {
        self.check_condition(y)?;
        Ok(&self.spec.target[y])
    }

    pub fn condition_prior(&self, y: usize) -> f64 {
        self.components()
            .iter()
            .filter(|c| c.condition == y)
            .map(|c| c.weight)
            .sum()
    }

    /// `P(a | y)` under the clean world, or `P(a)` when `y` is `None`.
    pub fn group_prior(&self, y: Option<usize>) -> Vec<f64> {
        let mut p = vec![0.0; self.n_groups()];
        for c in self.components() {
            if y.is_none_or(|y| y == c.condition) {
                p[c.group] += c.weight;
            }
        }
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= s);
        p
    }

    /// Probability-weighted mean and covariance trace of the clean data,
    /// restricted to condition `y` when given.
    pub fn moments(&self, y: Option<usize>) -> (Vec<f64>, f64) {
        let d = self.dim();
        let sel: Vec<&Component> = self
            .components()
            .iter()
            .filter(|c| y.is_none_or(|y| y == c.condition))
            .collect();
        let wsum: f64 = sel.iter().map(|c| c.weight).sum();
        let mut mean = Vector::zeros(d);
        for c in &sel {
            mean += c.params.mean() * (c.weight / wsum);
        }
        let mut trace = 0.0;
        for c in &sel {
            let diff = c.params.mean() - &mean;
            trace += c.weight / wsum * (c.params.cov().trace() + diff.dot(&diff));
        }
        (mean.iter().copied().collect(), trace)
    }

    fn check_condition(&self, y: usize) -> Result<()> {
        if y < N_CONDITIONS {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("condition {y} out of range")))
        }
    }

    /// Model `p(x)` as a scoreable mixture.
    pub fn marginal(&self) -> &GaussianMixture {
        &self.marginal
    }

    /// Model `p(x | y)`.
    pub fn conditional(&self, y: usize) -> Result<&GaussianMixture> {
        self.check_condition(y)?;
        self.by_condition[y]
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("condition {y} has no components")))
    }

    /// Model `p(x | y, a)`.
    pub fn group_conditional(&self, y: usize, a: usize) -> Result<&GaussianMixture> {
        self.check_condition(y)?;
        if a >= self.n_groups() {
            return Err(Error::InvalidArgument(format!("group {a} out of range")));
        }
        self.by_cell[y * self.n_groups() + a]
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("cell (y={y}, a={a}) is empty")))
    }

    pub fn marginal_score(&self, x: &[f64], level: NoiseLevel) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.marginal.score_into(x, level.variance(), &mut out);
        out
    }

    pub fn conditional_score(&self, x: &[f64], level: NoiseLevel, y: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.conditional(y)?.score_into(x, level.variance(), &mut out);
        Ok(out)
    }

    pub fn group_conditional_score(
        &self,
        x: &[f64],
        level: NoiseLevel,
        y: usize,
        a: usize,
    ) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.group_conditional(y, a)?.score_into(x, level.variance(), &mut out);
        Ok(out)
    }

    /// `p(a | x_t, y)` for the world convolved with `N(0, s2 I)`; `s2 = 0`
    /// gives the exact Bayes posterior of a clean sample.
    pub fn group_posterior_noisy(&self, x: &[f64], s2: f64, y: Option<usize>) -> Result<Vec<f64>> {
        let (mix, comps): (&GaussianMixture, Vec<&Component>) = match y {
            None => (&self.marginal, self.components().iter().collect()),
            Some(y) => (
                self.conditional(y)?,
                self.components().iter().filter(|c| c.condition == y).collect(),
            ),
        };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("posterior query must be finite".into()));
        }
        let r = mix.responsibilities(x, s2);
        let mut out = vec![0.0; self.n_groups()];
        for (c, r) in comps.iter().zip(r) {
            out[c.group] += r;
        }
        Ok(out)
    }

    /// Exact Bayes posterior `p(a | x0, y)`.
    pub fn group_posterior(&self, x0: &[f64], y: Option<usize>) -> Result<Vec<f64>> {
        self.group_posterior_noisy(x0, 0.0, y)
    }

    /// I.i.d. labeled draws. Conditions are drawn jointly with groups from the
    /// component weights.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Dataset> {
        self.sample_where(n, rng, |_| true)
    }

    /// Draws restricted to condition `y` (component weights renormalized).
    pub fn sample_condition<R: Rng + ?Sized>(&self, y: usize, n: usize, rng: &mut R) -> Result<Dataset> {
        self.check_condition(y)?;
        self.sample_where(n, rng, |c| c.condition == y)
    }

    fn sample_where<R: Rng + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
        keep: impl Fn(&Component) -> bool,
    ) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample size must be at least 1".into()));
        }
        let idx: Vec<usize> = (0..self.components().len())
            .filter(|&i| keep(&self.components()[i]))
            .collect();
        if idx.is_empty() {
            return Err(Error::EmptyInput("components matching the sampling filter"));
        }
        let pick = WeightedIndex::new(idx.iter().map(|&i| self.components()[i].weight))
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let d = self.dim();
        let mut out = Dataset {
            x: Vec::with_capacity(n),
            group: Vec::with_capacity(n),
            condition: Vec::with_capacity(n),
        };
        let mut z = vec![0.0; d];
        for _ in 0..n {
            let ci = idx[pick.sample(rng)];
            let c = &self.components()[ci];
            z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            // chol holds Lᵀ column-major, i.e. L row-major
            let l = &self.chol[ci];
            let x: Vec<f64> = (0..d)
                .map(|i| c.params.mean()[i] + (0..=i).map(|j| l[i * d + j] * z[j]).sum::<f64>())
                .collect();
            out.x.push(x);
            out.group.push(c.group);
            out.condition.push(c.condition);
        }
        Ok(out)
    }

    /// Two groups split along the first axis, two conditions along the
    /// second; `P(a = 1 | y = 1) = P(a = 0 | y = 0) = p_major`, equal
    /// condition priors, uniform target.
    pub fn imbalanced(p_major: f64) -> Result<Self> {
        if !(p_major > 0.0 && p_major < 1.0) {
            return Err(Error::InvalidArgument("p_major must lie in (0, 1)".into()));
        }
        let mut comps = Vec::new();
        for y in 0..2 {
            for a in 0..2 {
                let p_a = if a == y { p_major } else { 1.0 - p_major };
                let mean = [if a == 1 { 1.5 } else { -1.5 }, if y == 1 { 1.0 } else { -1.0 }];
                comps.push(Component {
                    group: a,
                    condition: y,
                    weight: 0.5 * p_a,
                    params: GaussianParams::diagonal(&mean, &[0.5, 0.5])?,
                });
            }
        }
        Self::new(2, comps, vec![vec![0.5, 0.5]; 2])
    }

    /// Condition-group correlation 0.6 / 0.4.
    pub fn weak_imbalance() -> Self {
        Self::imbalanced(0.6).expect("valid preset")
    }

    /// Condition-group correlation 0.85 / 0.15.
    pub fn strong_imbalance() -> Self {
        Self::imbalanced(0.85).expect("valid preset")
    }
}

pub(crate) fn check_distribution(p: &[f64], n: usize) -> Result<()> {
    if p.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: p.len(),
        });
    }
    if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument("target must be a probability vector".into()));
    }
    Ok(())
}
