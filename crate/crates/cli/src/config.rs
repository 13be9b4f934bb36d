//! Versioned experiment configuration.
//!
//! A config is one JSON document. Unknown keys are rejected everywhere and
//! every problem is reported against the dotted path of the offending field.
//! Relative file references resolve against the directory holding the
//! config file.

use std::fmt;
use std::path::{Path, PathBuf};

use fairguide::alphaselect::AlphaGrid;
use fairguide::classifier::{TrainConfig, TrainMethod, WdpConfig};
use fairguide::diffusion::{NoiseSchedule, SamplerConfig};
use fairguide::guidance::W_GRID_SD15;
use fairguide::metrics::Seeding;
use fairguide::theory::CG_W_GRID;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const CONFIG_VERSION: u32 = 1;

/// A configuration problem tied to a field path such as `guidance.alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    /// Output directory; `--out` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub schedule: NoiseSchedule,
    #[serde(default = "SamplerConfig::sde")]
    pub sampler: SamplerConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub world: Option<WorldConfig>,
    #[serde(default)]
    pub guidance: GuidanceConfig,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub alpha: AlphaConfig,
    #[serde(default)]
    pub theory: TheoryConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorldKind {
    Mixture,
    Embedding,
}

/// Exactly one of `preset`, `file` and `inline` must be set. The frame and
/// sensitivity fields only apply to the embedding preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub kind: WorldKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inline: Option<serde_json::Value>,
    #[serde(default = "default_frame_seed")]
    pub frame_seed: u64,
    #[serde(default = "default_sensitivity")]
    pub sensitivity: f64,
    #[serde(default)]
    pub base_logit: f64,
}

fn default_frame_seed() -> u64 {
    11
}

fn default_sensitivity() -> f64 {
    0.01
}

pub const MIXTURE_PRESETS: [&str; 3] = ["strong_imbalance", "weak_imbalance", "balanced"];
pub const EMBEDDING_PRESETS: [&str; 1] = ["reference"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Cg,
    Cfg,
    Stayfair,
    Ag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaKeyword {
    Auto,
}

/// A fixed null shift or `"auto"` (read from a fitted estimator).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaSetting {
    Value(f64),
    Keyword(AlphaKeyword),
}

impl Default for AlphaSetting {
    fn default() -> Self {
        Self::Value(0.0)
    }
}

/// A prompt in the preset frame, or a raw embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptConfig {
    #[serde(default = "default_label")]
    pub label: String,
    #[serde(default = "default_score")]
    pub score: f64,
    #[serde(default = "one")]
    pub content: f64,
    #[serde(default = "default_residual")]
    pub residual: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

fn default_label() -> String {
    "focus".into()
}

fn default_score() -> f64 {
    10.0
}

fn one() -> f64 {
    1.0
}

fn default_residual() -> Vec<f64> {
    vec![0.3]
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            label: default_label(),
            score: default_score(),
            content: 1.0,
            residual: default_residual(),
            embedding: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceConfig {
    #[serde(default = "default_regime")]
    pub regime: Regime,
    /// Defaults to the classifier grid for `cg` and the five-point text grid otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_grid: Option<Vec<f64>>,
    /// Defaults to the first grid value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_ref: Option<f64>,
    #[serde(default)]
    pub alpha: AlphaSetting,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimator: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classifier: Option<PathBuf>,
    #[serde(default = "default_condition")]
    pub condition: usize,
    #[serde(default)]
    pub prompt: PromptConfig,
    /// Defaults to the world's target (mixture) or uniform (embedding).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Vec<f64>>,
}

fn default_regime() -> Regime {
    Regime::Cg
}

fn default_condition() -> usize {
    1
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            regime: default_regime(),
            w_grid: None,
            w_ref: None,
            alpha: AlphaSetting::default(),
            estimator: None,
            classifier: None,
            condition: default_condition(),
            prompt: PromptConfig::default(),
            target: None,
        }
    }
}

impl GuidanceConfig {
    pub fn grid(&self) -> Vec<f64> {
        match (&self.w_grid, self.regime) {
            (Some(g), _) => g.clone(),
            (None, Regime::Cg) => CG_W_GRID.to_vec(),
            (None, _) => W_GRID_SD15.to_vec(),
        }
    }

    pub fn reference_scale(&self) -> f64 {
        self.w_ref.unwrap_or_else(|| self.grid()[0])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub train_size: usize,
    pub method: TrainMethod,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub hidden: [usize; 2],
    pub warmup_frac: f64,
    pub log_every: usize,
    pub wdp: WdpConfig,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        let t = TrainConfig::new(TrainMethod::Wdp, 2000, 0);
        Self {
            train_size: 20_000,
            method: t.method,
            steps: t.steps,
            batch: t.batch,
            lr: t.lr,
            hidden: t.hidden,
            warmup_frac: t.warmup_frac,
            log_every: t.log_every,
            wdp: WdpConfig::default(),
        }
    }
}

impl ClassifierConfig {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            batch: self.batch,
            lr: self.lr,
            seed,
            warmup_frac: self.warmup_frac,
            method: self.method,
            hidden: self.hidden,
            log_every: self.log_every,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub n_per_w: usize,
    pub seeding: Seeding,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n_per_w: 2000,
            seeding: Seeding::Common,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlphaConfig {
    pub grid: AlphaGrid,
    pub w_low: f64,
    pub w_high: f64,
    pub n_per_point: usize,
    /// Size of the synthetic prompt family; 0 searches only `guidance.prompt`.
    pub family_size: usize,
    /// Template pairs used to estimate the attribute direction; 0 uses the
    /// world's own direction.
    pub direction_pairs: usize,
    /// Oracle records for `alpha-fit`; defaults to the output directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub records: Option<PathBuf>,
    /// Direction file for `alpha-fit`; defaults to `direction.json` beside the records.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<PathBuf>,
}

impl Default for AlphaConfig {
    fn default() -> Self {
        Self {
            grid: AlphaGrid::sd15(),
            w_low: 2.5,
            w_high: 12.5,
            n_per_point: 1000,
            family_size: 132,
            direction_pairs: 28,
            records: None,
            direction: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryConfig {
    /// Guided paths per scale in the sampler check; 0 skips it.
    pub transfer_paths: usize,
    pub transfer_steps: usize,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            transfer_paths: 20_000,
            transfer_steps: 512,
        }
    }
}

/// Parses a config document; type errors carry the JSON path.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let path = if path == "." { String::new() } else { path };
        ConfigError::new(path, e.into_inner().to_string())
    })
}

/// Loads and validates a config file; relative paths inside it are
/// made absolute against the file's directory.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::new("", format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = parse_config(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    cfg.resolve_paths(base);
    Ok(cfg)
}

fn finite_positive(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

impl ExperimentConfig {
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(x) = p.as_mut() {
                if x.is_relative() {
                    *x = base.join(&*x);
                }
            }
        };
        fix(&mut self.out);
        if let Some(w) = self.world.as_mut() {
            fix(&mut w.file);
        }
        fix(&mut self.guidance.estimator);
        fix(&mut self.guidance.classifier);
        fix(&mut self.alpha.records);
        fix(&mut self.alpha.direction);
    }

    /// Checks ranges and cross-field rules that do not depend on the command.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.version != CONFIG_VERSION {
            return Err(ConfigError::new(
                "version",
                format!("unsupported version {} (expected {CONFIG_VERSION})", self.version),
            ));
        }
        let s = &self.schedule;
        if !(finite_positive(s.sigma_min) && s.sigma_max > s.sigma_min && s.sigma_max.is_finite()) {
            return Err(ConfigError::new("schedule", "need 0 < sigma_min < sigma_max"));
        }
        if !finite_positive(s.horizon) {
            return Err(ConfigError::new("schedule.horizon", "must be positive"));
        }
        if self.sampler.n_steps == 0 {
            return Err(ConfigError::new("sampler.n_steps", "must be positive"));
        }
        if !(self.sampler.t_min > 0.0 && self.sampler.t_min < s.horizon) {
            return Err(ConfigError::new("sampler.t_min", "must lie in (0, horizon)"));
        }
        if let Some(w) = &self.world {
            self.validate_world(w)?;
        }
        self.validate_guidance()?;
        let c = &self.classifier;
        if c.train_size < 4 {
            return Err(ConfigError::new("classifier.train_size", "need at least four examples"));
        }
        c.train_config(self.seed)
            .validate()
            .map_err(|e| ConfigError::new("classifier", e.to_string()))?;
        c.wdp.validate().map_err(|e| ConfigError::new("classifier.wdp", e.to_string()))?;
        if self.sweep.n_per_w < 100 {
            return Err(ConfigError::new("sweep.n_per_w", "need at least 100 samples per scale"));
        }
        let a = &self.alpha;
        a.grid.validate().map_err(|e| ConfigError::new("alpha.grid", e.to_string()))?;
        if !(a.w_low.is_finite() && a.w_high.is_finite() && a.w_low < a.w_high) {
            return Err(ConfigError::new("alpha.w_high", "must exceed alpha.w_low"));
        }
        if a.n_per_point < 2 {
            return Err(ConfigError::new("alpha.n_per_point", "need at least two samples per point"));
        }
        if a.direction_pairs > 0 && a.family_size > 0 && a.direction_pairs > a.family_size {
            return Err(ConfigError::new("alpha.direction_pairs", "cannot exceed alpha.family_size"));
        }
        if self.theory.transfer_paths == 1 {
            return Err(ConfigError::new("theory.transfer_paths", "need 0 (skip) or at least two paths"));
        }
        if self.theory.transfer_steps == 0 {
            return Err(ConfigError::new("theory.transfer_steps", "must be positive"));
        }
        Ok(())
    }

    fn validate_world(&self, w: &WorldConfig) -> Result<(), ConfigError> {
        let set = [w.preset.is_some(), w.file.is_some(), w.inline.is_some()];
        if set.iter().filter(|b| **b).count() != 1 {
            return Err(ConfigError::new("world", "set exactly one of preset, file, inline"));
        }
        if let Some(p) = &w.preset {
            let known: &[&str] = match w.kind {
                WorldKind::Mixture => &MIXTURE_PRESETS,
                WorldKind::Embedding => &EMBEDDING_PRESETS,
            };
            if !known.contains(&p.as_str()) {
                return Err(ConfigError::new(
                    "world.preset",
                    format!("unknown preset '{p}' (known: {})", known.join(", ")),
                ));
            }
        }
        if let Some(f) = &w.file {
            if !f.is_file() {
                return Err(ConfigError::new("world.file", format!("{} does not exist", f.display())));
            }
        }
        if !(w.sensitivity.is_finite() && w.base_logit.is_finite()) {
            return Err(ConfigError::new("world.sensitivity", "sensitivity and base_logit must be finite"));
        }
        Ok(())
    }

    fn validate_guidance(&self) -> Result<(), ConfigError> {
        let g = &self.guidance;
        let grid = g.grid();
        if grid.is_empty() {
            return Err(ConfigError::new("guidance.w_grid", "must not be empty"));
        }
        if grid.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(ConfigError::new("guidance.w_grid", "scales must be finite and non-negative"));
        }
        if grid.windows(2).any(|p| p[0] >= p[1]) {
            return Err(ConfigError::new("guidance.w_grid", "scales must be strictly increasing"));
        }
        let w_ref = g.reference_scale();
        if !(w_ref >= grid[0] && w_ref <= grid[grid.len() - 1]) {
            return Err(ConfigError::new("guidance.w_ref", "must lie within the w grid"));
        }
        if let AlphaSetting::Value(a) = g.alpha {
            if !a.is_finite() {
                return Err(ConfigError::new("guidance.alpha", "must be finite"));
            }
        }
        if g.alpha == AlphaSetting::Keyword(AlphaKeyword::Auto) {
            if g.estimator.is_none() {
                return Err(ConfigError::new("guidance.estimator", "required when guidance.alpha is \"auto\""));
            }
            if g.regime != Regime::Stayfair {
                return Err(ConfigError::new("guidance.alpha", "\"auto\" only applies to the stayfair regime"));
            }
        }
        if let Some(t) = &g.target {
            if t.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (t.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(ConfigError::new("guidance.target", "must be a probability vector"));
            }
        }
        let p = &g.prompt;
        if p.score.is_nan() || p.content.is_nan() || p.residual.iter().any(|r| r.is_nan()) {
            return Err(ConfigError::new("guidance.prompt", "values must be numbers"));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form: keys sorted, defaults filled
    /// in, output directory left out.
    pub fn canonical_hash(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        let value = serde_json::to_value(&c).expect("config serializes");
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }
}
