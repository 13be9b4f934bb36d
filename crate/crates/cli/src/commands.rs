use std::path::{Path, PathBuf};

use anyhow::anyhow;
use fairguide::alphaselect::{
    fit_alpha_estimator, gender_direction, holdout_split, predict_alpha, prompt_family, records_from_jsonl,
    records_to_jsonl, search_alpha_star, template_pairs, AlphaEstimator, BiasProbe, HOLDOUT_FRAC,
};
use fairguide::classifier::{cg_potential, train, wdp_distance, NoisyClassifier};
use fairguide::diffusion::{chain_rng, guided_score, SdeInit};
use fairguide::guidance::{ag_potential, stayfair_guided};
use fairguide::metrics::{decompose_bias, measure_sweep, BiasReport, SweepResult, SweepSetup, SweepTable};
use fairguide::numerics::dot;
use fairguide::repro::{self, guided_group_share, noise_bins, parity_model, transfer_cases};
use fairguide::theory::{check_ratio_invariance, group_reweighting, tilt_identity_residual, CG_W_GRID};
use fairguide::world::{
    orthonormal_frame, EmbeddingWorldMap, MixtureWorld, PromptEmbedding, EMBED_DIM, N_CONDITIONS,
};
use serde::Serialize;

use crate::config::{AlphaKeyword, AlphaSetting, ConfigError, ExperimentConfig, Regime, WorldConfig, WorldKind};
use crate::manifest::{OutputDir, RunManifest};

/// Exit code 2 for configuration problems, 1 for everything else.
#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Config(e) => write!(f, "config error: {e}"),
            Self::Runtime(e) => write!(f, "error: {e:#}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::Config(e)
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        Self::Runtime(e)
    }
}

impl From<fairguide::Error> for CliError {
    fn from(e: fairguide::Error) -> Self {
        Self::Runtime(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::Runtime(e.into())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Effective config and output directory of one invocation.
pub struct Run {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
}

impl Run {
    fn output(&self, command: &str) -> CliResult<OutputDir<'_>> {
        let m = RunManifest::new(command, Some(self.cfg.canonical_hash()), Some(self.cfg.seed));
        Ok(OutputDir::create(&self.out, m)?)
    }
}

enum World {
    Mixture(MixtureWorld),
    Embedding {
        map: EmbeddingWorldMap,
        frame: Option<Vec<Vec<f64>>>,
    },
}

fn read_file(field: &str, path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path)
        .map_err(|e| ConfigError::new(field, format!("cannot read {}: {e}", path.display())).into())
}

fn load_world(cfg: &ExperimentConfig) -> CliResult<World> {
    let w: &WorldConfig = cfg
        .world
        .as_ref()
        .ok_or_else(|| ConfigError::new("world", "required by this command"))?;
    let (field, text) = match (&w.preset, &w.file, &w.inline) {
        (Some(p), _, _) => {
            return Ok(match w.kind {
                WorldKind::Mixture => World::Mixture(match p.as_str() {
                    "strong_imbalance" => MixtureWorld::strong_imbalance(),
                    "weak_imbalance" => MixtureWorld::weak_imbalance(),
                    _ => MixtureWorld::imbalanced(0.5)?,
                }),
                WorldKind::Embedding => {
                    let frame = orthonormal_frame(EMBED_DIM, w.frame_seed);
                    let map = EmbeddingWorldMap::preset(&frame, w.sensitivity, w.base_logit)
                        .map_err(|e| ConfigError::new("world", e.to_string()))?;
                    World::Embedding { map, frame: Some(frame) }
                }
            })
        }
        (None, Some(f), _) => ("world.file", read_file("world.file", f)?),
        (None, None, Some(v)) => ("world.inline", v.to_string()),
        _ => return Err(ConfigError::new("world", "set exactly one of preset, file, inline").into()),
    };
    let bad = |e: fairguide::Error| ConfigError::new(field, e.to_string());
    Ok(match w.kind {
        WorldKind::Mixture => World::Mixture(MixtureWorld::from_json(&text).map_err(bad)?),
        WorldKind::Embedding => World::Embedding {
            map: EmbeddingWorldMap::from_json(&text).map_err(bad)?,
            frame: None,
        },
    })
}

fn mixture_world(cfg: &ExperimentConfig) -> CliResult<MixtureWorld> {
    match load_world(cfg)? {
        World::Mixture(m) => Ok(m),
        World::Embedding { .. } => Err(ConfigError::new("world.kind", "this command needs a mixture world").into()),
    }
}

fn embedding_world(cfg: &ExperimentConfig) -> CliResult<(EmbeddingWorldMap, Option<Vec<Vec<f64>>>)> {
    match load_world(cfg)? {
        World::Embedding { map, frame } => Ok((map, frame)),
        World::Mixture(_) => Err(ConfigError::new("world.kind", "this command needs an embedding world").into()),
    }
}

fn build_prompt(cfg: &ExperimentConfig, map: &EmbeddingWorldMap, frame: Option<&[Vec<f64>]>) -> CliResult<PromptEmbedding> {
    let p = &cfg.guidance.prompt;
    let bad = |path: &str, e: fairguide::Error| CliError::from(ConfigError::new(path, e.to_string()));
    let prompt = match (&p.embedding, frame) {
        (Some(e), _) => {
            if e.len() != map.embed_dim() {
                return Err(ConfigError::new(
                    "guidance.prompt.embedding",
                    format!("expected {} values, got {}", map.embed_dim(), e.len()),
                )
                .into());
            }
            PromptEmbedding::new(e.clone(), p.label.clone()).map_err(|e| bad("guidance.prompt.embedding", e))?
        }
        (None, Some(frame)) => EmbeddingWorldMap::prompt_in_frame(frame, p.score, p.content, &p.residual, p.label.clone())
            .map_err(|e| bad("guidance.prompt", e))?,
        (None, None) => {
            return Err(ConfigError::new("guidance.prompt.embedding", "required unless the world is the preset").into())
        }
    };
    Ok(prompt)
}

fn load_classifier(path: &Path, field: &str) -> CliResult<NoisyClassifier> {
    let text = read_file(field, path)?;
    NoisyClassifier::from_json(&text).map_err(|e| ConfigError::new(field, e.to_string()).into())
}

fn check_target(target: &[f64], n_groups: usize) -> CliResult<()> {
    if target.len() != n_groups {
        return Err(ConfigError::new("guidance.target", format!("expected {n_groups} entries, got {}", target.len())).into());
    }
    Ok(())
}

/// Resolved null shift for the StayFair regime.
fn resolve_alpha(cfg: &ExperimentConfig, prompt: &PromptEmbedding) -> CliResult<f64> {
    match cfg.guidance.alpha {
        AlphaSetting::Value(a) => Ok(a),
        AlphaSetting::Keyword(AlphaKeyword::Auto) => {
            let path = cfg
                .guidance
                .estimator
                .as_ref()
                .ok_or_else(|| ConfigError::new("guidance.estimator", "required when guidance.alpha is \"auto\""))?;
            let text = read_file("guidance.estimator", path)?;
            let est = AlphaEstimator::from_json(&text).map_err(|e| ConfigError::new("guidance.estimator", e.to_string()))?;
            if est.direction.len() != prompt.e.len() {
                return Err(ConfigError::new("guidance.estimator", "direction dimension does not match the world").into());
            }
            Ok(predict_alpha(&est, prompt, &cfg.alpha.grid))
        }
    }
}

fn sweep_setup(cfg: &ExperimentConfig, init: SdeInit) -> SweepSetup {
    SweepSetup {
        schedule: cfg.schedule,
        sampler: cfg.sampler,
        init,
        n_per_w: cfg.sweep.n_per_w,
        seed: cfg.seed,
        seeding: cfg.sweep.seeding,
    }
}

/// Runs the configured guided sweep; returns the sweep, the target and the
/// resolved shift (StayFair only).
fn guided_sweep(cfg: &ExperimentConfig) -> CliResult<(SweepResult, Vec<f64>, Option<f64>)> {
    let g = &cfg.guidance;
    let grid = g.grid();
    if g.regime == Regime::Cg {
        let world = mixture_world(cfg)?;
        let y = g.condition;
        if y >= N_CONDITIONS {
            return Err(ConfigError::new("guidance.condition", format!("must be below {N_CONDITIONS}")).into());
        }
        let path = g
            .classifier
            .as_ref()
            .ok_or_else(|| ConfigError::new("guidance.classifier", "required for the cg regime"))?;
        let clf = load_classifier(path, "guidance.classifier")?;
        if clf.input_dim() != world.marginal().dim() {
            return Err(ConfigError::new("guidance.classifier", "input dimension does not match the world").into());
        }
        let target = match &g.target {
            Some(t) => t.clone(),
            None => world.target(y)?.to_vec(),
        };
        check_target(&target, world.n_groups())?;
        let (mean, trace) = world.moments(Some(y));
        let setup = sweep_setup(cfg, SdeInit::from_data(&mean, trace, &cfg.schedule));
        let base = world.conditional(y)?.clone();
        let pot = cg_potential(&clf, y)?;
        let sweep = measure_sweep(
            |w| Ok(guided_score(base.clone(), pot.clone(), w)),
            |x| world.group_posterior(x, Some(y)),
            &grid,
            &setup,
        )?;
        return Ok((sweep, target, None));
    }

    let (map, frame) = embedding_world(cfg)?;
    let prompt = build_prompt(cfg, &map, frame.as_deref())?;
    let target = g.target.clone().unwrap_or_else(|| vec![0.5, 0.5]);
    check_target(&target, 2)?;
    let setup = sweep_setup(cfg, fairguide::alphaselect::prompt_init(&map, &prompt, &cfg.schedule)?);
    let posterior = |x: &[f64]| map.group_posterior(x, &prompt);
    let (sweep, alpha) = match g.regime {
        Regime::Ag => {
            let weak = map.weakened();
            let base = weak.mixture(&prompt)?;
            let pot = ag_potential(&map, &weak, &prompt)?;
            let s = measure_sweep(|w| Ok(guided_score(base.clone(), pot.clone(), w)), posterior, &grid, &setup)?;
            (s, None)
        }
        regime => {
            let alpha = if regime == Regime::Cfg { 0.0 } else { resolve_alpha(cfg, &prompt)? };
            let s = measure_sweep(|w| stayfair_guided(&map, &prompt, alpha, w), posterior, &grid, &setup)?;
            (s, Some(alpha))
        }
    };
    Ok((sweep, target, alpha))
}

fn emit_report(out: &mut OutputDir<'_>, report: &BiasReport) -> CliResult<()> {
    out.write("sweep.csv", &SweepTable::from_report(report).to_csv())?;
    out.write("bias_report.json", &(serde_json::to_string_pretty(report)? + "\n"))?;
    let m = out.manifest_mut();
    m.detail("range", report.summary.range);
    m.detail("avg_abs_bias", report.summary.avg);
    m.detail("worst_abs_bias", report.summary.worst);
    Ok(())
}

pub fn cmd_sweep(run: &Run) -> CliResult<()> {
    let (sweep, target, alpha) = guided_sweep(&run.cfg)?;
    let report = decompose_bias(&sweep, &target, run.cfg.guidance.reference_scale())?;
    let mut out = run.output("sweep")?;
    emit_report(&mut out, &report)?;
    if let Some(a) = alpha {
        out.manifest_mut().detail("alpha", a);
    }
    out.finish()?;
    println!(
        "tracked-group ratio range {:.4} over {} scales; wrote {}",
        report.summary.range,
        report.entries.len(),
        run.out.display()
    );
    Ok(())
}

pub fn cmd_train_classifier(run: &Run) -> CliResult<()> {
    let cfg = &run.cfg;
    let world = mixture_world(cfg)?;
    let data = world.sample(cfg.classifier.train_size, &mut chain_rng(cfg.seed, 0))?;
    let tc = cfg.classifier.train_config(cfg.seed);
    let (clf, report) = train(&data, &cfg.schedule, &tc, &cfg.classifier.wdp)?;
    let y = cfg.guidance.condition.min(N_CONDITIONS - 1);
    let dist = wdp_distance(&clf, &world, y, &noise_bins(), 1000, &mut chain_rng(cfg.seed, 1))?;
    let mean_dist = dist.iter().sum::<f64>() / dist.len() as f64;
    let mut out = run.output("train-classifier")?;
    out.write("classifier.json", &(clf.to_json()? + "\n"))?;
    out.write("train_curve.csv", &report.to_csv())?;
    let m = out.manifest_mut();
    m.detail("method", tc.method);
    m.detail("group_distance_by_noise_bin", &dist);
    m.detail("mean_group_distance", mean_dist);
    out.finish()?;
    println!("trained {:?} classifier; mean group distance {mean_dist:.4}", tc.method);
    Ok(())
}

fn probe(cfg: &ExperimentConfig) -> BiasProbe {
    BiasProbe {
        schedule: cfg.schedule,
        sampler: cfg.sampler,
        w_low: cfg.alpha.w_low,
        w_high: cfg.alpha.w_high,
        n_per_point: cfg.alpha.n_per_point,
        seed: cfg.seed,
    }
}

pub fn cmd_alpha_search(run: &Run) -> CliResult<()> {
    let cfg = &run.cfg;
    let a = &cfg.alpha;
    let (map, frame) = embedding_world(cfg)?;
    let prompts = if a.family_size > 0 {
        let frame = frame.as_ref().ok_or_else(|| {
            ConfigError::new("alpha.family_size", "a prompt family needs the preset embedding world")
        })?;
        prompt_family(frame, a.family_size, cfg.seed)?
    } else {
        vec![build_prompt(cfg, &map, frame.as_deref())?]
    };
    let direction = if a.direction_pairs > 0 {
        let labels: Vec<&str> = prompts.iter().map(|p| p.label.as_str()).collect();
        let (train_idx, _) = holdout_split(&labels, HOLDOUT_FRAC);
        let src: Vec<PromptEmbedding> = train_idx.iter().take(a.direction_pairs).map(|&i| prompts[i].clone()).collect();
        if src.is_empty() {
            return Err(ConfigError::new("alpha.direction_pairs", "no training prompts to pair").into());
        }
        gender_direction(&template_pairs(&src, &map.direction, cfg.seed)?)?
    } else {
        map.direction.clone()
    };
    let probe = probe(cfg);
    let records = prompts
        .iter()
        .map(|p| search_alpha_star(&map, p, &direction, &a.grid, &probe))
        .collect::<fairguide::Result<Vec<_>>>()?;
    let mut out = run.output("alpha-search")?;
    out.write("alpha_records.jsonl", &records_to_jsonl(&records)?)?;
    out.write("direction.json", &(serde_json::to_string(&direction)? + "\n"))?;
    let m = out.manifest_mut();
    m.detail("prompts", records.len());
    m.detail("direction_cosine", dot(&direction, &map.direction));
    m.detail("saturated", records.iter().filter(|r| r.saturated).count());
    out.finish()?;
    println!("searched {} prompts; wrote {}", records.len(), run.out.display());
    Ok(())
}

#[derive(Serialize)]
struct HeldOut {
    label: String,
    alpha_star: f64,
    predicted: f64,
}

pub fn cmd_alpha_fit(run: &Run) -> CliResult<()> {
    let cfg = &run.cfg;
    let records_path = cfg.alpha.records.clone().unwrap_or_else(|| run.out.join("alpha_records.jsonl"));
    let direction_path = cfg.alpha.direction.clone().unwrap_or_else(|| {
        records_path.parent().unwrap_or(Path::new(".")).join("direction.json")
    });
    let records = records_from_jsonl(&read_file("alpha.records", &records_path)?)
        .map_err(|e| ConfigError::new("alpha.records", e.to_string()))?;
    let direction: Vec<f64> = serde_json::from_str(&read_file("alpha.direction", &direction_path)?)
        .map_err(|e| ConfigError::new("alpha.direction", e.to_string()))?;
    let labels: Vec<&str> = records.iter().map(|r| r.prompt.label.as_str()).collect();
    let (train_idx, held_idx) = holdout_split(&labels, HOLDOUT_FRAC);
    let train_recs: Vec<_> = train_idx.iter().map(|&i| records[i].clone()).collect();
    let est = fit_alpha_estimator(&train_recs, &direction)?;
    let grid = &cfg.alpha.grid;
    let held: Vec<HeldOut> = held_idx
        .iter()
        .map(|&i| HeldOut {
            label: records[i].prompt.label.clone(),
            alpha_star: records[i].alpha_star,
            predicted: predict_alpha(&est, &records[i].prompt, grid),
        })
        .collect();
    let within = held.iter().filter(|h| (h.predicted - h.alpha_star).abs() <= grid.step + 1e-9).count();
    let mut out = run.output("alpha-fit")?;
    out.write("estimator.json", &(est.to_json()? + "\n"))?;
    let m = out.manifest_mut();
    m.detail("train_records", train_recs.len());
    m.detail("held_out", &held);
    m.detail("held_out_within_one_step", within);
    out.finish()?;
    println!(
        "fitted on {} records (penalty {}); {within}/{} held-out predictions within one grid step",
        train_recs.len(),
        est.ridge.chosen_lambda,
        held.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct TheoryCheck {
    name: String,
    value: f64,
    tolerance: f64,
    passed: bool,
}

impl TheoryCheck {
    fn new(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance,
            passed: value <= tolerance,
        }
    }
}

#[derive(Serialize)]
struct TheoryReport {
    passed: bool,
    checks: Vec<TheoryCheck>,
    notes: Vec<String>,
}

pub fn cmd_verify_theory(run: &Run) -> CliResult<()> {
    let cfg = &run.cfg;
    let mut checks = Vec::new();
    let mut notes = Vec::new();
    let (model, pot) = parity_model()?;
    let rep = check_ratio_invariance(&model, &pot, &CG_W_GRID, &noise_bins(), &cfg.schedule)?;
    checks.push(TheoryCheck::new("target group ratio invariance", rep.max_deviation, 1e-9));

    let mut worst = 0.0f64;
    for (_, group) in &model.groups {
        for &t in &noise_bins() {
            let s2 = cfg.schedule.level(t)?.variance();
            for &w in &CG_W_GRID {
                worst = worst.max(tilt_identity_residual(&pot, group, s2, w)?);
            }
        }
    }
    checks.push(TheoryCheck::new("tilt factorization log h = log C + w log f", worst, 1e-10));

    let paths = cfg.theory.transfer_paths;
    if paths > 0 {
        for case in transfer_cases()? {
            for w in [0.0, 1.0, 2.0] {
                let want = group_reweighting(&case.model, &case.potential, w)?[1];
                let (q, se) = guided_group_share(&case, w, paths, cfg.theory.transfer_steps, cfg.seed)?;
                let z = (q - want) / se;
                checks.push(TheoryCheck::new(format!("sampler transfer, {} w={w}: |z|", case.name), z.abs(), 3.0));
                notes.push(format!("{} w={w}: share {q:.5} (se {se:.5}) vs closed form {want:.5}", case.name));
            }
        }
    } else {
        notes.push("sampler transfer check skipped".into());
    }
    let passed = checks.iter().all(|c| c.passed);
    let report = TheoryReport { passed, checks, notes };
    let mut out = run.output("verify-theory")?;
    out.write("theory_report.json", &(serde_json::to_string_pretty(&report)? + "\n"))?;
    out.manifest_mut().detail("passed", passed);
    out.finish()?;
    for c in &report.checks {
        println!("{} {:<48} {:.3e} (tolerance {:.0e})", if c.passed { "ok  " } else { "FAIL" }, c.name, c.value, c.tolerance);
    }
    if passed {
        Ok(())
    } else {
        Err(CliError::Runtime(anyhow!("theory checks failed")))
    }
}

pub fn cmd_decompose(sweep_file: &Path, target: &[f64], w_ref: f64, out_dir: &Path) -> CliResult<()> {
    let text = read_file("--sweep", sweep_file)?;
    let sweep = SweepTable::from_csv(&text)
        .and_then(|t| t.to_sweep())
        .map_err(|e| ConfigError::new("--sweep", e.to_string()))?;
    if target.len() != sweep.n_groups() {
        return Err(ConfigError::new("--target", format!("expected {} entries", sweep.n_groups())).into());
    }
    let report = decompose_bias(&sweep, target, w_ref).map_err(|e| ConfigError::new("--w-ref", e.to_string()))?;
    let mut m = RunManifest::new("decompose", None, None);
    m.detail("input", sweep_file.display().to_string());
    m.detail("input_sha256", crate::manifest::sha256_hex(text.as_bytes()));
    let mut out = OutputDir::create(out_dir, m)?;
    emit_report(&mut out, &report)?;
    out.finish()?;
    println!("decomposed {} scales at w_ref = {w_ref}", report.entries.len());
    Ok(())
}

pub fn cmd_reproduce(ids: &[u8], out_dir: &Path) -> CliResult<()> {
    let known: Vec<u8> = repro::CRITERIA.iter().map(|c| c.0).collect();
    if let Some(bad) = ids.iter().find(|i| !known.contains(i)) {
        return Err(ConfigError::new("--criteria", format!("unknown criterion {bad}")).into());
    }
    let all = if ids.is_empty() { known } else { ids.to_vec() };
    let mut outcomes = Vec::new();
    for id in all {
        let o = repro::run_criterion(id)?;
        println!("{}", repro::status_line(&o));
        outcomes.push(o);
    }
    let mut out = OutputDir::create(out_dir, RunManifest::new("reproduce", None, None))?;
    out.write("report.md", &repro::markdown_report(&outcomes))?;
    out.write("report.json", &(serde_json::to_string_pretty(&outcomes)? + "\n"))?;
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    out.manifest_mut().detail("failed", failed);
    out.finish()?;
    if failed > 0 {
        Err(CliError::Runtime(anyhow!("{failed} of {} criteria failed", outcomes.len())))
    } else {
        Ok(())
    }
}
