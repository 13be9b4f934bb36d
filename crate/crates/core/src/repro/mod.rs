//! Scripted reproduction scenarios, one per acceptance criterion.
//!
//! Every scenario is deterministic (fixed seeds) and returns a verdict with
//! human-readable detail lines. [`run_suite`] runs a selection in order and
//! [`markdown_report`] renders the summary table.

mod amplification;
mod classifier;
mod lp;
mod oracles;
mod stayfair;
mod theory;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use lp::solve_standard_lp;
pub use theory::{
    guided_group_share, noise_bins, parity_model, transfer_cases, TransferCase, TRANSFER_PATHS, TRANSFER_STEPS,
};

/// Verdict of one scenario before timing is attached.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Verdict {
    pub passed: bool,
    pub details: Vec<String>,
}

impl Verdict {
    pub(crate) fn new() -> Self {
        Self {
            passed: true,
            details: Vec::new(),
        }
    }

    /// Records a gated check.
    pub(crate) fn check(&mut self, ok: bool, line: String) {
        self.passed &= ok;
        self.details.push(format!("[{}] {line}", if ok { "ok" } else { "FAIL" }));
    }

    /// Records an informational line.
    pub(crate) fn note(&mut self, line: String) {
        self.details.push(line);
    }
}

/// Outcome of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub id: u8,
    pub name: String,
    pub passed: bool,
    pub details: Vec<String>,
    pub seconds: f64,
    /// Documented wall-time budget; not enforced.
    pub budget_seconds: f64,
}

/// `(id, name, budget in seconds)` of every scenario.
pub const CRITERIA: [(u8, &str, f64); 10] = [
    (1, "target group ratio invariant under parity guidance", 5.0),
    (2, "guided sampler lands on the closed-form reweighting", 180.0),
    (3, "bias decomposition identity", 1.0),
    (4, "fairness-penalized classifier flattens the guidance sweep", 600.0),
    (5, "shifted null flattens classifier-free guidance", 600.0),
    (6, "guidance bias is monotone in the null shift", 600.0),
    (7, "prompt-based shift sits between the oracle and no shift", 900.0),
    (8, "composition with a fair model", 600.0),
    (9, "oracle equivalences and gradient checks", 120.0),
    (10, "logit-space amplification fit", 300.0),
];

/// Runs scenario `id` (1 to 10).
pub fn run_criterion(id: u8) -> Result<Outcome> {
    let &(_, name, budget) = CRITERIA
        .iter()
        .find(|c| c.0 == id)
        .ok_or_else(|| Error::InvalidArgument(format!("no criterion {id}")))?;
    let start = Instant::now();
    let verdict = match id {
        1 => theory::target_ratio_invariance(),
        2 => theory::sampler_transfer(),
        3 => theory::decomposition_identity(),
        4 => classifier::penalized_classifier(),
        5 => stayfair::null_shift_effect(),
        6 => stayfair::shift_monotonicity(),
        7 => stayfair::estimator_ordering(),
        8 => stayfair::fair_model_composition(),
        9 => oracles::oracle_equivalences(),
        10 => amplification::amplification_fit(),
        _ => unreachable!("checked above"),
    };
    let verdict = verdict.unwrap_or_else(|e| Verdict {
        passed: false,
        details: vec![format!("[FAIL] scenario error: {e}")],
    });
    Ok(Outcome {
        id,
        name: name.to_string(),
        passed: verdict.passed,
        details: verdict.details,
        seconds: start.elapsed().as_secs_f64(),
        budget_seconds: budget,
    })
}

/// Runs the selected scenarios in order; an empty selection runs all.
pub fn run_suite(ids: &[u8]) -> Result<Vec<Outcome>> {
    let all: Vec<u8> = CRITERIA.iter().map(|c| c.0).collect();
    let ids = if ids.is_empty() { &all[..] } else { ids };
    ids.iter().map(|&id| run_criterion(id)).collect()
}

/// Markdown summary table followed by per-scenario detail.
pub fn markdown_report(outcomes: &[Outcome]) -> String {
    let mut s = String::from("# Reproduction report\n\n| # | criterion | result | time (s) | budget (s) |\n|---|---|---|---|---|\n");
    for o in outcomes {
        s.push_str(&format!(
            "| {} | {} | {} | {:.1} | {:.0} |\n",
            o.id,
            o.name,
            if o.passed { "pass" } else { "FAIL" },
            o.seconds,
            o.budget_seconds
        ));
    }
    let passed = outcomes.iter().filter(|o| o.passed).count();
    s.push_str(&format!("\n{passed}/{} passed.\n", outcomes.len()));
    for o in outcomes {
        s.push_str(&format!("\n## {}. {}\n\n", o.id, o.name));
        for d in &o.details {
            s.push_str(&format!("- {d}\n"));
        }
    }
    s
}

/// Single-line status for console output.
pub fn status_line(o: &Outcome) -> String {
    format!(
        "criterion {:>2} {:<4} {:>7.1}s  {}",
        o.id,
        if o.passed { "PASS" } else { "FAIL" },
        o.seconds,
        o.name
    )
}
