//! Group-ratio measurement over guidance-scale sweeps, the split of total
//! bias into a guidance part and a model part, and the logit-space
//! amplification fit.

mod amplification;
mod bias;
mod sweep;

pub use amplification::{amplification_analysis, AmplificationReport, PairClass, PairOutcome};
pub use bias::{decompose_bias, sweep_summary, BiasEntry, BiasReport, SweepRow, SweepSummary, SweepTable};
pub use sweep::{group_ratios, measure_sweep, Seeding, SweepEntry, SweepResult, SweepSetup, Z_95};
