use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::TRACKED_GROUP;

use super::sweep::{SweepEntry, SweepResult};

/// Bias split at one scale; vectors are indexed by group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasEntry {
    pub w: f64,
    pub ratio: Vec<f64>,
    pub ratio_ci: Vec<(f64, f64)>,
    pub total_bias: Vec<f64>,
    pub guidance_bias: Vec<f64>,
    pub model_bias: Vec<f64>,
}

/// Mean and worst absolute deviation from target and the spread of the
/// tracked group's ratio across scales.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub avg: f64,
    pub worst: f64,
    pub range: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub target: Vec<f64>,
    pub w_ref: f64,
    /// `Q^{w_ref}` was interpolated between neighbouring scales.
    pub w_ref_interpolated: bool,
    pub reference_ratio: Vec<f64>,
    pub tracked_group: usize,
    pub entries: Vec<BiasEntry>,
    pub summary: SweepSummary,
}

fn reference_ratio(sweep: &SweepResult, w_ref: f64) -> Result<(Vec<f64>, bool)> {
    let e = &sweep.entries;
    if let Some(hit) = e.iter().find(|x| x.w == w_ref) {
        return Ok((hit.group_ratio.clone(), false));
    }
    let mut sorted: Vec<&SweepEntry> = e.iter().collect();
    sorted.sort_by(|a, b| a.w.total_cmp(&b.w));
    let hi = sorted
        .iter()
        .position(|x| x.w > w_ref)
        .filter(|&i| i > 0)
        .ok_or_else(|| Error::InvalidArgument(format!("w_ref = {w_ref} lies outside the sweep grid")))?;
    let (a, b) = (sorted[hi - 1], sorted[hi]);
    let s = (w_ref - a.w) / (b.w - a.w);
    let r = a
        .group_ratio
        .iter()
        .zip(&b.group_ratio)
        .map(|(x, y)| x + s * (y - x))
        .collect();
    Ok((r, true))
}

/// `Bias^w = Bias_G^w + Bias_M` with `Bias_G^w = Q^w − Q^{w_ref}` and
/// `Bias_M = Q^{w_ref} − T`. The total is stored as the sum of its two
/// parts, so the identity holds exactly per entry.
pub fn decompose_bias(sweep: &SweepResult, target: &[f64], w_ref: f64) -> Result<BiasReport> {
    if sweep.entries.is_empty() {
        return Err(Error::EmptyInput("sweep"));
    }
    let k = sweep.n_groups();
    crate::world::check_distribution(target, k)?;
    let (reference, interpolated) = reference_ratio(sweep, w_ref)?;
    let model: Vec<f64> = reference.iter().zip(target).map(|(q, t)| q - t).collect();
    let entries: Vec<BiasEntry> = sweep
        .entries
        .iter()
        .map(|e| {
            let guidance: Vec<f64> = e.group_ratio.iter().zip(&reference).map(|(q, r)| q - r).collect();
            let total = guidance.iter().zip(&model).map(|(g, m)| g + m).collect();
            BiasEntry {
                w: e.w,
                ratio: e.group_ratio.clone(),
                ratio_ci: e.ratio_ci.clone(),
                total_bias: total,
                guidance_bias: guidance,
                model_bias: model.clone(),
            }
        })
        .collect();
    let tracked = TRACKED_GROUP.min(k - 1);
    let summary = summarize(&entries, target, tracked);
    Ok(BiasReport {
        target: target.to_vec(),
        w_ref,
        w_ref_interpolated: interpolated,
        reference_ratio: reference,
        tracked_group: tracked,
        entries,
        summary,
    })
}

fn summarize(entries: &[BiasEntry], target: &[f64], g: usize) -> SweepSummary {
    let dev: Vec<f64> = entries.iter().map(|e| (e.ratio[g] - target[g]).abs()).collect();
    let avg = dev.iter().sum::<f64>() / dev.len() as f64;
    let worst = dev.iter().copied().fold(0.0, f64::max);
    let hi = entries.iter().map(|e| e.ratio[g]).fold(f64::NEG_INFINITY, f64::max);
    let lo = entries.iter().map(|e| e.ratio[g]).fold(f64::INFINITY, f64::min);
    SweepSummary {
        avg,
        worst,
        range: hi - lo,
    }
}

/// Summary statistics for the report's tracked group.
pub fn sweep_summary(report: &BiasReport) -> Result<SweepSummary> {
    if report.entries.len() < 2 {
        return Err(Error::InvalidArgument("a summary needs at least two scales".into()));
    }
    Ok(summarize(&report.entries, &report.target, report.tracked_group))
}

/// One CSV line of a sweep export.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub w: f64,
    pub group: usize,
    pub ratio: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub total_bias: f64,
    pub guidance_bias: f64,
    pub model_bias: f64,
}

/// Long-format sweep table; floats use shortest round-trip formatting so
/// parsing and re-emitting is byte-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

const SWEEP_HEADER: &str = "w,group,ratio,ci_low,ci_high,total_bias,guidance_bias,model_bias";

impl SweepTable {
    pub fn from_report(report: &BiasReport) -> Self {
        let rows = report
            .entries
            .iter()
            .flat_map(|e| {
                (0..e.ratio.len()).map(move |a| SweepRow {
                    w: e.w,
                    group: a,
                    ratio: e.ratio[a],
                    ci_low: e.ratio_ci[a].0,
                    ci_high: e.ratio_ci[a].1,
                    total_bias: e.total_bias[a],
                    guidance_bias: e.guidance_bias[a],
                    model_bias: e.model_bias[a],
                })
            })
            .collect();
        Self { rows }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(SWEEP_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.w, r.group, r.ratio, r.ci_low, r.ci_high, r.total_bias, r.guidance_bias, r.model_bias
            ));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(SWEEP_HEADER) {
            return Err(Error::InvalidArgument("unexpected sweep CSV header".into()));
        }
        let bad = |n: usize| Error::InvalidArgument(format!("malformed sweep CSV line {n}"));
        let rows = lines
            .enumerate()
            .map(|(i, line)| {
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 8 {
                    return Err(bad(i + 2));
                }
                let num = |j: usize| f[j].parse::<f64>().map_err(|_| bad(i + 2));
                Ok(SweepRow {
                    w: num(0)?,
                    group: f[1].parse().map_err(|_| bad(i + 2))?,
                    ratio: num(2)?,
                    ci_low: num(3)?,
                    ci_high: num(4)?,
                    total_bias: num(5)?,
                    guidance_bias: num(6)?,
                    model_bias: num(7)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rows })
    }

    /// Rebuilds the ratio part of a sweep (sample counts and standard
    /// errors are not part of the table).
    pub fn to_sweep(&self) -> Result<SweepResult> {
        let mut entries: Vec<SweepEntry> = Vec::new();
        for r in &self.rows {
            if entries.last().is_none_or(|e| e.w != r.w) {
                entries.push(SweepEntry {
                    w: r.w,
                    n_samples: 0,
                    group_ratio: Vec::new(),
                    ratio_ci: Vec::new(),
                    ratio_se: Vec::new(),
                });
            }
            let e = entries.last_mut().expect("pushed above");
            if r.group != e.group_ratio.len() {
                return Err(Error::InvalidArgument("sweep CSV groups out of order".into()));
            }
            e.group_ratio.push(r.ratio);
            e.ratio_ci.push((r.ci_low, r.ci_high));
            e.ratio_se.push(f64::NAN);
        }
        if entries.is_empty() {
            return Err(Error::EmptyInput("sweep CSV rows"));
        }
        Ok(SweepResult { entries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sweep(ratios: &[(f64, f64)]) -> SweepResult {
        SweepResult {
            entries: ratios
                .iter()
                .map(|&(w, q)| SweepEntry {
                    w,
                    n_samples: 100,
                    group_ratio: vec![1.0 - q, q],
                    ratio_ci: vec![(0.0, 1.0); 2],
                    ratio_se: vec![0.0; 2],
                })
                .collect(),
        }
    }

    #[test]
    fn decomposition_algebra() {
        let r = decompose_bias(&sweep(&[(0.0, 0.5), (2.0, 0.6)]), &[0.5, 0.5], 0.0).unwrap();
        let e = &r.entries[1];
        assert!((e.total_bias[1] - 0.1).abs() < 1e-15);
        assert!((e.guidance_bias[1] - 0.1).abs() < 1e-15);
        assert_eq!(e.model_bias[1], 0.0);
        assert!(r.entries[0].guidance_bias.iter().all(|v| *v == 0.0));
        assert!(!r.w_ref_interpolated);
        assert!(decompose_bias(&sweep(&[(0.0, 0.5)]), &[0.7, 0.7], 0.0).is_err());
    }

    #[test]
    fn interpolated_reference() {
        let r = decompose_bias(&sweep(&[(0.0, 0.4), (2.0, 0.6)]), &[0.5, 0.5], 1.0).unwrap();
        assert!(r.w_ref_interpolated);
        assert!((r.reference_ratio[1] - 0.5).abs() < 1e-15);
        assert!(decompose_bias(&sweep(&[(0.0, 0.4), (2.0, 0.6)]), &[0.5, 0.5], 3.0).is_err());
    }

    #[test]
    fn summary_arithmetic() {
        let r = decompose_bias(&sweep(&[(1.0, 0.40), (2.0, 0.45), (3.0, 0.53)]), &[0.5, 0.5], 1.0).unwrap();
        let s = sweep_summary(&r).unwrap();
        assert!((s.avg - 0.06).abs() < 1e-12);
        assert!((s.worst - 0.10).abs() < 1e-12);
        assert!((s.range - 0.13).abs() < 1e-12);
        let flat = decompose_bias(&sweep(&[(1.0, 0.3), (2.0, 0.3)]), &[0.5, 0.5], 1.0).unwrap();
        assert_eq!(sweep_summary(&flat).unwrap().range, 0.0);
    }

    #[test]
    fn csv_roundtrip() {
        let r = decompose_bias(&sweep(&[(0.0, 0.1 + 0.2), (2.5, 1.0 / 3.0)]), &[0.5, 0.5], 0.0).unwrap();
        let csv = SweepTable::from_report(&r).to_csv();
        let back = SweepTable::from_csv(&csv).unwrap();
        assert_eq!(back.to_csv(), csv);
        let s = back.to_sweep().unwrap();
        assert_eq!(s.ratios(1), vec![0.1 + 0.2, 1.0 / 3.0]);
        assert!(SweepTable::from_csv("nope\n").is_err());
    }
}
