use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{logit_regression, LogitFit};

/// How guidance moved one configuration's ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairClass {
    AmplifiedUp,
    AmplifiedDown,
    Mitigated,
    Unchanged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairOutcome {
    pub low: f64,
    pub high: f64,
    pub class: PairClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplificationReport {
    pub fit: LogitFit,
    pub pairs: Vec<PairOutcome>,
    pub amplified: usize,
    pub mitigated: usize,
}

/// Movements smaller than this are treated as no change.
const MOVE_TOL: f64 = 1e-9;

/// Logit-space regression of high-scale ratios on low-scale ratios.
///
/// A pair off the diagonal is amplified when the high-scale ratio lies
/// farther from parity than the low-scale one, and mitigated otherwise.
/// The fitted fixed point separates upward from downward amplification.
pub fn amplification_analysis(low_w_ratios: &[f64], high_w_ratios: &[f64]) -> Result<AmplificationReport> {
    if low_w_ratios.len() < 5 {
        return Err(Error::InvalidArgument("need at least five prompt configurations".into()));
    }
    let fit = logit_regression(low_w_ratios, high_w_ratios)?;
    let pairs: Vec<PairOutcome> = low_w_ratios
        .iter()
        .zip(high_w_ratios)
        .map(|(&low, &high)| {
            let class = if (high - low).abs() <= MOVE_TOL {
                PairClass::Unchanged
            } else if (high - 0.5).abs() > (low - 0.5).abs() {
                if high > low {
                    PairClass::AmplifiedUp
                } else {
                    PairClass::AmplifiedDown
                }
            } else {
                PairClass::Mitigated
            };
            PairOutcome { low, high, class }
        })
        .collect();
    let amplified = pairs
        .iter()
        .filter(|p| matches!(p.class, PairClass::AmplifiedUp | PairClass::AmplifiedDown))
        .count();
    let mitigated = pairs.iter().filter(|p| p.class == PairClass::Mitigated).count();
    Ok(AmplificationReport {
        fit,
        pairs,
        amplified,
        mitigated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{logit, sigmoid};

    #[test]
    fn diagonal_pairs_are_unchanged() {
        let x = [0.2, 0.35, 0.5, 0.6, 0.8];
        let r = amplification_analysis(&x, &x).unwrap();
        assert_eq!(r.amplified, 0);
        assert!((r.fit.slope - 1.0).abs() < 1e-12);
        assert!(r.fit.fixed_point.is_none());
    }

    #[test]
    fn symmetric_amplification() {
        let x = [0.2, 0.35, 0.45, 0.6, 0.8];
        let y: Vec<f64> = x.iter().map(|&p| sigmoid(2.0 * logit(p))).collect();
        let r = amplification_analysis(&x, &y).unwrap();
        assert!((r.fit.fixed_point.unwrap() - 0.5).abs() < 1e-12);
        for p in &r.pairs {
            let expect = if p.low > 0.5 { PairClass::AmplifiedUp } else { PairClass::AmplifiedDown };
            assert_eq!(p.class, expect);
        }
        assert!(amplification_analysis(&x[..4], &y[..4]).is_err());
    }
}
