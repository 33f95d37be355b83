//! Evaluation: classification scores, missing-rate sweeps, analytic
//! complexity counters and finite-difference gradient checks.

mod complexity;
mod gradcheck;
mod sweep;

pub use complexity::{count_params_macs, layer_params, model_complexity, Complexity, LayerKind, DEFAULT_MAC_LENS};
pub use gradcheck::{gradcheck, Fault, GradcheckConfig, GradcheckReport, GroupResult};
pub use sweep::{default_rates, sweep, SweepConfig, SweepReport, SweepRow};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// The four summary scores.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub ua: f64,
    pub wa: f64,
    pub uf1: f64,
    pub wf1: f64,
}

impl Scores {
    pub fn map(self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            ua: f(self.ua),
            wa: f(self.wa),
            uf1: f(self.uf1),
            wf1: f(self.wf1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// `confusion[truth][pred]`.
    pub confusion: Vec<Vec<u64>>,
    pub scores: Scores,
}

/// UA (macro recall), WA (accuracy), UF1 (macro F1) and WF1
/// (support-weighted F1). Classes absent from `truth` are left out of the
/// macro averages.
pub fn compute_metrics(preds: &[usize], truth: &[usize], classes: usize) -> Result<MetricsRecord> {
    if preds.is_empty() || preds.len() != truth.len() {
        return Err(Error::invalid(
            "metrics input",
            format!("{} predictions for {} labels", preds.len(), truth.len()),
        ));
    }
    if let Some(&bad) = preds.iter().chain(truth).find(|&&c| c >= classes) {
        return Err(Error::invalid("metrics input", format!("label {bad} outside {classes} classes")));
    }
    let mut confusion = vec![vec![0u64; classes]; classes];
    for (&p, &t) in preds.iter().zip(truth) {
        confusion[t][p] += 1;
    }
    let total = preds.len() as f64;
    let mut correct = 0u64;
    let (mut recall_sum, mut f1_sum, mut wf1, mut supported) = (0.0, 0.0, 0.0, 0usize);
    for c in 0..classes {
        let tp = confusion[c][c];
        correct += tp;
        let support: u64 = confusion[c].iter().sum();
        if support == 0 {
            continue;
        }
        let predicted: u64 = confusion.iter().map(|row| row[c]).sum();
        let recall = tp as f64 / support as f64;
        let precision = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
        let f1 = if tp == 0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        supported += 1;
        recall_sum += recall;
        f1_sum += f1;
        wf1 += f1 * support as f64 / total;
    }
    let scores = Scores {
        ua: recall_sum / supported as f64,
        wa: correct as f64 / total,
        uf1: f1_sum / supported as f64,
        wf1,
    };
    Ok(MetricsRecord { confusion, scores })
}

/// Trapezoid-rule area under `scores` over strictly increasing `rates`.
pub fn auilc(scores: &[f64], rates: &[f64]) -> Result<f64> {
    if scores.len() != rates.len() || rates.len() < 2 {
        return Err(Error::invalid(
            "auilc input",
            format!("{} scores over {} rates (need ≥ 2 equal-length points)", scores.len(), rates.len()),
        ));
    }
    if rates.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("auilc input", "rates must be strictly increasing"));
    }
    Ok(rates
        .windows(2)
        .zip(scores.windows(2))
        .map(|(r, s)| (s[1] + s[0]) / 2.0 * (r[1] - r[0]))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_example() {
        let m = compute_metrics(&[0, 1, 1, 1], &[0, 0, 1, 1], 2).unwrap();
        assert!((m.scores.ua - 0.75).abs() < 1e-12);
        assert!((m.scores.wa - 0.75).abs() < 1e-12);
        assert!((m.scores.uf1 - 11.0 / 15.0).abs() < 1e-12);
        assert!((m.scores.wf1 - 11.0 / 15.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_predictions() {
        let truth = [0, 1, 2, 3, 0, 1, 2, 3];
        let m = compute_metrics(&truth, &truth, 4).unwrap();
        assert_eq!(m.scores, Scores { ua: 1.0, wa: 1.0, uf1: 1.0, wf1: 1.0 });
        let m = compute_metrics(&[2; 8], &truth, 4).unwrap();
        assert_eq!(m.scores.ua, 0.25);
    }

    #[test]
    fn zero_support_class_is_skipped() {
        let m = compute_metrics(&[0, 1], &[0, 1], 5).unwrap();
        assert_eq!(m.scores.ua, 1.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(compute_metrics(&[], &[], 2).is_err());
        assert!(compute_metrics(&[0], &[3], 2).is_err());
        assert!(auilc(&[1.0], &[0.0]).is_err());
        assert!(auilc(&[1.0, 1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn auilc_cases() {
        let rates: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
        assert!((auilc(&[0.7; 10], &rates).unwrap() - 0.63).abs() < 1e-12);
        assert!((auilc(&[1.0, 0.0], &[0.0, 0.9]).unwrap() - 0.45).abs() < 1e-15);
    }
}
