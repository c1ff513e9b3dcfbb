//! Accuracy, macro-averaged F-score, confusion matrices, and multi-trial
//! aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// K x K count matrix; rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        if k == 0 || counts.iter().any(|row| row.len() != k) {
            return Err(Error::ShapeMismatch(
                "confusion matrix must be square and nonempty".into(),
            ));
        }
        Ok(Self { counts })
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize], num_classes: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} true labels vs {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut counts = vec![vec![0u64; num_classes]; num_classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= num_classes || p >= num_classes {
                return Err(Error::ShapeMismatch(format!(
                    "label pair ({t}, {p}) out of range for {num_classes} classes"
                )));
            }
            counts[t][p] += 1;
        }
        Self::new(counts)
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

/// Fraction of correct predictions: trace / total.
pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::UndefinedMetric(
            "accuracy of an empty confusion matrix".into(),
        ));
    }
    let trace: u64 = (0..cm.num_classes()).map(|i| cm.counts()[i][i]).sum();
    Ok(trace as f64 / total as f64)
}

/// Unweighted mean over classes of per-class F1 = 2PR / (P + R).
/// A class with no true and no predicted examples contributes 0.
pub fn macro_f1(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::UndefinedMetric(
            "macro F1 of an empty confusion matrix".into(),
        ));
    }
    let k = cm.num_classes();
    let mut sum = 0.0;
    for class in 0..k {
        let tp = cm.counts()[class][class] as f64;
        let pred: f64 = (0..k).map(|r| cm.counts()[r][class] as f64).sum();
        let truth: f64 = cm.counts()[class].iter().map(|&c| c as f64).sum();
        let precision = if pred > 0.0 { tp / pred } else { 0.0 };
        let recall = if truth > 0.0 { tp / truth } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        sum += f1;
    }
    Ok(sum / k as f64)
}

/// Metrics of one trial on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub trial_id: usize,
    pub split: String,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub confusion: ConfusionMatrix,
}

impl TrialReport {
    pub fn from_confusion(trial_id: usize, split: &str, cm: ConfusionMatrix) -> Result<Self> {
        Ok(Self {
            trial_id,
            split: split.to_string(),
            accuracy: accuracy(&cm)?,
            macro_f1: macro_f1(&cm)?,
            confusion: cm,
        })
    }
}

/// Mean and sample standard deviation of one metric over trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
}

impl MetricSummary {
    fn of(values: &[f64]) -> Self {
        // Summing in sorted order makes aggregation insensitive to trial order.
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let mean = sorted.iter().sum::<f64>() / n;
        let std = if sorted.len() < 2 {
            0.0
        } else {
            (sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, std }
    }

    /// Percent-scale "mean(+-std)" rendering, e.g. `80.9(+-1.5)`.
    pub fn format_percent(&self) -> String {
        format!("{:.1}(\u{00b1}{:.1})", self.mean * 100.0, self.std * 100.0)
    }
}

/// Per-split aggregate over trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub split: String,
    pub trials: usize,
    pub accuracy: MetricSummary,
    pub macro_f1: MetricSummary,
}

/// Groups reports by split name and aggregates each metric.
pub fn aggregate_trials(reports: &[TrialReport]) -> Result<Vec<SplitSummary>> {
    if reports.is_empty() {
        return Err(Error::UndefinedMetric("no trial reports".into()));
    }
    let mut split_names = Vec::new();
    for r in reports {
        if !split_names.contains(&r.split) {
            split_names.push(r.split.clone());
        }
    }
    let mut out = Vec::new();
    for split in split_names {
        let accs: Vec<f64> = reports
            .iter()
            .filter(|r| r.split == split)
            .map(|r| r.accuracy)
            .collect();
        let f1s: Vec<f64> = reports
            .iter()
            .filter(|r| r.split == split)
            .map(|r| r.macro_f1)
            .collect();
        out.push(SplitSummary {
            split,
            trials: accs.len(),
            accuracy: MetricSummary::of(&accs),
            macro_f1: MetricSummary::of(&f1s),
        });
    }
    Ok(out)
}

/// One report per line, JSON-encoded.
pub fn reports_to_jsonl(reports: &[TrialReport]) -> Result<String> {
    let mut out = String::new();
    for r in reports {
        out.push_str(
            &serde_json::to_string(r).map_err(|e| Error::Parse(format!("report encode: {e}")))?,
        );
        out.push('\n');
    }
    Ok(out)
}

/// Human-readable summary table.
pub fn format_summary_table(summaries: &[SplitSummary]) -> String {
    let mut out = String::from("split    trials  accuracy      macro-F1\n");
    for s in summaries {
        out.push_str(&format!(
            "{:<8} {:<7} {:<13} {}\n",
            s.split,
            s.trials,
            s.accuracy.format_percent(),
            s.macro_f1.format_percent()
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cm(counts: Vec<Vec<u64>>) -> ConfusionMatrix {
        ConfusionMatrix::new(counts).unwrap()
    }

    #[test]
    fn accuracy_of_diagonal_is_one() {
        assert_eq!(accuracy(&cm(vec![vec![5, 0], vec![0, 5]])).unwrap(), 1.0);
    }

    #[test]
    fn accuracy_collapsed_predictor() {
        // Balanced two classes, everything predicted class 0.
        let m = cm(vec![vec![5, 0], vec![5, 0]]);
        assert_eq!(accuracy(&m).unwrap(), 0.5);
    }

    #[test]
    fn accuracy_mixed_counts() {
        let m = cm(vec![vec![3, 1], vec![2, 4]]);
        assert!((accuracy(&m).unwrap() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn accuracy_of_empty_matrix_is_undefined() {
        let m = cm(vec![vec![0, 0], vec![0, 0]]);
        assert!(matches!(accuracy(&m), Err(Error::UndefinedMetric(_))));
        assert!(matches!(macro_f1(&m), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn macro_f1_perfect_diagonal() {
        assert_eq!(macro_f1(&cm(vec![vec![7, 0], vec![0, 3]])).unwrap(), 1.0);
    }

    #[test]
    fn macro_f1_collapsed_predictor() {
        // Class A: P=0.5, R=1 -> F1=2/3; class B: F1=0; macro = 1/3.
        let m = cm(vec![vec![5, 0], vec![5, 0]]);
        assert!((macro_f1(&m).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn macro_f1_mixed_counts() {
        // Per-class F1: 2/3 and 8/11, macro = 23/33.
        let m = cm(vec![vec![3, 1], vec![2, 4]]);
        assert!((macro_f1(&m).unwrap() - 23.0 / 33.0).abs() < 1e-12);
    }

    #[test]
    fn macro_f1_equals_accuracy_on_balanced_diagonal() {
        let m = cm(vec![vec![4, 0, 0], vec![0, 4, 0], vec![0, 0, 4]]);
        assert_eq!(macro_f1(&m).unwrap(), accuracy(&m).unwrap());
    }

    #[test]
    fn metrics_stay_in_unit_interval() {
        let m = cm(vec![vec![1, 9, 3], vec![0, 0, 7], vec![2, 2, 2]]);
        let a = accuracy(&m).unwrap();
        let f = macro_f1(&m).unwrap();
        assert!((0.0..=1.0).contains(&a));
        assert!((0.0..=1.0).contains(&f));
    }

    #[test]
    fn aggregate_single_trial_has_zero_std() {
        let r = TrialReport::from_confusion(0, "test", cm(vec![vec![4, 1], vec![1, 4]])).unwrap();
        let summary = aggregate_trials(&[r]).unwrap();
        assert_eq!(summary[0].trials, 1);
        assert_eq!(summary[0].accuracy.std, 0.0);
    }

    #[test]
    fn aggregate_two_trials() {
        let mut r1 = TrialReport::from_confusion(0, "test", cm(vec![vec![1, 0], vec![0, 1]])).unwrap();
        let mut r2 = r1.clone();
        r1.accuracy = 0.7;
        r2.accuracy = 0.9;
        r2.trial_id = 1;
        let summary = aggregate_trials(&[r1, r2]).unwrap();
        assert!((summary[0].accuracy.mean - 0.8).abs() < 1e-15);
        assert!((summary[0].accuracy.std - 0.02f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn aggregation_is_permutation_invariant() {
        let mk = |id: usize, acc: f64| {
            let mut r =
                TrialReport::from_confusion(id, "valid", cm(vec![vec![1, 0], vec![0, 1]])).unwrap();
            r.accuracy = acc;
            r
        };
        let a = aggregate_trials(&[mk(0, 0.5), mk(1, 0.7), mk(2, 0.9)]).unwrap();
        let b = aggregate_trials(&[mk(2, 0.9), mk(0, 0.5), mk(1, 0.7)]).unwrap();
        assert_eq!(a[0].accuracy, b[0].accuracy);
    }

    #[test]
    fn percent_formatting() {
        let s = MetricSummary {
            mean: 0.809,
            std: 0.015,
        };
        assert_eq!(s.format_percent(), "80.9(\u{00b1}1.5)");
    }

    #[test]
    fn jsonl_has_one_line_per_report() {
        let r = TrialReport::from_confusion(0, "test", cm(vec![vec![4, 1], vec![1, 4]])).unwrap();
        let text = reports_to_jsonl(&[r.clone(), r]).unwrap();
        assert_eq!(text.lines().count(), 2);
        let back: TrialReport = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(back.split, "test");
    }
}
