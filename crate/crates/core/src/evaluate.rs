//! Classification metrics: per-class precision/recall/F1, accuracy, macro
//! and weighted averages, plus the fixed-width report table.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary confusion counts with class 1 (spam) as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Samples whose true label is the given class.
    pub fn support(&self, class: u8) -> usize {
        match class {
            0 => self.tn + self.fp,
            _ => self.tp + self.fn_,
        }
    }
}

/// Exact confusion counts from parallel label/prediction slices.
pub fn confusion(labels: &[u8], predictions: &[u8]) -> Result<ConfusionCounts> {
    if labels.len() != predictions.len() {
        return Err(Error::LengthMismatch { left: labels.len(), right: predictions.len() });
    }
    let mut c = ConfusionCounts { tp: 0, fp: 0, tn: 0, fn_: 0 };
    for (&y, &p) in labels.iter().zip(predictions) {
        if y > 1 {
            return Err(Error::OutOfRange { what: "label", value: y as f64 });
        }
        if p > 1 {
            return Err(Error::OutOfRange { what: "prediction", value: p as f64 });
        }
        match (y, p) {
            (1, 1) => c.tp += 1,
            (0, 1) => c.fp += 1,
            (0, 0) => c.tn += 1,
            (1, 0) => c.fn_ += 1,
            _ => unreachable!(),
        }
    }
    Ok(c)
}

/// Per-class precision/recall/F1 with support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Full report in the shape of the result tables: one row per class,
/// then accuracy, macro average, weighted average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub class0: ClassMetrics,
    pub class1: ClassMetrics,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub total_support: usize,
}

fn rate(num: usize, den: usize) -> f64 {
    if den == 0 {
        log::warn!("degenerate 0/0 rate treated as 0");
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Derive the report from confusion counts.
pub fn metrics(counts: &ConfusionCounts) -> Result<MetricsReport> {
    let total = counts.total();
    if total == 0 {
        return Err(Error::EmptyCorpus);
    }
    // Class 1 (spam) is the positive class; class 0 mirrors it.
    let p1 = rate(counts.tp, counts.tp + counts.fp);
    let r1 = rate(counts.tp, counts.tp + counts.fn_);
    let p0 = rate(counts.tn, counts.tn + counts.fn_);
    let r0 = rate(counts.tn, counts.tn + counts.fp);
    let class0 =
        ClassMetrics { precision: p0, recall: r0, f1: f1_score(p0, r0), support: counts.support(0) };
    let class1 =
        ClassMetrics { precision: p1, recall: r1, f1: f1_score(p1, r1), support: counts.support(1) };
    let accuracy = (counts.tp + counts.tn) as f64 / total as f64;
    let w0 = class0.support as f64 / total as f64;
    let w1 = class1.support as f64 / total as f64;
    Ok(MetricsReport {
        class0,
        class1,
        accuracy,
        macro_precision: (p0 + p1) / 2.0,
        macro_recall: (r0 + r1) / 2.0,
        macro_f1: (class0.f1 + class1.f1) / 2.0,
        weighted_precision: w0 * p0 + w1 * p1,
        weighted_recall: w0 * r0 + w1 * r1,
        weighted_f1: w0 * class0.f1 + w1 * class1.f1,
        total_support: total,
    })
}

/// Round half away from zero to 4 decimals, the table cell convention.
pub fn round4(x: f64) -> f64 {
    (x * 10000.0).round() / 10000.0
}

fn cell(x: f64) -> String {
    format!("{:.4}", round4(x))
}

impl MetricsReport {
    /// Fixed-width table: class rows, accuracy, macro and weighted averages.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<14} {:>10} {:>10} {:>10} {:>10}\n",
            "Class/Metric", "Precision", "Recall", "F1-score", "Support"
        ));
        for (name, m) in [("0", &self.class0), ("1", &self.class1)] {
            out.push_str(&format!(
                "{:<14} {:>10} {:>10} {:>10} {:>10}\n",
                name,
                cell(m.precision),
                cell(m.recall),
                cell(m.f1),
                m.support
            ));
        }
        out.push_str(&format!(
            "{:<14} {:>10} {:>10} {:>10} {:>10}\n",
            "Accuracy", "", "", cell(self.accuracy), self.total_support
        ));
        out.push_str(&format!(
            "{:<14} {:>10} {:>10} {:>10} {:>10}\n",
            "Macro Avg",
            cell(self.macro_precision),
            cell(self.macro_recall),
            cell(self.macro_f1),
            self.total_support
        ));
        out.push_str(&format!(
            "{:<14} {:>10} {:>10} {:>10} {:>10}\n",
            "Weighted Avg",
            cell(self.weighted_precision),
            cell(self.weighted_recall),
            cell(self.weighted_f1),
            self.total_support
        ));
        out
    }

    /// Machine-readable JSON with full-precision values.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Weighted recall equals accuracy for binary single-label data; checked
    /// on every report emission.
    pub fn validate(&self) -> Result<()> {
        if (self.weighted_recall - self.accuracy).abs() > 1e-9 {
            return Err(Error::NonFinite("weighted recall must equal accuracy".into()));
        }
        Ok(())
    }
}

/// Predictions from probabilities under the `p >= threshold` spam rule.
pub fn threshold_predictions(probs: &[f64], threshold: f64) -> Vec<u8> {
    probs.iter().map(|&p| u8::from(p >= threshold)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_have_no_errors() {
        let labels = [1, 0, 1, 0, 1];
        let c = confusion(&labels, &labels).unwrap();
        assert_eq!(c.fp, 0);
        assert_eq!(c.fn_, 0);
        assert_eq!(c.tp, 3);
        assert_eq!(c.tn, 2);
    }

    #[test]
    fn inverted_predictions_have_no_hits() {
        let labels = [1u8, 0, 1, 0];
        let flipped: Vec<u8> = labels.iter().map(|&y| 1 - y).collect();
        let c = confusion(&labels, &flipped).unwrap();
        assert_eq!(c.tp, 0);
        assert_eq!(c.tn, 0);
        assert_eq!(c.fp, 2);
        assert_eq!(c.fn_, 2);
    }

    #[test]
    fn hand_counted_six_element_fixture() {
        let labels = [1, 1, 0, 0, 1, 0];
        let preds = [1, 0, 0, 1, 1, 0];
        let c = confusion(&labels, &preds).unwrap();
        assert_eq!((c.tp, c.fn_, c.fp, c.tn), (2, 1, 1, 2));
    }

    #[test]
    fn length_mismatch_is_rejected() {
        assert!(matches!(
            confusion(&[1, 0], &[1]),
            Err(Error::LengthMismatch { left: 2, right: 1 })
        ));
        assert!(confusion(&[2], &[0]).is_err());
    }

    #[test]
    fn published_class0_f1_cell() {
        // Harmonic mean of (0.9566, 0.9644) rounds to the 0.9605 cell.
        let f1 = f1_score(0.9566, 0.9644);
        assert!((f1 - 0.9605).abs() < 5e-5, "got {f1}");
    }

    #[test]
    fn all_correct_rates_are_one() {
        let labels = [1, 1, 1, 1, 1, 0, 0, 0, 0, 0];
        let c = confusion(&labels, &labels).unwrap();
        let m = metrics(&c).unwrap();
        for v in [
            m.class0.precision,
            m.class0.recall,
            m.class0.f1,
            m.class1.precision,
            m.class1.recall,
            m.class1.f1,
            m.accuracy,
            m.macro_f1,
            m.weighted_f1,
        ] {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn random_fixture_matches_definitional_recomputation() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let labels: Vec<u8> = (0..50).map(|_| rng.gen_range(0..2u8)).collect();
        let preds: Vec<u8> = (0..50).map(|_| rng.gen_range(0..2u8)).collect();
        let m = metrics(&confusion(&labels, &preds).unwrap()).unwrap();

        // Independent per-definition recomputation.
        let count = |y: u8, p: u8| {
            labels.iter().zip(&preds).filter(|&(&a, &b)| a == y && b == p).count() as f64
        };
        let (tp, fp, tn, fn_) = (count(1, 1), count(0, 1), count(0, 0), count(1, 0));
        let p1 = tp / (tp + fp);
        let r1 = tp / (tp + fn_);
        let p0 = tn / (tn + fn_);
        let r0 = tn / (tn + fp);
        assert!((m.class1.precision - p1).abs() < 1e-12);
        assert!((m.class1.recall - r1).abs() < 1e-12);
        assert!((m.class0.precision - p0).abs() < 1e-12);
        assert!((m.class0.recall - r0).abs() < 1e-12);
        assert!((m.accuracy - (tp + tn) / 50.0).abs() < 1e-12);
        assert!((m.macro_f1 - (f1_score(p0, r0) + f1_score(p1, r1)) / 2.0).abs() < 1e-12);
        let w0 = (tn + fp) / 50.0;
        let w1 = (tp + fn_) / 50.0;
        assert!((m.weighted_f1 - (w0 * f1_score(p0, r0) + w1 * f1_score(p1, r1))).abs() < 1e-12);
    }

    #[test]
    fn weighted_recall_equals_accuracy() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let labels: Vec<u8> = (0..30).map(|_| rng.gen_range(0..2u8)).collect();
            let preds: Vec<u8> = (0..30).map(|_| rng.gen_range(0..2u8)).collect();
            if labels.iter().all(|&l| l == labels[0]) {
                continue;
            }
            let m = metrics(&confusion(&labels, &preds).unwrap()).unwrap();
            assert!((m.weighted_recall - m.accuracy).abs() < 1e-12);
            m.validate().unwrap();
        }
    }

    #[test]
    fn degenerate_rates_are_zero() {
        // No predicted positives: precision(1) is 0/0, defined as 0.
        let labels = [1u8, 1, 0];
        let preds = [0u8, 0, 0];
        let m = metrics(&confusion(&labels, &preds).unwrap()).unwrap();
        assert_eq!(m.class1.precision, 0.0);
        assert_eq!(m.class1.f1, 0.0);
    }

    #[test]
    fn macro_f1_symmetric_under_relabeling_with_equal_support() {
        let labels = [1u8, 1, 0, 0];
        let preds = [1u8, 0, 1, 0];
        let m = metrics(&confusion(&labels, &preds).unwrap()).unwrap();
        let flipped_labels: Vec<u8> = labels.iter().map(|&y| 1 - y).collect();
        let flipped_preds: Vec<u8> = preds.iter().map(|&p| 1 - p).collect();
        let mf = metrics(&confusion(&flipped_labels, &flipped_preds).unwrap()).unwrap();
        assert!((m.macro_f1 - mf.macro_f1).abs() < 1e-12);
    }

    #[test]
    fn table_rounds_half_away_from_zero() {
        assert_eq!(round4(0.96045), 0.9605);
        assert_eq!(round4(0.12345), 0.1235);
        assert_eq!(cell(0.96045), "0.9605");
    }

    #[test]
    fn table_has_expected_row_order() {
        let labels = [1u8, 0, 1, 0];
        let m = metrics(&confusion(&labels, &labels).unwrap()).unwrap();
        let table = m.to_table();
        let rows: Vec<&str> = table.lines().collect();
        assert!(rows[1].starts_with('0'));
        assert!(rows[2].starts_with('1'));
        assert!(rows[3].starts_with("Accuracy"));
        assert!(rows[4].starts_with("Macro Avg"));
        assert!(rows[5].starts_with("Weighted Avg"));
    }

    #[test]
    fn threshold_rule_is_inclusive() {
        let preds = threshold_predictions(&[0.5, 0.49999, 0.7], 0.5);
        assert_eq!(preds, vec![1, 0, 1]);
    }
}
