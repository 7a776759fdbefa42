//! Classification metrics: per-class precision/recall/F1, accuracy, and
//! confusion matrices. Female is coded as the positive class (label 1).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Confusion counts with female as positive.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn add(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision_f: f64,
    pub recall_f: f64,
    pub f1_f: f64,
    pub precision_m: f64,
    pub recall_m: f64,
    pub f1_m: f64,
    /// Set when any precision/recall had a zero denominator (reported as 0).
    pub zero_division: bool,
    pub confusion: Confusion,
}

fn ratio(num: usize, den: usize, flag: &mut bool) -> f64 {
    if den == 0 {
        *flag = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64, flag: &mut bool) -> f64 {
    if p + r == 0.0 {
        *flag = true;
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Metrics from probabilistic predictions thresholded at 0.5 against 0/1
/// labels (1 = female).
pub fn evaluate(predictions: &[f64], labels: &[f64]) -> Result<Metrics> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch { left: predictions.len(), right: labels.len() });
    }
    if predictions.is_empty() {
        return Err(Error::DegenerateInput("cannot evaluate zero predictions".into()));
    }
    let mut c = Confusion::default();
    for (&p, &y) in predictions.iter().zip(labels) {
        let pred_f = p >= 0.5;
        let is_f = y >= 0.5;
        match (pred_f, is_f) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(metrics_from_confusion(&c))
}

pub fn metrics_from_confusion(c: &Confusion) -> Metrics {
    let mut flag = false;
    let precision_f = ratio(c.tp, c.tp + c.fp, &mut flag);
    let recall_f = ratio(c.tp, c.tp + c.fn_, &mut flag);
    let precision_m = ratio(c.tn, c.tn + c.fn_, &mut flag);
    let recall_m = ratio(c.tn, c.tn + c.fp, &mut flag);
    Metrics {
        accuracy: (c.tp + c.tn) as f64 / c.total() as f64,
        precision_f,
        recall_f,
        f1_f: f1(precision_f, recall_f, &mut flag),
        precision_m,
        recall_m,
        f1_m: f1(precision_m, recall_m, &mut flag),
        zero_division: flag,
        confusion: *c,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_score_one_everywhere() {
        let labels = vec![1.0, 0.0, 1.0, 0.0];
        let preds = vec![0.9, 0.1, 0.8, 0.2];
        let m = evaluate(&preds, &labels).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.precision_f, 1.0);
        assert_eq!(m.recall_f, 1.0);
        assert_eq!(m.f1_f, 1.0);
        assert_eq!(m.precision_m, 1.0);
        assert_eq!(m.recall_m, 1.0);
        assert!(!m.zero_division);
    }

    #[test]
    fn hand_computed_confusion() {
        // TP=29, FN=1, FP=2, TN=28 for the female class.
        let mut preds = Vec::new();
        let mut labels = Vec::new();
        preds.extend(vec![0.9; 29]);
        labels.extend(vec![1.0; 29]); // TP
        preds.extend(vec![0.1; 1]);
        labels.extend(vec![1.0; 1]); // FN
        preds.extend(vec![0.9; 2]);
        labels.extend(vec![0.0; 2]); // FP
        preds.extend(vec![0.1; 28]);
        labels.extend(vec![0.0; 28]); // TN
        let m = evaluate(&preds, &labels).unwrap();
        assert!((m.precision_f - 29.0 / 31.0).abs() < 1e-12);
        assert!((m.recall_f - 29.0 / 30.0).abs() < 1e-12);
        assert!((m.accuracy - 57.0 / 60.0).abs() < 1e-12);
    }

    #[test]
    fn one_sided_predictions_split_recalls() {
        let labels = vec![1.0, 1.0, 0.0, 0.0];
        let preds = vec![0.9, 0.9, 0.9, 0.9]; // everything predicted female
        let m = evaluate(&preds, &labels).unwrap();
        assert_eq!(m.recall_f, 1.0);
        assert_eq!(m.recall_m, 0.0);
        assert!(m.zero_division, "male precision has a zero denominator");
    }

    #[test]
    fn accuracy_equals_trace_over_total() {
        let labels = vec![1.0, 0.0, 1.0, 0.0, 1.0];
        let preds = vec![0.9, 0.9, 0.1, 0.1, 0.8];
        let m = evaluate(&preds, &labels).unwrap();
        let c = m.confusion;
        assert_eq!(m.accuracy, (c.tp + c.tn) as f64 / c.total() as f64);
    }

    #[test]
    fn metrics_are_invariant_to_example_order() {
        let labels = vec![1.0, 0.0, 1.0, 0.0, 1.0, 1.0];
        let preds = vec![0.9, 0.2, 0.4, 0.7, 0.6, 0.8];
        let base = evaluate(&preds, &labels).unwrap();
        let perm = [3usize, 0, 5, 1, 4, 2];
        let p2: Vec<f64> = perm.iter().map(|&i| preds[i]).collect();
        let l2: Vec<f64> = perm.iter().map(|&i| labels[i]).collect();
        let shuffled = evaluate(&p2, &l2).unwrap();
        assert_eq!(base, shuffled);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        assert!(matches!(
            evaluate(&[0.5], &[1.0, 0.0]),
            Err(Error::LengthMismatch { .. })
        ));
    }
}
