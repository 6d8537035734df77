//! Classification metrics shared by both training stages.

use log::warn;

use crate::error::{Error, Result};

/// Square count matrix, rows are the true class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self { classes, counts: vec![0; classes * classes] }
    }

    pub fn from_predictions(classes: usize, truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Shape(format!("{} labels vs {} predictions", truth.len(), predicted.len())));
        }
        let mut cm = Self::new(classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            cm.record(t, p)?;
        }
        Ok(cm)
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let classes = rows.len();
        if rows.iter().any(|r| r.len() != classes) {
            return Err(Error::Shape("confusion matrix must be square".into()));
        }
        Ok(Self { classes, counts: rows.concat() })
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        if truth >= self.classes || predicted >= self.classes {
            return Err(Error::InvalidInput(format!(
                "class pair ({truth}, {predicted}) outside {} classes",
                self.classes
            )));
        }
        self.counts[truth * self.classes + predicted] += 1;
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        (0..self.classes).map(|p| self.get(class, p)).sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.classes.max(1)).map(<[u64]>::to_vec).collect()
    }

    /// (tp, fp, fn) for one class treated as positive.
    pub fn class_counts(&self, class: usize) -> (u64, u64, u64) {
        let tp = self.get(class, class);
        let fp = (0..self.classes).filter(|&t| t != class).map(|t| self.get(t, class)).sum();
        let fn_ = (0..self.classes).filter(|&p| p != class).map(|p| self.get(class, p)).sum();
        (tp, fp, fn_)
    }
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::UndefinedMetric("accuracy of an empty confusion matrix".into()));
    }
    let trace: u64 = (0..cm.classes()).map(|c| cm.get(c, c)).sum();
    Ok(trace as f64 / total as f64)
}

/// F1 = 2TP / (2TP + FP + FN); zero when the denominator is zero.
pub fn f1_binary(tp: u64, fp: u64, fn_: u64) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 { 0.0 } else { (2 * tp) as f64 / denom as f64 }
}

/// Unweighted mean of per-class F1. Classes without support score 0.
pub fn macro_f1(cm: &ConfusionMatrix) -> Result<f64> {
    if cm.total() == 0 {
        return Err(Error::UndefinedMetric("macro F1 of an empty confusion matrix".into()));
    }
    let mut sum = 0.0;
    for class in 0..cm.classes() {
        if cm.support(class) == 0 {
            warn!("class {class} has no support; its F1 counts as 0");
            continue;
        }
        let (tp, fp, fn_) = cm.class_counts(class);
        sum += f1_binary(tp, fp, fn_);
    }
    Ok(sum / cm.classes() as f64)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::UndefinedMetric("mean of no values".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Accuracy and F1 of one one-vs-all detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinaryScore {
    pub accuracy: f64,
    pub f1: f64,
}

/// Score binary decisions (`true` = positive).
pub fn binary_score(truth: &[bool], predicted: &[bool]) -> Result<BinaryScore> {
    let t: Vec<usize> = truth.iter().map(|&b| usize::from(b)).collect();
    let p: Vec<usize> = predicted.iter().map(|&b| usize::from(b)).collect();
    let cm = ConfusionMatrix::from_predictions(2, &t, &p)?;
    let (tp, fp, fn_) = cm.class_counts(1);
    Ok(BinaryScore { accuracy: accuracy(&cm)?, f1: f1_binary(tp, fp, fn_) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_is_perfect() {
        let cm = ConfusionMatrix::from_rows(&[vec![3, 0, 0], vec![0, 5, 0], vec![0, 0, 1]]).unwrap();
        assert_eq!(accuracy(&cm).unwrap(), 1.0);
        assert_eq!(macro_f1(&cm).unwrap(), 1.0);
    }

    #[test]
    fn f1_closed_form() {
        assert!((f1_binary(2, 1, 1) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(f1_binary(0, 0, 0), 0.0);
    }

    #[test]
    fn two_class_hand_expansion() {
        // Class 0: tp 3, fp 1, fn 1 -> 6/8; class 1 likewise.
        let cm = ConfusionMatrix::from_rows(&[vec![3, 1], vec![1, 3]]).unwrap();
        assert_eq!(accuracy(&cm).unwrap(), 0.75);
        assert!((macro_f1(&cm).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn zero_support_class_scores_zero() {
        let cm = ConfusionMatrix::from_rows(&[vec![2, 0, 0], vec![0, 2, 0], vec![0, 0, 0]]).unwrap();
        assert!((macro_f1(&cm).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_matrix_is_undefined() {
        assert!(accuracy(&ConfusionMatrix::new(2)).is_err());
        assert!(macro_f1(&ConfusionMatrix::new(2)).is_err());
    }

    #[test]
    fn row_sums_are_support() {
        let truth = [0, 0, 1, 2, 2, 2];
        let pred = [0, 1, 1, 2, 0, 2];
        let mut cm = ConfusionMatrix::from_predictions(3, &truth, &pred).unwrap();
        for (c, expect) in [(0, 2), (1, 1), (2, 3)] {
            assert_eq!(cm.rows()[c].iter().sum::<u64>(), expect);
        }
        assert!(cm.record(3, 0).is_err());
    }

    #[test]
    fn mean_std_cases() {
        assert_eq!(mean_std(&[1.0, 1.0, 1.0]).unwrap(), (1.0, 0.0));
        assert_eq!(mean_std(&[0.0, 1.0]).unwrap(), (0.5, 0.5));
        assert!(mean_std(&[]).is_err());
        let folds = [0.91, 0.88, 0.93, 0.90, 0.87, 0.95, 0.89, 0.92, 0.94, 0.90];
        let (m, s) = mean_std(&folds).unwrap();
        // Spreadsheet-style recount: AVERAGE and STDEV.P.
        assert!((m - 0.909).abs() < 1e-12);
        let sq: f64 = folds.iter().map(|v| (v - 0.909) * (v - 0.909)).sum();
        assert!((s - (sq / 10.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn macro_f1_is_relabel_invariant() {
        let truth = [0, 1, 2, 2, 1, 0, 0, 2];
        let pred = [0, 2, 2, 1, 1, 0, 1, 2];
        let perm = [2, 0, 1];
        let a = ConfusionMatrix::from_predictions(3, &truth, &pred).unwrap();
        let t2: Vec<usize> = truth.iter().map(|&c| perm[c]).collect();
        let p2: Vec<usize> = pred.iter().map(|&c| perm[c]).collect();
        let b = ConfusionMatrix::from_predictions(3, &t2, &p2).unwrap();
        assert!((macro_f1(&a).unwrap() - macro_f1(&b).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn binary_majority_predictor() {
        let truth: Vec<bool> = (0..7).map(|i| i == 3).collect();
        let s = binary_score(&truth, &[false; 7]).unwrap();
        assert!((s.accuracy - 6.0 / 7.0).abs() < 1e-15);
        assert_eq!(s.f1, 0.0);
    }
}
