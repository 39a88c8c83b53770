//! Classification metrics.

use crate::error::{Error, Result};

/// Per-class F1 for classes that occur in labels or predictions.
///
/// `None` marks a class with no true and no predicted instances; such classes
/// are left out of the macro average. A class with true instances that is
/// never predicted scores 0.
pub fn per_class_f1(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<Vec<Option<f64>>> {
    if predictions.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fneg = vec![0usize; num_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if p >= num_classes || l >= num_classes {
            return Err(Error::InvalidArgument(format!(
                "class index out of range for {num_classes} classes"
            )));
        }
        if p == l {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fneg[l] += 1;
        }
    }
    Ok((0..num_classes)
        .map(|k| {
            let denom = 2 * tp[k] + fp[k] + fneg[k];
            (denom > 0).then(|| 2.0 * tp[k] as f64 / denom as f64)
        })
        .collect())
}

/// Unweighted mean of per-class F1 scores; 0 for empty input.
pub fn macro_f1(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<f64> {
    let scores: Vec<f64> = per_class_f1(predictions, labels, num_classes)?
        .into_iter()
        .flatten()
        .collect();
    if scores.is_empty() {
        return Ok(0.0);
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Evaluation summary for one labeled dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub macro_f1: f64,
    pub per_class_f1: Vec<Option<f64>>,
    pub accuracy: f64,
}

impl Metrics {
    pub fn compute(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<Self> {
        let per_class = per_class_f1(predictions, labels, num_classes)?;
        let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
        Ok(Self {
            macro_f1: macro_f1(predictions, labels, num_classes)?,
            per_class_f1: per_class,
            accuracy: if labels.is_empty() {
                0.0
            } else {
                correct as f64 / labels.len() as f64
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect() {
        let y = [0, 1, 2, 3, 4, 5, 0, 1];
        assert_eq!(macro_f1(&y, &y, 6).unwrap(), 1.0);
    }

    #[test]
    fn two_class_hand_case() {
        // Confusion: class 0 tp=1 fp=1 fn=1 -> 0.5, class 1 likewise.
        let f = per_class_f1(&[0, 1, 0, 1], &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(f, vec![Some(0.5), Some(0.5)]);
        assert_eq!(macro_f1(&[0, 1, 0, 1], &[0, 0, 1, 1], 2).unwrap(), 0.5);
    }

    #[test]
    fn constant_prediction_on_balanced_labels() {
        // Predict class 2 everywhere over 6 balanced classes (n = 60):
        // tp = 10, fp = 50, fn = 0  ->  F1 = 20 / 70 = 2/7; others 0.
        let labels: Vec<usize> = (0..60).map(|i| i % 6).collect();
        let preds = vec![2; 60];
        let f = macro_f1(&preds, &labels, 6).unwrap();
        assert!((f - (2.0 / 7.0) / 6.0).abs() < 1e-15);
    }

    #[test]
    fn absent_classes_are_skipped() {
        // Class 2 is neither present nor predicted.
        assert_eq!(macro_f1(&[0, 1], &[0, 1], 3).unwrap(), 1.0);
        let f = per_class_f1(&[0, 0], &[0, 1], 3).unwrap();
        assert_eq!(f[1], Some(0.0));
        assert_eq!(f[2], None);
    }

    #[test]
    fn errors() {
        assert!(macro_f1(&[0], &[0, 1], 2).is_err());
        assert!(macro_f1(&[2], &[0], 2).is_err());
        assert_eq!(macro_f1(&[], &[], 2).unwrap(), 0.0);
    }

    #[test]
    fn accuracy() {
        let m = Metrics::compute(&[0, 1, 1, 1], &[0, 1, 0, 1], 2).unwrap();
        assert_eq!(m.accuracy, 0.75);
    }
}
