//! Confusion counts and the macro F1 / accuracy metric set.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::voting::CaseVerdict;

/// Binary confusion counts with COVID as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
    pub true_neg: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }
}

/// F1 of one class from its (tp, fp, fn) view; the convention for empty
/// denominators: a class nobody predicted and nobody held is perfect (1),
/// any other zero denominator scores 0.
fn class_f1(tp: usize, fp: usize, fns: usize) -> f64 {
    let denom = 2 * tp + fp + fns;
    if denom == 0 {
        return 1.0;
    }
    2.0 * tp as f64 / denom as f64
}

/// Unweighted mean of the positive-class and negative-class F1 scores.
pub fn macro_f1(c: &Confusion) -> Result<f64> {
    if c.total() == 0 {
        return Err(Error::Config("macro F1 over an empty confusion table".into()));
    }
    let pos = class_f1(c.true_pos, c.false_pos, c.false_neg);
    // the negative class sees mirrored roles
    let neg = class_f1(c.true_neg, c.false_neg, c.false_pos);
    Ok(0.5 * (pos + neg))
}

/// Recall of one class; an absent class is vacuously 1.
fn recall(hit: usize, miss: usize) -> f64 {
    if hit + miss == 0 {
        return 1.0;
    }
    hit as f64 / (hit + miss) as f64
}

/// Full evaluation outcome over a labeled dataset.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub macro_f1: f64,
    /// Recall on the positive class.
    pub positive_accuracy: f64,
    /// Recall on the negative class.
    pub negative_accuracy: f64,
    pub overall_accuracy: f64,
    pub confusion: Confusion,
    pub cases_evaluated: usize,
    pub skipped_unlabeled: usize,
    pub verdicts: Vec<CaseVerdict>,
}

impl EvalReport {
    pub fn from_confusion(
        confusion: Confusion,
        skipped_unlabeled: usize,
        verdicts: Vec<CaseVerdict>,
    ) -> Result<EvalReport> {
        let total = confusion.total();
        Ok(EvalReport {
            macro_f1: macro_f1(&confusion)?,
            positive_accuracy: recall(confusion.true_pos, confusion.false_neg),
            negative_accuracy: recall(confusion.true_neg, confusion.false_pos),
            overall_accuracy: (confusion.true_pos + confusion.true_neg) as f64 / total as f64,
            confusion,
            cases_evaluated: total,
            skipped_unlabeled,
            verdicts,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conf(tp: usize, fp: usize, fns: usize, tn: usize) -> Confusion {
        Confusion {
            true_pos: tp,
            false_pos: fp,
            false_neg: fns,
            true_neg: tn,
        }
    }

    #[test]
    fn perfect_diagonal_scores_one() {
        assert_eq!(macro_f1(&conf(5, 0, 0, 5)).unwrap(), 1.0);
    }

    #[test]
    fn everything_wrong_scores_zero() {
        assert_eq!(macro_f1(&conf(0, 4, 6, 0)).unwrap(), 0.0);
    }

    #[test]
    fn mixed_table_hand_computation() {
        // F1_pos = 2*2/(4+1+1) = 2/3, F1_neg = 2*2/(4+1+1) = 2/3
        let f1 = macro_f1(&conf(2, 1, 1, 2)).unwrap();
        assert!((f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn one_sided_dataset_uses_conventions() {
        // all cases negative, all predicted negative: positive class is
        // vacuously perfect
        assert_eq!(macro_f1(&conf(0, 0, 0, 8)).unwrap(), 1.0);
        // all negative but one predicted positive: F1_pos = 0
        let f1 = macro_f1(&conf(0, 1, 0, 7)).unwrap();
        let neg = 2.0 * 7.0 / (14.0 + 1.0);
        assert!((f1 - 0.5 * neg).abs() < 1e-12);
    }

    #[test]
    fn empty_table_is_rejected() {
        assert!(macro_f1(&conf(0, 0, 0, 0)).is_err());
    }

    #[test]
    fn report_rates_recompute_from_counts() {
        let c = conf(7, 2, 3, 8);
        let r = EvalReport::from_confusion(c, 1, Vec::new()).unwrap();
        assert!((r.positive_accuracy - 0.7).abs() < 1e-12);
        assert!((r.negative_accuracy - 0.8).abs() < 1e-12);
        assert!((r.overall_accuracy - 15.0 / 20.0).abs() < 1e-12);
        assert_eq!(r.cases_evaluated, 20);
        assert!((r.macro_f1 - macro_f1(&c).unwrap()).abs() < 1e-15);
        for rate in [r.macro_f1, r.positive_accuracy, r.negative_accuracy, r.overall_accuracy] {
            assert!((0.0..=1.0).contains(&rate));
        }
    }
}
