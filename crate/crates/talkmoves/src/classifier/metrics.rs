//! Confusion counts and precision/recall/F1.

use serde::{Deserialize, Serialize};

use crate::annotation::TalkMove;

/// Evaluation result for one talk-move model.
///
/// Zero-denominator convention: precision, recall, and F1 are reported as 0
/// when their denominators are 0, with `zero_denominator` set so degenerate
/// test sets are visible rather than silently perfect or crashed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub talk_move: TalkMove,
    pub true_positive: usize,
    pub false_positive: usize,
    pub false_negative: usize,
    pub true_negative: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub zero_denominator: bool,
}

impl EvalReport {
    pub fn from_counts(
        talk_move: TalkMove,
        tp: usize,
        fp: usize,
        fn_: usize,
        tn: usize,
    ) -> EvalReport {
        let mut zero = false;
        let precision = if tp + fp > 0 {
            tp as f64 / (tp + fp) as f64
        } else {
            zero = true;
            0.0
        };
        let recall = if tp + fn_ > 0 {
            tp as f64 / (tp + fn_) as f64
        } else {
            zero = true;
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            zero = true;
            0.0
        };
        EvalReport {
            talk_move,
            true_positive: tp,
            false_positive: fp,
            false_negative: fn_,
            true_negative: tn,
            precision,
            recall,
            f1,
            zero_denominator: zero,
        }
    }

    pub fn n(&self) -> usize {
        self.true_positive + self.false_positive + self.false_negative + self.true_negative
    }
}
