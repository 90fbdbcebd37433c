//! Confusion-matrix segmentation metrics.
//!
//! All metrics use the zero-denominator convention of 0: an all-negative
//! prediction on an all-negative mask scores accuracy 1 but F-score and
//! Dice 0. Evaluation-set metrics are micro-averaged (one pooled
//! confusion over all pixels).

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Pixel-level confusion counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub true_neg: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }

    /// Pool counts from another confusion (micro-averaging).
    pub fn merge(&mut self, other: &Confusion) {
        self.true_pos += other.true_pos;
        self.false_pos += other.false_pos;
        self.false_neg += other.false_neg;
        self.true_neg += other.true_neg;
    }

    pub fn precision(&self) -> f64 {
        ratio(self.true_pos, self.true_pos + self.false_pos)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.true_pos, self.true_pos + self.false_neg)
    }

    /// Harmonic mean of precision and recall: `2PR / (P + R)`, 0 when any
    /// intermediate is undefined.
    pub fn f_score(&self) -> f64 {
        if self.true_pos + self.false_pos == 0 || self.true_pos + self.false_neg == 0 {
            return 0.0;
        }
        let p = self.precision();
        let r = self.recall();
        if p + r == 0.0 {
            return 0.0;
        }
        2.0 * p * r / (p + r)
    }

    pub fn dice(&self) -> f64 {
        ratio(2 * self.true_pos, 2 * self.true_pos + self.false_pos + self.false_neg)
    }

    pub fn iou(&self) -> f64 {
        ratio(self.true_pos, self.true_pos + self.false_pos + self.false_neg)
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.true_pos + self.true_neg, self.total())
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Tally a confusion matrix over all pixels: prediction = `prob >=
/// threshold`. The mask must be exactly binary.
pub fn confusion(pred_prob: &Tensor, mask: &Tensor, threshold: f64) -> Result<Confusion> {
    if pred_prob.shape() != mask.shape() {
        return Err(Error::shape(
            "confusion",
            format!("pred {} vs mask {}", pred_prob.shape(), mask.shape()),
        ));
    }
    let mut c = Confusion::default();
    for (&p, &m) in pred_prob.data().iter().zip(mask.data()) {
        if m != 0.0 && m != 1.0 {
            return Err(Error::InvalidData(format!(
                "mask contains non-binary value {m}"
            )));
        }
        let pred = p >= threshold;
        let pos = m == 1.0;
        match (pred, pos) {
            (true, true) => c.true_pos += 1,
            (true, false) => c.false_pos += 1,
            (false, true) => c.false_neg += 1,
            (false, false) => c.true_neg += 1,
        }
    }
    Ok(c)
}
