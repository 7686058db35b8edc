use core::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use super::masks::{label, BinaryMask, GroundTruthMask};
use crate::error::{Error, Result};

/// Pixel counts over the scored region of one or more frames.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionReport {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub pwc: f64,
}

impl ConfusionReport {
    pub const fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// `None` when no pixel was scored.
    ///
    /// Empty ratios are reported as 0: precision when `tp + fp = 0`, recall
    /// when `tp + fn = 0`, F when both are 0.
    pub fn metrics(&self) -> Option<Metrics> {
        let total = self.total();
        if total == 0 {
            return None;
        }
        let (tp, fp, fn_) = (self.tp as f64, self.fp as f64, self.fn_ as f64);
        let ratio = |num: f64, den: f64| if den == 0.0 { 0.0 } else { num / den };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        // 2PR / (P + R) reduced to counts, which avoids a rounding step
        let f_measure = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * tp / (2.0 * tp + fp + fn_)
        };
        Some(Metrics {
            precision,
            recall,
            f_measure,
            pwc: 100.0 * (fn_ + fp) / total as f64,
        })
    }
}

impl Add for ConfusionReport {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            tn: self.tn + o.tn,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl AddAssign for ConfusionReport {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl core::iter::Sum for ConfusionReport {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

/// Counts one frame. 255 is foreground; 0 and 50 (shadow) are background;
/// 85 and 170 are skipped.
pub fn confusion(pred: &BinaryMask, gt: &GroundTruthMask) -> Result<ConfusionReport> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::invalid(alloc::format!(
            "prediction is {}x{}, ground truth is {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    let mut r = ConfusionReport::default();
    for (index, (&p, &g)) in pred.bits().iter().zip(gt.labels()).enumerate() {
        match (g, p) {
            (label::FOREGROUND, true) => r.tp += 1,
            (label::FOREGROUND, false) => r.fn_ += 1,
            (label::BACKGROUND | label::SHADOW, false) => r.tn += 1,
            (label::BACKGROUND | label::SHADOW, true) => r.fp += 1,
            (label::OUTSIDE_ROI | label::UNKNOWN, _) => {}
            (label, _) => return Err(Error::UnknownLabel { label, index }),
        }
    }
    Ok(r)
}
