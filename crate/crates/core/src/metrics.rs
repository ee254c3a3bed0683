//! Evaluation metrics from hard (argmax) predictions.

use crate::losses::{class_weights, ClassWeightMode, LossError};
use crate::maps::{ClassMask, ProbabilityMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ClassCounts {
    /// Class absent from both truth and prediction.
    fn absent(&self) -> bool {
        self.tp == 0 && self.fp == 0 && self.fn_ == 0
    }

    /// `num / den`, with 0/0 resolved to 1 for an absent class and 0
    /// otherwise.
    fn ratio(&self, num: u64, den: u64) -> f64 {
        if den == 0 {
            if self.absent() {
                1.0
            } else {
                0.0
            }
        } else {
            num as f64 / den as f64
        }
    }

    pub fn dice(&self) -> f64 {
        self.ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    pub fn iou(&self) -> f64 {
        self.ratio(self.tp, self.tp + self.fp + self.fn_)
    }

    pub fn precision(&self) -> f64 {
        self.ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        self.ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn scores(&self) -> ClassScores {
        ClassScores {
            dice: self.dice(),
            iou: self.iou(),
            precision: self.precision(),
            recall: self.recall(),
            f1: self.f1(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HardCounts {
    pub per_class: Vec<ClassCounts>,
    pub n_pixels: u64,
}

/// Confusion counts from the argmax of `probs` (ties to the lowest class).
pub fn hard_counts(probs: &ProbabilityMap, mask: &ClassMask) -> Result<HardCounts, LossError> {
    probs.check_matches(mask)?;
    let labels: Vec<usize> = (0..probs.n_pixels()).map(|i| probs.argmax(i)).collect();
    counts_from_labels(&labels, mask)
}

/// Confusion counts from already-decided per-pixel labels.
pub fn counts_from_labels(predicted: &[usize], mask: &ClassMask) -> Result<HardCounts, LossError> {
    let c = mask.n_classes();
    let prediction = ClassMask::new(predicted.to_vec(), c)?;
    ProbabilityMap::one_hot(&prediction).check_matches(mask)?;
    let n = mask.n_pixels() as u64;
    let mut per_class = vec![ClassCounts::default(); c];
    for (&p, &t) in predicted.iter().zip(mask.labels()) {
        if p == t {
            per_class[p].tp += 1;
        } else {
            per_class[p].fp += 1;
            per_class[t].fn_ += 1;
        }
    }
    for k in &mut per_class {
        k.tn = n - k.tp - k.fp - k.fn_;
    }
    Ok(HardCounts {
        per_class,
        n_pixels: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClassScores {
    pub dice: f64,
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// The six headline numbers of a segmentation evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Scores {
    pub dice: f64,
    pub iou: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub cb_dice: f64,
}

impl Scores {
    pub const NAMES: [&'static str; 6] = ["dice", "iou", "f1", "precision", "recall", "cb_dice"];

    pub fn as_array(&self) -> [f64; 6] {
        [
            self.dice,
            self.iou,
            self.f1,
            self.precision,
            self.recall,
            self.cb_dice,
        ]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            dice: a[0],
            iou: a[1],
            f1: a[2],
            precision: a[3],
            recall: a[4],
            cb_dice: a[5],
        }
    }

    /// Element-wise mean. Empty input gives all zeros.
    pub fn mean<'a>(items: impl IntoIterator<Item = &'a Scores>) -> Scores {
        let mut acc = [0.0; 6];
        let mut n = 0usize;
        for s in items {
            for (a, v) in acc.iter_mut().zip(s.as_array()) {
                *a += v;
            }
            n += 1;
        }
        if n > 0 {
            for a in &mut acc {
                *a /= n as f64;
            }
        }
        Scores::from_array(acc)
    }

    pub fn csv_header() -> String {
        Self::NAMES.join(",")
    }

    pub fn csv_row(&self) -> String {
        self.as_array()
            .iter()
            .map(|v| format!("{v:.9}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub per_class: Vec<ClassScores>,
    /// CB-Dice class weights derived from the mask.
    pub class_weights: Vec<f64>,
    /// Macro averages plus the CB-Dice score.
    pub summary: Scores,
}

pub fn evaluate(counts: &HardCounts, mask: &ClassMask) -> Result<MetricReport, LossError> {
    evaluate_with(counts, mask, ClassWeightMode::Inverse)
}

pub fn evaluate_with(
    counts: &HardCounts,
    mask: &ClassMask,
    mode: ClassWeightMode,
) -> Result<MetricReport, LossError> {
    let per_class: Vec<ClassScores> = counts.per_class.iter().map(ClassCounts::scores).collect();
    if per_class.len() != mask.n_classes() {
        return Err(LossError::WeightLength {
            expected: mask.n_classes(),
            got: per_class.len(),
        });
    }
    let weights = class_weights(mask, mode)?;
    let c = per_class.len() as f64;
    let macro_of = |f: fn(&ClassScores) -> f64| per_class.iter().map(f).sum::<f64>() / c;
    let summary = Scores {
        dice: macro_of(|s| s.dice),
        iou: macro_of(|s| s.iou),
        f1: macro_of(|s| s.f1),
        precision: macro_of(|s| s.precision),
        recall: macro_of(|s| s.recall),
        cb_dice: per_class.iter().zip(&weights).map(|(s, w)| w * s.dice).sum(),
    };
    Ok(MetricReport {
        per_class,
        class_weights: weights,
        summary,
    })
}
