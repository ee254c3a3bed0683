//! Segmentation losses over soft confusion counts and probability maps.
//!
//! Every loss has a hand-derived gradient with respect to the pre-softmax
//! logits, see [`loss_gradient`]. Overlap losses (IoU, Dice, Tversky,
//! CB-Dice) are all of the form `1 - sum_c omega_c * s_c` with
//!
//! ```text
//! s_c = a*TP_c / (a*TP_c + b*FP_c + c*FN_c + smooth)
//! ```
//!
//! so they share one value/gradient routine.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::maps::{softmax_backward, ClassMask, MapError, ProbabilityMap};

/// Clip applied to probabilities before taking logarithms.
pub const PROB_CLIP: f64 = 1e-7;
/// Added to every overlap denominator.
pub const OVERLAP_SMOOTH: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("unknown loss '{0}' (expected ce, iou, dice, focal, tversky or cbdice)")]
    UnknownLoss(String),
    #[error("unknown class weight mode '{0}' (expected inverse or one_minus)")]
    UnknownWeightMode(String),
    #[error("mask has no pixels")]
    EmptyMask,
    #[error("focal alpha has {got} entries for {expected} classes")]
    AlphaLength { expected: usize, got: usize },
    #[error("{got} class weights for {expected} classes")]
    WeightLength { expected: usize, got: usize },
}

/// Probabilistic per-class TP/FP/FN tallies.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftCounts {
    pub tp: Vec<f64>,
    pub fp: Vec<f64>,
    pub fn_: Vec<f64>,
}

impl SoftCounts {
    pub fn n_classes(&self) -> usize {
        self.tp.len()
    }

    fn scores(&self, a: f64, b: f64, c: f64, smooth: f64) -> Vec<f64> {
        (0..self.n_classes())
            .map(|k| overlap_score(self.tp[k], self.fp[k], self.fn_[k], a, b, c, smooth))
            .collect()
    }

    pub fn iou_scores(&self, smooth: f64) -> Vec<f64> {
        self.scores(1.0, 1.0, 1.0, smooth)
    }

    pub fn dice_scores(&self, smooth: f64) -> Vec<f64> {
        self.scores(2.0, 1.0, 1.0, smooth)
    }

    /// Written as `2TP / (2TP + 2αFP + 2βFN + smooth)` so that α = β = 0.5
    /// is Dice exactly, smoothing included.
    pub fn tversky_scores(&self, cfg: &TverskyConfig, smooth: f64) -> Vec<f64> {
        self.scores(2.0, 2.0 * cfg.alpha, 2.0 * cfg.beta, smooth)
    }
}

/// Class absent from both truth and prediction scores 1.
fn overlap_score(tp: f64, fp: f64, fn_: f64, a: f64, b: f64, c: f64, smooth: f64) -> f64 {
    if tp == 0.0 && fp == 0.0 && fn_ == 0.0 {
        return 1.0;
    }
    a * tp / (a * tp + b * fp + c * fn_ + smooth)
}

/// Partial derivatives of [`overlap_score`] with respect to (TP, FP, FN).
fn overlap_score_grad(tp: f64, fp: f64, fn_: f64, a: f64, b: f64, c: f64, smooth: f64) -> [f64; 3] {
    if tp == 0.0 && fp == 0.0 && fn_ == 0.0 {
        return [0.0; 3];
    }
    let d = a * tp + b * fp + c * fn_ + smooth;
    let d2 = d * d;
    [
        a * (b * fp + c * fn_ + smooth) / d2,
        -a * tp * b / d2,
        -a * tp * c / d2,
    ]
}

pub fn soft_counts(probs: &ProbabilityMap, mask: &ClassMask) -> Result<SoftCounts, LossError> {
    probs.check_matches(mask)?;
    let c = probs.n_classes();
    let mut tp = vec![0.0; c];
    let mut fp = vec![0.0; c];
    let mut fn_ = vec![0.0; c];
    for (row, &label) in probs.rows().zip(mask.labels()) {
        for (k, &p) in row.iter().enumerate() {
            if k == label {
                tp[k] += p;
                fn_[k] += 1.0 - p;
            } else {
                fp[k] += p;
            }
        }
    }
    Ok(SoftCounts { tp, fp, fn_ })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FocalConfig {
    /// Per-class balancing factor; `None` means 1 for every class.
    pub alpha: Option<Vec<f64>>,
    pub gamma: f64,
}

impl Default for FocalConfig {
    fn default() -> Self {
        Self {
            alpha: None,
            gamma: 2.0,
        }
    }
}

impl FocalConfig {
    fn alpha_for(&self, class: usize) -> f64 {
        self.alpha.as_ref().map_or(1.0, |a| a[class])
    }

    fn check(&self, n_classes: usize) -> Result<(), LossError> {
        match &self.alpha {
            Some(a) if a.len() != n_classes => Err(LossError::AlphaLength {
                expected: n_classes,
                got: a.len(),
            }),
            _ => Ok(()),
        }
    }
}

/// `alpha` penalizes false positives, `beta` false negatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TverskyConfig {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for TverskyConfig {
    fn default() -> Self {
        Self {
            alpha: 0.7,
            beta: 0.3,
        }
    }
}

/// How CB-Dice turns class pixel ratios into weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClassWeightMode {
    /// `w_c ∝ 1 / ratio_c`.
    #[default]
    Inverse,
    /// `w_c ∝ 1 - ratio_c`.
    OneMinus,
}

impl FromStr for ClassWeightMode {
    type Err = LossError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "inverse" => Ok(Self::Inverse),
            "one_minus" | "one-minus" => Ok(Self::OneMinus),
            other => Err(LossError::UnknownWeightMode(other.to_string())),
        }
    }
}

impl fmt::Display for ClassWeightMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Inverse => "inverse",
            Self::OneMinus => "one_minus",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub focal: FocalConfig,
    pub tversky: TverskyConfig,
    pub class_weight_mode: ClassWeightMode,
    pub smooth: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            focal: FocalConfig::default(),
            tversky: TverskyConfig::default(),
            class_weight_mode: ClassWeightMode::Inverse,
            smooth: OVERLAP_SMOOTH,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    CrossEntropy,
    MeanIou,
    MeanDice,
    Focal,
    Tversky,
    CbDice,
}

impl LossKind {
    pub const ALL: [LossKind; 6] = [
        LossKind::CrossEntropy,
        LossKind::MeanIou,
        LossKind::MeanDice,
        LossKind::Focal,
        LossKind::Tversky,
        LossKind::CbDice,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::CrossEntropy => "ce",
            LossKind::MeanIou => "iou",
            LossKind::MeanDice => "dice",
            LossKind::Focal => "focal",
            LossKind::Tversky => "tversky",
            LossKind::CbDice => "cbdice",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = LossError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ce" | "cross_entropy" | "crossentropy" => Ok(LossKind::CrossEntropy),
            "iou" | "mean_iou" => Ok(LossKind::MeanIou),
            "dice" | "mean_dice" => Ok(LossKind::MeanDice),
            "focal" => Ok(LossKind::Focal),
            "tversky" => Ok(LossKind::Tversky),
            "cbdice" | "cb_dice" | "cb-dice" => Ok(LossKind::CbDice),
            _ => Err(LossError::UnknownLoss(s.to_string())),
        }
    }
}

fn clip(p: f64) -> f64 {
    p.clamp(PROB_CLIP, 1.0 - PROB_CLIP)
}

/// Mean over pixels of `-log p` at the true class.
pub fn cross_entropy(probs: &ProbabilityMap, mask: &ClassMask) -> Result<f64, LossError> {
    probs.check_matches(mask)?;
    let n = mask.n_pixels();
    if n == 0 {
        return Err(LossError::EmptyMask);
    }
    let sum: f64 = probs
        .rows()
        .zip(mask.labels())
        .map(|(row, &l)| -clip(row[l]).ln())
        .sum();
    Ok(sum / n as f64)
}

/// Mean over pixels of `-alpha_c (1 - p)^gamma log p` at the true class.
pub fn focal_loss(
    probs: &ProbabilityMap,
    mask: &ClassMask,
    cfg: &FocalConfig,
) -> Result<f64, LossError> {
    probs.check_matches(mask)?;
    cfg.check(probs.n_classes())?;
    let n = mask.n_pixels();
    if n == 0 {
        return Err(LossError::EmptyMask);
    }
    let sum: f64 = probs
        .rows()
        .zip(mask.labels())
        .map(|(row, &l)| {
            let p = clip(row[l]);
            -cfg.alpha_for(l) * (1.0 - p).powf(cfg.gamma) * p.ln()
        })
        .sum();
    Ok(sum / n as f64)
}

fn weighted_overlap_loss(scores: &[f64], omega: &[f64]) -> f64 {
    1.0 - scores.iter().zip(omega).map(|(s, w)| s * w).sum::<f64>()
}

fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

pub fn mean_iou_loss(counts: &SoftCounts) -> f64 {
    mean_iou_loss_with(counts, OVERLAP_SMOOTH)
}

pub fn mean_iou_loss_with(counts: &SoftCounts, smooth: f64) -> f64 {
    weighted_overlap_loss(&counts.iou_scores(smooth), &uniform(counts.n_classes()))
}

pub fn mean_dice_loss(counts: &SoftCounts) -> f64 {
    mean_dice_loss_with(counts, OVERLAP_SMOOTH)
}

pub fn mean_dice_loss_with(counts: &SoftCounts, smooth: f64) -> f64 {
    weighted_overlap_loss(&counts.dice_scores(smooth), &uniform(counts.n_classes()))
}

pub fn tversky_loss(counts: &SoftCounts, cfg: &TverskyConfig) -> f64 {
    tversky_loss_with(counts, cfg, OVERLAP_SMOOTH)
}

pub fn tversky_loss_with(counts: &SoftCounts, cfg: &TverskyConfig, smooth: f64) -> f64 {
    weighted_overlap_loss(
        &counts.tversky_scores(cfg, smooth),
        &uniform(counts.n_classes()),
    )
}

/// Class simplex from the ground-truth pixel distribution.
///
/// Classes with no pixels get weight 0 and are left out of the
/// normalization.
pub fn class_weights(mask: &ClassMask, mode: ClassWeightMode) -> Result<Vec<f64>, LossError> {
    let total = mask.n_pixels();
    if total == 0 {
        return Err(LossError::EmptyMask);
    }
    let counts = mask.class_counts();
    let raw: Vec<f64> = counts
        .iter()
        .map(|&n| {
            if n == 0 {
                return 0.0;
            }
            let ratio = n as f64 / total as f64;
            match mode {
                ClassWeightMode::Inverse => 1.0 / ratio,
                ClassWeightMode::OneMinus => 1.0 - ratio,
            }
        })
        .collect();
    let sum: f64 = raw.iter().sum();
    if sum > 0.0 {
        Ok(raw.into_iter().map(|w| w / sum).collect())
    } else {
        // Only reachable for OneMinus with a single present class.
        Ok(counts
            .iter()
            .map(|&n| if n > 0 { 1.0 } else { 0.0 })
            .collect())
    }
}

/// `1 - sum_c w_c * Dice_c`.
pub fn cb_dice_loss(counts: &SoftCounts, weights: &[f64]) -> Result<f64, LossError> {
    cb_dice_loss_with(counts, weights, OVERLAP_SMOOTH)
}

pub fn cb_dice_loss_with(counts: &SoftCounts, weights: &[f64], smooth: f64) -> Result<f64, LossError> {
    if weights.len() != counts.n_classes() {
        return Err(LossError::WeightLength {
            expected: counts.n_classes(),
            got: weights.len(),
        });
    }
    Ok(weighted_overlap_loss(&counts.dice_scores(smooth), weights))
}

/// Scalar value of `kind`.
pub fn loss_value(
    kind: LossKind,
    probs: &ProbabilityMap,
    mask: &ClassMask,
    cfg: &LossConfig,
) -> Result<f64, LossError> {
    match kind {
        LossKind::CrossEntropy => cross_entropy(probs, mask),
        LossKind::Focal => focal_loss(probs, mask, &cfg.focal),
        _ => {
            let counts = soft_counts(probs, mask)?;
            Ok(match kind {
                LossKind::MeanIou => mean_iou_loss_with(&counts, cfg.smooth),
                LossKind::MeanDice => mean_dice_loss_with(&counts, cfg.smooth),
                LossKind::Tversky => tversky_loss_with(&counts, &cfg.tversky, cfg.smooth),
                LossKind::CbDice => {
                    let w = class_weights(mask, cfg.class_weight_mode)?;
                    cb_dice_loss_with(&counts, &w, cfg.smooth)?
                }
                LossKind::CrossEntropy | LossKind::Focal => unreachable!(),
            })
        }
    }
}

/// Gradient of `kind` with respect to the probabilities.
pub fn loss_gradient_probs(
    kind: LossKind,
    probs: &ProbabilityMap,
    mask: &ClassMask,
    cfg: &LossConfig,
) -> Result<Vec<f64>, LossError> {
    probs.check_matches(mask)?;
    let n = mask.n_pixels();
    if n == 0 {
        return Err(LossError::EmptyMask);
    }
    let c = probs.n_classes();
    let mut grad = vec![0.0; n * c];

    match kind {
        LossKind::CrossEntropy | LossKind::Focal => {
            if kind == LossKind::Focal {
                cfg.focal.check(c)?;
            }
            let inv_n = 1.0 / n as f64;
            for (i, (row, &l)) in probs.rows().zip(mask.labels()).enumerate() {
                let raw = row[l];
                if raw <= PROB_CLIP || raw >= 1.0 - PROB_CLIP {
                    continue;
                }
                grad[i * c + l] = inv_n
                    * match kind {
                        LossKind::CrossEntropy => -1.0 / raw,
                        _ => {
                            let g = cfg.focal.gamma;
                            let alpha = cfg.focal.alpha_for(l);
                            let q = 1.0 - raw;
                            let focus = if g == 0.0 {
                                0.0
                            } else {
                                g * q.powf(g - 1.0) * raw.ln()
                            };
                            alpha * (focus - q.powf(g) / raw)
                        }
                    };
            }
        }
        _ => {
            let counts = soft_counts(probs, mask)?;
            let (a, b, cc, omega) = match kind {
                LossKind::MeanIou => (1.0, 1.0, 1.0, uniform(c)),
                LossKind::MeanDice => (2.0, 1.0, 1.0, uniform(c)),
                LossKind::Tversky => (2.0, 2.0 * cfg.tversky.alpha, 2.0 * cfg.tversky.beta, uniform(c)),
                LossKind::CbDice => (2.0, 1.0, 1.0, class_weights(mask, cfg.class_weight_mode)?),
                LossKind::CrossEntropy | LossKind::Focal => unreachable!(),
            };
            // dL/dTP, dL/dFP, dL/dFN per class.
            let partials: Vec<[f64; 3]> = (0..c)
                .map(|k| {
                    let g = overlap_score_grad(
                        counts.tp[k],
                        counts.fp[k],
                        counts.fn_[k],
                        a,
                        b,
                        cc,
                        cfg.smooth,
                    );
                    [-omega[k] * g[0], -omega[k] * g[1], -omega[k] * g[2]]
                })
                .collect();
            for (i, &l) in mask.labels().iter().enumerate() {
                for (k, d) in partials.iter().enumerate() {
                    grad[i * c + k] = if k == l { d[0] - d[2] } else { d[1] };
                }
            }
        }
    }
    Ok(grad)
}

/// Gradient of `kind` with respect to the pre-softmax logits that
/// produced `probs`.
pub fn loss_gradient(
    kind: LossKind,
    probs: &ProbabilityMap,
    mask: &ClassMask,
    cfg: &LossConfig,
) -> Result<Vec<f64>, LossError> {
    let gp = loss_gradient_probs(kind, probs, mask, cfg)?;
    Ok(softmax_backward(probs, &gp))
}
