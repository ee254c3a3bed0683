//! Per-pixel class probability fields and label masks.
//!
//! Both are stored row-major: pixel `i`, class `c` lives at `i * C + c`.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("label {label} at pixel {pixel} is out of range for {n_classes} classes")]
    LabelOutOfRange {
        pixel: usize,
        label: usize,
        n_classes: usize,
    },
    #[error("need at least one class")]
    NoClasses,
    #[error("{len} values do not form rows of {n_classes} classes")]
    Ragged { len: usize, n_classes: usize },
    #[error("pixel {pixel} is not a probability distribution")]
    NotADistribution { pixel: usize },
    #[error("shape mismatch: {left} pixels x {left_classes} classes vs {right} pixels x {right_classes} classes")]
    ShapeMismatch {
        left: usize,
        left_classes: usize,
        right: usize,
        right_classes: usize,
    },
}

/// Integer ground truth, one label per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMask {
    labels: Vec<usize>,
    n_classes: usize,
}

impl ClassMask {
    pub fn new(labels: Vec<usize>, n_classes: usize) -> Result<Self, MapError> {
        if n_classes == 0 {
            return Err(MapError::NoClasses);
        }
        if let Some((pixel, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= n_classes) {
            return Err(MapError::LabelOutOfRange {
                pixel,
                label,
                n_classes,
            });
        }
        Ok(Self { labels, n_classes })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_pixels(&self) -> usize {
        self.labels.len()
    }

    /// Pixel count per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Concatenates masks sharing the same class count.
    pub fn concat<'a>(masks: impl IntoIterator<Item = &'a ClassMask>) -> Result<Self, MapError> {
        let mut labels = Vec::new();
        let mut n_classes = None;
        for m in masks {
            match n_classes {
                None => n_classes = Some(m.n_classes),
                Some(c) if c != m.n_classes => {
                    return Err(MapError::ShapeMismatch {
                        left: labels.len(),
                        left_classes: c,
                        right: m.n_pixels(),
                        right_classes: m.n_classes,
                    })
                }
                _ => {}
            }
            labels.extend_from_slice(&m.labels);
        }
        Self::new(labels, n_classes.ok_or(MapError::NoClasses)?)
    }
}

/// Per-pixel class probabilities; each row sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    probs: Vec<f64>,
    n_classes: usize,
}

impl ProbabilityMap {
    pub const ROW_TOLERANCE: f64 = 1e-6;

    pub fn new(probs: Vec<f64>, n_classes: usize) -> Result<Self, MapError> {
        check_rows(probs.len(), n_classes)?;
        for (pixel, row) in probs.chunks(n_classes).enumerate() {
            let sum: f64 = row.iter().sum();
            let in_range = row.iter().all(|&p| (0.0..=1.0).contains(&p));
            if !in_range || (sum - 1.0).abs() > Self::ROW_TOLERANCE {
                return Err(MapError::NotADistribution { pixel });
            }
        }
        Ok(Self { probs, n_classes })
    }

    /// Row-wise softmax of raw scores.
    pub fn from_logits(logits: &[f64], n_classes: usize) -> Result<Self, MapError> {
        check_rows(logits.len(), n_classes)?;
        let mut probs = Vec::with_capacity(logits.len());
        for row in logits.chunks(n_classes) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let start = probs.len();
            let mut sum = 0.0;
            for &z in row {
                let e = (z - max).exp();
                sum += e;
                probs.push(e);
            }
            for p in &mut probs[start..] {
                *p /= sum;
            }
        }
        Ok(Self { probs, n_classes })
    }

    /// Hard one-hot map from labels.
    pub fn one_hot(mask: &ClassMask) -> Self {
        let c = mask.n_classes();
        let mut probs = vec![0.0; mask.n_pixels() * c];
        for (i, &l) in mask.labels().iter().enumerate() {
            probs[i * c + l] = 1.0;
        }
        Self {
            probs,
            n_classes: c,
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_pixels(&self) -> usize {
        self.probs.len() / self.n_classes
    }

    pub fn row(&self, pixel: usize) -> &[f64] {
        &self.probs[pixel * self.n_classes..(pixel + 1) * self.n_classes]
    }

    pub fn rows(&self) -> std::slice::Chunks<'_, f64> {
        self.probs.chunks(self.n_classes)
    }

    /// Index of the most probable class; ties go to the lowest index.
    pub fn argmax(&self, pixel: usize) -> usize {
        let row = self.row(pixel);
        let mut best = 0;
        for (c, &p) in row.iter().enumerate().skip(1) {
            if p > row[best] {
                best = c;
            }
        }
        best
    }

    pub fn check_matches(&self, mask: &ClassMask) -> Result<(), MapError> {
        if self.n_pixels() != mask.n_pixels() || self.n_classes != mask.n_classes() {
            return Err(MapError::ShapeMismatch {
                left: self.n_pixels(),
                left_classes: self.n_classes,
                right: mask.n_pixels(),
                right_classes: mask.n_classes(),
            });
        }
        Ok(())
    }
}

fn check_rows(len: usize, n_classes: usize) -> Result<(), MapError> {
    if n_classes == 0 {
        return Err(MapError::NoClasses);
    }
    if !len.is_multiple_of(n_classes) {
        return Err(MapError::Ragged { len, n_classes });
    }
    Ok(())
}

/// Backpropagates a gradient with respect to probabilities through the
/// row-wise softmax, giving the gradient with respect to logits.
pub fn softmax_backward(probs: &ProbabilityMap, grad_probs: &[f64]) -> Vec<f64> {
    let c = probs.n_classes();
    let mut out = Vec::with_capacity(grad_probs.len());
    for (p, g) in probs.rows().zip(grad_probs.chunks(c)) {
        let inner: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        out.extend(p.iter().zip(g).map(|(pk, gk)| pk * (gk - inner)));
    }
    out
}
