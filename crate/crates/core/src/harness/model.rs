//! Per-pixel features and a linear softmax classifier over them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::filter::GrayImage;

pub const N_FEATURES: usize = 5;
const LOCAL_RADIUS: isize = 2;

/// Row-major `n_pixels x N_FEATURES`: intensity, local mean, local std,
/// normalized x, normalized y.
pub fn pixel_features(img: &GrayImage) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let mut out = Vec::with_capacity(w * h * N_FEATURES);
    let window = ((2 * LOCAL_RADIUS + 1) * (2 * LOCAL_RADIUS + 1)) as f64;
    let norm = |v: usize, size: usize| if size > 1 { v as f64 / (size - 1) as f64 } else { 0.0 };
    for y in 0..h {
        for x in 0..w {
            let (mut sum, mut sq) = (0.0, 0.0);
            for dy in -LOCAL_RADIUS..=LOCAL_RADIUS {
                for dx in -LOCAL_RADIUS..=LOCAL_RADIUS {
                    let v = img.get_clamped(x as isize + dx, y as isize + dy);
                    sum += v;
                    sq += v * v;
                }
            }
            let mean = sum / window;
            let var = (sq / window - mean * mean).max(0.0);
            out.extend_from_slice(&[img.get(x, y), mean, var.sqrt(), norm(x, w), norm(y, h)]);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelModel {
    n_classes: usize,
    /// `N_FEATURES x n_classes`, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl PixelModel {
    pub fn new(n_classes: usize, init_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let weights = (0..N_FEATURES * n_classes)
            .map(|_| rng.gen_range(-0.01..0.01))
            .collect();
        Self {
            n_classes,
            weights,
            bias: vec![0.0; n_classes],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn parameters(&self) -> Vec<f64> {
        self.weights.iter().chain(&self.bias).copied().collect()
    }

    pub fn set_parameters(&mut self, params: &[f64]) {
        let (w, b) = params.split_at(self.weights.len());
        self.weights.copy_from_slice(w);
        self.bias.copy_from_slice(b);
    }

    pub fn logits(&self, features: &[f64]) -> Vec<f64> {
        let c = self.n_classes;
        let mut out = Vec::with_capacity(features.len() / N_FEATURES * c);
        for f in features.chunks(N_FEATURES) {
            for k in 0..c {
                let mut z = self.bias[k];
                for (j, &fj) in f.iter().enumerate() {
                    z += fj * self.weights[j * c + k];
                }
                out.push(z);
            }
        }
        out
    }

    /// Parameter gradient (same layout as [`Self::parameters`]) given the
    /// gradient with respect to the logits.
    pub fn backward(&self, features: &[f64], grad_logits: &[f64]) -> Vec<f64> {
        let c = self.n_classes;
        let mut grad = vec![0.0; self.parameter_count()];
        let (gw, gb) = grad.split_at_mut(self.weights.len());
        for (f, g) in features.chunks(N_FEATURES).zip(grad_logits.chunks(c)) {
            for (k, &gk) in g.iter().enumerate() {
                gb[k] += gk;
                for (j, &fj) in f.iter().enumerate() {
                    gw[j * c + k] += fj * gk;
                }
            }
        }
        grad
    }

    pub fn descend(&mut self, grad: &[f64], lr: f64) {
        let (gw, gb) = grad.split_at(self.weights.len());
        for (p, g) in self.weights.iter_mut().zip(gw) {
            *p -= lr * g;
        }
        for (p, g) in self.bias.iter_mut().zip(gb) {
            *p -= lr * g;
        }
    }
}
