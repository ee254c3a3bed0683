//! Independent reference implementations used by the integration tests.
//!
//! Written as direct loops over the defining formulas; they share no code
//! with the library beyond its public data types.

#![allow(dead_code)]

use dmf_core::filter::GrayImage;
use dmf_core::losses::LossConfig;
use dmf_core::{ClassMask, LossKind, ProbabilityMap};
use rand::Rng;

pub const EPS: f64 = 1e-12;

pub fn ref_symlog(x: f64) -> f64 {
    x.signum() * x.abs().ln_1p()
}

pub fn ref_normalize(h: &[f64]) -> Vec<f64> {
    let s: Vec<f64> = h.iter().map(|&x| ref_symlog(x)).collect();
    let mut lo = s[0];
    let mut hi = s[0];
    for &v in &s {
        if v < lo {
            lo = v;
        }
        if v > hi {
            hi = v;
        }
    }
    if hi == lo {
        return vec![0.0; s.len()];
    }
    s.iter().map(|&v| (v - lo) / (hi - lo)).collect()
}

pub fn ref_variance(h: &[f64]) -> f64 {
    let n = h.len() as f64;
    let mut sum = 0.0;
    for &v in h {
        sum += v;
    }
    let m = sum / n;
    let mut acc = 0.0;
    for &v in h {
        acc += (v - m) * (v - m);
    }
    acc / n
}

/// Median by selection sort, even lengths average the central pair.
pub fn ref_median(h: &[f64]) -> f64 {
    let mut s = h.to_vec();
    for i in 0..s.len() {
        let mut best = i;
        for j in i + 1..s.len() {
            if s[j] < s[best] {
                best = j;
            }
        }
        s.swap(i, best);
    }
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

pub fn ref_mad(h: &[f64]) -> f64 {
    let m = ref_median(h);
    let dev: Vec<f64> = h.iter().map(|&v| (v - m).abs()).collect();
    ref_median(&dev)
}

fn normalize_sum(v: Vec<f64>) -> Vec<f64> {
    let mut total = 0.0;
    for &x in &v {
        total += x;
    }
    v.into_iter().map(|x| x / total).collect()
}

/// Weights from raw (unnormalized) histories.
pub fn ref_variance_weights(raw: &[Vec<f64>]) -> Vec<f64> {
    let vars: Vec<f64> = raw.iter().map(|h| ref_variance(&ref_normalize(h))).collect();
    if vars.iter().all(|&v| v < EPS) {
        return vec![1.0 / raw.len() as f64; raw.len()];
    }
    normalize_sum(vars)
}

pub fn ref_mad_weights(raw: &[Vec<f64>]) -> Vec<f64> {
    let uniform = vec![1.0 / raw.len() as f64; raw.len()];
    ref_bayesian_weights(raw, &uniform)
}

pub fn ref_bayesian_weights(raw: &[Vec<f64>], priors: &[f64]) -> Vec<f64> {
    let mads: Vec<f64> = raw.iter().map(|h| ref_mad(&ref_normalize(h))).collect();
    if mads.iter().all(|&m| m < EPS) {
        return priors.to_vec();
    }
    normalize_sum(mads.iter().zip(priors).map(|(&m, &p)| p / (m + EPS)).collect())
}

/// Two nested window loops per pixel, kernel evaluated from scratch.
pub fn ref_bilateral(img: &GrayImage, sigma_s: f64, sigma_r: f64, radius: usize) -> Vec<f64> {
    let (w, h) = (img.width() as isize, img.height() as isize);
    let r = radius as isize;
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let center = img.get(x as usize, y as usize);
            let mut num = 0.0;
            let mut den = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let xx = (x + dx).clamp(0, w - 1) as usize;
                    let yy = (y + dy).clamp(0, h - 1) as usize;
                    let v = img.get(xx, yy);
                    let spatial = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma_s * sigma_s)).exp();
                    let range = (-((center - v) * (center - v)) / (2.0 * sigma_r * sigma_r)).exp();
                    num += spatial * range * v;
                    den += spatial * range;
                }
            }
            out.push(num / den);
        }
    }
    out
}

pub fn random_image<R: Rng>(rng: &mut R, w: usize, h: usize) -> GrayImage {
    GrayImage::new(w, h, (0..w * h).map(|_| rng.gen::<f64>()).collect()).unwrap()
}

pub fn random_histories<R: Rng>(rng: &mut R, n: usize) -> Vec<Vec<f64>> {
    let len = rng.gen_range(2..=40);
    (0..n)
        .map(|_| {
            let scale = 10f64.powf(rng.gen_range(-2.0..1.0));
            (0..len).map(|_| rng.gen::<f64>() * scale).collect()
        })
        .collect()
}

pub fn random_simplex<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    normalize_sum(raw)
}

pub fn random_logits<R: Rng>(rng: &mut R, n_pixels: usize, c: usize) -> Vec<f64> {
    (0..n_pixels * c).map(|_| rng.gen_range(-3.0..3.0)).collect()
}

pub fn random_mask<R: Rng>(rng: &mut R, n_pixels: usize, c: usize) -> ClassMask {
    ClassMask::new((0..n_pixels).map(|_| rng.gen_range(0..c)).collect(), c).unwrap()
}

/// Largest per-component relative error `|a - n| / max(|a|, |n|, floor)`
/// between the analytic logit gradient and central differences of the
/// loss value. `floor` keeps difference roundoff (about 1e-12 absolute at
/// h = 1e-4) in near-zero components from dominating.
pub fn gradient_check_error(
    kind: LossKind,
    logits: &[f64],
    mask: &ClassMask,
    cfg: &LossConfig,
    h: f64,
    floor: f64,
) -> f64 {
    let c = mask.n_classes();
    let value = |z: &[f64]| {
        let p = ProbabilityMap::from_logits(z, c).unwrap();
        dmf_core::losses::loss_value(kind, &p, mask, cfg).unwrap()
    };
    let probs = ProbabilityMap::from_logits(logits, c).unwrap();
    let analytic = dmf_core::losses::loss_gradient(kind, &probs, mask, cfg).unwrap();
    let mut worst: f64 = 0.0;
    let mut z = logits.to_vec();
    for i in 0..z.len() {
        let orig = z[i];
        z[i] = orig + h;
        let up = value(&z);
        z[i] = orig - h;
        let down = value(&z);
        z[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(floor);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}
