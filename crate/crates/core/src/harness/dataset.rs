//! Synthetic speckled scenes with a single elliptical lesion.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::filter::GrayImage;
use crate::maps::ClassMask;

pub const BACKGROUND: usize = 0;
pub const LESION: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneParams {
    pub width: usize,
    pub height: usize,
    /// Lesion base intensity minus background base intensity.
    pub contrast: f64,
    /// Half-width of the multiplicative noise `u ~ U(-s, s)`.
    pub speckle: f64,
    pub min_lesion_fraction: f64,
    pub max_lesion_fraction: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            width: 32,
            height: 32,
            contrast: 0.25,
            speckle: 0.4,
            min_lesion_fraction: 0.03,
            max_lesion_fraction: 0.30,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub image: GrayImage,
    pub mask: ClassMask,
    pub seed: u64,
}

impl SyntheticScene {
    pub fn lesion_fraction(&self) -> f64 {
        self.mask.class_counts()[LESION] as f64 / self.mask.n_pixels() as f64
    }
}

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * self.cos + dy * self.sin) / self.a;
        let v = (-dx * self.sin + dy * self.cos) / self.b;
        u * u + v * v <= 1.0
    }
}

fn draw_ellipse(rng: &mut ChaCha8Rng, p: &SceneParams) -> Option<Ellipse> {
    let (w, h) = (p.width as f64, p.height as f64);
    let fraction = rng.gen_range(p.min_lesion_fraction..p.max_lesion_fraction);
    let aspect: f64 = rng.gen_range(0.6..1.6);
    let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
    let a = (fraction * w * h * aspect / std::f64::consts::PI).sqrt();
    let b = a / aspect;
    let (sin, cos) = theta.sin_cos();
    let ex = (a * a * cos * cos + b * b * sin * sin).sqrt();
    let ey = (a * a * sin * sin + b * b * cos * cos).sqrt();
    // Keep at least one background pixel between the ellipse and the border.
    let (lo_x, hi_x) = (ex + 1.0, w - 2.0 - ex);
    let (lo_y, hi_y) = (ey + 1.0, h - 2.0 - ey);
    if lo_x >= hi_x || lo_y >= hi_y {
        return None;
    }
    Some(Ellipse {
        cx: rng.gen_range(lo_x..hi_x),
        cy: rng.gen_range(lo_y..hi_y),
        a,
        b,
        cos,
        sin,
    })
}

/// One scene, fully determined by `seed`.
pub fn generate_scene(params: &SceneParams, seed: u64) -> SyntheticScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (params.width, params.height);
    let n = w * h;

    let labels = loop {
        let Some(e) = draw_ellipse(&mut rng, params) else {
            continue;
        };
        let labels: Vec<usize> = (0..n)
            .map(|i| usize::from(e.contains((i % w) as f64, (i / w) as f64)))
            .collect();
        let fraction = labels.iter().sum::<usize>() as f64 / n as f64;
        if (params.min_lesion_fraction..=params.max_lesion_fraction).contains(&fraction) {
            break labels;
        }
    };

    let background: f64 = rng.gen_range(0.25..0.35);
    let tilt: f64 = rng.gen_range(-0.05..0.05);
    let pixels = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let y = (i / w) as f64 / (h.max(2) - 1) as f64;
            let base = background + tilt * (y - 0.5) + if l == LESION { params.contrast } else { 0.0 };
            let u: f64 = rng.gen_range(-params.speckle..=params.speckle);
            (base * (1.0 + u)).clamp(0.0, 1.0)
        })
        .collect();

    SyntheticScene {
        image: GrayImage::new(w, h, pixels).expect("pixels are clamped to [0, 1]"),
        mask: ClassMask::new(labels, 2).expect("labels are 0 or 1"),
        seed,
    }
}

/// `count` scenes whose seeds are drawn from a stream seeded by `seed`.
pub fn generate_dataset(count: usize, seed: u64, params: &SceneParams) -> Vec<SyntheticScene> {
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| generate_scene(params, seeds.gen()))
        .collect()
}
