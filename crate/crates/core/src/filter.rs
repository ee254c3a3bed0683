//! Grayscale images and edge-preserving bilateral smoothing.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("image must have non-zero area ({width}x{height})")]
    ZeroArea { width: usize, height: usize },
    #[error("expected {expected} pixels for {width}x{height}, got {got}")]
    PixelCount {
        width: usize,
        height: usize,
        expected: usize,
        got: usize,
    },
    #[error("pixel {index} = {value} is outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("sigma_s and sigma_r must be positive and finite (got {sigma_s}, {sigma_r})")]
    InvalidSigma { sigma_s: f64, sigma_r: f64 },
}

/// Row-major image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self, FilterError> {
        if width == 0 || height == 0 {
            return Err(FilterError::ZeroArea { width, height });
        }
        if pixels.len() != width * height {
            return Err(FilterError::PixelCount {
                width,
                height,
                expected: width * height,
                got: pixels.len(),
            });
        }
        if let Some((index, &value)) = pixels
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(FilterError::OutOfRange { index, value });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self, FilterError> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Pixel at a possibly out-of-bounds coordinate, replicating the edge.
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y)
    }

    pub fn mirrored_horizontally(&self) -> Self {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for row in self.pixels.chunks(self.width) {
            pixels.extend(row.iter().rev());
        }
        Self { pixels, ..*self }
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.pixels
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilateralConfig {
    /// Spatial standard deviation in pixels.
    pub sigma_s: f64,
    /// Range standard deviation in intensity units.
    pub sigma_r: f64,
    /// Window half-width; `ceil(2 * sigma_s)` when unset.
    pub radius: Option<usize>,
}

impl Default for BilateralConfig {
    fn default() -> Self {
        Self {
            sigma_s: 3.0,
            sigma_r: 0.1,
            radius: None,
        }
    }
}

impl BilateralConfig {
    pub fn new(sigma_s: f64, sigma_r: f64) -> Result<Self, FilterError> {
        let cfg = Self {
            sigma_s,
            sigma_r,
            radius: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_radius(self, radius: usize) -> Self {
        Self {
            radius: Some(radius),
            ..self
        }
    }

    pub fn effective_radius(&self) -> usize {
        self.radius
            .unwrap_or_else(|| (2.0 * self.sigma_s).ceil() as usize)
    }

    fn validate(&self) -> Result<(), FilterError> {
        let ok = |s: f64| s > 0.0 && s.is_finite();
        if ok(self.sigma_s) && ok(self.sigma_r) {
            Ok(())
        } else {
            Err(FilterError::InvalidSigma {
                sigma_s: self.sigma_s,
                sigma_r: self.sigma_r,
            })
        }
    }
}

/// Direct bilateral filter over a square window with clamp-to-edge borders.
///
/// Each output pixel is a convex combination of window pixels, so the
/// result stays within the input's intensity range.
pub fn bilateral_filter(img: &GrayImage, cfg: &BilateralConfig) -> Result<GrayImage, FilterError> {
    cfg.validate()?;
    let r = cfg.effective_radius() as isize;
    let side = (2 * r + 1) as usize;
    let spatial_denom = 2.0 * cfg.sigma_s * cfg.sigma_s;
    let range_denom = 2.0 * cfg.sigma_r * cfg.sigma_r;

    let mut spatial = Vec::with_capacity(side * side);
    for dy in -r..=r {
        for dx in -r..=r {
            let d2 = (dx * dx + dy * dy) as f64;
            spatial.push((-d2 / spatial_denom).exp());
        }
    }

    let (w, h) = (img.width as isize, img.height as isize);
    let mut out = Vec::with_capacity(img.pixels.len());
    for y in 0..h {
        for x in 0..w {
            let center = img.get(x as usize, y as usize);
            let mut acc = 0.0;
            let mut norm = 0.0;
            let mut k = 0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let v = img.get_clamped(x + dx, y + dy);
                    let diff = center - v;
                    let weight = spatial[k] * (-(diff * diff) / range_denom).exp();
                    acc += weight * v;
                    norm += weight;
                    k += 1;
                }
            }
            // Keep rounding from nudging the result outside the window range.
            out.push((acc / norm).clamp(0.0, 1.0));
        }
    }
    Ok(GrayImage {
        width: img.width,
        height: img.height,
        pixels: out,
    })
}
