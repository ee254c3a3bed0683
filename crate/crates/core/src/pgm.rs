//! 8-bit binary PGM (`P5`) reading and writing.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::filter::{FilterError, GrayImage};
use crate::maps::{ClassMask, MapError};

#[derive(Debug, Error)]
pub enum PgmError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("not a binary PGM (missing P5 magic)")]
    Magic,
    #[error("malformed header: {0}")]
    Header(String),
    #[error("maxval {0} unsupported (only 1..=255)")]
    MaxVal(u32),
    #[error("truncated pixel data: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error(transparent)]
    Image(#[from] FilterError),
    #[error(transparent)]
    Mask(#[from] MapError),
}

/// Raw 8-bit raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Raster {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, PgmError> {
        if !bytes.starts_with(b"P5") {
            return Err(PgmError::Magic);
        }
        let mut pos = 2;
        let mut fields = [0u32; 3];
        for field in &mut fields {
            // Whitespace and comments before each header number.
            loop {
                match bytes.get(pos) {
                    Some(b) if b.is_ascii_whitespace() => pos += 1,
                    Some(b'#') => {
                        while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                            pos += 1;
                        }
                    }
                    _ => break,
                }
            }
            let start = pos;
            while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
                pos += 1;
            }
            let text = std::str::from_utf8(&bytes[start..pos]).unwrap_or("");
            *field = text
                .parse()
                .map_err(|_| PgmError::Header(format!("expected a number at byte {start}")))?;
        }
        // Exactly one whitespace byte separates the header from the raster.
        if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
            return Err(PgmError::Header("missing separator before pixel data".into()));
        }
        pos += 1;
        let [width, height, maxval] = fields;
        if maxval == 0 || maxval > 255 {
            return Err(PgmError::MaxVal(maxval));
        }
        let (width, height) = (width as usize, height as usize);
        let expected = width * height;
        let data = &bytes[pos..];
        if data.len() < expected {
            return Err(PgmError::Truncated {
                expected,
                got: data.len(),
            });
        }
        let data = if maxval == 255 {
            data[..expected].to_vec()
        } else {
            data[..expected]
                .iter()
                .map(|&v| ((v as f64 * 255.0 / maxval as f64).round()).min(255.0) as u8)
                .collect()
        };
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, PgmError> {
        Self::decode(&fs::read(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), PgmError> {
        fs::write(path, self.encode())?;
        Ok(())
    }
}

pub fn to_raster(img: &GrayImage) -> Raster {
    Raster {
        width: img.width(),
        height: img.height(),
        data: img
            .pixels()
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect(),
    }
}

pub fn from_raster(r: &Raster) -> Result<GrayImage, PgmError> {
    let pixels = r.data.iter().map(|&v| v as f64 / 255.0).collect();
    Ok(GrayImage::new(r.width, r.height, pixels)?)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<GrayImage, PgmError> {
    from_raster(&Raster::read(path)?)
}

pub fn write_image(img: &GrayImage, path: impl AsRef<Path>) -> Result<(), PgmError> {
    to_raster(img).write(path)
}

/// Binary masks are stored as 0 (background) / 255 (foreground).
pub fn mask_to_raster(mask: &ClassMask, width: usize, height: usize) -> Raster {
    let scale = if mask.n_classes() > 1 {
        255 / (mask.n_classes() - 1)
    } else {
        0
    };
    Raster {
        width,
        height,
        data: mask.labels().iter().map(|&l| (l * scale) as u8).collect(),
    }
}

/// Thresholds at 128 into a two-class mask.
pub fn binary_mask_from_raster(r: &Raster) -> Result<ClassMask, PgmError> {
    let labels = r.data.iter().map(|&v| usize::from(v >= 128)).collect();
    Ok(ClassMask::new(labels, 2)?)
}
