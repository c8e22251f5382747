//! MNIST IDX loading and the augmented task variant: the 28x28 digit is
//! rotated, translated onto a larger noisy canvas, and perturbed with
//! additive Gaussian pixel noise.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{RamError, Result};

pub const DIGIT_SIDE: usize = 28;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// One grayscale image with its digit label. Pixels are row-major in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub pixels: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub label: u8,
}

impl ImageSample {
    pub fn new(pixels: Vec<f64>, height: usize, width: usize, label: u8) -> Self {
        debug_assert_eq!(pixels.len(), height * width);
        ImageSample {
            pixels,
            height,
            width,
            label,
        }
    }
}

/// Augmentation parameters. `rotation_max` is in degrees; the noise standard
/// deviation applies per pixel before the final clamp to [0,1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub canvas_size: usize,
    pub rotation_max: f64,
    pub pixel_noise_std: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        // desk-scale defaults; the 100x100 canvas variant is one config away
        AugmentConfig {
            canvas_size: 60,
            rotation_max: 15.0,
            pixel_noise_std: 0.1,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.canvas_size < DIGIT_SIDE {
            return Err(RamError::Config(format!(
                "canvas_size {} is smaller than the {DIGIT_SIDE}x{DIGIT_SIDE} source digit",
                self.canvas_size
            )));
        }
        if self.rotation_max < 0.0 || self.pixel_noise_std < 0.0 {
            return Err(RamError::Config(
                "rotation_max and pixel_noise_std must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

fn read_be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(RamError::IdxFormat {
            path: path.to_path_buf(),
            msg: "truncated header".into(),
        });
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Load raw IDX images, scaling bytes 0..255 to [0,1].
pub fn load_idx_images(path: &Path) -> Result<Vec<(Vec<f64>, usize, usize)>> {
    let bytes = std::fs::read(path).map_err(|e| RamError::io(path, e))?;
    let magic = read_be_u32(&bytes, 0, path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(RamError::IdxFormat {
            path: path.to_path_buf(),
            msg: format!("expected image magic {IDX_IMAGES_MAGIC:#010x}, got {magic:#010x}"),
        });
    }
    let count = read_be_u32(&bytes, 4, path)? as usize;
    let rows = read_be_u32(&bytes, 8, path)? as usize;
    let cols = read_be_u32(&bytes, 12, path)? as usize;
    let pixel_count = rows * cols;
    if bytes.len() != 16 + count * pixel_count {
        return Err(RamError::IdxFormat {
            path: path.to_path_buf(),
            msg: format!(
                "expected {} data bytes for {count} images of {rows}x{cols}, file has {}",
                count * pixel_count,
                bytes.len() - 16
            ),
        });
    }
    let mut images = Vec::with_capacity(count);
    for i in 0..count {
        let start = 16 + i * pixel_count;
        let pixels = bytes[start..start + pixel_count]
            .iter()
            .map(|&b| b as f64 / 255.0)
            .collect();
        images.push((pixels, rows, cols));
    }
    Ok(images)
}

/// Load raw IDX labels.
pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = std::fs::read(path).map_err(|e| RamError::io(path, e))?;
    let magic = read_be_u32(&bytes, 0, path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(RamError::IdxFormat {
            path: path.to_path_buf(),
            msg: format!("expected label magic {IDX_LABELS_MAGIC:#010x}, got {magic:#010x}"),
        });
    }
    let count = read_be_u32(&bytes, 4, path)? as usize;
    if bytes.len() != 8 + count {
        return Err(RamError::IdxFormat {
            path: path.to_path_buf(),
            msg: format!("expected {count} label bytes, file has {}", bytes.len() - 8),
        });
    }
    Ok(bytes[8..].to_vec())
}

/// Load a paired IDX image/label set into samples.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Vec<ImageSample>> {
    let images = load_idx_images(images_path)?;
    let labels = load_idx_labels(labels_path)?;
    if images.len() != labels.len() {
        return Err(RamError::Consistency(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    Ok(images
        .into_iter()
        .zip(labels)
        .map(|((pixels, rows, cols), label)| ImageSample::new(pixels, rows, cols, label))
        .collect())
}

/// Rotate a square digit patch by `angle_deg` about its center using inverse
/// bilinear resampling. Source coordinates outside the patch map to 0.
pub fn rotate_digit(pixels: &[f64], side: usize, angle_deg: f64) -> Vec<f64> {
    if angle_deg == 0.0 {
        return pixels.to_vec();
    }
    let theta = angle_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let center = (side as f64 - 1.0) / 2.0;
    let mut out = vec![0.0; side * side];
    for r in 0..side {
        for c in 0..side {
            // inverse map: rotate the destination offset by -theta
            let dy = r as f64 - center;
            let dx = c as f64 - center;
            let sx = center + cos * dx + sin * dy;
            let sy = center - sin * dx + cos * dy;
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = sx - x0;
            let fy = sy - y0;
            let sample = |x: f64, y: f64| -> f64 {
                if x < 0.0 || y < 0.0 || x >= side as f64 || y >= side as f64 {
                    0.0
                } else {
                    pixels[y as usize * side + x as usize]
                }
            };
            out[r * side + c] = sample(x0, y0) * (1.0 - fx) * (1.0 - fy)
                + sample(x0 + 1.0, y0) * fx * (1.0 - fy)
                + sample(x0, y0 + 1.0) * (1.0 - fx) * fy
                + sample(x0 + 1.0, y0 + 1.0) * fx * fy;
        }
    }
    out
}

/// Place a digit patch onto a zero canvas with its top-left corner at
/// `(row0, col0)`.
pub fn place_on_canvas(
    digit: &[f64],
    digit_side: usize,
    canvas_size: usize,
    row0: usize,
    col0: usize,
) -> Vec<f64> {
    let mut canvas = vec![0.0; canvas_size * canvas_size];
    for r in 0..digit_side {
        let dst = (row0 + r) * canvas_size + col0;
        canvas[dst..dst + digit_side].copy_from_slice(&digit[r * digit_side..(r + 1) * digit_side]);
    }
    canvas
}

/// Add iid Gaussian noise of the given standard deviation. No clamping.
pub fn add_gaussian_noise<R: Rng>(pixels: &mut [f64], std: f64, rng: &mut R) {
    if std == 0.0 {
        return;
    }
    let normal = Normal::new(0.0, std).expect("std validated >= 0");
    for p in pixels.iter_mut() {
        *p += normal.sample(rng);
    }
}

/// Build the augmented variant of one sample. Draws, in order: rotation
/// angle, row offset, column offset, then per-pixel noise.
pub fn augment<R: Rng>(sample: &ImageSample, cfg: &AugmentConfig, rng: &mut R) -> Result<ImageSample> {
    cfg.validate()?;
    if sample.height != DIGIT_SIDE || sample.width != DIGIT_SIDE {
        return Err(RamError::Consistency(format!(
            "augment expects {DIGIT_SIDE}x{DIGIT_SIDE} sources, got {}x{}",
            sample.height, sample.width
        )));
    }
    let angle = if cfg.rotation_max > 0.0 {
        rng.gen_range(-cfg.rotation_max..=cfg.rotation_max)
    } else {
        0.0
    };
    let rotated = rotate_digit(&sample.pixels, DIGIT_SIDE, angle);

    let slack = cfg.canvas_size - DIGIT_SIDE;
    let row0 = rng.gen_range(0..=slack);
    let col0 = rng.gen_range(0..=slack);
    let mut canvas = place_on_canvas(&rotated, DIGIT_SIDE, cfg.canvas_size, row0, col0);

    add_gaussian_noise(&mut canvas, cfg.pixel_noise_std, rng);
    for p in canvas.iter_mut() {
        *p = p.clamp(0.0, 1.0);
    }
    Ok(ImageSample::new(
        canvas,
        cfg.canvas_size,
        cfg.canvas_size,
        sample.label,
    ))
}

/// One epoch of shuffled minibatch index sets. The last partial batch is
/// kept; `batch_size` must be >= 1 and the dataset non-empty.
pub fn batches<R: Rng>(n_samples: usize, batch_size: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    if batch_size < 1 {
        return Err(RamError::Config("batch_size must be >= 1".into()));
    }
    if n_samples == 0 {
        return Err(RamError::Consistency("empty dataset".into()));
    }
    let mut order: Vec<usize> = (0..n_samples).collect();
    use rand::seq::SliceRandom;
    order.shuffle(rng);
    Ok(order.chunks(batch_size).map(|c| c.to_vec()).collect())
}
