//! Foveated glimpse sensor: multi-scale crops around a normalized location,
//! sharp at the center and mean-pooled (blurry) toward the periphery.

use serde::{Deserialize, Serialize};

use crate::error::{RamError, Result};

/// A fixation point in normalized image coordinates.
///
/// `(-1, -1)` is the top-left corner of the image, `(1, 1)` the bottom-right,
/// `(0, 0)` the center. Constructors clamp both axes into `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub x: f64,
    pub y: f64,
}

impl Location {
    pub fn new(x: f64, y: f64) -> Self {
        Location {
            x: x.clamp(-1.0, 1.0),
            y: y.clamp(-1.0, 1.0),
        }
    }

    /// Pixel-space center for an image of `width` x `height`:
    /// `((x+1)/2 * (W-1), (y+1)/2 * (H-1))`, rounded to the nearest integer.
    pub fn to_pixel(self, width: usize, height: usize) -> (i64, i64) {
        let px = ((self.x + 1.0) / 2.0 * (width as f64 - 1.0)).round() as i64;
        let py = ((self.y + 1.0) / 2.0 * (height as f64 - 1.0)).round() as i64;
        (px, py)
    }
}

/// Glimpse sensor geometry: `num_glimpses` fixations per episode, each
/// producing `num_scales` patches of `bandwidth` x `bandwidth` pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlimpseConfig {
    pub num_glimpses: usize,
    pub num_scales: usize,
    pub bandwidth: usize,
}

impl GlimpseConfig {
    pub fn new(num_glimpses: usize, num_scales: usize, bandwidth: usize) -> Result<Self> {
        if num_glimpses < 1 || num_scales < 1 || bandwidth < 1 {
            return Err(RamError::Config(format!(
                "glimpse config must have num_glimpses, num_scales, bandwidth >= 1 \
                 (got {num_glimpses}, {num_scales}, {bandwidth})"
            )));
        }
        Ok(GlimpseConfig {
            num_glimpses,
            num_scales,
            bandwidth,
        })
    }

    /// Flattened sensor input size: `bandwidth^2 * num_scales`.
    pub fn sensor_size(&self) -> usize {
        self.bandwidth * self.bandwidth * self.num_scales
    }

    /// Side length of the raw crop for 1-based scale `s`: `bandwidth * 2^(s-1)`.
    pub fn scale_side(&self, scale: usize) -> usize {
        self.bandwidth << (scale - 1)
    }
}

/// One multi-scale observation: `num_scales` patches of `bandwidth^2` values
/// concatenated smallest (sharpest) scale first.
#[derive(Debug, Clone, PartialEq)]
pub struct RetinaObservation {
    pub flat: Vec<f64>,
    pub bandwidth: usize,
    pub num_scales: usize,
}

impl RetinaObservation {
    /// The `bandwidth` x `bandwidth` patch for 1-based scale `s`, row-major.
    pub fn patch(&self, scale: usize) -> &[f64] {
        let len = self.bandwidth * self.bandwidth;
        &self.flat[(scale - 1) * len..scale * len]
    }
}

/// Crop a `side` x `side` patch centered (by nearest-pixel rounding) at
/// `center`. Regions outside the image are zero-filled. The patch spans
/// `[c - side/2, c - side/2 + side)` on each axis, with `side/2` in integer
/// division.
pub fn extract_patch(
    image: &[f64],
    width: usize,
    height: usize,
    center: Location,
    side: usize,
) -> Vec<f64> {
    let (cx, cy) = center.to_pixel(width, height);
    let half = (side / 2) as i64;
    let row0 = cy - half;
    let col0 = cx - half;

    let mut patch = vec![0.0; side * side];
    for r in 0..side as i64 {
        let src_r = row0 + r;
        if src_r < 0 || src_r >= height as i64 {
            continue;
        }
        for c in 0..side as i64 {
            let src_c = col0 + c;
            if src_c < 0 || src_c >= width as i64 {
                continue;
            }
            patch[(r * side as i64 + c) as usize] =
                image[src_r as usize * width + src_c as usize];
        }
    }
    patch
}

/// Mean-pool a `k*b` x `k*b` patch down to `b` x `b`: each output pixel is
/// the exact mean of its `k` x `k` source block.
pub fn downsample(patch: &[f64], bandwidth: usize) -> Result<Vec<f64>> {
    let side2 = patch.len();
    let side = (side2 as f64).sqrt() as usize;
    if side * side != side2 || side % bandwidth != 0 {
        return Err(RamError::Dimension(format!(
            "downsample expects a square patch whose side is a multiple of {bandwidth}, \
             got {side2} values"
        )));
    }
    let k = side / bandwidth;
    let inv = 1.0 / (k * k) as f64;

    let mut out = vec![0.0; bandwidth * bandwidth];
    for br in 0..bandwidth {
        for bc in 0..bandwidth {
            let mut sum = 0.0;
            for r in 0..k {
                for c in 0..k {
                    sum += patch[(br * k + r) * side + (bc * k + c)];
                }
            }
            out[br * bandwidth + bc] = sum * inv;
        }
    }
    Ok(out)
}

/// Full retina observation at `loc`: scale `s` crops a `B * 2^(s-1)` patch
/// and mean-pools it to `B` x `B`. Scale 1 is the unblurred crop.
pub fn retina(
    image: &[f64],
    width: usize,
    height: usize,
    loc: Location,
    cfg: &GlimpseConfig,
) -> RetinaObservation {
    let b = cfg.bandwidth;
    let mut flat = Vec::with_capacity(cfg.sensor_size());
    for s in 1..=cfg.num_scales {
        let side = cfg.scale_side(s);
        let patch = extract_patch(image, width, height, loc, side);
        if s == 1 {
            flat.extend_from_slice(&patch);
        } else {
            // side is an exact multiple of b, so pooling cannot fail
            let pooled = downsample(&patch, b).expect("scale geometry");
            flat.extend_from_slice(&pooled);
        }
    }
    RetinaObservation {
        flat,
        bandwidth: b,
        num_scales: cfg.num_scales,
    }
}

/// Write a patch as a binary PGM (P5) file, mapping [0,1] to 0..255.
pub fn write_pgm(path: &std::path::Path, patch: &[f64], side: usize) -> Result<()> {
    let mut buf = format!("P5\n{side} {side}\n255\n").into_bytes();
    buf.extend(
        patch
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    std::fs::write(path, buf).map_err(|e| RamError::io(path, e))
}
