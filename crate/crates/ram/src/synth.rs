//! Procedurally rendered 28x28 digit corpus in the standard IDX layout.
//!
//! Digits are stroke glyphs with per-sample scale/shear/offset, stroke-width
//! and intensity jitter, so the ten classes are separable but not trivially
//! identical. This stands in for the real handwritten set in environments
//! that do not ship it; the files are bit-compatible with the IDX loader.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{ImageSample, DIGIT_SIDE};
use crate::error::{RamError, Result};

type Segment = [f64; 4]; // x1, y1, x2, y2 in the unit square, y down

fn arc(cx: f64, cy: f64, r: f64, deg_from: f64, deg_to: f64, steps: usize) -> Vec<Segment> {
    let mut segs = Vec::with_capacity(steps);
    let mut prev = None;
    for i in 0..=steps {
        let t = deg_from + (deg_to - deg_from) * i as f64 / steps as f64;
        let (s, c) = t.to_radians().sin_cos();
        let p = (cx + r * c, cy + r * s);
        if let Some((px, py)) = prev {
            segs.push([px, py, p.0, p.1]);
        }
        prev = Some(p);
    }
    segs
}

fn ellipse(cx: f64, cy: f64, rx: f64, ry: f64) -> Vec<Segment> {
    let steps = 16;
    let mut segs = Vec::with_capacity(steps);
    let mut prev = None;
    for i in 0..=steps {
        let t = 2.0 * std::f64::consts::PI * i as f64 / steps as f64;
        let p = (cx + rx * t.cos(), cy + ry * t.sin());
        if let Some((px, py)) = prev {
            segs.push([px, py, p.0, p.1]);
        }
        prev = Some(p);
    }
    segs
}

/// Stroke skeleton of one digit class.
pub fn glyph_strokes(digit: u8) -> Vec<Segment> {
    match digit {
        0 => ellipse(0.5, 0.5, 0.2, 0.34),
        1 => vec![[0.5, 0.12, 0.5, 0.88], [0.5, 0.12, 0.36, 0.3]],
        2 => {
            let mut s = arc(0.5, 0.3, 0.2, 180.0, 360.0, 8);
            s.push([0.7, 0.3, 0.3, 0.88]);
            s.push([0.3, 0.88, 0.72, 0.88]);
            s
        }
        3 => {
            let mut s = arc(0.45, 0.32, 0.17, -125.0, 90.0, 8);
            s.extend(arc(0.45, 0.66, 0.2, -90.0, 130.0, 8));
            s
        }
        4 => vec![
            [0.64, 0.12, 0.64, 0.88],
            [0.64, 0.12, 0.28, 0.58],
            [0.28, 0.58, 0.76, 0.58],
        ],
        5 => {
            let mut s = vec![[0.7, 0.14, 0.32, 0.14], [0.32, 0.14, 0.3, 0.46]];
            s.extend(arc(0.47, 0.62, 0.19, -140.0, 120.0, 8));
            s
        }
        6 => {
            let mut s = vec![[0.62, 0.12, 0.4, 0.52]];
            s.extend(ellipse(0.47, 0.66, 0.18, 0.18));
            s
        }
        7 => vec![[0.3, 0.14, 0.72, 0.14], [0.72, 0.14, 0.42, 0.88]],
        8 => {
            let mut s = ellipse(0.5, 0.3, 0.16, 0.16);
            s.extend(ellipse(0.5, 0.67, 0.19, 0.19));
            s
        }
        9 => {
            let mut s = ellipse(0.5, 0.33, 0.17, 0.17);
            s.push([0.67, 0.33, 0.58, 0.88]);
            s
        }
        other => panic!("digit {other} out of range"),
    }
}

fn dist_point_segment(px: f64, py: f64, seg: &Segment) -> f64 {
    let (ax, ay, bx, by) = (seg[0], seg[1], seg[2], seg[3]);
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (ax + t * dx, ay + t * dy);
    ((px - cx) * (px - cx) + (py - cy) * (py - cy)).sqrt()
}

/// Render one jittered digit as a 28x28 image in [0,1].
pub fn render_digit<R: Rng>(digit: u8, rng: &mut R) -> Vec<f64> {
    let base = glyph_strokes(digit);

    // per-sample affine jitter about the glyph center
    let sx = rng.gen_range(0.85..1.12);
    let sy = rng.gen_range(0.85..1.12);
    let shear = rng.gen_range(-0.18..0.18);
    let ox = rng.gen_range(-0.05..0.05);
    let oy = rng.gen_range(-0.05..0.05);
    let half_width = rng.gen_range(0.045..0.065);
    let intensity = rng.gen_range(0.8..1.0);

    let tf = |x: f64, y: f64| -> (f64, f64) {
        let (dx, dy) = (x - 0.5, y - 0.5);
        (0.5 + sx * dx + shear * dy + ox, 0.5 + sy * dy + oy)
    };
    let segs: Vec<Segment> = base
        .iter()
        .map(|s| {
            let (x1, y1) = tf(s[0], s[1]);
            let (x2, y2) = tf(s[2], s[3]);
            [x1, y1, x2, y2]
        })
        .collect();

    let aa = 1.2 / DIGIT_SIDE as f64;
    let mut pixels = vec![0.0; DIGIT_SIDE * DIGIT_SIDE];
    for r in 0..DIGIT_SIDE {
        for c in 0..DIGIT_SIDE {
            let px = (c as f64 + 0.5) / DIGIT_SIDE as f64;
            let py = (r as f64 + 0.5) / DIGIT_SIDE as f64;
            let d = segs
                .iter()
                .map(|s| dist_point_segment(px, py, s))
                .fold(f64::INFINITY, f64::min);
            let coverage = ((half_width + aa * 0.5 - d) / aa).clamp(0.0, 1.0);
            pixels[r * DIGIT_SIDE + c] = intensity * coverage;
        }
    }
    pixels
}

/// A balanced, shuffled corpus of `n` samples.
pub fn generate(n: usize, seed: u64) -> Vec<ImageSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples: Vec<ImageSample> = (0..n)
        .map(|i| {
            let label = (i % 10) as u8;
            ImageSample::new(render_digit(label, &mut rng), DIGIT_SIDE, DIGIT_SIDE, label)
        })
        .collect();
    use rand::seq::SliceRandom;
    samples.shuffle(&mut rng);
    samples
}

fn write_idx_images(path: &Path, samples: &[ImageSample]) -> Result<()> {
    let mut bytes = Vec::with_capacity(16 + samples.len() * DIGIT_SIDE * DIGIT_SIDE);
    bytes.write_all(&0x0000_0803u32.to_be_bytes()).unwrap();
    bytes.write_all(&(samples.len() as u32).to_be_bytes()).unwrap();
    bytes.write_all(&(DIGIT_SIDE as u32).to_be_bytes()).unwrap();
    bytes.write_all(&(DIGIT_SIDE as u32).to_be_bytes()).unwrap();
    for s in samples {
        bytes.extend(s.pixels.iter().map(|&v| (v * 255.0).round() as u8));
    }
    std::fs::write(path, bytes).map_err(|e| RamError::io(path, e))
}

fn write_idx_labels(path: &Path, samples: &[ImageSample]) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + samples.len());
    bytes.write_all(&0x0000_0801u32.to_be_bytes()).unwrap();
    bytes.write_all(&(samples.len() as u32).to_be_bytes()).unwrap();
    bytes.extend(samples.iter().map(|s| s.label));
    std::fs::write(path, bytes).map_err(|e| RamError::io(path, e))
}

pub struct IdxPaths {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

/// Write a train/test corpus under `dir` using the conventional file names.
pub fn write_idx_dataset(dir: &Path, n_train: usize, n_test: usize, seed: u64) -> Result<IdxPaths> {
    std::fs::create_dir_all(dir).map_err(|e| RamError::io(dir, e))?;
    let train = generate(n_train, seed);
    let test = generate(n_test, seed.wrapping_add(0x5eed));
    let paths = IdxPaths {
        train_images: dir.join("train-images-idx3-ubyte"),
        train_labels: dir.join("train-labels-idx1-ubyte"),
        test_images: dir.join("t10k-images-idx3-ubyte"),
        test_labels: dir.join("t10k-labels-idx1-ubyte"),
    };
    write_idx_images(&paths.train_images, &train)?;
    write_idx_labels(&paths.train_labels, &train)?;
    write_idx_images(&paths.test_images, &test)?;
    write_idx_labels(&paths.test_labels, &test)?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::load_idx;

    #[test]
    fn rendered_digits_are_valid_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for d in 0..10u8 {
            let img = render_digit(d, &mut rng);
            assert_eq!(img.len(), 28 * 28);
            assert!(img.iter().all(|&v| (0.0..=1.0).contains(&v)));
            let ink: f64 = img.iter().sum();
            assert!(ink > 10.0, "digit {d} almost empty: ink {ink}");
        }
    }

    #[test]
    fn class_means_are_pairwise_distinct() {
        let samples = generate(500, 7);
        let mut means = vec![vec![0.0; 28 * 28]; 10];
        let mut counts = [0usize; 10];
        for s in &samples {
            counts[s.label as usize] += 1;
            for (m, p) in means[s.label as usize].iter_mut().zip(&s.pixels) {
                *m += p;
            }
        }
        for (m, &c) in means.iter_mut().zip(&counts) {
            assert!(c > 0);
            for v in m.iter_mut() {
                *v /= c as f64;
            }
        }
        for a in 0..10 {
            for b in (a + 1)..10 {
                let dist: f64 = means[a]
                    .iter()
                    .zip(&means[b])
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
                assert!(dist > 1.0, "classes {a} and {b} too close: {dist}");
            }
        }
    }

    #[test]
    fn generation_is_deterministic_and_balanced() {
        let a = generate(100, 3);
        let b = generate(100, 3);
        assert_eq!(a.len(), 100);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.pixels, y.pixels);
            assert_eq!(x.label, y.label);
        }
        let mut counts = [0usize; 10];
        for s in &a {
            counts[s.label as usize] += 1;
        }
        assert!(counts.iter().all(|&c| c == 10), "{counts:?}");
    }

    #[test]
    fn idx_files_round_trip_through_the_loader() {
        let dir = tempfile::tempdir().unwrap();
        let paths = write_idx_dataset(dir.path(), 30, 20, 11).unwrap();
        let train = load_idx(&paths.train_images, &paths.train_labels).unwrap();
        let test = load_idx(&paths.test_images, &paths.test_labels).unwrap();
        assert_eq!(train.len(), 30);
        assert_eq!(test.len(), 20);
        let reference = generate(30, 11);
        for (loaded, generated) in train.iter().zip(&reference) {
            assert_eq!(loaded.label, generated.label);
            // loader values are quantized to 1/255 steps
            for (a, b) in loaded.pixels.iter().zip(&generated.pixels) {
                assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }
}
