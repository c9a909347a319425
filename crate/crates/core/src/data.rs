//! Labelled datasets: JSON files, IDX (MNIST-style) files and two built-in
//! synthetic generators used for fixtures.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub inputs: Vec<Tensor>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(inputs: Vec<Tensor>, labels: Vec<usize>) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(first) = inputs.first() {
            if let Some(bad) = inputs.iter().position(|x| x.shape() != first.shape()) {
                return Err(Error::Dimension(format!(
                    "input {bad} has shape {:?}, expected {:?}",
                    inputs[bad].shape(),
                    first.shape()
                )));
            }
        }
        Ok(Dataset { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn take(&self, n: usize) -> Dataset {
        Dataset {
            inputs: self.inputs.iter().take(n).cloned().collect(),
            labels: self.labels.iter().take(n).copied().collect(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let raw: Dataset = serde_json::from_str(&std::fs::read_to_string(path)?)
            .map_err(|e| Error::Format(e.to_string()))?;
        Dataset::new(raw.inputs, raw.labels)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)? + "\n")?;
        Ok(())
    }
}

/// Two Gaussian blobs in the plane, centred at (-2, -2) (class 0) and (2, 2)
/// (class 1). Points are resampled until they fall on their class's side of
/// `x + y = 0`, so the set is always linearly separable.
pub fn blobs(samples: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(samples);
    let mut labels = Vec::with_capacity(samples);
    for i in 0..samples {
        let label = i % 2;
        let centre = if label == 0 { -2.0 } else { 2.0 };
        let point = loop {
            let (a, b) = gaussian_pair(&mut rng);
            let p = [centre + 0.8 * a, centre + 0.8 * b];
            if (p[0] + p[1] > 0.25) == (label == 1) && (p[0] + p[1]).abs() > 0.25 {
                break p;
            }
        };
        inputs.push(Tensor::vector(point.to_vec()).expect("finite"));
        labels.push(label);
    }
    Dataset { inputs, labels }
}

fn gaussian_pair(rng: &mut ChaCha8Rng) -> (f64, f64) {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen::<f64>();
    let r = (-2.0 * u1.ln()).sqrt();
    let t = std::f64::consts::TAU * u2;
    (r * t.cos(), r * t.sin())
}

const GLYPHS: [[&str; 8]; 10] = [
    [
        "..####..", ".##..##.", ".#....#.", ".#....#.", ".#....#.", ".#....#.", ".##..##.", "..####..",
    ],
    [
        "...##...", "..###...", ".#.##...", "...##...", "...##...", "...##...", "...##...", ".######.",
    ],
    [
        "..####..", ".#....#.", "......#.", ".....#..", "....#...", "...#....", "..#.....", ".######.",
    ],
    [
        ".#####..", "......#.", "......#.", "..####..", "......#.", "......#.", "......#.", ".#####..",
    ],
    [
        ".....#..", "....##..", "...#.#..", "..#..#..", ".#...#..", ".######.", ".....#..", ".....#..",
    ],
    [
        ".######.", ".#......", ".#......", ".#####..", "......#.", "......#.", ".#....#.", "..####..",
    ],
    [
        "..####..", ".#......", ".#......", ".#####..", ".#....#.", ".#....#.", ".#....#.", "..####..",
    ],
    [
        ".######.", "......#.", ".....#..", ".....#..", "....#...", "....#...", "...#....", "...#....",
    ],
    [
        "..####..", ".#....#.", ".#....#.", "..####..", ".#....#.", ".#....#.", ".#....#.", "..####..",
    ],
    [
        "..####..", ".#....#.", ".#....#.", ".#....#.", "..#####.", "......#.", "......#.", "..####..",
    ],
];

/// Synthetic digit-like 8x8 bitmaps, shape `[1, 8, 8]`, labels cycling 0..9.
///
/// Each sample is its class glyph shifted by up to one pixel, with stroke
/// intensities in [0.5, 1], a few stroke pixels dropped and a few stray
/// background pixels lit. Intensities are then mapped to [-1, 1] as in the usual
/// MNIST preprocessing, so the background is exactly -1 and the zero baseline
/// is a uniform grey image.
pub fn digits8x8(samples: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(samples);
    let mut labels = Vec::with_capacity(samples);
    for i in 0..samples {
        let label = i % 10;
        let dy: i32 = rng.gen_range(-1..=1);
        let dx: i32 = rng.gen_range(-1..=1);
        let mut pixels = vec![0.0; 64];
        for (r, row) in GLYPHS[label].iter().enumerate() {
            for (c, ch) in row.bytes().enumerate() {
                let (y, x) = (r as i32 + dy, c as i32 + dx);
                if ch != b'#' || !(0..8).contains(&y) || !(0..8).contains(&x) {
                    continue;
                }
                if rng.gen_bool(0.08) {
                    continue;
                }
                pixels[(y * 8 + x) as usize] = rng.gen_range(0.5..1.0);
            }
        }
        for _ in 0..2 {
            if rng.gen_bool(0.3) {
                let p = rng.gen_range(0..64);
                if pixels[p] == 0.0 {
                    pixels[p] = rng.gen_range(0.2..0.6);
                }
            }
        }
        let scaled = pixels.iter().map(|p| 2.0 * p - 1.0).collect();
        inputs.push(Tensor::new(vec![1, 8, 8], scaled).expect("finite"));
        labels.push(label);
    }
    Dataset { inputs, labels }
}

/// Builds a named generator dataset (`blobs` or `digits8x8`).
pub fn builtin(name: &str, samples: usize, seed: u64) -> Result<Dataset> {
    match name {
        "blobs" => Ok(blobs(samples, seed)),
        "digits8x8" => Ok(digits8x8(samples, seed)),
        other => Err(Error::InvalidArgument(format!("unknown built-in dataset '{other}'"))),
    }
}

fn read_be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format("IDX header truncated".into()))
}

/// Parses an IDX3 unsigned-byte image file into `[1, rows, cols]` tensors scaled to [0, 1].
pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<Tensor>> {
    let magic = read_be_u32(bytes, 0)?;
    if magic != 0x0000_0803 {
        return Err(Error::Format(format!("not an IDX image file (magic {magic:#010x})")));
    }
    let count = read_be_u32(bytes, 4)? as usize;
    let rows = read_be_u32(bytes, 8)? as usize;
    let cols = read_be_u32(bytes, 12)? as usize;
    let plane = rows * cols;
    let body = &bytes[16..];
    if body.len() != count * plane {
        return Err(Error::Format(format!(
            "IDX image body has {} bytes, expected {}",
            body.len(),
            count * plane
        )));
    }
    body.chunks_exact(plane.max(1))
        .take(count)
        .map(|img| Tensor::new(vec![1, rows, cols], img.iter().map(|&b| f64::from(b) / 255.0).collect()))
        .collect()
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = read_be_u32(bytes, 0)?;
    if magic != 0x0000_0801 {
        return Err(Error::Format(format!("not an IDX label file (magic {magic:#010x})")));
    }
    let count = read_be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(Error::Format(format!(
            "IDX label body has {} bytes, expected {count}",
            body.len()
        )));
    }
    Ok(body.iter().map(|&b| usize::from(b)).collect())
}

pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let inputs = parse_idx_images(&std::fs::read(images)?)?;
    let labels = parse_idx_labels(&std::fs::read(labels)?)?;
    Dataset::new(inputs, labels)
}
