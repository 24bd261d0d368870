//! Dataset handling: IDX ingestion, perturbed-variant synthesis with
//! ground-truth perturbations, normalization, and a binary cache.

mod cache;
mod idx;
mod synth;

pub use cache::{fnv1a64, read_cache, write_cache};
pub use idx::load_idx;
pub use synth::{synth_rotated, synth_rotated_with, synth_scaled, synth_scaled_with, synth_translated, synth_translated_with, SynthOptions};

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::tensor::Tensor;
use crate::warp::{warp_pixels, BoundaryPolicy, PixelMap};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Plain,
    R,
    T,
    S,
}

impl Variant {
    pub fn id(self) -> u8 {
        match self {
            Variant::Plain => 0,
            Variant::R => 1,
            Variant::T => 2,
            Variant::S => 3,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            0 => Ok(Variant::Plain),
            1 => Ok(Variant::R),
            2 => Ok(Variant::T),
            3 => Ok(Variant::S),
            _ => Err(Error::data(format!("unknown variant id {id}"))),
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_uppercase().as_str() {
            "PLAIN" => Ok(Variant::Plain),
            "R" => Ok(Variant::R),
            "T" => Ok(Variant::T),
            "S" => Ok(Variant::S),
            _ => Err(Error::Config(format!(
                "unknown variant {name:?}; expected one of plain, R, T, S"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Plain => "plain",
            Variant::R => "R",
            Variant::T => "T",
            Variant::S => "S",
        }
    }

    /// Canvas dims (h, w) of synthesized images.
    pub fn canvas(self) -> (usize, usize) {
        match self {
            Variant::Plain | Variant::R => (28, 28),
            Variant::T => (60, 60),
            Variant::S => (112, 112),
        }
    }
}

/// Ground truth for one synthesized sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Perturbation {
    None,
    /// Image-space rotation of the digit, degrees.
    Rotation(f64),
    /// Digit-center offset from the canvas center, pixels (x right, y down).
    Translation(f64, f64),
    /// log2 of the squared scale factor (the determinant unit).
    Scale(f64),
}

impl Perturbation {
    pub(crate) fn encode(self) -> (u8, f64, f64) {
        match self {
            Perturbation::None => (0, 0.0, 0.0),
            Perturbation::Rotation(a) => (1, a, 0.0),
            Perturbation::Translation(x, y) => (2, x, y),
            Perturbation::Scale(s) => (3, s, 0.0),
        }
    }

    pub(crate) fn decode(kind: u8, a: f64, b: f64) -> Result<Self> {
        Ok(match kind {
            0 => Perturbation::None,
            1 => Perturbation::Rotation(a),
            2 => Perturbation::Translation(a, b),
            3 => Perturbation::Scale(a),
            _ => return Err(Error::data(format!("unknown perturbation kind {kind}"))),
        })
    }
}

/// A labeled image collection with retained perturbation ground truth.
#[derive(Debug, Clone)]
pub struct LabeledImageSet {
    /// N x 1 x H x W.
    pub images: Tensor<f32>,
    pub labels: Vec<u8>,
    pub perturbations: Vec<Perturbation>,
    pub variant: Variant,
    /// (mean, std) that has been applied, if any.
    pub normalization: Option<(f32, f32)>,
}

impl LabeledImageSet {
    pub fn new(images: Tensor<f32>, labels: Vec<u8>, perturbations: Vec<Perturbation>, variant: Variant) -> Result<Self> {
        let (n, c, _, _) = images.dims4()?;
        if c != 1 {
            return Err(Error::data(format!("expected single-channel images, got {c}")));
        }
        if labels.len() != n || perturbations.len() != n {
            return Err(Error::data(format!(
                "count mismatch: {n} images, {} labels, {} perturbations",
                labels.len(),
                perturbations.len()
            )));
        }
        Ok(LabeledImageSet {
            images,
            labels,
            perturbations,
            variant,
            normalization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        let s = self.images.shape();
        (s[2], s[3])
    }

    /// One image as a 1 x H x W tensor.
    pub fn image(&self, i: usize) -> Tensor<f32> {
        let (h, w) = self.dims();
        let plane = &self.images.values()[i * h * w..(i + 1) * h * w];
        Tensor::new(vec![1, h, w], plane.to_vec()).expect("image slice")
    }

    /// Keeps the first n samples.
    pub fn truncated(mut self, n: usize) -> Self {
        let keep = n.min(self.len());
        let (h, w) = self.dims();
        let values = self.images.values()[..keep * h * w].to_vec();
        self.images = Tensor::new(vec![keep, 1, h, w], values).expect("truncate");
        self.labels.truncate(keep);
        self.perturbations.truncate(keep);
        self
    }
}

/// Computes (mean, std) over every pixel of the set.
pub fn global_stats(set: &LabeledImageSet) -> Result<(f32, f32)> {
    let vals = set.images.values();
    let n = vals.len() as f64;
    let mean = vals.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = vals.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    if var == 0.0 {
        return Err(Error::data("normalize: zero variance (constant images)"));
    }
    Ok((mean as f32, var.sqrt() as f32))
}

/// Normalizes to mean 0 and standard deviation 1 with stats computed
/// from the set itself (use for the training split).
pub fn normalize(set: LabeledImageSet) -> Result<LabeledImageSet> {
    let stats = global_stats(&set)?;
    normalize_with(set, stats)
}

/// Applies fixed normalization stats (test splits reuse the training
/// statistics). A set already normalized with the same stats is
/// returned unchanged.
pub fn normalize_with(mut set: LabeledImageSet, stats: (f32, f32)) -> Result<LabeledImageSet> {
    if set.normalization == Some(stats) {
        return Ok(set);
    }
    if set.normalization.is_some() {
        return Err(Error::data("normalize: set already normalized with different stats"));
    }
    let (mean, std) = stats;
    if std == 0.0 {
        return Err(Error::data("normalize: zero std"));
    }
    let inv = 1.0 / std;
    for v in set.images.values_mut() {
        *v = (*v - mean) * inv;
    }
    set.normalization = Some(stats);
    Ok(set)
}

const GLYPHS: [[&str; 7]; 10] = [
    ["01110", "10001", "10001", "10001", "10001", "10001", "01110"],
    ["00100", "01100", "00100", "00100", "00100", "00100", "01110"],
    ["01110", "10001", "00001", "00010", "00100", "01000", "11111"],
    ["11110", "00001", "00001", "01110", "00001", "00001", "11110"],
    ["00010", "00110", "01010", "10010", "11111", "00010", "00010"],
    ["11111", "10000", "11110", "00001", "00001", "10001", "01110"],
    ["00110", "01000", "10000", "11110", "10001", "10001", "01110"],
    ["11111", "00001", "00010", "00100", "01000", "01000", "01000"],
    ["01110", "10001", "10001", "01110", "10001", "10001", "01110"],
    ["01110", "10001", "10001", "01111", "00001", "00010", "01100"],
];

/// Deterministic procedural stand-in for MNIST: 28x28 digit renderings
/// with per-sample pose, aspect, shear, intensity and noise jitter.
/// Used by tests and examples when no IDX files are available.
pub fn synthetic_digit_set(n: usize, seed: u64) -> LabeledImageSet {
    let base = StreamRng::new(seed).split(0x5D);
    let glyph_tensors: Vec<Tensor<f32>> = GLYPHS
        .iter()
        .map(|rows| {
            Tensor::from_fn(vec![1, 7, 5], |idx| {
                let r = idx / 5;
                let c = idx % 5;
                if rows[r].as_bytes()[c] == b'1' {
                    1.0
                } else {
                    0.0
                }
            })
        })
        .collect();

    let mut values = Vec::with_capacity(n * 28 * 28);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = base.split(i as u64);
        let label = rng.below(10) as u8;
        let rot = rng.uniform(-9.0, 9.0);
        let shear = rng.uniform(-0.18, 0.18);
        let sx = rng.uniform(2.6, 3.4);
        let sy = rng.uniform(2.5, 3.1);
        let dx = rng.uniform(-1.8, 1.8);
        let dy = rng.uniform(-1.8, 1.8);
        let intensity = rng.uniform(0.72, 1.0) as f32;

        // content point p in glyph coords maps to canvas q:
        // q = R(rot) * Shear * Diag(sx, sy) * (p - c_glyph) + c_canvas + d
        let (s, c) = (rot as f64).to_radians().sin_cos();
        let fwd = [
            [c * sx - s * (shear * sx), -s * sy],
            [s * sx + c * (shear * sx), c * sy],
        ];
        let det = fwd[0][0] * fwd[1][1] - fwd[0][1] * fwd[1][0];
        let inv = [
            [fwd[1][1] / det, -fwd[0][1] / det],
            [-fwd[1][0] / det, fwd[0][0] / det],
        ];
        let (cgx, cgy) = (2.0, 3.0);
        let (ccx, ccy) = (13.5 + dx, 13.5 + dy);
        let map = PixelMap([
            [inv[0][0], inv[0][1], cgx - inv[0][0] * ccx - inv[0][1] * ccy],
            [inv[1][0], inv[1][1], cgy - inv[1][0] * ccx - inv[1][1] * ccy],
        ]);
        let rendered = warp_pixels(&glyph_tensors[label as usize], 28, 28, &map, BoundaryPolicy::ZeroFill)
            .expect("glyph warp");
        for &v in rendered.values() {
            let noisy = v * intensity + rng.uniform(-0.04, 0.04) as f32;
            values.push(noisy.clamp(0.0, 1.0));
        }
        labels.push(label);
    }
    let images = Tensor::new(vec![n, 1, 28, 28], values).expect("synthetic set");
    let perturbations = vec![Perturbation::None; n];
    LabeledImageSet::new(images, labels, perturbations, Variant::Plain).expect("synthetic set")
}
