use std::f32::consts::PI;
use std::str::FromStr;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::models::ImageShape;
use crate::rng::substream;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Which parameter family the class patterns come from. The two families
/// never share a pattern.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    Pretext,
    Task,
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretext" => Ok(SynthKind::Pretext),
            "task" => Ok(SynthKind::Task),
            other => Err(Error::Config(format!("unknown synthetic kind `{other}`"))),
        }
    }
}

/// Noise-free intensity of class `class` at pixel (y, x) of a `size`² image.
/// Classes cycle through grating, blob, ring and checkerboard; `class / 4`
/// and the family shift the pattern parameters.
fn pattern(kind: SynthKind, class: usize, y: usize, x: usize, size: usize) -> f32 {
    let shift = match kind {
        SynthKind::Pretext => 0.0,
        SynthKind::Task => 0.5,
    };
    let v = (class / 4) as f32 + shift;
    let s = size as f32;
    let (fy, fx) = (y as f32 + 0.5, x as f32 + 0.5);
    match class % 4 {
        0 => {
            let angle = PI * (0.15 + 0.37 * v);
            let freq = 2.0 * PI * (2.0 + 0.75 * v) / s;
            0.5 + 0.5 * (freq * (fx * angle.cos() + fy * angle.sin())).sin()
        }
        1 => {
            let a = 2.0 * PI * 0.29 * v;
            let (cx, cy) = (s * (0.5 + 0.25 * a.cos()), s * (0.5 + 0.25 * a.sin()));
            let r2 = (fx - cx).powi(2) + (fy - cy).powi(2);
            (-r2 / (2.0 * (0.12 * s).powi(2))).exp()
        }
        2 => {
            let radius = s * (0.18 + 0.07 * v);
            let r = ((fx - s / 2.0).powi(2) + (fy - s / 2.0).powi(2)).sqrt();
            (-(r - radius).powi(2) / (2.0 * (0.05 * s).powi(2))).exp()
        }
        _ => {
            let cell = (s / (4.0 + 1.5 * v)).max(1.0);
            let phase = 0.5 * cell * (v - v.floor());
            let cy = ((fy + phase) / cell).floor() as i64;
            let cx = ((fx + phase) / cell).floor() as i64;
            if (cx + cy).rem_euclid(2) == 0 {
                0.85
            } else {
                0.15
            }
        }
    }
}

/// `n` single-channel 32×32 images, `n / K` (±1) per class, each the class
/// pattern plus Gaussian pixel noise of standard deviation `noise`, clamped
/// to [0, 1]. Sample `i` has label `i mod K`.
pub fn generate_synthetic(kind: SynthKind, classes: usize, n: usize, noise: f32, seed: u64) -> Result<Dataset> {
    if classes < 2 || n < classes {
        return Err(Error::Range(format!("need K ≥ 2 and n ≥ K, got K = {classes}, n = {n}")));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::InvalidHyperparameter(format!("noise must be non-negative, got {noise}")));
    }
    let shape = ImageShape::DESK;
    let size = shape.height;
    let per = shape.numel();
    let templates: Vec<Vec<f32>> =
        (0..classes).map(|c| (0..per).map(|p| pattern(kind, c, p / size, p % size, size)).collect()).collect();
    let tag = match kind {
        SynthKind::Pretext => "pretext",
        SynthKind::Task => "task",
    };
    let mut streams: Vec<_> = (0..classes).map(|c| substream(seed, &format!("synth:{tag}:{c}"))).collect();
    let normal = Normal::new(0.0f32, noise).expect("noise is finite and non-negative");
    let mut data = Vec::with_capacity(n * per);
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    for &c in &labels {
        let rng = &mut streams[c];
        data.extend(templates[c].iter().map(|&t| {
            let e = if noise > 0.0 { normal.sample(rng) } else { 0.0 };
            (t + e).clamp(0.0, 1.0)
        }));
    }
    let images = Tensor::new(vec![n, shape.channels, shape.height, shape.width], data)?;
    let names = (0..classes).map(|c| format!("{tag}{c}")).collect();
    Dataset::new(images, labels, names)
}
