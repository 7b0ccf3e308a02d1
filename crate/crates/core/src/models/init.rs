//! Parameter initialisers (baselines CM2–CM4 and fresh classifier heads).

use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::layout::{layout, ParamKind, TensorLayout};
use super::{ModelSpec, Parameters};
use crate::rng::substream;
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const TRUNC_STD: f32 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Truncated normal, σ = 0.02, cut at ±2σ.
    Default,
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    Xavier,
    /// Normal with σ = sqrt(2 / fan_in).
    Kaiming,
}

impl FromStr for Init {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(Init::Default),
            "xavier" => Ok(Init::Xavier),
            "kaiming" => Ok(Init::Kaiming),
            other => Err(Error::Config(format!("unknown initializer `{other}`"))),
        }
    }
}

pub fn truncated_normal(n: usize, std: f32, rng: &mut impl Rng) -> Vec<f32> {
    let normal = Normal::new(0.0f32, std).expect("std is positive");
    let bound = 2.0 * std;
    (0..n)
        .map(|_| loop {
            let v = normal.sample(rng);
            if v.abs() <= bound {
                break v;
            }
        })
        .collect()
}

pub fn xavier_uniform(n: usize, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Vec<f32> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
    let dist = Uniform::new_inclusive(-a, a).expect("bound is finite");
    (0..n).map(|_| dist.sample(rng)).collect()
}

pub fn kaiming_normal(n: usize, fan_in: usize, rng: &mut impl Rng) -> Vec<f32> {
    let std = (2.0 / fan_in as f64).sqrt() as f32;
    let normal = Normal::new(0.0f32, std).expect("std is positive");
    (0..n).map(|_| normal.sample(rng)).collect()
}

fn init_tensor(entry: &TensorLayout, init: Init, seed: u64) -> Tensor {
    let n: usize = entry.shape.iter().product();
    let mut rng = substream(seed, &format!("init:{}", entry.name));
    let data = match entry.kind {
        ParamKind::Bias | ParamKind::NormShift | ParamKind::HeadBias => vec![0.0; n],
        ParamKind::NormScale => vec![1.0; n],
        ParamKind::HeadWeight => truncated_normal(n, TRUNC_STD, &mut rng),
        ParamKind::Weight | ParamKind::Positional => {
            let (fan_in, fan_out) = entry.fans();
            match init {
                Init::Default => truncated_normal(n, TRUNC_STD, &mut rng),
                Init::Xavier => xavier_uniform(n, fan_in, fan_out, &mut rng),
                Init::Kaiming => kaiming_normal(n, fan_in, &mut rng),
            }
        }
    };
    Tensor::new(entry.shape.clone(), data).expect("layout shapes are positive")
}

/// Allocates and initialises every tensor of `spec`. Each tensor draws from
/// its own labelled substream, so the result does not depend on table order.
pub fn build_model(spec: &ModelSpec, init: Init, seed: u64) -> Result<Parameters> {
    Ok(layout(spec)?.iter().map(|e| (e.name.clone(), init_tensor(e, init, seed))).collect())
}

/// Fresh classifier head (truncated normal weight, zero bias) for `spec`.
pub fn fresh_head(spec: &ModelSpec, seed: u64) -> Result<Vec<(String, Tensor)>> {
    Ok(layout(spec)?
        .iter()
        .filter(|e| e.kind.is_head())
        .map(|e| (e.name.clone(), init_tensor(e, Init::Default, seed)))
        .collect())
}
