use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::models::{Family, Init};
use crate::surgery::StrategyKind;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Dual selection plus self-distillation from an EMA auxiliary student.
    Ours,
    /// As `Ours` with the two selected initialisations exchanged.
    OursSwap,
    /// Single selected student, cross-entropy only.
    Cm1,
    /// Default (truncated normal) init, cross-entropy only.
    Cm2,
    /// Xavier init, cross-entropy only.
    Cm3,
    /// Kaiming init, cross-entropy only.
    Cm4,
}

impl Mode {
    pub const ALL: [Mode; 6] = [Mode::Ours, Mode::OursSwap, Mode::Cm1, Mode::Cm2, Mode::Cm3, Mode::Cm4];

    pub fn has_aux(self) -> bool {
        matches!(self, Mode::Ours | Mode::OursSwap)
    }

    pub fn needs_teacher(self) -> bool {
        matches!(self, Mode::Ours | Mode::OursSwap | Mode::Cm1)
    }

    /// Initialiser of the from-scratch baselines.
    pub fn scratch_init(self) -> Option<Init> {
        match self {
            Mode::Cm2 => Some(Init::Default),
            Mode::Cm3 => Some(Init::Xavier),
            Mode::Cm4 => Some(Init::Kaiming),
            _ => None,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Ours => "ours",
            Mode::OursSwap => "ours_swap",
            Mode::Cm1 => "cm1",
            Mode::Cm2 => "cm2",
            Mode::Cm3 => "cm3",
            Mode::Cm4 => "cm4",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|m| m.to_string() == s).ok_or_else(|| Error::Config(format!("unknown mode `{s}`")))
    }
}

/// Temperature of the probabilities fed to the cross-entropy term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CeTemperature {
    /// Same τ as the distillation term.
    Tau,
    /// Plain softmax.
    One,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub alpha: f32,
    pub beta: f32,
    pub tau: f32,
    pub eta: f32,
    pub epochs: usize,
    pub batch: usize,
    pub mode: Mode,
    pub master_seed: u64,
    pub ce_temperature: CeTemperature,
    pub strategy: StrategyKind,
    /// Write S (and S′) checkpoints every this many epochs.
    pub checkpoint_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.6,
            beta: 0.9,
            tau: 4.0,
            eta: 0.1,
            epochs: 30,
            batch: 32,
            mode: Mode::Ours,
            master_seed: 0,
            ce_temperature: CeTemperature::Tau,
            strategy: StrategyKind::Uniform,
            checkpoint_every: None,
        }
    }
}

impl TrainConfig {
    /// Defaults with the family's temperature (4 isotropic, 3 hierarchical).
    pub fn for_family(family: Family) -> Self {
        let tau = match family {
            Family::Isotropic => 4.0,
            Family::Hierarchical => 3.0,
        };
        Self { tau, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidHyperparameter(msg));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad(format!("beta must lie in [0, 1], got {}", self.beta));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("eta must be positive, got {}", self.eta));
        }
        if self.batch == 0 {
            return bad("batch must be positive".into());
        }
        if self.checkpoint_every == Some(0) {
            return bad("checkpoint_every must be positive".into());
        }
        Ok(())
    }

    /// Temperature of the cross-entropy probabilities.
    pub fn ce_tau(&self) -> f32 {
        match self.ce_temperature {
            CeTemperature::Tau => self.tau,
            CeTemperature::One => 1.0,
        }
    }
}
