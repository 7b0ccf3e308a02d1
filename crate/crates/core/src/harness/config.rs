use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::distill::{Mode, TrainConfig};
use crate::models::{Family, Init, ModelSpec};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub classes: usize,
    pub n: usize,
    pub noise: f32,
}

/// Where the downstream task comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synth(SynthConfig),
    /// Directory holding `dataset.nta` and `classes.json`.
    Path(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub eta: f32,
    pub epochs: usize,
    pub batch: usize,
    pub init: Init,
    /// Pretext accuracy below this fails the run.
    pub min_accuracy: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { eta: 0.015, epochs: 10, batch: 32, init: Init::Default, min_accuracy: 0.5 }
    }
}

/// One experiment: data, models, training hyperparameters and the grid of
/// modes × subsets × repeats. Field names match the JSON config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub family: Family,
    pub teacher_spec: Option<ModelSpec>,
    pub student_spec: Option<ModelSpec>,
    pub pretext: SynthConfig,
    pub task: DataSource,
    pub pretrain: PretrainConfig,
    /// Existing teacher checkpoint; pretrained into `out` when absent.
    pub teacher: Option<PathBuf>,
    /// Overrides on top of the family's training defaults.
    pub train: Map<String, Value>,
    pub modes: Vec<Mode>,
    pub subsets: Vec<f64>,
    pub repeats: usize,
    pub train_frac: f64,
    pub master_seed: u64,
    /// Subset used by `sweep`.
    pub sweep_subset: f64,
    pub out: PathBuf,
    pub jobs: usize,
}

/// Step size, schedule length and CE temperature that train the toy models
/// stably on one core.
fn desk_overrides() -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("eta".into(), 0.015.into());
    m.insert("epochs".into(), 90.into());
    m.insert("ce_temperature".into(), "one".into());
    m
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            family: Family::Hierarchical,
            teacher_spec: None,
            student_spec: None,
            pretext: SynthConfig { classes: 8, n: 2000, noise: 0.3 },
            task: DataSource::Synth(SynthConfig { classes: 4, n: 2500, noise: 1.5 }),
            pretrain: PretrainConfig::default(),
            teacher: None,
            train: desk_overrides(),
            modes: vec![Mode::Ours, Mode::OursSwap, Mode::Cm1, Mode::Cm2, Mode::Cm3, Mode::Cm4],
            subsets: vec![1.0, 5.0, 10.0],
            repeats: 5,
            train_frac: 0.8,
            master_seed: 0,
            sweep_subset: 10.0,
            out: PathBuf::from("runs/default"),
            jobs: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if self.modes.is_empty() {
            return Err(Error::Config("no modes to run".into()));
        }
        if let Some(&p) = self.subsets.iter().chain([&self.sweep_subset]).find(|&&p| !(p > 0.0 && p <= 100.0)) {
            return Err(Error::Range(format!("subset percentage {p} outside (0, 100]")));
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(Error::Range(format!("train_frac {} outside (0, 1)", self.train_frac)));
        }
        self.train_config()?.validate()?;
        let (t, s) = (self.teacher_spec(), self.student_spec()?);
        t.validate()?;
        s.validate()?;
        Ok(())
    }

    pub fn task_classes(&self) -> Result<usize> {
        match &self.task {
            DataSource::Synth(s) => Ok(s.classes),
            DataSource::Path(dir) => {
                let path = dir.join("classes.json");
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                Ok(serde_json::from_str::<Vec<String>>(&text)?.len())
            }
        }
    }

    pub fn teacher_spec(&self) -> ModelSpec {
        self.teacher_spec.clone().unwrap_or_else(|| match self.family {
            Family::Isotropic => ModelSpec::toy_isotropic_teacher(self.pretext.classes),
            Family::Hierarchical => ModelSpec::toy_hierarchical_teacher(self.pretext.classes),
        })
    }

    pub fn student_spec(&self) -> Result<ModelSpec> {
        let classes = self.task_classes()?;
        Ok(self.student_spec.clone().unwrap_or_else(|| match self.family {
            Family::Isotropic => ModelSpec::toy_isotropic_student(classes),
            Family::Hierarchical => ModelSpec::toy_hierarchical_student(classes),
        }))
    }

    /// Family defaults with the `train` overrides applied.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut base = match serde_json::to_value(TrainConfig::for_family(self.family))? {
            Value::Object(m) => m,
            _ => unreachable!("TrainConfig serialises to an object"),
        };
        base.extend(self.train.clone());
        Ok(serde_json::from_value(Value::Object(base))?)
    }

    pub fn set_train_value(&mut self, key: &str, value: impl Into<Value>) {
        self.train.insert(key.to_string(), value.into());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        assert_eq!(c.train_config().unwrap().tau, 3.0);
        assert_eq!(c.student_spec().unwrap().classes, 4);
    }

    #[test]
    fn json_overrides_merge_onto_family_defaults() {
        let c: ExperimentConfig =
            serde_json::from_str(r#"{"family": "isotropic", "train": {"eta": 0.01}, "subsets": [10]}"#).unwrap();
        let t = c.train_config().unwrap();
        assert_eq!((t.eta, t.tau, t.alpha), (0.01, 4.0, 0.6));
        let bad: ExperimentConfig = serde_json::from_str(r#"{"subsets": [0]}"#).unwrap();
        assert!(matches!(bad.validate(), Err(Error::Range(_))));
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"sebsets": [1]}"#).is_err());
        let bad: ExperimentConfig = serde_json::from_str(r#"{"train": {"alpha": 2}}"#).unwrap();
        assert!(matches!(bad.validate(), Err(Error::InvalidHyperparameter(_))));
    }
}
