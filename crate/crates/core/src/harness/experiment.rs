use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{DataSource, ExperimentConfig};
use super::cost::{measure_cost, Cost};
use super::report::{self, CostRow, ResultRow};
use crate::data::{generate_synthetic, load_dataset, split, subsample, Dataset, SynthKind};
use crate::distill::{self, gap_csv, history_csv, predict_dataset, Mode, StepRecord, Teacher, TrainConfig};
use crate::models::{Init, ModelSpec, Parameters};
use crate::rng::derive_seed;
use crate::surgery::{read_archive, write_archive};
use crate::{Error, Result};

/// Teacher after pretext pretraining.
#[derive(Clone, Debug)]
pub struct Pretrained {
    pub spec: ModelSpec,
    pub params: Parameters,
    pub accuracy: f64,
}

fn init_mode(init: Init) -> Mode {
    match init {
        Init::Default => Mode::Cm2,
        Init::Xavier => Mode::Cm3,
        Init::Kaiming => Mode::Cm4,
    }
}

/// Trains the teacher with plain cross-entropy on the synthetic pretext task.
pub fn pretrain(cfg: &ExperimentConfig) -> Result<Pretrained> {
    let spec = cfg.teacher_spec();
    let seed = derive_seed(cfg.master_seed, "pretext");
    let p = &cfg.pretext;
    let data = generate_synthetic(SynthKind::Pretext, p.classes, p.n, p.noise, seed)?;
    let (train, test) = split(&data, cfg.train_frac, seed)?;
    let tc = TrainConfig {
        mode: init_mode(cfg.pretrain.init),
        eta: cfg.pretrain.eta,
        epochs: cfg.pretrain.epochs,
        batch: cfg.pretrain.batch,
        ce_temperature: distill::CeTemperature::One,
        master_seed: derive_seed(cfg.master_seed, "pretrain"),
        ..TrainConfig::for_family(spec.family)
    };
    let state = distill::train(&tc, None, &spec, &train, None)?;
    let accuracy = distill::accuracy(&state.params_s, &spec, &test)?;
    if accuracy < cfg.pretrain.min_accuracy {
        return Err(Error::Training(format!(
            "teacher reached only {accuracy:.3} pretext accuracy (need {}); try a larger pretrain eta, more epochs \
             or a wider teacher spec",
            cfg.pretrain.min_accuracy
        )));
    }
    let mut params = state.params_s;
    params.set_requires_grad(false);
    Ok(Pretrained { spec, params, accuracy })
}

/// The configured teacher checkpoint, or a freshly pretrained teacher.
pub fn resolve_teacher(cfg: &ExperimentConfig) -> Result<Pretrained> {
    match &cfg.teacher {
        Some(path) => {
            let spec = cfg.teacher_spec();
            let params = read_archive(path)?;
            params.check_against(&spec)?;
            Ok(Pretrained { spec, params, accuracy: f64::NAN })
        }
        None => pretrain(cfg),
    }
}

pub fn load_task(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.task {
        DataSource::Synth(s) => {
            generate_synthetic(SynthKind::Task, s.classes, s.n, s.noise, derive_seed(cfg.master_seed, "task"))
        }
        DataSource::Path(dir) => load_dataset(dir),
    }
}

/// Stratified train/test split of the task data under the master seed.
pub fn task_split(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    split(&load_task(cfg)?, cfg.train_frac, cfg.master_seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mode: Mode,
    pub subset_pct: f64,
    pub rep: usize,
}

impl Cell {
    pub fn id(&self) -> String {
        format!("{}_{}_{}", self.mode, self.subset_pct, self.rep)
    }

    /// Seed of the training run; shared by all modes of one (subset, repeat).
    pub fn run_seed(&self, master: u64) -> u64 {
        derive_seed(master, &format!("run:{}:{}", self.subset_pct, self.rep))
    }
}

#[derive(Clone, Debug)]
pub struct CellReport {
    pub accuracy: f64,
    /// `confusion[true][pred]` counts.
    pub confusion: Vec<Vec<usize>>,
    pub history: Vec<StepRecord>,
    pub params_s: Parameters,
    pub params_aux: Option<Parameters>,
}

#[derive(Clone, Debug)]
pub struct CellResult {
    pub cell: Cell,
    pub outcome: std::result::Result<CellReport, String>,
    pub cost: Cost,
}

/// Shared, read-only inputs of every cell.
pub struct Workspace {
    pub teacher: Pretrained,
    pub student: ModelSpec,
    pub train: Dataset,
    pub test: Dataset,
    pub base: TrainConfig,
    pub master_seed: u64,
}

impl Workspace {
    pub fn prepare(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let (train, test) = task_split(cfg)?;
        Ok(Self {
            teacher: resolve_teacher(cfg)?,
            student: cfg.student_spec()?,
            train,
            test,
            base: cfg.train_config()?,
            master_seed: cfg.master_seed,
        })
    }

    pub fn cell_config(&self, cell: &Cell) -> TrainConfig {
        TrainConfig { mode: cell.mode, master_seed: cell.run_seed(self.master_seed), ..self.base.clone() }
    }

    fn cell_report(&self, cell: &Cell, tc: &TrainConfig) -> Result<CellReport> {
        let sub = subsample(&self.train, cell.subset_pct, self.master_seed, cell.rep)?;
        let teacher = Teacher { spec: &self.teacher.spec, params: &self.teacher.params };
        let state = distill::train(tc, Some(teacher), &self.student, &sub, None)?;
        let pred = predict_dataset(&state.params_s, &self.student, &self.test)?;
        let k = self.student.classes;
        let mut confusion = vec![vec![0; k]; k];
        for (&t, &p) in self.test.labels().iter().zip(&pred) {
            confusion[t][p] += 1;
        }
        Ok(CellReport {
            accuracy: report::accuracy_of(&confusion),
            confusion,
            history: state.history,
            params_s: state.params_s,
            params_aux: state.params_aux,
        })
    }

    /// Trains and evaluates one cell; errors are captured, not propagated.
    pub fn run_cell(&self, cell: Cell) -> CellResult {
        self.run_cell_with(cell, &self.cell_config(&cell))
    }

    pub fn run_cell_with(&self, cell: Cell, tc: &TrainConfig) -> CellResult {
        let (outcome, cost) = measure_cost(|| self.cell_report(&cell, tc));
        CellResult { cell, outcome: outcome.map_err(|e| e.to_string()), cost }
    }

    pub fn run_cells(&self, cells: &[Cell], jobs: usize) -> Result<Vec<CellResult>> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .map_err(|e| Error::Config(format!("cannot start {jobs} workers: {e}")))?;
        Ok(pool.install(|| cells.par_iter().map(|&c| self.run_cell(c)).collect()))
    }
}

/// Every (mode, subset, repeat) of the config, modes outermost.
pub fn grid(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut cells = Vec::new();
    for &mode in &cfg.modes {
        for &subset_pct in &cfg.subsets {
            for rep in 0..cfg.repeats {
                cells.push(Cell { mode, subset_pct, rep });
            }
        }
    }
    cells
}

pub struct ExperimentOutcome {
    pub teacher_accuracy: f64,
    pub results: Vec<CellResult>,
}

impl ExperimentOutcome {
    pub fn all_ok(&self) -> bool {
        self.results.iter().all(|r| r.outcome.is_ok())
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes the teacher checkpoint, per-cell artefacts and the CSV reports.
pub fn write_outputs(cfg: &ExperimentConfig, ws: &Workspace, results: &[CellResult]) -> Result<()> {
    let out = &cfg.out;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write(&out.join("config.json"), &(serde_json::to_string_pretty(cfg)? + "\n"))?;
    write_archive(&ws.teacher.params, out.join("teacher.nta"))?;
    write(&out.join("teacher_spec.json"), &(serde_json::to_string_pretty(&ws.teacher.spec)? + "\n"))?;
    let mut rows = Vec::new();
    let mut costs = Vec::new();
    for r in results {
        let id = r.cell.id();
        if let Ok(rep) = &r.outcome {
            write(&out.join(format!("confusion_{id}.csv")), &report::confusion_csv(&rep.confusion, false))?;
            write(&out.join(format!("confusion_{id}_norm.csv")), &report::confusion_csv(&rep.confusion, true))?;
            write(&out.join(format!("loss_{id}.csv")), &history_csv(&rep.history))?;
            write_archive(&rep.params_s, out.join(format!("ckpt_{id}.nta")))?;
            if let Some(aux) = &rep.params_aux {
                write(&out.join(format!("gap_{id}.csv")), &gap_csv(&rep.history))?;
                write_archive(aux, out.join(format!("ckpt_{id}_aux.nta")))?;
            }
        }
        rows.push(ResultRow::from_result(r));
        costs.push(CostRow::from_result(r));
    }
    report::write_csv(&out.join("results.csv"), &rows)?;
    report::write_csv(&out.join("costs.csv"), &costs)?;
    report::write_csv(&out.join("summary.csv"), &report::summarize(&rows))?;
    Ok(())
}

/// Runs the full grid of `cfg` and writes all reports into `cfg.out`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let ws = Workspace::prepare(cfg)?;
    let results = ws.run_cells(&grid(cfg), cfg.jobs)?;
    write_outputs(cfg, &ws, &results)?;
    Ok(ExperimentOutcome { teacher_accuracy: ws.teacher.accuracy, results })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Alpha,
    Beta,
    Tau,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(SweepParam::Alpha),
            "beta" => Ok(SweepParam::Beta),
            "tau" => Ok(SweepParam::Tau),
            other => Err(Error::Config(format!("cannot sweep `{other}`; use alpha, beta or tau"))),
        }
    }
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Alpha => "alpha",
            SweepParam::Beta => "beta",
            SweepParam::Tau => "tau",
        }
    }

    fn apply(self, base: &TrainConfig, v: f32) -> TrainConfig {
        let mut c = base.clone();
        match self {
            SweepParam::Alpha => c.alpha = v,
            SweepParam::Beta => c.beta = v,
            SweepParam::Tau => c.tau = v,
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: String,
    pub value: f32,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

/// Mode `ours` at `cfg.sweep_subset` for every grid value and repeat. All
/// grid values are range-checked before any training starts.
pub fn run_sweep(cfg: &ExperimentConfig, param: SweepParam, values: &[f32]) -> Result<(Vec<SweepRow>, Vec<CellResult>)> {
    if values.is_empty() {
        return Err(Error::Range("empty sweep grid".into()));
    }
    let base = TrainConfig { mode: Mode::Ours, ..cfg.train_config()? };
    for &v in values {
        param.apply(&base, v).validate().map_err(|e| Error::Range(format!("{} = {v}: {e}", param.name())))?;
    }
    let ws = Workspace::prepare(cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", cfg.jobs)))?;
    let jobs: Vec<(f32, Cell)> = values
        .iter()
        .flat_map(|&v| (0..cfg.repeats).map(move |rep| (v, Cell { mode: Mode::Ours, subset_pct: cfg.sweep_subset, rep })))
        .collect();
    let results: Vec<CellResult> = pool.install(|| {
        jobs.par_iter()
            .map(|&(v, cell)| {
                let tc = TrainConfig { master_seed: cell.run_seed(cfg.master_seed), ..param.apply(&base, v) };
                ws.run_cell_with(cell, &tc)
            })
            .collect()
    });
    let mut rows = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        let accs: Vec<f64> = results[i * cfg.repeats..(i + 1) * cfg.repeats]
            .iter()
            .filter_map(|r| r.outcome.as_ref().ok().map(|r| r.accuracy))
            .collect();
        if accs.is_empty() {
            continue;
        }
        rows.push(SweepRow {
            param: param.name().into(),
            value: v,
            mean: accs.iter().sum::<f64>() / accs.len() as f64,
            min: accs.iter().copied().fold(f64::INFINITY, f64::min),
            max: accs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        });
    }
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    report::write_csv(&cfg.out.join(format!("sweep_{}.csv", param.name())), &rows)?;
    Ok((rows, results))
}
