use std::path::Path;

use rand::seq::SliceRandom;

use super::config::{Mode, TrainConfig};
use super::losses::objective_on_tape;
use crate::data::Dataset;
use crate::models::{bind, build_model, forward, forward_on_tape, ModelSpec, Parameters};
use crate::rng::{derive_seed, substream};
use crate::surgery::{apply_plan, archive, dual_plans, SelectionPlan};
use crate::tensor::{softmax_temperature, Tape, Tensor};
use crate::{Error, Result};

/// θ ← θ − η·∇θ for every tensor that requires grad; gradients are cleared.
pub fn sgd_step(params: &mut Parameters, eta: f32) -> Result<()> {
    for (name, t) in params.iter() {
        if t.requires_grad() && t.grad().is_none() {
            return Err(Error::Training(format!("trainable tensor `{name}` has no gradient")));
        }
    }
    for (_, t) in params.iter_mut() {
        if !t.requires_grad() {
            continue;
        }
        let g = t.grad().expect("checked above").to_vec();
        t.data_mut().iter_mut().zip(&g).for_each(|(w, g)| *w -= eta * g);
        t.clear_grad();
    }
    Ok(())
}

/// θ_aux ← β·θ_aux + (1−β)·θ_main, elementwise. The auxiliary tensors never
/// hold gradients.
pub fn ema_update(aux: &mut Parameters, main: &Parameters, beta: f32) -> Result<()> {
    if aux.len() != main.len() {
        return Err(Error::Contract(format!("EMA over {} vs {} tensors", aux.len(), main.len())));
    }
    for (name, a) in aux.iter() {
        let m = main.require(name)?;
        if a.shape() != m.shape() {
            return Err(Error::Contract(format!("EMA shape mismatch on `{name}`: {:?} vs {:?}", a.shape(), m.shape())));
        }
    }
    for (name, a) in aux.iter_mut() {
        let m = main.require(name).expect("checked above");
        a.data_mut().iter_mut().zip(m.data()).for_each(|(a, &m)| *a = beta * *a + (1.0 - beta) * m);
        a.clear_grad();
        a.set_requires_grad(false);
    }
    Ok(())
}

/// Argmax per row of the logits; ties go to the lowest class index.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let k = *logits.shape().last().unwrap_or(&1);
    logits
        .data()
        .chunks(k)
        .map(|r| r.iter().enumerate().fold(0, |best, (i, &v)| if v > r[best] { i } else { best }))
        .collect()
}

pub fn predict(params: &Parameters, spec: &ModelSpec, batch: &Tensor) -> Result<Vec<usize>> {
    Ok(argmax_rows(&forward(params, spec, batch)?))
}

/// Predictions over a whole dataset, in chunks.
pub fn predict_dataset(params: &Parameters, spec: &ModelSpec, data: &Dataset) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(128) {
        out.extend(predict(params, spec, &data.images().select_rows(chunk)?)?);
    }
    Ok(out)
}

pub fn accuracy(params: &Parameters, spec: &ModelSpec, data: &Dataset) -> Result<f64> {
    let pred = predict_dataset(params, spec, data)?;
    Ok(pred.iter().zip(data.labels()).filter(|(a, b)| a == b).count() as f64 / data.len() as f64)
}

/// Pretrained teacher handed to the selection modes.
#[derive(Clone, Copy, Debug)]
pub struct Teacher<'a> {
    pub spec: &'a ModelSpec,
    pub params: &'a Parameters,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub ce: f32,
    /// Distillation term; zero in modes without an auxiliary student.
    pub skd: f32,
    pub total: f32,
    /// ‖θ_S − θ_S′‖₂ after the step; zero without an auxiliary student.
    pub gap: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub step: usize,
    pub params_s: Parameters,
    pub params_aux: Option<Parameters>,
    pub history: Vec<StepRecord>,
    /// Labels of the random streams this run drew from.
    pub streams: Vec<String>,
}

/// The two selected initialisations for the dual-student modes and `Cm1`,
/// with heads seeded by plan index.
pub fn selected_students(
    config: &TrainConfig,
    teacher: Teacher<'_>,
    student: &ModelSpec,
) -> Result<((Parameters, SelectionPlan), (Parameters, SelectionPlan))> {
    let strategy = config.strategy.with_seed(derive_seed(config.master_seed, "select"));
    let (p0, p1) = dual_plans(teacher.params, teacher.spec, student, strategy)?;
    let s0 = apply_plan(teacher.params, &p0, student, derive_seed(config.master_seed, "head:0"))?;
    let s1 = apply_plan(teacher.params, &p1, student, derive_seed(config.master_seed, "head:1"))?;
    Ok(((s0, p0), (s1, p1)))
}

/// Initial (S, S′) for `config.mode`.
pub fn initial_students(
    config: &TrainConfig,
    teacher: Option<Teacher<'_>>,
    student: &ModelSpec,
) -> Result<(Parameters, Option<Parameters>)> {
    if let Some(init) = config.mode.scratch_init() {
        return Ok((build_model(student, init, derive_seed(config.master_seed, "init"))?, None));
    }
    let teacher =
        teacher.ok_or_else(|| Error::Config(format!("mode {} needs a teacher checkpoint", config.mode)))?;
    let ((s0, _), (s1, _)) = selected_students(config, teacher, student)?;
    Ok(match config.mode {
        Mode::Ours => (s0, Some(s1)),
        Mode::OursSwap => (s1, Some(s0)),
        _ => (s0, None),
    })
}

fn l2_gap(a: &Parameters, b: &Parameters) -> Result<f32> {
    let mut s = 0.0f64;
    for (name, t) in a.iter() {
        s += t.data().iter().zip(b.require(name)?.data()).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>();
    }
    Ok(s.sqrt() as f32)
}

/// Runs the configured training. Per step: S forward on a tape, S′ forward
/// without one, loss, backward on S, SGD step on S, EMA of S into S′.
pub fn train(
    config: &TrainConfig,
    teacher: Option<Teacher<'_>>,
    student: &ModelSpec,
    data: &Dataset,
    checkpoints: Option<&Path>,
) -> Result<TrainState> {
    config.validate()?;
    student.validate()?;
    if data.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    if data.classes() != student.classes || data.image_shape() != student.image {
        return Err(Error::Config(format!(
            "dataset ({} classes, {:?}) does not fit the student ({} classes, {:?})",
            data.classes(),
            data.image_shape(),
            student.classes,
            student.image
        )));
    }
    let (mut params_s, mut params_aux) = initial_students(config, teacher, student)?;
    params_s.set_requires_grad(true);
    if let Some(aux) = params_aux.as_mut() {
        aux.set_requires_grad(false);
    }
    let mut streams = vec!["batch-order".to_string()];
    if config.mode.needs_teacher() {
        streams.extend(["select".into(), "head:0".into(), "head:1".into()]);
    } else {
        streams.push("init".into());
    }

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = substream(config.master_seed, "batch-order");
    let mut history = Vec::new();
    let mut step = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch) {
            let (images, targets) = data.batch(chunk)?;
            let p_aux = match &params_aux {
                Some(aux) => Some(softmax_temperature(&forward(aux, student, &images)?, config.tau)?),
                None => None,
            };
            let mut tape = Tape::new();
            let bound = bind(&mut tape, &params_s);
            let logits = forward_on_tape(&mut tape, &bound, student, &images)?;
            let loss =
                objective_on_tape(&mut tape, logits, &targets, p_aux.as_ref(), config.alpha, config.tau, config.ce_tau())?;
            let mut grads = tape.backward(loss.total)?;
            for (name, var) in bound.iter() {
                if let Some(g) = grads.take(var) {
                    params_s.get_mut(name).expect("bound from params_s").set_grad(g)?;
                }
            }
            sgd_step(&mut params_s, config.eta)?;
            let mut gap = 0.0;
            if let Some(aux) = params_aux.as_mut() {
                ema_update(aux, &params_s, config.beta)?;
                gap = l2_gap(&params_s, aux)?;
            }
            history.push(StepRecord {
                step,
                ce: tape.item(loss.ce)?,
                skd: loss.skd.map(|v| tape.item(v)).transpose()?.unwrap_or(0.0),
                total: tape.item(loss.total)?,
                gap,
            });
            step += 1;
        }
        if let (Some(every), Some(dir)) = (config.checkpoint_every, checkpoints) {
            if (epoch + 1) % every == 0 {
                archive::write_archive(&params_s, dir.join(format!("S_epoch{}.nta", epoch + 1)))?;
                if let Some(aux) = &params_aux {
                    archive::write_archive(aux, dir.join(format!("Saux_epoch{}.nta", epoch + 1)))?;
                }
            }
        }
    }
    Ok(TrainState { step, params_s, params_aux, history, streams })
}

/// Loss history as `step,ce,skd,total` CSV.
pub fn history_csv(history: &[StepRecord]) -> String {
    let mut out = String::from("step,ce,skd,total\n");
    for r in history {
        out.push_str(&format!("{},{},{},{}\n", r.step, r.ce, r.skd, r.total));
    }
    out
}

/// ‖θ_S − θ_S′‖₂ per step as `step,gap` CSV.
pub fn gap_csv(history: &[StepRecord]) -> String {
    let mut out = String::from("step,gap\n");
    for r in history {
        out.push_str(&format!("{},{}\n", r.step, r.gap));
    }
    out
}
