use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use forge::data::{generate_synthetic, load_dataset, save_dataset, SynthKind};
use forge::distill::{
    ce_loss, objective_on_tape, selected_students, skd_loss, total_loss, train, CeTemperature, Mode, Teacher,
    TrainConfig,
};
use forge::harness::report::{self, CostRow, ResultRow};
use forge::harness::{run_experiment, ExperimentConfig};
use forge::models::{build_model, layout, Init, ModelSpec, Parameters};
use forge::surgery::archive::{decode, encode};
use forge::surgery::{apply_plan, dual_plans, SelectionPlan, StrategyKind};
use forge::tensor::{finite_difference_gradient, Tape, Tensor};
use forge::Error;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn random_tensor(shape: &[usize], scale: f32, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

fn random_distribution(b: usize, k: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let mut v = Vec::with_capacity(b * k);
    for _ in 0..b {
        let row: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0f64).powi(3)).collect();
        let s: f64 = row.iter().sum();
        v.extend(row.iter().map(|x| (x / s) as f32));
    }
    Tensor::new(vec![b, k], v).unwrap()
}

// ---------------------------------------------------------------- 1

/// The objective written directly in f64, sharing no code with the tape.
fn reference_objective(z: &[f32], b: usize, k: usize, y: &[usize], q: Option<&[f32]>, alpha: f64, tau: f64, ce_tau: f64) -> f64 {
    let softmax = |row: &[f32], t: f64| -> Vec<f64> {
        let m = row.iter().map(|&v| v as f64).fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|&v| ((v as f64 - m) / t).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    };
    let floor = 1e-12f64;
    let (mut ce, mut kl) = (0.0, 0.0);
    for i in 0..b {
        let row = &z[i * k..(i + 1) * k];
        ce -= softmax(row, ce_tau)[y[i]].max(floor).ln();
        if let Some(q) = q {
            let p = softmax(row, tau);
            for j in 0..k {
                let qj = q[i * k + j] as f64;
                if qj > 0.0 {
                    kl += qj * (qj.max(floor).ln() - p[j].max(floor).ln());
                }
            }
        }
    }
    let ce = ce / b as f64;
    match q {
        Some(_) => alpha * ce + (1.0 - alpha) * tau * tau * kl / b as f64,
        None => ce,
    }
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let instances = 120;
    for i in 0..instances {
        let b = rng.random_range(1..5);
        let k = rng.random_range(2..7);
        let z = random_tensor(&[b, k], 3.0, &mut rng);
        let y: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
        let mut onehot = Tensor::zeros(vec![b, k]);
        for (r, &c) in y.iter().enumerate() {
            onehot.data_mut()[r * k + c] = 1.0;
        }
        let q = (i % 4 != 0).then(|| random_distribution(b, k, &mut rng));
        let alpha = [0.0f32, 0.3, 0.6, 1.0][i % 4];
        let tau = [1.0f32, 2.0, 3.0, 4.0][rng.random_range(0..4)];
        let ce_tau = if i % 2 == 0 { tau } else { 1.0 };

        let mut tape = Tape::new();
        let zv = tape.leaf(&z.clone().with_requires_grad(true));
        let loss = objective_on_tape(&mut tape, zv, &onehot, q.as_ref(), alpha, tau, ce_tau).map_err(e2s)?;
        let grads = tape.backward(loss.total).map_err(e2s)?;
        let ad = grads.get(zv).ok_or("no gradient reached the logits")?.to_vec();

        let qd = q.as_ref().map(|t| t.data().to_vec());
        let fd = finite_difference_gradient(
            |t| Ok(reference_objective(t.data(), b, k, &y, qd.as_deref(), alpha as f64, tau as f64, ce_tau as f64)),
            &z,
            1e-3,
        )
        .map_err(e2s)?;
        let diff: f64 = ad.iter().zip(fd.data()).map(|(a, f)| ((a - f) as f64).powi(2)).sum::<f64>().sqrt();
        let norm = ad.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt().max(fd.data().iter().map(|f| (*f as f64).powi(2)).sum::<f64>().sqrt());
        let rel = if norm < 1e-6 { diff } else { diff / norm };
        worst = worst.max(rel);
        ensure(rel < 1e-3, || format!("instance {i}: relative error {rel:.2e}"))?;
    }
    Ok(format!("{instances} instances, worst relative error {worst:.2e}"))
}

// ---------------------------------------------------------------- 2

fn tiny_setup() -> (ModelSpec, Parameters, ModelSpec, forge::data::Dataset) {
    let tspec = ModelSpec::hierarchical(&[1, 1], &[8, 16], 4);
    let teacher = build_model(&tspec, Init::Kaiming, 11).unwrap();
    let sspec = ModelSpec::hierarchical(&[1, 1], &[4, 8], 4);
    let data = generate_synthetic(SynthKind::Task, 4, 48, 0.3, 5).unwrap();
    (tspec, teacher, sspec, data)
}

fn criterion_2() -> Outcome {
    let (tspec, tparams, sspec, data) = tiny_setup();
    let teacher = Teacher { spec: &tspec, params: &tparams };
    let base = TrainConfig { epochs: 3, batch: 8, eta: 0.05, master_seed: 7, ..TrainConfig::for_family(tspec.family) };

    for ce_temperature in [CeTemperature::Tau, CeTemperature::One] {
        let ours = TrainConfig { alpha: 1.0, mode: Mode::Ours, ce_temperature, ..base.clone() };
        let cm1 = TrainConfig { mode: Mode::Cm1, ce_temperature, ..ours.clone() };
        let a = train(&ours, Some(teacher), &sspec, &data, None).map_err(e2s)?;
        let c = train(&cm1, Some(teacher), &sspec, &data, None).map_err(e2s)?;
        ensure(same_values(&a.params_s, &c.params_s), || format!("(a) {ce_temperature:?}: alpha=1 weights differ from CE-only"))?;
        let ce_a: Vec<u32> = a.history.iter().map(|r| r.ce.to_bits()).collect();
        let ce_c: Vec<u32> = c.history.iter().map(|r| r.ce.to_bits()).collect();
        ensure(ce_a == ce_c, || "(a) loss histories differ".into())?;
    }

    let frozen = TrainConfig { beta: 1.0, ..base.clone() };
    let run = train(&frozen, Some(teacher), &sspec, &data, None).map_err(e2s)?;
    let (_, (s1, _)) = selected_students(&frozen, teacher, &sspec).map_err(e2s)?;
    ensure(run.params_aux.as_ref().is_some_and(|aux| same_values(aux, &s1)), || "(b) beta=1 moved the auxiliary student".into())?;
    ensure(!same_values(&run.params_s, &s1), || "(b) main student did not train".into())?;

    let copy = TrainConfig { beta: 0.0, ..base.clone() };
    let run = train(&copy, Some(teacher), &sspec, &data, None).map_err(e2s)?;
    ensure(run.history.iter().all(|r| r.gap == 0.0), || "(c) beta=0 left a gap after some step".into())?;
    let aux = run.params_aux.as_ref().ok_or("(c) no auxiliary student")?;
    ensure(same_values(aux, &run.params_s), || "(c) final weights differ".into())?;
    Ok(format!("(a) alpha=1 == cm1, (b) beta=1 frozen, (c) beta=0 copies S on all {} steps", run.history.len()))
}

/// Bitwise equality of names and values, ignoring gradient bookkeeping.
fn same_values(a: &Parameters, b: &Parameters) -> bool {
    a.len() == b.len()
        && a.iter().all(|(name, t)| {
            b.get(name).is_some_and(|u| {
                t.shape() == u.shape() && t.data().iter().zip(u.data()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
        })
}

// ---------------------------------------------------------------- 3

/// Nested-loop gather over the full output index space.
fn brute_gather(teacher: &Tensor, lists: &[Vec<usize>]) -> Vec<f32> {
    let tshape = teacher.shape();
    let oshape: Vec<usize> = lists.iter().map(Vec::len).collect();
    let n: usize = oshape.iter().product();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; oshape.len()];
    for _ in 0..n {
        let mut flat = 0;
        for (axis, &i) in idx.iter().enumerate() {
            flat = flat * tshape[axis] + lists[axis][i];
        }
        out.push(teacher.data()[flat]);
        for axis in (0..idx.len()).rev() {
            idx[axis] += 1;
            if idx[axis] < oshape[axis] {
                break;
            }
            idx[axis] = 0;
        }
    }
    out
}

fn check_plan(teacher: &Parameters, plan: &SelectionPlan, student: &Parameters) -> Result<usize, String> {
    let mut checked = 0;
    for (name, entry) in &plan.entries {
        let t = teacher.get(&entry.teacher_tensor).ok_or_else(|| format!("plan names unknown `{}`", entry.teacher_tensor))?;
        let lists: Vec<Vec<usize>> = entry.axes.iter().zip(t.shape()).map(|(a, &e)| a.resolve(e)).collect();
        let got = student.get(name).ok_or_else(|| format!("student lacks `{name}`"))?;
        ensure(got.data() == brute_gather(t, &lists).as_slice(), || format!("`{name}` differs from brute force"))?;
        checked += 1;
    }
    Ok(checked)
}

fn criterion_3() -> Outcome {
    let pairs = [
        (ModelSpec::toy_isotropic_teacher(8), ModelSpec::toy_isotropic_student(4)),
        (ModelSpec::toy_hierarchical_teacher(8), ModelSpec::toy_hierarchical_student(4)),
    ];
    let mut tensors = 0;
    for (tspec, sspec) in &pairs {
        let teacher = build_model(tspec, Init::Xavier, 3).map_err(e2s)?;
        for kind in StrategyKind::ALL {
            for seed in 0..20u64 {
                let (p0, p1) = dual_plans(&teacher, tspec, sspec, kind.with_seed(seed)).map_err(e2s)?;
                for (i, plan) in [p0, p1].iter().enumerate() {
                    let s = apply_plan(&teacher, plan, sspec, seed + i as u64).map_err(e2s)?;
                    let body = layout(sspec).map_err(e2s)?.iter().filter(|l| !l.kind.is_head()).count();
                    ensure(plan.entries.len() == body, || format!("{kind}: plan covers {} of {body} tensors", plan.entries.len()))?;
                    tensors += check_plan(&teacher, plan, &s).map_err(|m| format!("{kind} seed {seed}: {m}"))?;
                }
            }
        }
    }
    Ok(format!("{tensors} tensors equal the nested-loop gather"))
}

// ---------------------------------------------------------------- 4

fn fuzz_pair(rng: &mut ChaCha8Rng) -> (ModelSpec, ModelSpec) {
    if rng.random_bool(0.5) {
        let heads = rng.random_range(1..4);
        let sdim = heads * rng.random_range(1..5) * 2;
        let ratio = rng.random_range(2..4);
        let sdepth = rng.random_range(1..4);
        let s = ModelSpec::isotropic(sdepth, sdim, heads, rng.random_range(2..6));
        let t = ModelSpec::isotropic(sdepth + rng.random_range(0..3), sdim * ratio, heads * ratio, rng.random_range(2..9));
        (t, s)
    } else {
        let stages = rng.random_range(1..4);
        let base = rng.random_range(1..5) * 2;
        let ratio = if rng.random_bool(0.6) { 2 } else { 3 };
        let sdims: Vec<usize> = (0..stages).map(|i| base << i).collect();
        let tdims: Vec<usize> = sdims.iter().map(|d| d * ratio).collect();
        let sdepths: Vec<usize> = (0..stages).map(|_| rng.random_range(0..3)).collect();
        let tdepths: Vec<usize> = sdepths.iter().map(|d| d + rng.random_range(0..3)).collect();
        (
            ModelSpec::hierarchical(&tdepths, &tdims, rng.random_range(2..9)),
            ModelSpec::hierarchical(&sdepths, &sdims, rng.random_range(2..6)),
        )
    }
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cases = 150;
    let mut disjoint_dims = 0;
    for case in 0..cases {
        let (tspec, sspec) = fuzz_pair(&mut rng);
        let teacher = build_model(&tspec, Init::Default, case).map_err(e2s)?;
        let kind = StrategyKind::ALL[case as usize % 4];
        let (p0, p1) = dual_plans(&teacher, &tspec, &sspec, kind.with_seed(case)).map_err(e2s)?;
        let ctx = || format!("case {case} ({kind}, teacher {:?}, student {:?})", tspec.stage_dims, sspec.stage_dims);
        ensure(p0 != p1, || format!("{}: identical plans", ctx()))?;
        let l0 = p0.semantic_lists(&sspec).map_err(e2s)?;
        let l1 = p1.semantic_lists(&sspec).map_err(e2s)?;
        if kind != StrategyKind::RandomInconsistent {
            for lists in [&l0, &l1] {
                let mut per_dim: BTreeMap<_, &Vec<usize>> = BTreeMap::new();
                for (dim, tensor, list) in lists.iter() {
                    let first = per_dim.entry(*dim).or_insert(list);
                    ensure(*first == list, || format!("{}: `{tensor}` disagrees on {dim}", ctx()))?;
                }
            }
        }
        for ((dim, tensor, a), (_, _, b)) in l0.iter().zip(&l1) {
            if dim.width(&tspec) == 2 * dim.width(&sspec) {
                ensure(a.iter().all(|i| !b.contains(i)), || format!("{}: `{tensor}` overlaps on {dim}", ctx()))?;
                disjoint_dims += 1;
            }
        }
    }
    Ok(format!("{cases} fuzzed spec pairs, {disjoint_dims} ratio-2 axes disjoint"))
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Outcome {
    let t = |rows: &[&[f32]]| Tensor::from_rows(rows).unwrap();
    let checks: Vec<(&str, f32, f32)> = vec![
        ("KL identical", skd_loss(&t(&[&[0.3, 0.7]]), &t(&[&[0.3, 0.7]])).map_err(e2s)?, 0.0),
        ("KL one-hot vs uniform", skd_loss(&t(&[&[0.5, 0.5]]), &t(&[&[1.0, 0.0]])).map_err(e2s)?, std::f32::consts::LN_2),
        ("KL (0.75,0.25) vs uniform", skd_loss(&t(&[&[0.5, 0.5]]), &t(&[&[0.75, 0.25]])).map_err(e2s)?, 0.13081),
        ("CE certain", ce_loss(&t(&[&[1.0, 0.0]]), &t(&[&[1.0, 0.0]])).map_err(e2s)?, 0.0),
        ("CE uniform", ce_loss(&t(&[&[0.5, 0.5]]), &t(&[&[1.0, 0.0]])).map_err(e2s)?, std::f32::consts::LN_2),
        ("CE quarter", ce_loss(&t(&[&[0.25, 0.75]]), &t(&[&[1.0, 0.0]])).map_err(e2s)?, 4f32.ln()),
        ("total mix", total_loss(1.0, 0.1, 0.6, 4.0).map_err(e2s)?, 1.24),
        ("total alpha=1", total_loss(0.7, 5.0, 1.0, 4.0).map_err(e2s)?, 0.7),
        ("total alpha=0", total_loss(0.7, 0.1, 0.0, 3.0).map_err(e2s)?, 0.9),
    ];
    let mut worst = 0.0f32;
    for (name, got, want) in &checks {
        let err = (got - want).abs();
        worst = worst.max(err);
        ensure(err <= 1e-4, || format!("{name}: {got} vs {want}"))?;
    }
    Ok(format!("{} closed forms, worst error {worst:.1e}", checks.len()))
}

// ---------------------------------------------------------------- 6, 7, 10

struct Trend {
    rows: Vec<ResultRow>,
    csv: Vec<u8>,
    secs: f64,
    teacher: std::path::PathBuf,
}

fn run_trend(out: &Path) -> Result<Trend, String> {
    let cfg = ExperimentConfig { out: out.to_path_buf(), ..ExperimentConfig::default() };
    let t0 = Instant::now();
    let outcome = run_experiment(&cfg).map_err(e2s)?;
    let secs = t0.elapsed().as_secs_f64();
    ensure(outcome.all_ok(), || "some cells failed".into())?;
    let path = out.join("results.csv");
    Ok(Trend {
        rows: report::read_csv(&path).map_err(e2s)?,
        csv: fs::read(&path).map_err(e2s)?,
        secs,
        teacher: out.join("teacher.nta"),
    })
}

fn med(rows: &[ResultRow], mode: Mode, pct: f64) -> Result<f64, String> {
    let a = report::accuracies(rows, mode, pct);
    ensure(a.len() == 5, || format!("{mode} at {pct}% has {} runs, expected 5", a.len()))?;
    Ok(report::median(&a))
}

fn criterion_6(trend: &Trend) -> Outcome {
    ensure(trend.secs < 600.0, || format!("took {:.0} s", trend.secs))?;
    let mut detail = Vec::new();
    let mut failures = Vec::new();
    for pct in [5.0, 10.0] {
        let [ours, cm1, cm3, cm4] = [Mode::Ours, Mode::Cm1, Mode::Cm3, Mode::Cm4].map(|m| med(&trend.rows, m, pct));
        let (ours, cm1, cm3, cm4) = (ours?, cm1?, cm3?, cm4?);
        detail.push(format!("{pct}%: ours {ours:.3} cm1 {cm1:.3} cm3 {cm3:.3} cm4 {cm4:.3}"));
        if ours < cm1 {
            failures.push(format!("{pct}%: ours {ours:.3} < cm1 {cm1:.3}"));
        }
        if cm1 < cm3.max(cm4) - 0.02 {
            failures.push(format!("{pct}%: cm1 {cm1:.3} < max(cm3, cm4) - 0.02"));
        }
    }
    let detail = format!("{} ({:.0} s)", detail.join("; "), trend.secs);
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{} [{detail}]", failures.join("; ")))
    }
}

fn criterion_7(trend: &Trend) -> Outcome {
    let ours = med(&trend.rows, Mode::Ours, 10.0)?;
    let swap = med(&trend.rows, Mode::OursSwap, 10.0)?;
    let gap = (ours - swap).abs();
    ensure(gap <= 0.05, || format!("|{ours:.3} - {swap:.3}| = {gap:.3}"))?;
    Ok(format!("ours {ours:.3}, ours_swap {swap:.3}, gap {gap:.3}"))
}

fn criterion_10(first: &Trend, dir: &Path) -> Outcome {
    let second = run_trend(dir)?;
    ensure(first.csv == second.csv, || "results.csv differs between reruns".into())?;
    Ok(format!("results.csv identical ({} bytes)", first.csv.len()))
}

// ---------------------------------------------------------------- 8

fn cost_of(mode: Mode, teacher: &Path, dir: &Path) -> Result<(f64, u64), String> {
    let cfg = ExperimentConfig {
        teacher: Some(teacher.to_path_buf()),
        modes: vec![mode],
        subsets: vec![10.0],
        repeats: 2,
        out: dir.to_path_buf(),
        ..ExperimentConfig::default()
    };
    fs::create_dir_all(dir).map_err(e2s)?;
    let cfg_path = dir.join("config.json");
    fs::write(&cfg_path, serde_json::to_string(&cfg).map_err(e2s)?).map_err(e2s)?;
    let status = Command::new(env!("CARGO_BIN_EXE_forge"))
        .args(["train", "--config"])
        .arg(&cfg_path)
        .stdout(std::process::Stdio::null())
        .status()
        .map_err(e2s)?;
    ensure(status.success(), || format!("{mode} run exited with {status}"))?;
    let rows: Vec<CostRow> = report::read_csv(&dir.join("costs.csv")).map_err(e2s)?;
    let wall = rows.iter().map(|r| r.wall_s).sum();
    let peak = rows.iter().map(|r| r.peak_bytes.ok_or("peak memory unavailable")).collect::<Result<Vec<_>, _>>()?;
    Ok((wall, peak.into_iter().max().unwrap_or(0)))
}

fn criterion_8(teacher: &Path, dir: &Path) -> Outcome {
    let (w_ours, m_ours) = cost_of(Mode::Ours, teacher, &dir.join("ours"))?;
    let (w_cm1, m_cm1) = cost_of(Mode::Cm1, teacher, &dir.join("cm1"))?;
    let ratio = w_ours / w_cm1;
    let detail = format!(
        "wall {w_ours:.2} s vs {w_cm1:.2} s (ratio {ratio:.2}), peak {:.1} MiB vs {:.1} MiB",
        m_ours as f64 / 1048576.0,
        m_cm1 as f64 / 1048576.0
    );
    ensure(w_ours >= w_cm1 && m_ours >= m_cm1 && ratio <= 2.0, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 9

fn criterion_9(dir: &Path) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let spec = ModelSpec::toy_hierarchical_student(4);
    let params = build_model(&spec, Init::Kaiming, 2).map_err(e2s)?;
    let bytes = encode(&params).map_err(e2s)?;
    ensure(decode(&bytes).map_err(e2s)? == params, || "parameter archive changed in a round trip".into())?;

    let mut small = Parameters::new();
    small.insert("a", random_tensor(&[2, 3], 1.0, &mut rng));
    small.insert("b", random_tensor(&[4], 1.0, &mut rng));
    small.insert("c.weight", random_tensor(&[1, 2, 2], 1.0, &mut rng));
    let small_bytes = encode(&small).map_err(e2s)?;
    let mut structured = 0;
    for cut in 0..small_bytes.len() {
        let r = catch_unwind(|| decode(&small_bytes[..cut])).map_err(|_| format!("panic at truncation {cut}"))?;
        ensure(matches!(r, Err(Error::Format { .. })), || format!("truncation {cut}: {r:?}"))?;
        structured += 1;
    }
    for _ in 0..2000 {
        let mut b = bytes.clone();
        let cut = rng.random_range(0..b.len());
        b.truncate(cut);
        if let Some(x) = b.get_mut(rng.random_range(0..cut.max(1))) {
            *x ^= 1 << rng.random_range(0..8);
        }
        let r = catch_unwind(AssertUnwindSafe(|| decode(&b))).map_err(|_| "panic on corrupted archive".to_string())?;
        ensure(r.is_err(), || format!("truncation at {cut} decoded"))?;
        structured += 1;
    }

    let ds = generate_synthetic(SynthKind::Task, 3, 30, 0.2, 1).map_err(e2s)?;
    let ddir = dir.join("dataset");
    save_dataset(&ds, &ddir).map_err(e2s)?;
    let back = load_dataset(&ddir).map_err(e2s)?;
    ensure(back.images() == ds.images() && back.labels() == ds.labels() && back.class_names() == ds.class_names(), || {
        "dataset changed in a round trip".into()
    })?;
    let full = fs::read(ddir.join("dataset.nta")).map_err(e2s)?;
    for cut in (0..full.len()).step_by(97).chain([full.len() - 1]) {
        fs::write(ddir.join("dataset.nta"), &full[..cut]).map_err(e2s)?;
        let r = catch_unwind(|| load_dataset(&ddir)).map_err(|_| format!("dataset panic at {cut}"))?;
        ensure(matches!(r, Err(Error::Format { .. })), || format!("dataset truncation {cut}: {:?}", r.err()))?;
        structured += 1;
    }
    Ok(format!("round trips exact, {structured} corrupted inputs rejected with format errors"))
}

// ----------------------------------------------------------------

fn run(n: usize, name: &str, f: impl FnOnce() -> Outcome, failed: &mut Vec<usize>) {
    let t0 = Instant::now();
    let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
    });
    let secs = t0.elapsed().as_secs_f64();
    match r {
        Ok(d) => println!("criterion {n:>2} PASS  {name}: {d} [{secs:.1} s]"),
        Err(d) => {
            println!("criterion {n:>2} FAIL  {name}: {d} [{secs:.1} s]");
            failed.push(n);
        }
    }
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let mut failed = Vec::new();
    let limits = [(1, 60.0), (3, 30.0), (4, 60.0)];
    let timed = |n: usize, f: fn() -> Outcome| {
        move || {
            let t0 = Instant::now();
            let d = f()?;
            let limit = limits.iter().find(|l| l.0 == n).map(|l| l.1).unwrap_or(f64::INFINITY);
            let secs = t0.elapsed().as_secs_f64();
            ensure(secs < limit, || format!("{d}, but took {secs:.1} s (limit {limit} s)"))?;
            Ok(d)
        }
    };
    run(1, "gradient check", timed(1, criterion_1), &mut failed);
    run(2, "degenerate hyperparameters", criterion_2, &mut failed);
    run(3, "selection oracle", timed(3, criterion_3), &mut failed);
    run(4, "plan properties", timed(4, criterion_4), &mut failed);
    run(5, "loss closed forms", criterion_5, &mut failed);
    let trend = run_trend(&tmp.path().join("trend"));
    match &trend {
        Ok(t) => {
            run(6, "directional trend", || criterion_6(t), &mut failed);
            run(7, "role swap", || criterion_7(t), &mut failed);
            run(8, "cost direction", || criterion_8(&t.teacher, &tmp.path().join("cost")), &mut failed);
        }
        Err(e) => {
            for (n, name) in [(6, "directional trend"), (7, "role swap"), (8, "cost direction")] {
                run(n, name, || Err(e.clone()), &mut failed);
            }
        }
    }
    run(9, "format durability", || criterion_9(tmp.path()), &mut failed);
    match &trend {
        Ok(t) => run(10, "determinism", || criterion_10(t, &tmp.path().join("rerun")), &mut failed),
        Err(e) => run(10, "determinism", || Err(e.clone()), &mut failed),
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
