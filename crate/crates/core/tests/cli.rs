use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use forge::data::load_dataset;
use forge::harness::report::{self, ResultRow};
use forge::harness::{DataSource, ExperimentConfig, SynthConfig};
use forge::models::{build_model, Init, ModelSpec};
use forge::rng::derive_seed;
use forge::surgery::{apply_plan, read_archive, write_archive, SelectionPlan};

fn forge(args: &[&str], config: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_forge"));
    cmd.args(args);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.output().unwrap()
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> std::path::PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn pgm(w: usize, h: usize, fill: u8) -> Vec<u8> {
    let mut b = format!("P5\n# test\n{w} {h}\n255\n").into_bytes();
    b.extend(std::iter::repeat_n(fill, w * h));
    b
}

#[test]
fn ingest_counts_classes_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("images");
    for (class, fill) in [("benign", 10u8), ("malignant", 255)] {
        fs::create_dir_all(src.join(class)).unwrap();
        for i in 0..3 {
            fs::write(src.join(class).join(format!("{i}.pgm")), pgm(32, 32, fill)).unwrap();
        }
    }
    let out = dir.path().join("ds");
    let o = forge(&["ingest", src.to_str().unwrap(), "--out", out.to_str().unwrap()], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(String::from_utf8_lossy(&o.stdout), "benign: 3\nmalignant: 3\n");
    let ds = load_dataset(&out).unwrap();
    assert_eq!((ds.len(), ds.classes()), (6, 2));
    assert_eq!(ds.images().data()[3 * 1024], 1.0);
}

#[test]
fn synth_writes_a_loadable_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("synth");
    let o = forge(&["synth", "--n", "40", "--classes", "4", "--out", out.to_str().unwrap()], None);
    assert!(o.status.success());
    let ds = load_dataset(&out).unwrap();
    assert_eq!(ds.class_counts(), vec![10, 10, 10, 10]);
}

#[test]
fn select_with_equal_specs_copies_the_teacher_body() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ModelSpec::toy_hierarchical_student(8);
    let teacher = build_model(&spec, Init::Kaiming, 6).unwrap();
    write_archive(&teacher, dir.path().join("t.nta")).unwrap();
    let cfg = ExperimentConfig {
        teacher_spec: Some(spec.clone()),
        student_spec: Some(spec.with_classes(4)),
        teacher: Some(dir.path().join("t.nta")),
        out: dir.path().join("sel"),
        ..ExperimentConfig::default()
    };
    let o = forge(&["select"], Some(&write_config(dir.path(), &cfg)));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = read_archive(dir.path().join("sel/student_S.nta")).unwrap();
    for (name, t) in teacher.iter().filter(|(n, _)| !n.starts_with("head.")) {
        assert_eq!(s.get(name), Some(t), "{name}");
    }
    assert_eq!(s.require("head.weight").unwrap().shape(), &[4, 64]);
}

#[test]
fn emitted_plans_reapply_to_the_emitted_students() {
    let dir = tempfile::tempdir().unwrap();
    let (tspec, sspec) = (ModelSpec::toy_hierarchical_teacher(8), ModelSpec::toy_hierarchical_student(4));
    let teacher = build_model(&tspec, Init::Xavier, 2).unwrap();
    write_archive(&teacher, dir.path().join("t.nta")).unwrap();
    let cfg = ExperimentConfig { teacher: Some(dir.path().join("t.nta")), out: dir.path().join("sel"), ..Default::default() };
    let cfg_path = write_config(dir.path(), &cfg);
    let o = forge(&["select", "--strategy", "uniform", "--seed", "17"], Some(&cfg_path));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let sel = dir.path().join("sel");
    let lists = |file: &str, student: &str, head: &str| {
        let plan = SelectionPlan::load(sel.join(file)).unwrap();
        plan.validate(&teacher, &sspec).unwrap();
        let again = apply_plan(&teacher, &plan, &sspec, derive_seed(17, head)).unwrap();
        assert_eq!(again, read_archive(sel.join(student)).unwrap());
        plan.semantic_lists(&sspec).unwrap()
    };
    let a = lists("plan_S.json", "student_S.nta", "head:0");
    let b = lists("plan_Saux.json", "student_Saux.nta", "head:1");
    for ((dim, name, x), (_, _, y)) in a.iter().zip(&b) {
        assert!(x.iter().all(|i| !y.contains(i)), "{dim} overlaps in {name}");
    }
}

#[test]
fn train_report_and_eval_agree() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig {
        pretext: SynthConfig { classes: 8, n: 400, noise: 0.3 },
        task: DataSource::Synth(SynthConfig { classes: 4, n: 400, noise: 1.0 }),
        modes: vec![forge::distill::Mode::Ours, forge::distill::Mode::Cm2],
        subsets: vec![25.0],
        repeats: 2,
        out: dir.path().join("run"),
        ..ExperimentConfig::default()
    };
    cfg.pretrain.epochs = 2;
    cfg.pretrain.min_accuracy = 0.0;
    cfg.set_train_value("epochs", 2);
    let cfg_path = write_config(dir.path(), &cfg);

    let o = forge(&["train", "--jobs", "2"], Some(&cfg_path));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run = dir.path().join("run");
    let rows: Vec<ResultRow> = report::read_csv(&run.join("results.csv")).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.status == "ok"));
    let costs = fs::read_to_string(run.join("costs.csv")).unwrap();
    assert!(costs.starts_with("mode,subset_pct,seed,wall_s,peak_bytes\n"));

    let summary = fs::read(run.join("summary.csv")).unwrap();
    fs::remove_file(run.join("summary.csv")).unwrap();
    let o = forge(&["report", "--out", run.to_str().unwrap()], Some(&cfg_path));
    assert!(o.status.success());
    assert_eq!(fs::read(run.join("summary.csv")).unwrap(), summary);

    let ckpt = run.join("ckpt_ours_25_1.nta");
    let o = forge(&["eval", "--checkpoint", ckpt.to_str().unwrap()], Some(&cfg_path));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let acc = rows.iter().find(|r| r.mode == forge::distill::Mode::Ours && r.seed == 1).unwrap().accuracy.unwrap();
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), format!("accuracy {acc:.4}"));
    assert!(run.join("confusion_ckpt_ours_25_1_norm.csv").exists());
}

#[test]
fn bad_input_exits_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, r#"{"subsets": [150]}"#).unwrap();
    let o = forge(&["train"], Some(&path));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("subset percentage 150"));

    fs::write(&path, r#"{"repeets": 5}"#).unwrap();
    assert_eq!(forge(&["train"], Some(&path)).status.code(), Some(2));

    let o = forge(&["sweep", "--param", "gamma", "--values", "1"], None);
    assert!(!o.status.success());
    let o = forge(&["eval", "--checkpoint", dir.path().join("missing.nta").to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
}
