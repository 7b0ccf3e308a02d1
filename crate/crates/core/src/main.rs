use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use forge::data::{class_histogram, generate_synthetic, ingest_pgm, save_dataset, SynthKind};
use forge::distill::{predict_dataset, selected_students, Mode, Teacher};
use forge::harness::report::{self, ResultRow, SummaryRow};
use forge::harness::{self, ExperimentConfig, SweepParam};
use forge::surgery::{read_archive, write_archive, StrategyKind};
use forge::{Error, Result};

#[derive(Parser)]
#[command(name = "forge", version, about = "Weight selection and self-distillation on small vision models")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment config (JSON); built-in defaults otherwise.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads, overriding the config.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (dataset.nta + classes.json).
    Synth {
        #[arg(long, default_value = "task")]
        kind: String,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 2500)]
        n: usize,
        #[arg(long, default_value_t = 1.5)]
        noise: f32,
    },
    /// Convert a directory of per-class PGM folders into a dataset.
    Ingest { dir: PathBuf },
    /// Pretrain the teacher on the pretext task.
    Pretrain,
    /// Build S and S′ from the teacher and write both plans.
    Select {
        #[arg(long)]
        strategy: Option<StrategyKind>,
    },
    /// Run the mode × subset × repeat grid.
    Train {
        /// Restrict to these modes.
        #[arg(long, value_delimiter = ',')]
        mode: Vec<Mode>,
        /// Restrict to these subset percentages.
        #[arg(long, value_delimiter = ',')]
        subset: Vec<f64>,
    },
    /// Evaluate a student checkpoint on the task test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Sweep one hyperparameter of `ours`.
    Sweep {
        #[arg(long)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f32>,
    },
    /// Recompute summary.csv from results.csv and print it.
    Report,
}

fn load_config(g: &Global) -> Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.master_seed = s;
    }
    if let Some(j) = g.jobs {
        cfg.jobs = j;
    }
    if let Some(o) = &g.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn print_summary(rows: &[SummaryRow]) {
    println!("{:<12} {:>8} {:>8} {:>8}", "mode", "subset%", "mean", "std");
    for r in rows {
        println!("{:<12} {:>8} {:>8.4} {:>8.4}", r.mode.to_string(), r.subset_pct, r.mean, r.std);
    }
}

fn report_cells(results: &[harness::CellResult]) -> ExitCode {
    let failed: Vec<_> = results.iter().filter(|r| r.outcome.is_err()).collect();
    for r in &failed {
        eprintln!("cell {} failed: {}", r.cell.id(), r.outcome.as_ref().unwrap_err());
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = load_config(&cli.global)?;
    match cli.command {
        Command::Synth { kind, classes, n, noise } => {
            let kind = match kind.as_str() {
                "task" => SynthKind::Task,
                "pretext" => SynthKind::Pretext,
                other => return Err(Error::Config(format!("unknown synthetic kind `{other}`; use task or pretext"))),
            };
            let ds = generate_synthetic(kind, classes, n, noise, cfg.master_seed)?;
            save_dataset(&ds, &cfg.out)?;
            println!("wrote {} images to {}", ds.len(), cfg.out.display());
        }
        Command::Ingest { dir } => {
            let ds = ingest_pgm(&dir)?;
            save_dataset(&ds, &cfg.out)?;
            for (class, count) in class_histogram(&ds) {
                println!("{class}: {count}");
            }
        }
        Command::Pretrain => {
            let t = harness::pretrain(&cfg)?;
            create_dir(&cfg.out)?;
            write_archive(&t.params, cfg.out.join("teacher.nta"))?;
            write_text(&cfg.out.join("teacher_spec.json"), &serde_json::to_string_pretty(&t.spec)?)?;
            println!("teacher pretext accuracy {:.4}", t.accuracy);
        }
        Command::Select { strategy } => {
            let teacher = harness::resolve_teacher(&cfg)?;
            let mut tc = cfg.train_config()?;
            tc.master_seed = cfg.master_seed;
            if let Some(s) = strategy {
                tc.strategy = s;
            }
            let student = cfg.student_spec()?;
            let ((s0, p0), (s1, p1)) =
                selected_students(&tc, Teacher { spec: &teacher.spec, params: &teacher.params }, &student)?;
            create_dir(&cfg.out)?;
            write_archive(&s0, cfg.out.join("student_S.nta"))?;
            write_archive(&s1, cfg.out.join("student_Saux.nta"))?;
            p0.save(cfg.out.join("plan_S.json"))?;
            p1.save(cfg.out.join("plan_Saux.json"))?;
            println!("wrote S, S' and their {} plans to {}", tc.strategy, cfg.out.display());
        }
        Command::Train { mode, subset } => {
            let mut cfg = cfg;
            if !mode.is_empty() {
                cfg.modes = mode;
            }
            if !subset.is_empty() {
                cfg.subsets = subset;
            }
            let outcome = harness::run_experiment(&cfg)?;
            let rows: Vec<ResultRow> = outcome.results.iter().map(ResultRow::from_result).collect();
            print_summary(&report::summarize(&rows));
            return Ok(report_cells(&outcome.results));
        }
        Command::Eval { checkpoint } => {
            let student = cfg.student_spec()?;
            let params = read_archive(&checkpoint)?;
            params.check_against(&student)?;
            let (_, test) = harness::task_split(&cfg)?;
            let pred = predict_dataset(&params, &student, &test)?;
            let k = student.classes;
            let mut confusion = vec![vec![0; k]; k];
            for (&t, &p) in test.labels().iter().zip(&pred) {
                confusion[t][p] += 1;
            }
            let stem = checkpoint.file_stem().and_then(|s| s.to_str()).unwrap_or("checkpoint");
            create_dir(&cfg.out)?;
            write_text(&cfg.out.join(format!("confusion_{stem}.csv")), &report::confusion_csv(&confusion, false))?;
            write_text(&cfg.out.join(format!("confusion_{stem}_norm.csv")), &report::confusion_csv(&confusion, true))?;
            println!("accuracy {:.4}", report::accuracy_of(&confusion));
        }
        Command::Sweep { param, values } => {
            let (rows, results) = harness::run_sweep(&cfg, param, &values)?;
            println!("{:<8} {:>8} {:>8} {:>8} {:>8}", "param", "value", "mean", "min", "max");
            for r in &rows {
                println!("{:<8} {:>8} {:>8.4} {:>8.4} {:>8.4}", r.param, r.value, r.mean, r.min, r.max);
            }
            return Ok(report_cells(&results));
        }
        Command::Report => {
            let rows: Vec<ResultRow> = report::read_csv(&cfg.out.join("results.csv"))?;
            let summary = report::summarize(&rows);
            report::write_csv(&cfg.out.join("summary.csv"), &summary)?;
            print_summary(&summary);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
