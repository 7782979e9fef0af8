use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use sslhar::backbones::{load_checkpoint, Family, ENCODER_PREFIX};
use sslhar::cli::config::{parse_config, ExperimentConfig, RESULTS_ENV};
use sslhar::cli::jobs::{execute, job_split, run_finetune, run_pretrain, save_classifier, JobFile};
use sslhar::cli::matrix::{expand_matrix, pending, FinetuneJob, PretrainJob};
use sslhar::cli::orchestrate::{orchestrate, Launcher};
use sslhar::cli::{EXIT_CONFIG, EXIT_OK, EXIT_RUN_FAILURE};
use sslhar::eval::{export_embeddings, load_results, macro_f1, profile, write_report, ProfileMode};
use sslhar::finetune::{attach_head, predict, target_classes, Classifier, EVAL_BATCH};
use sslhar::harmonize::{prepare, write_synthetic, ActivityClass, Corpus, SynthSpec};
use sslhar::pretrain::Method;
use sslhar::splits::{resolve, Scenario};
use sslhar::{Error, Result};

#[derive(Parser)]
#[command(name = "sslhar", version, about = "Self-supervised pretraining benchmark for inertial activity recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic raw dataset.
    Synth(SynthArgs),
    /// Harmonize a raw dataset into a corpus directory.
    Prepare {
        /// Reader id: synthetic, uci or motionsense.
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain an encoder on one fold's pretraining partition.
    Pretrain(PretrainArgs),
    /// Fine-tune a checkpoint on one fold's target dataset.
    Finetune(FinetuneArgs),
    /// Score, embed and profile a checkpoint.
    Evaluate(EvaluateArgs),
    /// Render tables, plots and the roll-up CSV from a results root.
    Report {
        /// Results root; defaults to $SSLHAR_RESULTS, then `results`.
        #[arg(long)]
        results: Option<PathBuf>,
        /// Output directory; defaults to `<results>/report`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Expand a config into runs and execute the pending ones.
    Matrix {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
        /// List runs and their status without executing anything.
        #[arg(long)]
        dry_run: bool,
    },
    /// Execute one job file (used by `matrix` worker processes).
    #[command(hide = true)]
    RunJob { job: PathBuf },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "synthetic")]
    name: String,
    #[arg(long, default_value_t = 5)]
    subjects: usize,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 2.0)]
    minutes: f64,
    #[arg(long, default_value_t = 0.2)]
    noise: f64,
    #[arg(long, default_value_t = 50.0)]
    rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PretrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    fold: String,
    #[arg(long)]
    method: Method,
    #[arg(long)]
    family: Family,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Hyperparameters; the shipped defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct FinetuneArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    fold: String,
    /// `full` or labeled windows per class.
    #[arg(long)]
    scenario: Scenario,
    #[arg(long, conflicts_with = "unfrozen", required_unless_present = "unfrozen")]
    frozen: bool,
    #[arg(long)]
    unfrozen: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Corpus directory; taken from the config when omitted.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Restrict to this fold's target test partition.
    #[arg(long)]
    fold: Option<String>,
    /// Write pooled embeddings as CSV.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Timed training steps per profiling mode; 0 skips profiling.
    #[arg(long, default_value_t = 10)]
    profile_steps: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => parse_config(p),
        None => Ok(ExperimentConfig::defaults()),
    }
}

fn pretrain_job(cfg: &ExperimentConfig, fold: &str, method: Method, family: Family, seed: u64) -> PretrainJob {
    PretrainJob {
        fold: fold.to_string(),
        family,
        seed,
        split_seed: cfg.split_seed,
        scarcity_counts: cfg.scarcity_counts(),
        encoder: cfg.encoder.get(family).clone(),
        method: cfg.pretrain_config(method, family),
        schedule: cfg.pretrain.schedule(),
        adam: cfg.pretrain.adam(),
    }
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        name: a.name,
        subjects: a.subjects,
        classes: a.classes,
        minutes_per_class: a.minutes,
        noise: a.noise,
        sample_rate_hz: a.rate,
    };
    let recs = write_synthetic(&a.out, &spec, a.seed)?;
    println!("wrote {} recordings of {:?} to {}", recs.len(), spec.name, a.out.display());
    Ok(())
}

fn cmd_pretrain(a: PretrainArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let corpus = Corpus::load(&a.corpus)?;
    let job = pretrain_job(&cfg, &a.fold, a.method, a.family, a.seed);
    let t = Instant::now();
    let meta = run_pretrain(&corpus, &job, &a.out)?;
    println!(
        "{} {} fold {}: checkpoint {} ({:.1}s, encoder digest {})",
        a.method,
        a.family,
        a.fold,
        a.out.display(),
        t.elapsed().as_secs_f64(),
        &meta.encoder_digest[..16]
    );
    Ok(())
}

fn cmd_finetune(a: FinetuneArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    let corpus_dir = a.corpus.clone().unwrap_or_else(|| cfg.corpus.clone());
    let corpus = Corpus::load(&corpus_dir)?;
    if let Scenario::PerClass(n) = a.scenario {
        if !cfg.scenarios.contains(&a.scenario) {
            cfg.scenarios.push(Scenario::PerClass(n));
        }
    }
    let (meta, _) = load_checkpoint(&a.checkpoint)?;
    let method: Method = meta.method.parse()?;
    let mut pretrain = pretrain_job(&cfg, &a.fold, method, meta.encoder.family, meta.seed);
    pretrain.encoder = meta.encoder.clone();
    let job = FinetuneJob { pretrain, spec: cfg.finetune.spec(a.frozen, a.scenario, a.seed) };
    let (result, model) = run_finetune(&corpus, &job, &a.checkpoint)?;
    sslhar::fsutil::write_json(&a.out.join(sslhar::eval::RESULT_FILE), &result)?;
    save_classifier(&a.out.join("model"), &model, &result)?;
    println!(
        "{} fold {} scenario {} {}: test macro F1 {:.4} (best epoch {})",
        result.method,
        result.fold_id,
        result.scenario,
        if result.frozen { "frozen" } else { "unfrozen" },
        result.test_macro_f1,
        result.best_epoch
    );
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let corpus = Corpus::load(&a.corpus)?;
    let (meta, params) = load_checkpoint(&a.checkpoint)?;
    let split = match &a.fold {
        Some(f) => {
            let method: Method = meta.method.parse().unwrap_or(Method::Random);
            Some(job_split(&corpus, &pretrain_job(&cfg, f, method, meta.encoder.family, meta.seed))?)
        }
        None => None,
    };
    let windows: Vec<_> = match &split {
        Some(s) => resolve(&corpus, &s.target_test)?.into_iter().map(|i| corpus.window(i)).collect(),
        None => corpus.windows.iter().collect(),
    };
    let mut report = serde_json::json!({ "checkpoint": a.checkpoint, "windows": windows.len() });
    if let Some(path) = &a.embeddings {
        let width = export_embeddings(&params, &meta.encoder, &windows, EVAL_BATCH, path)?;
        report["embeddings"] = serde_json::json!({ "path": path, "width": width });
    }
    let stored_classes: Option<Vec<u8>> = meta.extra.get("classes").and_then(|c| serde_json::from_value(c.clone()).ok());
    let trained_head = stored_classes.is_some() && params.contains("cls.out.w");
    let model = match stored_classes {
        Some(classes) if trained_head => Classifier { encoder: meta.encoder.clone(), params, classes },
        _ => {
            let classes = match &split {
                Some(s) => target_classes(&corpus, s)?,
                None => ActivityClass::ALL.iter().map(|c| c.id()).collect(),
            };
            attach_head(&meta.encoder, &params.with_prefix(ENCODER_PREFIX), &classes, meta.seed)?
        }
    };
    if trained_head {
        let labels: Vec<usize> = windows
            .iter()
            .map(|w| model.classes.iter().position(|&c| c == w.label).unwrap_or(model.classes.len()))
            .collect();
        if labels.iter().all(|&l| l < model.classes.len()) {
            let preds = predict(&model.params, &model.encoder, &windows);
            report["macro_f1"] = serde_json::json!(macro_f1(&preds, &labels, model.classes.len())?);
            report["accuracy"] = serde_json::json!(sslhar::eval::accuracy(&preds, &labels));
        }
    }
    if a.profile_steps > 0 {
        let batch: Vec<_> = windows.iter().take(cfg.finetune.batch_size).copied().collect();
        for mode in [ProfileMode::Frozen, ProfileMode::Unfrozen] {
            let p = profile(&model, &batch, mode, a.profile_steps)?;
            report[format!("profile_{}", serde_json::to_value(mode)?.as_str().unwrap_or("mode"))] = serde_json::to_value(&p)?;
        }
    }
    sslhar::fsutil::write_json(&a.out.join("evaluation.json"), &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn cmd_report(results: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let root = results
        .or_else(|| std::env::var_os(RESULTS_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("results"));
    let all = load_results(&root)?;
    if all.is_empty() {
        return Err(Error::InvalidArgument(format!("no results under {}", root.display())));
    }
    let out = out.unwrap_or_else(|| root.join("report"));
    for p in write_report(&all, &out)? {
        println!("{}", p.display());
    }
    Ok(())
}

enum Failed {
    Config(Error),
    Runs(Error),
}

fn cmd_matrix(config: &Path, parallelism: usize, dry_run: bool) -> std::result::Result<bool, Failed> {
    let mut cfg = parse_config(config).map_err(Failed::Config)?;
    let corpus = Corpus::load(&cfg.corpus).map_err(|e| Failed::Config(Error::Config {
        path: "corpus".into(),
        message: e.to_string(),
    }))?;
    cfg.resolve_folds(&corpus).map_err(Failed::Config)?;
    drop(corpus);
    let plan = expand_matrix(&cfg).map_err(Failed::Config)?;
    let root = cfg.results_root();
    let todo = pending(&plan, &root);
    println!("{} runs ({} pending), {} pretraining jobs, results in {}", plan.runs.len(), todo.len(), plan.pretrain.len(), root.display());
    if dry_run {
        for j in &plan.runs {
            let state = if todo.iter().any(|t| t.id() == j.id()) { "pending" } else { "done" };
            println!(
                "{} {state} fold={} family={} method={} scenario={} frozen={} seed={}",
                j.id(),
                j.pretrain.fold,
                j.pretrain.family,
                j.pretrain.method.method(),
                j.spec.scenario,
                j.spec.frozen,
                j.spec.seed
            );
        }
        return Ok(true);
    }
    std::fs::create_dir_all(&root).map_err(|e| Failed::Runs(Error::Io { path: root.clone(), source: e }))?;
    sslhar::fsutil::atomic_write(&root.join("config.toml"), cfg.to_toml().as_bytes()).map_err(Failed::Runs)?;
    let exe = std::env::current_exe().map_err(|e| Failed::Runs(Error::Io { path: "current_exe".into(), source: e }))?;
    let summary = orchestrate(&plan, &cfg.corpus, &root, &Launcher::new(exe), parallelism).map_err(Failed::Runs)?;
    println!(
        "pretraining: {} run, {} reused; fine-tuning: {} completed, {} reused, {} failed",
        summary.pretrain_run,
        summary.pretrain_skipped,
        summary.runs_completed,
        summary.runs_skipped,
        summary.failures.len()
    );
    for f in &summary.failures {
        println!("FAILED {} {}: {} (log {})", f.kind, f.id, f.reason, f.log.display());
    }
    Ok(summary.ok())
}

fn cmd_run_job(path: &Path) -> Result<()> {
    let file: JobFile = sslhar::fsutil::read_json(path)?;
    let t = Instant::now();
    println!("job {} started", file.job.id());
    execute(&file)?;
    println!("job {} finished in {:.1}s", file.job.id(), t.elapsed().as_secs_f64());
    Ok(())
}

fn exit_for(err: &Error) -> ExitCode {
    eprintln!("error: {err}");
    match err {
        Error::Config { .. } => ExitCode::from(EXIT_CONFIG as u8),
        _ => ExitCode::from(EXIT_RUN_FAILURE as u8),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Prepare { dataset, root, out } => prepare(&dataset, &root, &out).map(|ids| {
            println!("prepared {} into {}", ids.join(", "), out.display());
        }),
        Command::Pretrain(a) => cmd_pretrain(a),
        Command::Finetune(a) => cmd_finetune(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Report { results, out } => cmd_report(results, out),
        Command::Matrix { config, parallelism, dry_run } => {
            return match cmd_matrix(&config, parallelism, dry_run) {
                Ok(true) => ExitCode::from(EXIT_OK as u8),
                Ok(false) => ExitCode::from(EXIT_RUN_FAILURE as u8),
                Err(Failed::Config(e)) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_CONFIG as u8)
                }
                Err(Failed::Runs(e)) => exit_for(&e),
            };
        }
        Command::RunJob { job } => cmd_run_job(&job),
    };
    match result {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => exit_for(&e),
    }
}
