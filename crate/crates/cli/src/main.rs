//! `qcnn-tl`: pre-train the source CNN, fine-tune quantum/classical heads,
//! run the benchmark grid, and generate reports.
//!
//! Exit codes: 0 success, 1 benchmark completed less than 95% of its
//! trials, 2 usage or input error.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use qcnn_core::data::{load_dataset, BinaryTask, Split};
use qcnn_core::models::{file_digest, load_checkpoint, save_checkpoint, CheckpointMeta};
use qcnn_core::pipeline::{
    model_digest, paper_grid, pretrain_source, run_trial, smoke_grid, task_data,
    write_manifest, write_reports, write_trial, ExperimentConfig, FinetuneOptions, HeadKind,
    PretrainOptions, RunManifest,
};
use qcnn_core::stats::summarize;
use qcnn_core::zoo::{ConvAnsatzId, PoolingKind};

#[derive(Parser)]
#[command(name = "qcnn-tl", version, about = "Classical-to-quantum transfer learning on MNIST")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pre-train the 10-class source CNN on Fashion-MNIST and write a checkpoint
    Pretrain(PretrainArgs),
    /// Fine-tune one head configuration on a binary MNIST task
    Finetune(FinetuneArgs),
    /// Run a grid of configurations (resumable; skips finished trials)
    Benchmark(BenchmarkArgs),
    /// Regenerate CSV/p-value/summary reports from stored trial results
    Report(ReportArgs),
}

/// Optional TOML config file; command-line flags take precedence over it,
/// and it takes precedence over built-in defaults.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    subset: Option<usize>,
    max_epochs: Option<usize>,
    target_accuracy: Option<f64>,
    trials: Option<usize>,
    iters: Option<usize>,
    batch: Option<usize>,
    lr: Option<f64>,
    train_cap: Option<usize>,
    workers: Option<usize>,
}

fn read_config(path: &Option<PathBuf>) -> anyhow::Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("cannot read config file {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("invalid config file {}", p.display()))
        }
    }
}

#[derive(Args)]
struct PretrainArgs {
    /// Directory with Fashion-MNIST IDX files
    #[arg(long)]
    fashion_dir: PathBuf,
    /// Checkpoint output path (JSON)
    #[arg(long)]
    out: PathBuf,
    /// Global seed [default: 7]
    #[arg(long)]
    seed: Option<u64>,
    /// Training images taken from the head of the train split [default: 10000]
    #[arg(long)]
    subset: Option<usize>,
    /// Mini-batch size [default: 50]
    #[arg(long)]
    batch: Option<usize>,
    /// Adam learning rate [default: 0.001]
    #[arg(long)]
    lr: Option<f64>,
    /// Epoch cap [default: 15]
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Early-stop test-accuracy target [default: 0.92]
    #[arg(long)]
    target_accuracy: Option<f64>,
    /// Worker threads, 0 = all cores [default: 0]
    #[arg(long)]
    workers: Option<usize>,
    /// TOML config file (flags override it)
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct FinetuneArgs {
    /// Source-model checkpoint from `pretrain`
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory with MNIST IDX files
    #[arg(long)]
    mnist_dir: PathBuf,
    /// Output directory for trial JSON and reports
    #[arg(long)]
    out_dir: PathBuf,
    /// Binary task: 01, 23, or 89
    #[arg(long)]
    task: String,
    /// Head: qcnn, c2c1d, or c2c2d
    #[arg(long)]
    head: String,
    /// Convolution ansatz id 1..=11 (qcnn only)
    #[arg(long)]
    conv: Option<u8>,
    /// Pooling: zx, gen, or trivial (qcnn only)
    #[arg(long)]
    pooling: Option<String>,
    /// Trials (fresh random initializations) [default: 10]
    #[arg(long)]
    trials: Option<usize>,
    /// Global seed [default: 7]
    #[arg(long)]
    seed: Option<u64>,
    /// Training iterations (mini-batch steps) [default: 200]
    #[arg(long)]
    iters: Option<usize>,
    /// Mini-batch size [default: 50]
    #[arg(long)]
    batch: Option<usize>,
    /// Adam learning rate [default: 0.01]
    #[arg(long)]
    lr: Option<f64>,
    /// Fine-tuning pool size per task [default: 2000; paper scale: 10000]
    #[arg(long)]
    train_cap: Option<usize>,
    /// Allow conv/pooling pairings outside the benchmark set
    #[arg(long)]
    no_strict: bool,
    /// Worker threads, 0 = all cores [default: 0]
    #[arg(long)]
    workers: Option<usize>,
    /// TOML config file (flags override it)
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Source-model checkpoint from `pretrain`
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory with MNIST IDX files
    #[arg(long)]
    mnist_dir: PathBuf,
    /// Output directory (resumable store)
    #[arg(long)]
    out_dir: PathBuf,
    /// Grid: paper (24 configs x 3 tasks) or smoke (2 configs)
    #[arg(long, default_value = "paper")]
    grid: String,
    /// Trials per configuration [default: 10]
    #[arg(long)]
    trials: Option<usize>,
    /// Global seed [default: 7]
    #[arg(long)]
    seed: Option<u64>,
    /// Training iterations per trial [default: 200]
    #[arg(long)]
    iters: Option<usize>,
    /// Mini-batch size [default: 50]
    #[arg(long)]
    batch: Option<usize>,
    /// Adam learning rate [default: 0.01]
    #[arg(long)]
    lr: Option<f64>,
    /// Fine-tuning pool size per task [default: 2000; paper scale: 10000]
    #[arg(long)]
    train_cap: Option<usize>,
    /// Worker threads, 0 = all cores [default: 0]
    #[arg(long)]
    workers: Option<usize>,
    /// TOML config file (flags override it)
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding trials/ from finetune or benchmark runs
    #[arg(long)]
    results: PathBuf,
}

fn configure_workers(workers: usize) -> anyhow::Result<()> {
    if workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .context("worker pool already configured")?;
    }
    Ok(())
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn cmd_pretrain(args: &PretrainArgs) -> anyhow::Result<()> {
    let file = read_config(&args.config)?;
    let defaults = PretrainOptions::default();
    let opts = PretrainOptions {
        seed: args.seed.or(file.seed).unwrap_or(defaults.seed),
        train_subset: args.subset.or(file.subset).unwrap_or(defaults.train_subset),
        batch_size: args.batch.or(file.batch).unwrap_or(defaults.batch_size),
        lr: args.lr.or(file.lr).unwrap_or(defaults.lr),
        max_epochs: args.max_epochs.or(file.max_epochs).unwrap_or(defaults.max_epochs),
        target_accuracy: args
            .target_accuracy
            .or(file.target_accuracy)
            .unwrap_or(defaults.target_accuracy),
    };
    configure_workers(args.workers.or(file.workers).unwrap_or(0))?;
    if !args.fashion_dir.is_dir() {
        bail!("fashion dir {} does not exist", args.fashion_dir.display());
    }

    let (model, report) = pretrain_source(&args.fashion_dir, &opts)?;
    save_checkpoint(
        &args.out,
        &model,
        CheckpointMeta {
            seed: opts.seed,
            achieved_accuracy: report.test_accuracy,
            epochs: report.epochs,
            train_samples: report.train_samples,
        },
    )?;

    let mut dataset_digests = BTreeMap::new();
    for split in [Split::Train, Split::Test] {
        if let Ok(p) = qcnn_core::data::image_file_path(&args.fashion_dir, split) {
            dataset_digests.insert(format!("fashion-{split:?}").to_lowercase(), file_digest(&p)?);
        }
    }
    let manifest = RunManifest {
        build: env!("CARGO_PKG_VERSION").into(),
        created_unix: now_unix(),
        command: "pretrain".into(),
        global_seed: opts.seed,
        options: FinetuneOptions {
            train_cap: opts.train_subset,
            iterations: 0,
            batch_size: opts.batch_size,
            lr: opts.lr,
            trials: 0,
            seed: opts.seed,
        },
        checkpoint_digest: file_digest(&args.out)?,
        dataset_digests,
        configs: vec!["source-cnn".into()],
        trials_total: 0,
        trials_completed: 0,
        trials_skipped: 0,
        failures: vec![],
        wall_secs: report.wall_secs,
    };
    let manifest_path = args.out.with_extension("manifest.json");
    write_manifest(&manifest_path, &manifest)?;

    println!(
        "pretrained on {} images for {} epochs: 10-class test accuracy {:.4} ({:.1}s)",
        report.train_samples, report.epochs, report.test_accuracy, report.wall_secs
    );
    println!("checkpoint: {}", args.out.display());
    Ok(())
}

fn cmd_finetune(args: &FinetuneArgs) -> anyhow::Result<()> {
    let file = read_config(&args.config)?;
    let defaults = FinetuneOptions::default();
    let opts = FinetuneOptions {
        train_cap: args.train_cap.or(file.train_cap).unwrap_or(defaults.train_cap),
        iterations: args.iters.or(file.iters).unwrap_or(defaults.iterations),
        batch_size: args.batch.or(file.batch).unwrap_or(defaults.batch_size),
        lr: args.lr.or(file.lr).unwrap_or(defaults.lr),
        trials: args.trials.or(file.trials).unwrap_or(defaults.trials),
        seed: args.seed.or(file.seed).unwrap_or(defaults.seed),
    };
    configure_workers(args.workers.or(file.workers).unwrap_or(0))?;

    let task: BinaryTask = args.task.parse()?;
    let head: HeadKind = args.head.parse()?;
    let cfg = match head {
        HeadKind::Qcnn => {
            let conv = args
                .conv
                .ok_or_else(|| anyhow::anyhow!("--head qcnn requires --conv"))?;
            let pooling = match args.pooling.as_deref() {
                Some("zx") => PoolingKind::Zx,
                Some("gen") => PoolingKind::Generalized,
                Some("trivial") => PoolingKind::Trivial,
                Some(other) => bail!("unknown pooling {other:?}, expected zx, gen, or trivial"),
                None => bail!("--head qcnn requires --pooling"),
            };
            ExperimentConfig::quantum(task, ConvAnsatzId::new(conv)?, pooling)
        }
        _ => {
            if args.conv.is_some() || args.pooling.is_some() {
                bail!("--conv/--pooling apply only to --head qcnn");
            }
            ExperimentConfig::classical(task, head)
        }
    };
    cfg.validate(!args.no_strict)?;
    println!("trainable params: {}", cfg.trainable_params());

    let ckpt = load_checkpoint(&args.checkpoint)
        .with_context(|| format!("cannot load checkpoint {}", args.checkpoint.display()))?;
    let mnist_train = load_dataset(&args.mnist_dir, Split::Train)?;
    let mnist_test = load_dataset(&args.mnist_dir, Split::Test)?;
    let model_dig = model_digest(&ckpt.model)?;
    let data = task_data(
        &ckpt.model,
        &model_dig,
        &args.out_dir.join("cache"),
        &mnist_train,
        &mnist_test,
        task,
        opts.train_cap,
        opts.seed,
    )?;

    let start = std::time::Instant::now();
    let mut accs = Vec::with_capacity(opts.trials);
    for trial in 0..opts.trials {
        let result = run_trial(&cfg, &opts, &data, trial)?;
        println!(
            "trial {trial}: test accuracy {:.4}, final loss {:.4} ({:.1}s)",
            result.test_accuracy, result.final_loss, result.wall_secs
        );
        accs.push(result.test_accuracy);
        write_trial(&args.out_dir, &result)?;
    }

    let results = qcnn_core::pipeline::load_trial_results(&args.out_dir)?;
    write_reports(&args.out_dir, &results)?;

    if accs.len() > 1 {
        let s = summarize(&accs)?;
        println!("mean accuracy {:.4} +/- {:.4} over {} trials", s.mean, s.var.sqrt(), s.n);
    } else if let Some(a) = accs.first() {
        println!("mean accuracy {a:.4} over 1 trial");
    }

    let mut dataset_digests = BTreeMap::new();
    for split in [Split::Train, Split::Test] {
        if let Ok(p) = qcnn_core::data::image_file_path(&args.mnist_dir, split) {
            dataset_digests.insert(format!("mnist-{split:?}").to_lowercase(), file_digest(&p)?);
        }
    }
    write_manifest(
        &args.out_dir.join("manifest.json"),
        &RunManifest {
            build: env!("CARGO_PKG_VERSION").into(),
            created_unix: now_unix(),
            command: "finetune".into(),
            global_seed: opts.seed,
            options: opts,
            checkpoint_digest: file_digest(&args.checkpoint)?,
            dataset_digests,
            configs: vec![cfg.config_id()],
            trials_total: opts.trials,
            trials_completed: opts.trials,
            trials_skipped: 0,
            failures: vec![],
            wall_secs: start.elapsed().as_secs_f64(),
        },
    )?;
    Ok(())
}

fn cmd_benchmark(args: &BenchmarkArgs) -> anyhow::Result<ExitCode> {
    let file = read_config(&args.config)?;
    let defaults = FinetuneOptions::default();
    let opts = FinetuneOptions {
        train_cap: args.train_cap.or(file.train_cap).unwrap_or(defaults.train_cap),
        iterations: args.iters.or(file.iters).unwrap_or(defaults.iterations),
        batch_size: args.batch.or(file.batch).unwrap_or(defaults.batch_size),
        lr: args.lr.or(file.lr).unwrap_or(defaults.lr),
        trials: args.trials.or(file.trials).unwrap_or(defaults.trials),
        seed: args.seed.or(file.seed).unwrap_or(defaults.seed),
    };
    configure_workers(args.workers.or(file.workers).unwrap_or(0))?;

    let configs = match args.grid.as_str() {
        "paper" => paper_grid(),
        "smoke" => smoke_grid(),
        other => bail!("unknown grid {other:?}, expected paper or smoke"),
    };
    let ckpt = load_checkpoint(&args.checkpoint)
        .with_context(|| format!("cannot load checkpoint {}", args.checkpoint.display()))?;

    let outcome = qcnn_core::pipeline::run_benchmark(&qcnn_core::pipeline::BenchmarkRequest {
        model: &ckpt.model,
        checkpoint_digest: file_digest(&args.checkpoint)?,
        mnist_dir: &args.mnist_dir,
        out_dir: &args.out_dir,
        configs,
        opts,
        verbose: true,
    })?;

    print!("{}", outcome.summary);
    println!(
        "benchmark: {} done, {} skipped (already on disk), {} failed, of {} planned",
        outcome.trials_completed,
        outcome.trials_skipped,
        outcome.failures.len(),
        outcome.trials_total
    );
    if outcome.completion() < 0.95 {
        eprintln!("benchmark incomplete: {:.1}% of trials finished", outcome.completion() * 100.0);
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(args: &ReportArgs) -> anyhow::Result<()> {
    let results = qcnn_core::pipeline::load_trial_results(&args.results)?;
    if results.is_empty() {
        bail!("no trial results under {}", args.results.join("trials").display());
    }
    let summary = write_reports(&args.results, &results)?;
    print!("{summary}");
    println!(
        "wrote aggregate.csv, per-task p-value tables, and summary.txt to {}",
        args.results.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = || -> anyhow::Result<ExitCode> {
        match &cli.command {
            Command::Pretrain(a) => cmd_pretrain(a).map(|()| ExitCode::SUCCESS),
            Command::Finetune(a) => cmd_finetune(a).map(|()| ExitCode::SUCCESS),
            Command::Benchmark(a) => cmd_benchmark(a),
            Command::Report(a) => cmd_report(a).map(|()| ExitCode::SUCCESS),
        }
    };
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
