//! Command-line front end: `train`, `sample`, `eval`.
//!
//! Flag precedence: values from `--config FILE` are applied first, generic
//! `--set key=value` overrides next, dedicated flags (`--iterations`,
//! `--seed`) last. Output files default into `--out DIR`, which itself
//! defaults to `$SMM_OUT_DIR` or the current directory.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use smm::checkpoint;
use smm::config::{apply_key, load_config};
use smm::data::load_dataset;
use smm::metrics::{mmd_rbf, sliced_wasserstein, Bandwidth, MetricRecord};
use smm::render::{numeric_table, pgm_grid};
use smm::trainer::{flatten_rows, sample_one_step, train_loop, TrainingConfig, SYNTHETIC_POOL};
use smm::{Result, SmmError};

#[derive(Parser)]
#[command(name = "smm", version, about = "One-step generative modeling by score mismatching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a generator/score pair and write checkpoint + metrics log.
    Train(TrainArgs),
    /// Draw samples from a checkpoint with a single generator forward.
    Sample(SampleArgs),
    /// Compare checkpoint samples against real data with MMD and sliced
    /// Wasserstein.
    Eval(EvalArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Config file (`key = value` lines); omit to train with defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Override the iteration count (wins over config and --set).
    #[arg(long)]
    iterations: Option<u64>,
    /// Override the master seed (wins over config and --set).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to $SMM_OUT_DIR, then the current dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Number of samples; 0 writes an empty file.
    #[arg(long, default_value_t = 16)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; defaults to samples.txt / samples.pgm in the output dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset override; defaults to the dataset stored in the checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Samples per side.
    #[arg(long, default_value_t = 2048)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn out_dir(flag: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| std::env::var_os("SMM_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => load_config(path)
            .map_err(|e| SmmError::Config(format!("{}: {e}", path.display())))?,
        None => TrainingConfig::default(),
    };
    for set in &args.sets {
        let (key, value) = set
            .split_once('=')
            .ok_or_else(|| SmmError::Config(format!("--set needs key=value, got `{set}`")))?;
        apply_key(&mut cfg, key.trim(), value.trim())?;
    }
    if let Some(iterations) = args.iterations {
        cfg.iterations = iterations;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let dir = out_dir(&args.out);
    std::fs::create_dir_all(&dir)?;
    cfg.checkpoint_path = Some(dir.join("checkpoint.smm"));
    cfg.metrics_path = Some(dir.join("metrics.csv"));
    cfg.validate()?;
    let outcome = train_loop(&cfg)?;
    let last = outcome.records.last();
    println!(
        "trained {} iterations (seed {}); final losses: match {:.4}, mismatch {:.4}, generator {:.4}",
        outcome.state.iteration,
        cfg.seed,
        last.map_or(f64::NAN, |r| r.loss_match),
        last.map_or(f64::NAN, |r| r.loss_mismatch),
        last.map_or(f64::NAN, |r| r.loss_generator),
    );
    println!("wrote {} and {}", dir.join("checkpoint.smm").display(), dir.join("metrics.csv").display());
    Ok(())
}

fn cmd_sample(args: &SampleArgs) -> Result<()> {
    let state = checkpoint::load(&args.checkpoint)?;
    let image = state.config.dataset.is_image();
    let out = args.out.clone().unwrap_or_else(|| {
        out_dir(&None).join(if image { "samples.pgm" } else { "samples.txt" })
    });
    if args.n == 0 {
        std::fs::write(&out, [])?;
        println!("wrote 0 samples to {}", out.display());
        return Ok(());
    }
    let samples = sample_one_step(&state, args.n, args.seed)?;
    let bytes = if image {
        pgm_grid(&samples)?
    } else {
        numeric_table(&flatten_rows(&samples))?.into_bytes()
    };
    std::fs::write(&out, bytes)?;
    println!("wrote {} samples to {}", args.n, out.display());
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let state = checkpoint::load(&args.checkpoint)?;
    let dataset_spec = match &args.config {
        Some(path) => load_config(path)?.dataset,
        None => state.config.dataset.clone(),
    };
    if args.n < 2 {
        return Err(SmmError::InvalidArgument(
            "eval needs at least 2 samples per side".into(),
        ));
    }
    let dataset = load_dataset(&dataset_spec, SYNTHETIC_POOL.max(args.n), args.seed)?;
    let real = {
        let indices: Vec<usize> = (0..args.n).map(|i| i % dataset.len()).collect();
        flatten_rows(&dataset.gather(&indices))
    };
    let generated = flatten_rows(&sample_one_step(&state, args.n, args.seed)?);
    let (mmd, bw) = mmd_rbf(&real, &generated, Bandwidth::Median)?;
    let sw = sliced_wasserstein(&real, &generated, 64, args.seed)?;
    for record in [
        MetricRecord {
            name: "mmd".into(),
            value: mmd,
            n_a: args.n,
            n_b: args.n,
            bandwidth: Some(bw),
            seed: args.seed,
        },
        MetricRecord {
            name: "sliced_wasserstein".into(),
            value: sw,
            n_a: args.n,
            n_b: args.n,
            bandwidth: None,
            seed: args.seed,
        },
    ] {
        println!(
            "{} = {:.6e}  (n = {} vs {}, bandwidth = {}, seed = {})",
            record.name,
            record.value,
            record.n_a,
            record.n_b,
            record
                .bandwidth
                .map_or("-".into(), |b| format!("{b:.4}")),
            record.seed
        );
    }
    Ok(())
}

fn exists_hint(path: &Path) -> String {
    if path.exists() {
        String::new()
    } else {
        format!(" ({} does not exist)", path.display())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(args) => cmd_train(args).map_err(|e| match &args.config {
            Some(p) => SmmError::Config(format!("{e}{}", exists_hint(p))),
            None => e,
        }),
        Command::Sample(args) => cmd_sample(args),
        Command::Eval(args) => cmd_eval(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
