//! Batch CLI: dataset generation, training, evaluation, translation, and
//! config inspection.
//!
//! Exit codes: 0 success, 2 config, 3 io, 4 data, 5 training abort
//! (non-finite loss), 6 checkpoint, 7 validation/shape, 1 other. Failures
//! print one machine-parsable line to stderr:
//! `error category=<category> message="..."`.
//!
//! Setting `IM2IM_DETERMINISTIC=1` pins the compute thread pool to a single
//! thread. CPU kernels are deterministic even without it (the test suite
//! checks bit-exact replays); the switch exists as a belt-and-braces option
//! for platforms where threaded numeric libraries misbehave.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use im2im::eval::{evaluate_toy, ToyEvalOptions};
use im2im::train::{self, latest_checkpoint, load_bundle};
use im2im::{Direction, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "im2im",
    about = "Unpaired image-to-image translation: synthetic benchmark data, training, evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the paired polygon/dot-lattice benchmark dataset.
    GenToy {
        /// Number of sample pairs.
        #[arg(long)]
        n: u64,
        /// Root seed; identical seeds reproduce identical bytes.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Image side in pixels (even, >= 32).
        #[arg(long, default_value_t = 128)]
        size: u32,
        /// Output directory (x/, y/, manifest.jsonl).
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model pair; resumes from the latest checkpoint in the run
    /// directory when one exists.
    Train {
        /// Config file (TOML). Defaults apply for every omitted key.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override a config key, e.g. --set optimizer.learning_rate=1e-4.
        /// Applied after the file, before anything runs.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Convenience alias for --set seed=<N>.
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory (config snapshot, metrics.log, checkpoints/,
        /// samples/).
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Score a checkpoint on a generated benchmark dataset via boundary
    /// extraction and directed Hausdorff distances.
    EvalToy {
        /// Checkpoint directory (a checkpoints/iter_* directory or a run
        /// directory, in which case the latest checkpoint is used).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory produced by gen-toy.
        #[arg(long)]
        dataset: PathBuf,
        /// x2y (regular to deformed) or y2x (deformed to regular).
        #[arg(long)]
        direction: String,
        /// Boundary samples per point set.
        #[arg(long, default_value_t = 500)]
        points: usize,
        /// Evaluate at most this many samples.
        #[arg(long)]
        max_samples: Option<usize>,
        /// Where to write per-sample rows (JSONL) and the summary table.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write (input | output | ground truth) triptych images.
        #[arg(long, default_value_t = false)]
        triptychs: bool,
    },
    /// Translate a folder of images through a checkpointed generator.
    Translate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input image directory.
        #[arg(long)]
        input: PathBuf,
        /// Output directory (PNG files named after the inputs).
        #[arg(long)]
        out: PathBuf,
        /// x2y or y2x.
        #[arg(long)]
        direction: String,
    },
    /// Print the fully resolved config (file + overrides + defaults).
    ShowConfig {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>, im2im::Error> {
    raw.iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| {
                    im2im::Error::Config(format!("override {s:?} is not of the form key=value"))
                })
        })
        .collect()
}

fn load_config(
    path: &Option<PathBuf>,
    overrides: &[String],
    seed: Option<u64>,
) -> Result<ExperimentConfig, im2im::Error> {
    let base = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| im2im::Error::Io { path: p.clone(), source: e })?;
            ExperimentConfig::from_toml_str(&text)?
        }
        None => ExperimentConfig::default(),
    };
    let mut pairs = parse_overrides(overrides)?;
    if let Some(seed) = seed {
        pairs.push(("seed".into(), seed.to_string()));
    }
    base.with_overrides(&pairs)
}

/// Accepts either a concrete checkpoint directory or a run directory.
fn resolve_checkpoint(path: &PathBuf) -> Result<PathBuf, im2im::Error> {
    if path.join("state.json").exists() {
        return Ok(path.clone());
    }
    match latest_checkpoint(path)? {
        Some(p) => Ok(p),
        None => Err(im2im::Error::Checkpoint(format!(
            "no checkpoint found under {}",
            path.display()
        ))),
    }
}

fn run(cli: Cli) -> Result<(), im2im::Error> {
    match cli.command {
        Command::GenToy { n, seed, size, out } => {
            let records = im2im::toy::generate_dataset(n, seed, size, &out)?;
            println!(
                "wrote {} sample pairs to {} ({}x{} px)",
                records.len(),
                out.display(),
                size,
                size
            );
            Ok(())
        }
        Command::Train {
            config,
            overrides,
            seed,
            run_dir,
        } => {
            let cfg = load_config(&config, &overrides, seed)?;
            cfg.validate()?;
            let final_iter = train::train(&cfg, &run_dir)?;
            println!(
                "training finished at iteration {final_iter}; run directory {}",
                run_dir.display()
            );
            Ok(())
        }
        Command::EvalToy {
            checkpoint,
            dataset,
            direction,
            points,
            max_samples,
            out,
            triptychs,
        } => {
            let direction: Direction = direction.parse()?;
            let ckpt = resolve_checkpoint(&checkpoint)?;
            let (bundle, _) = load_bundle(&ckpt, &im2im::Device::Cpu)?;
            let records = im2im::toy::read_manifest(&dataset)?;
            let opts = ToyEvalOptions {
                n_points: points,
                max_samples,
                triptych_dir: if triptychs {
                    Some(
                        out.clone()
                            .unwrap_or_else(|| dataset.join("eval"))
                            .join("triptychs"),
                    )
                } else {
                    None
                },
                ..Default::default()
            };
            let summary = evaluate_toy(
                |t| bundle.translate(t, direction),
                &dataset,
                &records,
                direction,
                &opts,
            )?;
            if let Some(out) = out {
                std::fs::create_dir_all(&out)
                    .map_err(|e| im2im::Error::Io { path: out.clone(), source: e })?;
                summary.write_rows(&out.join("rows.jsonl"))?;
                let table_path = out.join("summary.txt");
                std::fs::write(&table_path, summary.table())
                    .map_err(|e| im2im::Error::Io { path: table_path, source: e })?;
            }
            print!("{}", summary.table());
            Ok(())
        }
        Command::Translate {
            checkpoint,
            input,
            out,
            direction,
        } => {
            let direction: Direction = direction.parse()?;
            let ckpt = resolve_checkpoint(&checkpoint)?;
            let written = train::translate_images(&ckpt, &input, &out, direction)?;
            println!("translated {} images into {}", written.len(), out.display());
            Ok(())
        }
        Command::ShowConfig { config, overrides } => {
            let cfg = load_config(&config, &overrides, None)?;
            cfg.validate()?;
            print!("{}", cfg.to_toml_string()?);
            Ok(())
        }
    }
}

fn error_category(err: &im2im::Error) -> (&'static str, u8) {
    use im2im::Error::*;
    match err {
        Config(_) => ("config", 2),
        Io { .. } | Image { .. } => ("io", 3),
        Data(_) => ("data", 4),
        NonFinite { .. } => ("train-abort", 5),
        Checkpoint(_) => ("checkpoint", 6),
        Validation(_) | Shape(_) => ("validation", 7),
        Tensor(_) => ("tensor", 1),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    if std::env::var("IM2IM_DETERMINISTIC").is_ok_and(|v| v == "1") {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(1).build_global() {
            log::warn!("could not pin the thread pool: {e}");
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (category, code) = error_category(&err);
            eprintln!("error category={category} message={:?}", err.to_string());
            ExitCode::from(code)
        }
    }
}
