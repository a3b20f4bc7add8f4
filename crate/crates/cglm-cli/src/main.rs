//! `cglm`: prepare a corpus, train decoder variants, sample text,
//! benchmark mixer scaling and plot loss curves.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use commands::{parse_plot_input, parse_range};
use config::{apply_overrides, parse_config, RunConfig};

#[derive(Parser)]
#[command(name = "cglm", version, about = "character-level LM lab with pluggable sequence mixers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tokenize a corpus file (or URL) into a binary token cache.
    Prepare {
        /// Path or http(s) URL of the UTF-8 corpus
        #[arg(long)]
        input: String,
        /// Cache directory (vocab.txt, train.bin, val.bin)
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Train a model as described by a config file.
    Train {
        /// `key = value` config file; see presets/
        #[arg(long)]
        config: PathBuf,
        /// Override single keys, repeatable: --set batch_size=16
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Override out_dir from the config
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override seed from the config
        #[arg(long)]
        seed: Option<u64>,
        /// Reproducible-log mode (ms_per_iter column zeroed)
        #[arg(long)]
        deterministic: bool,
        /// Continue from out_dir/ckpt_last.bin
        #[arg(long)]
        resume: bool,
    },
    /// Sample text from a checkpoint.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        /// Directory holding vocab.txt (same as prepare --out)
        #[arg(long, default_value = "data")]
        data: PathBuf,
        /// Prompt text; empty means start from a newline
        #[arg(long, default_value = "")]
        prompt: String,
        /// Number of tokens to generate
        #[arg(long, default_value_t = 200)]
        num: usize,
        #[arg(long, default_value_t = 0.8)]
        temperature: f64,
        /// Keep only the k most likely tokens; 1 = argmax
        #[arg(long)]
        top_k: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Measure mixer forward scaling across sequence lengths.
    Bench {
        /// Comma-separated mixer kinds
        #[arg(long, default_value = "attention,causal_max,causal_min_context")]
        mixers: String,
        /// Comma-separated sequence lengths
        #[arg(long = "T", default_value = "64,128,256,512,1024")]
        t_values: String,
        #[arg(long, default_value_t = 64)]
        d: usize,
        #[arg(long, default_value_t = 4)]
        n_head: usize,
        /// Timed repetitions per (mixer, T) cell
        #[arg(long, default_value_t = 31)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "bench_out")]
        out: PathBuf,
        /// Allow the rayon pool instead of a single pinned worker
        #[arg(long)]
        parallel: bool,
    },
    /// Draw loss curves from one or more loss.csv files into an SVG.
    Plot {
        /// loss.csv path, optionally `path:label`; repeatable
        #[arg(long = "csv", required = true)]
        csv: Vec<String>,
        /// Which split to draw: train or val
        #[arg(long, default_value = "val")]
        split: String,
        #[arg(long, default_value = "loss.svg")]
        out: PathBuf,
        #[arg(long, default_value = "")]
        title: String,
        /// Fixed x axis `lo,hi` (default: auto)
        #[arg(long)]
        x_range: Option<String>,
        /// Fixed y axis `lo,hi` (default: auto)
        #[arg(long)]
        y_range: Option<String>,
    },
    /// Check that a checkpoint loads and round-trips byte-identically.
    VerifyCkpt {
        #[arg(long)]
        ckpt: PathBuf,
    },
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Prepare { input, out } => commands::cmd_prepare(&input, &out),
        Command::Train {
            config,
            set,
            out,
            seed,
            deterministic,
            resume,
        } => {
            let mut cfg: RunConfig = parse_config(&config, &set)?;
            if let Some(out) = out {
                cfg.out_dir = out;
            }
            if let Some(seed) = seed {
                apply_overrides(&mut cfg, &[format!("seed={seed}")])?;
            }
            if deterministic {
                apply_overrides(&mut cfg, &["deterministic=true".into()])?;
            }
            cfg.validate()?;
            commands::cmd_train(&cfg, resume)
        }
        Command::Sample {
            ckpt,
            data,
            prompt,
            num,
            temperature,
            top_k,
            seed,
        } => commands::cmd_sample(&ckpt, &data, &prompt, num, temperature, top_k, seed),
        Command::Bench {
            mixers,
            t_values,
            d,
            n_head,
            reps,
            seed,
            out,
            parallel,
        } => commands::cmd_bench(&mixers, &t_values, d, n_head, reps, seed, &out, parallel),
        Command::Plot {
            csv,
            split,
            out,
            title,
            x_range,
            y_range,
        } => {
            let inputs: Vec<_> = csv.iter().map(|s| parse_plot_input(s)).collect();
            let xr = x_range.as_deref().map(parse_range).transpose()?;
            let yr = y_range.as_deref().map(parse_range).transpose()?;
            commands::cmd_plot(&inputs, &split, &out, &title, xr, yr)
        }
        Command::VerifyCkpt { ckpt } => commands::cmd_verify_ckpt(&ckpt),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // single machine-parsable line
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
