//! Subcommand bodies: thin orchestration over the library.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

use cglm::bench::{run_scaling, verify_static_counts};
use cglm::checkpoint::{load_checkpoint, save_checkpoint};
use cglm::data::{load_prepared, prepare, Split};
use cglm::mixers::MixerKind;
use cglm::model::Model;
use cglm::plot::{render_line_chart, ChartSpec, Series};
use cglm::tensor::Element;
use cglm::train::{train_from, AdamState};

use crate::config::{Precision, RunConfig};

pub fn cmd_prepare(input: &str, out: &Path) -> Result<()> {
    let text = if input.starts_with("http://") || input.starts_with("https://") {
        println!("fetching {input} ...");
        ureq::get(input)
            .call()
            .with_context(|| format!("fetching {input}"))?
            .into_string()
            .context("reading response body")?
    } else {
        fs::read_to_string(input).with_context(|| format!("cannot read corpus {input}"))?
    };
    let (tokenizer, store) = prepare(&text, out)?;
    // keep a copy of the raw corpus next to the caches
    fs::write(out.join("input.txt"), &text)?;
    println!(
        "prepared corpus: {} chars, vocab {}, train {} tokens, val {} tokens -> {}",
        text.chars().count(),
        tokenizer.vocab_size(),
        store.split(Split::Train).len(),
        store.split(Split::Val).len(),
        out.display()
    );
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig, resume: bool) -> Result<()> {
    match cfg.precision {
        Precision::F32 => train_run::<f32>(cfg, resume),
        Precision::F64 => train_run::<f64>(cfg, resume),
    }
}

fn train_run<E: Element>(cfg: &RunConfig, resume: bool) -> Result<()> {
    let (tokenizer, store) = load_prepared(&cfg.data_dir).with_context(|| {
        format!(
            "no prepared corpus in {} (run `cglm prepare` first)",
            cfg.data_dir.display()
        )
    })?;
    let model_cfg = cfg.model_config(tokenizer.vocab_size());
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("resolved.cfg"), cfg.render())?;

    let (mut model, mut opt, start_iter) = if resume {
        let path = cfg.out_dir.join(cglm::train::LAST_CHECKPOINT);
        let loaded = cglm::checkpoint::load_checkpoint_expecting::<E>(&path, &model_cfg)?;
        let opt = loaded
            .opt
            .ok_or_else(|| anyhow!("{} has no optimizer state", path.display()))?;
        println!("resuming from {} at iteration {}", path.display(), loaded.iteration);
        (loaded.model, opt, loaded.iteration)
    } else {
        let model = Model::<E>::build(&model_cfg, cfg.train.seed)?;
        let opt = AdamState::new(&model);
        (model, opt, 0)
    };

    let counts = model.count_params();
    println!(
        "model: {} / {} | params decayed={} non_decayed={} reported={}",
        model_cfg.mixer,
        model_cfg.mlp_mode,
        counts.decayed,
        counts.non_decayed,
        counts.reported_total
    );

    let report = train_from(
        &mut model,
        &mut opt,
        start_iter,
        &store,
        &cfg.train,
        &cfg.out_dir,
        true,
    )?;
    println!(
        "done: final_val={:.4} best_val={:.4} at iter {} -> {}",
        report.final_val,
        report.best_val,
        report.best_iter,
        cfg.out_dir.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_sample(
    ckpt: &Path,
    data_dir: &Path,
    prompt: &str,
    num: usize,
    temperature: f64,
    top_k: Option<usize>,
    seed: u64,
) -> Result<()> {
    let tokenizer = cglm::data::CharTokenizer::load(data_dir).with_context(|| {
        format!(
            "need the vocabulary sidecar from {} to encode/decode",
            data_dir.display()
        )
    })?;
    let loaded = load_checkpoint::<f32>(ckpt)?;
    let prompt_ids: Vec<u32> = tokenizer
        .encode(prompt)?
        .into_iter()
        .map(|t| t as u32)
        .collect();
    let start = tokenizer.newline_id().unwrap_or(0) as u32;
    let out = loaded
        .model
        .generate(&prompt_ids, num, temperature, top_k, seed, start)?;
    let text = tokenizer.decode(&out.iter().map(|&t| t as u16).collect::<Vec<_>>())?;
    println!("{text}");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_bench(
    mixers: &str,
    t_values: &str,
    d: usize,
    n_head: usize,
    reps: usize,
    seed: u64,
    out: &Path,
    parallel: bool,
) -> Result<()> {
    let kinds: Vec<MixerKind> = mixers
        .split(',')
        .map(|s| s.trim().parse::<MixerKind>().map_err(|e| anyhow!("{e}")))
        .collect::<Result<_>>()?;
    let t_list: Vec<usize> = t_values
        .split(',')
        .map(|s| s.trim().parse::<usize>().context("bad T value"))
        .collect::<Result<_>>()?;

    // analytic vs instrumented counts for the static mixers
    for &t_len in &t_list {
        for (kind, analytic, measured) in verify_static_counts(t_len, d, seed)? {
            let ok = analytic == measured;
            println!(
                "counts {kind} T={t_len}: model={} measured={} {}",
                analytic.total(),
                measured.total(),
                if ok { "exact" } else { "MISMATCH" }
            );
            if !ok {
                bail!("analytic op-count model diverged from the instrumented kernel");
            }
        }
    }

    let report = run_scaling(&kinds, &t_list, d, n_head, reps, seed, parallel)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("scaling.csv"), report.to_csv())?;
    fs::write(out.join("scaling.svg"), report.to_svg()?)?;
    for e in &report.entries {
        println!(
            "bench mixer={} T={} median_ms={:.4} iqr_ms={:.4} inner={} ops_model={}",
            e.kind, e.t_len, e.median_ms, e.iqr_ms, e.inner, e.ops_model
        );
    }
    for (kind, slope) in &report.slopes {
        println!("slope {kind}: {slope:.3}");
    }
    println!("wrote {}/scaling.csv and scaling.svg", out.display());
    Ok(())
}

/// One input CSV with an optional `path:label`; label defaults to the
/// parent directory name.
pub struct PlotInput {
    pub path: PathBuf,
    pub label: String,
}

pub fn parse_plot_input(arg: &str) -> PlotInput {
    match arg.rsplit_once(':') {
        Some((path, label)) if !label.is_empty() && !label.contains('/') => PlotInput {
            path: PathBuf::from(path),
            label: label.to_string(),
        },
        _ => {
            let path = PathBuf::from(arg);
            let label = path
                .parent()
                .and_then(|p| p.file_name())
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| arg.to_string());
            PlotInput { path, label }
        }
    }
}

pub fn cmd_plot(
    inputs: &[PlotInput],
    split: &str,
    out: &Path,
    title: &str,
    x_range: Option<(f64, f64)>,
    y_range: Option<(f64, f64)>,
) -> Result<()> {
    if inputs.is_empty() {
        bail!("plot needs at least one --csv input");
    }
    let mut series = Vec::new();
    for input in inputs {
        let text = fs::read_to_string(&input.path)
            .with_context(|| format!("cannot read {}", input.path.display()))?;
        let mut points = Vec::new();
        for (lineno, line) in text.lines().enumerate().skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 5 {
                bail!(
                    "{}:{}: expected 5 columns `iter,split,loss,lr,ms_per_iter`",
                    input.path.display(),
                    lineno + 1
                );
            }
            if cols[1] != split {
                continue;
            }
            let iter: f64 = cols[0]
                .parse()
                .with_context(|| format!("{}:{}: bad iter", input.path.display(), lineno + 1))?;
            let loss: f64 = cols[2]
                .parse()
                .with_context(|| format!("{}:{}: bad loss", input.path.display(), lineno + 1))?;
            points.push((iter, loss));
        }
        if points.is_empty() {
            bail!(
                "{} has no rows for split `{split}`",
                input.path.display()
            );
        }
        series.push(Series {
            label: input.label.clone(),
            points,
        });
    }
    let spec = ChartSpec {
        title: if title.is_empty() {
            format!("{split} loss")
        } else {
            title.to_string()
        },
        x_label: "iteration".into(),
        y_label: format!("{split} loss"),
        x_range,
        y_range,
        ..Default::default()
    };
    let svg = render_line_chart(&spec, &series)?;
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(out, svg)?;
    println!("wrote {}", out.display());
    Ok(())
}

/// Re-save a checkpoint (used by tests to confirm CLI-visible files
/// round-trip); also a handy integrity check.
pub fn cmd_verify_ckpt(path: &Path) -> Result<()> {
    let loaded = load_checkpoint::<f32>(path)?;
    let tmp = path.with_extension("verify.tmp");
    save_checkpoint(&loaded.model, loaded.opt.as_ref(), loaded.iteration, &tmp)?;
    let a = fs::read(path)?;
    let b = fs::read(&tmp)?;
    fs::remove_file(&tmp)?;
    if a != b {
        bail!("checkpoint does not round-trip byte-identically");
    }
    println!(
        "{}: ok ({} tensors, iteration {})",
        path.display(),
        loaded.model.params().len(),
        loaded.iteration
    );
    Ok(())
}

/// Used by `plot` to parse `--x-range lo,hi`.
pub fn parse_range(arg: &str) -> Result<(f64, f64)> {
    let (lo, hi) = arg
        .split_once(',')
        .ok_or_else(|| anyhow!("range must be `lo,hi`, got {arg:?}"))?;
    Ok((lo.trim().parse()?, hi.trim().parse()?))
}
