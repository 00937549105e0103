//! Command-line interface.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{DataSource, RunConfig};
use crate::data::{make_synthetic, Dataset, MaskSpec, SyntheticSpec, TimeSeriesWindow};
use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::eval::{self, run_ablation, EvalReport, ReportRow, ALL_ABLATIONS};
use crate::model::checkpoint::Checkpoint;
use crate::model::ModelParams;
use crate::training::{self, fit, normalizer_from, prepare_with, push_normalizer, PreparedData};

#[derive(Debug, Parser)]
#[command(
    name = "glocal-ib",
    version,
    about = "Time series imputation with global latent alignment"
)]
pub struct Cli {
    /// Worker threads for sweeps and ablations (1 is bit-reproducible).
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Run configuration file.
    #[arg(long)]
    pub config: PathBuf,

    /// Replace a config value, e.g. `train.weights.alpha=0`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset CSV.
    Synth {
        #[arg(long)]
        vars: usize,
        #[arg(long)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes a checkpoint and training logs.
    Train {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score a checkpoint on the test split at several missing rates.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Defaults to `<output_dir>/model.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated rates, overriding `eval.rates`.
        #[arg(long)]
        rates: Option<String>,
        /// Comma-separated patterns, overriding `eval.patterns`.
        #[arg(long)]
        patterns: Option<String>,
    },
    /// Train and score the four loss configurations.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        rates: Option<String>,
    },
    /// Fill the empty cells of a CSV.
    Impute {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Write 2-D PCA coordinates of masked and complete test latents.
    ExportLatents {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Missing rate of the masked branch; defaults to `mask.rate`.
        #[arg(long)]
        rate: Option<f64>,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    if cli.threads == 0 {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    match cli.command {
        Command::Synth {
            vars,
            steps,
            seed,
            noise,
            out,
        } => synth(
            SyntheticSpec {
                n_vars: vars,
                steps,
                seed,
                noise_std: noise,
            },
            &out,
        ),
        Command::Train { run } => train(&resolve(&run, &[])?),
        Command::Eval {
            run,
            checkpoint,
            rates,
            patterns,
        } => {
            let mut extra = Vec::new();
            if let Some(r) = rates {
                extra.push(format!("eval.rates={r}"));
            }
            if let Some(p) = patterns {
                extra.push(format!("eval.patterns={p}"));
            }
            let cfg = resolve(&run, &extra)?;
            evaluate(&cfg, &checkpoint_path(&cfg, checkpoint))
        }
        Command::Ablate { run, rates } => {
            let extra: Vec<String> = rates
                .map(|r| format!("eval.rates={r}"))
                .into_iter()
                .collect();
            ablate(&resolve(&run, &extra)?, cli.threads)
        }
        Command::Impute {
            checkpoint,
            input,
            output,
        } => impute(&checkpoint, &input, &output),
        Command::ExportLatents {
            run,
            checkpoint,
            rate,
        } => {
            let extra: Vec<String> = rate.map(|r| format!("mask.rate={r}")).into_iter().collect();
            let cfg = resolve(&run, &extra)?;
            export(&cfg, &checkpoint_path(&cfg, checkpoint))
        }
    }
}

/// Loads the config, applies overrides, validates, and echoes the result
/// into the output directory.
fn resolve(run: &RunArgs, extra: &[String]) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&run.config)?;
    cfg.apply_overrides(&run.overrides)?;
    cfg.apply_overrides(extra)?;
    cfg.validate()?;
    if let DataSource::Csv(p) = &cfg.source {
        if !p.is_file() {
            return Err(Error::Config(format!(
                "data file {} does not exist",
                p.display()
            )));
        }
    }
    std::fs::create_dir_all(&cfg.output_dir)?;
    std::fs::write(cfg.output_dir.join("config.resolved"), cfg.render())?;
    Ok(cfg)
}

fn checkpoint_path(cfg: &RunConfig, given: Option<PathBuf>) -> PathBuf {
    given.unwrap_or_else(|| cfg.output_dir.join("model.ckpt"))
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.source {
        DataSource::Synthetic => make_synthetic(cfg.synthetic),
        DataSource::Csv(p) => Dataset::load_csv(p),
    }
}

fn synth(spec: SyntheticSpec, out: &Path) -> Result<()> {
    if spec.n_vars == 0 || spec.steps == 0 {
        return Err(Error::Config(
            "--vars and --steps must be at least 1".into(),
        ));
    }
    if !(spec.noise_std >= 0.0) {
        return Err(Error::Config("--noise must be >= 0".into()));
    }
    let ds = make_synthetic(spec)?;
    ds.write_csv(out)?;
    let mut side = out.as_os_str().to_owned();
    side.push(".provenance");
    std::fs::write(
        PathBuf::from(side),
        format!(
            "generator = two_sinusoids_plus_gaussian_noise\nvars = {}\nsteps = {}\nseed = {}\nnoise_std = {}\n",
            spec.n_vars, spec.steps, spec.seed, spec.noise_std
        ),
    )?;
    println!(
        "wrote {} ({} rows, {} variables)",
        out.display(),
        ds.len(),
        ds.n_vars()
    );
    Ok(())
}

fn train(cfg: &RunConfig) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let data = prepare_with(&ds, &cfg.window(), None)?;
    let model = cfg.model(ds.n_vars());
    let out = fit(&data, model, &cfg.train)?;
    let dir = &cfg.output_dir;

    let mut ck = Checkpoint::from_params(&out.best, out.trainer.steps_taken());
    push_normalizer(&mut ck, &data.normalizer);
    ck.save(dir.join("model.ckpt"))?;
    training::write_training_log(dir.join("training_log.csv"), &out.log)?;
    eval::write_file(dir.join("history.csv"), |w| {
        writeln!(w, "epoch,steps,aborted,reg,loc,glo,total,val_mae")?;
        for h in &out.history {
            let t = &h.train;
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                h.epoch + 1,
                h.steps,
                h.aborted,
                t.reg,
                t.loc,
                t.glo,
                t.total,
                h.val_mae
            )?;
        }
        Ok(())
    })?;
    let best_mae = out
        .history
        .get(out.best_epoch.wrapping_sub(1))
        .map_or(out.initial_val_mae, |h| h.val_mae);
    println!(
        "trained {} epochs ({} steps); best val MAE {:.6} at epoch {} (initial {:.6}); checkpoint {}",
        out.history.len(),
        out.trainer.steps_taken(),
        best_mae,
        out.best_epoch,
        out.initial_val_mae,
        dir.join("model.ckpt").display()
    );
    Ok(())
}

/// Checkpoint, its normalizer, and the config's data prepared with it.
fn load_run(cfg: &RunConfig, checkpoint: &Path) -> Result<(ModelParams, PreparedData)> {
    let ck = Checkpoint::load(checkpoint)?;
    let params = ck.params()?;
    let normalizer = normalizer_from(&ck)?;
    let ds = load_dataset(cfg)?;
    let expected = cfg.model(ds.n_vars());
    let c = params.config;
    if (
        c.seq_len,
        c.n_vars,
        c.d_model,
        c.hidden,
        c.layers,
        c.attention,
    ) != (
        expected.seq_len,
        expected.n_vars,
        expected.d_model,
        expected.hidden,
        expected.layers,
        expected.attention,
    ) {
        return Err(Error::Config(format!(
            "checkpoint model {c:?} does not match config/data model {expected:?}"
        )));
    }
    let data = prepare_with(&ds, &cfg.window(), Some(&normalizer))?;
    Ok((params, data))
}

fn evaluate(cfg: &RunConfig, checkpoint: &Path) -> Result<()> {
    let (params, data) = load_run(cfg, checkpoint)?;
    let m = cfg.train.mask;
    let report = eval::rate_table(
        &params,
        &data.test,
        &cfg.patterns,
        &cfg.rates,
        m.block_len,
        cfg.train.eval_seed,
    )?;
    let dir = &cfg.output_dir;
    report.save(dir.join("report.csv"), dir.join("alignment.csv"))?;
    report.write_table(std::io::stdout().lock())?;
    if cfg.eval_denormalized {
        let mut rows = Vec::new();
        for &pattern in &cfg.patterns {
            for &rate in &cfg.rates {
                let spec = MaskSpec {
                    pattern,
                    rate,
                    block_len: m.block_len,
                    seed: cfg.train.eval_seed,
                };
                rows.push(ReportRow {
                    pattern,
                    rate: Some(rate),
                    metrics: eval::evaluate_denormalized(
                        &params,
                        &data.test,
                        &spec,
                        &data.normalizer,
                    )?,
                    alignment: f64::NAN,
                });
            }
        }
        let denorm = EvalReport::with_averages(rows);
        eval::write_file(dir.join("report_denormalized.csv"), |w| {
            denorm.write_table(w)
        })?;
    }
    Ok(())
}

fn ablate(cfg: &RunConfig, threads: usize) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let data = prepare_with(&ds, &cfg.window(), None)?;
    let grid = run_ablation(
        &data,
        cfg.model(ds.n_vars()),
        &cfg.train,
        &ALL_ABLATIONS,
        &cfg.rates,
        threads,
    )?;
    grid.save(cfg.output_dir.join("ablation.csv"))?;
    print!("{}", grid.summary());
    Ok(())
}

fn export(cfg: &RunConfig, checkpoint: &Path) -> Result<()> {
    let (params, data) = load_run(cfg, checkpoint)?;
    let spec = cfg.train.mask.with_seed(cfg.train.eval_seed);
    let masked = crate::data::mask_windows(&data.test, &spec)?;
    let (pca, points) = eval::export_latents(&params, &masked)?;
    let score = eval::alignment_score(&params, &masked)?;
    let dir = &cfg.output_dir;
    eval::write_latents_csv(dir.join("latents.csv"), &points)?;
    eval::write_file(dir.join("latent_alignment.csv"), |w| {
        writeln!(w, "pattern,rate,alignment,explained_pc1,explained_pc2")?;
        writeln!(
            w,
            "{},{},{},{},{}",
            spec.pattern, spec.rate, score, pca.explained_variance[0], pca.explained_variance[1]
        )?;
        Ok(())
    })?;
    println!(
        "alignment {score:.6} over {} embeddings; wrote {}",
        points.len() / 2,
        dir.join("latents.csv").display()
    );
    Ok(())
}

/// Window start rows covering `len` rows with windows of `t`, the last one
/// aligned to the end.
fn covering_starts(len: usize, t: usize) -> Vec<usize> {
    let mut starts: Vec<usize> = (0..=len - t).step_by(t).collect();
    if starts.last().is_some_and(|&s| s + t < len) {
        starts.push(len - t);
    }
    starts
}

fn impute(checkpoint: &Path, input: &Path, output: &Path) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let params = ck.params()?;
    let normalizer = normalizer_from(&ck)?;
    let ds = Dataset::load_csv(input)?;
    let (t_len, n) = (params.config.seq_len, params.config.n_vars);
    if ds.n_vars() != n {
        return Err(Error::Data(format!(
            "input has {} variables, checkpoint expects {n}",
            ds.n_vars()
        )));
    }
    if ds.len() < t_len {
        return Err(Error::Data(format!(
            "input has {} rows, fewer than the window length {t_len}",
            ds.len()
        )));
    }
    let norm = normalizer.normalize_dataset(&ds)?;
    let mut filled = ds.values.clone();
    let mut done = vec![false; ds.len()];
    for start in covering_starts(ds.len(), t_len) {
        let seg = norm.segment(start, start + t_len)?;
        let w = TimeSeriesWindow::unmasked(seg.values, seg.native_mask, start)?;
        let x = params.impute(&w, &normalizer)?;
        for r in 0..t_len {
            let row = start + r;
            if done[row] {
                continue;
            }
            done[row] = true;
            for v in 0..n {
                if ds.native_mask.at(&[row, v]) == 0.0 {
                    filled.set(&[row, v], x.at(&[r, v]));
                }
            }
        }
    }
    write_filled(input, output, &filled)?;
    let missing = ds.native_mask.data().iter().filter(|&&m| m == 0.0).count();
    println!("filled {missing} missing cells; wrote {}", output.display());
    Ok(())
}

/// Copies `input` to `output`, writing model values only into empty cells.
fn write_filled(input: &Path, output: &Path, filled: &Tensor) -> Result<()> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(input)?;
    let mut w = csv::Writer::from_path(output)?;
    w.write_record(rdr.headers()?)?;
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let cells: Vec<String> = record
            .iter()
            .enumerate()
            .map(|(v, cell)| {
                if cell.trim().is_empty() {
                    format!("{}", filled.at(&[row, v]))
                } else {
                    cell.to_string()
                }
            })
            .collect();
        w.write_record(&cells)?;
    }
    w.flush()?;
    Ok(())
}
