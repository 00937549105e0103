//! Imputation metrics, rate sweeps, the four-way ablation and latent
//! diagnostics.

mod ablation;
mod latents;

use std::fmt;
use std::io::Write;
use std::path::Path;

pub use ablation::{
    parallel_map, run_ablation, sweep, AblationConfig, AblationGrid, AblationRow, ALL_ABLATIONS,
};
pub use latents::{export_latents, fit_pca, write_latents_csv, LatentPoint, Pca};

use crate::data::{mask_windows, MaskPattern, MaskSpec, Normalizer, TimeSeriesWindow};
use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Windows per forward pass during evaluation.
const EVAL_CHUNK: usize = 64;

/// MAE and MSE over evaluation positions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mae: f64,
    pub mse: f64,
    pub n_points: usize,
}

/// Metrics of `preds` against `targets` at entries where `mask == 1`.
pub fn masked_metrics(targets: &[Tensor], preds: &[Tensor], masks: &[Tensor]) -> Result<Metrics> {
    if targets.len() != preds.len() || targets.len() != masks.len() {
        return Err(Error::Invalid(
            "targets, predictions and masks differ in count".into(),
        ));
    }
    let (mut abs, mut sq, mut n) = (0.0, 0.0, 0usize);
    for ((t, p), m) in targets.iter().zip(preds).zip(masks) {
        if t.shape() != p.shape() || t.shape() != m.shape() {
            return Err(Error::shape("metrics", t.shape(), p.shape()));
        }
        for ((&tv, &pv), &mv) in t.data().iter().zip(p.data()).zip(m.data()) {
            if mv == 1.0 {
                let d = tv - pv;
                abs += d.abs();
                sq += d * d;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::Invalid("no evaluation positions".into()));
    }
    Ok(Metrics {
        mae: abs / n as f64,
        mse: sq / n as f64,
        n_points: n,
    })
}

fn imputations(params: &ModelParams, windows: &[TimeSeriesWindow]) -> Result<Vec<Tensor>> {
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(EVAL_CHUNK) {
        let refs: Vec<&TimeSeriesWindow> = chunk.iter().collect();
        out.extend(params.impute_normalized(&refs)?);
    }
    Ok(out)
}

/// Normalized-space metrics on windows that already carry artificial masks.
pub fn evaluate_masked(params: &ModelParams, windows: &[TimeSeriesWindow]) -> Result<Metrics> {
    let preds = imputations(params, windows)?;
    let targets: Vec<Tensor> = windows.iter().map(|w| w.x.clone()).collect();
    let masks: Vec<Tensor> = windows.iter().map(TimeSeriesWindow::eval_mask).collect();
    masked_metrics(&targets, &preds, &masks)
}

/// Masks `windows` with `spec` (per-window seeds) and scores the imputations.
pub fn evaluate(
    params: &ModelParams,
    windows: &[TimeSeriesWindow],
    spec: &MaskSpec,
) -> Result<Metrics> {
    evaluate_masked(params, &mask_windows(windows, spec)?)
}

/// Like [`evaluate`] but in source units.
pub fn evaluate_denormalized(
    params: &ModelParams,
    windows: &[TimeSeriesWindow],
    spec: &MaskSpec,
    normalizer: &Normalizer,
) -> Result<Metrics> {
    let masked = mask_windows(windows, spec)?;
    let preds = imputations(params, &masked)?
        .iter()
        .map(|p| normalizer.denormalize(p))
        .collect::<Result<Vec<_>>>()?;
    let targets = masked
        .iter()
        .map(|w| normalizer.denormalize(&w.x))
        .collect::<Result<Vec<_>>>()?;
    let masks: Vec<Tensor> = masked.iter().map(TimeSeriesWindow::eval_mask).collect();
    masked_metrics(&targets, &preds, &masks)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    let denom = (na * nb).sqrt();
    if denom == 0.0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    (dot / denom).clamp(-1.0, 1.0)
}

/// Mean cosine over (window, variable) between the posterior means of the
/// masked and the complete inputs.
pub fn alignment_score(params: &ModelParams, windows: &[TimeSeriesWindow]) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::Invalid("alignment of zero windows".into()));
    }
    let d = params.config.d_model;
    let (mut total, mut count) = (0.0, 0usize);
    for chunk in windows.chunks(EVAL_CHUNK) {
        let masked: Vec<&Tensor> = chunk.iter().map(|w| &w.x_masked).collect();
        let full: Vec<&Tensor> = chunk.iter().map(|w| &w.x).collect();
        let a = params.encode_batch(&masked)?.mu;
        let b = params.encode_batch(&full)?.mu;
        for (ra, rb) in a.data().chunks(d).zip(b.data().chunks(d)) {
            total += cosine(ra, rb);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// One line of a rate table. `rate == None` marks the average row.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub pattern: MaskPattern,
    pub rate: Option<f64>,
    pub metrics: Metrics,
    pub alignment: f64,
}

/// Rate table for one model or one sweep.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    /// Appends an average row per pattern (unweighted means; `n_points`
    /// summed) after that pattern's rate rows.
    pub fn with_averages(rows: Vec<ReportRow>) -> Self {
        let mut out = Vec::with_capacity(rows.len() + 2);
        let mut i = 0;
        while i < rows.len() {
            let pattern = rows[i].pattern;
            let group: Vec<ReportRow> = rows[i..]
                .iter()
                .take_while(|r| r.pattern == pattern)
                .cloned()
                .collect();
            i += group.len();
            let k = group.len() as f64;
            let avg = ReportRow {
                pattern,
                rate: None,
                metrics: Metrics {
                    mae: group.iter().map(|r| r.metrics.mae).sum::<f64>() / k,
                    mse: group.iter().map(|r| r.metrics.mse).sum::<f64>() / k,
                    n_points: group.iter().map(|r| r.metrics.n_points).sum(),
                },
                alignment: group.iter().map(|r| r.alignment).sum::<f64>() / k,
            };
            out.extend(group);
            out.push(avg);
        }
        Self { rows: out }
    }

    pub fn write_table(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "pattern,rate,mae,mse,n_points")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.pattern,
                RateLabel(r.rate),
                r.metrics.mae,
                r.metrics.mse,
                r.metrics.n_points
            )?;
        }
        Ok(())
    }

    pub fn write_alignment(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "pattern,rate,alignment")?;
        for r in &self.rows {
            writeln!(w, "{},{},{}", r.pattern, RateLabel(r.rate), r.alignment)?;
        }
        Ok(())
    }

    pub fn save(&self, table: impl AsRef<Path>, alignment: impl AsRef<Path>) -> Result<()> {
        write_file(table, |w| self.write_table(w))?;
        write_file(alignment, |w| self.write_alignment(w))
    }
}

/// Renders a rate, or `avg` for average rows.
pub struct RateLabel(pub Option<f64>);

impl fmt::Display for RateLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(r) => write!(f, "{r}"),
            None => f.write_str("avg"),
        }
    }
}

pub(crate) fn write_file(
    path: impl AsRef<Path>,
    body: impl FnOnce(&mut dyn Write) -> Result<()>,
) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    body(&mut f)?;
    f.flush()?;
    Ok(())
}

/// Scores one model on every (pattern, rate) pair with masks from
/// `eval_seed`, then appends average rows.
pub fn rate_table(
    params: &ModelParams,
    windows: &[TimeSeriesWindow],
    patterns: &[MaskPattern],
    rates: &[f64],
    block_len: usize,
    eval_seed: u64,
) -> Result<EvalReport> {
    check_rates(rates)?;
    let mut rows = Vec::new();
    for &pattern in patterns {
        for &rate in rates {
            let spec = MaskSpec {
                pattern,
                rate,
                block_len,
                seed: eval_seed,
            };
            let masked = mask_windows(windows, &spec)?;
            rows.push(ReportRow {
                pattern,
                rate: Some(rate),
                metrics: evaluate_masked(params, &masked)?,
                alignment: alignment_score(params, &masked)?,
            });
        }
    }
    Ok(EvalReport::with_averages(rows))
}

pub(crate) fn check_rates(rates: &[f64]) -> Result<()> {
    if rates.is_empty() {
        return Err(Error::Config(
            "at least one missing rate is required".into(),
        ));
    }
    if let Some(r) = rates.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
        return Err(Error::Config(format!(
            "missing rates must be in (0, 1), got {r}"
        )));
    }
    Ok(())
}
