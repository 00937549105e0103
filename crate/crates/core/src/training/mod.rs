//! Dual-branch training loop with Adam, checkpointing and model selection.

mod adam;

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;

pub use adam::{adam_step, adam_update, clip_global_norm, AdamConfig, OptimizerState};

use crate::data::{
    chrono_split, make_windows, mask_windows, Dataset, MaskSpec, Normalizer, SplitFractions,
    TimeSeriesWindow,
};
use crate::diff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::eval;
use crate::losses::{self, GloVariant, LossBreakdown, LossWeights};
use crate::model::checkpoint::Checkpoint;
use crate::model::{
    decode_rows, encode_rows, project_rows, reparameterize_vars, to_rows, ModelConfig, ModelParams,
};
use crate::rng;

// Stream tags for seeds derived from the training seed.
const STREAM_INIT: u64 = 0x11;
const STREAM_NOISE: u64 = 0x22 << 32;
const STREAM_MASK: u64 = 0x33 << 32;
const STREAM_SHUFFLE: u64 = 0x44 << 32;

/// Which positions the reconstruction loss is computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocTarget {
    /// Every entry with known ground truth (visible and artificially hidden).
    Observed,
    /// Only artificially hidden entries.
    Hidden,
}

impl fmt::Display for LocTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LocTarget::Observed => "observed",
            LocTarget::Hidden => "hidden",
        })
    }
}

impl FromStr for LocTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "observed" => Ok(LocTarget::Observed),
            "hidden" => Ok(LocTarget::Hidden),
            other => Err(Error::Config(format!("unknown loc target {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Seed of the fixed validation masks.
    pub eval_seed: u64,
    pub weights: LossWeights,
    /// Pattern, rate and block length of the artificial training mask. The
    /// seed field is ignored; masks are re-drawn every epoch from `seed`.
    pub mask: MaskSpec,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub early_stop_patience: usize,
    /// Global gradient norm cap; 0 disables clipping.
    pub grad_clip: f64,
    pub loc_target: LocTarget,
    /// Progress lines on standard error.
    pub verbose: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            adam: AdamConfig::default(),
            seed: 0,
            eval_seed: 1,
            weights: LossWeights::default(),
            mask: MaskSpec::default(),
            early_stop_patience: 0,
            grad_clip: 5.0,
            loc_target: LocTarget::Observed,
            verbose: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("train.epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        if self.weights.glo_variant == GloVariant::InfoNce && self.batch_size < 2 {
            return Err(Error::Config(
                "train.batch_size must be at least 2 for the contrastive loss".into(),
            ));
        }
        if !(self.adam.learning_rate > 0.0) {
            return Err(Error::Config("train.learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return Err(Error::Config("adam betas must be in [0, 1)".into()));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::Config("train.grad_clip must be >= 0".into()));
        }
        self.weights.validate()
    }
}

/// Window length and strides.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowConfig {
    pub length: usize,
    pub train_stride: usize,
    pub eval_stride: usize,
}

impl WindowConfig {
    /// Stride `length / 2` for training and `length` for evaluation.
    pub fn new(length: usize) -> Self {
        Self {
            length,
            train_stride: (length / 2).max(1),
            eval_stride: length,
        }
    }
}

/// Normalized windows of the three chronological splits.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub normalizer: Normalizer,
    pub train: Vec<TimeSeriesWindow>,
    pub val: Vec<TimeSeriesWindow>,
    pub test: Vec<TimeSeriesWindow>,
}

impl PreparedData {
    pub fn n_vars(&self) -> usize {
        self.normalizer.n_vars()
    }
}

/// Splits 60/20/20, fits the normalizer on the training rows and cuts windows.
pub fn prepare(ds: &Dataset, window: &WindowConfig) -> Result<PreparedData> {
    prepare_with(ds, window, None)
}

/// Like [`prepare`], reusing `normalizer` when given.
pub fn prepare_with(
    ds: &Dataset,
    window: &WindowConfig,
    normalizer: Option<&Normalizer>,
) -> Result<PreparedData> {
    let splits = chrono_split(ds, SplitFractions::default(), window.length)?;
    let normalizer = match normalizer {
        Some(n) if n.n_vars() == ds.n_vars() => n.clone(),
        Some(n) => {
            return Err(Error::Data(format!(
                "normalizer has {} variables, data has {}",
                n.n_vars(),
                ds.n_vars()
            )))
        }
        None => Normalizer::fit_dataset(&splits.train)?,
    };
    let cut = |d: &Dataset, stride| -> Result<Vec<TimeSeriesWindow>> {
        make_windows(&normalizer.normalize_dataset(d)?, window.length, stride)
    };
    Ok(PreparedData {
        train: cut(&splits.train, window.train_stride)?,
        val: cut(&splits.val, window.eval_stride)?,
        test: cut(&splits.test, window.eval_stride)?,
        normalizer,
    })
}

/// Result of one optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Applied(LossBreakdown),
    /// Non-finite loss or activations; parameters untouched.
    Aborted(String),
}

/// Parameters plus optimizer state; everything needed to resume training.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub params: ModelParams,
    pub state: OptimizerState,
    pub config: TrainConfig,
    consecutive_aborts: usize,
}

/// Losses of one batch under the current parameters, with the tape that
/// produced them.
struct BatchLoss {
    tape: Tape,
    bound: ModelParams<crate::diff::Var>,
    total: crate::diff::Var,
    breakdown: LossBreakdown,
}

impl Trainer {
    pub fn new(params: ModelParams, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            state: OptimizerState::new(&params),
            params,
            config,
            consecutive_aborts: 0,
        })
    }

    /// Fresh seeded initialization.
    pub fn init(model: ModelConfig, config: TrainConfig) -> Result<Self> {
        Self::new(
            ModelParams::init(model, rng::derive(config.seed, STREAM_INIT))?,
            config,
        )
    }

    pub fn steps_taken(&self) -> u64 {
        self.state.step
    }

    fn batch_loss(&self, batch: &[&TimeSeriesWindow], noise_seed: u64) -> Result<BatchLoss> {
        let cfg = &self.config;
        let x_in = to_rows(&batch.iter().map(|w| &w.x_masked).collect::<Vec<_>>())?;
        let x_full = to_rows(&batch.iter().map(|w| &w.x).collect::<Vec<_>>())?;
        let targets: Vec<Tensor> = batch
            .iter()
            .map(|w| match cfg.loc_target {
                LocTarget::Observed => w.m_obs.clone(),
                LocTarget::Hidden => w.eval_mask(),
            })
            .collect();
        let target_mask = to_rows(&targets.iter().collect::<Vec<_>>())?;

        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let model = &self.params.config;
        let xv = tape.constant(x_in);
        let (mu, sigma) = encode_rows(&mut tape, &bound.encoder, model, xv)?;
        let z = reparameterize_vars(&mut tape, mu, sigma, noise_seed)?;
        let x_hat = decode_rows(&mut tape, &bound.decoder, z)?;
        let x_true = tape.constant(x_full.clone());
        let mask = tape.constant(target_mask);
        let loc = losses::loc_loss(&mut tape, x_true, x_hat, mask)?;
        let reg = losses::reg_loss(&mut tape, mu, sigma)?;

        let glo = if cfg.weights.glo_variant == GloVariant::None {
            None
        } else {
            // Target branch: same encoder on the complete window, mean only,
            // detached inside the loss.
            let full = tape.constant(x_full);
            let (mu_full, _) = encode_rows(&mut tape, &bound.encoder, model, full)?;
            let anchors = project_rows(&mut tape, &bound.projector, z)?;
            losses::glo_loss(&mut tape, &cfg.weights, anchors, mu_full)?
        };
        let total = losses::weighted_total(&mut tape, &cfg.weights, reg, loc, glo)?;

        let value = |tape: &Tape, v| -> Result<f64> { tape.value(v)?.item() };
        let breakdown = LossBreakdown {
            reg: value(&tape, reg)?,
            loc: value(&tape, loc)?,
            glo: match glo {
                Some(g) => value(&tape, g)?,
                None => 0.0,
            },
            total: value(&tape, total)?,
        };
        Ok(BatchLoss {
            tape,
            bound,
            total,
            breakdown,
        })
    }

    /// Loss of `batch` under the current parameters with the sampling noise
    /// drawn from `noise_seed`.
    pub fn evaluate_batch(
        &self,
        batch: &[&TimeSeriesWindow],
        noise_seed: u64,
    ) -> Result<LossBreakdown> {
        Ok(self.batch_loss(batch, noise_seed)?.breakdown)
    }

    /// Seed of the sampling noise used by the next step.
    pub fn noise_seed(&self) -> u64 {
        rng::derive(self.config.seed, STREAM_NOISE | self.state.step)
    }

    /// Gradients of the total objective, in parameter order.
    pub fn gradients(&self, batch: &[&TimeSeriesWindow]) -> Result<(LossBreakdown, Vec<Tensor>)> {
        let loss = self.batch_loss(batch, self.noise_seed())?;
        let grads = loss.tape.backward(loss.total)?;
        let mut out = Vec::new();
        let mut err = None;
        loss.bound.map(|_, v| match grads.wrt(*v) {
            Ok(g) => out.push(g),
            Err(e) => {
                err.get_or_insert(e);
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok((loss.breakdown, out)),
        }
    }

    /// One dual-branch step: masked branch through encoder, sampler and
    /// decoder; complete branch through the encoder as alignment target;
    /// Adam update of all parameters.
    pub fn train_step(&mut self, batch: &[&TimeSeriesWindow]) -> Result<StepOutcome> {
        if batch.is_empty() {
            return Err(Error::Invalid("empty batch".into()));
        }
        let attempt = self.gradients(batch).and_then(|(b, grads)| {
            if !b.total.is_finite() {
                return Err(Error::NonFinite {
                    stage: "total loss".into(),
                });
            }
            if grads.iter().any(|g| !g.all_finite()) {
                return Err(Error::NonFinite {
                    stage: "gradients".into(),
                });
            }
            Ok((b, grads))
        });
        match attempt {
            Ok((breakdown, mut grads)) => {
                self.consecutive_aborts = 0;
                clip_global_norm(&mut grads, self.config.grad_clip);
                adam_step(&mut self.params, &grads, &mut self.state, &self.config.adam)?;
                Ok(StepOutcome::Applied(breakdown))
            }
            Err(e @ (Error::NonFinite { .. } | Error::Domain { .. })) => {
                self.consecutive_aborts += 1;
                if self.consecutive_aborts >= 3 {
                    return Err(Error::Training(format!(
                        "three consecutive aborted steps, last: {e}"
                    )));
                }
                // Skip this noise draw on retry.
                self.state.step += 1;
                Ok(StepOutcome::Aborted(e.to_string()))
            }
            Err(e) => Err(e),
        }
    }

    /// Checkpoint with parameters, optimizer moments and normalizer.
    pub fn checkpoint(&self, normalizer: Option<&Normalizer>) -> Checkpoint {
        let mut ck = Checkpoint::from_params(&self.params, self.state.step);
        for (i, name) in self.params.names().iter().enumerate() {
            ck.push(format!("adam.m.{name}"), self.state.first[i].clone());
            ck.push(format!("adam.v.{name}"), self.state.second[i].clone());
        }
        if let Some(n) = normalizer {
            push_normalizer(&mut ck, n);
        }
        ck
    }

    /// Restores a trainer; missing optimizer arrays start from zero.
    pub fn from_checkpoint(ck: &Checkpoint, config: TrainConfig) -> Result<Self> {
        let params = ck.params()?;
        let mut state = OptimizerState::new(&params);
        state.step = ck.step;
        for (i, name) in params.names().iter().enumerate() {
            if let (Some(m), Some(v)) = (
                ck.get(&format!("adam.m.{name}")),
                ck.get(&format!("adam.v.{name}")),
            ) {
                if m.shape() != state.first[i].shape() || v.shape() != state.second[i].shape() {
                    return Err(Error::Checkpoint(format!(
                        "optimizer moments for {name} have wrong shape"
                    )));
                }
                state.first[i] = m.clone();
                state.second[i] = v.clone();
            }
        }
        config.validate()?;
        Ok(Self {
            params,
            state,
            config,
            consecutive_aborts: 0,
        })
    }
}

pub fn push_normalizer(ck: &mut Checkpoint, n: &Normalizer) {
    ck.push("norm.mean", Tensor::vector(n.mean.clone()));
    ck.push("norm.std", Tensor::vector(n.std.clone()));
}

pub fn normalizer_from(ck: &Checkpoint) -> Result<Normalizer> {
    match (ck.get("norm.mean"), ck.get("norm.std")) {
        (Some(m), Some(s)) if m.len() == ck.config.n_vars && s.len() == ck.config.n_vars => {
            Ok(Normalizer {
                mean: m.data().to_vec(),
                std: s.data().to_vec(),
            })
        }
        _ => Err(Error::Checkpoint(
            "checkpoint has no normalizer for its variables".into(),
        )),
    }
}

/// One optimizer step in the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: u64,
    pub loss: LossBreakdown,
}

/// Per-epoch summary.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean losses over the applied steps of the epoch.
    pub train: LossBreakdown,
    pub val_mae: f64,
    pub steps: usize,
    pub aborted: usize,
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    /// Parameters with the lowest validation MAE.
    pub best: ModelParams,
    pub best_epoch: usize,
    /// Trainer after the last epoch.
    pub trainer: Trainer,
    /// Validation MAE before any training.
    pub initial_val_mae: f64,
    pub history: Vec<EpochRecord>,
    pub log: Vec<StepRecord>,
}

/// Fixed validation masks drawn from the evaluation seed.
pub fn validation_windows(data: &PreparedData, cfg: &TrainConfig) -> Result<Vec<TimeSeriesWindow>> {
    mask_windows(&data.val, &cfg.mask.with_seed(cfg.eval_seed))
}

/// Training masks of `epoch`.
pub fn epoch_masks(
    data: &PreparedData,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<Vec<TimeSeriesWindow>> {
    let seed = rng::derive(cfg.seed, STREAM_MASK | epoch as u64);
    mask_windows(&data.train, &cfg.mask.with_seed(seed))
}

/// Seeded permutation of window indices for `epoch`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut r = rng::seeded(rng::derive(seed, STREAM_SHUFFLE | epoch as u64));
    order.shuffle(&mut r);
    order
}

/// Full training run from a fresh initialization.
pub fn fit(data: &PreparedData, model: ModelConfig, cfg: &TrainConfig) -> Result<FitOutput> {
    fit_from(data, Trainer::init(model, *cfg)?)
}

/// Runs `trainer.config.epochs` epochs with per-epoch masks and shuffling,
/// keeping the parameters that score best on validation MAE.
pub fn fit_from(data: &PreparedData, mut trainer: Trainer) -> Result<FitOutput> {
    let cfg = trainer.config;
    cfg.validate()?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::Data(
            "training and validation windows must be non-empty".into(),
        ));
    }
    let model = trainer.params.config;
    if data.n_vars() != model.n_vars || data.train[0].seq_len() != model.seq_len {
        return Err(Error::Config(format!(
            "data windows are [{}, {}] but the model expects [{}, {}]",
            data.train[0].seq_len(),
            data.n_vars(),
            model.seq_len,
            model.n_vars
        )));
    }
    let val = validation_windows(data, &cfg)?;
    let initial_val_mae = eval::evaluate_masked(&trainer.params, &val)?.mae;
    let mut best = (trainer.params.clone(), initial_val_mae, 0usize);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut log = Vec::new();
    let mut since_best = 0;
    let start = Instant::now();
    let min_rows = if cfg.weights.glo_variant == GloVariant::InfoNce {
        2
    } else {
        1
    };

    for epoch in 0..cfg.epochs {
        let masked = epoch_masks(data, &cfg, epoch)?;
        let order = epoch_order(masked.len(), cfg.seed, epoch);
        let mut sum = LossBreakdown::default();
        let (mut applied, mut aborted) = (0usize, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() * model.n_vars < min_rows {
                continue;
            }
            let batch: Vec<&TimeSeriesWindow> = chunk.iter().map(|&i| &masked[i]).collect();
            match trainer.train_step(&batch)? {
                StepOutcome::Applied(b) => {
                    sum.reg += b.reg;
                    sum.loc += b.loc;
                    sum.glo += b.glo;
                    sum.total += b.total;
                    applied += 1;
                    log.push(StepRecord {
                        epoch,
                        step: trainer.steps_taken(),
                        loss: b,
                    });
                }
                StepOutcome::Aborted(reason) => {
                    aborted += 1;
                    if cfg.verbose {
                        eprintln!("epoch {epoch}: aborted step ({reason})");
                    }
                }
            }
        }
        let k = applied.max(1) as f64;
        let train = LossBreakdown {
            reg: sum.reg / k,
            loc: sum.loc / k,
            glo: sum.glo / k,
            total: sum.total / k,
        };
        let val_mae = eval::evaluate_masked(&trainer.params, &val)?.mae;
        if cfg.verbose {
            eprintln!(
                "epoch {:>3}  train_total {:.6}  val_mae {:.6}  elapsed {:.1}s",
                epoch + 1,
                train.total,
                val_mae,
                start.elapsed().as_secs_f64()
            );
        }
        history.push(EpochRecord {
            epoch,
            train,
            val_mae,
            steps: applied,
            aborted,
        });
        if val_mae < best.1 {
            best = (trainer.params.clone(), val_mae, epoch + 1);
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.early_stop_patience > 0 && since_best >= cfg.early_stop_patience {
                break;
            }
        }
    }

    Ok(FitOutput {
        best: best.0,
        best_epoch: best.2,
        trainer,
        initial_val_mae,
        history,
        log,
    })
}

/// Writes `epoch,step,reg,loc,glo,total` rows.
pub fn write_training_log(path: impl AsRef<Path>, log: &[StepRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "epoch,step,reg,loc,glo,total")?;
    for r in log {
        writeln!(
            f,
            "{},{},{},{},{},{}",
            r.epoch, r.step, r.loss.reg, r.loss.loc, r.loss.glo, r.loss.total
        )?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic, SyntheticSpec};

    fn tiny_data(window: usize) -> PreparedData {
        let ds = make_synthetic(SyntheticSpec {
            n_vars: 2,
            steps: 200,
            seed: 3,
            noise_std: 0.1,
        })
        .unwrap();
        prepare(&ds, &WindowConfig::new(window)).unwrap()
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 4,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_rejected() {
        let cfg = TrainConfig {
            epochs: 0,
            ..tiny_cfg()
        };
        assert!(cfg.validate().is_err());
        let glo1 = TrainConfig {
            batch_size: 1,
            weights: LossWeights {
                glo_variant: GloVariant::InfoNce,
                ..LossWeights::default()
            },
            ..tiny_cfg()
        };
        assert!(glo1.validate().is_err());
    }

    #[test]
    fn history_has_one_entry_per_epoch() {
        let data = tiny_data(16);
        let out = fit(&data, ModelConfig::new(16, 2, 4), &tiny_cfg()).unwrap();
        assert_eq!(out.history.len(), 2);
        assert!(out.log.len() >= 2);
        assert!(out.history.iter().all(|h| h.val_mae.is_finite()));
    }

    #[test]
    fn zero_params_on_zero_data_stay_put() {
        let cfg = TrainConfig {
            weights: LossWeights {
                glo_variant: GloVariant::None,
                ..LossWeights::default()
            },
            ..tiny_cfg()
        };
        let model = ModelConfig::new(8, 2, 4);
        let mut trainer = Trainer::new(ModelParams::zeros(model).unwrap(), cfg).unwrap();
        let w =
            TimeSeriesWindow::unmasked(Tensor::zeros(&[8, 2]), Tensor::ones(&[8, 2]), 0).unwrap();
        let before = trainer.params.clone();
        trainer.train_step(&[&w, &w]).unwrap();
        assert_eq!(trainer.params, before);
    }

    #[test]
    fn prepare_splits_and_windows() {
        let data = tiny_data(16);
        // 200 rows: 120 / 40 / 40
        assert_eq!(data.train.len(), (120 - 16) / 8 + 1);
        assert_eq!(data.val.len(), 40 / 16);
        assert_eq!(data.test.len(), 40 / 16);
        assert!(data.train.last().unwrap().start + 16 <= data.val[0].start);
        assert!(data.val.last().unwrap().start + 16 <= data.test[0].start);
    }
}
