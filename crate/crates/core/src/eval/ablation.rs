use std::fmt;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{
    alignment_score, check_rates, evaluate_masked, write_file, EvalReport, Metrics, ReportRow,
};
use crate::data::{mask_windows, MaskPattern, MaskSpec};
use crate::error::{Error, Result};
use crate::losses::{GloVariant, LossWeights};
use crate::model::{ModelConfig, ModelParams};
use crate::training::{fit, PreparedData, TrainConfig};

/// Applies `f` to every item on up to `threads` workers. Results are returned
/// in item order, so output does not depend on the worker count.
pub fn parallel_map<T, R, F>(items: &[T], threads: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync,
{
    let workers = threads.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<R>>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("result slots poisoned")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots poisoned")
        .into_iter()
        .map(|r| r.expect("every job produces a result"))
        .collect()
}

/// Trains on `train_mask` and scores the selected parameters on the test
/// windows masked with `eval_mask`.
fn train_and_score(
    data: &PreparedData,
    model: ModelConfig,
    train: &TrainConfig,
    eval_mask: &MaskSpec,
) -> Result<(ModelParams, Metrics, f64)> {
    let out = fit(data, model, train)?;
    let masked = mask_windows(&data.test, eval_mask)?;
    let metrics = evaluate_masked(&out.best, &masked)?;
    let alignment = alignment_score(&out.best, &masked)?;
    Ok((out.best, metrics, alignment))
}

/// Trains one model per (pattern, rate) with that training mask and scores it
/// on test windows masked at the same setting.
pub fn sweep(
    data: &PreparedData,
    model: ModelConfig,
    train: &TrainConfig,
    rates: &[f64],
    patterns: &[MaskPattern],
    threads: usize,
) -> Result<EvalReport> {
    check_rates(rates)?;
    let jobs: Vec<(MaskPattern, f64)> = patterns
        .iter()
        .flat_map(|&p| rates.iter().map(move |&r| (p, r)))
        .collect();
    let rows = parallel_map(&jobs, threads, |&(pattern, rate)| {
        let mask = MaskSpec {
            pattern,
            rate,
            ..train.mask
        };
        let cfg = TrainConfig { mask, ..*train };
        let (_, metrics, alignment) =
            train_and_score(data, model, &cfg, &mask.with_seed(train.eval_seed))?;
        Ok(ReportRow {
            pattern,
            rate: Some(rate),
            metrics,
            alignment,
        })
    })?;
    Ok(EvalReport::with_averages(rows))
}

/// The four loss configurations compared in the ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationConfig {
    Entire,
    WithoutReg,
    WithoutGlo,
    OnlyLoc,
}

pub const ALL_ABLATIONS: [AblationConfig; 4] = [
    AblationConfig::Entire,
    AblationConfig::WithoutReg,
    AblationConfig::WithoutGlo,
    AblationConfig::OnlyLoc,
];

impl AblationConfig {
    /// `base` with the regularizer and/or alignment term switched off.
    pub fn weights(self, base: &LossWeights) -> LossWeights {
        let no_glo = LossWeights {
            beta2: 0.0,
            glo_variant: GloVariant::None,
            ..*base
        };
        match self {
            AblationConfig::Entire => *base,
            AblationConfig::WithoutReg => LossWeights {
                alpha: 0.0,
                ..*base
            },
            AblationConfig::WithoutGlo => no_glo,
            AblationConfig::OnlyLoc => LossWeights {
                alpha: 0.0,
                ..no_glo
            },
        }
    }
}

impl fmt::Display for AblationConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AblationConfig::Entire => "entire",
            AblationConfig::WithoutReg => "wo_reg",
            AblationConfig::WithoutGlo => "wo_glo",
            AblationConfig::OnlyLoc => "only_loc",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub config: AblationConfig,
    pub pattern: MaskPattern,
    pub rate: f64,
    pub weights: LossWeights,
    pub seed: u64,
    pub metrics: Metrics,
    pub alignment: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationGrid {
    pub rows: Vec<AblationRow>,
}

impl AblationGrid {
    pub fn get(&self, config: AblationConfig, rate: f64) -> Option<&AblationRow> {
        self.rows
            .iter()
            .find(|r| r.config == config && r.rate == rate)
    }

    /// Configurations ranked by test MAE at each rate.
    pub fn summary(&self) -> String {
        let mut rates: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !rates.contains(&r.rate) {
                rates.push(r.rate);
            }
        }
        let mut out = String::new();
        for rate in rates {
            let mut at: Vec<&AblationRow> = self.rows.iter().filter(|r| r.rate == rate).collect();
            at.sort_by(|a, b| a.metrics.mae.total_cmp(&b.metrics.mae));
            let ranking: Vec<String> = at
                .iter()
                .map(|r| format!("{} ({:.4})", r.config, r.metrics.mae))
                .collect();
            out.push_str(&format!("rate {rate}: {}\n", ranking.join(" < ")));
        }
        out
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(
            w,
            "config,pattern,rate,alpha,beta1,beta2,glo_variant,seed,mae,mse,n_points,alignment"
        )?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.config,
                r.pattern,
                r.rate,
                r.weights.alpha,
                r.weights.beta1,
                r.weights.beta2,
                r.weights.glo_variant,
                r.seed,
                r.metrics.mae,
                r.metrics.mse,
                r.metrics.n_points,
                r.alignment
            )?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path, |w| self.write_csv(w))
    }
}

/// Trains every configuration in `configs` at every rate with shared data,
/// seeds and model config; all are scored on identical test masks.
pub fn run_ablation(
    data: &PreparedData,
    model: ModelConfig,
    train: &TrainConfig,
    configs: &[AblationConfig],
    rates: &[f64],
    threads: usize,
) -> Result<AblationGrid> {
    check_rates(rates)?;
    if train.weights.beta1 == 0.0 {
        return Err(Error::Config(
            "ablation requires beta1 > 0 (no reconstruction signal)".into(),
        ));
    }
    let jobs: Vec<(AblationConfig, f64)> = configs
        .iter()
        .flat_map(|&c| rates.iter().map(move |&r| (c, r)))
        .collect();
    let rows = parallel_map(&jobs, threads, |&(config, rate)| {
        let mask = MaskSpec { rate, ..train.mask };
        let cfg = TrainConfig {
            mask,
            weights: config.weights(&train.weights),
            ..*train
        };
        let (_, metrics, alignment) =
            train_and_score(data, model, &cfg, &mask.with_seed(train.eval_seed))?;
        Ok(AblationRow {
            config,
            pattern: mask.pattern,
            rate,
            weights: cfg.weights,
            seed: train.seed,
            metrics,
            alignment,
        })
    })?;
    Ok(AblationGrid { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic, SyntheticSpec};
    use crate::training::{prepare, WindowConfig};

    #[test]
    fn parallel_map_keeps_order() {
        let items: Vec<u64> = (0..17).collect();
        let serial = parallel_map(&items, 1, |x| Ok(x * x)).unwrap();
        let threaded = parallel_map(&items, 4, |x| Ok(x * x)).unwrap();
        assert_eq!(serial, threaded);
        let failing = parallel_map(&items, 3, |&x| {
            if x == 5 {
                Err(Error::Invalid("boom".into()))
            } else {
                Ok(x)
            }
        });
        assert!(failing.is_err());
    }

    #[test]
    fn ablation_weights() {
        let base = LossWeights::default();
        assert_eq!(AblationConfig::Entire.weights(&base), base);
        assert_eq!(AblationConfig::WithoutReg.weights(&base).alpha, 0.0);
        assert_eq!(AblationConfig::WithoutReg.weights(&base).beta2, base.beta2);
        let only = AblationConfig::OnlyLoc.weights(&base);
        assert_eq!(
            (only.alpha, only.beta2, only.glo_variant),
            (0.0, 0.0, GloVariant::None)
        );
        assert_eq!(only.beta1, base.beta1);
    }

    fn tiny() -> (PreparedData, ModelConfig, TrainConfig) {
        let ds = make_synthetic(SyntheticSpec {
            n_vars: 2,
            steps: 160,
            seed: 2,
            noise_std: 0.1,
        })
        .unwrap();
        let data = prepare(&ds, &WindowConfig::new(16)).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 8,
            ..TrainConfig::default()
        };
        (data, ModelConfig::new(16, 2, 4), cfg)
    }

    #[test]
    fn ablation_grid_shape_and_validation() {
        let (data, model, cfg) = tiny();
        let grid = run_ablation(&data, model, &cfg, &ALL_ABLATIONS, &[0.3, 0.6], 2).unwrap();
        assert_eq!(grid.rows.len(), 8);
        let mut buf = Vec::new();
        grid.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 9);
        assert_eq!(grid.summary().lines().count(), 2);

        let no_loc = TrainConfig {
            weights: LossWeights {
                beta1: 0.0,
                ..cfg.weights
            },
            ..cfg
        };
        assert!(run_ablation(&data, model, &no_loc, &ALL_ABLATIONS, &[0.5], 1).is_err());
    }

    #[test]
    fn single_rate_sweep_has_equal_average() {
        let (data, model, cfg) = tiny();
        let rep = sweep(&data, model, &cfg, &[0.1], &[MaskPattern::Point], 1).unwrap();
        assert_eq!(rep.rows.len(), 2);
        assert_eq!(rep.rows[0].metrics.mae, rep.rows[1].metrics.mae);
        assert_eq!(rep.rows[0].metrics.mse, rep.rows[1].metrics.mse);
    }

    #[test]
    fn block_sweep_runs() {
        let (data, model, cfg) = tiny();
        let cfg = TrainConfig {
            mask: MaskSpec {
                block_len: 4,
                ..cfg.mask
            },
            ..cfg
        };
        let rep = sweep(&data, model, &cfg, &[0.5], &[MaskPattern::Block], 1).unwrap();
        assert!(rep.rows[0].metrics.mae.is_finite());
    }
}
