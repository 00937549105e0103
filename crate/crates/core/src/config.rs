//! Run configuration: a flat text file of `dotted.key = value` lines.
//!
//! Blank lines and text after `#` are ignored. Every key has a default, so a
//! file only needs the keys it changes. See `configs/example.conf` for the
//! complete annotated list.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{MaskPattern, SyntheticSpec};
use crate::error::{Error, Result};
use crate::losses::GloVariant;
use crate::model::ModelConfig;
use crate::training::{LocTarget, TrainConfig, WindowConfig};

/// Where the series comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic,
    Csv(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub source: DataSource,
    pub synthetic: SyntheticSpec,
    pub window_length: usize,
    /// `None` means half the window length.
    pub train_stride: Option<usize>,
    /// `None` means the window length.
    pub eval_stride: Option<usize>,
    pub d_model: usize,
    /// `None` means `d_model`.
    pub hidden: Option<usize>,
    pub layers: usize,
    pub attention: bool,
    pub train: TrainConfig,
    pub rates: Vec<f64>,
    pub patterns: Vec<MaskPattern>,
    pub eval_denormalized: bool,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            synthetic: SyntheticSpec {
                n_vars: 7,
                steps: 2000,
                seed: 0,
                noise_std: 0.1,
            },
            window_length: 96,
            train_stride: None,
            eval_stride: None,
            d_model: 256,
            hidden: None,
            layers: 2,
            attention: false,
            train: TrainConfig::default(),
            rates: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            patterns: vec![MaskPattern::Point],
            eval_denormalized: false,
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_auto(key: &str, value: &str) -> Result<Option<usize>> {
    match value.trim() {
        "auto" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: Display>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn auto(v: Option<usize>) -> String {
    v.map_or_else(|| "auto".to_string(), |v| v.to_string())
}

impl RunConfig {
    /// Parses a config file's text on top of the defaults.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected key = value, got {line:?}"),
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Parse {
                    line: i + 1,
                    msg: e.to_string(),
                })?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "data.source" => {
                self.source = match value {
                    "synthetic" => DataSource::Synthetic,
                    "" => return Err(Error::Config("data.source is empty".into())),
                    path => DataSource::Csv(PathBuf::from(path)),
                }
            }
            "data.synthetic.vars" => self.synthetic.n_vars = parse(key, value)?,
            "data.synthetic.steps" => self.synthetic.steps = parse(key, value)?,
            "data.synthetic.seed" => self.synthetic.seed = parse(key, value)?,
            "data.synthetic.noise_std" => self.synthetic.noise_std = parse(key, value)?,
            "window.length" => self.window_length = parse(key, value)?,
            "window.train_stride" => self.train_stride = parse_auto(key, value)?,
            "window.eval_stride" => self.eval_stride = parse_auto(key, value)?,
            "model.d_model" => self.d_model = parse(key, value)?,
            "model.hidden" => self.hidden = parse_auto(key, value)?,
            "model.layers" => self.layers = parse(key, value)?,
            "model.attention" => self.attention = parse(key, value)?,
            "train.epochs" => t.epochs = parse(key, value)?,
            "train.batch_size" => t.batch_size = parse(key, value)?,
            "train.learning_rate" => t.adam.learning_rate = parse(key, value)?,
            "train.adam_beta1" => t.adam.beta1 = parse(key, value)?,
            "train.adam_beta2" => t.adam.beta2 = parse(key, value)?,
            "train.adam_eps" => t.adam.eps = parse(key, value)?,
            "train.seed" => t.seed = parse(key, value)?,
            "train.early_stop_patience" => t.early_stop_patience = parse(key, value)?,
            "train.grad_clip" => t.grad_clip = parse(key, value)?,
            "train.loc_target" => t.loc_target = parse::<LocTarget>(key, value)?,
            "train.verbose" => t.verbose = parse(key, value)?,
            "train.weights.alpha" => t.weights.alpha = parse(key, value)?,
            "train.weights.beta1" => t.weights.beta1 = parse(key, value)?,
            "train.weights.beta2" => t.weights.beta2 = parse(key, value)?,
            "train.weights.glo_variant" => t.weights.glo_variant = parse::<GloVariant>(key, value)?,
            "train.weights.temperature" => t.weights.temperature = parse(key, value)?,
            "mask.pattern" => t.mask.pattern = parse::<MaskPattern>(key, value)?,
            "mask.rate" => t.mask.rate = parse(key, value)?,
            "mask.block_len" => t.mask.block_len = parse(key, value)?,
            "eval.rates" => self.rates = parse_list(key, value)?,
            "eval.patterns" => self.patterns = parse_list(key, value)?,
            "eval.seed" => t.eval_seed = parse(key, value)?,
            "eval.denormalized" => self.eval_denormalized = parse(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Every key with its resolved value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let t = &self.train;
        let w = &t.weights;
        vec![
            (
                "data.source",
                match &self.source {
                    DataSource::Synthetic => "synthetic".to_string(),
                    DataSource::Csv(p) => p.display().to_string(),
                },
            ),
            ("data.synthetic.vars", self.synthetic.n_vars.to_string()),
            ("data.synthetic.steps", self.synthetic.steps.to_string()),
            ("data.synthetic.seed", self.synthetic.seed.to_string()),
            (
                "data.synthetic.noise_std",
                self.synthetic.noise_std.to_string(),
            ),
            ("window.length", self.window_length.to_string()),
            ("window.train_stride", auto(self.train_stride)),
            ("window.eval_stride", auto(self.eval_stride)),
            ("model.d_model", self.d_model.to_string()),
            ("model.hidden", auto(self.hidden)),
            ("model.layers", self.layers.to_string()),
            ("model.attention", self.attention.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.learning_rate", t.adam.learning_rate.to_string()),
            ("train.adam_beta1", t.adam.beta1.to_string()),
            ("train.adam_beta2", t.adam.beta2.to_string()),
            ("train.adam_eps", t.adam.eps.to_string()),
            ("train.seed", t.seed.to_string()),
            (
                "train.early_stop_patience",
                t.early_stop_patience.to_string(),
            ),
            ("train.grad_clip", t.grad_clip.to_string()),
            ("train.loc_target", t.loc_target.to_string()),
            ("train.verbose", t.verbose.to_string()),
            ("train.weights.alpha", w.alpha.to_string()),
            ("train.weights.beta1", w.beta1.to_string()),
            ("train.weights.beta2", w.beta2.to_string()),
            ("train.weights.glo_variant", w.glo_variant.to_string()),
            ("train.weights.temperature", w.temperature.to_string()),
            ("mask.pattern", t.mask.pattern.to_string()),
            ("mask.rate", t.mask.rate.to_string()),
            ("mask.block_len", t.mask.block_len.to_string()),
            ("eval.rates", join(&self.rates)),
            ("eval.patterns", join(&self.patterns)),
            ("eval.seed", t.eval_seed.to_string()),
            ("eval.denormalized", self.eval_denormalized.to_string()),
            ("output_dir", self.output_dir.display().to_string()),
        ]
    }

    /// The resolved config in the file format; parses back to `self`.
    pub fn render(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn window(&self) -> WindowConfig {
        let mut w = WindowConfig::new(self.window_length);
        if let Some(s) = self.train_stride {
            w.train_stride = s;
        }
        if let Some(s) = self.eval_stride {
            w.eval_stride = s;
        }
        w
    }

    pub fn model(&self, n_vars: usize) -> ModelConfig {
        ModelConfig {
            seq_len: self.window_length,
            n_vars,
            d_model: self.d_model,
            hidden: self.hidden.unwrap_or(self.d_model),
            layers: self.layers,
            attention: self.attention,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_length == 0 {
            return Err(Error::Config("window.length must be at least 1".into()));
        }
        if self.train_stride == Some(0) || self.eval_stride == Some(0) {
            return Err(Error::Config("window strides must be at least 1".into()));
        }
        if self.source == DataSource::Synthetic && self.synthetic.n_vars == 0 {
            return Err(Error::Config(
                "data.synthetic.vars must be at least 1".into(),
            ));
        }
        if !(self.synthetic.noise_std >= 0.0) {
            return Err(Error::Config(
                "data.synthetic.noise_std must be >= 0".into(),
            ));
        }
        if self.patterns.is_empty() {
            return Err(Error::Config("eval.patterns must not be empty".into()));
        }
        crate::eval::check_rates(&self.rates)?;
        self.model(1).validate()?;
        self.train
            .mask
            .validate(self.window_length)
            .map_err(|e| Error::Config(e.to_string()))?;
        self.train.validate()
    }
}
