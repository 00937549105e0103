use rand::Rng as _;

use crate::diff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng;

/// Architecture hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    /// Window length `T`.
    pub seq_len: usize,
    /// Number of variables `N`.
    pub n_vars: usize,
    /// Latent width per variable.
    pub d_model: usize,
    /// Width of the hidden layers of encoder and decoder.
    pub hidden: usize,
    /// Number of hidden encoder layers.
    pub layers: usize,
    /// Self-attention across variables after the first encoder layer.
    pub attention: bool,
}

impl ModelConfig {
    pub fn new(seq_len: usize, n_vars: usize, d_model: usize) -> Self {
        Self {
            seq_len,
            n_vars,
            d_model,
            hidden: d_model,
            layers: 2,
            attention: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("seq_len", self.seq_len),
            ("n_vars", self.n_vars),
            ("d_model", self.d_model),
            ("hidden", self.hidden),
            ("layers", self.layers),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Affine map `x W + b` with `W: [in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<P = Tensor> {
    pub weight: P,
    pub bias: P,
}

/// Single-head self-attention projections, each `[hidden, hidden]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention<P = Tensor> {
    pub query: P,
    pub key: P,
    pub value: P,
}

/// Encoder θ: per-variable MLP over the length-`T` series with Gaussian heads.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<P = Tensor> {
    pub layers: Vec<Linear<P>>,
    pub attention: Option<Attention<P>>,
    pub mu_head: Linear<P>,
    pub log_sigma_head: Linear<P>,
}

/// Decoder φ: `d_model -> hidden -> T` per variable.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams<P = Tensor> {
    pub hidden: Linear<P>,
    pub output: Linear<P>,
}

/// One affine layer `d_model -> d_model` used by the alignment loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorParams<P = Tensor> {
    pub linear: Linear<P>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<P = Tensor> {
    pub config: ModelConfig,
    pub encoder: EncoderParams<P>,
    pub decoder: DecoderParams<P>,
    pub projector: ProjectorParams<P>,
}

fn uniform(shape: &[usize], bound: f64, r: &mut rng::Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| r.random_range(-bound..=bound)).collect();
    Tensor::new(shape, data).expect("shape product matches")
}

impl Linear<Tensor> {
    /// Uniform in `±1/sqrt(fan_in)` for weight and bias.
    pub fn init(fan_in: usize, fan_out: usize, r: &mut rng::Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Self {
            weight: uniform(&[fan_in, fan_out], bound, r),
            bias: uniform(&[fan_out], bound, r),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[fan_in, fan_out]),
            bias: Tensor::zeros(&[fan_out]),
        }
    }
}

impl ProjectorParams<Tensor> {
    pub fn identity(d_model: usize) -> Self {
        Self {
            linear: Linear {
                weight: Tensor::identity(d_model),
                bias: Tensor::zeros(&[d_model]),
            },
        }
    }
}

impl<P> Linear<P> {
    fn map<Q>(&self, prefix: &str, f: &mut impl FnMut(&str, &P) -> Q) -> Linear<Q> {
        Linear {
            weight: f(&format!("{prefix}.weight"), &self.weight),
            bias: f(&format!("{prefix}.bias"), &self.bias),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(&str, &mut P)) {
        f(&format!("{prefix}.weight"), &mut self.weight);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }
}

impl<P> ModelParams<P> {
    /// Applies `f` to every parameter with its stable name.
    pub fn map<Q>(&self, mut f: impl FnMut(&str, &P) -> Q) -> ModelParams<Q> {
        let enc = &self.encoder;
        let layers = enc
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| l.map(&format!("enc.layer{i}"), &mut f))
            .collect();
        let attention = enc.attention.as_ref().map(|a| Attention {
            query: f("enc.attn.query", &a.query),
            key: f("enc.attn.key", &a.key),
            value: f("enc.attn.value", &a.value),
        });
        let encoder = EncoderParams {
            layers,
            attention,
            mu_head: enc.mu_head.map("enc.mu", &mut f),
            log_sigma_head: enc.log_sigma_head.map("enc.log_sigma", &mut f),
        };
        let decoder = DecoderParams {
            hidden: self.decoder.hidden.map("dec.hidden", &mut f),
            output: self.decoder.output.map("dec.output", &mut f),
        };
        let projector = ProjectorParams {
            linear: self.projector.linear.map("proj", &mut f),
        };
        ModelParams {
            config: self.config,
            encoder,
            decoder,
            projector,
        }
    }

    /// Visits parameters mutably in the same order as [`ModelParams::map`].
    pub fn visit_mut(&mut self, mut f: impl FnMut(&str, &mut P)) {
        let enc = &mut self.encoder;
        for (i, l) in enc.layers.iter_mut().enumerate() {
            l.visit_mut(&format!("enc.layer{i}"), &mut f);
        }
        if let Some(a) = enc.attention.as_mut() {
            f("enc.attn.query", &mut a.query);
            f("enc.attn.key", &mut a.key);
            f("enc.attn.value", &mut a.value);
        }
        enc.mu_head.visit_mut("enc.mu", &mut f);
        enc.log_sigma_head.visit_mut("enc.log_sigma", &mut f);
        self.decoder.hidden.visit_mut("dec.hidden", &mut f);
        self.decoder.output.visit_mut("dec.output", &mut f);
        self.projector.linear.visit_mut("proj", &mut f);
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.map(|n, _| names.push(n.to_string()));
        names
    }
}

impl ModelParams<Tensor> {
    /// Seeded uniform initialization.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::seeded(rng::derive(seed, 0x1417));
        let ModelConfig {
            seq_len,
            d_model,
            hidden,
            layers,
            attention,
            ..
        } = config;
        let mut enc_layers = vec![Linear::init(seq_len, hidden, &mut r)];
        for _ in 1..layers {
            enc_layers.push(Linear::init(hidden, hidden, &mut r));
        }
        let attention = attention.then(|| {
            let bound = 1.0 / (hidden as f64).sqrt();
            Attention {
                query: uniform(&[hidden, hidden], bound, &mut r),
                key: uniform(&[hidden, hidden], bound, &mut r),
                value: uniform(&[hidden, hidden], bound, &mut r),
            }
        });
        let encoder = EncoderParams {
            layers: enc_layers,
            attention,
            mu_head: Linear::init(hidden, d_model, &mut r),
            log_sigma_head: Linear::init(hidden, d_model, &mut r),
        };
        let decoder = DecoderParams {
            hidden: Linear::init(d_model, hidden, &mut r),
            output: Linear::init(hidden, seq_len, &mut r),
        };
        let projector = ProjectorParams {
            linear: Linear::init(d_model, d_model, &mut r),
        };
        Ok(Self {
            config,
            encoder,
            decoder,
            projector,
        })
    }

    /// All-zero parameters with the shapes `config` implies.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        Ok(Self::init(config, 0)?.map(|_, t| Tensor::zeros(t.shape())))
    }

    /// Records every parameter on `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> ModelParams<Var> {
        self.map(|_, t| tape.param(t.clone()))
    }

    /// Records every parameter as a constant (no gradient).
    pub fn bind_frozen(&self, tape: &mut Tape) -> ModelParams<Var> {
        self.map(|_, t| tape.constant(t.clone()))
    }

    pub fn named(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.map(|n, t| out.push((n.to_string(), t.clone())));
        out
    }

    pub fn num_scalars(&self) -> usize {
        let mut n = 0;
        self.map(|_, t| n += t.len());
        n
    }
}
