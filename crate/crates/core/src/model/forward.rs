//! Encoder, sampler, decoder and projector.
//!
//! Tape-level functions work on a "rows" layout: a batch of `B` windows of
//! shape `[T, N]` becomes a `[B*N, T]` matrix with one row per
//! (window, variable), which lets every per-variable layer run as one matmul.

use rand_distr::{Distribution, StandardNormal};

use super::params::{
    DecoderParams, EncoderParams, Linear, ModelConfig, ModelParams, ProjectorParams,
};
use crate::data::{Normalizer, TimeSeriesWindow};
use crate::diff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng;

/// Bounds of the raw log-sigma head output, so sigma stays in (1e-6, 1e6).
pub const LOG_SIGMA_MIN: f64 = -13.8;
pub const LOG_SIGMA_MAX: f64 = 13.8;

/// Diagonal Gaussian over the `[N, d_model]` latent of one window (or rows of
/// a batch), plus the latent actually fed to the decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDistribution {
    pub mu: Tensor,
    pub sigma: Tensor,
    pub z: Tensor,
}

/// Tape handles for a latent distribution.
#[derive(Debug, Clone, Copy)]
pub struct LatentVars {
    pub mu: Var,
    pub sigma: Var,
    pub z: Var,
}

fn finite(tape: &Tape, v: Var, stage: impl FnOnce() -> String) -> Result<()> {
    if tape.value(v)?.all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { stage: stage() })
    }
}

pub fn linear(tape: &mut Tape, x: Var, lin: &Linear<Var>) -> Result<Var> {
    let y = tape.matmul(x, lin.weight)?;
    tape.add(y, lin.bias)
}

fn self_attention(
    tape: &mut Tape,
    h: Var,
    attn: &super::params::Attention<Var>,
    n_vars: usize,
) -> Result<Var> {
    let shape = tape.shape(h)?.to_vec();
    let (rows, width) = (shape[0], shape[1]);
    if rows % n_vars != 0 {
        return Err(Error::shape("attention", &shape, &[n_vars]));
    }
    let hb = tape.reshape(h, &[rows / n_vars, n_vars, width])?;
    let q = tape.matmul(hb, attn.query)?;
    let k = tape.matmul(hb, attn.key)?;
    let v = tape.matmul(hb, attn.value)?;
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, 1.0 / (width as f64).sqrt())?;
    let weights = tape.softmax(scores)?;
    let mixed = tape.matmul(weights, v)?;
    let out = tape.add(hb, mixed)?;
    tape.reshape(out, &[rows, width])
}

/// Encodes rows `[R, T]` into `(mu, sigma)`, each `[R, d_model]`.
pub fn encode_rows(
    tape: &mut Tape,
    enc: &EncoderParams<Var>,
    config: &ModelConfig,
    x_rows: Var,
) -> Result<(Var, Var)> {
    let mut h = x_rows;
    for (i, layer) in enc.layers.iter().enumerate() {
        let pre = linear(tape, h, layer)?;
        h = tape.relu(pre)?;
        if i == 0 {
            if let Some(attn) = &enc.attention {
                h = self_attention(tape, h, attn, config.n_vars)?;
            }
        }
        finite(tape, h, || format!("encoder layer {i}"))?;
    }
    let mu = linear(tape, h, &enc.mu_head)?;
    let raw = linear(tape, h, &enc.log_sigma_head)?;
    let log_sigma = tape.clamp(raw, LOG_SIGMA_MIN, LOG_SIGMA_MAX)?;
    let sigma = tape.exp(log_sigma)?;
    let heads = enc.layers.len();
    finite(tape, mu, || format!("encoder layer {heads} (mu head)"))?;
    finite(tape, sigma, || {
        format!("encoder layer {heads} (sigma head)")
    })?;
    Ok((mu, sigma))
}

/// Standard normal noise of the given shape from a seeded generator.
pub fn standard_normal(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng::seeded(seed);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
    Tensor::new(shape, data).expect("shape product matches")
}

/// `z = mu + sigma * eps` with `eps` recorded as a constant, so gradient
/// reaches `mu` and `sigma` only.
pub fn reparameterize_vars(tape: &mut Tape, mu: Var, sigma: Var, seed: u64) -> Result<Var> {
    let eps = standard_normal(tape.shape(mu)?, seed);
    let eps = tape.constant(eps);
    let noise = tape.mul(sigma, eps)?;
    tape.add(mu, noise)
}

/// Decodes latent rows `[R, d_model]` into reconstructions `[R, T]`.
pub fn decode_rows(tape: &mut Tape, dec: &DecoderParams<Var>, z: Var) -> Result<Var> {
    let pre = linear(tape, z, &dec.hidden)?;
    let h = tape.relu(pre)?;
    finite(tape, h, || "decoder layer 0".into())?;
    let out = linear(tape, h, &dec.output)?;
    finite(tape, out, || "decoder layer 1".into())?;
    Ok(out)
}

pub fn project_rows(tape: &mut Tape, proj: &ProjectorParams<Var>, z: Var) -> Result<Var> {
    linear(tape, z, &proj.linear)
}

/// Stacks `[T, N]` windows into `[B*N, T]` rows.
pub fn to_rows(windows: &[&Tensor]) -> Result<Tensor> {
    let parts: Vec<Tensor> = windows
        .iter()
        .map(|w| w.transpose())
        .collect::<Result<_>>()?;
    let stacked = Tensor::stack(&parts)?;
    let s = stacked.shape().to_vec();
    stacked.reshape(&[s[0] * s[1], s[2]])
}

/// Inverse of [`to_rows`].
pub fn from_rows(rows: &Tensor, n_vars: usize) -> Result<Vec<Tensor>> {
    let (r, t) = (rows.shape()[0], rows.shape()[1]);
    if r % n_vars != 0 {
        return Err(Error::shape("from_rows", rows.shape(), &[n_vars]));
    }
    (0..r / n_vars)
        .map(|b| rows.rows(b * n_vars, (b + 1) * n_vars)?.transpose())
        .map(|w| w.and_then(|w| w.reshape(&[t, n_vars])))
        .collect()
}

fn check_window(config: &ModelConfig, x: &Tensor) -> Result<()> {
    if x.shape() != [config.seq_len, config.n_vars] {
        return Err(Error::shape(
            "model input",
            &[config.seq_len, config.n_vars],
            x.shape(),
        ));
    }
    Ok(())
}

impl ModelParams<Tensor> {
    /// Posterior parameters for windows `[T, N]`, returned as rows
    /// `[B*N, d_model]`. `z` is set to `mu`.
    pub fn encode_batch(&self, inputs: &[&Tensor]) -> Result<LatentDistribution> {
        for x in inputs {
            check_window(&self.config, x)?;
        }
        let mut tape = Tape::new();
        let enc = self.bind_frozen(&mut tape).encoder;
        let x = tape.constant(to_rows(inputs)?);
        let (mu, sigma) = encode_rows(&mut tape, &enc, &self.config, x)?;
        let mu = tape.value(mu)?.clone();
        Ok(LatentDistribution {
            sigma: tape.value(sigma)?.clone(),
            z: mu.clone(),
            mu,
        })
    }

    /// Posterior for one window: `mu`, `sigma` of shape `[N, d_model]`.
    pub fn encode(&self, x_input: &Tensor) -> Result<LatentDistribution> {
        self.encode_batch(&[x_input])
    }

    /// Reconstruction `[T, N]` from a latent `[N, d_model]`.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        let mut out = self.decode_batch(z)?;
        if out.len() != 1 {
            return Err(Error::shape(
                "decode",
                &[self.config.n_vars, self.config.d_model],
                z.shape(),
            ));
        }
        Ok(out.remove(0))
    }

    /// Reconstructions for latent rows `[B*N, d_model]`.
    pub fn decode_batch(&self, z: &Tensor) -> Result<Vec<Tensor>> {
        if z.rank() != 2 || z.shape()[1] != self.config.d_model {
            return Err(Error::shape(
                "decode",
                &[self.config.n_vars, self.config.d_model],
                z.shape(),
            ));
        }
        let mut tape = Tape::new();
        let dec = self.bind_frozen(&mut tape).decoder;
        let zv = tape.constant(z.clone());
        let out = decode_rows(&mut tape, &dec, zv)?;
        from_rows(tape.value(out)?, self.config.n_vars)
    }

    pub fn project(&self, z: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let proj = self.bind_frozen(&mut tape).projector;
        let zv = tape.constant(z.clone());
        let out = project_rows(&mut tape, &proj, zv)?;
        Ok(tape.value(out)?.clone())
    }

    /// Normalized-space imputations for a batch of windows: visible entries
    /// pass through, hidden ones come from the decoder at `z = mu`.
    pub fn impute_normalized(&self, windows: &[&TimeSeriesWindow]) -> Result<Vec<Tensor>> {
        let inputs: Vec<&Tensor> = windows.iter().map(|w| &w.x_masked).collect();
        let latent = self.encode_batch(&inputs)?;
        let recon = self.decode_batch(&latent.z)?;
        windows
            .iter()
            .zip(recon)
            .map(|(w, xhat)| {
                let visible = w.visible();
                let merged: Vec<f64> = visible
                    .data()
                    .iter()
                    .zip(w.x_masked.data())
                    .zip(xhat.data())
                    .map(|((&m, &obs), &pred)| if m == 1.0 { obs } else { pred })
                    .collect();
                Tensor::new(w.x.shape(), merged)
            })
            .collect()
    }

    /// Imputed window in source units.
    pub fn impute(&self, window: &TimeSeriesWindow, normalizer: &Normalizer) -> Result<Tensor> {
        let z = self.impute_normalized(&[window])?.remove(0);
        normalizer.denormalize(&z)
    }
}

/// Draws `z = mu + sigma * eps` for a latent distribution.
pub fn reparameterize(dist: &LatentDistribution, seed: u64) -> Result<Tensor> {
    if dist.sigma.data().iter().any(|&s| !(s > 0.0)) {
        return Err(Error::Domain {
            op: "reparameterize",
            detail: "sigma must be strictly positive".into(),
        });
    }
    let eps = standard_normal(dist.mu.shape(), seed);
    let noise = dist.sigma.zip_map(&eps, |s, e| s * e)?;
    dist.mu.zip_map(&noise, |m, n| m + n)
}
