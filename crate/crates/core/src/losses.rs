//! Regularization, local reconstruction and global alignment losses.
//!
//! All tape functions treat their inputs as a matrix of rows, one row per
//! (window, variable) latent or series, and return scalars.

use std::fmt;
use std::str::FromStr;

use crate::diff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Which global alignment loss is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GloVariant {
    /// In-batch contrastive loss with temperature.
    InfoNce,
    /// Negative cosine similarity to the stop-gradient target.
    Align,
    None,
}

impl fmt::Display for GloVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GloVariant::InfoNce => "glo1_infonce",
            GloVariant::Align => "glo2_align",
            GloVariant::None => "none",
        })
    }
}

impl FromStr for GloVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "glo1_infonce" | "glo1" | "infonce" => Ok(GloVariant::InfoNce),
            "glo2_align" | "glo2" | "align" => Ok(GloVariant::Align),
            "none" => Ok(GloVariant::None),
            other => Err(Error::Config(format!("unknown glo variant {other:?}"))),
        }
    }
}

/// Weights of the combined objective `alpha*reg + beta1*loc + beta2*glo`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub glo_variant: GloVariant,
    /// Softmax temperature of the contrastive variant.
    pub temperature: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            beta1: 1.0,
            beta2: 0.1,
            glo_variant: GloVariant::Align,
            temperature: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "loss weight {name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.beta1 == 0.0 && !self.glo_active() {
            return Err(Error::Config(
                "at least one of beta1 or beta2 (with an active glo variant) must be positive"
                    .into(),
            ));
        }
        Ok(())
    }

    /// True when the global term contributes to the objective.
    pub fn glo_active(&self) -> bool {
        self.glo_variant != GloVariant::None && self.beta2 > 0.0
    }
}

/// Unweighted loss values and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub reg: f64,
    pub loc: f64,
    pub glo: f64,
    pub total: f64,
}

/// Weighted combination; the glo term is dropped when the variant is `None`.
pub fn total_objective(weights: &LossWeights, reg: f64, loc: f64, glo: f64) -> LossBreakdown {
    let glo_term = if weights.glo_variant == GloVariant::None {
        0.0
    } else {
        weights.beta2 * glo
    };
    LossBreakdown {
        reg,
        loc,
        glo,
        total: weights.alpha * reg + weights.beta1 * loc + glo_term,
    }
}

fn rows_of(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [d] => (1, *d),
        _ => {
            let d = *shape.last().unwrap();
            (shape.iter().product::<usize>() / d.max(1), d)
        }
    }
}

/// KL divergence of `N(mu, diag sigma^2)` from `N(0, I)`, summed over the
/// latent axis and averaged over rows:
/// `0.5 * sum_j (mu_j^2 + sigma_j^2 - log sigma_j^2 - 1)`.
pub fn reg_loss(tape: &mut Tape, mu: Var, sigma: Var) -> Result<Var> {
    let shape = tape.shape(mu)?.to_vec();
    if tape.shape(sigma)? != shape.as_slice() {
        return Err(Error::shape("reg_loss", &shape, tape.shape(sigma)?));
    }
    let (rows, _) = rows_of(&shape);
    let mu2 = tape.square(mu)?;
    let s2 = tape.square(sigma)?;
    let log_s2 = tape.log(s2)?;
    let a = tape.add(mu2, s2)?;
    let b = tape.sub(a, log_s2)?;
    let one = tape.constant(Tensor::scalar(1.0));
    let c = tape.sub(b, one)?;
    let total = tape.sum(c)?;
    tape.scale(total, 0.5 / rows as f64)
}

/// Plain-value version of [`reg_loss`].
pub fn kl_to_standard_normal(mu: &Tensor, sigma: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let m = tape.constant(mu.clone());
    let s = tape.constant(sigma.clone());
    let out = reg_loss(&mut tape, m, s)?;
    tape.value(out)?.item()
}

/// Masked mean squared error `sum(mask * (x - x_hat)^2) / sum(mask)`.
pub fn loc_loss(tape: &mut Tape, x: Var, x_hat: Var, target_mask: Var) -> Result<Var> {
    let (sx, sh, sm) = (tape.shape(x)?, tape.shape(x_hat)?, tape.shape(target_mask)?);
    if sx != sh || sx != sm {
        return Err(Error::shape("loc_loss", sx, sh));
    }
    let count = tape.value(target_mask)?.sum();
    if count == 0.0 {
        return Err(Error::Invalid(
            "empty target: loss mask selects no entries".into(),
        ));
    }
    let diff = tape.sub(x, x_hat)?;
    let sq = tape.square(diff)?;
    let masked = tape.mul(sq, target_mask)?;
    let total = tape.sum(masked)?;
    tape.scale(total, 1.0 / count)
}

fn row_norms(tape: &mut Tape, a: Var, op: &'static str) -> Result<Var> {
    let sq = tape.square(a)?;
    let ss = tape.sum_axis(sq, 1)?;
    if tape.value(ss)?.data().iter().any(|&v| v == 0.0) {
        return Err(Error::Domain {
            op,
            detail: "zero-norm row".into(),
        });
    }
    tape.sqrt(ss)
}

fn check_pair(tape: &Tape, a: Var, b: Var, op: &'static str) -> Result<usize> {
    let (sa, sb) = (tape.shape(a)?, tape.shape(b)?);
    if sa.len() != 2 || sa != sb {
        return Err(Error::shape(op, sa, sb));
    }
    Ok(sa[0])
}

/// In-batch contrastive loss. Row `i` of `anchors` is scored against every
/// row of `targets` by cosine similarity over `temperature`; the same-row
/// target is the positive and all other rows are negatives. `targets` are
/// detached, so no gradient flows into them.
pub fn glo1_loss(tape: &mut Tape, anchors: Var, targets: Var, temperature: f64) -> Result<Var> {
    let rows = check_pair(tape, anchors, targets, "glo1_loss")?;
    if rows < 2 {
        return Err(Error::Invalid(
            "no negatives: contrastive loss needs at least 2 rows".into(),
        ));
    }
    if !(temperature > 0.0) {
        return Err(Error::Invalid(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let targets = tape.detach(targets)?;
    // Row normalization divides the transposed [d, R] matrix by the [R] norms.
    let na = row_norms(tape, anchors, "glo1_loss")?;
    let nb = row_norms(tape, targets, "glo1_loss")?;
    let at = tape.transpose(anchors)?;
    let bt = tape.transpose(targets)?;
    let an_t = tape.div(at, na)?;
    let bn_t = tape.div(bt, nb)?;
    let an = tape.transpose(an_t)?;
    let sim = tape.matmul(an, bn_t)?;
    let logits = tape.scale(sim, 1.0 / temperature)?;
    let log_p = tape.log_softmax(logits)?;
    let eye = tape.constant(Tensor::identity(rows));
    let diag = tape.mul(log_p, eye)?;
    let total = tape.sum(diag)?;
    tape.scale(total, -1.0 / rows as f64)
}

/// Mean negative cosine similarity between matching rows; `targets` are
/// detached. Ranges over `[-1, 1]`, `-1` at perfect alignment.
pub fn glo2_loss(tape: &mut Tape, anchors: Var, targets: Var) -> Result<Var> {
    let rows = check_pair(tape, anchors, targets, "glo2_loss")?;
    let targets = tape.detach(targets)?;
    let na = row_norms(tape, anchors, "glo2_loss")?;
    let nb = row_norms(tape, targets, "glo2_loss")?;
    let prod = tape.mul(anchors, targets)?;
    let dot = tape.sum_axis(prod, 1)?;
    let denom = tape.mul(na, nb)?;
    let cos = tape.div(dot, denom)?;
    let total = tape.sum(cos)?;
    tape.scale(total, -1.0 / rows as f64)
}

/// Evaluates the configured global loss, or returns `None` when disabled.
pub fn glo_loss(
    tape: &mut Tape,
    weights: &LossWeights,
    anchors: Var,
    targets: Var,
) -> Result<Option<Var>> {
    match weights.glo_variant {
        GloVariant::InfoNce => glo1_loss(tape, anchors, targets, weights.temperature).map(Some),
        GloVariant::Align => glo2_loss(tape, anchors, targets).map(Some),
        GloVariant::None => Ok(None),
    }
}

/// Records `alpha*reg + beta1*loc + beta2*glo` on the tape.
pub fn weighted_total(
    tape: &mut Tape,
    weights: &LossWeights,
    reg: Var,
    loc: Var,
    glo: Option<Var>,
) -> Result<Var> {
    let r = tape.scale(reg, weights.alpha)?;
    let l = tape.scale(loc, weights.beta1)?;
    let mut total = tape.add(r, l)?;
    if let Some(g) = glo {
        let g = tape.scale(g, weights.beta2)?;
        total = tape.add(total, g)?;
    }
    Ok(total)
}
