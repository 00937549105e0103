use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng as _;

use super::window::TimeSeriesWindow;
use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaskPattern {
    /// Each observed entry hidden independently.
    Point,
    /// Contiguous runs hidden per variable.
    Block,
}

impl fmt::Display for MaskPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskPattern::Point => "point",
            MaskPattern::Block => "block",
        })
    }
}

impl FromStr for MaskPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "point" => Ok(MaskPattern::Point),
            "block" => Ok(MaskPattern::Block),
            other => Err(Error::Config(format!("unknown mask pattern {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskSpec {
    pub pattern: MaskPattern,
    pub rate: f64,
    pub block_len: usize,
    pub seed: u64,
}

impl Default for MaskSpec {
    fn default() -> Self {
        Self {
            pattern: MaskPattern::Point,
            rate: 0.5,
            block_len: 8,
            seed: 0,
        }
    }
}

/// A span hidden by block masking: `len` entries of variable `var` starting
/// at row `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HiddenBlock {
    pub var: usize,
    pub start: usize,
    pub len: usize,
}

impl MaskSpec {
    pub fn validate(&self, seq_len: usize) -> Result<()> {
        if !(0.0..1.0).contains(&self.rate) {
            return Err(Error::Invalid(format!(
                "missing rate must be in [0, 1), got {}",
                self.rate
            )));
        }
        if self.pattern == MaskPattern::Block && (self.block_len == 0 || self.block_len > seq_len) {
            return Err(Error::Invalid(format!(
                "block length {} must be in 1..={seq_len}",
                self.block_len
            )));
        }
        Ok(())
    }

    /// Spec for the `index`-th window of a collection: same settings, seed
    /// xor-ed with the index.
    pub fn for_window(&self, index: usize) -> Self {
        Self {
            seed: self.seed ^ index as u64,
            ..*self
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..*self }
    }
}

/// Draws an artificial mask over the window's observed entries. Any previous
/// artificial mask is discarded.
pub fn apply_mask(window: &TimeSeriesWindow, spec: &MaskSpec) -> Result<TimeSeriesWindow> {
    let (t_len, n) = (window.seq_len(), window.n_vars());
    spec.validate(t_len)?;
    let obs = window.m_obs.data();
    let mut art = vec![1.0; t_len * n];
    let mut blocks = Vec::new();
    let mut r = rng::seeded(spec.seed);

    match spec.pattern {
        MaskPattern::Point => {
            for (a, &o) in art.iter_mut().zip(obs) {
                let u: f64 = r.random();
                if o == 1.0 && u < spec.rate {
                    *a = 0.0;
                }
            }
        }
        MaskPattern::Block => {
            for var in 0..n {
                let col = |t: usize| t * n + var;
                let observed = (0..t_len).filter(|&t| obs[col(t)] == 1.0).count();
                let quota = ((spec.rate * observed as f64) - 1e-9).ceil().max(0.0) as usize;
                if observed == t_len {
                    if let Some(runs) = spaced_runs(t_len, quota, spec.block_len, &mut r) {
                        for (start, len) in runs {
                            (start..start + len).for_each(|t| art[col(t)] = 0.0);
                            blocks.push(HiddenBlock { var, start, len });
                        }
                        continue;
                    }
                }
                let mut hidden = 0;
                while hidden < quota {
                    let free = |t: usize, art: &[f64]| obs[col(t)] == 1.0 && art[col(t)] == 1.0;
                    let span = spec.block_len;
                    let starts = 0..=t_len - span;
                    let isolated: Vec<usize> = starts
                        .clone()
                        .filter(|&s| {
                            (s..s + span).all(|t| free(t, &art))
                                && (s == 0 || art[col(s - 1)] == 1.0)
                                && (s + span == t_len || art[col(s + span)] == 1.0)
                        })
                        .collect();
                    let candidates = if !isolated.is_empty() {
                        isolated
                    } else {
                        let whole: Vec<usize> = starts
                            .clone()
                            .filter(|&s| (s..s + span).all(|t| free(t, &art)))
                            .collect();
                        if !whole.is_empty() {
                            whole
                        } else {
                            starts
                                .filter(|&s| (s..s + span).any(|t| free(t, &art)))
                                .collect()
                        }
                    };
                    let s = candidates[r.random_range(0..candidates.len())];
                    let mut len = 0;
                    let mut first = None;
                    for t in s..s + span {
                        if hidden == quota {
                            break;
                        }
                        if free(t, &art) {
                            art[col(t)] = 0.0;
                            first.get_or_insert(t);
                            hidden += 1;
                            len += 1;
                        }
                    }
                    if let Some(start) = first {
                        blocks.push(HiddenBlock { var, start, len });
                    }
                }
            }
        }
    }

    let m_art = Tensor::new(window.x.shape(), art)?;
    let observed = obs.iter().filter(|&&o| o == 1.0).count();
    let hidden = obs
        .iter()
        .zip(m_art.data())
        .filter(|(&o, &a)| o == 1.0 && a == 0.0)
        .count();
    let mut out = TimeSeriesWindow {
        m_art,
        realized_rate: if observed == 0 {
            0.0
        } else {
            hidden as f64 / observed as f64
        },
        hidden_blocks: blocks,
        ..window.clone()
    };
    out.x_masked = out.with_values(out.x.clone())?.x_masked;
    Ok(out)
}

/// Uniformly random layout of `quota` hidden steps as runs of `block_len`
/// (the last run shorter when `quota` is not a multiple) separated by at
/// least one visible step. `None` when the runs cannot be separated within `t_len`.
fn spaced_runs(
    t_len: usize,
    quota: usize,
    block_len: usize,
    r: &mut rng::Rng,
) -> Option<Vec<(usize, usize)>> {
    if quota == 0 {
        return Some(Vec::new());
    }
    let k = quota.div_ceil(block_len);
    let slack = t_len.checked_sub(quota + k - 1)?;
    let mut lens = vec![block_len; k];
    lens[k - 1] = quota - (k - 1) * block_len;
    // Runs and slack steps as tokens: choose the run slots among slack + k.
    let mut slots = index::sample(r, slack + k, k).into_vec();
    slots.sort_unstable();
    let mut runs = Vec::with_capacity(k);
    let mut used = 0;
    for (i, (&p, &len)) in slots.iter().zip(&lens).enumerate() {
        let start = p - i + used;
        runs.push((start, len));
        used += len + 1;
    }
    Some(runs)
}

/// Masks every window with its own derived seed.
pub fn mask_windows(
    windows: &[TimeSeriesWindow],
    spec: &MaskSpec,
) -> Result<Vec<TimeSeriesWindow>> {
    windows
        .iter()
        .enumerate()
        .map(|(i, w)| apply_mask(w, &spec.for_window(i)))
        .collect()
}
