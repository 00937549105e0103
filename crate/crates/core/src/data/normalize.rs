use super::dataset::Dataset;
use super::window::TimeSeriesWindow;
use crate::diff::Tensor;
use crate::error::{Error, Result};

/// Per-variable standardization fitted on observed training entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Population mean and standard deviation over entries with `mask == 1`.
    /// Variables with zero spread (or no observations) get `std = 1`.
    pub fn fit(values: &Tensor, mask: &Tensor) -> Result<Self> {
        if values.rank() != 2 || values.shape() != mask.shape() {
            return Err(Error::shape("normalizer", values.shape(), mask.shape()));
        }
        let n = values.shape()[1];
        let mut count = vec![0usize; n];
        let mut sum = vec![0.0; n];
        for (row, mrow) in values.data().chunks(n).zip(mask.data().chunks(n)) {
            for i in 0..n {
                if mrow[i] == 1.0 {
                    count[i] += 1;
                    sum[i] += row[i];
                }
            }
        }
        let mean: Vec<f64> = (0..n)
            .map(|i| {
                if count[i] > 0 {
                    sum[i] / count[i] as f64
                } else {
                    0.0
                }
            })
            .collect();
        let mut sq = vec![0.0; n];
        for (row, mrow) in values.data().chunks(n).zip(mask.data().chunks(n)) {
            for i in 0..n {
                if mrow[i] == 1.0 {
                    sq[i] += (row[i] - mean[i]).powi(2);
                }
            }
        }
        let std = (0..n)
            .map(|i| {
                let s = if count[i] > 0 {
                    (sq[i] / count[i] as f64).sqrt()
                } else {
                    0.0
                };
                if s > 0.0 && s.is_finite() {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn fit_dataset(ds: &Dataset) -> Result<Self> {
        Self::fit(&ds.values, &ds.native_mask)
    }

    pub fn n_vars(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, t: &Tensor) -> Result<usize> {
        match t.shape().last() {
            Some(&n) if n == self.n_vars() => Ok(n),
            _ => Err(Error::shape("normalize", t.shape(), &[self.n_vars()])),
        }
    }

    /// Standardizes along the last axis.
    pub fn normalize(&self, t: &Tensor) -> Result<Tensor> {
        let n = self.check(t)?;
        let mut out = t.clone();
        for row in out.data_mut().chunks_mut(n) {
            for (i, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[i]) / self.std[i];
            }
        }
        Ok(out)
    }

    pub fn denormalize(&self, t: &Tensor) -> Result<Tensor> {
        let n = self.check(t)?;
        let mut out = t.clone();
        for row in out.data_mut().chunks_mut(n) {
            for (i, v) in row.iter_mut().enumerate() {
                *v = *v * self.std[i] + self.mean[i];
            }
        }
        Ok(out)
    }

    /// Standardized copy; natively missing cells stay at zero.
    pub fn normalize_dataset(&self, ds: &Dataset) -> Result<Dataset> {
        let z = self.normalize(&ds.values)?;
        Ok(Dataset {
            values: z.zip_map(&ds.native_mask, |v, m| if m == 1.0 { v } else { 0.0 })?,
            ..ds.clone()
        })
    }

    pub fn normalize_window(&self, w: &TimeSeriesWindow) -> Result<TimeSeriesWindow> {
        let z = self.normalize(&w.x)?;
        w.with_values(z.zip_map(&w.m_obs, |v, m| if m == 1.0 { v } else { 0.0 })?)
    }
}
