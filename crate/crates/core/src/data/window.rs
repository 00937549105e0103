use super::dataset::Dataset;
use super::mask::HiddenBlock;
use crate::diff::Tensor;
use crate::error::{Error, Result};

/// A `[T, N]` slice of a series together with its masks.
///
/// `m_obs` marks values present in the source, `m_art` marks values left
/// visible by the artificial mask, and `x_masked = x * m_obs * m_art`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesWindow {
    pub x: Tensor,
    pub m_obs: Tensor,
    pub m_art: Tensor,
    pub x_masked: Tensor,
    /// Absolute time index of the first row.
    pub start: usize,
    /// Fraction of observed entries hidden by the artificial mask.
    pub realized_rate: f64,
    /// Blocks hidden by block masking, empty for point masks.
    pub hidden_blocks: Vec<HiddenBlock>,
}

impl TimeSeriesWindow {
    /// Window with no artificial masking.
    pub fn unmasked(x: Tensor, m_obs: Tensor, start: usize) -> Result<Self> {
        if x.rank() != 2 || x.shape() != m_obs.shape() {
            return Err(Error::shape("window", x.shape(), m_obs.shape()));
        }
        let m_art = Tensor::ones(x.shape());
        let x_masked = x.zip_map(&m_obs, |v, m| if m == 1.0 { v } else { 0.0 })?;
        Ok(Self {
            x,
            m_obs,
            m_art,
            x_masked,
            start,
            realized_rate: 0.0,
            hidden_blocks: Vec::new(),
        })
    }

    pub fn seq_len(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn n_vars(&self) -> usize {
        self.x.shape()[1]
    }

    /// `m_obs * m_art`: entries the model may see.
    pub fn visible(&self) -> Tensor {
        self.m_obs
            .zip_map(&self.m_art, |o, a| o * a)
            .expect("mask shapes agree")
    }

    /// Entries with known ground truth that are hidden from the model.
    pub fn eval_mask(&self) -> Tensor {
        self.m_obs
            .zip_map(
                &self.m_art,
                |o, a| if o == 1.0 && a == 0.0 { 1.0 } else { 0.0 },
            )
            .expect("mask shapes agree")
    }

    /// Replaces the ground truth and recomputes `x_masked`, keeping masks.
    pub fn with_values(&self, x: Tensor) -> Result<Self> {
        if x.shape() != self.x.shape() {
            return Err(Error::shape("with_values", self.x.shape(), x.shape()));
        }
        let visible = self.visible();
        let x_masked = x.zip_map(&visible, |v, m| if m == 1.0 { v } else { 0.0 })?;
        Ok(Self {
            x,
            x_masked,
            ..self.clone()
        })
    }
}

/// Cuts `floor((len - T) / stride) + 1` windows of length `T`.
pub fn make_windows(
    segment: &Dataset,
    seq_len: usize,
    stride: usize,
) -> Result<Vec<TimeSeriesWindow>> {
    if stride == 0 {
        return Err(Error::Invalid("window stride must be at least 1".into()));
    }
    if seq_len == 0 || seq_len > segment.len() {
        return Err(Error::Data(format!(
            "window length {seq_len} does not fit a segment of {} rows",
            segment.len()
        )));
    }
    let count = (segment.len() - seq_len) / stride + 1;
    (0..count)
        .map(|w| {
            let s = w * stride;
            TimeSeriesWindow::unmasked(
                segment.values.rows(s, s + seq_len)?,
                segment.native_mask.rows(s, s + seq_len)?,
                segment.origin + s,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(len: usize) -> Dataset {
        let values = Tensor::new(&[len, 2], (0..2 * len).map(|v| v as f64).collect()).unwrap();
        Dataset::new(
            values,
            vec!["a".into(), "b".into()],
            Tensor::ones(&[len, 2]),
        )
        .unwrap()
    }

    #[test]
    fn window_counts() {
        assert_eq!(make_windows(&seg(96), 96, 1).unwrap().len(), 1);
        assert_eq!(make_windows(&seg(100), 96, 1).unwrap().len(), 5);
        assert_eq!(make_windows(&seg(100), 96, 4).unwrap().len(), 2);
        assert!(make_windows(&seg(10), 11, 1).is_err());
        assert!(make_windows(&seg(10), 5, 0).is_err());
    }

    #[test]
    fn windows_carry_absolute_start() {
        let mut s = seg(20);
        s.origin = 100;
        let w = make_windows(&s, 5, 5).unwrap();
        assert_eq!(
            w.iter().map(|w| w.start).collect::<Vec<_>>(),
            vec![100, 105, 110, 115]
        );
        assert_eq!(w[1].x.at(&[0, 0]), 10.0);
    }

    #[test]
    fn native_missing_is_zeroed() {
        let x = Tensor::new(&[2, 1], vec![3.0, 4.0]).unwrap();
        let m = Tensor::new(&[2, 1], vec![1.0, 0.0]).unwrap();
        let w = TimeSeriesWindow::unmasked(x, m, 0).unwrap();
        assert_eq!(w.x_masked.data(), &[3.0, 0.0]);
        assert_eq!(w.eval_mask().data(), &[0.0, 0.0]);
    }
}
