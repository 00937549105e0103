use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use super::write_file;
use crate::data::TimeSeriesWindow;
use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Two leading principal axes of a set of row embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit-length, mutually orthogonal axes.
    pub components: [Vec<f64>; 2],
    pub explained_variance: [f64; 2],
}

impl Pca {
    pub fn project(&self, row: &[f64]) -> [f64; 2] {
        let centered: Vec<f64> = row.iter().zip(&self.mean).map(|(v, m)| v - m).collect();
        self.components
            .each_ref()
            .map(|c| c.iter().zip(&centered).map(|(a, b)| a * b).sum())
    }
}

/// Fits a 2-D PCA on the rows of `x` `[n, d]`. Each axis is signed so its
/// largest-magnitude entry is positive.
pub fn fit_pca(x: &Tensor) -> Result<Pca> {
    if x.rank() != 2 {
        return Err(Error::shape("pca", x.shape(), &[]));
    }
    let (n, d) = (x.shape()[0], x.shape()[1]);
    if n < 3 {
        return Err(Error::Invalid(format!(
            "PCA needs at least 3 embeddings, got {n}"
        )));
    }
    if d < 2 {
        return Err(Error::Invalid(
            "PCA needs embeddings of dimension at least 2".into(),
        ));
    }
    let m = DMatrix::from_row_slice(n, d, x.data());
    let mean: Vec<f64> = (0..d).map(|j| m.column(j).sum() / n as f64).collect();
    let mut centered = m;
    for j in 0..d {
        centered.column_mut(j).add_scalar_mut(-mean[j]);
    }
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let axis = |k: usize| -> Vec<f64> {
        let col: Vec<f64> = eig.eigenvectors.column(order[k]).iter().copied().collect();
        let pivot = col.iter().copied().fold(
            0.0f64,
            |best, v| if v.abs() > best.abs() { v } else { best },
        );
        if pivot < 0.0 {
            col.iter().map(|v| -v).collect()
        } else {
            col
        }
    };
    Ok(Pca {
        mean,
        components: [axis(0), axis(1)],
        explained_variance: [
            eig.eigenvalues[order[0]].max(0.0),
            eig.eigenvalues[order[1]].max(0.0),
        ],
    })
}

/// One exported embedding coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentPoint {
    pub window: usize,
    pub variable: usize,
    /// `true` for the masked-input branch.
    pub masked: bool,
    pub pc: [f64; 2],
}

/// Projects `mu` of masked and complete inputs onto PCA axes fitted on the
/// complete-input embeddings. Returns `2 * windows * N` points, original
/// branch first within each window.
pub fn export_latents(
    params: &ModelParams,
    windows: &[TimeSeriesWindow],
) -> Result<(Pca, Vec<LatentPoint>)> {
    let n = params.config.n_vars;
    let d = params.config.d_model;
    if windows.len() * n < 3 {
        return Err(Error::Invalid(format!(
            "latent export needs at least 3 embeddings, got {}",
            windows.len() * n
        )));
    }
    let full = params
        .encode_batch(&windows.iter().map(|w| &w.x).collect::<Vec<_>>())?
        .mu;
    let masked = params
        .encode_batch(&windows.iter().map(|w| &w.x_masked).collect::<Vec<_>>())?
        .mu;
    let pca = fit_pca(&full)?;
    let mut points = Vec::with_capacity(2 * windows.len() * n);
    for w in 0..windows.len() {
        for (is_masked, src) in [(false, &full), (true, &masked)] {
            for v in 0..n {
                let row = &src.data()[(w * n + v) * d..(w * n + v + 1) * d];
                points.push(LatentPoint {
                    window: w,
                    variable: v,
                    masked: is_masked,
                    pc: pca.project(row),
                });
            }
        }
    }
    Ok((pca, points))
}

/// Writes `window,variable,branch,pc1,pc2` rows.
pub fn write_latents_csv(path: impl AsRef<Path>, points: &[LatentPoint]) -> Result<()> {
    write_file(path, |w: &mut dyn Write| {
        writeln!(w, "window,variable,branch,pc1,pc2")?;
        for p in points {
            let branch = if p.masked { "masked" } else { "original" };
            writeln!(
                w,
                "{},{},{},{},{}",
                p.window, p.variable, branch, p.pc[0], p.pc[1]
            )?;
        }
        Ok(())
    })
}
