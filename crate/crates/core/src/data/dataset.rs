use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::rng;

/// A multivariate series stored time-major, `[T_total, N]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub values: Tensor,
    pub variable_names: Vec<String>,
    /// 1 where the source had a value, 0 where the cell was empty.
    pub native_mask: Tensor,
    /// Absolute time index of the first row (non-zero for split segments).
    pub origin: usize,
}

impl Dataset {
    pub fn new(values: Tensor, variable_names: Vec<String>, native_mask: Tensor) -> Result<Self> {
        if values.rank() != 2 || values.shape() != native_mask.shape() {
            return Err(Error::shape("dataset", values.shape(), native_mask.shape()));
        }
        if values.shape()[1] != variable_names.len() {
            return Err(Error::Data(format!(
                "{} variable names for {} columns",
                variable_names.len(),
                values.shape()[1]
            )));
        }
        for (v, m) in values.data().iter().zip(native_mask.data()) {
            if *m == 1.0 && !v.is_finite() {
                return Err(Error::Data("observed value is not finite".into()));
            }
            if *m != 0.0 && *m != 1.0 {
                return Err(Error::Data("native mask must be 0 or 1".into()));
            }
        }
        Ok(Self {
            values,
            variable_names,
            native_mask,
            origin: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_vars(&self) -> usize {
        self.values.shape()[1]
    }

    /// Rows `[start, end)` as a new dataset, keeping absolute origin.
    pub fn segment(&self, start: usize, end: usize) -> Result<Self> {
        Ok(Self {
            values: self.values.rows(start, end)?,
            variable_names: self.variable_names.clone(),
            native_mask: self.native_mask.rows(start, end)?,
            origin: self.origin + start,
        })
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::read_csv(file)
    }

    /// Parses a header row of names followed by numeric rows; empty cells are
    /// natively missing.
    pub fn read_csv(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(reader);
        let names: Vec<String> = rdr
            .headers()?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        if names.is_empty() || (names.len() == 1 && names[0].is_empty()) {
            return Err(Error::Parse {
                line: 1,
                msg: "missing header".into(),
            });
        }
        let n = names.len();
        let mut values = Vec::new();
        let mut mask = Vec::new();
        let mut rows = 0;
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map_or(rows + 2, |p| p.line() as usize);
            if record.len() != n {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected {n} fields, found {}", record.len()),
                });
            }
            for cell in record.iter() {
                let cell = cell.trim();
                if cell.is_empty() {
                    values.push(0.0);
                    mask.push(0.0);
                } else {
                    let v: f64 = cell.parse().map_err(|_| Error::Parse {
                        line,
                        msg: format!("non-numeric cell {cell:?}"),
                    })?;
                    if !v.is_finite() {
                        return Err(Error::Parse {
                            line,
                            msg: format!("non-finite cell {cell:?}"),
                        });
                    }
                    values.push(v);
                    mask.push(1.0);
                }
            }
            rows += 1;
        }
        if rows == 0 {
            return Err(Error::Data("no data rows".into()));
        }
        Self::new(
            Tensor::new(&[rows, n], values)?,
            names,
            Tensor::new(&[rows, n], mask)?,
        )
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
        self.write_csv_to(&mut file)?;
        file.flush()?;
        Ok(())
    }

    /// Writes the header plus one row per step. Values use the shortest
    /// representation that parses back to the same `f64`.
    pub fn write_csv_to(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.variable_names)?;
        let n = self.n_vars();
        for (vals, mask) in self
            .values
            .data()
            .chunks(n)
            .zip(self.native_mask.data().chunks(n))
        {
            let row: Vec<String> = vals
                .iter()
                .zip(mask)
                .map(|(v, m)| {
                    if *m == 1.0 {
                        format!("{v}")
                    } else {
                        String::new()
                    }
                })
                .collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fractions of a chronological train/val/test split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Contiguous train, val and test segments in time order. Every segment must
/// hold at least one window of `window_len`.
pub fn chrono_split(ds: &Dataset, fractions: SplitFractions, window_len: usize) -> Result<Splits> {
    let SplitFractions { train, val, test } = fractions;
    if [train, val, test].iter().any(|f| !(0.0..=1.0).contains(f))
        || (train + val + test - 1.0).abs() > 1e-9
    {
        return Err(Error::Invalid(format!(
            "split fractions ({train}, {val}, {test}) must be non-negative and sum to 1"
        )));
    }
    let total = ds.len();
    let n_train = (train * total as f64 + 1e-9).floor() as usize;
    let n_val = (val * total as f64 + 1e-9).floor() as usize;
    let n_test = total - n_train - n_val;
    for (name, len) in [("train", n_train), ("val", n_val), ("test", n_test)] {
        if len == 0 {
            return Err(Error::Data(format!(
                "empty split: {name} segment has no rows"
            )));
        }
        if len < window_len {
            return Err(Error::Data(format!(
                "{name} segment has {len} rows, shorter than window length {window_len}"
            )));
        }
    }
    Ok(Splits {
        train: ds.segment(0, n_train)?,
        val: ds.segment(n_train, n_train + n_val)?,
        test: ds.segment(n_train + n_val, total)?,
    })
}

/// One sinusoidal component `amplitude * sin(2π t / period + phase)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sinusoid {
    pub period: f64,
    pub phase: f64,
    pub amplitude: f64,
}

impl Sinusoid {
    pub fn eval(&self, t: f64) -> f64 {
        self.amplitude * (2.0 * PI * t / self.period + self.phase).sin()
    }
}

/// Parameters of the synthetic benchmark series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub n_vars: usize,
    pub steps: usize,
    pub seed: u64,
    pub noise_std: f64,
}

/// The two components of every variable, as drawn for `seed`.
pub fn synthetic_components(n_vars: usize, seed: u64) -> Vec<[Sinusoid; 2]> {
    let mut r = rng::seeded(rng::derive(seed, 0x5157));
    (0..n_vars)
        .map(|_| {
            let mut draw = || Sinusoid {
                period: r.random_range(12.0..=48.0),
                phase: r.random_range(0.0..2.0 * PI),
                amplitude: r.random_range(0.5..=2.0),
            };
            [draw(), draw()]
        })
        .collect()
}

/// Sum of two seeded sinusoids per variable plus Gaussian noise; fully
/// observed.
pub fn make_synthetic(spec: SyntheticSpec) -> Result<Dataset> {
    let SyntheticSpec {
        n_vars,
        steps,
        seed,
        noise_std,
    } = spec;
    if n_vars == 0 {
        return Err(Error::Invalid(
            "synthetic data needs at least one variable".into(),
        ));
    }
    if !(noise_std >= 0.0) {
        return Err(Error::Invalid(format!(
            "noise_std must be >= 0, got {noise_std}"
        )));
    }
    let comps = synthetic_components(n_vars, seed);
    let noise = Normal::new(0.0, noise_std).map_err(|e| Error::Invalid(e.to_string()))?;
    let mut r = rng::seeded(rng::derive(seed, 0x401e));
    let mut values = Vec::with_capacity(steps * n_vars);
    for t in 0..steps {
        for c in &comps {
            let clean = c[0].eval(t as f64) + c[1].eval(t as f64);
            let eps = if noise_std > 0.0 {
                noise.sample(&mut r)
            } else {
                0.0
            };
            values.push(clean + eps);
        }
    }
    Dataset::new(
        Tensor::new(&[steps, n_vars], values)?,
        (0..n_vars).map(|i| format!("var{i}")).collect(),
        Tensor::ones(&[steps, n_vars]),
    )
}
