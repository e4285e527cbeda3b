use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::expr::Expr;
use crate::error::{Error, Result};
use crate::geometry::RegionSet;

/// `N` sampled transitions `x → x₊` in ℝⁿ (one row per sample).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub xp: DMatrix<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, xp: DMatrix<f64>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::Dataset("dataset must contain at least one sample".into()));
        }
        if x.shape() != xp.shape() {
            return Err(Error::Dataset(format!(
                "x has shape {:?} but xp has shape {:?}",
                x.shape(),
                xp.shape()
            )));
        }
        if x.iter().chain(xp.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Dataset("samples must be finite (found NaN or Inf)".into()));
        }
        Ok(Dataset { x, xp })
    }

    pub fn from_rows(x: &[Vec<f64>], xp: &[Vec<f64>]) -> Result<Self> {
        if x.len() != xp.len() {
            return Err(Error::Dataset(format!(
                "x has {} rows but xp has {} rows",
                x.len(),
                xp.len()
            )));
        }
        Dataset::new(rows_to_matrix(x)?, rows_to_matrix(xp)?)
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Rows selected by `idx`, in order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset { x: self.x.select_rows(idx), xp: self.xp.select_rows(idx) }
    }
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let cols = rows.first().map_or(0, |r| r.len());
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != cols) {
        return Err(Error::Dataset(format!("ragged rows: row {i} has {} columns, expected {cols}", r.len())));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

/// Reads a headerless comma-separated matrix, one sample per row.
pub fn read_csv_matrix(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| {
                    Error::Dataset(format!("{}: row {i}: cannot parse `{f}` as a number", path.display()))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_csv_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    for i in 0..m.nrows() {
        let rec: Vec<String> = (0..m.ncols()).map(|j| format!("{:?}", m[(i, j)])).collect();
        w.write_record(&rec).map_err(|e| Error::Dataset(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Closed-loop dynamics `x₊ = f(x) + w` with diagonal Gaussian `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsModel {
    pub exprs: Vec<Expr>,
    pub noise_std: Vec<f64>,
}

impl DynamicsModel {
    pub fn parse<S: AsRef<str>>(exprs: &[S], noise_std: Option<&[f64]>) -> Result<Self> {
        let n = exprs.len();
        if n == 0 {
            return Err(Error::Config("system_dynamics must have one expression per dimension".into()));
        }
        let exprs = exprs.iter().map(|e| Expr::parse(e.as_ref(), n)).collect::<Result<Vec<_>>>()?;
        let noise_std = match noise_std {
            Some(s) if s.len() == n => s.to_vec(),
            Some(s) if s.len() == 1 => vec![s[0]; n],
            Some(s) => {
                return Err(Error::Config(format!(
                    "noise_std has {} entries but the dynamics have {n} dimensions",
                    s.len()
                )))
            }
            None => vec![0.0; n],
        };
        if noise_std.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::Config("noise standard deviations must be finite and non-negative".into()));
        }
        Ok(DynamicsModel { exprs, noise_std })
    }

    pub fn dim(&self) -> usize {
        self.exprs.len()
    }

    /// Noise-free successor `f(x)`.
    pub fn mean_step(&self, x: &[f64]) -> Vec<f64> {
        self.exprs.iter().map(|e| e.eval(x)).collect()
    }

    pub(crate) fn mean_step_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, e) in out.iter_mut().zip(&self.exprs) {
            *o = e.eval(x);
        }
    }

    pub fn step<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Vec<f64> {
        let mut out = self.mean_step(x);
        for (o, s) in out.iter_mut().zip(&self.noise_std) {
            if *s > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                *o += s * z;
            }
        }
        out
    }
}

/// Draws `x ~ Uniform(bounds)` and `x₊ = f(x) + w`.
pub fn sample_transitions(model: &DynamicsModel, num: usize, bounds: &RegionSet, seed: u64) -> Result<Dataset> {
    let RegionSet::Rect { lower, upper } = bounds else {
        return Err(Error::InvalidSet("transition sampling requires a RectSet".into()));
    };
    if lower.len() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: lower.len() });
    }
    if num == 0 {
        return Err(Error::Dataset("number of samples must be at least 1".into()));
    }
    let n = model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::zeros(num, n);
    let mut xp = DMatrix::zeros(num, n);
    let mut buf = vec![0.0; n];
    for i in 0..num {
        for d in 0..n {
            buf[d] = rng.gen_range(lower[d]..=upper[d]);
            x[(i, d)] = buf[d];
        }
        let next = model.step(&buf, &mut rng);
        for d in 0..n {
            xp[(i, d)] = next[d];
        }
    }
    Dataset::new(x, xp)
}
