//! Shared numeric data model: raw datasets, centered design data and the
//! covariance statistics that every solver consumes.
//!
//! Centering divides by `sqrt(n - 1)`, so inner products of centered columns
//! are sample covariances and the finite-sample formulas read exactly like
//! their population counterparts.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Column name prefix for oracle noise values in dataset CSV files.
pub const NOISE_COLUMN: &str = "__noise";
/// Column name prefix for oracle source values (`__z0`, `__z1`, ...).
pub const SOURCE_PREFIX: &str = "__z";

/// Samples of predictors `x` and target `y`, optionally with the oracle noise
/// `e` and sources `z` retained by the simulators.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub e: Option<DVector<f64>>,
    pub z: Option<DMatrix<f64>>,
    pub column_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        x: DMatrix<f64>,
        y: DVector<f64>,
        e: Option<DVector<f64>>,
        z: Option<DMatrix<f64>>,
        column_names: Vec<String>,
    ) -> Result<Self> {
        let n = x.nrows();
        if n < 2 {
            return Err(Error::TooFewSamples(n));
        }
        if y.len() != n {
            return Err(Error::DimensionMismatch(format!("x has {n} rows, y has {}", y.len())));
        }
        if let Some(e) = &e {
            if e.len() != n {
                return Err(Error::DimensionMismatch(format!("x has {n} rows, e has {}", e.len())));
            }
        }
        if let Some(z) = &z {
            if z.nrows() != n {
                return Err(Error::DimensionMismatch(format!(
                    "x has {n} rows, z has {}",
                    z.nrows()
                )));
            }
        }
        if column_names.len() != x.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} column names for {} predictors",
                column_names.len(),
                x.ncols()
            )));
        }
        let finite = x.iter().chain(y.iter()).all(|v| v.is_finite())
            && e.iter().flat_map(|e| e.iter()).all(|v| v.is_finite())
            && z.iter().flat_map(|z| z.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFiniteInput);
        }
        Ok(Self { x, y, e, z, column_names })
    }

    /// Builds a dataset with generated column names `x0, x1, ...`.
    pub fn from_xy(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let names = (0..x.ncols()).map(|j| format!("x{j}")).collect();
        Self::new(x, y, None, None, names)
    }

    pub fn n_samples(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    /// Returns a copy restricted to the predictor columns at `keep`.
    pub fn select_columns(&self, keep: &[usize]) -> Result<Self> {
        if let Some(&bad) = keep.iter().find(|&&j| j >= self.n_features()) {
            return Err(Error::DimensionMismatch(format!("column index {bad} out of range")));
        }
        let x = self.x.select_columns(keep);
        let names = keep.iter().map(|&j| self.column_names[j].clone()).collect();
        Self::new(x, self.y.clone(), self.e.clone(), self.z.clone(), names)
    }

    /// Reads a dataset from CSV. Every column except `target`, the oracle
    /// columns and the ones listed in `drop` becomes a predictor. A header
    /// line with semicolons and no commas selects `;` as the delimiter.
    pub fn read_csv<R: Read>(mut reader: R, target: &str, drop: &[String]) -> Result<Self> {
        let mut text = String::new();
        reader.read_to_string(&mut text)?;
        let header_line = text.lines().next().unwrap_or("");
        let delimiter = if header_line.contains(';') && !header_line.contains(',') { b';' } else { b',' };
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .delimiter(delimiter)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        let target_idx = headers
            .iter()
            .position(|h| h == target)
            .ok_or_else(|| Error::MissingColumn(target.to_owned()))?;
        for name in drop {
            if !headers.contains(name) {
                return Err(Error::MissingColumn(name.clone()));
            }
        }
        let noise_idx = headers.iter().position(|h| h == NOISE_COLUMN);
        let mut source_idx = Vec::new();
        while let Some(i) = headers.iter().position(|h| *h == format!("{SOURCE_PREFIX}{}", source_idx.len())) {
            source_idx.push(i);
        }
        let predictor_idx: Vec<usize> = (0..headers.len())
            .filter(|&i| {
                i != target_idx
                    && Some(i) != noise_idx
                    && !source_idx.contains(&i)
                    && !drop.contains(&headers[i])
            })
            .collect();

        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != headers.len() {
                return Err(Error::Schema(format!("row {} has {} fields", line + 1, record.len())));
            }
            let row = record
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| Error::Schema(format!("row {}: cannot parse `{s}`", line + 1)))
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        let n = rows.len();
        if n < 2 {
            return Err(Error::TooFewSamples(n));
        }
        let x = DMatrix::from_fn(n, predictor_idx.len(), |i, j| rows[i][predictor_idx[j]]);
        let y = DVector::from_fn(n, |i, _| rows[i][target_idx]);
        let e = noise_idx.map(|k| DVector::from_fn(n, |i, _| rows[i][k]));
        let z = (!source_idx.is_empty())
            .then(|| DMatrix::from_fn(n, source_idx.len(), |i, j| rows[i][source_idx[j]]));
        let names = predictor_idx.iter().map(|&i| headers[i].clone()).collect();
        Self::new(x, y, e, z, names)
    }

    /// Writes the dataset in the same CSV layout `read_csv` accepts.
    pub fn write_csv<W: Write>(&self, writer: W, target: &str) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = self.column_names.clone();
        header.push(target.to_owned());
        if self.e.is_some() {
            header.push(NOISE_COLUMN.to_owned());
        }
        if let Some(z) = &self.z {
            header.extend((0..z.ncols()).map(|k| format!("{SOURCE_PREFIX}{k}")));
        }
        wtr.write_record(&header)?;
        for i in 0..self.n_samples() {
            let mut row: Vec<String> = self.x.row(i).iter().map(|v| v.to_string()).collect();
            row.push(self.y[i].to_string());
            if let Some(e) = &self.e {
                row.push(e[i].to_string());
            }
            if let Some(z) = &self.z {
                row.extend(z.row(i).iter().map(|v| v.to_string()));
            }
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Second-order statistics `Σ_XX`, `Σ_XY` and optionally `Σ_XE`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariancePair {
    pub sxx: DMatrix<f64>,
    pub sxy: DVector<f64>,
    pub sxe: Option<DVector<f64>>,
}

impl CovariancePair {
    /// Validates shapes, symmetry and positive semidefiniteness, then
    /// symmetrizes `sxx` to remove rounding drift.
    pub fn new(sxx: DMatrix<f64>, sxy: DVector<f64>, sxe: Option<DVector<f64>>) -> Result<Self> {
        let d = sxy.len();
        if sxx.nrows() != d || sxx.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "sxx is {}x{}, sxy has {d} entries",
                sxx.nrows(),
                sxx.ncols()
            )));
        }
        if sxe.as_ref().is_some_and(|e| e.len() != d) {
            return Err(Error::DimensionMismatch("sxe length differs from sxy".into()));
        }
        if sxx.iter().chain(sxy.iter()).chain(sxe.iter().flat_map(|e| e.iter())).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        let scale = sxx.amax().max(f64::MIN_POSITIVE);
        let asym = (&sxx - sxx.transpose()).amax();
        if asym > 1e-10 * scale {
            return Err(Error::NotPsd(format!("asymmetry {asym:e}")));
        }
        let sxx = symmetrize(sxx);
        if d > 0 {
            let eig = SymmetricEigen::new(sxx.clone()).eigenvalues;
            let max = eig.max();
            let min = eig.min();
            if min < -1e-10 * max.max(0.0) - f64::EPSILON * scale {
                return Err(Error::NotPsd(format!("eigenvalue {min:e} below zero")));
            }
        }
        Ok(Self { sxx, sxy, sxe })
    }

    pub fn dim(&self) -> usize {
        self.sxy.len()
    }
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Which estimator produced a coefficient vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Ols,
    Ridge,
    Lasso,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ols => "ols",
            Method::Ridge => "ridge",
            Method::Lasso => "lasso",
        }
    }
}

/// A candidate regression vector together with how it was obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionVector {
    pub coefficients: DVector<f64>,
    pub method: Method,
    pub lambda: f64,
    /// Set when a singular system was solved through the pseudoinverse.
    pub pinv_fallback: bool,
}

impl RegressionVector {
    pub fn squared_norm(&self) -> f64 {
        self.coefficients.norm_squared()
    }
}

/// Centers every column of `x` and `y`, divides by `sqrt(n - 1)` and, when
/// `normalize` is set, rescales each predictor to unit sample variance.
/// Oracle fields are centered and scaled the same way.
pub fn center_and_scale(data: &Dataset, normalize: bool) -> Result<Dataset> {
    let n = data.n_samples();
    if n < 2 {
        return Err(Error::TooFewSamples(n));
    }
    let root = ((n - 1) as f64).sqrt();
    let mut x = data.x.clone();
    for (j, mut col) in x.column_iter_mut().enumerate() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
        col /= root;
        if normalize {
            let norm = col.norm();
            if !norm.is_finite() {
                return Err(Error::NonFiniteInput);
            }
            if norm <= f64::EPSILON * mean.abs().max(1.0) * (n as f64) {
                return Err(Error::ZeroVarianceColumn(j));
            }
            col /= norm;
        }
    }
    let center = |v: &DVector<f64>| {
        let mean = v.mean();
        v.add_scalar(-mean) / root
    };
    let y = center(&data.y);
    let e = data.e.as_ref().map(center);
    let z = data.z.as_ref().map(|z| {
        let mut z = z.clone();
        for mut col in z.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
            col /= root;
        }
        z
    });
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    Dataset::new(x, y, e, z, data.column_names.clone())
}

/// Inner products of already centered data: `sxx = xᵀx`, `sxy = xᵀy` and,
/// when noise is present, `sxe = xᵀe`.
pub fn empirical_covariances(data: &Dataset) -> Result<CovariancePair> {
    if data.y.len() != data.n_samples() {
        return Err(Error::DimensionMismatch("x and y row counts differ".into()));
    }
    let xt = data.x.transpose();
    let sxx = symmetrize(&xt * &data.x);
    let sxy = &xt * &data.y;
    let sxe = data.e.as_ref().map(|e| &xt * e);
    CovariancePair::new(sxx, sxy, sxe)
}
