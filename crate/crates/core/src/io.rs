//! CSV data files, column standardization and JSON documents for simulated
//! ground truth.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GroundTruth, ModelConfig};
use crate::tensor::Tensor3;

/// Formats a value with 17 significant digits, enough to round-trip any f64.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Reads a `T x N` matrix from CSV with a header row.
pub fn read_matrix_csv<R: Read>(reader: R) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let n = header.len();
    let mut values = Vec::new();
    let mut rows = 0;
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != n {
            return Err(Error::Dimension(format!(
                "data row {} has {} fields, header has {n}",
                line + 1,
                record.len()
            )));
        }
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                Error::InvalidParameter(format!("data row {}, column {}: '{field}' is not a number", line + 1, col + 1))
            })?;
            if !v.is_finite() {
                return Err(Error::MissingData(format!("data row {}, column {} is not finite", line + 1, col + 1)));
            }
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 || n == 0 {
        return Err(Error::MissingData("data file has no rows".into()));
    }
    Ok((header, DMatrix::from_row_slice(rows, n, &values)))
}

pub fn read_matrix_csv_path(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    read_matrix_csv(File::open(path)?)
}

/// Default column names `y1..yN`.
pub fn default_header(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("y{i}")).collect()
}

pub fn write_matrix_csv<W: Write>(writer: W, header: &[String], m: &DMatrix<f64>) -> Result<()> {
    if header.len() != m.ncols() {
        return Err(Error::Dimension("header length differs from column count".into()));
    }
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(header)?;
    for i in 0..m.nrows() {
        wtr.write_record(m.row(i).iter().map(|v| format_f64(*v)))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_matrix_csv_path(path: &Path, header: &[String], m: &DMatrix<f64>) -> Result<()> {
    write_matrix_csv(File::create(path)?, header, m)
}

/// Per-column location and scale removed by [`standardize`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardization {
    /// Maps standardized values back to the original scale.
    pub fn invert(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if z.ncols() != self.mean.len() {
            return Err(Error::Dimension("column count differs from the transform".into()));
        }
        Ok(DMatrix::from_fn(z.nrows(), z.ncols(), |i, j| z[(i, j)] * self.sd[j] + self.mean[j]))
    }
}

/// Centers each column and scales it to unit sample standard deviation.
pub fn standardize(data: &DMatrix<f64>) -> Result<(DMatrix<f64>, Standardization)> {
    let t = data.nrows();
    if t < 2 {
        return Err(Error::InvalidParameter("standardization needs at least two rows".into()));
    }
    let mut out = data.clone();
    let mut mean = Vec::with_capacity(data.ncols());
    let mut sd = Vec::with_capacity(data.ncols());
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let m = col.sum() / t as f64;
        let s = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (t - 1) as f64).sqrt();
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::InvalidParameter(format!("column {} is constant", j + 1)));
        }
        col.apply(|v| *v = (*v - m) / s);
        mean.push(m);
        sd.push(s);
    }
    Ok((out, Standardization { mean, sd }))
}

/// Row-major nested vectors.
pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_row_iterator(nrows, ncols, rows.iter().flatten().copied()))
}

/// JSON form of [`GroundTruth`]; matrices are row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthDoc {
    pub config: ModelConfig,
    pub seed: u64,
    pub stream: u64,
    pub regenerations: usize,
    pub loadings: [Vec<Vec<f64>>; 3],
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub path: Option<Vec<Vec<Vec<f64>>>>,
    pub omega: Vec<Vec<f64>>,
    pub q: Vec<f64>,
    pub coefficients: Vec<Tensor3>,
}

impl TruthDoc {
    pub fn from_truth(truth: &GroundTruth, regenerations: usize) -> Self {
        Self {
            config: truth.config,
            seed: truth.seed,
            stream: truth.stream,
            regenerations,
            loadings: truth.loadings.each_ref().map(matrix_to_rows),
            path: truth.path.as_ref().map(|p| p.iter().map(matrix_to_rows).collect()),
            omega: matrix_to_rows(&truth.omega),
            q: truth.q.iter().copied().collect(),
            coefficients: truth.coefficients.clone(),
        }
    }

    pub fn to_truth(&self) -> Result<GroundTruth> {
        let [b1, b2, b3] = &self.loadings;
        Ok(GroundTruth {
            config: self.config,
            seed: self.seed,
            stream: self.stream,
            loadings: [rows_to_matrix(b1)?, rows_to_matrix(b2)?, rows_to_matrix(b3)?],
            path: self
                .path
                .as_ref()
                .map(|p| p.iter().map(|b| rows_to_matrix(b)).collect::<Result<Vec<_>>>())
                .transpose()?,
            omega: rows_to_matrix(&self.omega)?,
            q: DVector::from_vec(self.q.clone()),
            coefficients: self.coefficients.clone(),
        })
    }
}
