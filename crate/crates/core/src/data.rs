//! Datasets, standardization and CSV import/export.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::io::{fmt_f64, write_comment_block};
use crate::network::NormStats;

/// `N` input points in `d` dimensions with their target values.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// N×d.
    pub inputs: DMatrix<f64>,
    pub targets: DVector<f64>,
}

impl Dataset {
    pub fn new(inputs: DMatrix<f64>, targets: DVector<f64>) -> Result<Self> {
        if inputs.nrows() != targets.len() {
            return Err(Error::DimensionMismatch {
                what: "target count vs input rows",
                expected: inputs.nrows(),
                found: targets.len(),
            });
        }
        if inputs.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset"));
        }
        Ok(Dataset { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    /// Writes `theta_1..theta_d,q` rows after an optional comment header.
    pub fn write_csv<W: Write>(&self, out: &mut W, header: &str) -> Result<()> {
        write_comment_block(out, header)?;
        let d = self.input_dim();
        let cols: Vec<String> = (1..=d).map(|k| format!("theta_{k}")).chain(["q".to_string()]).collect();
        writeln!(out, "{}", cols.join(","))?;
        for n in 0..self.len() {
            for k in 0..d {
                write!(out, "{},", fmt_f64(self.inputs[(n, k)]))?;
            }
            writeln!(out, "{}", fmt_f64(self.targets[n]))?;
        }
        Ok(())
    }

    /// Reads the format produced by [`Dataset::write_csv`]; `#` lines are
    /// skipped.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
        let headers = rdr.headers()?.clone();
        let d = headers.len().checked_sub(1).filter(|&d| d > 0).ok_or_else(|| {
            Error::Parse("dataset CSV needs at least one theta column and a q column".into())
        })?;
        for (k, h) in headers.iter().take(d).enumerate() {
            if h != format!("theta_{}", k + 1) {
                return Err(Error::Parse(format!("unexpected dataset column `{h}`")));
            }
        }
        if &headers[d] != "q" {
            return Err(Error::Parse("last dataset column must be `q`".into()));
        }
        let mut flat = Vec::new();
        let mut q = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            for (k, field) in rec.iter().enumerate() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad number `{field}`")))?;
                if k < d {
                    flat.push(v);
                } else {
                    q.push(v);
                }
            }
        }
        let inputs = DMatrix::from_row_slice(q.len(), d, &flat);
        Dataset::new(inputs, DVector::from_vec(q))
    }
}

impl NormStats {
    /// Per-dimension mean and population standard deviation.
    pub fn fit(inputs: &DMatrix<f64>) -> Result<Self> {
        let n = inputs.nrows();
        if n < 2 {
            return Err(Error::config("N", "standardization needs at least 2 samples"));
        }
        let mut mean = Vec::with_capacity(inputs.ncols());
        let mut std = Vec::with_capacity(inputs.ncols());
        for (k, col) in inputs.column_iter().enumerate() {
            let m = col.mean();
            let var = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64;
            let s = var.sqrt();
            if !(s > 0.0) {
                return Err(Error::config(format!("inputs.theta_{}", k + 1), "input dimension is constant"));
            }
            mean.push(m);
            std.push(s);
        }
        Ok(NormStats { mean, std })
    }
}

/// Standardizes every input dimension to mean 0 and std 1.
pub fn standardize(dataset: &Dataset) -> Result<(Dataset, NormStats)> {
    let stats = NormStats::fit(&dataset.inputs)?;
    let inputs = stats.normalize(&dataset.inputs)?;
    Ok((
        Dataset {
            inputs,
            targets: dataset.targets.clone(),
        },
        stats,
    ))
}
