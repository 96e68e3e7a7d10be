//! Multivariate time series container and its CSV format.
//!
//! CSV layout: the first row holds the variable names, every following row is
//! one time step. Decimal point is `.`, the delimiter is configurable.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MultivariateSeries {
    names: Vec<String>,
    /// T×N, one row per time step.
    data: DMatrix<f64>,
    t0: i64,
}

impl MultivariateSeries {
    pub fn new(names: Vec<String>, data: DMatrix<f64>) -> Result<Self> {
        Self::with_offset(names, data, 0)
    }

    pub fn with_offset(names: Vec<String>, data: DMatrix<f64>, t0: i64) -> Result<Self> {
        if names.len() != data.ncols() {
            return Err(Error::Shape(format!(
                "{} names for {} columns",
                names.len(),
                data.ncols()
            )));
        }
        if data.ncols() < 2 {
            return Err(Error::usage("a multivariate series needs at least 2 variables"));
        }
        if data.nrows() < 2 {
            return Err(Error::usage("a series needs at least 2 time steps"));
        }
        if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
            // column-major storage
            let (row, col) = (idx % data.nrows(), idx / data.nrows());
            return Err(Error::domain(format!(
                "non-finite value at row {row}, variable '{}'",
                names[col]
            )));
        }
        Ok(MultivariateSeries { names, data, t0 })
    }

    /// Builds a series from row-major samples.
    pub fn from_rows(names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let n = names.len();
        if let Some(bad) = rows.iter().position(|r| r.len() != n) {
            return Err(Error::Shape(format!(
                "row {bad} has {} values, expected {n}",
                rows[bad].len()
            )));
        }
        let data = DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
        Self::new(names, data)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn t0(&self) -> i64 {
        self.t0
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn n_vars(&self) -> usize {
        self.data.ncols()
    }

    /// Copy with column `var` multiplied by `factor`.
    pub fn scale_variable(&self, var: usize, factor: f64) -> MultivariateSeries {
        let mut data = self.data.clone();
        data.column_mut(var).scale_mut(factor);
        MultivariateSeries {
            names: self.names.clone(),
            data,
            t0: self.t0,
        }
    }

    pub fn read_csv(path: &Path, delimiter: u8) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(file, delimiter)
    }

    pub fn from_reader<R: Read>(reader: R, delimiter: u8) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let names: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        if names.iter().any(String::is_empty) {
            return Err(Error::Ingestion {
                line: 1,
                column: "<header>".into(),
                reason: "empty variable name".into(),
            });
        }
        let mut rows = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let record = record?;
            let line = i + 2;
            if record.len() != names.len() {
                return Err(Error::Ingestion {
                    line,
                    column: "*".into(),
                    reason: format!("expected {} fields, found {}", names.len(), record.len()),
                });
            }
            let mut row = Vec::with_capacity(names.len());
            for (cell, name) in record.iter().zip(&names) {
                let value: f64 = cell.parse().map_err(|_| Error::Ingestion {
                    line,
                    column: name.clone(),
                    reason: if cell.is_empty() {
                        "missing value".into()
                    } else {
                        format!("'{cell}' is not a number")
                    },
                })?;
                if !value.is_finite() {
                    return Err(Error::Ingestion {
                        line,
                        column: name.clone(),
                        reason: format!("non-finite value '{cell}'"),
                    });
                }
                row.push(value);
            }
            rows.push(row);
        }
        Self::from_rows(names, &rows)
    }

    /// Writes with Rust's shortest round-trip float formatting, so reading the
    /// file back reproduces the data bit for bit.
    pub fn to_writer<W: Write>(&self, writer: W, delimiter: u8) -> Result<()> {
        let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(writer);
        w.write_record(&self.names)?;
        for row in self.data.row_iter() {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv(&self, path: &Path, delimiter: u8) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.to_writer(std::io::BufWriter::new(file), delimiter)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let s = MultivariateSeries::from_rows(
            vec!["a".into(), "b".into()],
            &[vec![0.1, -2.5], vec![1e-17, 3.0], vec![7.0, 0.3333333333333333]],
        )
        .unwrap();
        let mut buf = Vec::new();
        s.to_writer(&mut buf, b';').unwrap();
        let back = MultivariateSeries::from_reader(buf.as_slice(), b';').unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn ingestion_reports_position() {
        let text = "x,y\n1,2\n3,\n";
        match MultivariateSeries::from_reader(text.as_bytes(), b',') {
            Err(Error::Ingestion { line, column, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(column, "y");
            }
            other => panic!("unexpected {other:?}"),
        }
        let text = "x,y\n1,2\nNaN,1\n";
        match MultivariateSeries::from_reader(text.as_bytes(), b',') {
            Err(Error::Ingestion { line, column, .. }) => {
                assert_eq!((line, column.as_str()), (3, "x"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let text = "x,y\n1,2\n1,abc\n";
        assert!(matches!(
            MultivariateSeries::from_reader(text.as_bytes(), b','),
            Err(Error::Ingestion { line: 3, .. })
        ));
    }

    #[test]
    fn rejects_univariate_and_short() {
        assert!(MultivariateSeries::from_rows(vec!["a".into()], &[vec![1.0], vec![2.0]]).is_err());
        assert!(MultivariateSeries::from_rows(vec!["a".into(), "b".into()], &[vec![1.0, 2.0]]).is_err());
    }
}
