use std::path::Path;

use super::Labels;
use crate::error::{Error, Result};

/// Dense samples × features matrix with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    n_features: usize,
    values: Vec<f64>,
    labels: Option<Labels>,
}

impl DenseMatrix {
    pub fn new(n_samples: usize, n_features: usize, values: Vec<f64>) -> Result<Self> {
        if n_samples == 0 {
            return Err(Error::Data("no samples".into()));
        }
        if n_features == 0 || values.len() != n_samples * n_features {
            return Err(Error::dim(
                "DenseMatrix",
                &[n_samples, n_features],
                &[values.len()],
            ));
        }
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Data(format!("value {bad} outside [0, 1]")));
        }
        Ok(Self {
            n_features,
            values,
            labels: None,
        })
    }

    pub fn with_labels(mut self, labels: Labels) -> Result<Self> {
        if labels.len() != self.n_samples() {
            return Err(Error::Data(format!(
                "{} labels for {} samples",
                labels.len(),
                self.n_samples()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn n_samples(&self) -> usize {
        self.values.len() / self.n_features
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn labels(&self) -> Option<&Labels> {
        self.labels.as_ref()
    }

    pub fn gather(&self, rows: &[usize]) -> Vec<f64> {
        let w = self.n_features;
        let mut out = Vec::with_capacity(rows.len() * w);
        for &r in rows {
            out.extend_from_slice(&self.values[r * w..(r + 1) * w]);
        }
        out
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            n_features: self.n_features,
            values: self.gather(rows),
            labels: self.labels.as_ref().map(|l| l.subset(rows)),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DenseCsvOptions {
    /// Divide every value by 255 (8-bit image data).
    pub rescale_255: bool,
    pub has_header: bool,
}

/// Reads a numeric CSV, one sample per row.
pub fn load_dense_csv(path: &Path, opts: DenseCsvOptions) -> Result<DenseMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(opts.has_header)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Parse {
                path: path.to_owned(),
                line: 0,
                message: format!("{other:?}"),
            },
        })?;
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(rows + 1, |p| p.line() as usize);
        if *width.get_or_insert(record.len()) != record.len() {
            return Err(Error::Parse {
                path: path.to_owned(),
                line,
                message: format!(
                    "expected {} columns, found {}",
                    width.unwrap(),
                    record.len()
                ),
            });
        }
        for cell in record.iter() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                path: path.to_owned(),
                line,
                message: format!("non-numeric cell '{cell}'"),
            })?;
            let v = if opts.rescale_255 { v / 255.0 } else { v };
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Parse {
                    path: path.to_owned(),
                    line,
                    message: format!(
                        "value {cell} outside [0, 1]{}",
                        if opts.rescale_255 { " after /255" } else { "" }
                    ),
                });
            }
            values.push(v);
        }
        rows += 1;
    }
    DenseMatrix::new(rows, width.unwrap_or(0), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn image_rows() {
        let row: Vec<String> = (0..784).map(|i| (i % 256).to_string()).collect();
        let text = format!("{}\n{}\n", row.join(","), row.join(","));
        let f = write(&text);
        let m = load_dense_csv(
            f.path(),
            DenseCsvOptions {
                rescale_255: true,
                has_header: false,
            },
        )
        .unwrap();
        assert_eq!(m.n_features(), 784);
        assert_eq!(m.n_samples(), 2);
        assert!(m.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn out_of_range_without_rescale() {
        let f = write("0,300\n");
        match load_dense_csv(f.path(), DenseCsvOptions::default()) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 1);
                assert!(message.contains("outside"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_numeric_cell() {
        let f = write("0,1\n0.5,abc\n");
        match load_dense_csv(f.path(), DenseCsvOptions::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
