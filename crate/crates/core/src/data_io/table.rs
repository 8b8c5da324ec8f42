use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{Dataset, Split};

/// Optional column naming each row's split (`train` or `test`).
pub const SPLIT_COLUMN: &str = "split";

const DEFAULT_TRAIN_FRACTION: f64 = 0.8;

/// Which header columns hold features and which hold labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsvSchema {
    pub features: Vec<String>,
    pub labels: Vec<String>,
}

impl CsvSchema {
    /// Columns starting with `y` are labels, `split` is the split column and
    /// everything else is a feature.
    pub fn infer(header: &[String]) -> Result<Self> {
        let labels: Vec<String> = header.iter().filter(|h| h.starts_with('y')).cloned().collect();
        let features: Vec<String> = header
            .iter()
            .filter(|h| !h.starts_with('y') && h.as_str() != SPLIT_COLUMN)
            .cloned()
            .collect();
        if labels.is_empty() {
            return Err(Error::Csv {
                line: 1,
                message: "no label column (names starting with `y`)".into(),
            });
        }
        Ok(Self { features, labels })
    }

    pub fn numbered(d: usize, m: usize) -> Self {
        Self {
            features: (1..=d).map(|i| format!("x{i}")).collect(),
            labels: (1..=m).map(|i| format!("y{i}")).collect(),
        }
    }
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Csv {
        line,
        message: e.to_string(),
    }
}

fn column_index(header: &[String], name: &str) -> Result<usize> {
    header.iter().position(|h| h == name).ok_or_else(|| Error::Csv {
        line: 1,
        message: format!("missing column `{name}`"),
    })
}

fn read_rows(path: &Path) -> Result<(Vec<String>, Vec<(usize, csv::StringRecord)>)> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(csv_error)?;
    let header: Vec<String> = reader.headers().map_err(csv_error)?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(rows.len() + 2, |p| p.line() as usize);
        rows.push((line, rec));
    }
    Ok((header, rows))
}

fn parse_cell(rec: &csv::StringRecord, line: usize, col: usize, name: &str) -> Result<f64> {
    let text = rec.get(col).unwrap_or("");
    let v: f64 = text.parse().map_err(|_| Error::Csv {
        line,
        message: format!("cannot parse `{text}` in column `{name}` as a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Csv {
            line,
            message: format!("non-finite value in column `{name}` (row {})", line - 1),
        });
    }
    Ok(v)
}

/// Reads a dataset. Without a `split` column the first 80% of rows train.
pub fn load_csv(path: &Path, schema: Option<&CsvSchema>) -> Result<Dataset> {
    let (header, rows) = read_rows(path)?;
    let inferred;
    let schema = match schema {
        Some(s) => s,
        None => {
            inferred = CsvSchema::infer(&header)?;
            &inferred
        }
    };
    let fcols = schema.features.iter().map(|f| column_index(&header, f)).collect::<Result<Vec<_>>>()?;
    let lcols = schema.labels.iter().map(|f| column_index(&header, f)).collect::<Result<Vec<_>>>()?;
    let scol = header.iter().position(|h| h == SPLIT_COLUMN);
    let n = rows.len();
    let mut x = Vec::with_capacity(n * fcols.len());
    let mut y = Vec::with_capacity(n * lcols.len());
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, (line, rec)) in rows.iter().enumerate() {
        for (&c, name) in fcols.iter().zip(&schema.features) {
            x.push(parse_cell(rec, *line, c, name)?);
        }
        for (&c, name) in lcols.iter().zip(&schema.labels) {
            y.push(parse_cell(rec, *line, c, name)?);
        }
        if let Some(c) = scol {
            match rec.get(c).unwrap_or("") {
                "train" => train.push(i),
                "test" => test.push(i),
                other => {
                    return Err(Error::Csv {
                        line: *line,
                        message: format!("split must be `train` or `test`, found `{other}`"),
                    })
                }
            }
        }
    }
    let inputs = Matrix::from_vec(n, fcols.len(), x)?;
    let labels = Matrix::from_vec(n, lcols.len(), y)?;
    if scol.is_some() {
        Dataset::new(inputs, labels, train, test)
    } else {
        Dataset::with_fraction(inputs, labels, DEFAULT_TRAIN_FRACTION)
    }
}

/// Writes features, labels and the split column. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn save_csv(path: &Path, data: &Dataset, schema: &CsvSchema) -> Result<()> {
    if schema.features.len() != data.feature_count() {
        return Err(Error::mismatch("feature column names", data.feature_count(), schema.features.len()));
    }
    if schema.labels.len() != data.target_count() {
        return Err(Error::mismatch("label column names", data.target_count(), schema.labels.len()));
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    let mut header: Vec<&str> = schema.features.iter().chain(&schema.labels).map(String::as_str).collect();
    header.push(SPLIT_COLUMN);
    w.write_record(&header).map_err(csv_error)?;
    let splits = data.row_split();
    for (i, split) in splits.iter().enumerate() {
        let mut rec: Vec<String> = data
            .inputs()
            .row(i)
            .iter()
            .chain(data.labels().row(i))
            .map(|v| v.to_string())
            .collect();
        rec.push(match split {
            Split::Test => "test".into(),
            _ => "train".into(),
        });
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads per-component output columns and a label column for the linear
/// solver. Every column except `label` (and `split`) is a component output.
pub fn load_component_outputs(path: &Path, label: &str) -> Result<(Vec<String>, Vec<Vec<f64>>, Vec<f64>)> {
    let (header, rows) = read_rows(path)?;
    let lcol = column_index(&header, label)?;
    let comp: Vec<(usize, String)> = header
        .iter()
        .enumerate()
        .filter(|(i, h)| *i != lcol && h.as_str() != SPLIT_COLUMN)
        .map(|(i, h)| (i, h.clone()))
        .collect();
    let mut outputs = vec![Vec::with_capacity(rows.len()); comp.len()];
    let mut labels = Vec::with_capacity(rows.len());
    for (line, rec) in &rows {
        labels.push(parse_cell(rec, *line, lcol, label)?);
        for (out, (c, name)) in outputs.iter_mut().zip(&comp) {
            out.push(parse_cell(rec, *line, *c, name)?);
        }
    }
    if labels.is_empty() {
        return Err(Error::InvalidInput("component output file has no rows".into()));
    }
    Ok((comp.into_iter().map(|(_, h)| h).collect(), outputs, labels))
}
