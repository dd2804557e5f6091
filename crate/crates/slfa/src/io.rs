//! On-disk formats: numeric matrix CSVs (optional header, empty field =
//! missing, full double-precision round trip), binary design CSVs with
//! cell-level diagnostics, and tidy record / aggregate CSVs for studies.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use thiserror::Error;

use crate::design::{DesignError, DesignMatrix};
use crate::simulation::{AggregateRow, ReplicationRecord, TidyRow};

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}, column {column}: {message}")]
    Cell {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("line {line}: expected {expected} columns, got {got}")]
    RaggedRow {
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("no data rows found")]
    Empty,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Design(#[from] DesignError),
}

/// A parsed matrix CSV: values, an observation mask when any cell was empty,
/// and whether a header row was skipped.
#[derive(Clone, Debug)]
pub struct MatrixCsv {
    pub values: Array2<f64>,
    pub mask: Option<Array2<bool>>,
    pub had_header: bool,
}

impl MatrixCsv {
    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    /// Whether any cell was empty.
    pub fn has_missing(&self) -> bool {
        self.mask.is_some()
    }
}

fn split_line(line: &str) -> Vec<&str> {
    line.trim_end_matches(['\r', '\n']).split(',').collect()
}

fn line_is_header(line: &str) -> bool {
    split_line(line)
        .iter()
        .any(|cell| !cell.trim().is_empty() && cell.trim().parse::<f64>().is_err())
}

/// Reads a comma-separated numeric matrix. The first line is treated as a
/// header when any of its cells fails to parse as a number; empty cells mark
/// missing values. Lines and columns in errors are one-based.
pub fn read_matrix<R: Read>(reader: R) -> Result<MatrixCsv, IoError> {
    let lines = BufReader::new(reader).lines().enumerate();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut mask_rows: Vec<Vec<bool>> = Vec::new();
    let mut any_missing = false;
    let mut had_header = false;
    let mut n_cols: Option<usize> = None;
    let mut first_content_line = true;
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if first_content_line && line_is_header(&line) {
            had_header = true;
            first_content_line = false;
            continue;
        }
        first_content_line = false;
        let cells = split_line(&line);
        if let Some(expected) = n_cols {
            if cells.len() != expected {
                return Err(IoError::RaggedRow {
                    line: idx + 1,
                    expected,
                    got: cells.len(),
                });
            }
        } else {
            n_cols = Some(cells.len());
        }
        let mut row = Vec::with_capacity(cells.len());
        let mut mask_row = Vec::with_capacity(cells.len());
        for (col, cell) in cells.iter().enumerate() {
            let trimmed = cell.trim();
            if trimmed.is_empty() {
                row.push(0.0);
                mask_row.push(false);
                any_missing = true;
            } else {
                let value: f64 = trimmed.parse().map_err(|_| IoError::Cell {
                    line: idx + 1,
                    column: col + 1,
                    message: format!("cannot parse {trimmed:?} as a number"),
                })?;
                row.push(value);
                mask_row.push(true);
            }
        }
        rows.push(row);
        mask_rows.push(mask_row);
    }
    let n_cols = n_cols.ok_or(IoError::Empty)?;
    let n_rows = rows.len();
    let mut values = Array2::zeros((n_rows, n_cols));
    let mut mask = Array2::from_elem((n_rows, n_cols), true);
    for (i, (row, mask_row)) in rows.into_iter().zip(mask_rows).enumerate() {
        for (j, (v, m)) in row.into_iter().zip(mask_row).enumerate() {
            values[[i, j]] = v;
            mask[[i, j]] = m;
        }
    }
    Ok(MatrixCsv {
        values,
        mask: any_missing.then_some(mask),
        had_header,
    })
}

pub fn read_matrix_file(path: &Path) -> Result<MatrixCsv, IoError> {
    read_matrix(File::open(path)?)
}

/// Serializes one value with 17 significant digits, enough for an exact
/// double-precision round trip.
fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes a numeric matrix as CSV; masked-out cells become empty fields.
pub fn write_matrix<W: Write>(
    writer: W,
    values: &Array2<f64>,
    mask: Option<&Array2<bool>>,
) -> Result<(), IoError> {
    let mut w = BufWriter::new(writer);
    for i in 0..values.nrows() {
        let mut line = String::new();
        for j in 0..values.ncols() {
            if j > 0 {
                line.push(',');
            }
            let observed = mask.map(|m| m[[i, j]]).unwrap_or(true);
            if observed {
                line.push_str(&format_value(values[[i, j]]));
            }
        }
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_matrix_file(
    path: &Path,
    values: &Array2<f64>,
    mask: Option<&Array2<bool>>,
) -> Result<(), IoError> {
    write_matrix(File::create(path)?, values, mask)
}

/// Reads a binary design CSV (J rows, K columns of 0/1, optional header),
/// reporting the offending cell for anything that is not exactly 0 or 1.
pub fn read_design<R: Read>(reader: R) -> Result<DesignMatrix, IoError> {
    let parsed = read_matrix(reader)?;
    if parsed.has_missing() {
        let mask = parsed.mask.as_ref().expect("has_missing implies mask");
        let (i, j) = mask
            .indexed_iter()
            .find(|(_, &m)| !m)
            .map(|(ix, _)| ix)
            .expect("some cell is missing");
        return Err(IoError::Cell {
            line: i + 1 + parsed.had_header as usize,
            column: j + 1,
            message: "design cells cannot be empty".into(),
        });
    }
    let mut entries = Array2::<u8>::zeros(parsed.values.dim());
    for ((i, j), &v) in parsed.values.indexed_iter() {
        if v == 0.0 {
            entries[[i, j]] = 0;
        } else if v == 1.0 {
            entries[[i, j]] = 1;
        } else {
            return Err(IoError::Cell {
                line: i + 1 + parsed.had_header as usize,
                column: j + 1,
                message: format!("design entries must be 0 or 1, got {v}"),
            });
        }
    }
    Ok(DesignMatrix::new(entries)?)
}

pub fn read_design_file(path: &Path) -> Result<DesignMatrix, IoError> {
    read_design(File::open(path)?)
}

/// Writes per-replication records as a tidy CSV:
/// `j,n,replication,metric,value`.
pub fn write_records_csv<W: Write>(
    writer: W,
    records: &[ReplicationRecord],
) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(writer);
    for row in crate::simulation::tidy_rows(records) {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_records_file(path: &Path, records: &[ReplicationRecord]) -> Result<(), IoError> {
    write_records_csv(File::create(path)?, records)
}

/// Reads a tidy records CSV back.
pub fn read_records_csv<R: Read>(reader: R) -> Result<Vec<TidyRow>, IoError> {
    let mut r = csv::Reader::from_reader(reader);
    let mut rows = Vec::new();
    for record in r.deserialize() {
        rows.push(record?);
    }
    Ok(rows)
}

/// Writes aggregated figure statistics: `j,metric,median,q25,q75`.
pub fn write_aggregate_csv<W: Write>(writer: W, rows: &[AggregateRow]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_aggregate_file(path: &Path, rows: &[AggregateRow]) -> Result<(), IoError> {
    write_aggregate_csv(File::create(path)?, rows)
}

/// Writes an objective trace as `iter,objective`.
pub fn write_trace_csv<W: Write>(writer: W, trace: &[f64]) -> Result<(), IoError> {
    let mut w = BufWriter::new(writer);
    w.write_all(b"iter,objective\n")?;
    for (i, v) in trace.iter().enumerate() {
        writeln!(w, "{},{}", i, format_value(*v))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace_file(path: &Path, trace: &[f64]) -> Result<(), IoError> {
    write_trace_csv(File::create(path)?, trace)
}
