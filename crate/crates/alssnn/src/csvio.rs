//! Dataset CSV format: header `t,u1,…,um,y1,…,yp`, one row per sample.
//!
//! Values are written in the shortest form that parses back to the same
//! `f64`, so a save/load cycle is bit-exact. `dt` is read back as `t₁ − t₀`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use alssnn_core::{Dataset, Mat};

/// Parse and I/O failures; `row` counts data rows from 1, `line` counts file lines from 1.
#[derive(Debug, thiserror::Error)]
pub enum CsvError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error("line 1: malformed header: {0}")]
    Header(String),

    #[error("row {row} (line {line}): expected {expected} cells, found {found}")]
    Ragged { row: usize, line: usize, expected: usize, found: usize },

    #[error("row {row} (line {line}), column `{column}`: `{value}` is not a number")]
    NonNumeric { row: usize, line: usize, column: String, value: String },

    #[error("row {row} (line {line}), column `{column}`: value is not finite")]
    NonFinite { row: usize, line: usize, column: String },

    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },

    #[error("need at least 2 data rows, found {0}")]
    TooShort(usize),

    #[error("invalid dataset: {0}")]
    Dataset(#[from] alssnn_core::Error),
}

/// Column layout parsed from a header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub m: usize,
    pub p: usize,
}

impl Header {
    pub fn parse(cells: &[&str]) -> Result<Self, CsvError> {
        if cells.first().copied() != Some("t") {
            return Err(CsvError::Header(format!("first column must be `t`, found `{}`", cells.first().unwrap_or(&""))));
        }
        let rest = &cells[1..];
        let m = rest.iter().take_while(|c| c.starts_with('u')).count();
        let p = rest.len() - m;
        for (i, c) in rest[..m].iter().enumerate() {
            if *c != format!("u{}", i + 1) {
                return Err(CsvError::Header(format!("expected `u{}`, found `{c}`", i + 1)));
            }
        }
        for (i, c) in rest[m..].iter().enumerate() {
            if *c != format!("y{}", i + 1) {
                return Err(CsvError::Header(format!("expected `y{}`, found `{c}`", i + 1)));
            }
        }
        if m == 0 || p == 0 {
            return Err(CsvError::Header(format!("need at least one input and one output column, found m={m}, p={p}")));
        }
        Ok(Self { m, p })
    }

    pub fn names(&self) -> Vec<String> {
        std::iter::once("t".to_string())
            .chain((1..=self.m).map(|i| format!("u{i}")))
            .chain((1..=self.p).map(|i| format!("y{i}")))
            .collect()
    }
}

/// Reads a dataset from CSV text; `name` becomes the dataset name.
pub fn read_csv<R: Read>(reader: R, name: &str) -> Result<Dataset, CsvError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();
    let header_rec = match records.next() {
        Some(Ok(r)) => r,
        Some(Err(e)) => return Err(malformed(e, 1)),
        None => return Err(CsvError::Header("file is empty".into())),
    };
    let cells: Vec<&str> = header_rec.iter().collect();
    let header = Header::parse(&cells)?;
    let names = header.names();
    let width = names.len();

    let mut t = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut y: Vec<f64> = Vec::new();
    for (idx, rec) in records.enumerate() {
        let (row, line) = (idx + 1, idx + 2);
        let rec = rec.map_err(|e| malformed(e, line))?;
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        if rec.len() != width {
            return Err(CsvError::Ragged { row, line, expected: width, found: rec.len() });
        }
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| CsvError::NonNumeric {
                row,
                line,
                column: names[j].clone(),
                value: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(CsvError::NonFinite { row, line, column: names[j].clone() });
            }
            match j {
                0 => t.push(v),
                j if j <= header.m => u.push(v),
                _ => y.push(v),
            }
        }
    }
    let n = t.len();
    if n < 2 {
        return Err(CsvError::TooShort(n));
    }
    let dt = t[1] - t[0];
    if !(dt > 0.0) {
        return Err(CsvError::Malformed { line: 3, message: format!("time must increase, got t0={} t1={}", t[0], t[1]) });
    }
    let u = Mat::from_fn(header.m, n, |i, k| u[k * header.m + i]);
    let y = Mat::from_fn(header.p, n, |i, k| y[k * header.p + i]);
    Ok(Dataset::new(name, dt, u, y)?)
}

fn malformed(e: csv::Error, fallback_line: usize) -> CsvError {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(fallback_line);
    CsvError::Malformed { line, message: e.to_string() }
}

/// Loads a dataset; its name is the file stem.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset, CsvError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CsvError::Io { path: path.display().to_string(), source })?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
    read_csv(BufReader::new(file), name)
}

pub fn write_csv<W: Write>(ds: &Dataset, writer: W) -> Result<(), CsvError> {
    let header = Header { m: ds.input_dim(), p: ds.output_dim() };
    let io = |e: csv::Error| CsvError::Malformed { line: 0, message: e.to_string() };
    let mut w = csv::WriterBuilder::new().from_writer(writer);
    w.write_record(header.names()).map_err(io)?;
    let mut row = Vec::with_capacity(1 + header.m + header.p);
    for k in 0..ds.len() {
        row.clear();
        row.push(fmt_f64(k as f64 * ds.dt()));
        row.extend(ds.inputs().column(k).iter().map(|v| fmt_f64(*v)));
        row.extend(ds.outputs().column(k).iter().map(|v| fmt_f64(*v)));
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|source| CsvError::Io { path: "<writer>".into(), source })?;
    Ok(())
}

pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), CsvError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| CsvError::Io { path: path.display().to_string(), source })?;
    write_csv(ds, BufWriter::new(file))
}

/// Shortest round-trip representation.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}
