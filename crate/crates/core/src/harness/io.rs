//! Matrix files: RFC-4180 CSV (empty field = missing) and MatrixMarket
//! `coordinate`/`array` (absent coordinate entries = missing).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DataMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatrixFormat {
    Csv,
    MatrixMarket,
}

impl MatrixFormat {
    /// `.mtx`/`.mm` → MatrixMarket, anything else → CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("mtx") | Some("mm") => MatrixFormat::MatrixMarket,
            _ => MatrixFormat::Csv,
        }
    }
}

impl std::str::FromStr for MatrixFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(MatrixFormat::Csv),
            "mtx" | "mm" | "matrix-market" | "matrixmarket" => Ok(MatrixFormat::MatrixMarket),
            other => Err(Error::invalid(format!("unknown matrix format '{other}'"))),
        }
    }
}

pub fn load_matrix(path: &Path, format: MatrixFormat) -> Result<DataMatrix> {
    let file = File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    match format {
        MatrixFormat::Csv => read_csv(file),
        MatrixFormat::MatrixMarket => read_matrix_market(BufReader::new(file)),
    }
}

pub fn save_matrix(path: &Path, m: &DataMatrix, format: MatrixFormat) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    match format {
        MatrixFormat::Csv => write_csv(&mut out, m)?,
        MatrixFormat::MatrixMarket => write_matrix_market(&mut out, m)?,
    }
    out.flush()?;
    Ok(())
}

fn parse_value(text: &str, line: usize, column: usize) -> Result<f64> {
    let v: f64 = text.trim().parse().map_err(|_| Error::Parse {
        line,
        column,
        message: format!("'{}' is not a number", text.trim()),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse { line, column, message: "non-finite value".into() });
    }
    Ok(v)
}

fn assemble(rows: usize, cols: usize, entries: Vec<Option<f64>>) -> Result<DataMatrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::DegenerateInput("empty matrix".into()));
    }
    // `entries` is row-major.
    let values = DMatrix::from_fn(rows, cols, |i, j| entries[i * cols + j].unwrap_or(0.0));
    if entries.iter().all(Option::is_some) {
        DataMatrix::new(values)
    } else {
        let mask = DMatrix::from_fn(rows, cols, |i, j| entries[i * cols + j].is_some());
        DataMatrix::with_mask(values, mask)
    }
}

/// Headerless numeric CSV; empty fields are missing entries.
pub fn read_csv(reader: impl Read) -> Result<DataMatrix> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut entries = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::Parse { line, column: 0, message: e.to_string() }
        })?;
        let line = record.position().map_or(rows + 1, |p| p.line() as usize);
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(Error::dims(format!("line {line} has {} fields, expected {c}", record.len())));
            }
            _ => {}
        }
        for (j, field) in record.iter().enumerate() {
            entries.push(if field.trim().is_empty() { None } else { Some(parse_value(field, line, j + 1)?) });
        }
        rows += 1;
    }
    assemble(rows, cols.unwrap_or(0), entries)
}

/// Writes every value with 17 significant digits; missing entries are empty.
pub fn write_csv(out: &mut impl Write, m: &DataMatrix) -> Result<()> {
    for i in 0..m.nrows() {
        let line: Vec<String> = (0..m.ncols())
            .map(|j| if m.is_observed(i, j) { format!("{:.16e}", m.values()[(i, j)]) } else { String::new() })
            .collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn read_matrix_market(reader: impl BufRead) -> Result<DataMatrix> {
    let mut lines = reader.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or(Error::Parse { line: 1, column: 1, message: "empty file".into() })?;
    let header = header?;
    let tokens: Vec<String> = header.split_whitespace().map(str::to_ascii_lowercase).collect();
    if tokens.len() != 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(Error::Parse { line: 1, column: 1, message: "missing '%%MatrixMarket matrix' banner".into() });
    }
    let coordinate = match tokens[2].as_str() {
        "coordinate" => true,
        "array" => false,
        other => return Err(Error::Parse { line: 1, column: 3, message: format!("unsupported layout '{other}'") }),
    };
    if !matches!(tokens[3].as_str(), "real" | "integer" | "double") {
        return Err(Error::Parse { line: 1, column: 4, message: format!("unsupported field '{}'", tokens[3]) });
    }
    let symmetric = match tokens[4].as_str() {
        "general" => false,
        "symmetric" => true,
        other => return Err(Error::Parse { line: 1, column: 5, message: format!("unsupported symmetry '{other}'") }),
    };

    let mut body = Vec::new();
    for (no, line) in lines {
        let line = line?;
        let t = line.trim();
        if !t.is_empty() && !t.starts_with('%') {
            body.push((no, t.to_string()));
        }
    }
    let mut body = body.into_iter();
    let (size_line, size) = body.next().ok_or(Error::Parse { line: 2, column: 1, message: "missing size line".into() })?;
    let dims: Vec<usize> = size
        .split_whitespace()
        .enumerate()
        .map(|(c, s)| s.parse().map_err(|_| Error::Parse { line: size_line, column: c + 1, message: format!("bad size '{s}'") }))
        .collect::<Result<_>>()?;
    let expected = if coordinate { 3 } else { 2 };
    if dims.len() != expected {
        return Err(Error::Parse { line: size_line, column: 1, message: format!("expected {expected} size fields") });
    }
    let (rows, cols) = (dims[0], dims[1]);
    if symmetric && rows != cols {
        return Err(Error::dims("symmetric MatrixMarket file is not square"));
    }
    let mut entries = vec![None; rows * cols];

    if coordinate {
        let mut seen = 0;
        for (no, line) in body {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(Error::Parse { line: no, column: 1, message: "expected 'row col value'".into() });
            }
            let idx = |s: &str, c: usize, bound: usize| -> Result<usize> {
                match s.parse::<usize>() {
                    Ok(v) if (1..=bound).contains(&v) => Ok(v - 1),
                    _ => Err(Error::Parse { line: no, column: c, message: format!("index '{s}' out of range") }),
                }
            };
            let (i, j) = (idx(f[0], 1, rows)?, idx(f[1], 2, cols)?);
            let v = parse_value(f[2], no, 3)?;
            entries[i * cols + j] = Some(v);
            if symmetric {
                entries[j * cols + i] = Some(v);
            }
            seen += 1;
        }
        if seen != dims[2] {
            return Err(Error::dims(format!("header announces {} entries, found {seen}", dims[2])));
        }
    } else {
        // Column-major; symmetric arrays list the lower triangle only.
        let mut slots = Vec::new();
        for j in 0..cols {
            for i in if symmetric { j..rows } else { 0..rows } {
                slots.push((i, j));
            }
        }
        let mut count = 0;
        for (no, line) in body {
            for (c, tok) in line.split_whitespace().enumerate() {
                let &(i, j) = slots.get(count).ok_or_else(|| Error::dims("more array values than the header allows"))?;
                let v = parse_value(tok, no, c + 1)?;
                entries[i * cols + j] = Some(v);
                if symmetric {
                    entries[j * cols + i] = Some(v);
                }
                count += 1;
            }
        }
        if count != slots.len() {
            return Err(Error::dims(format!("expected {} array values, found {count}", slots.len())));
        }
    }
    assemble(rows, cols, entries)
}

/// Dense matrices use the `array` layout, masked ones `coordinate` with
/// only the observed entries.
pub fn write_matrix_market(out: &mut impl Write, m: &DataMatrix) -> Result<()> {
    let (rows, cols) = m.shape();
    if m.is_masked() {
        writeln!(out, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(out, "{rows} {cols} {}", m.observed_count())?;
        for j in 0..cols {
            for i in 0..rows {
                if m.is_observed(i, j) {
                    writeln!(out, "{} {} {:.16e}", i + 1, j + 1, m.values()[(i, j)])?;
                }
            }
        }
    } else {
        writeln!(out, "%%MatrixMarket matrix array real general")?;
        writeln!(out, "{rows} {cols}")?;
        for v in m.values().iter() {
            writeln!(out, "{v:.16e}")?;
        }
    }
    Ok(())
}
