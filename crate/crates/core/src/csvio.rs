//! Small helpers shared by every CSV artifact in the crate.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::{Error, Result};

/// Shortest text that still carries 17 significant digits; parses back to the same bits.
pub(crate) fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

pub(crate) fn parse_real(field: &str, line: usize, what: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|e| Error::parse(line, format!("{what}: {e} in {field:?}")))
}

pub(crate) fn parse_usize(field: &str, line: usize, what: &str) -> Result<usize> {
    field
        .trim()
        .parse::<usize>()
        .map_err(|e| Error::parse(line, format!("{what}: {e} in {field:?}")))
}

pub(crate) fn parse_flag(field: &str, line: usize, what: &str) -> Result<bool> {
    match field.trim() {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        other => Err(Error::parse(line, format!("{what}: expected 0 or 1, got {other:?}"))),
    }
}

pub(crate) fn write_csv<P: AsRef<Path>>(path: P, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let path = path.as_ref();
    let bytes = csv_bytes(header, rows);
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    // Writing into a Vec cannot fail.
    w.write_record(header).expect("in-memory csv write");
    for row in rows {
        w.write_record(row).expect("in-memory csv write");
    }
    w.into_inner().expect("in-memory csv flush")
}

/// Reads a CSV file whose header must start with `required` (extra trailing
/// columns are returned by name). Records come back with 1-based file line numbers.
pub(crate) struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<(usize, Vec<String>)>,
}

impl CsvTable {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

pub(crate) fn read_csv<P: AsRef<Path>>(path: P, required: &[&str]) -> Result<CsvTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::parse(1, e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    if header.len() < required.len() || header.iter().zip(required).any(|(h, r)| h != r) {
        return Err(Error::parse(
            1,
            format!("expected header starting with {}, got {}", required.join(","), header.join(",")),
        ));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::parse(line, e.to_string()))?;
        rows.push((line, rec.iter().map(str::to_owned).collect()));
    }
    Ok(CsvTable { header, rows })
}
