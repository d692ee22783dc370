use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn to_bytes(what: &str, header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header).map_err(|e| Error::csv(what, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| Error::csv(what, e))?;
    }
    w.into_inner()
        .map_err(|e| Error::Config(format!("flushing {what}: {e}")))
}

/// Rows keyed by header name.
pub(crate) type Row = BTreeMap<String, String>;

pub(crate) fn read_str(what: &str, text: &str) -> Result<(Vec<String>, Vec<Row>)> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> = r
        .headers()
        .map_err(|e| Error::csv(what, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::csv(what, e))?;
        rows.push(header.iter().cloned().zip(rec.iter().map(str::to_string)).collect());
    }
    Ok((header, rows))
}

pub(crate) fn read_file(path: &Path) -> Result<(Vec<String>, Vec<Row>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_str(&path.display().to_string(), &text)
}

pub(crate) fn field<'a>(row: &'a Row, name: &str, what: &str) -> Result<&'a str> {
    row.get(name)
        .map(String::as_str)
        .ok_or_else(|| Error::MalformedTable(format!("{what}: missing column {name}")))
}

pub(crate) fn number(row: &Row, name: &str, what: &str) -> Result<f64> {
    let s = field(row, name, what)?;
    s.parse()
        .ok()
        .filter(|x: &f64| x.is_finite())
        .ok_or_else(|| Error::MalformedTable(format!("{what}: {name} = {s:?} is not a number")))
}
