//! CSV and metadata emission. CSVs are RFC-4180 with a header row; floats
//! print as Rust's shortest round-trip decimals. Timestamps appear only in
//! metadata so artifact bytes are a pure function of config and seed.

use hamflow_core::Result;
use serde::Serialize;
use std::io::Write;
use std::path::Path;

pub fn write_csv<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = f64>,
{
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{}", header.join(","))?;
    for row in rows {
        let cells: Vec<String> = row.into_iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_samples_csv(path: &Path, samples: &[Vec<f64>]) -> Result<()> {
    let dim = samples.first().map_or(0, |s| s.len());
    let names: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
    let header: Vec<&str> = names.iter().map(String::as_str).collect();
    write_csv(path, &header, samples.iter().map(|s| s.iter().copied()))
}

pub fn read_samples_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| hamflow_core::Error::invalid("empty samples CSV"))?;
    let dim = header.split(',').count();
    let mut rows = Vec::new();
    for (no, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(str::parse::<f64>).collect();
        let row = row.map_err(|e| {
            hamflow_core::Error::invalid(format!("samples CSV line {}: {e}", no + 2))
        })?;
        if row.len() != dim {
            return Err(hamflow_core::Error::invalid(format!(
                "samples CSV line {}: expected {dim} columns",
                no + 2
            )));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Self-describing run record; the timestamp lives here and nowhere else.
#[derive(Debug, Serialize)]
pub struct Metadata<'a, T: Serialize> {
    pub command: &'a str,
    pub seed: u64,
    pub config_hash: &'a str,
    pub unix_time: u64,
    pub details: T,
}

pub fn write_metadata<T: Serialize>(path: &Path, meta: &Metadata<'_, T>) -> Result<()> {
    let json = serde_json::to_string_pretty(meta)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}
