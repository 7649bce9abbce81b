use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::study::{StudyResult, StudyRow};
use crate::error::Result;

const HEADER: [&str; 12] = [
    "seed",
    "L",
    "eta_used",
    "p",
    "constant_L",
    "constant_ref",
    "abs_err",
    "residual",
    "iterations",
    "lipschitz_estimate",
    "wall_time",
    "converged",
];

/// CSV with a header row; floats in shortest round-trip form.
pub fn write_csv(result: &StudyResult, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if result.rows.is_empty() {
        w.write_record(HEADER)?;
    }
    for r in &result.rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_csv(result: &StudyResult, path: impl AsRef<Path>) -> Result<()> {
    write_csv(result, BufWriter::new(File::create(path)?))
}

pub fn read_csv(input: impl Read) -> Result<Vec<StudyRow>> {
    let mut r = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for row in r.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Vec<StudyRow>> {
    read_csv(File::open(path)?)
}

pub fn write_json(result: &StudyResult, mut out: impl Write) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, result)?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Rows as an array of objects next to a copy of the config.
pub fn emit_json(result: &StudyResult, path: impl AsRef<Path>) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    write_json(result, &mut f)?;
    f.flush()?;
    Ok(())
}

pub fn load_json(path: impl AsRef<Path>) -> Result<StudyResult> {
    Ok(serde_json::from_reader(std::io::BufReader::new(
        File::open(path)?,
    ))?)
}

/// Writes whichever outputs the config names.
pub fn write_outputs(result: &StudyResult) -> Result<()> {
    if let Some(p) = &result.config.outputs.csv {
        emit_csv(result, p)?;
    }
    if let Some(p) = &result.config.outputs.json {
        emit_json(result, p)?;
    }
    Ok(())
}
