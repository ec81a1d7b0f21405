//! Small CSV tables: per-trial GVA results and subjective reports.

use serde::de::DeserializeOwned;
use serde::Serialize;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::analysis::GvaTrialRow;
use crate::error::{Error, Result};
use crate::io::gaze::csv_error;
use crate::types::SubjectiveReport;

pub const GVA_TABLE_HEADER: [&str; 9] = [
    "participant_id",
    "environment",
    "trial_id",
    "start_depth_m",
    "end_depth_m",
    "mean_gva",
    "valid_fraction",
    "valid",
    "included",
];

pub const SUBJECTIVE_HEADER: [&str; 6] = ["participant_id", "environment", "depth_m", "report_value", "unit", "repetition"];

fn write_rows<W: Write, T: Serialize>(writer: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows<R: Read, T: DeserializeOwned>(reader: R, header: &[&str]) -> Result<Vec<(usize, T)>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let h = rdr.headers().map_err(csv_error)?.clone();
    if h.iter().map(str::trim).ne(header.iter().copied()) {
        return Err(Error::parse(1, format!("bad header; expected `{}`", header.join(","))));
    }
    rdr.deserialize()
        .map(|r| {
            let row: T = r.map_err(csv_error)?;
            Ok(row)
        })
        .enumerate()
        .map(|(i, r)| r.map(|row| (i + 2, row)))
        .collect()
}

pub fn write_gva_table<W: Write>(writer: W, rows: &[GvaTrialRow]) -> Result<()> {
    write_rows(writer, rows)
}

pub fn read_gva_table<R: Read>(reader: R) -> Result<Vec<GvaTrialRow>> {
    let rows: Vec<(usize, GvaTrialRow)> = read_rows(reader, &GVA_TABLE_HEADER)?;
    for (line, r) in &rows {
        if r.included && r.mean_gva.is_none() {
            return Err(Error::parse(*line, "included trial without a mean GVA"));
        }
    }
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

pub fn write_subjective<W: Write>(writer: W, rows: &[SubjectiveReport]) -> Result<()> {
    write_rows(writer, rows)
}

pub fn read_subjective<R: Read>(reader: R) -> Result<Vec<SubjectiveReport>> {
    let rows: Vec<(usize, SubjectiveReport)> = read_rows(reader, &SUBJECTIVE_HEADER)?;
    for (line, r) in &rows {
        if !(r.report_value > 0.0) || !r.report_value.is_finite() {
            return Err(Error::parse(*line, format!("report_value must be positive, got {}", r.report_value)));
        }
        if r.repetition == 0 {
            return Err(Error::parse(*line, "repetition is 1-based"));
        }
        if !(r.depth_m > 0.0) {
            return Err(Error::parse(*line, format!("depth_m must be positive, got {}", r.depth_m)));
        }
    }
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

pub fn write_csv_file<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_rows(BufWriter::new(File::create(path)?), rows)
}

pub fn read_gva_table_file(path: &Path) -> Result<Vec<GvaTrialRow>> {
    read_gva_table(BufReader::new(File::open(path)?))
}

pub fn read_subjective_file(path: &Path) -> Result<Vec<SubjectiveReport>> {
    read_subjective(BufReader::new(File::open(path)?))
}
