//! Gaze sample CSV: one row per binocular sample, fixed header.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{GazeRay, Vec3};
use crate::pipeline::{BinocularGaze, BinocularSample};

pub const GAZE_HEADER: [&str; 15] = [
    "t_s", "l_conf", "r_conf", "l_ox", "l_oy", "l_oz", "l_dx", "l_dy", "l_dz", "r_ox", "r_oy", "r_oz", "r_dx", "r_dy",
    "r_dz",
];

/// Unit directions are kept bit-for-bit; anything else is renormalized.
const UNIT_TOL: f64 = 1e-12;

fn field(raw: &str, name: &str, line: usize) -> Result<f64> {
    raw.trim()
        .parse::<f64>()
        .map_err(|_| Error::parse(line, format!("field `{name}`: cannot parse `{raw}` as a number")))
}

fn ray(v: &[f64], line: usize) -> Result<GazeRay> {
    let origin = Vec3::new(v[0], v[1], v[2]);
    let direction = Vec3::new(v[3], v[4], v[5]);
    if !origin.is_finite() || !direction.is_finite() {
        return Err(Error::parse(line, "infinite gaze vector component"));
    }
    if (direction.norm() - 1.0).abs() <= UNIT_TOL {
        return Ok(GazeRay { origin, direction });
    }
    GazeRay::new(origin, direction).map_err(|e| Error::parse(line, e.to_string()))
}

/// Parse one data row. NaN in any vector component marks the sample missing.
pub fn parse_gaze_row<S: AsRef<str>>(fields: &[S], line: usize) -> Result<BinocularSample> {
    if fields.len() != GAZE_HEADER.len() {
        return Err(Error::parse(
            line,
            format!("expected {} fields, found {}", GAZE_HEADER.len(), fields.len()),
        ));
    }
    let mut v = [0.0; 15];
    for (i, f) in fields.iter().enumerate() {
        v[i] = field(f.as_ref(), GAZE_HEADER[i], line)?;
    }
    let t = v[0];
    if !t.is_finite() {
        return Err(Error::parse(line, "non-finite timestamp"));
    }
    for (name, c) in [("l_conf", v[1]), ("r_conf", v[2])] {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::parse(line, format!("{name} = {c} is outside [0, 1]")));
        }
    }
    if v[3..].iter().any(|x| x.is_nan()) {
        return Ok(BinocularSample::missing(t, v[1], v[2]));
    }
    let left = ray(&v[3..9], line)?;
    let right = ray(&v[9..15], line)?;
    Ok(BinocularSample::new(t, left, right, v[1], v[2]))
}

fn check_header<S: AsRef<str>>(fields: &[S]) -> Result<()> {
    let ok = fields.len() == GAZE_HEADER.len() && fields.iter().zip(GAZE_HEADER).all(|(a, b)| a.as_ref().trim() == b);
    if ok {
        Ok(())
    } else {
        Err(Error::parse(1, format!("bad header; expected `{}`", GAZE_HEADER.join(","))))
    }
}

pub fn read_gaze_csv<R: Read>(reader: R) -> Result<Vec<BinocularSample>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut records = rdr.records();
    match records.next() {
        Some(Ok(h)) => check_header(&h.iter().collect::<Vec<_>>())?,
        Some(Err(e)) => return Err(csv_error(e)),
        None => return Err(Error::parse(1, "empty file: missing header")),
    }
    let mut out = Vec::new();
    let mut last_t = f64::NEG_INFINITY;
    for rec in records {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let fields: Vec<&str> = rec.iter().collect();
        let s = parse_gaze_row(&fields, line)?;
        if s.t_s < last_t {
            return Err(Error::parse(line, format!("time goes backwards: {} after {}", s.t_s, last_t)));
        }
        last_t = s.t_s;
        out.push(s);
    }
    Ok(out)
}

pub fn parse_gaze_csv(path: &Path) -> Result<Vec<BinocularSample>> {
    read_gaze_csv(BufReader::new(File::open(path)?))
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::parse(line, format!("{other:?}")),
    }
}

fn push_vec(row: &mut Vec<String>, v: Vec3) {
    row.extend([v.x, v.y, v.z].iter().map(|x| x.to_string()));
}

/// One CSV row (no trailing newline) for a sample.
pub fn format_gaze_row(s: &BinocularSample) -> Vec<String> {
    let mut row = vec![s.t_s.to_string(), s.left_conf.to_string(), s.right_conf.to_string()];
    match &s.gaze {
        Some(BinocularGaze { left, right }) => {
            push_vec(&mut row, left.origin);
            push_vec(&mut row, left.direction);
            push_vec(&mut row, right.origin);
            push_vec(&mut row, right.direction);
        }
        None => row.extend(std::iter::repeat_n("NaN".to_string(), 12)),
    }
    row
}

pub fn write_gaze_csv<'a, W: Write>(writer: W, samples: impl IntoIterator<Item = &'a BinocularSample>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(GAZE_HEADER).map_err(csv_error)?;
    for s in samples {
        w.write_record(format_gaze_row(s)).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}
