use std::io::{BufRead, Write};

use super::{CalibrationError, Result};
use crate::math::RigidTransform;

/// Calibration results. Text layout, one record per line:
///
/// ```text
/// camera <id> <timestamp_s> <16 row-major floats>
/// hand_eye <16 row-major floats>
/// sync_offset <seconds>
/// ```
///
/// Blank lines and lines starting with `#` are ignored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CalibrationFile {
    pub cameras: Vec<CameraRecord>,
    pub hand_eye: Option<RigidTransform>,
    pub sync_offset: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraRecord {
    pub id: usize,
    pub timestamp: f64,
    /// Camera-to-world transform.
    pub extrinsic: RigidTransform,
}

fn fmt_matrix(t: &RigidTransform) -> String {
    t.to_row_major().iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" ")
}

fn parse_floats(fields: &[&str], line: usize) -> Result<Vec<f64>> {
    fields
        .iter()
        .map(|f| f.parse::<f64>().map_err(|_| CalibrationError::Format { line, msg: format!("bad number `{f}`") }))
        .collect()
}

fn parse_matrix(fields: &[&str], line: usize) -> Result<RigidTransform> {
    let v = parse_floats(fields, line)?;
    if v.len() != 16 {
        return Err(CalibrationError::Format { line, msg: format!("expected 16 matrix values, got {}", v.len()) });
    }
    let t = RigidTransform::from_row_major(&v).ok_or(CalibrationError::Format { line, msg: "not a rigid transform".into() })?;
    if !t.is_orthonormal(1e-6) {
        return Err(CalibrationError::Format { line, msg: "rotation not orthonormal".into() });
    }
    Ok(t)
}

impl CalibrationFile {
    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# camera <id> <timestamp> <4x4 row-major>; hand_eye <4x4>; sync_offset <s>")?;
        for c in &self.cameras {
            writeln!(w, "camera {} {:?} {}", c.id, c.timestamp, fmt_matrix(&c.extrinsic))?;
        }
        if let Some(x) = &self.hand_eye {
            writeln!(w, "hand_eye {}", fmt_matrix(x))?;
        }
        if let Some(s) = self.sync_offset {
            writeln!(w, "sync_offset {s:?}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut out = CalibrationFile::default();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let n = i + 1;
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.first().copied() {
                None => {}
                Some(s) if s.starts_with('#') => {}
                Some("camera") if fields.len() == 19 => {
                    let id = fields[1].parse().map_err(|_| CalibrationError::Format { line: n, msg: "bad camera id".into() })?;
                    let timestamp = parse_floats(&fields[2..3], n)?[0];
                    out.cameras.push(CameraRecord { id, timestamp, extrinsic: parse_matrix(&fields[3..], n)? });
                }
                Some("hand_eye") => out.hand_eye = Some(parse_matrix(&fields[1..], n)?),
                Some("sync_offset") if fields.len() == 2 => out.sync_offset = Some(parse_floats(&fields[1..], n)?[0]),
                Some(other) => return Err(CalibrationError::Format { line: n, msg: format!("unrecognized record `{other}`") }),
            }
        }
        Ok(out)
    }
}

/// One motion pair per row: 16 row-major values of `A` then 16 of `B`.
pub fn write_motion_pairs<W: Write>(mut w: W, pairs: &[(RigidTransform, RigidTransform)]) -> std::io::Result<()> {
    for (a, b) in pairs {
        let row: Vec<String> = a.to_row_major().iter().chain(b.to_row_major().iter()).map(|v| format!("{v:?}")).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn read_motion_pairs<R: BufRead>(r: R) -> Result<Vec<(RigidTransform, RigidTransform)>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 32 {
            return Err(CalibrationError::Format { line: i + 1, msg: format!("expected 32 values, got {}", fields.len()) });
        }
        out.push((parse_matrix(&fields[..16], i + 1)?, parse_matrix(&fields[16..], i + 1)?));
    }
    Ok(out)
}
