//! Motion CSV: a header `frame,phi0,…,phi27`, then one row per frame holding
//! the frame index and the 28 pose values (θ then root translation and
//! rotation vector).

use std::io::{BufRead, Write};

use super::{MotionError, MotionSequence, Result};
use crate::kinematics::{HandPose, POSE_DIM};

pub fn write_motion_csv<W: Write>(sequence: &MotionSequence, mut w: W) -> Result<()> {
    let header: Vec<String> = std::iter::once("frame".to_string()).chain((0..POSE_DIM).map(|i| format!("phi{i}"))).collect();
    writeln!(w, "{}", header.join(","))?;
    for (i, p) in sequence.poses.iter().enumerate() {
        let vals: Vec<String> = p.to_array().iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{i},{}", vals.join(","))?;
    }
    Ok(())
}

/// Reads a file written by [`write_motion_csv`]; frame indices must run 0, 1, ….
pub fn read_motion_csv<R: BufRead>(r: R, frame_period_s: f64) -> Result<MotionSequence> {
    let mut poses = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = n + 1;
        if n == 0 {
            if !line.starts_with("frame") {
                return Err(MotionError::Parse { line: 1, msg: "missing header".into() });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != POSE_DIM + 1 {
            return Err(MotionError::Parse { line: lineno, msg: format!("expected {} fields, got {}", POSE_DIM + 1, fields.len()) });
        }
        let frame: usize = fields[0].parse().map_err(|_| MotionError::Parse { line: lineno, msg: format!("bad frame index {:?}", fields[0]) })?;
        if frame != poses.len() {
            return Err(MotionError::Parse { line: lineno, msg: format!("frame {frame} out of order, expected {}", poses.len()) });
        }
        let vals = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| MotionError::Parse { line: lineno, msg: format!("bad number {f:?}") }))
            .collect::<Result<Vec<_>>>()?;
        poses.push(HandPose::from_slice(&vals)?);
    }
    MotionSequence::new(poses, frame_period_s)
}
