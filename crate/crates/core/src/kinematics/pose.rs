use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{KinematicsError, Result, NUM_JOINTS, POSE_DIM};
use crate::math::{RigidTransform, Vec3};

/// Hand pose `φ = (θ, η)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandPose {
    #[serde(with = "theta_serde")]
    pub theta: [f64; NUM_JOINTS],
    /// Root translation (m) followed by root axis-angle (rad).
    pub eta: [f64; 6],
}

mod theta_serde {
    use super::NUM_JOINTS;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64; NUM_JOINTS], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[f64; NUM_JOINTS], D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        v.try_into().map_err(|v: Vec<f64>| serde::de::Error::invalid_length(v.len(), &"22 joint angles"))
    }
}

impl Default for HandPose {
    fn default() -> Self {
        Self { theta: [0.0; NUM_JOINTS], eta: [0.0; 6] }
    }
}

impl HandPose {
    /// All joints at zero with the root at `translation`, unrotated.
    pub fn mean_pose(translation: Vec3) -> Self {
        let mut p = Self::default();
        p.set_translation(translation);
        p
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != POSE_DIM {
            return Err(KinematicsError::Pose(format!("expected {POSE_DIM} values, got {}", v.len())));
        }
        let mut p = Self::default();
        p.theta.copy_from_slice(&v[..NUM_JOINTS]);
        p.eta.copy_from_slice(&v[NUM_JOINTS..]);
        Ok(p)
    }

    pub fn to_array(&self) -> [f64; POSE_DIM] {
        let mut out = [0.0; POSE_DIM];
        out[..NUM_JOINTS].copy_from_slice(&self.theta);
        out[NUM_JOINTS..].copy_from_slice(&self.eta);
        out
    }

    pub fn translation(&self) -> Vec3 {
        Vec3::new(self.eta[0], self.eta[1], self.eta[2])
    }

    pub fn rotation_vector(&self) -> Vec3 {
        Vec3::new(self.eta[3], self.eta[4], self.eta[5])
    }

    pub fn set_translation(&mut self, t: Vec3) {
        self.eta[..3].copy_from_slice(t.as_slice());
    }

    pub fn set_rotation_vector(&mut self, r: Vec3) {
        self.eta[3..].copy_from_slice(r.as_slice());
    }

    pub fn root_transform(&self) -> RigidTransform {
        RigidTransform::from_translation_axis_angle(self.translation(), self.rotation_vector())
    }

    /// Pose with its root replaced by `root`.
    pub fn with_root(&self, root: &RigidTransform) -> Self {
        let mut p = *self;
        p.set_translation(root.translation);
        p.set_rotation_vector(root.axis_angle());
        p
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().chain(&self.eta).all(|v| v.is_finite())
    }

    /// 28 comma-separated values; round-trips exactly through [`HandPose::parse_line`].
    pub fn to_line(&self) -> String {
        self.to_array().iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",")
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let values = line
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|e| KinematicsError::Pose(format!("`{}`: {e}", s.trim()))))
            .collect::<Result<Vec<_>>>()?;
        let p = Self::from_slice(&values)?;
        if !p.is_finite() {
            return Err(KinematicsError::Pose("non-finite value".into()));
        }
        Ok(p)
    }
}

pub fn write_poses<W: Write>(mut w: W, poses: &[HandPose]) -> std::io::Result<()> {
    for p in poses {
        writeln!(w, "{}", p.to_line())?;
    }
    Ok(())
}

/// Reads one pose per non-empty line; errors carry the 1-based line number.
pub fn read_poses<R: BufRead>(r: R) -> Result<Vec<HandPose>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(HandPose::parse_line(&line).map_err(|e| KinematicsError::Pose(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn line_round_trip(v in proptest::collection::vec(-1e3f64..1e3, POSE_DIM)) {
            let p = HandPose::from_slice(&v).unwrap();
            prop_assert_eq!(HandPose::parse_line(&p.to_line()).unwrap(), p);
            let mut buf = Vec::new();
            write_poses(&mut buf, &[p, p]).unwrap();
            prop_assert_eq!(read_poses(buf.as_slice()).unwrap(), vec![p, p]);
        }
    }

    #[test]
    fn bad_lines() {
        assert!(HandPose::parse_line("1,2,3").is_err());
        let mut line = HandPose::default().to_line();
        line.push_str(",x");
        assert!(HandPose::parse_line(&line).is_err());
        let err = read_poses("\n1,2\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 2"));
        let json = serde_json::to_string(&HandPose::default()).unwrap();
        assert_eq!(serde_json::from_str::<HandPose>(&json).unwrap(), HandPose::default());
    }
}
