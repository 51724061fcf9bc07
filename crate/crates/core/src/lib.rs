//! Dexterous grasping toolkit: hand kinematics, grasp-quality metrics,
//! sensor-rig calibration, a small reverse-mode neural substrate, grasp pose
//! generation and selection, pose-guided motion synthesis, and the pipeline
//! that ties them together.

pub mod calibration;
pub mod geometry;
pub mod graspgen;
pub mod kinematics;
pub mod math;
pub mod motionsynth;
pub mod neural;
pub mod pipeline;
pub mod selection;
pub mod sim;
