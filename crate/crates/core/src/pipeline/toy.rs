//! Synthetic dataset: three objects, six scripted grasp approaches observed
//! by three cameras, and calibration captures, all derived from a fixed seed.
//!
//! Ground truth lives in [`toy_world`]; the written files only carry what a
//! real capture would (rough extrinsics, noisy clouds, robot-frame hand
//! poses).

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;

use nalgebra::UnitQuaternion;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::dataset::{write_frames_csv, FrameRow};
use super::{io_err, item_seed, Result};
use crate::calibration::{object_samples, write_motion_pairs, CalibrationFile, CameraRecord};
use crate::geometry::ply::{self, PlyFormat};
use crate::geometry::{PointCloud, TriangleMesh};
use crate::kinematics::{clamp_to_limits, HandPose, KinematicModel, NUM_JOINTS};
use crate::math::{rotation_about, RigidTransform, Vec3};

pub const TOY_SEED: u64 = 20_240_917;
pub const TOY_OBJECTS: [&str; 3] = ["box", "cylinder", "mug"];
pub const TOY_FRAMES: usize = 60;
pub const TOY_PERIOD_S: f64 = 1.0 / 15.0;
pub const TOY_CAMERAS: usize = 3;
/// Object surface points per camera per frame.
pub const TOY_CLOUD_POINTS: usize = 160;
pub const TOY_CLOUD_NOISE_M: f64 = 0.0005;
pub const TOY_MOTION_PAIRS: usize = 30;
pub const TOY_PAIR_NOISE_DEG: f64 = 0.1;
/// Final object displacement (cm) every bundled ground-truth grasp stays under.
pub const TOY_GRASP_DISPLACEMENT_BOUND_CM: f64 = 0.5;

/// `(object, hand yaw about the object's vertical axis)` per sequence.
pub const TOY_SEQUENCES: [(&str, f64); 6] = [("box", 0.0), ("box", PI), ("cylinder", 0.0), ("cylinder", FRAC_PI_2), ("mug", 0.0), ("mug", PI)];

/// Flexion of the proximal, middle and distal joints of the four fingers.
const CURL: [f64; 3] = [1.2, 0.6, 0.4];
const FINGER_FLEXION: [usize; 4] = [1, 5, 9, 14];
/// Finger root clearance beyond the object's far face.
const FINGER_GAP_M: f64 = 0.008;
/// Palm face to palm frame origin, and palm frame origin to finger roots.
const PALM_HALF_THICKNESS_M: f64 = 0.01;
const FINGER_ROOT_M: f64 = 0.1;

/// Object meshes in their own frame: upright, base at `z = 0`.
pub fn toy_object_mesh(name: &str) -> Option<TriangleMesh> {
    match name {
        "box" => Some(TriangleMesh::cuboid(Vec3::new(0.0, 0.0, 0.025), Vec3::new(0.05, 0.04, 0.05))),
        "cylinder" => Some(TriangleMesh::cylinder(0.025, 0.07, 24)),
        "mug" => {
            let mut m = TriangleMesh::lathe(&[(0.0, 0.0), (0.03, 0.0), (0.033, 0.08), (0.0, 0.08)], 24);
            m.append(&TriangleMesh::cuboid(Vec3::new(0.0, -0.043, 0.045), Vec3::new(0.012, 0.02, 0.05)));
            Some(m)
        }
        _ => None,
    }
}

/// Palm-up grasp in the object frame: the object rests on the palm and the
/// fingers curl up against its far side. `yaw` turns the hand about the
/// object's vertical axis.
pub fn toy_grasp(hand: &KinematicModel, mesh: &TriangleMesh, yaw: f64) -> HandPose {
    let turn = rotation_about(&Vec3::z(), yaw);
    let local: Vec<Vec3> = mesh.vertices.iter().map(|v| turn.transpose() * v).collect();
    let far = local.iter().map(|v| v.y).fold(f64::NEG_INFINITY, f64::max);
    let bottom = local.iter().map(|v| v.z).fold(f64::INFINITY, f64::min);
    // Palm normal (hand −y) points up and the fingers (hand +z) along +y.
    let palm_up = rotation_about(&Vec3::x(), -FRAC_PI_2);
    let t = Vec3::new(0.0, far + FINGER_GAP_M - FINGER_ROOT_M, bottom - PALM_HALF_THICKNESS_M);
    let root = RigidTransform::new(turn, Vec3::zeros()).compose(&RigidTransform::new(palm_up, t));
    let mut theta = [0.0; NUM_JOINTS];
    for f in FINGER_FLEXION {
        theta[f..f + 3].copy_from_slice(&CURL);
    }
    HandPose { theta: clamp_to_limits(hand, &theta), eta: HandPose::default().eta }.with_root(&root)
}

/// Open hand 6 cm below and 4 cm behind the grasp, tilted back.
pub fn toy_approach(grasp: &HandPose) -> HandPose {
    let g = grasp.root_transform();
    let back = g.rotation * Vec3::z();
    let t = g.translation - 0.04 * back - Vec3::new(0.0, 0.0, 0.06);
    let r = g.rotation * rotation_about(&Vec3::x(), 0.25);
    HandPose::default().with_root(&RigidTransform::new(r, t))
}

fn smoothstep(s: f64) -> f64 {
    s * s * (3.0 - 2.0 * s)
}

/// Eased interpolation from `a` to `b`: joint angles and translation
/// linearly, orientation by slerp.
pub fn interpolate(a: &HandPose, b: &HandPose, s: f64) -> HandPose {
    let s = smoothstep(s.clamp(0.0, 1.0));
    let (ta, tb) = (a.root_transform(), b.root_transform());
    let q = ta.quaternion().slerp(&tb.quaternion(), s);
    let mut theta = [0.0; NUM_JOINTS];
    for (j, t) in theta.iter_mut().enumerate() {
        *t = a.theta[j] + s * (b.theta[j] - a.theta[j]);
    }
    let root = RigidTransform::from_quaternion(ta.translation.lerp(&tb.translation, s), &q);
    HandPose { theta, eta: a.eta }.with_root(&root)
}

/// Object-frame hand trajectory of a toy sequence.
pub fn toy_hand_trajectory(hand: &KinematicModel, object: &str, yaw: f64) -> Vec<HandPose> {
    let mesh = toy_object_mesh(object).expect("toy object");
    let grasp = toy_grasp(hand, &mesh, yaw);
    let start = toy_approach(&grasp);
    (0..TOY_FRAMES).map(|i| interpolate(&start, &grasp, i as f64 / (TOY_FRAMES - 1) as f64)).collect()
}

/// Ground truth the toy captures are generated from.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyWorld {
    /// Robot base frame to world (`A X = X B` with `A` in the world).
    pub robot_to_world: RigidTransform,
    /// Camera to world, camera 0 first.
    pub cameras: Vec<RigidTransform>,
}

const WORKSPACE: Vec3 = Vec3::new(0.45, 0.05, 0.12);

fn look_at(eye: Vec3, target: Vec3) -> RigidTransform {
    let z = (target - eye).normalize();
    let x = Vec3::z().cross(&z).normalize();
    let y = z.cross(&x);
    RigidTransform::new(nalgebra::Matrix3::from_columns(&[x, y, z]), eye)
}

pub fn toy_world() -> ToyWorld {
    let cameras = (0..TOY_CAMERAS)
        .map(|k| {
            let a = 0.4 + 2.0 * PI * k as f64 / TOY_CAMERAS as f64;
            look_at(WORKSPACE + 0.7 * Vec3::new(a.cos(), a.sin(), 0.5), WORKSPACE)
        })
        .collect();
    ToyWorld { robot_to_world: RigidTransform::new(rotation_about(&Vec3::z(), 0.5), Vec3::new(0.9, -0.3, 0.02)), cameras }
}

/// World pose of the object during sequence `seq` at frame `i`: a slow
/// turntable drift.
pub fn toy_object_pose(seq: usize, i: usize) -> RigidTransform {
    let yaw = 0.3 * seq as f64 + 0.004 * i as f64;
    RigidTransform::new(rotation_about(&Vec3::z(), yaw), WORKSPACE + Vec3::new(0.0002 * i as f64, 0.0, 0.0))
}

fn random_unit<R: Rng>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(StandardNormal.sample(rng), StandardNormal.sample(rng), StandardNormal.sample(rng));
        if v.norm() > 1e-6 {
            return v.normalize();
        }
    }
}

fn rig_scene() -> TriangleMesh {
    let mut m = TriangleMesh::cuboid(WORKSPACE + Vec3::new(0.0, 0.0, -0.07), Vec3::new(0.3, 0.2, 0.02));
    m.append(&TriangleMesh::cuboid(WORKSPACE + Vec3::new(-0.05, -0.05, -0.01), Vec3::new(0.06, 0.08, 0.1)));
    m.append(&TriangleMesh::cuboid(WORKSPACE + Vec3::new(0.1, 0.07, -0.03), Vec3::new(0.05, 0.05, 0.06)));
    m.append(&TriangleMesh::sphere(WORKSPACE + Vec3::new(0.08, -0.06, -0.03), 0.03, 8, 12));
    m
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(io_err(path))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(io_err(path))
}

/// Config tuned so the whole pipeline runs in well under a minute.
pub const TOY_CONFIG: &str = include_str!("../../assets/toy_config.toml");

pub const TOY_SPLIT: &str = "train = [\"box\", \"cylinder\"]\nval = []\ntest = [\"mug\"]\n";

/// Writes the toy dataset under `dir`. Output is byte-identical across calls.
pub fn write_toy_dataset(dir: &Path, hand: &KinematicModel) -> Result<()> {
    let world = toy_world();
    let noise = Normal::new(0.0, TOY_CLOUD_NOISE_M).expect("positive std");
    create_dir(&dir.join("objects"))?;
    for name in TOY_OBJECTS {
        ply::write_mesh(&dir.join("objects").join(format!("{name}.ply")), &toy_object_mesh(name).expect("toy object"), PlyFormat::Ascii)?;
    }
    write_text(&dir.join("split.toml"), TOY_SPLIT)?;
    write_text(&dir.join("config.toml"), TOY_CONFIG)?;

    let rig = dir.join("rig");
    create_dir(&rig)?;
    let scene = rig_scene();
    let mut rough = CalibrationFile::default();
    for (c, e) in world.cameras.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(item_seed(TOY_SEED, "rig-view", c as u64));
        let world_pts = object_samples(&scene, 8000, item_seed(TOY_SEED, "rig-samples", c as u64));
        let inv = e.inverse();
        let pts = world_pts.points.iter().map(|p| inv.apply(&(p + Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng))))).collect();
        ply::write_cloud(&rig.join(format!("cam{c}.ply")), &PointCloud::new(pts), PlyFormat::BinaryLittleEndian)?;
        let extrinsic = if c == 0 {
            *e
        } else {
            let p = RigidTransform::from_translation_axis_angle(0.01 * random_unit(&mut rng), 2f64.to_radians() * random_unit(&mut rng));
            e.compose(&p)
        };
        rough.cameras.push(CameraRecord { id: c, timestamp: 0.0, extrinsic });
    }
    let path = rig.join("rough.txt");
    let mut f = std::fs::File::create(&path).map_err(io_err(&path))?;
    rough.write(&mut f).map_err(io_err(&path))?;

    let x = world.robot_to_world;
    let mut rng = ChaCha8Rng::seed_from_u64(item_seed(TOY_SEED, "pairs", 0));
    let pairs: Vec<(RigidTransform, RigidTransform)> = (0..TOY_MOTION_PAIRS)
        .map(|_| {
            let angle = rng.random_range(0.3..0.8);
            let t = Vec3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
            let b = RigidTransform::from_translation_axis_angle(t, angle * random_unit(&mut rng));
            let a = x.compose(&b).compose(&x.inverse());
            let jitter = RigidTransform::from_translation_axis_angle(Vec3::zeros(), TOY_PAIR_NOISE_DEG.to_radians() * random_unit(&mut rng));
            (jitter.compose(&a), b)
        })
        .collect();
    let path = rig.join("pairs.csv");
    let mut f = std::fs::File::create(&path).map_err(io_err(&path))?;
    write_motion_pairs(&mut f, &pairs).map_err(io_err(&path))?;

    let robot_from_world = x.inverse();
    for (s, (object, yaw)) in TOY_SEQUENCES.iter().enumerate() {
        let seq_dir = dir.join("sequences").join(format!("seq_{s:03}"));
        create_dir(&seq_dir)?;
        let mesh = toy_object_mesh(object).expect("toy object");
        let traj = toy_hand_trajectory(hand, object, *yaw);
        let rows: Vec<FrameRow> = traj
            .iter()
            .enumerate()
            .map(|(i, h)| {
                let obj = toy_object_pose(s, i);
                let hand_robot = h.with_root(&robot_from_world.compose(&obj).compose(&h.root_transform()));
                // Round-trip through the stored quaternion so the file is exact.
                let q = UnitQuaternion::new_normalize(*obj.quaternion().quaternion());
                FrameRow { timestamp: i as f64 * TOY_PERIOD_S, hand: hand_robot, object: RigidTransform::from_quaternion(obj.translation, &q) }
            })
            .collect();
        let path = seq_dir.join("frames.csv");
        let mut f = std::fs::File::create(&path).map_err(io_err(&path))?;
        write_frames_csv(&mut f, &rows).map_err(io_err(&path))?;
        for (c, e) in world.cameras.iter().enumerate() {
            let inv = e.inverse();
            let mut cloud = PointCloud::default();
            let mut stamps = Vec::new();
            for (i, r) in rows.iter().enumerate() {
                let idx = ((s * TOY_FRAMES + i) * TOY_CAMERAS + c) as u64;
                let mut rng = ChaCha8Rng::seed_from_u64(item_seed(TOY_SEED, "frame", idx));
                let samples = object_samples(&mesh, TOY_CLOUD_POINTS, item_seed(TOY_SEED, "frame-samples", idx));
                for p in &samples.points {
                    let w = r.object.apply(p) + Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng));
                    cloud.points.push(inv.apply(&w));
                    stamps.push(r.timestamp);
                }
                // One far outlier per camera and frame.
                let outlier = r.object.translation + rng.random_range(0.2..0.3) * random_unit(&mut rng);
                cloud.points.push(inv.apply(&outlier));
                stamps.push(r.timestamp);
            }
            cloud.timestamps = Some(stamps);
            ply::write_cloud(&seq_dir.join(format!("cam{c}.ply")), &cloud, PlyFormat::BinaryLittleEndian)?;
        }
        let clouds: Vec<String> = (0..TOY_CAMERAS).map(|c| format!("\"cam{c}.ply\"")).collect();
        let cams: Vec<String> = (0..TOY_CAMERAS).map(|c| c.to_string()).collect();
        let manifest = format!(
            "object = \"{object}\"\ncameras = [{}]\nframe_period_s = {TOY_PERIOD_S:?}\nmesh = \"../../objects/{object}.ply\"\nframes = \"frames.csv\"\nclouds = [{}]\n",
            cams.join(", "),
            clouds.join(", ")
        );
        write_text(&seq_dir.join("manifest.toml"), &manifest)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graspgen::contact_summary;
    use crate::kinematics::{toy_hand, HandSurfaceSampler};
    use crate::sim::{simulation_displacement, SimParams};

    #[test]
    fn interpolation_hits_endpoints() {
        let hand = toy_hand();
        let g = toy_grasp(&hand, &toy_object_mesh("box").unwrap(), 0.3);
        let a = toy_approach(&g);
        let end = interpolate(&a, &g, 1.0);
        assert_eq!(end.theta, g.theta);
        let (dr, dt) = end.root_transform().distance_to(&g.root_transform());
        assert!(dr < 1e-9 && dt < 1e-12);
        assert_eq!(interpolate(&a, &g, 0.0).theta, a.theta);
    }

    /// Every ground-truth grasp holds its object and touches it with at least
    /// two links.
    #[test]
    fn ground_truth_grasps_are_stable() {
        let hand = toy_hand();
        let sampler = HandSurfaceSampler::new(&hand, 2048, 0).unwrap();
        for (object, yaw) in TOY_SEQUENCES {
            let mesh = toy_object_mesh(object).unwrap();
            let g = toy_grasp(&hand, &mesh, yaw);
            let d = simulation_displacement(&mesh, &RigidTransform::identity(), &g, &hand, &SimParams::default()).unwrap();
            assert!(d.final_cm < TOY_GRASP_DISPLACEMENT_BOUND_CM, "{object} yaw {yaw}: {}", d.final_cm);
            let c = contact_summary(&hand, &sampler, &g, &object_samples(&mesh, 1024, 1), 0.005).unwrap();
            assert!(c.links.len() >= 2, "{object} yaw {yaw}: {} links", c.links.len());
        }
    }
}
