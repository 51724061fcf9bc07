//! Rigid-body settle simulation of an object against static geometry, used for
//! the simulation-displacement stability metric and as a pre-execution check.
//!
//! Integration is velocity Verlet with `substeps` sub-intervals per recorded
//! frame; it is exact under constant acceleration. Contacts are penalty
//! springs with damping and regularized Coulomb friction, evaluated both for
//! object surface samples inside static meshes (or below the ground plane)
//! and for static-mesh surface samples inside the object.

mod mass;

pub use mass::{mass_properties, MassProperties};

use std::io::Write;

use nalgebra::UnitQuaternion;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{GeometryError, MeshQuery, TriangleMesh};
use crate::kinematics::{forward_kinematics, posed_link_meshes, HandPose, KinematicModel};
use crate::math::{Mat3, RigidTransform, Vec3};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("non-finite state at step {step}")]
    NonFinite { step: usize },
    #[error("invalid parameters: {0}")]
    Params(String),
}

pub type Result<T> = std::result::Result<T, SimError>;

/// Half-space boundary `{x : normal·x ≥ offset}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: [f64; 3],
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    pub gravity: [f64; 3],
    pub timestep: f64,
    pub duration: f64,
    /// Penalty stiffness per unit contact area (N/m per m²).
    pub stiffness: f64,
    /// Penalty damping per unit contact area (N·s/m per m²).
    pub damping: f64,
    pub friction: f64,
    /// Tangential speed below which friction ramps linearly (m/s).
    pub friction_slip: f64,
    pub mass: f64,
    pub substeps: usize,
    pub object_samples: usize,
    pub static_samples: usize,
    pub ground: Option<Plane>,
    pub seed: u64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            gravity: [0.0, 0.0, -9.81],
            timestep: 1.0 / 240.0,
            duration: 0.5,
            stiffness: 1.0e7,
            damping: 4.0e4,
            friction: 0.8,
            friction_slip: 1e-3,
            mass: 0.2,
            substeps: 8,
            object_samples: 512,
            static_samples: 1024,
            ground: None,
            seed: 0,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SimError::Params(m.to_string()));
        if !(self.timestep > 0.0) || !self.timestep.is_finite() {
            return bad("timestep must be positive");
        }
        if !(self.duration >= self.timestep) {
            return bad("duration must be at least one timestep");
        }
        if !(self.mass > 0.0) || self.stiffness < 0.0 || self.damping < 0.0 || self.friction < 0.0 || !(self.friction_slip > 0.0) {
            return bad("mass, stiffness, damping, friction must be non-negative (mass, slip positive)");
        }
        if self.substeps == 0 || self.object_samples == 0 {
            return bad("substeps and object_samples must be at least 1");
        }
        if !self.gravity.iter().all(|g| g.is_finite()) {
            return bad("gravity must be finite");
        }
        Ok(())
    }

    /// Number of recorded frames.
    pub fn steps(&self) -> usize {
        (self.duration / self.timestep - 1e-9).ceil() as usize
    }

    /// The same parameters with gravity and ground rotated by `r`.
    pub fn rotated(&self, r: &Mat3) -> SimParams {
        let mut out = self.clone();
        out.gravity = (r * Vec3::from(self.gravity)).into();
        out.ground = self.ground.map(|g| Plane { normal: (r * Vec3::from(g.normal)).into(), offset: g.offset });
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidBodyState {
    /// Center of mass in world coordinates.
    pub position: Vec3,
    pub orientation: UnitQuaternion<f64>,
    pub linear_velocity: Vec3,
    pub angular_velocity: Vec3,
    pub mass: f64,
    /// Inertia about the center of mass in the body frame.
    pub inertia: Mat3,
}

impl RigidBodyState {
    fn is_finite(&self) -> bool {
        self.position.iter().chain(self.linear_velocity.iter()).chain(self.angular_velocity.iter()).all(|v| v.is_finite())
            && self.orientation.coords.iter().all(|v| v.is_finite())
    }

    fn world_inertia(&self) -> Mat3 {
        let r = self.orientation.to_rotation_matrix().into_inner();
        r * self.inertia * r.transpose()
    }

    /// Kinetic plus gravitational potential energy.
    pub fn energy(&self, gravity: &Vec3) -> f64 {
        0.5 * self.mass * self.linear_velocity.norm_squared()
            + 0.5 * self.angular_velocity.dot(&(self.world_inertia() * self.angular_velocity))
            - self.mass * gravity.dot(&self.position)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub initial: RigidBodyState,
    /// State after each recorded step.
    pub states: Vec<RigidBodyState>,
    pub timestep: f64,
}

impl Trajectory {
    /// Time-averaged center-of-mass displacement over `[0, T]` (m), by the
    /// trapezoid rule over the initial and recorded states.
    pub fn mean_displacement(&self) -> f64 {
        let d: Vec<f64> = std::iter::once(0.0).chain(self.states.iter().map(|s| (s.position - self.initial.position).norm())).collect();
        let n = d.len() - 1;
        if n == 0 {
            return 0.0;
        }
        (d.iter().sum::<f64>() - 0.5 * (d[0] + d[n])) / n as f64
    }

    pub fn final_displacement(&self) -> f64 {
        self.states.last().map_or(0.0, |s| (s.position - self.initial.position).norm())
    }

    /// `step,x,y,z,qw,qx,qy,qz` rows, step 0 being the initial state.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "step,x,y,z,qw,qx,qy,qz")?;
        for (i, s) in std::iter::once(&self.initial).chain(&self.states).enumerate() {
            let q = s.orientation.quaternion();
            writeln!(w, "{i},{:?},{:?},{:?},{:?},{:?},{:?},{:?}", s.position.x, s.position.y, s.position.z, q.w, q.i, q.j, q.k)?;
        }
        Ok(())
    }
}

struct StaticMesh {
    query: MeshQuery,
    lo: Vec3,
    hi: Vec3,
}

struct Scene {
    statics: Vec<StaticMesh>,
    /// Static surface samples with their per-point area.
    static_points: Vec<(Vec3, f64)>,
    object: MeshQuery,
    /// Object samples in the body frame with their per-point area.
    object_points: Vec<(Vec3, f64)>,
    ground: Option<(Vec3, f64)>,
    params: SimParams,
}

/// Area-weighted surface samples of a set of meshes, each carrying total area / n.
fn area_samples(meshes: &[&TriangleMesh], n: usize, seed: u64) -> Vec<(Vec3, f64)> {
    let mut union = TriangleMesh::default();
    meshes.iter().for_each(|m| union.append(m));
    if union.triangles.is_empty() || n == 0 {
        return Vec::new();
    }
    let share = union.surface_area() / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    union.sample_surface(n, &mut rng).iter().map(|s| (union.point_at(s), share)).collect()
}

impl Scene {
    fn contact_force(&self, depth: f64, n: &Vec3, v_rel: &Vec3, area: f64) -> Option<Vec3> {
        let p = &self.params;
        let vn = v_rel.dot(n);
        let fn_mag = (p.stiffness * depth - p.damping * vn) * area;
        if fn_mag <= 0.0 {
            return None;
        }
        let vt = v_rel - n * vn;
        let speed = vt.norm();
        let ft = if speed > 0.0 { -vt * (p.friction * fn_mag / speed.max(p.friction_slip)) } else { Vec3::zeros() };
        Some(n * fn_mag + ft)
    }

    /// Net external force and torque about the center of mass.
    fn wrench(&self, x: &Vec3, r: &Mat3, v: &Vec3, w: &Vec3) -> (Vec3, Vec3) {
        let mut force = Vec3::from(self.params.gravity) * self.params.mass;
        let mut torque = Vec3::zeros();
        let mut apply = |at: &Vec3, f: Vec3| {
            force += f;
            torque += (at - x).cross(&f);
        };
        for (q, area) in &self.object_points {
            let p = x + r * q;
            let vp = v + w.cross(&(p - x));
            if let Some((n, d)) = self.ground {
                let depth = d - n.dot(&p);
                if depth > 0.0 {
                    if let Some(f) = self.contact_force(depth, &n, &vp, *area) {
                        apply(&p, f);
                    }
                }
            }
            for s in &self.statics {
                if p.x < s.lo.x || p.y < s.lo.y || p.z < s.lo.z || p.x > s.hi.x || p.y > s.hi.y || p.z > s.hi.z {
                    continue;
                }
                let Ok((c, sd)) = s.query.signed_closest(&p) else { continue };
                if sd < 0.0 {
                    let n = (c - p) / -sd;
                    if let Some(f) = self.contact_force(-sd, &n, &vp, *area) {
                        apply(&p, f);
                    }
                }
            }
        }
        if !self.static_points.is_empty() {
            let (lo, hi) = self.object.bounds();
            for (h, area) in &self.static_points {
                let b = r.transpose() * (h - x);
                if b.x < lo.x || b.y < lo.y || b.z < lo.z || b.x > hi.x || b.y > hi.y || b.z > hi.z {
                    continue;
                }
                let Ok((c, sd)) = self.object.signed_closest(&b) else { continue };
                if sd < 0.0 {
                    let n = r * ((b - c) / -sd);
                    let vp = v + w.cross(&(h - x));
                    if let Some(f) = self.contact_force(-sd, &n, &vp, *area) {
                        apply(h, f);
                    }
                }
            }
        }
        (force, torque)
    }
}

/// Simulates the object from rest at `initial_pose` (mesh frame to world)
/// among fixed `static_meshes`. Returns `params.steps()` recorded states.
pub fn settle(object_mesh: &TriangleMesh, initial_pose: &RigidTransform, static_meshes: &[TriangleMesh], params: &SimParams) -> Result<Trajectory> {
    params.validate()?;
    let props = mass_properties(object_mesh, params.mass)?;
    let body_mesh = object_mesh.transformed(&RigidTransform::from_translation(-props.com));
    let object = MeshQuery::watertight(&body_mesh)?;
    let mut statics = Vec::with_capacity(static_meshes.len());
    for m in static_meshes.iter().filter(|m| !m.triangles.is_empty()) {
        let query = MeshQuery::watertight(m)?;
        let (lo, hi) = query.bounds();
        statics.push(StaticMesh { query, lo, hi });
    }
    let static_refs: Vec<&TriangleMesh> = static_meshes.iter().collect();
    let ground = params.ground.map(|g| {
        let n = Vec3::from(g.normal);
        let len = n.norm();
        (n / len, g.offset / len)
    });
    let scene = Scene {
        statics,
        static_points: area_samples(&static_refs, params.static_samples, params.seed ^ 0x5eed),
        object,
        object_points: area_samples(&[&body_mesh], params.object_samples, params.seed),
        ground,
        params: params.clone(),
    };

    let initial = RigidBodyState {
        position: initial_pose.apply(&props.com),
        orientation: initial_pose.quaternion(),
        linear_velocity: Vec3::zeros(),
        angular_velocity: Vec3::zeros(),
        mass: props.mass,
        inertia: props.inertia,
    };
    let inertia_inv = props.inertia.try_inverse().ok_or_else(|| SimError::Params("singular inertia".into()))?;
    let h = params.timestep / params.substeps as f64;
    let m = props.mass;

    let mut x = initial.position;
    let mut q = initial.orientation;
    let mut v = Vec3::zeros();
    let mut l = Vec3::zeros();
    let omega = |q: &UnitQuaternion<f64>, l: &Vec3| {
        let r = q.to_rotation_matrix().into_inner();
        r * inertia_inv * r.transpose() * l
    };
    let mut rot = q.to_rotation_matrix().into_inner();
    let (mut f, mut tau) = scene.wrench(&x, &rot, &v, &Vec3::zeros());
    let mut states = Vec::with_capacity(params.steps());
    for step in 0..params.steps() {
        for _ in 0..params.substeps {
            let v_half = v + f * (0.5 * h / m);
            let l_half = l + tau * (0.5 * h);
            let w_half = omega(&q, &l_half);
            x += v_half * h;
            q = UnitQuaternion::from_scaled_axis(w_half * h) * q;
            q.renormalize();
            rot = q.to_rotation_matrix().into_inner();
            let w_est = omega(&q, &l_half);
            (f, tau) = scene.wrench(&x, &rot, &v_half, &w_est);
            v = v_half + f * (0.5 * h / m);
            l = l_half + tau * (0.5 * h);
        }
        let state = RigidBodyState { position: x, orientation: q, linear_velocity: v, angular_velocity: omega(&q, &l), mass: m, inertia: props.inertia };
        if !state.is_finite() {
            return Err(SimError::NonFinite { step });
        }
        states.push(state);
    }
    Ok(Trajectory { initial, states, timestep: params.timestep })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Displacement {
    /// Time-averaged displacement (cm).
    pub mean_cm: f64,
    /// Displacement at the end of the horizon (cm).
    pub final_cm: f64,
}

/// Holds the hand fixed at `hand_pose` and lets the object settle under gravity.
pub fn simulation_displacement(
    object_mesh: &TriangleMesh,
    object_pose: &RigidTransform,
    hand_pose: &HandPose,
    model: &KinematicModel,
    params: &SimParams,
) -> Result<Displacement> {
    let fk = forward_kinematics(model, hand_pose);
    let links: Vec<TriangleMesh> = posed_link_meshes(model, &fk).into_iter().map(|l| l.mesh).collect();
    let traj = settle(object_mesh, object_pose, &links, params)?;
    Ok(Displacement { mean_cm: traj.mean_displacement() * 100.0, final_cm: traj.final_displacement() * 100.0 })
}
