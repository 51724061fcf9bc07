use std::collections::{HashMap, VecDeque};
use std::path::Path;

use serde::Deserialize;

use super::{KinematicsError, Result, NUM_JOINTS};
use crate::geometry::{ply, TriangleMesh};
use crate::math::{RigidTransform, Vec3};

/// Bundled toy hand document.
pub const TOY_HAND_TOML: &str = include_str!("../../assets/toy_hand.toml");

// Model document schema (TOML):
//
//   name = "..."
//   [[link]]   name, optional mesh = { box = [sx,sy,sz], center = [x,y,z] } | { ply = "rel/path.ply" }
//   [[joint]]  name, parent, child, origin = [x,y,z], rotation = [axis-angle] (optional),
//              kind = "revolute" (default) | "fixed", axis = [x,y,z], limits = [lo, hi]
//
// The child link frame is parent ∘ Trans(origin) ∘ Rot(rotation) ∘ Rot(axis, θ).
// The axis is expressed in the joint frame, i.e. after the fixed origin.
// Actuated joints are the revolute joints, in document order.

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Doc {
    name: Option<String>,
    #[serde(default, rename = "link")]
    links: Vec<RawLink>,
    #[serde(default, rename = "joint")]
    joints: Vec<RawJoint>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLink {
    name: String,
    mesh: Option<RawMesh>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMesh {
    #[serde(rename = "box")]
    box_size: Option<[f64; 3]>,
    center: Option<[f64; 3]>,
    ply: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawJoint {
    name: String,
    parent: String,
    child: String,
    #[serde(default)]
    kind: Option<String>,
    origin: Option<[f64; 3]>,
    rotation: Option<[f64; 3]>,
    axis: Option<[f64; 3]>,
    limits: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointKind {
    Revolute,
    Fixed,
}

#[derive(Debug, Clone)]
pub struct Link {
    pub name: String,
    pub parent_joint: Option<usize>,
    /// Watertight mesh in the link frame.
    pub mesh: Option<TriangleMesh>,
}

#[derive(Debug, Clone)]
pub struct Joint {
    pub name: String,
    pub kind: JointKind,
    pub parent: usize,
    pub child: usize,
    pub origin: RigidTransform,
    /// Unit axis in the joint frame.
    pub axis: Vec3,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone)]
pub struct KinematicModel {
    pub name: String,
    pub links: Vec<Link>,
    pub joints: Vec<Joint>,
    pub root: usize,
    /// Joint indices ordered so every parent link is resolved before its children.
    pub(crate) order: Vec<usize>,
    /// Joint index of each actuated slot of θ.
    pub(crate) actuated: Vec<usize>,
    /// Actuated slot of each joint, if any.
    pub(crate) slot: Vec<Option<usize>>,
}

impl KinematicModel {
    pub fn link_index(&self, name: &str) -> Option<usize> {
        self.links.iter().position(|l| l.name == name)
    }

    /// The joint driving slot `j` of θ.
    pub fn actuated_joint(&self, j: usize) -> &Joint {
        &self.joints[self.actuated[j]]
    }

    pub fn joint_names(&self) -> Vec<&str> {
        self.actuated.iter().map(|&j| self.joints[j].name.as_str()).collect()
    }

    pub fn limits(&self, j: usize) -> (f64, f64) {
        let joint = self.actuated_joint(j);
        (joint.lower, joint.upper)
    }

    /// Number of links on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        let mut depth = vec![1usize; self.links.len()];
        for &j in &self.order {
            let joint = &self.joints[j];
            depth[joint.child] = depth[joint.parent] + 1;
        }
        depth.into_iter().max().unwrap_or(0)
    }

    /// True when `link` is `ancestor` or lies below it.
    pub fn is_descendant(&self, link: usize, ancestor: usize) -> bool {
        let mut cur = link;
        loop {
            if cur == ancestor {
                return true;
            }
            match self.links[cur].parent_joint {
                Some(j) => cur = self.joints[j].parent,
                None => return false,
            }
        }
    }

    pub fn has_geometry(&self) -> bool {
        self.links.iter().any(|l| l.mesh.is_some())
    }
}

/// The bundled five-finger toy hand.
pub fn toy_hand() -> KinematicModel {
    load_model(TOY_HAND_TOML, None).expect("bundled toy hand is valid")
}

pub fn load_model_file(path: &Path) -> Result<KinematicModel> {
    let text = std::fs::read_to_string(path)?;
    load_model(&text, path.parent())
}

/// Parses and validates a model document. Relative PLY mesh paths resolve
/// against `base_dir` (or the working directory).
pub fn load_model(document: &str, base_dir: Option<&Path>) -> Result<KinematicModel> {
    let doc: Doc = toml::from_str(document).map_err(|e| KinematicsError::Parse(e.to_string()))?;

    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut links = Vec::with_capacity(doc.links.len());
    for raw in &doc.links {
        if index.insert(raw.name.as_str(), links.len()).is_some() {
            return Err(KinematicsError::DuplicateLink(raw.name.clone()));
        }
        let mesh = raw.mesh.as_ref().map(|m| build_mesh(&raw.name, m, base_dir)).transpose()?;
        links.push(Link { name: raw.name.clone(), parent_joint: None, mesh });
    }

    let mut joint_names: HashMap<&str, ()> = HashMap::new();
    let mut joints = Vec::with_capacity(doc.joints.len());
    for raw in &doc.joints {
        if joint_names.insert(raw.name.as_str(), ()).is_some() {
            return Err(KinematicsError::DuplicateJoint(raw.name.clone()));
        }
        let lookup = |link: &str| {
            index.get(link).copied().ok_or_else(|| KinematicsError::UnknownLink { joint: raw.name.clone(), link: link.to_string() })
        };
        let parent = lookup(&raw.parent)?;
        let child = lookup(&raw.child)?;
        let kind = match raw.kind.as_deref() {
            None | Some("revolute") => JointKind::Revolute,
            Some("fixed") => JointKind::Fixed,
            Some(other) => return Err(KinematicsError::Parse(format!("joint `{}`: unknown kind `{other}`", raw.name))),
        };
        let origin = RigidTransform::from_translation_axis_angle(
            Vec3::from(raw.origin.unwrap_or([0.0; 3])),
            Vec3::from(raw.rotation.unwrap_or([0.0; 3])),
        );
        let (axis, lower, upper) = match kind {
            JointKind::Fixed => (Vec3::z(), 0.0, 0.0),
            JointKind::Revolute => {
                let axis = Vec3::from(raw.axis.ok_or_else(|| KinematicsError::Parse(format!("joint `{}` has no axis", raw.name)))?);
                let norm = axis.norm();
                if !((norm - 1.0).abs() <= 1e-9) {
                    return Err(KinematicsError::NonUnitAxis { joint: raw.name.clone(), norm });
                }
                let [lo, hi] = raw.limits.ok_or_else(|| KinematicsError::Parse(format!("joint `{}` has no limits", raw.name)))?;
                if !(lo < hi) {
                    return Err(KinematicsError::InvalidLimits(raw.name.clone()));
                }
                (axis, lo, hi)
            }
        };
        if links[child].parent_joint.is_some() {
            return Err(KinematicsError::Cycle(links[child].name.clone()));
        }
        links[child].parent_joint = Some(joints.len());
        joints.push(Joint { name: raw.name.clone(), kind, parent, child, origin, axis, lower, upper });
    }

    let roots: Vec<usize> = (0..links.len()).filter(|&l| links[l].parent_joint.is_none()).collect();
    if roots.len() != 1 {
        // With n links and one parent per non-root, zero roots means a cycle.
        return Err(if roots.is_empty() && !links.is_empty() {
            KinematicsError::Cycle(links[0].name.clone())
        } else {
            KinematicsError::Roots(roots.len())
        });
    }
    let root = roots[0];

    let mut children: Vec<Vec<usize>> = vec![Vec::new(); links.len()];
    for (j, joint) in joints.iter().enumerate() {
        children[joint.parent].push(j);
    }
    let mut order = Vec::with_capacity(joints.len());
    let mut reached = vec![false; links.len()];
    reached[root] = true;
    let mut queue = VecDeque::from([root]);
    while let Some(l) = queue.pop_front() {
        for &j in &children[l] {
            order.push(j);
            let c = joints[j].child;
            reached[c] = true;
            queue.push_back(c);
        }
    }
    if let Some(l) = reached.iter().position(|r| !r) {
        return Err(KinematicsError::Cycle(links[l].name.clone()));
    }

    let actuated: Vec<usize> = (0..joints.len()).filter(|&j| joints[j].kind == JointKind::Revolute).collect();
    if actuated.len() != NUM_JOINTS {
        return Err(KinematicsError::JointCount(actuated.len()));
    }
    let mut slot = vec![None; joints.len()];
    for (s, &j) in actuated.iter().enumerate() {
        slot[j] = Some(s);
    }

    Ok(KinematicModel {
        name: doc.name.unwrap_or_else(|| "hand".to_string()),
        links,
        joints,
        root,
        order,
        actuated,
        slot,
    })
}

fn build_mesh(link: &str, raw: &RawMesh, base_dir: Option<&Path>) -> Result<TriangleMesh> {
    let wrap = |source| KinematicsError::Mesh { link: link.to_string(), source };
    let mesh = match (&raw.box_size, &raw.ply) {
        (Some(size), None) => TriangleMesh::cuboid(Vec3::from(raw.center.unwrap_or([0.0; 3])), Vec3::from(*size)),
        (None, Some(rel)) => {
            let path = base_dir.map(|d| d.join(rel)).unwrap_or_else(|| rel.into());
            let mut mesh = ply::read_mesh(&path).map_err(wrap)?;
            if let Some(c) = raw.center {
                mesh.vertices.iter_mut().for_each(|v| *v += Vec3::from(c));
            }
            mesh
        }
        _ => return Err(KinematicsError::Parse(format!("link `{link}`: mesh needs exactly one of `box` or `ply`"))),
    };
    if let Some(msg) = mesh.watertight_violation() {
        return Err(wrap(crate::geometry::GeometryError::NotWatertight(msg)));
    }
    Ok(mesh)
}
