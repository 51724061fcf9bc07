use super::{HandPose, KinematicModel, NUM_JOINTS};
use crate::math::{rotation_about, RigidTransform, Vec3};

/// World transforms produced by forward kinematics.
#[derive(Debug, Clone, PartialEq)]
pub struct FkResult {
    /// Per-link world transform, indexed like `model.links`.
    pub links: Vec<RigidTransform>,
    /// World frame of each joint (parent ∘ origin), indexed like `model.joints`.
    pub joint_frames: Vec<RigidTransform>,
    /// Joint index for each actuated slot, copied from the model.
    actuated: Vec<usize>,
    axes: Vec<Vec3>,
}

impl FkResult {
    pub fn link(&self, model: &KinematicModel, name: &str) -> Option<RigidTransform> {
        model.link_index(name).map(|i| self.links[i])
    }

    /// World positions of the actuated joints, in θ order.
    pub fn joint_positions(&self) -> [Vec3; NUM_JOINTS] {
        std::array::from_fn(|s| self.joint_frames[self.actuated[s]].translation)
    }

    /// World rotation axis of actuated joint `s`.
    pub fn joint_axis(&self, s: usize) -> Vec3 {
        let j = self.actuated[s];
        self.joint_frames[j].rotation * self.axes[j]
    }
}

/// `T_child = T_parent ∘ origin ∘ Rot(axis, θ)`, with the root at `η`.
pub fn forward_kinematics(model: &KinematicModel, pose: &HandPose) -> FkResult {
    let mut links = vec![RigidTransform::identity(); model.links.len()];
    let mut joint_frames = vec![RigidTransform::identity(); model.joints.len()];
    links[model.root] = pose.root_transform();
    for &j in &model.order {
        let joint = &model.joints[j];
        let frame = links[joint.parent].compose(&joint.origin);
        let child = match model.slot[j] {
            Some(s) => frame.compose(&RigidTransform::new(rotation_about(&joint.axis, pose.theta[s]), Vec3::zeros())),
            None => frame,
        };
        joint_frames[j] = frame;
        links[joint.child] = child;
    }
    FkResult { links, joint_frames, actuated: model.actuated.clone(), axes: model.joints.iter().map(|j| j.axis).collect() }
}
