use crate::geometry::{GeometryError, TriangleMesh};
use crate::math::{Mat3, Vec3};

/// Uniform-density mass properties of a closed mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassProperties {
    pub mass: f64,
    pub volume: f64,
    /// Center of mass in the mesh frame.
    pub com: Vec3,
    /// Inertia about the center of mass, mesh-frame axes.
    pub inertia: Mat3,
}

/// Sums signed tetrahedra from the origin to each outward-facing triangle.
pub fn mass_properties(mesh: &TriangleMesh, mass: f64) -> Result<MassProperties, GeometryError> {
    if let Some(msg) = mesh.watertight_violation() {
        return Err(GeometryError::NotWatertight(msg));
    }
    // Second moment ∫ x xᵀ of the canonical tetrahedron (0, e1, e2, e3), times 120.
    let canon = Mat3::new(2.0, 1.0, 1.0, 1.0, 2.0, 1.0, 1.0, 1.0, 2.0) / 120.0;
    let mut volume = 0.0;
    let mut first = Vec3::zeros();
    let mut second = Mat3::zeros();
    for t in &mesh.triangles {
        let a = Mat3::from_columns(&[mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]]);
        let det = a.determinant();
        volume += det / 6.0;
        first += (a.column(0) + a.column(1) + a.column(2)) * (det / 24.0);
        second += a * canon * a.transpose() * det;
    }
    if !(volume > 0.0) {
        return Err(GeometryError::InvalidMesh("mesh encloses no positive volume".into()));
    }
    let com = first / volume;
    let central = second - com * com.transpose() * volume;
    let density = mass / volume;
    let inertia = (Mat3::identity() * central.trace() - central) * density;
    Ok(MassProperties { mass, volume, com, inertia })
}
