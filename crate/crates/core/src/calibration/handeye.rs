use nalgebra::{DMatrix, DVector};

use super::{CalibrationError, Result};
use crate::math::{axis_angle_from_rotation, Mat3, RigidTransform, Vec3};

/// Motions rotating less than this carry no axis information.
const MIN_ROTATION: f64 = 1e-6;

/// Solves `A_i X = X B_i` for the fixed transform `X`.
///
/// Rotation: the axis-angle vectors satisfy `α_i = R_X β_i`, solved as an
/// orthogonal Procrustes problem. Translation: `(R_Ai − I) t_X = R_X t_Bi − t_Ai`
/// stacked and solved by least squares.
pub fn hand_eye_solve(motions: &[(RigidTransform, RigidTransform)]) -> Result<RigidTransform> {
    if motions.len() < 2 {
        return Err(CalibrationError::Degenerate(format!("need at least 2 motion pairs, got {}", motions.len())));
    }
    let mut h = Mat3::zeros();
    let mut axes = Mat3::zeros();
    let mut used = 0;
    for (a, b) in motions {
        let alpha = axis_angle_from_rotation(&a.rotation);
        let beta = axis_angle_from_rotation(&b.rotation);
        if alpha.norm() < MIN_ROTATION || beta.norm() < MIN_ROTATION {
            continue;
        }
        h += beta * alpha.transpose();
        let u = beta.normalize();
        axes += u * u.transpose();
        used += 1;
    }
    let spread = axes.symmetric_eigenvalues();
    let mut ev: Vec<f64> = spread.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    if used < 2 || ev[1] < 1e-9 * ev[2].max(f64::MIN_POSITIVE) {
        return Err(CalibrationError::Degenerate("degenerate motions: rotation axes are parallel".into()));
    }
    let svd = h.svd(true, true);
    let u = svd.u.expect("svd u");
    let v = svd.v_t.expect("svd v_t").transpose();
    let mut d = Mat3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = v * d * u.transpose();

    let n = motions.len();
    let mut m = DMatrix::<f64>::zeros(3 * n, 3);
    let mut rhs = DVector::<f64>::zeros(3 * n);
    for (i, (a, b)) in motions.iter().enumerate() {
        let block = a.rotation - Mat3::identity();
        let y: Vec3 = r * b.translation - a.translation;
        for row in 0..3 {
            for col in 0..3 {
                m[(3 * i + row, col)] = block[(row, col)];
            }
            rhs[3 * i + row] = y[row];
        }
    }
    let t = m.svd(true, true).solve(&rhs, 1e-12).map_err(|e| CalibrationError::Degenerate(e.to_string()))?;
    Ok(RigidTransform::new(r, Vec3::new(t[0], t[1], t[2])))
}

/// Mean rotation (rad) and translation (m) residual of `A_i X` against `X B_i`.
pub fn hand_eye_residual(motions: &[(RigidTransform, RigidTransform)], x: &RigidTransform) -> (f64, f64) {
    let n = motions.len().max(1) as f64;
    motions.iter().fold((0.0, 0.0), |(ra, rt), (a, b)| {
        let (da, dt) = a.compose(x).distance_to(&x.compose(b));
        (ra + da / n, rt + dt / n)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn synthetic_motions(x: &RigidTransform, n: usize, noise_deg: f64, seed: u64) -> Vec<(RigidTransform, RigidTransform)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unit = |rng: &mut ChaCha8Rng| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        (0..n)
            .map(|_| {
                let b = RigidTransform::from_translation_axis_angle(unit(&mut rng) * 0.3, unit(&mut rng).normalize() * rng.random_range(0.3..1.5));
                let a = x.compose(&b).compose(&x.inverse());
                let jitter = RigidTransform::from_translation_axis_angle(Vec3::zeros(), unit(&mut rng).normalize() * noise_deg.to_radians());
                (jitter.compose(&a), b)
            })
            .collect()
    }

    #[test]
    fn identity_when_motions_agree() {
        let m = synthetic_motions(&RigidTransform::identity(), 5, 0.0, 3);
        let x = hand_eye_solve(&m).unwrap();
        let (a, t) = x.distance_to(&RigidTransform::identity());
        assert!(a < 1e-9 && t < 1e-9);
    }

    #[test]
    fn recovers_known_transform_under_noise() {
        let truth = RigidTransform::from_translation_axis_angle(Vec3::new(0.05, -0.1, 0.3), Vec3::new(0.3, 1.1, -0.4));
        let m = synthetic_motions(&truth, 30, 0.1, 9);
        let x = hand_eye_solve(&m).unwrap();
        let (a, t) = x.distance_to(&truth);
        assert!(a.to_degrees() < 0.2 && t < 1e-3, "{} deg {t} m", a.to_degrees());
        assert!(x.is_orthonormal(1e-6));
    }

    #[test]
    fn left_invariance() {
        let truth = RigidTransform::from_translation_axis_angle(Vec3::new(0.05, -0.1, 0.3), Vec3::new(0.3, 1.1, -0.4));
        let z = RigidTransform::from_translation_axis_angle(Vec3::new(-0.2, 0.4, 0.1), Vec3::new(-0.6, 0.2, 0.9));
        let m = synthetic_motions(&truth, 30, 0.1, 4);
        let x = hand_eye_solve(&m).unwrap();
        let moved: Vec<_> = m.iter().map(|(a, b)| (z.compose(a).compose(&z.inverse()), *b)).collect();
        let xz = hand_eye_solve(&moved).unwrap();
        let (a, t) = xz.distance_to(&z.compose(&x));
        assert!(a < 1e-6 && t < 1e-6);
    }

    #[test]
    fn parallel_axes_and_too_few() {
        let axis = Vec3::new(0.0, 0.0, 1.0);
        let m: Vec<_> = (1..6)
            .map(|k| {
                let b = RigidTransform::from_translation_axis_angle(Vec3::new(0.1 * k as f64, 0.0, 0.0), axis * (0.2 * k as f64));
                (b, b)
            })
            .collect();
        let err = hand_eye_solve(&m).unwrap_err();
        assert!(err.to_string().contains("degenerate motions"));
        assert!(hand_eye_solve(&m[..1]).is_err());
    }
}
