//! Rotations, similarity transforms, weighted Umeyama estimation, and
//! pose/focal recovery from pointmaps.

mod pose;
mod umeyama;

pub use pose::{principal_point, recover_focal, recover_relative_pose};
pub use umeyama::{alignment_objective, umeyama, UmeyamaMode};

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// Orthonormality/determinant tolerance for accepting a rotation matrix.
pub const ROTATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GeomError {
    #[error("umeyama: point lists differ in length ({src} vs {dst})")]
    LengthMismatch { src: usize, dst: usize },
    #[error("umeyama: weight list length {got} does not match {expected} point pairs")]
    WeightLength { expected: usize, got: usize },
    #[error("umeyama: need at least 3 point pairs, got {got}")]
    TooFewPoints { got: usize },
    #[error("umeyama: negative weight {value} at index {index}")]
    NegativeWeight { index: usize, value: f64 },
    #[error("umeyama: total weight must be positive")]
    ZeroTotalWeight,
    #[error("degenerate correspondence set: {reason}")]
    Degenerate { reason: String },
    #[error("matrix is not a rotation: {what}")]
    NotARotation { what: String },
    #[error("scale {scale} is not positive and finite")]
    BadScale { scale: f64 },
    #[error("{ctx}: need at least {need} usable pixels, got {got}")]
    TooFewValidPixels {
        ctx: &'static str,
        need: usize,
        got: usize,
    },
}

fn rotation_defect(r: &Matrix3<f64>) -> f64 {
    let rtr = r.transpose() * r;
    let mut defect: f64 = (r.determinant() - 1.0).abs();
    for i in 0..3 {
        for j in 0..3 {
            let target = if i == j { 1.0 } else { 0.0 };
            defect = defect.max((rtr[(i, j)] - target).abs());
        }
    }
    defect
}

fn check_rotation(r: &Matrix3<f64>) -> Result<(), GeomError> {
    let defect = rotation_defect(r);
    if !defect.is_finite() || defect > ROTATION_TOL {
        return Err(GeomError::NotARotation {
            what: format!("orthonormality defect {defect:.3e} exceeds {ROTATION_TOL:.0e}"),
        });
    }
    Ok(())
}

/// Similarity transform, canonical form `p' = s * R * p + t`.
///
/// The other common parameterization `p' = s * (R * p + t_shift)` describes
/// the same group; the shift relates to the canonical translation by
/// `t_shift = t / s` (see [`Sim3::shift_before_scale`]).
#[derive(Debug, Clone, PartialEq)]
pub struct Sim3 {
    scale: f64,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Sim3 {
    pub fn new(
        scale: f64,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self, GeomError> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(GeomError::BadScale { scale });
        }
        check_rotation(&rotation)?;
        Ok(Self {
            scale,
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Translation expressed in the scale-after-shift parameterization
    /// `p' = s * (R * p + t_shift)`, i.e. `t / s`.
    pub fn shift_before_scale(&self) -> Vector3<f64> {
        self.translation / self.scale
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }

    pub fn apply_points(&self, pts: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        pts.iter().map(|p| self.apply(p)).collect()
    }

    /// Composition applying `other` first, then `self`.
    pub fn compose(&self, other: &Sim3) -> Sim3 {
        Sim3 {
            scale: self.scale * other.scale,
            rotation: self.rotation * other.rotation,
            translation: self.scale * (self.rotation * other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Sim3 {
        let rot_t = self.rotation.transpose();
        Sim3 {
            scale: 1.0 / self.scale,
            rotation: rot_t,
            translation: -(rot_t * self.translation) / self.scale,
        }
    }
}

/// Camera-to-reference rigid pose: `p_ref = R * p_cam + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidPose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidPose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeomError> {
        check_rotation(&rotation)?;
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> RigidPose {
        let rot_t = self.rotation.transpose();
        RigidPose {
            rotation: rot_t,
            translation: -(rot_t * self.translation),
        }
    }

    /// `self ∘ other`: apply `other`, then `self`.
    pub fn compose(&self, other: &RigidPose) -> RigidPose {
        RigidPose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Relative pose `b ∘ a⁻¹`, mapping camera-a coordinates to camera-b.
    pub fn relative(a: &RigidPose, b: &RigidPose) -> RigidPose {
        b.compose(&a.inverse())
    }
}

/// Geodesic distance between two rotations in degrees, clamped to [0, 180].
pub fn rotation_geodesic_deg(r1: &Matrix3<f64>, r2: &Matrix3<f64>) -> f64 {
    let cos = ((r1.transpose() * r2).trace() - 1.0) / 2.0;
    cos.clamp(-1.0, 1.0).acos().to_degrees()
}

/// Angle between translation directions in degrees.
///
/// Near-zero vectors have no direction: two near-zero translations compare
/// as 0 degrees, while exactly one near-zero translation yields the
/// conservative 180-degree penalty.
pub fn translation_angle_deg(t1: &Vector3<f64>, t2: &Vector3<f64>) -> f64 {
    const EPS: f64 = 1e-9;
    let (n1, n2) = (t1.norm(), t2.norm());
    match (n1 < EPS, n2 < EPS) {
        (true, true) => 0.0,
        (true, false) | (false, true) => 180.0,
        (false, false) => {
            let cos = t1.dot(t2) / (n1 * n2);
            cos.clamp(-1.0, 1.0).acos().to_degrees()
        }
    }
}


#[cfg(test)]
mod tests {
    use super::test_util::*;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_leaves_points_unchanged() {
        let t = Sim3::identity();
        let p = Vector3::new(1.0, -2.0, 3.0);
        assert_eq!(t.apply(&p), p);
    }

    #[test]
    fn pure_scale_doubles() {
        let t = Sim3::new(2.0, Matrix3::identity(), Vector3::zeros()).unwrap();
        assert_eq!(t.apply(&Vector3::new(1.0, 1.0, 1.0)), Vector3::new(2.0, 2.0, 2.0));
    }

    #[test]
    fn apply_then_inverse_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = Sim3::new(
            1.7,
            random_rotation(&mut rng),
            Vector3::new(0.3, -2.0, 1.1),
        )
        .unwrap();
        let inv = t.inverse();
        for _ in 0..50 {
            let p = Vector3::new(
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
            );
            let back = inv.apply(&t.apply(&p));
            assert!((back - p).norm() < 1e-12);
        }
    }

    #[test]
    fn compose_with_identity_is_identity_of_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let t = Sim3::new(0.6, random_rotation(&mut rng), Vector3::new(1.0, 2.0, 3.0)).unwrap();
        let composed = Sim3::identity().compose(&t);
        assert!((composed.scale() - t.scale()).abs() < 1e-15);
        assert!((composed.rotation() - t.rotation()).norm() < 1e-15);
        assert!((composed.translation() - t.translation()).norm() < 1e-15);
        let inv_id = Sim3::identity().inverse();
        assert_eq!(inv_id.scale(), 1.0);
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let t = Sim3::new(
                rng.gen_range(0.2..4.0),
                random_rotation(&mut rng),
                Vector3::new(
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                ),
            )
            .unwrap();
            let id = t.compose(&t.inverse());
            assert!((id.scale() - 1.0).abs() < 1e-12);
            assert!((id.rotation() - Matrix3::identity()).norm() < 1e-12);
            assert!(id.translation().norm() < 1e-12);
        }
    }

    #[test]
    fn compose_applies_right_operand_first() {
        let scale = Sim3::new(2.0, Matrix3::identity(), Vector3::zeros()).unwrap();
        let shift = Sim3::new(1.0, Matrix3::identity(), Vector3::new(1.0, 0.0, 0.0)).unwrap();
        // scale ∘ shift: p -> 2(p + (1,0,0))
        let t = scale.compose(&shift);
        assert_eq!(t.apply(&Vector3::zeros()), Vector3::new(2.0, 0.0, 0.0));
    }

    #[test]
    fn rejects_bad_scale_and_bad_rotation() {
        assert!(matches!(
            Sim3::new(0.0, Matrix3::identity(), Vector3::zeros()),
            Err(GeomError::BadScale { .. })
        ));
        assert!(matches!(
            Sim3::new(1.0, Matrix3::identity() * 2.0, Vector3::zeros()),
            Err(GeomError::NotARotation { .. })
        ));
    }

    #[test]
    fn geodesic_basics() {
        let id = Matrix3::identity();
        assert_eq!(rotation_geodesic_deg(&id, &id), 0.0);
        let rz90 = rot_axis_deg(Vector3::z(), 90.0);
        assert!((rotation_geodesic_deg(&rz90, &id) - 90.0).abs() < 1e-12);
    }

    #[test]
    fn geodesic_recovers_planted_perturbation() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let base = random_rotation(&mut rng);
            let axis = random_unit(&mut rng);
            let pert =
                nalgebra::Rotation3::from_axis_angle(&axis, 7.3_f64.to_radians()).into_inner();
            let err = rotation_geodesic_deg(&base, &(pert * base));
            assert!((err - 7.3).abs() < 1e-6, "got {err}");
        }
    }

    #[test]
    fn geodesic_symmetry_and_triangle_inequality() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let a = random_rotation(&mut rng);
            let b = random_rotation(&mut rng);
            let c = random_rotation(&mut rng);
            let ab = rotation_geodesic_deg(&a, &b);
            let ba = rotation_geodesic_deg(&b, &a);
            assert!((ab - ba).abs() < 1e-9);
            let bc = rotation_geodesic_deg(&b, &c);
            let ac = rotation_geodesic_deg(&a, &c);
            assert!(ac <= ab + bc + 1e-9);
        }
    }

    #[test]
    fn translation_angle_conventions() {
        let z = Vector3::new(0.0, 0.0, 1.0);
        assert_eq!(translation_angle_deg(&z, &z), 0.0);
        let x = Vector3::new(1.0, 0.0, 0.0);
        let y = Vector3::new(0.0, 1.0, 0.0);
        assert!((translation_angle_deg(&x, &y) - 90.0).abs() < 1e-12);
        // Scale invariance: collinear vectors are at zero angle.
        let t = Vector3::new(0.3, -0.4, 0.8);
        assert_eq!(translation_angle_deg(&t, &(5.0 * t)), 0.0);
        // Near-zero handling.
        let zero = Vector3::zeros();
        assert_eq!(translation_angle_deg(&zero, &zero), 0.0);
        assert_eq!(translation_angle_deg(&zero, &x), 180.0);
    }

    #[test]
    fn relative_pose_convention() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = RigidPose::new(random_rotation(&mut rng), Vector3::new(1.0, 0.0, 0.0)).unwrap();
        let b = RigidPose::new(random_rotation(&mut rng), Vector3::new(0.0, 2.0, 0.0)).unwrap();
        let rel = RigidPose::relative(&a, &b);
        // rel ∘ a = b: rel carries camera a onto camera b in the reference
        // frame, and its rotation is R_b * R_a^T.
        let p = Vector3::new(0.1, 0.2, 0.3);
        assert!((rel.apply(&a.apply(&p)) - b.apply(&p)).norm() < 1e-12);
        assert!((rel.rotation() - b.rotation() * a.rotation().transpose()).norm() < 1e-12);
    }
}
