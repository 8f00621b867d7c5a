//! Rigid-body math in a z-up, metric world frame.
//!
//! Rotations are kept as 3x3 orthonormal matrices internally. At the network
//! boundary they are exchanged through the continuous 6-D encoding (the first
//! two matrix columns), which is re-orthonormalized with Gram-Schmidt on decode.

mod alignment;
mod canonical;

pub use alignment::{canonicalize, global_alignment};
pub use canonical::{canonical_frame, canonical_frames, CanonicalFrame};

use nalgebra::{Matrix3, Rotation3, Vector3};
use std::ops::Mul;
use thiserror::Error;

/// Rotation in SO(3), stored as an orthonormal matrix.
pub type Rotation = Rotation3<f64>;

/// Head-local axis that points forward out of the face.
pub const HEAD_FORWARD: Vector3<f64> = Vector3::new(0.0, 1.0, 0.0);

/// World up axis; the floor is the plane z = 0.
pub const WORLD_UP: Vector3<f64> = Vector3::new(0.0, 0.0, 1.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("head forward axis is parallel to gravity at frame {frame} and no previous heading exists")]
    DegenerateHeading { frame: usize },
    #[error("sequence length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
}

/// Encodes a rotation as its first two matrix columns.
pub fn rot6d_encode(r: &Rotation) -> [f64; 6] {
    let m = r.matrix();
    [m[(0, 0)], m[(1, 0)], m[(2, 0)], m[(0, 1)], m[(1, 1)], m[(2, 1)]]
}

/// Decodes a 6-D encoding with Gram-Schmidt. Degenerate inputs fall back to a
/// valid rotation instead of producing NaNs.
pub fn rot6d_decode(v: &[f64; 6]) -> Rotation {
    let a1 = Vector3::new(v[0], v[1], v[2]);
    let a2 = Vector3::new(v[3], v[4], v[5]);
    let b1 = a1.try_normalize(1e-12).unwrap_or_else(Vector3::x);
    let mut b2 = a2 - b1 * b1.dot(&a2);
    if b2.norm() < 1e-12 {
        // pick any axis orthogonal to b1
        let helper = if b1.x.abs() < 0.9 {
            Vector3::x()
        } else {
            Vector3::y()
        };
        b2 = helper - b1 * b1.dot(&helper);
    }
    let b2 = b2.normalize();
    let b3 = b1.cross(&b2);
    Rotation::from_matrix_unchecked(Matrix3::from_columns(&[b1, b2, b3]))
}

/// Rotation about the world z axis.
pub fn yaw_rotation(angle: f64) -> Rotation {
    Rotation::from_axis_angle(&Vector3::z_axis(), angle)
}

/// Checks `RᵀR = I` and `det R = +1` within `tol`.
pub fn is_valid_rotation(r: &Rotation, tol: f64) -> bool {
    let m = r.matrix();
    let ortho = (m.transpose() * m - Matrix3::identity()).abs().max() <= tol;
    ortho && (m.determinant() - 1.0).abs() <= tol
}

/// Element of SE(3): `x ↦ rotation · x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Rotation::identity(), Vector3::zeros())
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(Rotation::identity(), Vector3::new(x, y, z))
    }

    pub fn from_rotation(rotation: Rotation) -> Self {
        Self::new(rotation, Vector3::zeros())
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> RigidTransform {
        let inv = self.rotation.inverse();
        RigidTransform::new(inv, -(inv * self.translation))
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Max absolute deviation between the two rotation matrices and translations.
    pub fn max_deviation(&self, other: &RigidTransform) -> f64 {
        let dr = (self.rotation.matrix() - other.rotation.matrix()).abs().max();
        let dt = (self.translation - other.translation).abs().max();
        dr.max(dt)
    }
}

impl Mul for RigidTransform {
    type Output = RigidTransform;

    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        self.compose(&rhs)
    }
}

impl Mul<&RigidTransform> for &RigidTransform {
    type Output = RigidTransform;

    fn mul(self, rhs: &RigidTransform) -> RigidTransform {
        self.compose(rhs)
    }
}

/// Pose of `curr` expressed in the coordinates of `prev`, so that
/// `prev ∘ result = curr`.
pub fn relative_head_motion(prev: &RigidTransform, curr: &RigidTransform) -> RigidTransform {
    prev.inverse().compose(curr)
}


#[cfg(test)]
mod tests {
    use super::test_util::*;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_6;

    #[test]
    fn rot6d_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let r = random_rotation(&mut rng);
            let back = rot6d_decode(&rot6d_encode(&r));
            assert!((r.matrix() - back.matrix()).norm() < 1e-5);
            assert!(is_valid_rotation(&back, 1e-6));
        }
    }

    #[test]
    fn rot6d_decode_orthonormalizes_noisy_input() {
        let r = rot6d_decode(&[2.0, 0.1, -0.3, 0.4, 1.7, 0.2]);
        assert!(is_valid_rotation(&r, 1e-9));
        let degenerate = rot6d_decode(&[0.0; 6]);
        assert!(is_valid_rotation(&degenerate, 1e-9));
        let parallel = rot6d_decode(&[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]);
        assert!(is_valid_rotation(&parallel, 1e-9));
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let t = random_transform(&mut rng);
            assert!(t.compose(&t.inverse()).max_deviation(&RigidTransform::identity()) < 1e-6);
            assert!(t.inverse().compose(&t).max_deviation(&RigidTransform::identity()) < 1e-6);
        }
    }

    #[test]
    fn relative_motion_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_transform(&mut rng);
        assert!(relative_head_motion(&t, &t).max_deviation(&RigidTransform::identity()) < 1e-9);

        let d = relative_head_motion(
            &RigidTransform::identity(),
            &RigidTransform::from_translation(1.0, 0.0, 0.0),
        );
        assert!(d.max_deviation(&RigidTransform::from_translation(1.0, 0.0, 0.0)) < 1e-12);

        let prev = RigidTransform::from_rotation(yaw_rotation(FRAC_PI_6));
        let curr = RigidTransform::from_rotation(yaw_rotation(50f64.to_radians()))
            .compose(&RigidTransform::from_translation(0.0, 1.0, 0.0));
        let d = relative_head_motion(&prev, &curr);
        assert!(prev.compose(&d).max_deviation(&curr) < 1e-6);
        // 20° of yaw remain once the previous frame is factored out
        let expected = yaw_rotation(20f64.to_radians());
        assert!((d.rotation.matrix() - expected.matrix()).abs().max() < 1e-12);
    }

    #[test]
    fn relative_motion_is_left_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let g = random_transform(&mut rng);
            let a = random_transform(&mut rng);
            let b = random_transform(&mut rng);
            let d0 = relative_head_motion(&a, &b);
            let d1 = relative_head_motion(&g.compose(&a), &g.compose(&b));
            assert!(d0.max_deviation(&d1) < 1e-9);
            assert!(a.compose(&d0).max_deviation(&b) < 1e-6);
        }
    }
}
