//! Rotation, viewing-direction and similarity-transform math shared by the
//! merge and mining stages.

use nalgebra::{DMatrix, Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::colmap::CameraPose;

pub type Vec3 = Vector3<f64>;

/// Tolerance on `|direction| = 1` and `|q| = 1`.
pub const UNIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlignError {
    #[error("need at least 3 correspondences, got {0}")]
    InsufficientOverlap(usize),
    #[error("correspondence count mismatch: {src} source vs {dst} target points")]
    LengthMismatch { src: usize, dst: usize },
    #[error("degenerate configuration: point set is collinear or coincident")]
    DegenerateConfiguration,
}

/// Camera position and world-frame optical axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewState {
    pub position: Vec3,
    pub direction: Vec3,
}

impl ViewState {
    pub fn new(position: Vec3, direction: Vec3) -> Self {
        Self {
            position,
            direction: direction.normalize(),
        }
    }

    pub fn scaled(&self, scale: f64) -> Self {
        Self {
            position: self.position * scale,
            direction: self.direction,
        }
    }
}

/// World-frame camera center `C = -R^T t` and optical axis `R^T (0,0,1)`.
pub fn view_state(pose: &CameraPose) -> ViewState {
    let r_inv = pose.rotation.inverse();
    ViewState {
        position: -(r_inv * pose.translation),
        direction: r_inv * Vec3::z(),
    }
}

/// Angle in degrees between two unit vectors, in `[0, 180]`.
///
/// Evaluated as `atan2(|a x b|, a . b)`, which equals the arccos of the
/// clamped dot product but stays accurate near 0 and 180 degrees.
pub fn angular_change(a: &Vec3, b: &Vec3) -> f64 {
    let dot = a.dot(b).clamp(-1.0, 1.0);
    a.cross(b).norm().atan2(dot).to_degrees()
}

/// `x -> scale * R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vec3,
}

impl Default for SimilarityTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: UnitQuaternion::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(scale: f64, rotation: UnitQuaternion<f64>, translation: Vec3) -> Self {
        assert!(scale > 0.0, "similarity scale must be positive");
        Self {
            scale,
            rotation,
            translation,
        }
    }

    pub fn apply_point(&self, p: &Vec3) -> Vec3 {
        self.scale * (self.rotation * p) + self.translation
    }

    pub fn apply_direction(&self, d: &Vec3) -> Vec3 {
        self.rotation * d
    }

    pub fn inverse(&self) -> Self {
        let rot_inv = self.rotation.inverse();
        let scale = 1.0 / self.scale;
        Self {
            scale,
            rotation: rot_inv,
            translation: -(scale * (rot_inv * self.translation)),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            scale: self.scale * other.scale,
            rotation: self.rotation * other.rotation,
            translation: self.scale * (self.rotation * other.translation) + self.translation,
        }
    }

    /// Re-expresses a world-to-camera pose in the transformed world frame.
    ///
    /// The camera frame absorbs the scale, so the new pose has
    /// `R' = R Q^T` and `t' = s t - R' u`, which moves the camera center to
    /// `s Q C + u` and leaves the optical axis rotated by `Q`.
    pub fn apply_pose(&self, pose: &CameraPose) -> CameraPose {
        let rotation = pose.rotation * self.rotation.inverse();
        let translation = self.scale * pose.translation - rotation * self.translation;
        CameraPose {
            rotation,
            translation,
            ..pose.clone()
        }
    }

    pub fn apply_view(&self, view: &ViewState) -> ViewState {
        ViewState {
            position: self.apply_point(&view.position),
            direction: self.apply_direction(&view.direction),
        }
    }
}

/// Root-mean-square distance between `transform(src_i)` and `dst_i`.
pub fn rms_residual(transform: &SimilarityTransform, src: &[Vec3], dst: &[Vec3]) -> f64 {
    if src.is_empty() {
        return 0.0;
    }
    let sum: f64 = src
        .iter()
        .zip(dst)
        .map(|(s, d)| (transform.apply_point(s) - d).norm_squared())
        .sum();
    (sum / src.len() as f64).sqrt()
}

/// Least-squares similarity transform mapping `src` onto `dst` (Umeyama).
///
/// Reflections are suppressed so the returned rotation always has
/// determinant +1.
pub fn umeyama_align(src: &[Vec3], dst: &[Vec3]) -> Result<SimilarityTransform, AlignError> {
    if src.len() != dst.len() {
        return Err(AlignError::LengthMismatch {
            src: src.len(),
            dst: dst.len(),
        });
    }
    let n = src.len();
    if n < 3 {
        return Err(AlignError::InsufficientOverlap(n));
    }
    let inv_n = 1.0 / n as f64;
    let mean_src = src.iter().fold(Vec3::zeros(), |acc, p| acc + p) * inv_n;
    let mean_dst = dst.iter().fold(Vec3::zeros(), |acc, p| acc + p) * inv_n;

    let mut cov = Matrix3::zeros();
    let mut var_src = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let sc = s - mean_src;
        let dc = d - mean_dst;
        cov += dc * sc.transpose();
        var_src += sc.norm_squared();
    }
    cov *= inv_n;
    var_src *= inv_n;
    if var_src <= f64::EPSILON {
        return Err(AlignError::DegenerateConfiguration);
    }

    // The fixed-size 3x3 SVD squares the matrix internally and loses half the
    // digits on near-collinear overlaps; the general routine does not.
    let svd = DMatrix::from_column_slice(3, 3, cov.as_slice()).svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (
            Matrix3::from_column_slice(u.as_slice()),
            Matrix3::from_column_slice(v_t.as_slice()),
        ),
        _ => return Err(AlignError::DegenerateConfiguration),
    };
    let singular = [
        svd.singular_values[0],
        svd.singular_values[1],
        svd.singular_values[2],
    ];
    let mut sorted = singular;
    sorted.sort_by(|a, b| b.total_cmp(a));
    // Collinear sources leave only one significant singular value.
    if sorted[0] <= 0.0 || sorted[1] <= 1e-10 * sorted[0] {
        return Err(AlignError::DegenerateConfiguration);
    }

    let mut s = Matrix3::identity();
    if u.determinant() * v_t.determinant() < 0.0 {
        // Flip the axis paired with the smallest singular value.
        let smallest = (0..3)
            .min_by(|&a, &b| singular[a].total_cmp(&singular[b]))
            .unwrap_or(2);
        s[(smallest, smallest)] = -1.0;
    }
    let r = u * s * v_t;
    let trace_ds: f64 = (0..3).map(|i| singular[i] * s[(i, i)]).sum();
    let scale = trace_ds / var_src;
    if !(scale.is_finite() && scale > 0.0) {
        return Err(AlignError::DegenerateConfiguration);
    }
    let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    let translation = mean_dst - scale * (rotation * mean_src);
    Ok(SimilarityTransform {
        scale,
        rotation,
        translation,
    })
}

/// Unit viewing direction on the horizontal plane for a yaw angle in degrees,
/// measured from +Z towards +X.
pub fn yaw_direction(yaw_deg: f64) -> Vec3 {
    let y = yaw_deg.to_radians();
    Vec3::new(y.sin(), 0.0, y.cos())
}

/// World-to-camera rotation for a camera whose optical axis points along
/// `yaw_direction(yaw_deg)` with its y axis aligned to world +Y.
pub fn yaw_camera_rotation(yaw_deg: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vector3::y_axis(), yaw_deg.to_radians()).inverse()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pose(rotation: UnitQuaternion<f64>, translation: Vec3) -> CameraPose {
        CameraPose {
            image_id: 1,
            frame_index: 0,
            rotation,
            translation,
            camera_id: 1,
            name: "000000.jpg".into(),
        }
    }

    #[test]
    fn identity_pose_looks_down_z() {
        let v = view_state(&pose(UnitQuaternion::identity(), Vec3::zeros()));
        assert_eq!(v.position, Vec3::zeros());
        assert_eq!(v.direction, Vec3::z());
    }

    #[test]
    fn yawed_camera_direction_matches_rotation_matrix() {
        // Camera yawed +90 deg about +Y: camera-to-world is Ry(90).
        let ry = Matrix3::new(0.0, 0.0, 1.0, 0.0, 1.0, 0.0, -1.0, 0.0, 0.0);
        let expected = ry * Vec3::z();
        let world_to_cam = UnitQuaternion::from_matrix(&ry.transpose());
        let v = view_state(&pose(world_to_cam, Vec3::zeros()));
        assert!((v.direction - expected).norm() < 1e-9);
        assert!((v.direction - Vec3::x()).norm() < 1e-9);
        assert!((yaw_camera_rotation(90.0).inverse() * Vec3::z() - Vec3::x()).norm() < 1e-12);
    }

    #[test]
    fn camera_center_is_minus_rt_t() {
        let v = view_state(&pose(UnitQuaternion::identity(), Vec3::new(0.0, 0.0, -2.0)));
        assert_eq!(v.position, Vec3::new(0.0, 0.0, 2.0));
    }

    #[test]
    fn angular_change_basics() {
        assert_eq!(angular_change(&Vec3::x(), &Vec3::x()), 0.0);
        assert!((angular_change(&Vec3::x(), &Vec3::y()) - 90.0).abs() < 1e-12);
        assert!((angular_change(&Vec3::x(), &-Vec3::x()) - 180.0).abs() < 1e-12);
        let a = yaw_direction(0.0);
        let b = yaw_direction(45.0);
        assert!((angular_change(&a, &b) - 45.0).abs() < 1e-9);
    }

    #[test]
    fn umeyama_identity_on_equal_sets() {
        let pts = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 2.0, 1.0),
        ];
        let t = umeyama_align(&pts, &pts).unwrap();
        assert!((t.scale - 1.0).abs() < 1e-9);
        assert!(t.rotation.angle() < 1e-9);
        assert!(t.translation.norm() < 1e-9);
    }

    #[test]
    fn umeyama_rejects_two_points() {
        let pts = vec![Vec3::zeros(), Vec3::x()];
        assert_eq!(
            umeyama_align(&pts, &pts),
            Err(AlignError::InsufficientOverlap(2))
        );
    }

    #[test]
    fn umeyama_rejects_collinear() {
        let pts: Vec<Vec3> = (0..5).map(|i| Vec3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert_eq!(
            umeyama_align(&pts, &pts),
            Err(AlignError::DegenerateConfiguration)
        );
    }

    #[test]
    fn umeyama_recovers_planar_transform_without_reflection() {
        let src = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
        ];
        let truth = SimilarityTransform::new(
            2.5,
            UnitQuaternion::from_euler_angles(0.3, -0.2, 1.1),
            Vec3::new(1.0, -2.0, 0.5),
        );
        let dst: Vec<Vec3> = src.iter().map(|p| truth.apply_point(p)).collect();
        let t = umeyama_align(&src, &dst).unwrap();
        assert!((t.scale - 2.5).abs() < 1e-9);
        assert!(t.rotation.angle_to(&truth.rotation) < 1e-9);
        assert!(rms_residual(&t, &src, &dst) < 1e-9);
    }

    #[test]
    fn inverse_and_compose() {
        let a = SimilarityTransform::new(
            2.0,
            UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3),
            Vec3::new(1.0, 2.0, 3.0),
        );
        let b = SimilarityTransform::new(
            0.5,
            UnitQuaternion::from_euler_angles(-0.4, 0.0, 0.9),
            Vec3::new(-1.0, 0.0, 4.0),
        );
        let p = Vec3::new(0.3, -0.7, 2.0);
        assert!((a.inverse().apply_point(&a.apply_point(&p)) - p).norm() < 1e-9);
        assert!((a.compose(&b).apply_point(&p) - a.apply_point(&b.apply_point(&p))).norm() < 1e-12);
    }

    fn arb_unit() -> impl Strategy<Value = Vec3> {
        (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
            .prop_filter("nonzero", |(x, y, z)| x * x + y * y + z * z > 1e-3)
            .prop_map(|(x, y, z)| Vec3::new(x, y, z).normalize())
    }

    fn arb_rotation() -> impl Strategy<Value = UnitQuaternion<f64>> {
        (-3.1f64..3.1, -1.5f64..1.5, -3.1f64..3.1)
            .prop_map(|(r, p, y)| UnitQuaternion::from_euler_angles(r, p, y))
    }

    proptest! {
        #[test]
        fn angular_change_symmetric_and_rotation_invariant(
            a in arb_unit(), b in arb_unit(), q in arb_rotation()
        ) {
            let ab = angular_change(&a, &b);
            prop_assert!((0.0..=180.0).contains(&ab));
            prop_assert!((ab - angular_change(&b, &a)).abs() < 1e-12);
            prop_assert!((ab - angular_change(&(q * a), &(q * b))).abs() < 1e-6);
            prop_assert!(angular_change(&a, &a) < 1e-6);
        }

        #[test]
        fn pose_transform_commutes_with_view_state(
            q in arb_rotation(), r in arb_rotation(),
            t in (-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0),
            u in (-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0),
            s in 0.1f64..10.0,
        ) {
            let p = pose(q, Vec3::new(t.0, t.1, t.2));
            let sim = SimilarityTransform::new(s, r, Vec3::new(u.0, u.1, u.2));
            let lhs = view_state(&sim.apply_pose(&p));
            let rhs = sim.apply_view(&view_state(&p));
            prop_assert!((lhs.position - rhs.position).norm() < 1e-9 * (1.0 + rhs.position.norm()));
            prop_assert!((lhs.direction - rhs.direction).norm() < 1e-9);
        }
    }
}
