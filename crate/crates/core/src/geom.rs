//! Rigid transforms, the se(3) pose parameterization, the C-arm projection
//! model and ray triangulation.
//!
//! Conventions: a [`RigidPose`] maps points from a source frame into a target
//! frame, `p' = R p + t`. The camera frame has the X-ray source at the origin
//! and the detector plane at `z = source_to_detector`; pixel coordinates are
//! `(x, y) = (column, row)`.

use nalgebra::{Matrix3, Matrix4, Rotation3, SymmetricEigen, Unit, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;
pub type Vec6 = Vector6<f64>;
pub type Mat3 = Matrix3<f64>;

const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidPose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for RigidPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidPose {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Builds a pose, rejecting rotations that are not proper orthonormal.
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        let gram = rotation.transpose() * rotation - Mat3::identity();
        if gram.amax() > ORTHONORMAL_TOL || (rotation.determinant() - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::invalid("rotation is not orthonormal with det +1"));
        }
        Ok(Self { rotation, translation })
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self {
            rotation: Mat3::identity(),
            translation,
        }
    }

    /// Rotation by `angle` radians about `axis`, followed by `translation`.
    pub fn from_axis_angle(axis: &Vec3, angle: f64, translation: Vec3) -> Self {
        let rotation = if axis.norm() == 0.0 || angle == 0.0 {
            Mat3::identity()
        } else {
            *Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle).matrix()
        };
        Self { rotation, translation }
    }

    /// Rotation about an axis passing through `center`.
    pub fn rotation_about(center: &Vec3, axis: &Vec3, angle: f64) -> Self {
        let r = Self::from_axis_angle(axis, angle, Vec3::zeros());
        Self {
            rotation: r.rotation,
            translation: center - r.rotation * center,
        }
    }

    #[inline]
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidPose) -> RigidPose {
        RigidPose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidPose {
        let rt = self.rotation.transpose();
        RigidPose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Rotation angle in radians (geodesic distance to identity on SO(3)).
    pub fn rotation_angle(&self) -> f64 {
        rotation_angle(&self.rotation)
    }

    pub fn to_matrix4(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_matrix4(m: &Matrix4<f64>) -> Result<Self> {
        let last = m.row(3);
        if last[0] != 0.0 || last[1] != 0.0 || last[2] != 0.0 || last[3] != 1.0 {
            return Err(Error::invalid("last row of a rigid transform must be [0 0 0 1]"));
        }
        Self::new(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }
}

pub fn rotation_angle(r: &Mat3) -> f64 {
    // atan2 form stays accurate near 0 and π, unlike acos of the trace.
    let skew = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let s = 0.5 * skew.norm();
    let c = 0.5 * (r.trace() - 1.0);
    s.atan2(c)
}

#[inline]
pub fn skew(w: &Vec3) -> Mat3 {
    Mat3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Closed-form exponential of a twist `(ω, v)`: Rodrigues for the rotation
/// and the left Jacobian `V` for the translation.
pub fn se3_exp(coords: &Vec6) -> RigidPose {
    let w = Vec3::new(coords[0], coords[1], coords[2]);
    let v = Vec3::new(coords[3], coords[4], coords[5]);
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let (a, b, c) = if theta < 1e-4 {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        (
            theta.sin() / theta,
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    let k = skew(&w);
    let k2 = k * k;
    let rotation = Mat3::identity() + a * k + b * k2;
    let jac = Mat3::identity() + b * k + c * k2;
    RigidPose {
        rotation,
        translation: jac * v,
    }
}

/// Six pose coordinates `(ωx, ωy, ωz, tx, ty, tz)` (rad, mm) applied on the
/// left of `reference` with rotations taken about `center_of_rotation`.
///
/// Both `reference` and the center live in the output (camera/world) frame,
/// so the coordinates are perturbations expressed along the camera axes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseParams {
    pub coords: Vec6,
    pub reference: RigidPose,
    pub center_of_rotation: Vec3,
}

impl PoseParams {
    pub fn new(coords: Vec6, reference: RigidPose, center_of_rotation: Vec3) -> Self {
        Self {
            coords,
            reference,
            center_of_rotation,
        }
    }

    pub fn at(&self, coords: &[f64]) -> RigidPose {
        se3_apply(&PoseParams {
            coords: Vec6::from_column_slice(coords),
            ..*self
        })
    }
}

pub fn se3_apply(params: &PoseParams) -> RigidPose {
    let delta = se3_exp(&params.coords);
    let c = params.center_of_rotation;
    let about_center = RigidPose {
        rotation: delta.rotation,
        translation: delta.translation + c - delta.rotation * c,
    };
    about_center.compose(&params.reference)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PoseError {
    /// Degrees.
    pub rot_total: f64,
    /// Absolute X-Y-Z Euler angles of the residual rotation, degrees.
    pub rot_xyz: [f64; 3],
    /// Millimetres.
    pub trans_total: f64,
    pub trans_xyz: [f64; 3],
}

/// Residual of `estimate ∘ truth⁻¹` with rotations taken about `center`
/// (the true volume centroid in the camera frame).
pub fn pose_error(estimate: &RigidPose, truth: &RigidPose, center: &Vec3) -> PoseError {
    let delta = estimate.compose(&truth.inverse());
    let t = delta.apply(center) - center;
    let rot = Rotation3::from_matrix_unchecked(delta.rotation);
    let (rx, ry, rz) = rot.euler_angles();
    PoseError {
        rot_total: delta.rotation_angle().to_degrees(),
        rot_xyz: [rx.to_degrees().abs(), ry.to_degrees().abs(), rz.to_degrees().abs()],
        trans_total: t.norm(),
        trans_xyz: [t.x.abs(), t.y.abs(), t.z.abs()],
    }
}

/// `pose_b ∘ pose_a⁻¹`: frame-a coordinates into frame-b coordinates.
pub fn relative_pose(pose_a: &RigidPose, pose_b: &RigidPose) -> RigidPose {
    pose_b.compose(&pose_a.inverse())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    /// Normalizes `direction`; fails on a zero direction.
    pub fn new(origin: Vec3, direction: Vec3) -> Result<Self> {
        let n = direction.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::invalid("ray direction must be non-zero and finite"));
        }
        Ok(Self {
            origin,
            direction: direction / n,
        })
    }

    #[inline]
    pub fn point_at(&self, t: f64) -> Vec3 {
        self.origin + t * self.direction
    }

    pub fn transformed(&self, pose: &RigidPose) -> Ray {
        Ray {
            origin: pose.apply(&self.origin),
            direction: pose.apply_vector(&self.direction),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraModel {
    /// mm
    pub source_to_detector: f64,
    pub detector_rows: usize,
    pub detector_cols: usize,
    /// mm per pixel, isotropic
    pub pixel_spacing: f64,
    /// (column, row) in pixels
    pub principal_point: Vec2,
    /// World to camera.
    pub extrinsic: RigidPose,
}

impl CameraModel {
    pub fn new(
        source_to_detector: f64,
        detector_rows: usize,
        detector_cols: usize,
        pixel_spacing: f64,
        principal_point: Vec2,
        extrinsic: RigidPose,
    ) -> Result<Self> {
        if !(source_to_detector > 0.0) || !(pixel_spacing > 0.0) {
            return Err(Error::invalid("source_to_detector and pixel_spacing must be positive"));
        }
        if detector_rows == 0 || detector_cols == 0 {
            return Err(Error::invalid("detector must have at least one pixel"));
        }
        Ok(Self {
            source_to_detector,
            detector_rows,
            detector_cols,
            pixel_spacing,
            principal_point,
            extrinsic,
        })
    }

    /// Detector with the principal point at its center and identity extrinsic.
    pub fn centered(source_to_detector: f64, rows: usize, cols: usize, pixel_spacing: f64) -> Result<Self> {
        let pp = Vec2::new((cols as f64 - 1.0) / 2.0, (rows as f64 - 1.0) / 2.0);
        Self::new(source_to_detector, rows, cols, pixel_spacing, pp, RigidPose::identity())
    }

    /// Focal length in pixels.
    #[inline]
    pub fn focal_px(&self) -> f64 {
        self.source_to_detector / self.pixel_spacing
    }

    /// Geometry of a detector binned by `factor` in each dimension; pixel
    /// `(i, j)` of the result covers full-resolution pixels
    /// `[i·f, i·f + f − 1]` so its center sits at `i·f + (f − 1)/2`.
    pub fn downsampled(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::invalid("downsample factor must be >= 1"));
        }
        let f = factor as f64;
        let off = (f - 1.0) / 2.0;
        let rows = self.detector_rows / factor;
        let cols = self.detector_cols / factor;
        Self::new(
            self.source_to_detector,
            rows,
            cols,
            self.pixel_spacing * f,
            (self.principal_point - Vec2::new(off, off)) / f,
            self.extrinsic,
        )
    }

    pub fn source_in_world(&self) -> Vec3 {
        self.extrinsic.inverse().translation
    }

    /// Projects a camera-frame point.
    #[inline]
    pub fn project_camera_point(&self, q: &Vec3) -> Result<Vec2> {
        if !(q.z > 0.0) {
            return Err(Error::DegenerateDepth { depth: q.z });
        }
        let f = self.focal_px();
        Ok(Vec2::new(
            self.principal_point.x + f * q.x / q.z,
            self.principal_point.y + f * q.y / q.z,
        ))
    }

    pub fn project_point(&self, p_world: &Vec3) -> Result<Vec2> {
        self.project_camera_point(&self.extrinsic.apply(p_world))
    }

    /// Direction (camera frame, not normalized) from the source to a pixel
    /// center on the detector.
    #[inline]
    pub fn pixel_direction_camera(&self, pixel: &Vec2) -> Vec3 {
        Vec3::new(
            (pixel.x - self.principal_point.x) * self.pixel_spacing,
            (pixel.y - self.principal_point.y) * self.pixel_spacing,
            self.source_to_detector,
        )
    }

    pub fn pixel_ray(&self, pixel: &Vec2) -> Ray {
        let to_world = self.extrinsic.inverse();
        let d = self.pixel_direction_camera(pixel);
        Ray {
            origin: to_world.translation,
            direction: to_world.apply_vector(&d.normalize()),
        }
    }

    pub fn contains_pixel(&self, px: &Vec2) -> bool {
        px.x >= -0.5
            && px.y >= -0.5
            && px.x <= self.detector_cols as f64 - 0.5
            && px.y <= self.detector_rows as f64 - 0.5
    }
}

/// Least-squares point minimizing the summed squared perpendicular distance
/// to every ray.
pub fn triangulate(rays: &[Ray]) -> Result<Vec3> {
    if rays.len() < 2 {
        return Err(Error::DegenerateConfiguration(format!(
            "triangulation needs at least 2 rays, got {}",
            rays.len()
        )));
    }
    let mut a = Mat3::zeros();
    let mut b = Vec3::zeros();
    for ray in rays {
        let d = ray.direction.normalize();
        let proj = Mat3::identity() - d * d.transpose();
        a += proj;
        b += proj * ray.origin;
    }
    let eig = SymmetricEigen::new(a);
    let min_eig = eig.eigenvalues.min();
    if min_eig <= 1e-10 * rays.len() as f64 {
        return Err(Error::DegenerateConfiguration(
            "rays are (nearly) parallel; normal equations are rank deficient".into(),
        ));
    }
    a.cholesky()
        .map(|c| c.solve(&b))
        .ok_or_else(|| Error::DegenerateConfiguration("normal equations not positive definite".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn random_pose(seed: [f64; 6]) -> RigidPose {
        se3_exp(&Vec6::from_column_slice(&seed))
    }

    #[test]
    fn zero_coords_give_reference() {
        let reference = random_pose([0.3, -0.2, 0.1, 10.0, -4.0, 700.0]);
        let p = PoseParams::new(Vec6::zeros(), reference, Vec3::new(1.0, 2.0, 3.0));
        let out = se3_apply(&p);
        assert_eq!(out.rotation, reference.rotation);
        assert_eq!(out.translation, reference.translation);
    }

    #[test]
    fn pure_translation() {
        let p = PoseParams::new(
            Vec6::new(0.0, 0.0, 0.0, 1.5, -2.0, 3.0),
            RigidPose::identity(),
            Vec3::new(10.0, 20.0, 30.0),
        );
        let out = se3_apply(&p);
        assert_abs_diff_eq!(out.rotation, Mat3::identity(), epsilon = 1e-15);
        assert_abs_diff_eq!(out.translation, Vec3::new(1.5, -2.0, 3.0), epsilon = 1e-12);
    }

    #[test]
    fn quarter_turn_about_center_fixes_center() {
        let c = Vec3::new(5.0, -3.0, 800.0);
        let p = PoseParams::new(Vec6::new(FRAC_PI_2, 0.0, 0.0, 0.0, 0.0, 0.0), RigidPose::identity(), c);
        let out = se3_apply(&p);
        assert_abs_diff_eq!(out.apply(&c), c, epsilon = 1e-9);
        // y axis through c goes to z axis through c
        let moved = out.apply(&(c + Vec3::new(0.0, 1.0, 0.0)));
        assert_abs_diff_eq!(moved, c + Vec3::new(0.0, 0.0, 1.0), epsilon = 1e-9);
        assert_abs_diff_eq!(out.rotation_angle(), FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn finite_difference_generators() {
        let c = Vec3::new(3.0, -1.0, 600.0);
        let reference = random_pose([0.1, 0.2, -0.3, 5.0, 6.0, 700.0]);
        let params = PoseParams::new(Vec6::zeros(), reference, c);
        let x = Vec3::new(12.0, -40.0, 25.0);
        let y = reference.apply(&x);
        let h = 1e-6;
        for i in 0..6 {
            let mut plus = [0.0; 6];
            let mut minus = [0.0; 6];
            plus[i] = h;
            minus[i] = -h;
            let fd = (params.at(&plus).apply(&x) - params.at(&minus).apply(&x)) / (2.0 * h);
            let analytic = if i < 3 {
                let mut e = Vec3::zeros();
                e[i] = 1.0;
                e.cross(&(y - c))
            } else {
                let mut e = Vec3::zeros();
                e[i - 3] = 1.0;
                e
            };
            assert_abs_diff_eq!(fd, analytic, epsilon = 1e-5);
        }
    }

    #[test]
    fn exp_small_angle_branch_is_continuous() {
        let a = se3_exp(&Vec6::new(0.99e-4, 0.0, 0.0, 1.0, 2.0, 3.0));
        let b = se3_exp(&Vec6::new(1.01e-4, 0.0, 0.0, 1.0, 2.0, 3.0));
        assert!((a.rotation - b.rotation).amax() < 1e-5);
        assert!((a.translation - b.translation).amax() < 1e-5);
    }

    #[test]
    fn pose_error_zero_for_identical() {
        let t = random_pose([0.2, 0.1, 0.0, 1.0, 2.0, 800.0]);
        let e = pose_error(&t, &t, &Vec3::new(0.0, 0.0, 800.0));
        assert_abs_diff_eq!(e.rot_total, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(e.trans_total, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn pose_error_depth_translation() {
        let est = RigidPose::from_translation(Vec3::new(0.0, 0.0, 5.0));
        let e = pose_error(&est, &RigidPose::identity(), &Vec3::new(1.0, 2.0, 3.0));
        assert_abs_diff_eq!(e.trans_total, 5.0, epsilon = 1e-12);
        assert_eq!(e.trans_xyz, [0.0, 0.0, 5.0]);
        assert_abs_diff_eq!(e.rot_total, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn pose_error_ten_degrees_about_x() {
        let truth = random_pose([0.05, -0.1, 0.2, 3.0, -7.0, 750.0]);
        let center = truth.apply(&Vec3::new(4.0, 5.0, 6.0));
        let d = RigidPose::rotation_about(&center, &Vec3::x(), 10f64.to_radians());
        let est = d.compose(&truth);
        let e = pose_error(&est, &truth, &center);
        assert_abs_diff_eq!(e.rot_total, 10.0, epsilon = 1e-9);
        assert_abs_diff_eq!(e.rot_xyz[0], 10.0, epsilon = 1e-9);
        assert_abs_diff_eq!(e.rot_xyz[1], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(e.trans_total, 0.0, epsilon = 1e-9);
    }

    fn desk_camera() -> CameraModel {
        CameraModel::centered(1020.0, 1536, 1536, 0.194).unwrap()
    }

    #[test]
    fn principal_axis_projects_to_principal_point() {
        let cam = desk_camera();
        let px = cam.project_point(&Vec3::new(0.0, 0.0, 400.0)).unwrap();
        assert_abs_diff_eq!(px, cam.principal_point, epsilon = 1e-12);
    }

    #[test]
    fn detector_offset_of_one_spacing_is_one_pixel() {
        let cam = desk_camera();
        let px = cam.project_point(&Vec3::new(0.194, 0.0, 1020.0)).unwrap();
        assert_abs_diff_eq!(px.x - cam.principal_point.x, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(px.y, cam.principal_point.y, epsilon = 1e-12);
    }

    #[test]
    fn behind_source_is_error() {
        let cam = desk_camera();
        assert!(matches!(
            cam.project_point(&Vec3::new(0.0, 0.0, -1.0)),
            Err(Error::DegenerateDepth { .. })
        ));
        assert!(cam.project_point(&Vec3::new(1.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn principal_pixel_ray_is_principal_axis() {
        let cam = desk_camera();
        let ray = cam.pixel_ray(&cam.principal_point);
        assert_abs_diff_eq!(ray.direction, Vec3::z(), epsilon = 1e-15);
        assert_abs_diff_eq!(ray.origin, Vec3::zeros(), epsilon = 1e-15);
    }

    #[test]
    fn distinct_pixels_share_origin() {
        let mut cam = desk_camera();
        cam.extrinsic = random_pose([0.1, -0.2, 0.3, 10.0, 20.0, 30.0]);
        let a = cam.pixel_ray(&Vec2::new(10.0, 20.0));
        let b = cam.pixel_ray(&Vec2::new(900.0, 1200.0));
        assert_abs_diff_eq!(a.origin, b.origin, epsilon = 1e-12);
        assert!(a.direction.cross(&b.direction).norm() > 1e-3);
    }

    #[test]
    fn random_pixel_round_trip() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut cam = desk_camera();
        cam.extrinsic = random_pose([0.3, 0.2, -0.1, -50.0, 20.0, 100.0]);
        for _ in 0..1000 {
            let px = Vec2::new(rng.random_range(0.0..1536.0), rng.random_range(0.0..1536.0));
            let ray = cam.pixel_ray(&px);
            let back = cam.project_point(&ray.point_at(500.0)).unwrap();
            assert!((back - px).norm() < 1e-6, "{px} -> {back}");
        }
    }

    #[test]
    fn downsampled_camera_pixel_centers() {
        let cam = CameraModel::centered(1020.0, 512, 512, 0.582).unwrap();
        let ds = cam.downsampled(8).unwrap();
        assert_eq!((ds.detector_rows, ds.detector_cols), (64, 64));
        // downsampled pixel 0 is centered on full-res pixel 3.5
        let p = Vec3::new(0.3, -0.7, 700.0);
        let full = cam.project_point(&p).unwrap();
        let coarse = ds.project_point(&p).unwrap();
        assert_abs_diff_eq!(coarse * 8.0 + Vec2::new(3.5, 3.5), full, epsilon = 1e-9);
    }

    #[test]
    fn triangulate_perpendicular_rays() {
        let p = Vec3::new(1.0, 2.0, 3.0);
        let rays = [
            Ray::new(p - Vec3::new(5.0, 0.0, 0.0), Vec3::x()).unwrap(),
            Ray::new(p - Vec3::new(0.0, 7.0, 0.0), Vec3::y()).unwrap(),
        ];
        assert_abs_diff_eq!(triangulate(&rays).unwrap(), p, epsilon = 1e-9);
    }

    #[test]
    fn triangulate_skew_rays_midpoint() {
        let rays = [
            Ray::new(Vec3::zeros(), Vec3::x()).unwrap(),
            Ray::new(Vec3::new(0.0, 0.0, 1.0), Vec3::y()).unwrap(),
        ];
        assert_abs_diff_eq!(triangulate(&rays).unwrap(), Vec3::new(0.0, 0.0, 0.5), epsilon = 1e-9);
    }

    #[test]
    fn triangulate_parallel_is_degenerate() {
        let rays = [
            Ray::new(Vec3::zeros(), Vec3::z()).unwrap(),
            Ray::new(Vec3::new(1.0, 0.0, 0.0), Vec3::z()).unwrap(),
        ];
        assert!(matches!(triangulate(&rays), Err(Error::DegenerateConfiguration(_))));
        assert!(triangulate(&rays[..1]).is_err());
    }

    #[test]
    fn relative_pose_identities() {
        let a = random_pose([0.3, -0.1, 0.5, 1.0, 2.0, 3.0]);
        let b = random_pose([-0.2, 0.4, 0.1, -3.0, 9.0, 700.0]);
        assert_abs_diff_eq!(relative_pose(&a, &a).to_matrix4(), Matrix4::identity(), epsilon = 1e-12);
        assert_abs_diff_eq!(
            relative_pose(&RigidPose::identity(), &b).to_matrix4(),
            b.to_matrix4(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            relative_pose(&a, &b).compose(&a).to_matrix4(),
            b.to_matrix4(),
            epsilon = 1e-9
        );
    }

    #[test]
    fn matrix4_round_trip_and_validation() {
        let a = random_pose([0.3, -0.1, 0.5, 1.0, 2.0, 3.0]);
        let back = RigidPose::from_matrix4(&a.to_matrix4()).unwrap();
        assert_eq!(back, a);
        let mut bad = a.to_matrix4();
        bad[(0, 0)] = 2.0;
        assert!(RigidPose::from_matrix4(&bad).is_err());
    }

    fn arb_coords() -> impl Strategy<Value = [f64; 6]> {
        (
            -3.0f64..3.0,
            -3.0f64..3.0,
            -3.0f64..3.0,
            -500.0f64..500.0,
            -500.0f64..500.0,
            -500.0f64..500.0,
        )
            .prop_map(|(a, b, c, d, e, f)| [a, b, c, d, e, f])
    }

    proptest! {
        #[test]
        fn compose_with_inverse_is_identity(c in arb_coords()) {
            let p = random_pose(c);
            let id = p.compose(&p.inverse()).to_matrix4();
            prop_assert!((id - Matrix4::identity()).amax() < 1e-9);
            let r = p.rotation;
            prop_assert!((r.transpose() * r - Mat3::identity()).amax() < 1e-9);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn pose_error_total_is_geodesic(c in arb_coords(), d in arb_coords()) {
            let a = random_pose(c);
            let b = random_pose(d);
            let e = pose_error(&a, &b, &Vec3::zeros());
            let geodesic = Rotation3::from_matrix_unchecked(a.rotation)
                .angle_to(&Rotation3::from_matrix_unchecked(b.rotation));
            prop_assert!((e.rot_total - geodesic.to_degrees()).abs() < 1e-9 * 180.0);
        }

        #[test]
        fn triangulation_is_order_and_scale_invariant(
            pts in proptest::collection::vec((-100.0f64..100.0, -100.0f64..100.0, -100.0f64..100.0), 3),
            scale in 0.1f64..10.0,
        ) {
            let target = Vec3::new(3.0, -4.0, 5.0);
            let rays: Vec<Ray> = pts.iter().map(|&(x, y, z)| {
                let o = Vec3::new(x, y, z + 500.0);
                Ray::new(o, target - o + Vec3::new(0.5, -0.25, 0.1)).unwrap()
            }).collect();
            let base = triangulate(&rays).unwrap();
            let mut reversed = rays.clone();
            reversed.reverse();
            let scaled: Vec<Ray> = rays.iter().map(|r| Ray { origin: r.origin, direction: r.direction * scale }).collect();
            prop_assert!((triangulate(&reversed).unwrap() - base).norm() < 1e-9);
            prop_assert!((triangulate(&scaled).unwrap() - base).norm() < 1e-9);
        }
    }
}
