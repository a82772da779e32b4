//! Pose from paired 3D/2D landmarks by damped Gauss–Newton on se(3).

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geom::{se3_exp, CameraModel, RigidPose, Vec2, Vec3, Vec6};

pub type Landmarks3 = BTreeMap<String, Vec3>;
pub type Landmarks2 = BTreeMap<String, Vec2>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LandmarkInitOptions {
    /// Initial depth of the landmark centroid along the principal axis (mm);
    /// estimated from the 3D/2D landmark spreads when unset.
    pub default_depth: Option<f64>,
    pub max_iter: usize,
}

impl Default for LandmarkInitOptions {
    fn default() -> Self {
        Self {
            default_depth: None,
            max_iter: 100,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LandmarkFit {
    /// Volume frame to world.
    pub pose: RigidPose,
    /// Root-mean-square reprojection error (pixels).
    pub rms_px: f64,
    pub iterations: usize,
}

fn residuals(pose: &RigidPose, pts: &[(Vec3, Vec2)], cam: &CameraModel) -> Option<DVector<f64>> {
    let mut r = DVector::zeros(2 * pts.len());
    for (k, (p, q)) in pts.iter().enumerate() {
        let u = cam.project_point(&pose.apply(p)).ok()?;
        r[2 * k] = u.x - q.x;
        r[2 * k + 1] = u.y - q.y;
    }
    Some(r)
}

/// Levenberg–Marquardt from one start. Poses are updated on the left in
/// the camera frame: `E⁻¹ ∘ exp(ξ) ∘ E ∘ pose`.
fn refine(
    start: RigidPose,
    pts: &[(Vec3, Vec2)],
    cam: &CameraModel,
    max_iter: usize,
) -> Option<(RigidPose, f64, usize)> {
    let ext = cam.extrinsic;
    let ext_inv = ext.inverse();
    let step = |pose: &RigidPose, xi: &Vec6| ext_inv.compose(&se3_exp(xi)).compose(&ext).compose(pose);
    let mut pose = start;
    let mut r = residuals(&pose, pts, cam)?;
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    let mut it = 0;
    while it < max_iter {
        it += 1;
        let mut j = DMatrix::zeros(r.len(), 6);
        for a in 0..6 {
            let h = if a < 3 { 1e-6 } else { 1e-4 };
            let mut e = Vec6::zeros();
            e[a] = h;
            let rp = residuals(&step(&pose, &e), pts, cam)?;
            e[a] = -h;
            let rm = residuals(&step(&pose, &e), pts, cam)?;
            j.set_column(a, &((rp - rm) / (2.0 * h)));
        }
        let jtj = j.transpose() * &j;
        let jtr = j.transpose() * &r;
        let mut improved = false;
        while lambda < 1e12 {
            let mut a = jtj.clone();
            for d in 0..6 {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let delta = -chol.solve(&jtr);
            let xi = Vec6::from_iterator(delta.iter().copied());
            let cand = step(&pose, &xi);
            if let Some(rc) = residuals(&cand, pts, cam) {
                let c = rc.norm_squared();
                if c < cost {
                    let rel = (cost - c) / cost.max(1e-300);
                    pose = cand;
                    r = rc;
                    cost = c;
                    lambda = (lambda * 0.3).max(1e-12);
                    improved = true;
                    if rel < 1e-14 || xi.norm() < 1e-12 {
                        return Some((pose, cost, it));
                    }
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    Some((pose, cost, it))
}

/// Pose minimizing squared reprojection error of landmarks paired by name.
/// Several starts rotated about the camera's vertical axis are tried and the
/// best converged fit is kept.
pub fn landmark_init(
    landmarks3d: &Landmarks3,
    landmarks2d: &Landmarks2,
    camera: &CameraModel,
    opts: &LandmarkInitOptions,
) -> Result<LandmarkFit> {
    let pts: Vec<(Vec3, Vec2)> = landmarks3d
        .iter()
        .filter_map(|(name, p)| landmarks2d.get(name).map(|q| (*p, *q)))
        .collect();
    if pts.len() < 4 {
        return Err(Error::invalid(format!(
            "landmark initialization needs >= 4 paired landmarks, got {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let c3 = pts.iter().fold(Vec3::zeros(), |a, (p, _)| a + p) / n;
    let c2 = pts.iter().fold(Vec2::zeros(), |a, (_, q)| a + q) / n;
    let depth = match opts.default_depth {
        Some(d) if d > 0.0 => d,
        Some(d) => return Err(Error::invalid(format!("default depth {d} must be positive"))),
        None => {
            let s3 = (pts.iter().map(|(p, _)| (p - c3).norm_squared()).sum::<f64>() / n).sqrt();
            let s2 = (pts.iter().map(|(_, q)| (q - c2).norm_squared()).sum::<f64>() / n).sqrt();
            if s2 > 0.0 {
                // a roughly frontal point cloud spans s2 ≈ f·s3·√(2/3) / depth
                camera.focal_px() * s3 * (2.0f64 / 3.0).sqrt() / s2
            } else {
                camera.source_to_detector * 0.8
            }
        }
    };
    let ext_inv = camera.extrinsic.inverse();
    let mut best: Option<(RigidPose, f64, usize)> = None;
    for yaw_deg in [0.0f64, -30.0, 30.0, -60.0, 60.0] {
        let rot = RigidPose::from_axis_angle(&Vec3::y(), yaw_deg.to_radians(), Vec3::zeros());
        // centroid onto the principal axis at `depth`, in the camera frame
        let t = Vec3::new(0.0, 0.0, depth) - rot.rotation * c3;
        let start = ext_inv.compose(&RigidPose {
            rotation: rot.rotation,
            translation: t,
        });
        if let Some(fit) = refine(start, &pts, camera, opts.max_iter) {
            if best.as_ref().is_none_or(|b| fit.1 < b.1) {
                best = Some(fit);
            }
        }
    }
    let (pose, cost, iterations) =
        best.ok_or_else(|| Error::NonConvergence("no landmark fit kept all points in front of the source".into()))?;
    Ok(LandmarkFit {
        pose,
        rms_px: (cost / n).sqrt(),
        iterations,
    })
}
