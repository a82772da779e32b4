//! Simulated fluoroscopy views and perturbed landmark initializations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{pose_error, CameraModel, PoseError, RigidPose, Vec2, Vec3};
use crate::image::{Image2D, Volume3D};
use crate::projector::{project_drr, ProjectionRequest};
use crate::registration::{landmark_init, LandmarkInitOptions, Landmarks2, Landmarks3};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FluoroOptions {
    /// Source to isocenter distance along the principal axis (mm).
    pub source_to_isocenter: f64,
    pub first_rotation_deg: f64,
    pub first_translation_mm: f64,
    pub orbit_min_deg: f64,
    pub orbit_max_deg: f64,
    pub view_rotation_deg: f64,
    pub view_translation_mm: f64,
    /// Standard deviation of additive noise on transmitted intensity
    /// `exp(-line integral)`; zero keeps the plain DRR.
    pub noise_sigma: f64,
    /// Ray-march step (mm); half the smallest voxel spacing when unset.
    pub step_length: Option<f64>,
}

impl Default for FluoroOptions {
    fn default() -> Self {
        Self {
            source_to_isocenter: 800.0,
            first_rotation_deg: 3.0,
            first_translation_mm: 10.0,
            orbit_min_deg: 15.0,
            orbit_max_deg: 30.0,
            view_rotation_deg: 2.0,
            view_translation_mm: 5.0,
            noise_sigma: 1e-3,
            step_length: None,
        }
    }
}

impl FluoroOptions {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            self.first_rotation_deg,
            self.first_translation_mm,
            self.view_rotation_deg,
            self.view_translation_mm,
            self.noise_sigma,
        ];
        if nonneg.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::invalid("fluoro perturbations and noise must be >= 0"));
        }
        if !(self.source_to_isocenter > 0.0) {
            return Err(Error::invalid("source_to_isocenter must be positive"));
        }
        if !(0.0 <= self.orbit_min_deg && self.orbit_min_deg <= self.orbit_max_deg) {
            return Err(Error::invalid("need 0 <= orbit_min_deg <= orbit_max_deg"));
        }
        if matches!(self.step_length, Some(s) if !(s > 0.0)) {
            return Err(Error::invalid("step_length must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SimulatedView {
    pub image: Image2D,
    pub camera: CameraModel,
    /// Volume frame to world.
    pub true_pose: RigidPose,
    /// Signed orbital rotation relative to the first view (degrees).
    pub orbit_deg: f64,
}

/// Anterior-posterior pose: volume axes aligned with the camera, volume
/// center on the principal axis at the isocenter.
pub fn ap_pose(camera: &CameraModel, source_to_isocenter: f64) -> RigidPose {
    camera
        .extrinsic
        .inverse()
        .compose(&RigidPose::from_translation(Vec3::new(0.0, 0.0, source_to_isocenter)))
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    let n = Normal::new(0.0, 1.0).unwrap();
    loop {
        let v = Vec3::new(n.sample(rng), n.sample(rng), n.sample(rng));
        if let Some(u) = v.try_normalize(1e-9) {
            return u;
        }
    }
}

/// Rotation about `center` by up to `max_deg` around a random axis followed
/// by a translation of up to `max_mm` in a random direction.
fn random_rigid(rng: &mut ChaCha8Rng, center: &Vec3, max_deg: f64, max_mm: f64) -> RigidPose {
    let axis = random_unit(rng);
    let angle = rng.random_range(0.0..=1.0) * max_deg.to_radians();
    let dir = random_unit(rng);
    let t = dir * (rng.random_range(0.0..=1.0) * max_mm);
    RigidPose::from_translation(t).compose(&RigidPose::rotation_about(center, &axis, angle))
}

/// Intensity image from a line-integral image with transmitted-intensity noise.
pub fn add_log_noise(drr: &Image2D, sigma: f64, seed: u64) -> Image2D {
    if sigma == 0.0 {
        return drr.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, sigma).unwrap();
    let mut out = drr.clone();
    for v in out.data.iter_mut() {
        let i = (-*v).exp() + n.sample(&mut rng);
        *v = -i.max(1e-6).ln();
    }
    out
}

/// Three views: a perturbed AP view, then the AP view orbited about the
/// isocenter's vertical axis in opposite directions, each with a further
/// small perturbation. Orbits are applied to the object so every view shares
/// `base_camera`.
pub fn simulate_fluoro(
    volume: &Volume3D,
    base_camera: &CameraModel,
    opts: &FluoroOptions,
    seed: u64,
) -> Result<Vec<SimulatedView>> {
    opts.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let iso_cam = Vec3::new(0.0, 0.0, opts.source_to_isocenter);
    let iso = base_camera.extrinsic.inverse().apply(&iso_cam);
    let up = base_camera.extrinsic.inverse().apply_vector(&Vec3::y());
    let ap = ap_pose(base_camera, opts.source_to_isocenter);
    let first = random_rigid(&mut rng, &iso, opts.first_rotation_deg, opts.first_translation_mm).compose(&ap);
    let a2 = rng.random_range(opts.orbit_min_deg..=opts.orbit_max_deg);
    let a3 = -rng.random_range(opts.orbit_min_deg..=opts.orbit_max_deg);
    let mut poses = vec![(first, 0.0)];
    for a in [a2, a3] {
        let orbit = RigidPose::rotation_about(&iso, &up, a.to_radians());
        let p = random_rigid(&mut rng, &iso, opts.view_rotation_deg, opts.view_translation_mm);
        poses.push((p.compose(&orbit).compose(&first), a));
    }
    let noise_seeds: Vec<u64> = (0..3).map(|_| rng.random()).collect();
    let step = opts.step_length.unwrap_or(0.5 * volume.geometry.min_spacing());
    poses
        .into_iter()
        .zip(noise_seeds)
        .map(|((pose, orbit_deg), ns)| {
            let req = ProjectionRequest::new(*base_camera, pose, step, 1)?;
            let drr = project_drr(volume, &req)?;
            Ok(SimulatedView {
                image: add_log_noise(&drr, opts.noise_sigma, ns),
                camera: *base_camera,
                true_pose: pose,
                orbit_deg,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitNoise {
    /// Gaussian noise on 3D landmarks (mm).
    pub sigma_3d_mm: f64,
    /// Gaussian noise on 2D picks (pixels).
    pub sigma_2d_px: f64,
}

impl Default for InitNoise {
    fn default() -> Self {
        Self {
            sigma_3d_mm: 2.0,
            sigma_2d_px: 3.0,
        }
    }
}

/// Offsets beyond these bounds mark a trial for exclusion.
pub const EXCLUDE_ROTATION_DEG: f64 = 20.0;
pub const EXCLUDE_TRANSLATION_MM: f64 = 100.0;

pub fn exceeds_exclusion(e: &PoseError) -> bool {
    e.rot_total > EXCLUDE_ROTATION_DEG || e.trans_total > EXCLUDE_TRANSLATION_MM
}

/// Exact detector positions of the landmarks that project inside it.
pub fn project_landmarks(landmarks: &Landmarks3, pose: &RigidPose, camera: &CameraModel) -> Landmarks2 {
    landmarks
        .iter()
        .filter_map(|(k, p)| {
            let q = camera.project_point(&pose.apply(p)).ok()?;
            camera.contains_pixel(&q).then(|| (k.clone(), q))
        })
        .collect()
}

/// Simulated manual initialization: noisy 3D landmarks and noisy 2D picks
/// of their true projections, fed to the landmark pose solver.
pub fn perturb_init(
    true_pose: &RigidPose,
    landmarks: &Landmarks3,
    camera: &CameraModel,
    noise: &InitNoise,
    seed: u64,
) -> Result<RigidPose> {
    if !(noise.sigma_3d_mm >= 0.0 && noise.sigma_2d_px >= 0.0) {
        return Err(Error::invalid("initialization noise must be >= 0"));
    }
    let picks = project_landmarks(landmarks, true_pose, camera);
    if picks.len() < 4 {
        return Err(Error::invalid(format!(
            "only {} landmarks project inside the detector, need >= 4",
            picks.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n3 = Normal::new(0.0, noise.sigma_3d_mm).unwrap();
    let n2 = Normal::new(0.0, noise.sigma_2d_px).unwrap();
    let mut noisy3 = Landmarks3::new();
    let mut noisy2 = Landmarks2::new();
    for (k, q) in &picks {
        let p = landmarks[k];
        noisy3.insert(
            k.clone(),
            p + Vec3::new(n3.sample(&mut rng), n3.sample(&mut rng), n3.sample(&mut rng)),
        );
        noisy2.insert(k.clone(), q + Vec2::new(n2.sample(&mut rng), n2.sample(&mut rng)));
    }
    Ok(landmark_init(&noisy3, &noisy2, camera, &LandmarkInitOptions::default())?.pose)
}

/// Pose error with rotations taken about a volume-frame point (mapped into
/// the world by the true pose).
pub fn pose_offset(estimate: &RigidPose, truth: &RigidPose, center_in_volume: &Vec3) -> PoseError {
    pose_error(estimate, truth, &truth.apply(center_in_volume))
}

#[cfg(test)]
mod tests {
    use super::super::phantom::generate_phantom;
    use super::*;

    fn small_camera() -> CameraModel {
        CameraModel::centered(1020.0, 64, 64, 4.656).unwrap()
    }

    fn quiet() -> FluoroOptions {
        FluoroOptions {
            first_rotation_deg: 0.0,
            first_translation_mm: 0.0,
            view_rotation_deg: 0.0,
            view_translation_mm: 0.0,
            noise_sigma: 0.0,
            ..FluoroOptions::default()
        }
    }

    #[test]
    fn unperturbed_first_view_is_ap_drr() {
        let p = generate_phantom([64, 64, 64], 4.0, 1).unwrap();
        let cam = small_camera();
        let views = simulate_fluoro(&p.volume, &cam, &quiet(), 3).unwrap();
        assert_eq!(views.len(), 3);
        let ap = ap_pose(&cam, 800.0);
        assert_eq!(views[0].true_pose, ap);
        let req = ProjectionRequest::new(cam, ap, 2.0, 1).unwrap();
        assert_eq!(views[0].image.data, project_drr(&p.volume, &req).unwrap().data);
        assert!(views[1].orbit_deg > 0.0 && views[2].orbit_deg < 0.0);
        for v in &views[1..] {
            let a = v.orbit_deg.abs();
            assert!((15.0..=30.0).contains(&a));
            let rel = v.true_pose.compose(&views[0].true_pose.inverse());
            assert!((rel.rotation_angle().to_degrees() - a).abs() < 1e-9);
        }
    }

    #[test]
    fn views_are_deterministic() {
        let p = generate_phantom([64, 64, 64], 4.0, 1).unwrap();
        let cam = small_camera();
        let opts = FluoroOptions::default();
        let a = simulate_fluoro(&p.volume, &cam, &opts, 8).unwrap();
        let b = simulate_fluoro(&p.volume, &cam, &opts, 8).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.image.data, y.image.data);
            assert_eq!(x.true_pose, y.true_pose);
        }
        let first = pose_error(&a[0].true_pose, &ap_pose(&cam, 800.0), &Vec3::new(0.0, 0.0, 800.0));
        assert!(first.rot_total <= 3.0 + 1e-9 && first.trans_total <= 10.0 + 1e-9);
    }

    #[test]
    fn noise_keeps_images_finite() {
        let drr = Image2D::from_fn(8, 8, 1.0, |r, c| (r + c) as f64 * 0.5);
        let noisy = add_log_noise(&drr, 0.01, 1);
        assert!(noisy.data.iter().all(|v| v.is_finite()));
        assert!(noisy.data.iter().zip(&drr.data).any(|(a, b)| a != b));
        assert_eq!(add_log_noise(&drr, 0.0, 1).data, drr.data);
    }

    #[test]
    fn noiseless_init_recovers_pose() {
        let p = generate_phantom([64, 64, 64], 4.0, 1).unwrap();
        let cam = CameraModel::centered(1020.0, 512, 512, 0.582).unwrap();
        let truth = RigidPose::from_axis_angle(&Vec3::new(0.3, 1.0, 0.0), 0.2, Vec3::new(5.0, -3.0, 805.0));
        let zero = InitNoise {
            sigma_3d_mm: 0.0,
            sigma_2d_px: 0.0,
        };
        let init = perturb_init(&truth, &p.landmarks, &cam, &zero, 1).unwrap();
        let e = pose_offset(&init, &truth, &p.hip_center);
        assert!(e.rot_total < 0.1 && e.trans_total < 0.5, "{e:?}");
    }

    #[test]
    fn default_noise_calibration() {
        let p = generate_phantom([64, 64, 64], 4.0, 1).unwrap();
        let cam = CameraModel::centered(1020.0, 512, 512, 0.582).unwrap();
        let opts = FluoroOptions::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (mut rot, mut trans) = (Vec::new(), Vec::new());
        let iso = Vec3::new(0.0, 0.0, opts.source_to_isocenter);
        for k in 0..200u64 {
            let truth = random_rigid(&mut rng, &iso, 20.0, 10.0).compose(&ap_pose(&cam, opts.source_to_isocenter));
            let init = perturb_init(&truth, &p.landmarks, &cam, &InitNoise::default(), k).unwrap();
            let e = pose_offset(&init, &truth, &p.hip_center);
            rot.push(e.rot_total);
            trans.push(e.trans_total);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (r, t) = (mean(&rot), mean(&trans));
        eprintln!("init offsets: {r:.2} deg, {t:.2} mm");
        assert!((1.0..=4.0).contains(&r), "{r}");
        assert!((13.5 / 2.0..=27.0).contains(&t), "{t}");
    }

    #[test]
    fn exclusion_thresholds() {
        let mut e = pose_error(&RigidPose::identity(), &RigidPose::identity(), &Vec3::zeros());
        assert!(!exceeds_exclusion(&e));
        e.rot_total = 20.5;
        assert!(exceeds_exclusion(&e));
        e.rot_total = 1.0;
        e.trans_total = 100.5;
        assert!(exceeds_exclusion(&e));
    }
}
