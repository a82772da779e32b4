//! Forward projection by fixed-step ray marching: DRRs (line integrals of
//! attenuation), maximum-intensity projections of the weight volume, the
//! mismatch mask and the occluding-boundary edge map of a label set.
//!
//! Every detector pixel is independent; rows are evaluated in parallel.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{CameraModel, Mat3, RigidPose, Vec2, Vec3};
use crate::image::{nonzero_bounds, trilinear_index, Image2D, LabelVolume, Volume3D, VolumeGeometry};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionRequest {
    /// Full-resolution detector geometry.
    pub camera: CameraModel,
    /// Volume frame to world.
    pub object_pose: RigidPose,
    /// Ray-march step in mm.
    pub step_length: f64,
    pub downsample_factor: usize,
}

impl ProjectionRequest {
    pub fn new(
        camera: CameraModel,
        object_pose: RigidPose,
        step_length: f64,
        downsample_factor: usize,
    ) -> Result<Self> {
        if !(step_length > 0.0) {
            return Err(Error::invalid("step_length must be positive"));
        }
        if downsample_factor < 1 {
            return Err(Error::invalid("downsample_factor must be >= 1"));
        }
        Ok(Self {
            camera,
            object_pose,
            step_length,
            downsample_factor,
        })
    }

    /// Step of half the smallest voxel spacing.
    pub fn with_default_step(
        camera: CameraModel,
        object_pose: RigidPose,
        geometry: &VolumeGeometry,
        downsample_factor: usize,
    ) -> Result<Self> {
        Self::new(camera, object_pose, 0.5 * geometry.min_spacing(), downsample_factor)
    }

    pub fn with_pose(&self, object_pose: RigidPose) -> Self {
        Self { object_pose, ..*self }
    }

    /// Detector geometry actually rendered.
    pub fn detector(&self) -> Result<CameraModel> {
        self.camera.downsampled(self.downsample_factor)
    }
}

/// Membership table over label values.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabelSet {
    lookup: Vec<bool>,
}

impl LabelSet {
    pub fn new(labels: impl IntoIterator<Item = u16>) -> Self {
        let mut lookup = Vec::new();
        for l in labels {
            let l = l as usize;
            if lookup.len() <= l {
                lookup.resize(l + 1, false);
            }
            lookup[l] = true;
        }
        Self { lookup }
    }

    #[inline]
    pub fn contains(&self, label: u16) -> bool {
        self.lookup.get(label as usize).copied().unwrap_or(false)
    }

    pub fn is_empty(&self) -> bool {
        !self.lookup.iter().any(|&b| b)
    }

    pub fn labels(&self) -> Vec<u16> {
        self.lookup
            .iter()
            .enumerate()
            .filter_map(|(l, &b)| b.then_some(l as u16))
            .collect()
    }
}

impl FromIterator<u16> for LabelSet {
    fn from_iter<T: IntoIterator<Item = u16>>(iter: T) -> Self {
        Self::new(iter)
    }
}

/// Index-space box outside which sampling yields nothing.
#[derive(Clone, Copy, Debug)]
struct ClipBox {
    lo: Vec3,
    hi: Vec3,
}

impl ClipBox {
    fn around(bounds: ([usize; 3], [usize; 3]), pad: f64) -> Self {
        let (lo, hi) = bounds;
        Self {
            lo: Vec3::new(lo[0] as f64 - pad, lo[1] as f64 - pad, lo[2] as f64 - pad),
            hi: Vec3::new(hi[0] as f64 + pad, hi[1] as f64 + pad, hi[2] as f64 + pad),
        }
    }

    fn full(g: &VolumeGeometry, pad: f64) -> Self {
        let d = g.dims;
        Self::around(([0, 0, 0], [d[0] - 1, d[1] - 1, d[2] - 1]), pad)
    }
}

/// An attenuation (or weight) volume with its non-zero extent cached.
pub struct PreparedVolume<'a> {
    pub volume: &'a Volume3D,
    clip: Option<ClipBox>,
}

impl<'a> PreparedVolume<'a> {
    pub fn new(volume: &'a Volume3D) -> Self {
        // zero padding lets a sample up to one voxel outside the support pick up weight
        let clip = volume.nonzero_bounds().map(|b| ClipBox::around(b, 1.0));
        Self { volume, clip }
    }
}

/// A label volume with the extent of non-background labels cached.
pub struct PreparedLabels<'a> {
    pub labels: &'a LabelVolume,
    clip: Option<ClipBox>,
}

impl<'a> PreparedLabels<'a> {
    pub fn new(labels: &'a LabelVolume) -> Self {
        let clip = nonzero_bounds(&labels.geometry, |i| labels.data[i] != 0).map(|b| ClipBox::around(b, 0.5));
        Self { labels, clip }
    }

    fn clip_for(&self, set: &LabelSet) -> Option<ClipBox> {
        if set.contains(0) {
            Some(ClipBox::full(&self.labels.geometry, 0.5))
        } else {
            self.clip
        }
    }

    #[inline]
    fn label_at_index(&self, x: &Vec3) -> u16 {
        let g = &self.labels.geometry;
        let (i, j, k) = (x.x.round(), x.y.round(), x.z.round());
        if i < 0.0 || j < 0.0 || k < 0.0 {
            return 0;
        }
        let (i, j, k) = (i as usize, j as usize, k as usize);
        if i >= g.dims[0] || j >= g.dims[1] || k >= g.dims[2] {
            return 0;
        }
        self.labels.data[g.linear_index(i, j, k)]
    }
}

/// Per-request mapping from detector pixels to index-space ray segments.
struct RaySetup {
    detector: CameraModel,
    origin: Vec3,
    cam_to_index: Mat3,
    step: f64,
}

impl RaySetup {
    fn new(geometry: &VolumeGeometry, req: &ProjectionRequest) -> Result<Self> {
        let detector = req.detector()?;
        // camera frame -> volume frame -> continuous index
        let cam_to_vol = req.camera.extrinsic.compose(&req.object_pose).inverse();
        let inv_spacing = Mat3::from_diagonal(&Vec3::new(
            1.0 / geometry.spacing.x,
            1.0 / geometry.spacing.y,
            1.0 / geometry.spacing.z,
        ));
        Ok(Self {
            detector,
            origin: inv_spacing * (cam_to_vol.translation - geometry.origin),
            cam_to_index: inv_spacing * cam_to_vol.rotation,
            step: req.step_length,
        })
    }

    /// Index-space origin/direction of the ray through pixel `(r, c)` and its
    /// parameter interval (mm along the ray) inside `clip`.
    #[inline]
    fn segment(&self, r: usize, c: usize, clip: &ClipBox) -> Option<(Vec3, Vec3, f64, f64)> {
        let d_cam = self
            .detector
            .pixel_direction_camera(&Vec2::new(c as f64, r as f64))
            .normalize();
        let dir = self.cam_to_index * d_cam;
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            let o = self.origin[a];
            let d = dir[a];
            if d.abs() < 1e-300 {
                if o < clip.lo[a] || o > clip.hi[a] {
                    return None;
                }
            } else {
                let inv = 1.0 / d;
                let (mut ta, mut tb) = ((clip.lo[a] - o) * inv, (clip.hi[a] - o) * inv);
                if ta > tb {
                    std::mem::swap(&mut ta, &mut tb);
                }
                t0 = t0.max(ta);
                t1 = t1.min(tb);
            }
        }
        (t1 > t0).then_some((self.origin, dir, t0, t1))
    }

    /// Midpoint samples: `n = ⌈L / step⌉` equal sub-intervals of the
    /// segment. Returns the effective step.
    #[inline]
    fn march(&self, seg: (Vec3, Vec3, f64, f64), mut visit: impl FnMut(&Vec3) -> bool) -> f64 {
        let (o, d, t0, t1) = seg;
        let len = t1 - t0;
        let n = (len / self.step).ceil().max(1.0) as usize;
        let h = len / n as f64;
        let start = o + d * (t0 + 0.5 * h);
        let inc = d * h;
        let mut p = start;
        for k in 0..n {
            if k > 0 {
                // re-anchor periodically to limit drift
                p = if k % 64 == 0 { start + inc * k as f64 } else { p + inc };
            }
            if !visit(&p) {
                break;
            }
        }
        h
    }

    fn rows(&self) -> usize {
        self.detector.detector_rows
    }

    fn cols(&self) -> usize {
        self.detector.detector_cols
    }

    fn render(&self, roi: Option<&[bool]>, pixel: impl Fn(usize, usize) -> f64 + Sync) -> Image2D {
        let (rows, cols) = (self.rows(), self.cols());
        let data: Vec<f64> = (0..rows)
            .into_par_iter()
            .flat_map_iter(|r| {
                let pixel = &pixel;
                (0..cols).map(move |c| match roi {
                    Some(mask) if !mask[r * cols + c] => 0.0,
                    _ => pixel(r, c),
                })
            })
            .collect();
        Image2D {
            rows,
            cols,
            pixel_spacing: self.detector.pixel_spacing,
            data,
        }
    }
}

fn drr_with(prepared: &PreparedVolume<'_>, req: &ProjectionRequest, roi: Option<&[bool]>) -> Result<Image2D> {
    let setup = RaySetup::new(&prepared.volume.geometry, req)?;
    if let Some(mask) = roi {
        if mask.len() != setup.rows() * setup.cols() {
            return Err(Error::DimensionMismatch("ROI mask does not match the detector".into()));
        }
    }
    let Some(clip) = prepared.clip else {
        return Ok(Image2D::zeros(setup.rows(), setup.cols(), setup.detector.pixel_spacing));
    };
    let vol = prepared.volume;
    Ok(setup.render(roi, |r, c| {
        let Some(seg) = setup.segment(r, c, &clip) else {
            return 0.0;
        };
        let mut acc = 0.0;
        let h = setup.march(seg, |p| {
            acc += trilinear_index(vol, p);
            true
        });
        acc * h
    }))
}

/// Line integral of attenuation through every detector pixel.
pub fn project_drr(vol: &Volume3D, req: &ProjectionRequest) -> Result<Image2D> {
    drr_with(&PreparedVolume::new(vol), req, None)
}

/// DRR with a cached volume extent, optionally restricted to the pixels set
/// in `roi` (others are 0).
pub fn project_drr_prepared(
    vol: &PreparedVolume<'_>,
    req: &ProjectionRequest,
    roi: Option<&[bool]>,
) -> Result<Image2D> {
    drr_with(vol, req, roi)
}

fn mip_with(prepared: &PreparedVolume<'_>, req: &ProjectionRequest) -> Result<Image2D> {
    let setup = RaySetup::new(&prepared.volume.geometry, req)?;
    let Some(clip) = prepared.clip else {
        return Ok(Image2D::zeros(setup.rows(), setup.cols(), setup.detector.pixel_spacing));
    };
    let vol = prepared.volume;
    Ok(setup.render(None, |r, c| {
        let Some(seg) = setup.segment(r, c, &clip) else {
            return 0.0;
        };
        let mut best = 0.0f64;
        setup.march(seg, |p| {
            best = best.max(trilinear_index(vol, p));
            true
        });
        best
    }))
}

/// Per-pixel maximum of the (trilinearly sampled) weight volume along each ray.
pub fn project_weight_mip(weight_vol: &Volume3D, req: &ProjectionRequest) -> Result<Image2D> {
    mip_with(&PreparedVolume::new(weight_vol), req)
}

pub fn project_weight_mip_prepared(weight_vol: &PreparedVolume<'_>, req: &ProjectionRequest) -> Result<Image2D> {
    mip_with(weight_vol, req)
}

fn hits_with(labels: &PreparedLabels<'_>, set: &LabelSet, req: &ProjectionRequest) -> Result<Image2D> {
    let setup = RaySetup::new(&labels.labels.geometry, req)?;
    let clip = match labels.clip_for(set) {
        Some(c) if !set.is_empty() => c,
        _ => return Ok(Image2D::zeros(setup.rows(), setup.cols(), setup.detector.pixel_spacing)),
    };
    Ok(setup.render(None, |r, c| {
        let Some(seg) = setup.segment(r, c, &clip) else {
            return 0.0;
        };
        let mut hit = false;
        setup.march(seg, |p| {
            hit = set.contains(labels.label_at_index(p));
            !hit
        });
        if hit {
            1.0
        } else {
            0.0
        }
    }))
}

/// Binary mask of pixels whose ray meets a voxel labelled in `set`.
pub fn project_label_hits(labels: &PreparedLabels<'_>, set: &LabelSet, req: &ProjectionRequest) -> Result<Image2D> {
    hits_with(labels, set, req)
}

/// The mismatch mask `M`: rays passing through any label in `mismatch`.
pub fn project_mismatch_mask(labels: &LabelVolume, mismatch: &LabelSet, req: &ProjectionRequest) -> Result<Image2D> {
    hits_with(&PreparedLabels::new(labels), mismatch, req)
}

/// Hit pixels with at least one 4-connected in-image neighbour that misses.
pub fn boundary_edges_from_hits(hits: &Image2D) -> Image2D {
    let (rows, cols) = (hits.rows, hits.cols);
    Image2D::from_fn(rows, cols, hits.pixel_spacing, |r, c| {
        if hits.get(r, c) == 0.0 {
            return 0.0;
        }
        let miss = (r > 0 && hits.get(r - 1, c) == 0.0)
            || (r + 1 < rows && hits.get(r + 1, c) == 0.0)
            || (c > 0 && hits.get(r, c - 1) == 0.0)
            || (c + 1 < cols && hits.get(r, c + 1) == 0.0);
        if miss {
            1.0
        } else {
            0.0
        }
    })
}

/// Raw occluding-boundary edge map of the surface formed by `surface` labels.
pub fn project_boundary_edges(labels: &LabelVolume, surface: &LabelSet, req: &ProjectionRequest) -> Result<Image2D> {
    Ok(boundary_edges_from_hits(&hits_with(
        &PreparedLabels::new(labels),
        surface,
        req,
    )?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::se3_exp;
    use crate::geom::Vec6;
    use approx::assert_abs_diff_eq;

    fn cube_phantom(mu: f32) -> Volume3D {
        // 60^3 voxels of 2 mm, a centered 100 mm cube of material
        let g = VolumeGeometry::centered([60, 60, 60], Vec3::new(2.0, 2.0, 2.0)).unwrap();
        let mut v = Volume3D::zeros(g);
        for k in 5..55 {
            for j in 5..55 {
                for i in 5..55 {
                    let idx = g.linear_index(i, j, k);
                    v.data[idx] = mu;
                }
            }
        }
        v
    }

    fn camera(rows: usize) -> CameraModel {
        CameraModel::centered(1020.0, rows, rows, 1.0).unwrap()
    }

    fn request(cam: CameraModel, depth: f64, step: f64) -> ProjectionRequest {
        ProjectionRequest::new(cam, RigidPose::from_translation(Vec3::new(0.0, 0.0, depth)), step, 1).unwrap()
    }

    #[test]
    fn zero_volume_projects_to_zero() {
        let g = VolumeGeometry::centered([8, 8, 8], Vec3::new(1.0, 1.0, 1.0)).unwrap();
        let req = request(camera(9), 500.0, 0.5);
        let img = project_drr(&Volume3D::zeros(g), &req).unwrap();
        assert!(img.data.iter().all(|&v| v == 0.0));
        let mip = project_weight_mip(&Volume3D::zeros(g), &req).unwrap();
        assert!(mip.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn uniform_cube_central_ray() {
        let vol = cube_phantom(0.01);
        let req = request(camera(9), 600.0, 1.0);
        let img = project_drr(&vol, &req).unwrap();
        let center = img.get(4, 4);
        assert!((center - 1.0).abs() < 0.01, "{center}");
    }

    #[test]
    fn drr_is_linear_in_attenuation() {
        let a = cube_phantom(0.01);
        let b = cube_phantom(0.02);
        let mut cam = camera(33);
        cam.pixel_spacing = 4.0;
        let pose = se3_exp(&Vec6::new(0.2, -0.1, 0.3, 5.0, -3.0, 600.0));
        let req = ProjectionRequest::new(cam, pose, 1.0, 1).unwrap();
        let ia = project_drr(&a, &req).unwrap();
        let ib = project_drr(&b, &req).unwrap();
        for (x, y) in ia.data.iter().zip(&ib.data) {
            assert!((y - 2.0 * x).abs() <= 1e-6 * x.abs().max(1e-12));
        }
    }

    #[test]
    fn roi_restricts_rendering() {
        let vol = cube_phantom(0.01);
        let req = request(camera(9), 600.0, 1.0);
        let full = project_drr(&vol, &req).unwrap();
        let roi: Vec<bool> = (0..81).map(|i| i % 3 == 0).collect();
        let part = project_drr_prepared(&PreparedVolume::new(&vol), &req, Some(&roi)).unwrap();
        for (i, &keep) in roi.iter().enumerate() {
            assert_eq!(part.data[i], if keep { full.data[i] } else { 0.0 });
        }
    }

    #[test]
    fn hot_voxel_mip() {
        let g = VolumeGeometry::centered([21, 21, 21], Vec3::new(2.0, 2.0, 2.0)).unwrap();
        let mut w = Volume3D::zeros(g);
        w.data[g.linear_index(10, 10, 10)] = 5.0;
        // 0.5 mm pixels at the volume center (magnification 2)
        let cam = CameraModel::centered(1000.0, 41, 41, 1.0).unwrap();
        let req = request(cam, 500.0, 0.5);
        let mip = project_weight_mip(&w, &req).unwrap();
        // midpoint samples land at most a quarter step (0.125 voxel) from the center
        assert!(mip.get(20, 20) >= 5.0 * 0.875 - 1e-9, "{}", mip.get(20, 20));
        assert!(mip.data.iter().all(|&v| v <= 5.0 + 1e-9));
        for r in 0..41 {
            for c in 0..41 {
                // offset of the ray from the voxel center, mm at the volume
                let off = 0.5 * ((r as f64 - 20.0).powi(2) + (c as f64 - 20.0).powi(2)).sqrt();
                if off > 2.0 * 3f64.sqrt() {
                    assert_eq!(mip.get(r, c), 0.0);
                }
                if off > 0.0 {
                    assert!(mip.get(r, c) <= mip.get(20, 20));
                }
            }
        }
    }

    #[test]
    fn mip_bounds_mean_along_ray() {
        let vol = cube_phantom(0.01);
        let mut cam = camera(21);
        cam.pixel_spacing = 8.0;
        let req = request(cam, 600.0, 1.0);
        let mip = project_weight_mip(&vol, &req).unwrap();
        let drr = project_drr(&vol, &req).unwrap();
        // full-box length along each ray bounds the integrated length
        let det = req.detector().unwrap();
        let g = vol.geometry;
        for r in 0..21 {
            for c in 0..21 {
                let ray = det.pixel_ray(&Vec2::new(c as f64, r as f64));
                let o = ray.origin - Vec3::new(0.0, 0.0, 600.0);
                let lo = g.origin - g.spacing;
                let hi = g.origin + g.spacing * 60.0;
                let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
                for a in 0..3 {
                    let (ta, tb) = ((lo[a] - o[a]) / ray.direction[a], (hi[a] - o[a]) / ray.direction[a]);
                    t0 = t0.max(ta.min(tb));
                    t1 = t1.min(ta.max(tb));
                }
                let len = (t1 - t0).max(0.0);
                if len > 0.0 {
                    assert!(mip.get(r, c) + 1e-12 >= drr.get(r, c) / len);
                } else {
                    assert_eq!(drr.get(r, c), 0.0);
                }
            }
        }
    }

    #[test]
    fn halving_step_changes_little() {
        let g = VolumeGeometry::centered([40, 40, 40], Vec3::new(2.0, 2.0, 2.0)).unwrap();
        let mut v = Volume3D::zeros(g);
        for idx in 0..g.len() {
            let p = g.voxel_center(idx);
            let r2 = p.norm_squared();
            v.data[idx] = (0.02 * (-r2 / 800.0).exp()) as f32;
        }
        let mut cam = camera(25);
        cam.pixel_spacing = 4.0;
        let coarse = project_drr(&v, &request(cam, 600.0, 1.0)).unwrap();
        let fine = project_drr(&v, &request(cam, 600.0, 0.5)).unwrap();
        for (a, b) in coarse.data.iter().zip(&fine.data) {
            if *b > 1e-3 {
                assert!(((a - b) / b).abs() < 0.005);
            }
        }
    }

    fn sphere_labels(radius_mm: f64, label: u16) -> LabelVolume {
        let g = VolumeGeometry::centered([64, 64, 64], Vec3::new(1.0, 1.0, 1.0)).unwrap();
        let mut lab = LabelVolume::zeros(g);
        for idx in 0..g.len() {
            if g.voxel_center(idx).norm() <= radius_mm {
                lab.data[idx] = label;
            }
        }
        lab
    }

    /// Silhouette radius (pixels) of a sphere centered on the principal axis.
    fn analytic_disk_radius(cam: &CameraModel, depth: f64, radius: f64) -> f64 {
        let alpha = (radius / depth).asin();
        cam.source_to_detector * alpha.tan() / cam.pixel_spacing
    }

    #[test]
    fn mismatch_mask_is_sphere_silhouette() {
        let lab = sphere_labels(20.0, 7);
        let cam = CameraModel::centered(1000.0, 81, 81, 1.0).unwrap();
        let req = request(cam, 500.0, 0.5);
        let mask = project_mismatch_mask(&lab, &LabelSet::new([7]), &req).unwrap();
        // voxelization can extend the sphere by up to half a voxel diagonal
        let rad_in = analytic_disk_radius(&cam, 500.0, 20.0);
        let rad_out = analytic_disk_radius(&cam, 500.0, 20.0 + 0.5 * 3f64.sqrt());
        for r in 0..81 {
            for c in 0..81 {
                let d = ((r as f64 - 40.0).powi(2) + (c as f64 - 40.0).powi(2)).sqrt();
                if d < rad_in - 1.0 {
                    assert_eq!(mask.get(r, c), 1.0, "({r},{c}) d={d}");
                } else if d > rad_out + 1.0 {
                    assert_eq!(mask.get(r, c), 0.0, "({r},{c}) d={d}");
                }
            }
        }
        let empty = project_mismatch_mask(&lab, &LabelSet::default(), &req).unwrap();
        assert!(empty.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn boundary_edges_form_ring() {
        let lab = sphere_labels(20.0, 3);
        let cam = CameraModel::centered(1000.0, 81, 81, 1.0).unwrap();
        let req = request(cam, 500.0, 0.5);
        let edges = project_boundary_edges(&lab, &LabelSet::new([3]), &req).unwrap();
        let rad = analytic_disk_radius(&cam, 500.0, 20.0);
        let rad_out = analytic_disk_radius(&cam, 500.0, 20.0 + 0.5 * 3f64.sqrt());
        let mut count = 0;
        for r in 0..81 {
            for c in 0..81 {
                if edges.get(r, c) == 1.0 {
                    count += 1;
                    let d = ((r as f64 - 40.0).powi(2) + (c as f64 - 40.0).powi(2)).sqrt();
                    assert!(d >= rad - 1.0 && d <= rad_out + 1.0, "edge at d={d}, expected {rad}");
                }
            }
        }
        // an 8-connected digital circle has about 4·√2·R pixels
        assert!(count as f64 > 4.0 * 2f64.sqrt() * rad * 0.9, "{count}");
        assert!(project_boundary_edges(&lab, &LabelSet::default(), &req)
            .unwrap()
            .data
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn surface_filling_view_has_no_edges() {
        let lab = sphere_labels(30.0, 2);
        // narrow field of view looking at the center of the sphere
        let cam = CameraModel::centered(1000.0, 11, 11, 0.5).unwrap();
        let req = request(cam, 500.0, 0.5);
        let edges = project_boundary_edges(&lab, &LabelSet::new([2]), &req).unwrap();
        assert!(edges.data.iter().all(|&v| v == 0.0));
        let mask = project_mismatch_mask(&lab, &LabelSet::new([2]), &req).unwrap();
        assert!(mask.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn moving_volume_or_camera_is_equivalent() {
        let vol = cube_phantom(0.01);
        let mut cam = camera(17);
        cam.pixel_spacing = 6.0;
        let motion = se3_exp(&Vec6::new(0.1, 0.2, -0.05, 10.0, -5.0, 3.0));
        let base = RigidPose::from_translation(Vec3::new(0.0, 0.0, 600.0));
        let a = project_drr(
            &vol,
            &ProjectionRequest::new(cam, motion.compose(&base), 1.0, 1).unwrap(),
        )
        .unwrap();
        let mut moved_cam = cam;
        moved_cam.extrinsic = motion;
        let b = project_drr(&vol, &ProjectionRequest::new(moved_cam, base, 1.0, 1).unwrap()).unwrap();
        for (x, y) in a.data.iter().zip(&b.data) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-4 * x.abs().max(1e-3));
        }
    }
}
