//! Multi-resolution intensity-based registration of a volume to one
//! fluoroscopic view, and multi-view landmark triangulation on top of it.

mod landmarks;
mod optim;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use landmarks::{landmark_init, LandmarkFit, LandmarkInitOptions, Landmarks2, Landmarks3};
pub use optim::{
    cmaes_minimize, cmaes_minimize_batch, local_bound_refine, local_bound_refine_batch, BatchObjective, CmaesOptions,
    FnObjective, OptimResult, RefineOptions,
};

use crate::error::{Error, Result};
use crate::geom::{triangulate, CameraModel, PoseParams, RigidPose, Vec2, Vec3, Vec6};
use crate::image::{downsample, Image2D, LabelVolume, Volume3D};
use crate::projector::{project_drr_prepared, LabelSet, PreparedVolume, ProjectionRequest};
use crate::seed::derive_seed;
use crate::similarity::{complete_patch_grid, variance_patch_weights, PatchGrid, PreparedFixed};
use crate::weights::{
    build_weight_volume, grow_patch_count, sample_patch_subset, PatchWeights, WeightLut, WeightParams, WeightProjector,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MetricKind {
    /// Gradient NCC over the whole image.
    GradNcc,
    /// Uniformly weighted patch Grad-NCC.
    PGradNcc,
    /// Patch weights from fixed-image intensity variance.
    PGradNccVar,
    /// Patch weights projected from the 3D weight volume.
    PGradNccPr,
    /// Projected weights on a growing random patch subset.
    PGradNccPrR,
}

impl MetricKind {
    pub const ALL: [MetricKind; 5] = [
        MetricKind::GradNcc,
        MetricKind::PGradNcc,
        MetricKind::PGradNccVar,
        MetricKind::PGradNccPr,
        MetricKind::PGradNccPrR,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::GradNcc => "GradNCC",
            MetricKind::PGradNcc => "PGradNCC",
            MetricKind::PGradNccVar => "PGradNCCVar",
            MetricKind::PGradNccPr => "PGradNCCPr",
            MetricKind::PGradNccPrR => "PGradNCCPrR",
        }
    }

    pub fn uses_projected_weights(&self) -> bool {
        matches!(self, MetricKind::PGradNccPr | MetricKind::PGradNccPrR)
    }

    pub fn valid_names() -> String {
        Self::ALL.iter().map(|m| m.name()).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    /// Case-insensitive; `-` and `_` are ignored (`P-Grad-NCC-Pr` works).
    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| *c != '-' && *c != '_')
            .collect::<String>()
            .to_ascii_lowercase();
        Self::ALL
            .iter()
            .copied()
            .find(|m| m.name().to_ascii_lowercase() == key)
            .ok_or_else(|| Error::invalid(format!("unknown metric `{s}`; valid metrics: {}", Self::valid_names())))
    }
}

impl Serialize for MetricKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for MetricKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Cmaes,
    LocalBounded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelConfig {
    pub downsample_factor: usize,
    pub patch_radius: usize,
    pub metric: MetricKind,
    pub optimizer: OptimizerKind,
    pub population_size: usize,
    pub max_iterations: usize,
    /// CMA-ES: stop when the search spread drops below this (units of
    /// `sigma0`). Local: stop when the trust radius drops below this
    /// (fraction of the box half-widths).
    pub tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationConfig {
    pub levels: Vec<LevelConfig>,
    /// Regularizer scales, (rad, rad, rad, mm, mm, mm).
    pub regularization_scales: [f64; 6],
    /// Fine-level box half-widths about the coarse result.
    pub box_half_widths: [f64; 6],
    /// CMA-ES initial step sizes.
    pub sigma0: [f64; 6],
    pub initial_random_patches: usize,
    /// Ray-march step (mm); half the smallest voxel spacing when unset.
    pub step_length: Option<f64>,
    pub weight_params: WeightParams,
    pub mismatch_labels: Vec<u16>,
    pub surface_labels: Vec<u16>,
}

fn deg6(a: [f64; 3], t: [f64; 3]) -> [f64; 6] {
    [
        a[0].to_radians(),
        a[1].to_radians(),
        a[2].to_radians(),
        t[0],
        t[1],
        t[2],
    ]
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self::for_metric(MetricKind::GradNcc)
    }
}

impl RegistrationConfig {
    /// Two-level default: CMA-ES at 8× downsampling with 11×11 patches,
    /// bounded refinement at 4× with 19×19 patches. Random patch subsets
    /// are only drawn at the coarse level.
    pub fn for_metric(metric: MetricKind) -> Self {
        let fine_metric = if metric == MetricKind::PGradNccPrR {
            MetricKind::PGradNccPr
        } else {
            metric
        };
        Self {
            levels: vec![
                LevelConfig {
                    downsample_factor: 8,
                    patch_radius: 5,
                    metric,
                    optimizer: OptimizerKind::Cmaes,
                    population_size: 100,
                    max_iterations: 300,
                    tolerance: 1e-4,
                },
                LevelConfig {
                    downsample_factor: 4,
                    patch_radius: 9,
                    metric: fine_metric,
                    optimizer: OptimizerKind::LocalBounded,
                    population_size: 100,
                    max_iterations: 100,
                    tolerance: 1e-3,
                },
            ],
            regularization_scales: deg6([10.0, 10.0, 10.0], [25.0, 25.0, 50.0]),
            box_half_widths: deg6([5.0, 5.0, 5.0], [10.0, 10.0, 25.0]),
            sigma0: deg6([3.0, 3.0, 3.0], [5.0, 5.0, 15.0]),
            initial_random_patches: 10,
            step_length: None,
            weight_params: WeightParams::default(),
            mismatch_labels: Vec::new(),
            surface_labels: Vec::new(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::parse("registration config", e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Same settings with every level switched to `metric`; the random-subset
    /// variant only applies to the first level, later levels use all patches.
    pub fn with_metric(mut self, metric: MetricKind) -> Self {
        for (i, level) in self.levels.iter_mut().enumerate() {
            level.metric = if i > 0 && metric == MetricKind::PGradNccPrR {
                MetricKind::PGradNccPr
            } else {
                metric
            };
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::invalid("at least one registration level is required"));
        }
        for (i, l) in self.levels.iter().enumerate() {
            if l.downsample_factor < 1 {
                return Err(Error::invalid(format!("level {i}: downsample_factor must be >= 1")));
            }
            if i > 0 && l.downsample_factor > self.levels[i - 1].downsample_factor {
                return Err(Error::invalid("downsample factors must not increase across levels"));
            }
            if l.population_size < 4 {
                return Err(Error::invalid(format!("level {i}: population_size must be >= 4")));
            }
            if !(l.tolerance > 0.0) {
                return Err(Error::invalid(format!("level {i}: tolerance must be positive")));
            }
            if l.max_iterations == 0 {
                return Err(Error::invalid(format!("level {i}: max_iterations must be >= 1")));
            }
        }
        for (name, v) in [
            ("regularization_scales", &self.regularization_scales),
            ("box_half_widths", &self.box_half_widths),
            ("sigma0", &self.sigma0),
        ] {
            if v.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
                return Err(Error::invalid(format!("{name} entries must be positive")));
            }
        }
        if self.initial_random_patches == 0 {
            return Err(Error::invalid("initial_random_patches must be >= 1"));
        }
        if let Some(h) = self.step_length {
            if !(h > 0.0) {
                return Err(Error::invalid("step_length must be positive"));
            }
        }
        self.weight_params.validate()
    }
}

/// Quadratic penalty `Σ (coords_i / scales_i)²`.
pub fn regularizer(coords: &[f64], scales: &[f64; 6]) -> f64 {
    coords.iter().zip(scales).map(|(c, s)| (c / s).powi(2)).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    /// Running minimum of the objective.
    pub best_objective: f64,
    pub active_patches: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelTrace {
    pub level: usize,
    pub downsample_factor: usize,
    pub metric: MetricKind,
    pub entries: Vec<TraceEntry>,
    pub iterations: usize,
    pub evaluations: usize,
    /// Number of 2D weight recomputations.
    pub weight_updates: usize,
    pub final_objective: f64,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegistrationResult {
    /// Volume frame to world.
    pub final_pose: RigidPose,
    pub levels: Vec<LevelTrace>,
}

/// Read-only inputs shared by all levels of one registration.
struct Scene<'a> {
    volume: PreparedVolume<'a>,
    weights: Option<WeightProjector<'a>>,
    /// Camera with identity extrinsic: poses below are object-to-camera.
    camera: CameraModel,
    step: f64,
    volume_center: Vec3,
}

#[derive(Clone, Copy, PartialEq)]
enum WeightRefresh {
    EveryIteration,
    WhenMoved,
}

struct LevelObjective<'s, 'a> {
    scene: &'s Scene<'a>,
    fixed: PreparedFixed,
    base: ProjectionRequest,
    params: PoseParams,
    metric: MetricKind,
    grid: PatchGrid,
    active: PatchWeights,
    roi: Option<Vec<bool>>,
    regularization: Option<[f64; 6]>,
    refresh: WeightRefresh,
    subset_size: Option<usize>,
    seed: u64,
    last_center: Option<Vec<f64>>,
    weight_updates: usize,
    active_counts: Vec<usize>,
}

impl LevelObjective<'_, '_> {
    fn metric_at(&self, coords: &[f64]) -> Result<f64> {
        let req = self.base.with_pose(self.params.at(coords));
        let drr = project_drr_prepared(&self.scene.volume, &req, self.roi.as_deref())?;
        match self.metric {
            MetricKind::GradNcc => self.fixed.grad_ncc(&drr),
            _ => self.fixed.patch_grad_ncc(&drr, &self.active.grid, &self.active.weights),
        }
    }

    fn refresh_weights(&mut self, incumbent: &[f64], iteration: usize) -> Result<()> {
        let wp = self
            .scene
            .weights
            .as_ref()
            .ok_or_else(|| Error::invalid("projected weights need labels"))?;
        let req = self.base.with_pose(self.params.at(incumbent));
        let full = match wp.patch_weights(&req, &self.grid) {
            Ok(w) => w,
            Err(Error::DegenerateWeights) => {
                log::warn!("projected weight map is all zero; using uniform patch weights");
                PatchWeights::uniform(self.grid.clone())
            }
            Err(e) => return Err(e),
        };
        self.weight_updates += 1;
        match self.subset_size {
            Some(n) if n < self.grid.len() => {
                let sub = sample_patch_subset(&full, n, derive_seed(self.seed, &[iteration as u64]))?;
                let (rows, cols) = (self.fixed.image.rows, self.fixed.image.cols);
                // Sobel needs one extra pixel around every patch
                self.roi = Some(sub.grid.footprint(rows, cols, 1));
                self.active = sub;
                self.subset_size = Some(grow_patch_count(n));
            }
            Some(_) => {
                self.roi = None;
                self.active = full;
            }
            None => self.active = full,
        }
        Ok(())
    }
}

impl BatchObjective for LevelObjective<'_, '_> {
    fn begin_iteration(&mut self, incumbent: &[f64], iteration: usize) -> Result<bool> {
        let mut changed = false;
        if self.metric.uses_projected_weights() {
            let stale = match self.refresh {
                WeightRefresh::EveryIteration => true,
                WeightRefresh::WhenMoved => self.last_center.as_deref() != Some(incumbent),
            };
            if stale {
                self.refresh_weights(incumbent, iteration)?;
                self.last_center = Some(incumbent.to_vec());
                changed = true;
            }
        }
        self.active_counts.push(match self.metric {
            MetricKind::GradNcc => 1,
            _ => self.active.len(),
        });
        Ok(changed)
    }

    fn evaluate(&mut self, points: &[Vec<f64>]) -> Vec<f64> {
        let this = &*self;
        points
            .par_iter()
            .map(|x| {
                let m = match this.metric_at(x) {
                    Ok(m) => m,
                    Err(e) => {
                        log::debug!("objective evaluation failed: {e}");
                        return f64::NAN;
                    }
                };
                let reg = this.regularization.as_ref().map_or(0.0, |s| regularizer(x, s));
                -m + reg
            })
            .collect()
    }
}

/// Registers the volume to one view. `init` and the result map the volume
/// frame to world; the camera's extrinsic maps world to camera.
#[allow(clippy::too_many_arguments)]
pub fn register_single_view(
    fluoro: &Image2D,
    vol: &Volume3D,
    labels: Option<&LabelVolume>,
    lut: Option<&WeightLut>,
    camera: &CameraModel,
    init: &RigidPose,
    cfg: &RegistrationConfig,
    seed: u64,
) -> Result<RegistrationResult> {
    cfg.validate()?;
    if fluoro.rows != camera.detector_rows || fluoro.cols != camera.detector_cols {
        return Err(Error::DimensionMismatch(format!(
            "image is {}x{} but the detector is {}x{}",
            fluoro.rows, fluoro.cols, camera.detector_rows, camera.detector_cols
        )));
    }
    let needs_weights = cfg.levels.iter().any(|l| l.metric.uses_projected_weights());
    let weight_vol = match (needs_weights, labels, lut) {
        (false, _, _) => None,
        (true, Some(lab), Some(lut)) => {
            lab.check_matches(vol)?;
            Some(build_weight_volume(lab, lut))
        }
        _ => {
            return Err(Error::invalid(
                "projected-weight metrics need a label volume and a weight LUT",
            ))
        }
    };
    let weights = match (&weight_vol, labels) {
        (Some(wv), Some(lab)) => Some(WeightProjector::new(
            wv,
            lab,
            LabelSet::new(cfg.mismatch_labels.iter().copied()),
            LabelSet::new(cfg.surface_labels.iter().copied()),
            cfg.weight_params,
        )?),
        _ => None,
    };
    let mut cam = *camera;
    cam.extrinsic = RigidPose::identity();
    let scene = Scene {
        volume: PreparedVolume::new(vol),
        weights,
        camera: cam,
        step: cfg.step_length.unwrap_or(0.5 * vol.geometry.min_spacing()),
        volume_center: vol.geometry.center(),
    };

    let ext = camera.extrinsic;
    let mut pose = ext.compose(init);
    let mut traces = Vec::new();
    for (li, level) in cfg.levels.iter().enumerate() {
        let start = Instant::now();
        let fixed_img = downsample(fluoro, level.downsample_factor)?;
        let grid = complete_patch_grid(fixed_img.rows, fixed_img.cols, level.patch_radius)?;
        let active = match level.metric {
            MetricKind::PGradNccVar => PatchWeights {
                weights: variance_patch_weights(&fixed_img, &grid),
                grid: grid.clone(),
            },
            _ => PatchWeights::uniform(grid.clone()),
        };
        let fixed = PreparedFixed::new(&fixed_img)?;
        let base = ProjectionRequest::new(scene.camera, pose, scene.step, level.downsample_factor)?;
        let center = pose.apply(&scene.volume_center);
        let params = PoseParams::new(Vec6::zeros(), pose, center);
        let level_seed = derive_seed(seed, &[li as u64]);
        let cmaes = level.optimizer == OptimizerKind::Cmaes;
        let mut obj = LevelObjective {
            scene: &scene,
            fixed,
            base,
            params,
            metric: level.metric,
            grid,
            active,
            roi: None,
            regularization: cmaes.then_some(cfg.regularization_scales),
            refresh: if cmaes {
                WeightRefresh::EveryIteration
            } else {
                WeightRefresh::WhenMoved
            },
            subset_size: (level.metric == MetricKind::PGradNccPrR).then_some(cfg.initial_random_patches),
            seed: derive_seed(level_seed, &[1]),
            last_center: None,
            weight_updates: 0,
            active_counts: Vec::new(),
        };
        let res = match level.optimizer {
            OptimizerKind::Cmaes => cmaes_minimize_batch(
                &mut obj,
                &[0.0; 6],
                &cfg.sigma0,
                &CmaesOptions {
                    population: level.population_size,
                    max_iter: level.max_iterations,
                    tol_x: level.tolerance,
                    tol_fun: 1e-9,
                    seed: derive_seed(level_seed, &[0]),
                },
            )?,
            OptimizerKind::LocalBounded => {
                let bounds: Vec<(f64, f64)> = cfg.box_half_widths.iter().map(|&h| (-h, h)).collect();
                local_bound_refine_batch(
                    &mut obj,
                    &[0.0; 6],
                    &bounds,
                    &RefineOptions {
                        max_iter: level.max_iterations,
                        rho_begin: 0.25,
                        rho_end: level.tolerance,
                    },
                )?
            }
        };
        if !res.f.is_finite() {
            return Err(Error::OptimizerAbort(format!("level {li}: objective is not finite")));
        }
        pose = obj.params.at(&res.x);
        let mut running = f64::INFINITY;
        let entries = res
            .trace
            .iter()
            .enumerate()
            .map(|(i, &f)| {
                running = running.min(f);
                TraceEntry {
                    iteration: i + 1,
                    best_objective: running,
                    active_patches: obj.active_counts.get(i).copied().unwrap_or(0),
                }
            })
            .collect();
        traces.push(LevelTrace {
            level: li,
            downsample_factor: level.downsample_factor,
            metric: level.metric,
            entries,
            iterations: res.iterations,
            evaluations: res.evaluations,
            weight_updates: obj.weight_updates,
            final_objective: res.f,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
    }
    Ok(RegistrationResult {
        final_pose: ext.inverse().compose(&pose),
        levels: traces,
    })
}

/// One calibrated view for multi-view registration.
#[derive(Clone, Debug)]
pub struct ViewInput {
    pub fluoro: Image2D,
    pub camera: CameraModel,
    pub init: RigidPose,
    /// Landmark detections in this view (pixels).
    pub detections: Landmarks2,
}

#[derive(Clone, Debug)]
pub struct MultiViewResult {
    /// Per view: the registration, or the error that stopped it.
    pub views: Vec<std::result::Result<RegistrationResult, String>>,
    /// Landmarks triangulated in the volume frame.
    pub triangulated: Landmarks3,
}

/// Triangulates each landmark from its detection rays in every successfully
/// registered view, mapped into the volume frame by the estimated poses.
pub fn triangulate_in_volume(
    views: &[(CameraModel, RigidPose, &Landmarks2)],
    names: impl IntoIterator<Item = String>,
) -> Result<Landmarks3> {
    let mut out = Landmarks3::new();
    for name in names {
        let rays: Vec<_> = views
            .iter()
            .filter_map(|(cam, pose, det)| {
                det.get(&name).map(|px: &Vec2| {
                    let world_to_vol = pose.inverse();
                    cam.pixel_ray(px).transformed(&world_to_vol)
                })
            })
            .collect();
        if rays.len() < 2 {
            continue;
        }
        out.insert(name, triangulate(&rays)?);
    }
    Ok(out)
}

/// Registers every view independently (in parallel) and triangulates the
/// named landmarks in the volume frame.
pub fn register_multiview_triangulate(
    views: &[ViewInput],
    vol: &Volume3D,
    labels: Option<&LabelVolume>,
    lut: Option<&WeightLut>,
    cfg: &RegistrationConfig,
    landmark_names: &[String],
    seed: u64,
) -> Result<MultiViewResult> {
    if views.len() < 2 {
        return Err(Error::invalid("multi-view triangulation needs >= 2 views"));
    }
    let results: Vec<_> = views
        .par_iter()
        .enumerate()
        .map(|(i, v)| {
            register_single_view(
                &v.fluoro,
                vol,
                labels,
                lut,
                &v.camera,
                &v.init,
                cfg,
                derive_seed(seed, &[i as u64]),
            )
            .map_err(|e| e.to_string())
        })
        .collect();
    let ok: Vec<(CameraModel, RigidPose, &Landmarks2)> = results
        .iter()
        .zip(views)
        .filter_map(|(r, v)| r.as_ref().ok().map(|r| (v.camera, r.final_pose, &v.detections)))
        .collect();
    if ok.len() < 2 {
        return Err(Error::DegenerateConfiguration(format!(
            "only {} of {} views registered",
            ok.len(),
            views.len()
        )));
    }
    let triangulated = triangulate_in_volume(&ok, landmark_names.iter().cloned())?;
    Ok(MultiViewResult {
        views: results,
        triangulated,
    })
}
