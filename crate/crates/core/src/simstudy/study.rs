//! Study runner: fragments × moves × initializations × metrics, with
//! per-trial records, aggregate tables and CSV output.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fluoro::{
    exceeds_exclusion, perturb_init, pose_offset, project_landmarks, simulate_fluoro, FluoroOptions, InitNoise,
    SimulatedView,
};
use super::fragment::{sample_fragment, sample_move, CuttingPlanes, FragmentOptions, MoveOptions};
use super::phantom::{generate_phantom, labels, Phantom};
use super::stats::{mann_whitney_u, mean, median, std_dev, MannWhitney};
use crate::error::{Error, Result};
use crate::geom::{CameraModel, PoseError, RigidPose};
use crate::registration::{
    register_multiview_triangulate, triangulate_in_volume, Landmarks2, Landmarks3, MetricKind, RegistrationConfig,
    ViewInput,
};
use crate::seed::derive_seed;
use crate::weights::WeightLut;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    pub dims: [usize; 3],
    /// Isotropic voxel spacing (mm).
    pub spacing: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            dims: [128; 3],
            spacing: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub rows: usize,
    pub cols: usize,
    pub pixel_spacing: f64,
    pub source_to_detector: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            rows: 512,
            cols: 512,
            pixel_spacing: 0.582,
            source_to_detector: 1020.0,
        }
    }
}

impl DetectorConfig {
    pub fn camera(&self) -> Result<CameraModel> {
        CameraModel::centered(self.source_to_detector, self.rows, self.cols, self.pixel_spacing)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    /// Master seed; may be overridden by the caller.
    pub seed: Option<u64>,
    pub fragments: usize,
    pub moves_per_fragment: usize,
    pub inits_per_move: usize,
    /// Views per trial (2 or 3).
    pub views: usize,
    pub metrics: Vec<MetricKind>,
    pub phantom: PhantomConfig,
    pub detector: DetectorConfig,
    pub fluoro: FluoroOptions,
    pub init_noise: InitNoise,
    pub fragment: FragmentOptions,
    pub movement: MoveOptions,
    /// Template; each metric replaces the level metrics.
    pub registration: RegistrationConfig,
    /// `label weight` lines; the phantom's default table when unset.
    pub lut: Option<String>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            seed: None,
            fragments: 1,
            moves_per_fragment: 1,
            inits_per_move: 1,
            views: 3,
            metrics: vec![
                MetricKind::GradNcc,
                MetricKind::PGradNccVar,
                MetricKind::PGradNccPr,
                MetricKind::PGradNccPrR,
            ],
            phantom: PhantomConfig::default(),
            detector: DetectorConfig::default(),
            fluoro: FluoroOptions::default(),
            init_noise: InitNoise::default(),
            fragment: FragmentOptions::default(),
            movement: MoveOptions::default(),
            registration: RegistrationConfig::default(),
            lut: None,
        }
    }
}

impl StudyConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            what: "study config".into(),
            message: e.to_string(),
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(format!("cannot serialize study config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fragments == 0 || self.moves_per_fragment == 0 || self.inits_per_move == 0 {
            return Err(Error::invalid(
                "fragments, moves_per_fragment and inits_per_move must be >= 1",
            ));
        }
        if !(2..=3).contains(&self.views) {
            return Err(Error::invalid("views must be 2 or 3"));
        }
        if self.metrics.is_empty() {
            return Err(Error::invalid(format!(
                "at least one metric is required; valid metrics: {}",
                MetricKind::valid_names()
            )));
        }
        if self.phantom.dims.iter().any(|&d| d < 8) || !(self.phantom.spacing > 0.0) {
            return Err(Error::invalid(
                "phantom needs >= 8 voxels per axis and positive spacing",
            ));
        }
        self.detector.camera()?;
        self.fluoro.validate()?;
        if !(self.init_noise.sigma_3d_mm >= 0.0 && self.init_noise.sigma_2d_px >= 0.0) {
            return Err(Error::invalid("initialization noise must be >= 0"));
        }
        for m in &self.metrics {
            self.registration_for(*m).validate()?;
        }
        self.weight_lut()?;
        Ok(())
    }

    pub fn weight_lut(&self) -> Result<WeightLut> {
        match &self.lut {
            Some(text) => WeightLut::parse(text),
            None => Ok(Phantom::default_lut()),
        }
    }

    /// Registration settings for one metric, with the phantom's label sets
    /// unless the template names its own.
    pub fn registration_for(&self, metric: MetricKind) -> RegistrationConfig {
        let mut cfg = self.registration.clone().with_metric(metric);
        if cfg.mismatch_labels.is_empty() {
            cfg.mismatch_labels = labels::MISMATCH.to_vec();
        }
        if cfg.surface_labels.is_empty() {
            cfg.surface_labels = labels::SURFACE.to_vec();
        }
        cfg
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct TrialId {
    pub fragment: usize,
    pub movement: usize,
    pub init: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    Failed,
    Excluded,
}

impl TrialStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrialStatus::Ok => "ok",
            TrialStatus::Failed => "failed",
            TrialStatus::Excluded => "excluded",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StudyRecord {
    pub trial: TrialId,
    pub metric: MetricKind,
    pub status: TrialStatus,
    pub message: String,
    /// One per view.
    pub init_errors: Vec<PoseError>,
    /// One per view; `None` where that view failed.
    pub final_errors: Vec<Option<PoseError>>,
    /// Triangulation error (mm) per landmark from the initial poses.
    pub landmark_init_errors: BTreeMap<String, f64>,
    /// Triangulation error (mm) per landmark from the registered poses.
    pub landmark_errors: BTreeMap<String, f64>,
    pub runtime_s: f64,
    /// Mean first-level wall time over registered views.
    pub coarse_wall_s: f64,
}

impl StudyRecord {
    /// Mean of the finite landmark errors.
    pub fn combined_error(&self) -> f64 {
        let v: Vec<f64> = self
            .landmark_errors
            .values()
            .copied()
            .filter(|x| x.is_finite())
            .collect();
        mean(&v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub metric: MetricKind,
    pub quantity: String,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    /// Tested for smaller errors than `baseline`.
    pub metric: MetricKind,
    pub baseline: MetricKind,
    pub quantity: String,
    pub n_metric: usize,
    pub n_baseline: usize,
    pub median_metric: f64,
    pub median_baseline: f64,
    pub test: MannWhitney,
}

#[derive(Clone, Debug, Serialize)]
pub struct StudyOutput {
    pub seed: u64,
    pub views: usize,
    pub landmark_names: Vec<String>,
    pub records: Vec<StudyRecord>,
    pub summary: Vec<SummaryRow>,
    pub comparisons: Vec<Comparison>,
    /// Trials (not records) excluded for large initial offsets.
    pub excluded_trials: usize,
}

/// Reference metric for pairwise comparisons.
pub const REFERENCE_METRIC: MetricKind = MetricKind::PGradNccPr;

struct Scenario {
    views: Vec<SimulatedView>,
    detections: Vec<Landmarks2>,
    truth: Landmarks3,
}

struct TrialSetup {
    id: TrialId,
    scenario: usize,
    inits: Vec<RigidPose>,
    init_errors: Vec<PoseError>,
    landmark_init_errors: BTreeMap<String, f64>,
    excluded: bool,
}

fn landmark_errors(est: &Landmarks3, truth: &Landmarks3) -> BTreeMap<String, f64> {
    truth
        .iter()
        .map(|(k, t)| (k.clone(), est.get(k).map_or(f64::NAN, |e| (e - t).norm())))
        .collect()
}

fn prepare_scenario(
    cfg: &StudyConfig,
    phantom: &Phantom,
    camera: &CameraModel,
    seed: u64,
    f: usize,
    m: usize,
) -> std::result::Result<Scenario, String> {
    let baseline = CuttingPlanes::baseline(&phantom.hip_center);
    let (_, fragment) = sample_fragment(
        &baseline,
        &phantom.labels,
        &cfg.fragment,
        derive_seed(seed, &[1, f as u64]),
    )
    .map_err(|e| e.to_string())?;
    let (mv, relocated) = sample_move(
        phantom,
        &fragment,
        &cfg.movement,
        derive_seed(seed, &[2, f as u64, m as u64]),
    )
    .map_err(|e| e.to_string())?;
    let g = &phantom.labels.geometry;
    let truth: Landmarks3 = phantom
        .landmarks
        .iter()
        .map(|(k, p)| {
            let moved = match g.nearest_voxel(p) {
                Some(i) if phantom.labels.data[i] == labels::LEFT_FEMUR => mv.femur_relocation.apply(p),
                Some(i) if fragment.binary_search(&i).is_ok() => mv.relocation.apply(p),
                _ => *p,
            };
            (k.clone(), moved)
        })
        .collect();
    let mut views = simulate_fluoro(
        &relocated.volume,
        camera,
        &cfg.fluoro,
        derive_seed(seed, &[3, f as u64, m as u64]),
    )
    .map_err(|e| e.to_string())?;
    views.truncate(cfg.views);
    let detections = views
        .iter()
        .map(|v| project_landmarks(&truth, &v.true_pose, &v.camera))
        .collect();
    Ok(Scenario {
        views,
        detections,
        truth,
    })
}

fn prepare_trial(
    cfg: &StudyConfig,
    phantom: &Phantom,
    scenario: &Scenario,
    seed: u64,
    id: TrialId,
    index: usize,
) -> std::result::Result<TrialSetup, String> {
    let mut inits = Vec::new();
    let mut init_errors = Vec::new();
    for (v, view) in scenario.views.iter().enumerate() {
        let s = derive_seed(
            seed,
            &[4, id.fragment as u64, id.movement as u64, id.init as u64, v as u64],
        );
        let init = perturb_init(&view.true_pose, &phantom.landmarks, &view.camera, &cfg.init_noise, s)
            .map_err(|e| format!("view {v} initialization: {e}"))?;
        init_errors.push(pose_offset(&init, &view.true_pose, &phantom.hip_center));
        inits.push(init);
    }
    let with_init: Vec<_> = scenario
        .views
        .iter()
        .zip(&inits)
        .zip(&scenario.detections)
        .map(|((v, p), d)| (v.camera, *p, d))
        .collect();
    let tri = triangulate_in_volume(&with_init, scenario.truth.keys().cloned()).map_err(|e| e.to_string())?;
    Ok(TrialSetup {
        id,
        scenario: index,
        excluded: init_errors.iter().any(exceeds_exclusion),
        landmark_init_errors: landmark_errors(&tri, &scenario.truth),
        inits,
        init_errors,
    })
}

/// Runs every trial. Each trial's randomness derives from `seed` and its id,
/// so results do not depend on `workers`.
pub fn run_study(cfg: &StudyConfig, seed: u64, workers: usize) -> Result<StudyOutput> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    pool.install(|| run_study_inner(cfg, seed))
}

fn run_study_inner(cfg: &StudyConfig, seed: u64) -> Result<StudyOutput> {
    let lut = cfg.weight_lut()?;
    let camera = cfg.detector.camera()?;
    let phantom = generate_phantom(cfg.phantom.dims, cfg.phantom.spacing, derive_seed(seed, &[0]))?;
    let landmark_names: Vec<String> = phantom.landmarks.keys().cloned().collect();

    let pairs: Vec<(usize, usize)> = (0..cfg.fragments)
        .flat_map(|f| (0..cfg.moves_per_fragment).map(move |m| (f, m)))
        .collect();
    let scenarios: Vec<_> = pairs
        .par_iter()
        .map(|&(f, m)| prepare_scenario(cfg, &phantom, &camera, seed, f, m))
        .collect();

    let ids: Vec<(TrialId, usize)> = pairs
        .iter()
        .enumerate()
        .flat_map(|(s, &(f, m))| {
            (0..cfg.inits_per_move).map(move |i| {
                (
                    TrialId {
                        fragment: f,
                        movement: m,
                        init: i,
                    },
                    s,
                )
            })
        })
        .collect();
    let setups: Vec<std::result::Result<TrialSetup, (TrialId, String)>> = ids
        .par_iter()
        .map(|&(id, s)| match &scenarios[s] {
            Ok(sc) => prepare_trial(cfg, &phantom, sc, seed, id, s).map_err(|e| (id, e)),
            Err(e) => Err((id, e.clone())),
        })
        .collect();
    let excluded_trials = setups.iter().filter(|s| matches!(s, Ok(t) if t.excluded)).count();

    let jobs: Vec<(usize, MetricKind)> = (0..setups.len())
        .flat_map(|t| cfg.metrics.iter().map(move |m| (t, *m)))
        .collect();
    let records: Vec<StudyRecord> = jobs
        .par_iter()
        .map(|&(t, metric)| run_job(cfg, &phantom, &lut, &scenarios, &setups[t], metric, seed))
        .collect();

    let summary = summarize(&records, &cfg.metrics, &landmark_names, excluded_trials);
    let comparisons = compare(&records, &cfg.metrics)?;
    Ok(StudyOutput {
        seed,
        views: cfg.views,
        landmark_names,
        records,
        summary,
        comparisons,
        excluded_trials,
    })
}

fn run_job(
    cfg: &StudyConfig,
    phantom: &Phantom,
    lut: &WeightLut,
    scenarios: &[std::result::Result<Scenario, String>],
    setup: &std::result::Result<TrialSetup, (TrialId, String)>,
    metric: MetricKind,
    seed: u64,
) -> StudyRecord {
    let failed = |trial: TrialId, message: String, init_errors: Vec<PoseError>| StudyRecord {
        trial,
        metric,
        status: TrialStatus::Failed,
        message,
        init_errors,
        final_errors: vec![None; cfg.views],
        landmark_init_errors: BTreeMap::new(),
        landmark_errors: BTreeMap::new(),
        runtime_s: f64::NAN,
        coarse_wall_s: f64::NAN,
    };
    let setup = match setup {
        Ok(s) => s,
        Err((id, e)) => return failed(*id, e.clone(), Vec::new()),
    };
    let scenario = scenarios[setup.scenario]
        .as_ref()
        .expect("setup exists only for prepared scenarios");
    let mut record = StudyRecord {
        trial: setup.id,
        metric,
        status: TrialStatus::Excluded,
        message: String::new(),
        init_errors: setup.init_errors.clone(),
        final_errors: vec![None; cfg.views],
        landmark_init_errors: setup.landmark_init_errors.clone(),
        landmark_errors: BTreeMap::new(),
        runtime_s: f64::NAN,
        coarse_wall_s: f64::NAN,
    };
    if setup.excluded {
        record.message = "initial offset beyond exclusion bounds".into();
        return record;
    }
    let inputs: Vec<ViewInput> = scenario
        .views
        .iter()
        .zip(&setup.inits)
        .zip(&scenario.detections)
        .map(|((v, init), det)| ViewInput {
            fluoro: v.image.clone(),
            camera: v.camera,
            init: *init,
            detections: det.clone(),
        })
        .collect();
    let id = setup.id;
    let trial_seed = derive_seed(seed, &[5, id.fragment as u64, id.movement as u64, id.init as u64]);
    let start = Instant::now();
    let result = register_multiview_triangulate(
        &inputs,
        &phantom.volume,
        Some(&phantom.labels),
        Some(lut),
        &cfg.registration_for(metric),
        &scenario.truth.keys().cloned().collect::<Vec<_>>(),
        trial_seed,
    );
    record.runtime_s = start.elapsed().as_secs_f64();
    match result {
        Err(e) => {
            record.status = TrialStatus::Failed;
            record.message = e.to_string();
        }
        Ok(r) => {
            record.status = TrialStatus::Ok;
            let mut notes = Vec::new();
            let mut coarse = Vec::new();
            for (k, (v, view)) in r.views.iter().zip(&scenario.views).enumerate() {
                match v {
                    Ok(reg) => {
                        record.final_errors[k] =
                            Some(pose_offset(&reg.final_pose, &view.true_pose, &phantom.hip_center));
                        if let Some(l) = reg.levels.first() {
                            coarse.push(l.wall_time_s);
                        }
                    }
                    Err(e) => notes.push(format!("view {k}: {e}")),
                }
            }
            record.message = notes.join("; ");
            record.coarse_wall_s = mean(&coarse);
            record.landmark_errors = landmark_errors(&r.triangulated, &scenario.truth);
        }
    }
    record
}

fn stats_row(metric: MetricKind, quantity: &str, values: &[f64]) -> SummaryRow {
    let v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    SummaryRow {
        metric,
        quantity: quantity.to_string(),
        n: v.len(),
        mean: mean(&v),
        sd: std_dev(&v),
        median: median(&v),
    }
}

/// Every finite landmark error of successful trials of one metric.
pub fn pooled_landmark_errors(records: &[StudyRecord], metric: MetricKind) -> Vec<f64> {
    records
        .iter()
        .filter(|r| r.metric == metric && r.status == TrialStatus::Ok)
        .flat_map(|r| r.landmark_errors.values().copied())
        .filter(|x| x.is_finite())
        .collect()
}

/// Same pooling as [`pooled_landmark_errors`], read back from a trials CSV.
pub fn pooled_errors_from_trials_csv(text: &str, metric: MetricKind) -> Result<Vec<f64>> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let header = rd
        .headers()
        .map_err(|e| Error::parse("trials csv", e.to_string()))?
        .clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::parse("trials csv", format!("missing column `{name}`")))
    };
    let (mc, sc) = (col("metric")?, col("status")?);
    let landmark_cols: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("landmark_") && h.ends_with("_mm"))
        .filter(|(_, h)| !h.ends_with("_init_mm") && *h != "landmark_combined_mm")
        .map(|(i, _)| i)
        .collect();
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| Error::parse("trials csv", e.to_string()))?;
        if rec.get(sc) != Some(TrialStatus::Ok.as_str()) || rec.get(mc) != Some(metric.name()) {
            continue;
        }
        for &c in &landmark_cols {
            match rec.get(c) {
                Some("") | None => {}
                Some(v) => out.push(
                    v.parse::<f64>()
                        .map_err(|e| Error::parse("trials csv", format!("`{v}`: {e}")))?,
                ),
            }
        }
    }
    Ok(out)
}

fn summarize(records: &[StudyRecord], metrics: &[MetricKind], names: &[String], excluded: usize) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for &metric in metrics {
        let mine: Vec<&StudyRecord> = records.iter().filter(|r| r.metric == metric).collect();
        let ok: Vec<&StudyRecord> = mine.iter().copied().filter(|r| r.status == TrialStatus::Ok).collect();
        let count = |s: TrialStatus| mine.iter().filter(|r| r.status == s).count();
        for (q, n) in [
            ("trials_ok", ok.len()),
            ("trials_failed", count(TrialStatus::Failed)),
            ("trials_excluded", count(TrialStatus::Excluded)),
        ] {
            rows.push(SummaryRow {
                metric,
                quantity: q.into(),
                n,
                mean: f64::NAN,
                sd: f64::NAN,
                median: f64::NAN,
            });
        }
        debug_assert_eq!(count(TrialStatus::Excluded), excluded);
        let init: Vec<&PoseError> = ok.iter().flat_map(|r| r.init_errors.iter()).collect();
        let fin: Vec<&PoseError> = ok.iter().flat_map(|r| r.final_errors.iter().flatten()).collect();
        for (prefix, errs) in [("init", &init), ("final", &fin)] {
            let col = |f: &dyn Fn(&PoseError) -> f64| errs.iter().map(|e| f(e)).collect::<Vec<_>>();
            rows.push(stats_row(metric, &format!("{prefix}_rot_deg"), &col(&|e| e.rot_total)));
            for (a, axis) in ["x", "y", "z"].iter().enumerate() {
                rows.push(stats_row(
                    metric,
                    &format!("{prefix}_rot_{axis}_deg"),
                    &col(&|e| e.rot_xyz[a]),
                ));
            }
            rows.push(stats_row(
                metric,
                &format!("{prefix}_trans_mm"),
                &col(&|e| e.trans_total),
            ));
            for (a, axis) in ["x", "y", "z"].iter().enumerate() {
                rows.push(stats_row(
                    metric,
                    &format!("{prefix}_trans_{axis}_mm"),
                    &col(&|e| e.trans_xyz[a]),
                ));
            }
        }
        for name in names {
            let v: Vec<f64> = ok.iter().filter_map(|r| r.landmark_errors.get(name).copied()).collect();
            rows.push(stats_row(metric, &format!("landmark_{name}_mm"), &v));
        }
        let init_pool: Vec<f64> = ok
            .iter()
            .flat_map(|r| r.landmark_init_errors.values().copied())
            .collect();
        rows.push(stats_row(metric, "landmark_init_combined_mm", &init_pool));
        rows.push(stats_row(
            metric,
            "landmark_combined_mm",
            &pooled_landmark_errors(records, metric),
        ));
    }
    rows
}

fn compare(records: &[StudyRecord], metrics: &[MetricKind]) -> Result<Vec<Comparison>> {
    if !metrics.contains(&REFERENCE_METRIC) {
        return Ok(Vec::new());
    }
    let x = pooled_landmark_errors(records, REFERENCE_METRIC);
    let mut out = Vec::new();
    for &baseline in metrics.iter().filter(|m| **m != REFERENCE_METRIC) {
        let y = pooled_landmark_errors(records, baseline);
        if x.is_empty() || y.is_empty() {
            continue;
        }
        out.push(Comparison {
            metric: REFERENCE_METRIC,
            baseline,
            quantity: "landmark_combined_mm".into(),
            n_metric: x.len(),
            n_baseline: y.len(),
            median_metric: median(&x),
            median_baseline: median(&y),
            test: mann_whitney_u(&x, &y)?,
        });
    }
    Ok(out)
}

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::invalid(format!("csv output failed: {e}"))
}

pub const POSE_FIELDS: [&str; 8] = [
    "rot_deg",
    "rot_x_deg",
    "rot_y_deg",
    "rot_z_deg",
    "trans_mm",
    "trans_x_mm",
    "trans_y_mm",
    "trans_z_mm",
];

fn pose_fields(e: Option<&PoseError>) -> Vec<String> {
    match e {
        Some(e) => [
            e.rot_total,
            e.rot_xyz[0],
            e.rot_xyz[1],
            e.rot_xyz[2],
            e.trans_total,
            e.trans_xyz[0],
            e.trans_xyz[1],
            e.trans_xyz[2],
        ]
        .iter()
        .map(|v| num(*v))
        .collect(),
        None => vec![String::new(); POSE_FIELDS.len()],
    }
}

impl StudyOutput {
    pub fn trials_header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["fragment", "move", "init", "metric", "status"]
            .map(String::from)
            .to_vec();
        for v in 0..self.views {
            for stage in ["init", "final"] {
                h.extend(POSE_FIELDS.iter().map(|f| format!("view{v}_{stage}_{f}")));
            }
        }
        for name in &self.landmark_names {
            h.push(format!("landmark_{name}_init_mm"));
            h.push(format!("landmark_{name}_mm"));
        }
        h.push("landmark_combined_mm".into());
        h.push("message".into());
        h
    }

    /// One row per trial and metric, sorted by trial id then metric order.
    pub fn write_trials_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(self.trials_header()).map_err(csv_err)?;
        for r in &self.records {
            let mut row = vec![
                r.trial.fragment.to_string(),
                r.trial.movement.to_string(),
                r.trial.init.to_string(),
                r.metric.name().to_string(),
                r.status.as_str().to_string(),
            ];
            for v in 0..self.views {
                row.extend(pose_fields(r.init_errors.get(v)));
                row.extend(pose_fields(r.final_errors.get(v).and_then(|e| e.as_ref())));
            }
            for name in &self.landmark_names {
                row.push(r.landmark_init_errors.get(name).map_or(String::new(), |v| num(*v)));
                row.push(r.landmark_errors.get(name).map_or(String::new(), |v| num(*v)));
            }
            row.push(num(r.combined_error()));
            row.push(r.message.clone());
            out.write_record(&row).map_err(csv_err)?;
        }
        out.flush().map_err(|e| Error::invalid(e.to_string()))
    }

    pub fn write_summary_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["metric", "quantity", "n", "mean", "sd", "median"])
            .map_err(csv_err)?;
        for r in &self.summary {
            out.write_record([
                r.metric.name().to_string(),
                r.quantity.clone(),
                r.n.to_string(),
                num(r.mean),
                num(r.sd),
                num(r.median),
            ])
            .map_err(csv_err)?;
        }
        out.flush().map_err(|e| Error::invalid(e.to_string()))
    }

    pub fn write_comparisons_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "metric",
            "baseline",
            "quantity",
            "n_metric",
            "n_baseline",
            "median_metric",
            "median_baseline",
            "u",
            "p_one_tailed",
            "exact",
        ])
        .map_err(csv_err)?;
        for c in &self.comparisons {
            out.write_record([
                c.metric.name().to_string(),
                c.baseline.name().to_string(),
                c.quantity.clone(),
                c.n_metric.to_string(),
                c.n_baseline.to_string(),
                num(c.median_metric),
                num(c.median_baseline),
                num(c.test.u),
                num(c.test.p),
                c.test.exact.to_string(),
            ])
            .map_err(csv_err)?;
        }
        out.flush().map_err(|e| Error::invalid(e.to_string()))
    }

    /// Wall-clock measurements, kept apart from the reproducible tables.
    pub fn write_timings_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["fragment", "move", "init", "metric", "runtime_s", "coarse_wall_s"])
            .map_err(csv_err)?;
        for r in &self.records {
            out.write_record([
                r.trial.fragment.to_string(),
                r.trial.movement.to_string(),
                r.trial.init.to_string(),
                r.metric.name().to_string(),
                num(r.runtime_s),
                num(r.coarse_wall_s),
            ])
            .map_err(csv_err)?;
        }
        out.flush().map_err(|e| Error::invalid(e.to_string()))
    }

    /// Writes `trials.csv`, `summary.csv`, `comparisons.csv`, `timings.csv`
    /// and `metadata.json` into an existing directory.
    pub fn write_all(&self, dir: &Path, cfg: &StudyConfig, workers: usize) -> Result<()> {
        let create = |name: &str| {
            let p = dir.join(name);
            std::fs::File::create(&p)
                .map(std::io::BufWriter::new)
                .map_err(|e| Error::io(&p, e))
        };
        self.write_trials_csv(create("trials.csv")?)?;
        self.write_summary_csv(create("summary.csv")?)?;
        self.write_comparisons_csv(create("comparisons.csv")?)?;
        self.write_timings_csv(create("timings.csv")?)?;
        let meta = serde_json::json!({
            "seed": self.seed,
            "workers": workers,
            "package": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "trials": self.records.len() / cfg.metrics.len().max(1),
            "excluded_trials": self.excluded_trials,
            "config": cfg,
        });
        let p = dir.join("metadata.json");
        let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::invalid(e.to_string()))?;
        std::fs::write(&p, text + "\n").map_err(|e| Error::io(&p, e))
    }
}
