//! Python module `fluororeg`: file-based registration, study runs and the
//! statistics helpers.

use std::path::PathBuf;

use nalgebra::Matrix4;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use fluororeg_core::formats::{read_camera, read_pose};
use fluororeg_core::geom::{pose_error as core_pose_error, RigidPose, Vec3};
use fluororeg_core::image::io::{read_image, read_labels, read_volume};
use fluororeg_core::registration::{register_single_view, MetricKind, RegistrationConfig};
use fluororeg_core::simstudy::{self, labels, Phantom, StudyConfig};
use fluororeg_core::weights::{grow_patch_count as core_grow, WeightLut};
use fluororeg_core::Error;

type Mat = [[f64; 4]; 4];

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidArgument(_) | Error::DimensionMismatch(_) | Error::Parse { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn pose_from(m: &Mat) -> PyResult<RigidPose> {
    RigidPose::from_matrix4(&Matrix4::from_fn(|r, c| m[r][c])).map_err(to_py)
}

fn mat_from(p: &RigidPose) -> Mat {
    let m = p.to_matrix4();
    std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]))
}

fn metric(name: &str) -> PyResult<MetricKind> {
    name.parse().map_err(to_py)
}

/// Names accepted wherever a metric is expected.
#[pyfunction]
pub fn metric_names() -> Vec<&'static str> {
    MetricKind::ALL.iter().map(|m| m.name()).collect()
}

/// Patch count after one growth step of the random-subset schedule.
#[pyfunction]
pub fn grow_patch_count(n: usize) -> usize {
    core_grow(n)
}

/// One-tailed Mann-Whitney U test of `x` being smaller than `y`.
/// Returns `(u, p, exact)`.
#[pyfunction]
pub fn mann_whitney_u(x: Vec<f64>, y: Vec<f64>) -> PyResult<(f64, f64, bool)> {
    let r = simstudy::mann_whitney_u(&x, &y).map_err(to_py)?;
    Ok((r.u, r.p, r.exact))
}

/// Rotation (deg) and translation (mm) of `estimate ∘ truth⁻¹` about `center`.
#[pyfunction]
pub fn pose_error(estimate: Mat, truth: Mat, center: [f64; 3]) -> PyResult<(f64, f64)> {
    let e = core_pose_error(&pose_from(&estimate)?, &pose_from(&truth)?, &Vec3::from(center));
    Ok((e.rot_total, e.trans_total))
}

/// Registers a volume to one view read from disk; returns the 4×4 pose
/// (volume to world).
#[pyfunction]
#[pyo3(signature = (fluoro, camera, volume, init, metric_name, seed, labels_path=None, lut=None, config=None))]
#[allow(clippy::too_many_arguments)]
fn register(
    py: Python<'_>,
    fluoro: PathBuf,
    camera: PathBuf,
    volume: PathBuf,
    init: PathBuf,
    metric_name: &str,
    seed: u64,
    labels_path: Option<PathBuf>,
    lut: Option<PathBuf>,
    config: Option<PathBuf>,
) -> PyResult<Mat> {
    let m = metric(metric_name)?;
    let base = match config {
        Some(p) => RegistrationConfig::load(&p).map_err(to_py)?,
        None => RegistrationConfig::for_metric(m),
    };
    let mut cfg = base.with_metric(m);
    cfg.mismatch_labels = labels::MISMATCH.to_vec();
    cfg.surface_labels = labels::SURFACE.to_vec();
    let image = read_image(&fluoro).map_err(to_py)?;
    let cam = read_camera(&camera).map_err(to_py)?;
    let vol = read_volume(&volume).map_err(to_py)?;
    let lab = labels_path.map(|p| read_labels(&p)).transpose().map_err(to_py)?;
    let lut = match lut {
        Some(p) => WeightLut::load(&p).map_err(to_py)?,
        None => Phantom::default_lut(),
    };
    let init = read_pose(&init).map_err(to_py)?;
    let res = py
        .detach(|| register_single_view(&image, &vol, lab.as_ref(), Some(&lut), &cam, &init, &cfg, seed))
        .map_err(to_py)?;
    Ok(mat_from(&res.final_pose))
}

/// Runs a study from TOML text and writes its outputs into `out_dir`.
/// Returns the number of trial records.
#[pyfunction]
#[pyo3(signature = (config_toml, out_dir, seed=None, workers=1))]
fn run_study(
    py: Python<'_>,
    config_toml: &str,
    out_dir: PathBuf,
    seed: Option<u64>,
    workers: usize,
) -> PyResult<usize> {
    let cfg = StudyConfig::from_toml(config_toml).map_err(to_py)?;
    let seed = seed
        .or(cfg.seed)
        .ok_or_else(|| PyValueError::new_err("a seed is required"))?;
    let out = py.detach(|| simstudy::run_study(&cfg, seed, workers)).map_err(to_py)?;
    out.write_all(&out_dir, &cfg, workers).map_err(to_py)?;
    Ok(out.records.len())
}

#[pymodule]
fn fluororeg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(metric_names, m)?)?;
    m.add_function(wrap_pyfunction!(grow_patch_count, m)?)?;
    m.add_function(wrap_pyfunction!(mann_whitney_u, m)?)?;
    m.add_function(wrap_pyfunction!(pose_error, m)?)?;
    m.add_function(wrap_pyfunction!(register, m)?)?;
    m.add_function(wrap_pyfunction!(run_study, m)?)?;
    Ok(())
}
