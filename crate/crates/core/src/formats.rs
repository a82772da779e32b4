//! Plain-text interchange: poses as 4×4 row-major matrices, camera
//! geometry as TOML, landmarks as CSV.

use std::path::Path;

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{CameraModel, RigidPose, Vec2, Vec3};
use crate::registration::{Landmarks2, Landmarks3};

fn parse_err(what: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        what: what.into(),
        message: message.into(),
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Four whitespace-separated rows; `#` starts a comment.
pub fn pose_to_text(pose: &RigidPose) -> String {
    let m = pose.to_matrix4();
    let mut s = String::new();
    for r in 0..4 {
        let row: Vec<String> = (0..4).map(|c| format!("{:e}", m[(r, c)])).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

pub fn pose_from_text(text: &str) -> Result<RigidPose> {
    let values: Vec<f64> = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_whitespace)
        .map(|t| t.parse::<f64>().map_err(|e| parse_err("pose", format!("`{t}`: {e}"))))
        .collect::<Result<_>>()?;
    if values.len() != 16 {
        return Err(parse_err(
            "pose",
            format!("expected 16 numbers, found {}", values.len()),
        ));
    }
    RigidPose::from_matrix4(&Matrix4::from_row_slice(&values))
}

pub fn write_pose(path: &Path, pose: &RigidPose) -> Result<()> {
    write_text(path, &pose_to_text(pose))
}

pub fn read_pose(path: &Path) -> Result<RigidPose> {
    pose_from_text(&read_text(path)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraFile {
    source_to_detector: f64,
    rows: usize,
    cols: usize,
    pixel_spacing: f64,
    /// (column, row)
    principal_point: [f64; 2],
    /// World to camera, row-major.
    extrinsic: [[f64; 4]; 4],
}

pub fn camera_to_text(cam: &CameraModel) -> String {
    let m = cam.extrinsic.to_matrix4();
    let file = CameraFile {
        source_to_detector: cam.source_to_detector,
        rows: cam.detector_rows,
        cols: cam.detector_cols,
        pixel_spacing: cam.pixel_spacing,
        principal_point: [cam.principal_point.x, cam.principal_point.y],
        extrinsic: std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)])),
    };
    toml::to_string(&file).expect("camera fields are plain numbers")
}

pub fn camera_from_text(text: &str) -> Result<CameraModel> {
    let f: CameraFile = toml::from_str(text).map_err(|e| parse_err("camera", e.to_string()))?;
    let m = Matrix4::from_fn(|r, c| f.extrinsic[r][c]);
    CameraModel::new(
        f.source_to_detector,
        f.rows,
        f.cols,
        f.pixel_spacing,
        Vec2::new(f.principal_point[0], f.principal_point[1]),
        RigidPose::from_matrix4(&m)?,
    )
}

pub fn write_camera(path: &Path, cam: &CameraModel) -> Result<()> {
    write_text(path, &camera_to_text(cam))
}

pub fn read_camera(path: &Path) -> Result<CameraModel> {
    camera_from_text(&read_text(path)?)
}

fn csv_rows(text: &str, what: &str, width: usize) -> Result<Vec<(String, Vec<f64>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| parse_err(what, e.to_string()))?;
        if rec.len() != width + 1 {
            return Err(parse_err(
                what,
                format!("expected {} columns, found {}", width + 1, rec.len()),
            ));
        }
        let vals = (1..=width)
            .map(|i| {
                rec[i]
                    .parse::<f64>()
                    .map_err(|e| parse_err(what, format!("`{}`: {e}", &rec[i])))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push((rec[0].to_string(), vals));
    }
    Ok(out)
}

fn csv_text(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

/// `name,x,y,z` in millimetres.
pub fn landmarks3_to_text(l: &Landmarks3) -> String {
    csv_text(
        &["name", "x", "y", "z"],
        l.iter()
            .map(|(k, p)| vec![k.clone(), p.x.to_string(), p.y.to_string(), p.z.to_string()]),
    )
}

pub fn landmarks3_from_text(text: &str) -> Result<Landmarks3> {
    Ok(csv_rows(text, "3D landmarks", 3)?
        .into_iter()
        .map(|(k, v)| (k, Vec3::new(v[0], v[1], v[2])))
        .collect())
}

/// `name,col,row` in pixels.
pub fn landmarks2_to_text(l: &Landmarks2) -> String {
    csv_text(
        &["name", "col", "row"],
        l.iter().map(|(k, p)| vec![k.clone(), p.x.to_string(), p.y.to_string()]),
    )
}

pub fn landmarks2_from_text(text: &str) -> Result<Landmarks2> {
    Ok(csv_rows(text, "2D landmarks", 2)?
        .into_iter()
        .map(|(k, v)| (k, Vec2::new(v[0], v[1])))
        .collect())
}

pub fn write_landmarks3(path: &Path, l: &Landmarks3) -> Result<()> {
    write_text(path, &landmarks3_to_text(l))
}

pub fn read_landmarks3(path: &Path) -> Result<Landmarks3> {
    landmarks3_from_text(&read_text(path)?)
}

pub fn write_landmarks2(path: &Path, l: &Landmarks2) -> Result<()> {
    write_text(path, &landmarks2_to_text(l))
}

pub fn read_landmarks2(path: &Path) -> Result<Landmarks2> {
    landmarks2_from_text(&read_text(path)?)
}
