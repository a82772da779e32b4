//! 2D images, 3D attenuation/label volumes and the small set of filters the
//! registration needs.

use crate::error::{Error, Result};
use crate::geom::Vec3;

pub mod io;

#[derive(Clone, Debug, PartialEq)]
pub struct Image2D {
    pub rows: usize,
    pub cols: usize,
    /// mm per pixel
    pub pixel_spacing: f64,
    /// Row-major.
    pub data: Vec<f64>,
}

impl Image2D {
    pub fn zeros(rows: usize, cols: usize, pixel_spacing: f64) -> Self {
        Self {
            rows,
            cols,
            pixel_spacing,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, pixel_spacing: f64, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("image must have at least one row and column"));
        }
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {rows}x{cols} image",
                data.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            pixel_spacing,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, pixel_spacing: f64, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self {
            rows,
            cols,
            pixel_spacing,
            data,
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn same_shape(&self, other: &Image2D) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image2D {
        Image2D {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn transpose(&self) -> Image2D {
        Image2D::from_fn(self.cols, self.rows, self.pixel_spacing, |r, c| self.get(c, r))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Placement of a voxel grid in its own (volume) frame. Voxel `(i, j, k)` is
/// centered at `origin + (i·sx, j·sy, k·sz)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VolumeGeometry {
    pub dims: [usize; 3],
    pub spacing: Vec3,
    pub origin: Vec3,
}

impl VolumeGeometry {
    pub fn new(dims: [usize; 3], spacing: Vec3, origin: Vec3) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::invalid("volume dims must be positive"));
        }
        if !(spacing.x > 0.0 && spacing.y > 0.0 && spacing.z > 0.0) {
            return Err(Error::invalid("volume spacing must be positive"));
        }
        Ok(Self { dims, spacing, origin })
    }

    /// Geometry whose voxel-center bounding box is centered on the origin.
    pub fn centered(dims: [usize; 3], spacing: Vec3) -> Result<Self> {
        let origin = Vec3::new(
            -(dims[0] as f64 - 1.0) * spacing.x / 2.0,
            -(dims[1] as f64 - 1.0) * spacing.y / 2.0,
            -(dims[2] as f64 - 1.0) * spacing.z / 2.0,
        );
        Self::new(dims, spacing, origin)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn linear_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn ijk(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let rest = idx / self.dims[0];
        [i, rest % self.dims[1], rest / self.dims[1]]
    }

    /// Continuous index coordinates of a volume-frame point.
    #[inline]
    pub fn to_index(&self, p: &Vec3) -> Vec3 {
        (p - self.origin).component_div(&self.spacing)
    }

    #[inline]
    pub fn to_world(&self, index: &Vec3) -> Vec3 {
        self.origin + index.component_mul(&self.spacing)
    }

    #[inline]
    pub fn voxel_center(&self, idx: usize) -> Vec3 {
        let [i, j, k] = self.ijk(idx);
        self.to_world(&Vec3::new(i as f64, j as f64, k as f64))
    }

    /// Center of the voxel-center bounding box.
    pub fn center(&self) -> Vec3 {
        self.to_world(&Vec3::new(
            (self.dims[0] as f64 - 1.0) / 2.0,
            (self.dims[1] as f64 - 1.0) / 2.0,
            (self.dims[2] as f64 - 1.0) / 2.0,
        ))
    }

    /// Nearest voxel to a volume-frame point, if inside the grid.
    #[inline]
    pub fn nearest_voxel(&self, p: &Vec3) -> Option<usize> {
        let x = self.to_index(p);
        let i = x.x.round();
        let j = x.y.round();
        let k = x.z.round();
        if i < 0.0 || j < 0.0 || k < 0.0 {
            return None;
        }
        let (i, j, k) = (i as usize, j as usize, k as usize);
        if i >= self.dims[0] || j >= self.dims[1] || k >= self.dims[2] {
            return None;
        }
        Some(self.linear_index(i, j, k))
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.x.min(self.spacing.y).min(self.spacing.z)
    }
}

/// Linear attenuation volume (1/mm).
#[derive(Clone, Debug, PartialEq)]
pub struct Volume3D {
    pub geometry: VolumeGeometry,
    pub data: Vec<f32>,
}

impl Volume3D {
    pub fn zeros(geometry: VolumeGeometry) -> Self {
        Self {
            data: vec![0.0; geometry.len()],
            geometry,
        }
    }

    pub fn from_vec(geometry: VolumeGeometry, data: Vec<f32>) -> Result<Self> {
        if data.len() != geometry.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a volume of {} voxels",
                data.len(),
                geometry.len()
            )));
        }
        Ok(Self { geometry, data })
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[self.geometry.linear_index(i, j, k)]
    }

    /// Inclusive index bounding box of non-zero voxels, or `None` if the
    /// volume is entirely zero.
    pub fn nonzero_bounds(&self) -> Option<([usize; 3], [usize; 3])> {
        nonzero_bounds(&self.geometry, |idx| self.data[idx] != 0.0)
    }
}

/// Integer anatomical labels; 0 is background.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelVolume {
    pub geometry: VolumeGeometry,
    pub data: Vec<u16>,
}

impl LabelVolume {
    pub fn zeros(geometry: VolumeGeometry) -> Self {
        Self {
            data: vec![0; geometry.len()],
            geometry,
        }
    }

    pub fn from_vec(geometry: VolumeGeometry, data: Vec<u16>) -> Result<Self> {
        if data.len() != geometry.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for a volume of {} voxels",
                data.len(),
                geometry.len()
            )));
        }
        Ok(Self { geometry, data })
    }

    pub fn check_matches(&self, vol: &Volume3D) -> Result<()> {
        if self.geometry != vol.geometry {
            return Err(Error::DimensionMismatch(
                "label volume geometry differs from the attenuation volume".into(),
            ));
        }
        Ok(())
    }

    pub fn max_label(&self) -> u16 {
        self.data.iter().copied().max().unwrap_or(0)
    }
}

pub(crate) fn nonzero_bounds(g: &VolumeGeometry, is_set: impl Fn(usize) -> bool) -> Option<([usize; 3], [usize; 3])> {
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut any = false;
    for k in 0..g.dims[2] {
        for j in 0..g.dims[1] {
            let base = g.dims[0] * (j + g.dims[1] * k);
            for i in 0..g.dims[0] {
                if is_set(base + i) {
                    any = true;
                    for (a, v) in [i, j, k].into_iter().enumerate() {
                        lo[a] = lo[a].min(v);
                        hi[a] = hi[a].max(v);
                    }
                }
            }
        }
    }
    any.then_some((lo, hi))
}

/// Trilinear interpolation in continuous index space with zero padding:
/// samples within one voxel of the grid blend towards 0, anything further out
/// is exactly 0.
pub fn trilinear_sample(vol: &Volume3D, p_world: &Vec3) -> f64 {
    trilinear_index(vol, &vol.geometry.to_index(p_world))
}

#[inline]
pub(crate) fn trilinear_index(vol: &Volume3D, x: &Vec3) -> f64 {
    let [nx, ny, nz] = vol.geometry.dims;
    let fx = x.x.floor();
    let fy = x.y.floor();
    let fz = x.z.floor();
    if fx < -1.0 || fy < -1.0 || fz < -1.0 || fx >= nx as f64 || fy >= ny as f64 || fz >= nz as f64 {
        return 0.0;
    }
    let (tx, ty, tz) = (x.x - fx, x.y - fy, x.z - fz);
    let (i0, j0, k0) = (fx as isize, fy as isize, fz as isize);
    let d = &vol.data;
    if i0 >= 0 && j0 >= 0 && k0 >= 0 && (i0 as usize) + 1 < nx && (j0 as usize) + 1 < ny && (k0 as usize) + 1 < nz {
        let base = i0 as usize + nx * (j0 as usize + ny * k0 as usize);
        let sy = nx;
        let sz = nx * ny;
        let c000 = d[base] as f64;
        let c100 = d[base + 1] as f64;
        let c010 = d[base + sy] as f64;
        let c110 = d[base + sy + 1] as f64;
        let c001 = d[base + sz] as f64;
        let c101 = d[base + sz + 1] as f64;
        let c011 = d[base + sz + sy] as f64;
        let c111 = d[base + sz + sy + 1] as f64;
        let c00 = c000 + tx * (c100 - c000);
        let c10 = c010 + tx * (c110 - c010);
        let c01 = c001 + tx * (c101 - c001);
        let c11 = c011 + tx * (c111 - c011);
        let c0 = c00 + ty * (c10 - c00);
        let c1 = c01 + ty * (c11 - c01);
        return c0 + tz * (c1 - c0);
    }
    let fetch = |i: isize, j: isize, k: isize| -> f64 {
        if i < 0 || j < 0 || k < 0 || i as usize >= nx || j as usize >= ny || k as usize >= nz {
            0.0
        } else {
            d[i as usize + nx * (j as usize + ny * k as usize)] as f64
        }
    };
    let mut acc = 0.0;
    for (dk, wz) in [(0, 1.0 - tz), (1, tz)] {
        for (dj, wy) in [(0, 1.0 - ty), (1, ty)] {
            for (di, wx) in [(0, 1.0 - tx), (1, tx)] {
                acc += wx * wy * wz * fetch(i0 + di, j0 + dj, k0 + dk);
            }
        }
    }
    acc
}

/// Nearest-neighbour label; background (0) outside the grid.
pub fn nearest_label(lab: &LabelVolume, p_world: &Vec3) -> u16 {
    lab.geometry.nearest_voxel(p_world).map_or(0, |idx| lab.data[idx])
}

/// Block average over `factor × factor` cells; trailing rows/cols that do
/// not fill a block are dropped.
pub fn downsample(img: &Image2D, factor: usize) -> Result<Image2D> {
    if factor < 1 {
        return Err(Error::invalid("downsample factor must be >= 1"));
    }
    if factor == 1 {
        return Ok(img.clone());
    }
    let rows = img.rows / factor;
    let cols = img.cols / factor;
    if rows == 0 || cols == 0 {
        return Err(Error::invalid(format!(
            "factor {factor} leaves no pixels of a {}x{} image",
            img.rows, img.cols
        )));
    }
    let norm = 1.0 / (factor * factor) as f64;
    let mut out = Image2D::zeros(rows, cols, img.pixel_spacing * factor as f64);
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = 0.0;
            for rr in r * factor..(r + 1) * factor {
                let row = &img.data[rr * img.cols + c * factor..rr * img.cols + (c + 1) * factor];
                acc += row.iter().sum::<f64>();
            }
            out.set(r, c, acc * norm);
        }
    }
    Ok(out)
}

/// 3×3 Sobel derivatives along columns (x) and rows (y) with edge
/// replication at the border.
pub fn sobel_gradients(img: &Image2D) -> Result<(Image2D, Image2D)> {
    if img.rows < 3 || img.cols < 3 {
        return Err(Error::invalid(format!(
            "Sobel needs at least 3x3 pixels, got {}x{}",
            img.rows, img.cols
        )));
    }
    let (rows, cols) = (img.rows, img.cols);
    let mut gx = Image2D::zeros(rows, cols, img.pixel_spacing);
    let mut gy = Image2D::zeros(rows, cols, img.pixel_spacing);
    for r in 0..rows {
        let ru = r.saturating_sub(1);
        let rd = (r + 1).min(rows - 1);
        let up = &img.data[ru * cols..(ru + 1) * cols];
        let mid = &img.data[r * cols..(r + 1) * cols];
        let down = &img.data[rd * cols..(rd + 1) * cols];
        for c in 0..cols {
            let cl = c.saturating_sub(1);
            let cr = (c + 1).min(cols - 1);
            let x = (up[cr] - up[cl]) + 2.0 * (mid[cr] - mid[cl]) + (down[cr] - down[cl]);
            let y = (down[cl] - up[cl]) + 2.0 * (down[c] - up[c]) + (down[cr] - up[cr]);
            gx.data[r * cols + c] = x;
            gy.data[r * cols + c] = y;
        }
    }
    Ok((gx, gy))
}

/// Binary dilation with a `(2·radius+1)²` square element; non-zero pixels
/// are "set". Output pixels are exactly 0.0 or 1.0.
pub fn dilate(mask: &Image2D, radius: usize) -> Image2D {
    let (rows, cols) = (mask.rows, mask.cols);
    let binary = mask.map(|v| if v != 0.0 { 1.0 } else { 0.0 });
    if radius == 0 {
        return binary;
    }
    // separable: rows then columns
    let mut horiz = Image2D::zeros(rows, cols, mask.pixel_spacing);
    for r in 0..rows {
        for c in 0..cols {
            let lo = c.saturating_sub(radius);
            let hi = (c + radius).min(cols - 1);
            if (lo..=hi).any(|cc| binary.get(r, cc) != 0.0) {
                horiz.set(r, c, 1.0);
            }
        }
    }
    let mut out = Image2D::zeros(rows, cols, mask.pixel_spacing);
    for r in 0..rows {
        let lo = r.saturating_sub(radius);
        let hi = (r + radius).min(rows - 1);
        for c in 0..cols {
            if (lo..=hi).any(|rr| horiz.get(rr, c) != 0.0) {
                out.set(r, c, 1.0);
            }
        }
    }
    out
}
