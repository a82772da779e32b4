//! Patchwise normalized cross-correlation on intensities and Sobel
//! gradients, patch grids and weighted combinations of patch scores.

use crate::error::{Error, Result};
use crate::image::{sobel_gradients, Image2D};

/// Square `(2r+1)²` neighbourhood centred on `(center_row, center_col)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Patch {
    pub center_row: usize,
    pub center_col: usize,
    pub radius: usize,
}

impl Patch {
    pub fn new(center_row: usize, center_col: usize, radius: usize) -> Self {
        Self {
            center_row,
            center_col,
            radius,
        }
    }

    pub fn fits(&self, rows: usize, cols: usize) -> bool {
        let r = self.radius;
        self.center_row >= r && self.center_col >= r && self.center_row + r < rows && self.center_col + r < cols
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    fn check(&self, img: &Image2D) -> Result<()> {
        if self.fits(img.rows, img.cols) {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "patch at ({}, {}) with radius {} does not fit a {}x{} image",
                self.center_row, self.center_col, self.radius, img.rows, img.cols
            )))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchGrid {
    pub radius: usize,
    pub centers: Vec<(usize, usize)>,
}

impl PatchGrid {
    /// Validates that every center fits a `rows × cols` image and that
    /// centers are unique.
    pub fn new(rows: usize, cols: usize, radius: usize, centers: Vec<(usize, usize)>) -> Result<Self> {
        let mut seen = std::collections::HashSet::with_capacity(centers.len());
        for &(r, c) in &centers {
            if !Patch::new(r, c, radius).fits(rows, cols) {
                return Err(Error::invalid(format!("patch center ({r}, {c}) does not fit")));
            }
            if !seen.insert((r, c)) {
                return Err(Error::invalid(format!("duplicate patch center ({r}, {c})")));
            }
        }
        Ok(Self { radius, centers })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn patch(&self, k: usize) -> Patch {
        let (r, c) = self.centers[k];
        Patch::new(r, c, self.radius)
    }

    pub fn patches(&self) -> impl Iterator<Item = Patch> + '_ {
        self.centers.iter().map(|&(r, c)| Patch::new(r, c, self.radius))
    }

    /// Grid made of the patches at `indices` (kept in the given order).
    pub fn select(&self, indices: &[usize]) -> PatchGrid {
        PatchGrid {
            radius: self.radius,
            centers: indices.iter().map(|&i| self.centers[i]).collect(),
        }
    }

    /// Boolean pixel mask covering every patch footprint dilated by `margin`.
    pub fn footprint(&self, rows: usize, cols: usize, margin: usize) -> Vec<bool> {
        let mut mask = vec![false; rows * cols];
        let h = self.radius + margin;
        for &(cr, cc) in &self.centers {
            let (r0, r1) = (cr.saturating_sub(h), (cr + h).min(rows - 1));
            let (c0, c1) = (cc.saturating_sub(h), (cc + h).min(cols - 1));
            for r in r0..=r1 {
                mask[r * cols + c0..=r * cols + c1].fill(true);
            }
        }
        mask
    }
}

/// Every patch center with unit stride, row-major.
pub fn complete_patch_grid(rows: usize, cols: usize, radius: usize) -> Result<PatchGrid> {
    let side = 2 * radius + 1;
    if rows < side || cols < side {
        return Err(Error::invalid(format!(
            "a {rows}x{cols} image cannot hold a patch of radius {radius}"
        )));
    }
    let mut centers = Vec::with_capacity((rows - 2 * radius) * (cols - 2 * radius));
    for r in radius..rows - radius {
        for c in radius..cols - radius {
            centers.push((r, c));
        }
    }
    Ok(PatchGrid { radius, centers })
}

fn check_same(i1: &Image2D, i2: &Image2D) -> Result<()> {
    if i1.same_shape(i2) {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            i1.rows, i1.cols, i2.rows, i2.cols
        )))
    }
}

/// Two-pass patch statistics; `None` when either patch is constant.
fn ncc_direct(a: &Image2D, b: &Image2D, p: &Patch) -> Option<f64> {
    let r = p.radius;
    let n = (p.side() * p.side()) as f64;
    let rows = p.center_row - r..=p.center_row + r;
    let cols = p.center_col - r..=p.center_col + r;
    let (mut sa, mut sb) = (0.0, 0.0);
    for i in rows.clone() {
        for j in cols.clone() {
            sa += a.get(i, j);
            sb += b.get(i, j);
        }
    }
    let (ma, mb) = (sa / n, sb / n);
    let (mut vaa, mut vbb, mut vab) = (0.0, 0.0, 0.0);
    let (mut amax, mut bmax) = (0.0f64, 0.0f64);
    for i in rows {
        for j in cols.clone() {
            let (x, y) = (a.get(i, j), b.get(i, j));
            let (da, db) = (x - ma, y - mb);
            vaa += da * da;
            vbb += db * db;
            vab += da * db;
            amax = amax.max(x.abs());
            bmax = bmax.max(y.abs());
        }
    }
    // constant patches leave only rounding residue in the deviations
    let flat = |v: f64, m: f64| v <= n * (1e-12 * m).powi(2);
    if flat(vaa, amax) || flat(vbb, bmax) {
        return None;
    }
    Some(vab / (vaa * vbb).sqrt())
}

/// Normalized cross-correlation over one patch (population statistics).
/// Errors with [`Error::DegeneratePatch`] when either patch is constant.
pub fn ncc_patch(i1: &Image2D, i2: &Image2D, patch: &Patch) -> Result<f64> {
    check_same(i1, i2)?;
    patch.check(i1)?;
    ncc_direct(i1, i2, patch).ok_or(Error::DegeneratePatch)
}

/// Sobel derivative images of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub gx: Image2D,
    pub gy: Image2D,
}

impl Gradients {
    pub fn new(img: &Image2D) -> Result<Self> {
        let (gx, gy) = sobel_gradients(img)?;
        Ok(Self { gx, gy })
    }
}

/// Sum of the patch NCCs of the x and y Sobel derivatives; a constant
/// derivative patch contributes 0. Gradients may be supplied precomputed
/// (full-image Sobel of `i1` and `i2`).
pub fn grad_ncc_patch(
    i1: &Image2D,
    i2: &Image2D,
    patch: &Patch,
    precomputed: Option<(&Gradients, &Gradients)>,
) -> Result<f64> {
    check_same(i1, i2)?;
    patch.check(i1)?;
    let owned;
    let (g1, g2) = match precomputed {
        Some((g1, g2)) => {
            check_same(&g1.gx, i1)?;
            check_same(&g2.gx, i2)?;
            (g1, g2)
        }
        None => {
            owned = (Gradients::new(i1)?, Gradients::new(i2)?);
            (&owned.0, &owned.1)
        }
    };
    Ok(ncc_direct(&g1.gx, &g2.gx, patch).unwrap_or(0.0) + ncc_direct(&g1.gy, &g2.gy, patch).unwrap_or(0.0))
}

/// Whole-image NCC; `None` if either image is constant.
fn ncc_full(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut vaa, mut vbb, mut vab) = (0.0, 0.0, 0.0);
    let (mut amax, mut bmax) = (0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (da, db) = (x - ma, y - mb);
        vaa += da * da;
        vbb += db * db;
        vab += da * db;
        amax = amax.max(x.abs());
        bmax = bmax.max(y.abs());
    }
    let flat = |v: f64, m: f64| v <= n * (1e-12 * m).powi(2);
    if flat(vaa, amax) || flat(vbb, bmax) {
        return None;
    }
    Some(vab / (vaa * vbb).sqrt())
}

/// Whole-image NCC.
pub fn ncc(i1: &Image2D, i2: &Image2D) -> Result<f64> {
    check_same(i1, i2)?;
    ncc_full(&i1.data, &i2.data).ok_or(Error::DegeneratePatch)
}

/// The Grad-NCC metric: gradient NCC over the entire image extent.
pub fn grad_ncc(i1: &Image2D, i2: &Image2D) -> Result<f64> {
    check_same(i1, i2)?;
    let (g1, g2) = (Gradients::new(i1)?, Gradients::new(i2)?);
    Ok(ncc_full(&g1.gx.data, &g2.gx.data).unwrap_or(0.0) + ncc_full(&g1.gy.data, &g2.gy.data).unwrap_or(0.0))
}

/// Summed-area table with a zero first row and column.
#[derive(Clone, Debug)]
pub(crate) struct Integral {
    cols: usize,
    s: Vec<f64>,
}

impl Integral {
    pub(crate) fn new(rows: usize, cols: usize, v: impl Fn(usize) -> f64) -> Self {
        let w = cols + 1;
        let mut s = vec![0.0; (rows + 1) * w];
        for r in 0..rows {
            let mut run = 0.0;
            for c in 0..cols {
                run += v(r * cols + c);
                s[(r + 1) * w + c + 1] = s[r * w + c + 1] + run;
            }
        }
        Self { cols, s }
    }

    #[inline]
    pub(crate) fn patch_sum(&self, p: &Patch) -> f64 {
        let w = self.cols + 1;
        let (r0, r1) = (p.center_row - p.radius, p.center_row + p.radius + 1);
        let (c0, c1) = (p.center_col - p.radius, p.center_col + p.radius + 1);
        self.s[r1 * w + c1] - self.s[r0 * w + c1] - self.s[r1 * w + c0] + self.s[r0 * w + c0]
    }
}

/// Mean-centred copy of a channel with its first and second moment tables.
#[derive(Clone, Debug)]
struct Channel {
    centered: Vec<f64>,
    sum: Integral,
    sum_sq: Integral,
    /// Patch variances at or below this are treated as zero.
    flat: f64,
}

impl Channel {
    fn new(img: &Image2D) -> Self {
        let n = img.data.len() as f64;
        let mean = img.data.iter().sum::<f64>() / n;
        let centered: Vec<f64> = img.data.iter().map(|v| v - mean).collect();
        let mean_sq = centered.iter().map(|v| v * v).sum::<f64>() / n;
        let sum = Integral::new(img.rows, img.cols, |i| centered[i]);
        let sum_sq = Integral::new(img.rows, img.cols, |i| centered[i] * centered[i]);
        Self {
            centered,
            sum,
            sum_sq,
            flat: 1e-10 * mean_sq,
        }
    }
}

fn channel_scores(a: &Channel, b: &Channel, rows: usize, cols: usize, grid: &PatchGrid, out: &mut [f64]) {
    let cross = Integral::new(rows, cols, |i| a.centered[i] * b.centered[i]);
    let n = ((2 * grid.radius + 1) * (2 * grid.radius + 1)) as f64;
    for (k, p) in grid.patches().enumerate() {
        let (sa, sb) = (a.sum.patch_sum(&p) / n, b.sum.patch_sum(&p) / n);
        let va = a.sum_sq.patch_sum(&p) / n - sa * sa;
        let vb = b.sum_sq.patch_sum(&p) / n - sb * sb;
        if va <= a.flat || vb <= b.flat || a.flat == 0.0 || b.flat == 0.0 {
            continue;
        }
        let cov = cross.patch_sum(&p) / n - sa * sb;
        out[k] += cov / (va * vb).sqrt();
    }
}

/// Fixed (fluoroscopic) image with its gradients and moment tables cached
/// for repeated comparison against moving images.
#[derive(Clone, Debug)]
pub struct PreparedFixed {
    pub image: Image2D,
    pub gradients: Gradients,
    gx: Channel,
    gy: Channel,
}

impl PreparedFixed {
    pub fn new(image: &Image2D) -> Result<Self> {
        let gradients = Gradients::new(image)?;
        let gx = Channel::new(&gradients.gx);
        let gy = Channel::new(&gradients.gy);
        Ok(Self {
            image: image.clone(),
            gradients,
            gx,
            gy,
        })
    }

    /// Per-patch Grad-NCC scores against `moving`.
    pub fn patch_scores(&self, moving: &Image2D, grid: &PatchGrid) -> Result<Vec<f64>> {
        check_same(&self.image, moving)?;
        for &(r, c) in &grid.centers {
            Patch::new(r, c, grid.radius).check(moving)?;
        }
        let g = Gradients::new(moving)?;
        let (rows, cols) = (moving.rows, moving.cols);
        let mut out = vec![0.0; grid.len()];
        channel_scores(&self.gx, &Channel::new(&g.gx), rows, cols, grid, &mut out);
        channel_scores(&self.gy, &Channel::new(&g.gy), rows, cols, grid, &mut out);
        Ok(out)
    }

    /// Weighted sum of per-patch Grad-NCC scores.
    pub fn patch_grad_ncc(&self, moving: &Image2D, grid: &PatchGrid, weights: &[f64]) -> Result<f64> {
        check_weights(grid, weights)?;
        let scores = self.patch_scores(moving, grid)?;
        Ok(scores.iter().zip(weights).map(|(s, w)| s * w).sum())
    }

    /// Whole-image Grad-NCC.
    pub fn grad_ncc(&self, moving: &Image2D) -> Result<f64> {
        check_same(&self.image, moving)?;
        let g = Gradients::new(moving)?;
        Ok(ncc_full(&self.gradients.gx.data, &g.gx.data).unwrap_or(0.0)
            + ncc_full(&self.gradients.gy.data, &g.gy.data).unwrap_or(0.0))
    }
}

fn check_weights(grid: &PatchGrid, weights: &[f64]) -> Result<()> {
    if weights.len() != grid.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} patches",
            weights.len(),
            grid.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0)) {
        return Err(Error::invalid(format!("patch weight {w} is negative or not finite")));
    }
    Ok(())
}

/// Weighted sum of per-patch Grad-NCC over `grid`.
pub fn patch_grad_ncc(i1: &Image2D, i2: &Image2D, grid: &PatchGrid, weights: &[f64]) -> Result<f64> {
    check_same(i1, i2)?;
    check_weights(grid, weights)?;
    PreparedFixed::new(i1)?.patch_grad_ncc(i2, grid, weights)
}

/// Patch weights proportional to the within-patch intensity variance of the
/// fixed image; uniform if every patch is constant.
pub fn variance_patch_weights(fixed: &Image2D, grid: &PatchGrid) -> Vec<f64> {
    if grid.is_empty() {
        return Vec::new();
    }
    let ch = Channel::new(fixed);
    let n = ((2 * grid.radius + 1) * (2 * grid.radius + 1)) as f64;
    let mut w: Vec<f64> = grid
        .patches()
        .map(|p| {
            let m = ch.sum.patch_sum(&p) / n;
            let v = ch.sum_sq.patch_sum(&p) / n - m * m;
            if v <= ch.flat {
                0.0
            } else {
                v
            }
        })
        .collect();
    let total: f64 = w.iter().sum();
    if total > 0.0 {
        w.iter_mut().for_each(|x| *x /= total);
    } else {
        w.fill(1.0 / grid.len() as f64);
    }
    w
}
