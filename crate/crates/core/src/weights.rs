//! Label-driven 3D weights, their projection into per-patch 2D weights,
//! weighted patch sampling and the golden-ratio growth schedule.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{dilate, Image2D, LabelVolume, Volume3D};
use crate::projector::{
    boundary_edges_from_hits, project_label_hits, project_weight_mip_prepared, LabelSet, PreparedLabels,
    PreparedVolume, ProjectionRequest,
};
use crate::similarity::{Integral, PatchGrid};

/// Map from label to non-negative weight; unknown labels weigh 0.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightLut {
    map: BTreeMap<u16, f64>,
}

impl WeightLut {
    pub fn new(entries: impl IntoIterator<Item = (u16, f64)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (label, w) in entries {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::invalid(format!(
                    "weight {w} for label {label} must be finite and >= 0"
                )));
            }
            map.insert(label, w);
        }
        Ok(Self { map })
    }

    pub fn get(&self, label: u16) -> f64 {
        self.map.get(&label).copied().unwrap_or(0.0)
    }

    pub fn entries(&self) -> impl Iterator<Item = (u16, f64)> + '_ {
        self.map.iter().map(|(&l, &w)| (l, w))
    }

    /// Parses `label weight` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let bad = |m: &str| Error::parse("weight LUT", format!("line {}: {m}", n + 1));
            if fields.len() != 2 {
                return Err(bad("expected `label weight`"));
            }
            let label: u16 = fields[0]
                .parse()
                .map_err(|_| bad("label is not an integer in 0..=65535"))?;
            let w: f64 = fields[1].parse().map_err(|_| bad("weight is not a number"))?;
            entries.push((label, w));
        }
        Self::new(entries).map_err(|e| Error::parse("weight LUT", e.to_string()))
    }

    pub fn to_text(&self) -> String {
        self.map.iter().map(|(l, w)| format!("{l} {w:?}\n")).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct WeightParams {
    /// Multiplier applied to pixels on (dilated) boundary edges.
    pub edge_scale: f64,
    /// Multiplier applied to pixels inside the mismatch mask.
    pub mask_scale: f64,
    pub edge_dilation_radius: usize,
}

impl Default for WeightParams {
    fn default() -> Self {
        Self {
            edge_scale: 10.0,
            mask_scale: 0.1,
            edge_dilation_radius: 1,
        }
    }
}

impl WeightParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.edge_scale > 0.0) {
            return Err(Error::invalid("edge_scale must be positive"));
        }
        if !(0.0..=1.0).contains(&self.mask_scale) {
            return Err(Error::invalid("mask_scale must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Normalized per-patch weights over a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchWeights {
    pub grid: PatchGrid,
    pub weights: Vec<f64>,
}

impl PatchWeights {
    pub fn uniform(grid: PatchGrid) -> Self {
        let n = grid.len();
        Self {
            grid,
            weights: vec![1.0 / n as f64; n],
        }
    }

    /// Normalizes raw non-negative weights; errors if they sum to zero.
    pub fn from_raw(grid: PatchGrid, mut weights: Vec<f64>) -> Result<Self> {
        if weights.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} patches",
                weights.len(),
                grid.len()
            )));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::DegenerateWeights);
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self { grid, weights })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Voxelwise LUT lookup; geometry copied from the labels.
pub fn build_weight_volume(labels: &LabelVolume, lut: &WeightLut) -> Volume3D {
    let max = labels.max_label() as usize;
    let table: Vec<f32> = (0..=max).map(|l| lut.get(l as u16) as f32).collect();
    Volume3D {
        geometry: labels.geometry,
        data: labels.data.iter().map(|&l| table[l as usize]).collect(),
    }
}

/// Everything needed to turn a pose into 2D patch weights, with volume
/// extents cached across calls.
pub struct WeightProjector<'a> {
    weight_vol: PreparedVolume<'a>,
    labels: PreparedLabels<'a>,
    pub mismatch: LabelSet,
    pub surface: LabelSet,
    pub params: WeightParams,
}

impl<'a> WeightProjector<'a> {
    pub fn new(
        weight_vol: &'a Volume3D,
        labels: &'a LabelVolume,
        mismatch: LabelSet,
        surface: LabelSet,
        params: WeightParams,
    ) -> Result<Self> {
        params.validate()?;
        if weight_vol.geometry.dims != labels.geometry.dims {
            return Err(Error::DimensionMismatch(
                "weight volume and labels differ in size".into(),
            ));
        }
        Ok(Self {
            weight_vol: PreparedVolume::new(weight_vol),
            labels: PreparedLabels::new(labels),
            mismatch,
            surface,
            params,
        })
    }

    /// Per-pixel weight map (steps 1–8 of the pipeline).
    pub fn pixel_weights(&self, req: &ProjectionRequest) -> Result<Image2D> {
        let m = project_label_hits(&self.labels, &self.mismatch, req)?;
        let mut edges = boundary_edges_from_hits(&project_label_hits(&self.labels, &self.surface, req)?);
        prune(&mut edges, &m);
        let mut edges = dilate(&edges, self.params.edge_dilation_radius);
        prune(&mut edges, &m);
        let mut w = project_weight_mip_prepared(&self.weight_vol, req)?;
        for ((w, e), m) in w.data.iter_mut().zip(&edges.data).zip(&m.data) {
            if *e != 0.0 {
                *w *= self.params.edge_scale;
            }
            if *m != 0.0 {
                *w *= self.params.mask_scale;
            }
        }
        Ok(w)
    }

    /// Per-patch sums of the pixel weight map, normalized to 1.
    pub fn patch_weights(&self, req: &ProjectionRequest, grid: &PatchGrid) -> Result<PatchWeights> {
        let w = self.pixel_weights(req)?;
        reduce_to_patches(&w, grid)
    }
}

fn prune(edges: &mut Image2D, m: &Image2D) {
    for (e, m) in edges.data.iter_mut().zip(&m.data) {
        if *m != 0.0 {
            *e = 0.0;
        }
    }
}

/// Sums a pixel weight map over each patch footprint and normalizes.
pub fn reduce_to_patches(pixel_weights: &Image2D, grid: &PatchGrid) -> Result<PatchWeights> {
    for p in grid.patches() {
        if !p.fits(pixel_weights.rows, pixel_weights.cols) {
            return Err(Error::DimensionMismatch(
                "patch grid does not fit the weight map".into(),
            ));
        }
    }
    let sat = Integral::new(pixel_weights.rows, pixel_weights.cols, |i| pixel_weights.data[i]);
    // clamp rounding residue of the table differences
    let raw = grid.patches().map(|p| sat.patch_sum(&p).max(0.0)).collect();
    PatchWeights::from_raw(grid.clone(), raw)
}

/// The full 2D weight pipeline for one pose. Errors with
/// [`Error::DegenerateWeights`] when the weight map is all zero.
#[allow(clippy::too_many_arguments)]
pub fn compute_2d_weights(
    weight_vol: &Volume3D,
    labels: &LabelVolume,
    mismatch: &LabelSet,
    surface: &LabelSet,
    req: &ProjectionRequest,
    params: &WeightParams,
    grid: &PatchGrid,
) -> Result<PatchWeights> {
    WeightProjector::new(weight_vol, labels, mismatch.clone(), surface.clone(), *params)?.patch_weights(req, grid)
}

/// Draws `n` distinct patches with probability proportional to weight
/// (sequential draws without replacement) and renormalizes them. Selected
/// patches keep their original grid order.
pub fn sample_patch_subset(pw: &PatchWeights, n: usize, rng_seed: u64) -> Result<PatchWeights> {
    if n == 0 {
        return Err(Error::invalid("subset size must be >= 1"));
    }
    let nonzero: Vec<usize> = (0..pw.len()).filter(|&i| pw.weights[i] > 0.0).collect();
    let chosen: Vec<usize> = if n >= nonzero.len() {
        nonzero
    } else {
        // Efraimidis–Spirakis keys: the n largest ln(u)/w are a weighted draw without replacement
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut keyed: Vec<(f64, usize)> = nonzero
            .iter()
            .map(|&i| {
                let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
                (u.ln() / pw.weights[i], i)
            })
            .collect();
        keyed.select_nth_unstable_by(n - 1, |a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut idx: Vec<usize> = keyed[..n].iter().map(|&(_, i)| i).collect();
        idx.sort_unstable();
        idx
    };
    let weights = chosen.iter().map(|&i| pw.weights[i]).collect();
    PatchWeights::from_raw(pw.grid.select(&chosen), weights)
}

/// `round(n·φ)` with φ the golden ratio.
pub fn grow_patch_count(n: usize) -> usize {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    (n as f64 * phi).round() as usize
}
