//! Osteotomy simulation: cutting planes, fragment extraction, random rigid
//! moves of the fragment and femur, and voxel relocation.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::phantom::{hu_to_mu, labels, Phantom};
use crate::error::{Error, Result};
use crate::geom::{RigidPose, Vec3};
use crate::image::{LabelVolume, Volume3D};

/// Half-space `{p : normal·p ≤ offset}` with a unit normal (mm).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plane {
    pub normal: Vec3,
    pub offset: f64,
}

impl Plane {
    pub fn new(normal: Vec3, offset: f64) -> Result<Self> {
        let n = normal.norm();
        if !(n > 0.0) || !offset.is_finite() {
            return Err(Error::invalid("plane needs a non-zero normal and finite offset"));
        }
        Ok(Self {
            normal: normal / n,
            offset: offset / n,
        })
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        self.normal.dot(p) <= self.offset
    }
}

/// Ilium, ischium, posterior-column and pubis cuts bounding the fragment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CuttingPlanes {
    pub planes: [Plane; 4],
}

impl CuttingPlanes {
    /// Baseline cuts around the hip center; the hull contains the center.
    pub fn baseline(hip_center: &Vec3) -> Self {
        let plane = |n: Vec3, d: f64| Plane {
            normal: n,
            offset: n.dot(hip_center) + d,
        };
        Self {
            planes: [
                plane(-Vec3::y(), 35.0),
                plane(Vec3::y(), 40.0),
                plane(Vec3::z(), 30.0),
                plane(-Vec3::x(), 40.0),
            ],
        }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        self.planes.iter().all(|pl| pl.contains(p))
    }

    /// Same normals with every offset increased by `amount`.
    pub fn expanded(&self, amount: f64) -> Self {
        let mut out = *self;
        out.planes.iter_mut().for_each(|p| p.offset += amount);
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FragmentOptions {
    pub max_normal_angle_deg: f64,
    pub max_offset_mm: f64,
    pub max_attempts: usize,
}

impl Default for FragmentOptions {
    fn default() -> Self {
        Self {
            max_normal_angle_deg: 10.0,
            max_offset_mm: 5.0,
            max_attempts: 20,
        }
    }
}

/// Pelvis voxels inside the hull, as sorted linear indices.
pub fn fragment_voxels(planes: &CuttingPlanes, labels_vol: &LabelVolume) -> Vec<usize> {
    let g = &labels_vol.geometry;
    (0..g.len())
        .filter(|&i| labels::is_pelvis(labels_vol.data[i]) && planes.contains(&g.voxel_center(i)))
        .collect()
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Tilts each plane normal by a random angle up to the configured maximum
/// and shifts it along the new normal; the fragment is the set of pelvis
/// voxels inside the resulting hull. Empty fragments are resampled.
pub fn sample_fragment(
    baseline: &CuttingPlanes,
    labels_vol: &LabelVolume,
    opts: &FragmentOptions,
    seed: u64,
) -> Result<(CuttingPlanes, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..opts.max_attempts.max(1) {
        let mut planes = *baseline;
        for pl in planes.planes.iter_mut() {
            // pivot about the plane's point closest to the origin
            let anchor = pl.normal * pl.offset;
            let axis = pl.normal.cross(&random_unit(&mut rng));
            let angle = rng.random_range(0.0..=1.0) * opts.max_normal_angle_deg.to_radians();
            let shift = rng.random_range(-1.0..=1.0) * opts.max_offset_mm;
            if let Some(axis) = axis.try_normalize(1e-9) {
                let r = RigidPose::from_axis_angle(&axis, angle, Vec3::zeros());
                pl.normal = r.apply_vector(&pl.normal).normalize();
            }
            pl.offset = pl.normal.dot(&anchor) + shift;
        }
        let voxels = fragment_voxels(&planes, labels_vol);
        if !voxels.is_empty() {
            return Ok((planes, voxels));
        }
    }
    Err(Error::EmptyFragment {
        attempts: opts.max_attempts.max(1),
    })
}

/// Rigid relocation of the fragment and femur (both map volume frame to
/// volume frame).
#[derive(Clone, Debug, PartialEq)]
pub struct FragmentMove {
    pub fragment: Vec<usize>,
    pub relocation: RigidPose,
    pub femur_relocation: RigidPose,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MoveOptions {
    pub max_rotation_deg: f64,
    pub max_translation_mm: f64,
    pub max_attempts: usize,
}

impl Default for MoveOptions {
    fn default() -> Self {
        Self {
            max_rotation_deg: 15.0,
            max_translation_mm: 5.0,
            max_attempts: 50,
        }
    }
}

/// Result of relocating voxels.
#[derive(Clone, Debug)]
pub struct Relocated {
    pub volume: Volume3D,
    pub labels: LabelVolume,
    /// Voxels left behind and refilled with soft tissue.
    pub vacated: Vec<usize>,
    /// Voxels written by moved bone.
    pub moved: usize,
}

/// Soft-tissue fill range (HU) for vacated voxels.
pub const FILL_HU: (f64, f64) = (35.0, 55.0);

/// Moves fragment and femur voxels (nearest-neighbour inverse mapping),
/// refuses moves that overlap other bone, and fills the vacated voxels with
/// random muscle-range attenuation.
pub fn relocate_fragment(phantom: &Phantom, mv: &FragmentMove, seed: u64) -> Result<Relocated> {
    let g = phantom.labels.geometry;
    let lab = &phantom.labels;
    let frag: BTreeSet<usize> = mv.fragment.iter().copied().collect();
    let femur: BTreeSet<usize> = (0..g.len()).filter(|&i| lab.data[i] == labels::LEFT_FEMUR).collect();
    // destination voxel -> source voxel
    let mut dest: std::collections::BTreeMap<usize, usize> = std::collections::BTreeMap::new();
    let mut clash: BTreeSet<u16> = BTreeSet::new();
    let mut clash_voxels = 0usize;
    for (set, pose) in [(&frag, &mv.relocation), (&femur, &mv.femur_relocation)] {
        if set.is_empty() {
            continue;
        }
        let inv = pose.inverse();
        let (mut lo, mut hi) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
        for &i in set.iter() {
            let q = g.to_index(&pose.apply(&g.voxel_center(i)));
            lo = lo.inf(&q);
            hi = hi.sup(&q);
        }
        let clamp = |v: f64, n: usize| (v.max(0.0) as usize).min(n - 1);
        let (i0, i1) = (
            clamp((lo.x - 1.0).floor(), g.dims[0]),
            clamp((hi.x + 1.0).ceil(), g.dims[0]),
        );
        let (j0, j1) = (
            clamp((lo.y - 1.0).floor(), g.dims[1]),
            clamp((hi.y + 1.0).ceil(), g.dims[1]),
        );
        let (k0, k1) = (
            clamp((lo.z - 1.0).floor(), g.dims[2]),
            clamp((hi.z + 1.0).ceil(), g.dims[2]),
        );
        for k in k0..=k1 {
            for j in j0..=j1 {
                for i in i0..=i1 {
                    let d = g.linear_index(i, j, k);
                    let Some(src) = g.nearest_voxel(&inv.apply(&g.voxel_center(d))) else {
                        continue;
                    };
                    if !set.contains(&src) {
                        continue;
                    }
                    let stationary_bone = labels::is_bone(lab.data[d]) && !frag.contains(&d) && !femur.contains(&d);
                    if stationary_bone || dest.contains_key(&d) {
                        clash.insert(lab.data[d]);
                        clash_voxels += 1;
                    }
                    dest.insert(d, src);
                }
            }
        }
    }
    if clash_voxels > 0 {
        return Err(Error::Collision {
            labels: clash.into_iter().collect(),
            voxels: clash_voxels,
        });
    }
    let mut volume = phantom.volume.clone();
    let mut out_labels = lab.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vacated: Vec<usize> = frag
        .iter()
        .chain(femur.iter())
        .copied()
        .filter(|i| !dest.contains_key(i))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    for &i in &vacated {
        volume.data[i] = hu_to_mu(rng.random_range(FILL_HU.0..=FILL_HU.1)) as f32;
        out_labels.data[i] = labels::SOFT_TISSUE;
    }
    for (&d, &s) in &dest {
        volume.data[d] = phantom.volume.data[s];
        out_labels.data[d] = lab.data[s];
    }
    Ok(Relocated {
        volume,
        labels: out_labels,
        vacated,
        moved: dest.len(),
    })
}

/// Random collision-free move: rotation about the hip center with the femur
/// following the fragment, translation biased laterally outward.
pub fn sample_move(
    phantom: &Phantom,
    fragment: &[usize],
    opts: &MoveOptions,
    seed: u64,
) -> Result<(FragmentMove, Relocated)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last = None;
    for _ in 0..opts.max_attempts.max(1) {
        let axis = random_unit(&mut rng);
        let angle = rng.random_range(0.0..=1.0) * opts.max_rotation_deg.to_radians();
        let dir = Vec3::new(
            rng.random_range(0.0..1.0),
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
        )
        .try_normalize(1e-9)
        .unwrap_or(Vec3::x());
        let t = dir * rng.random_range(0.0..=opts.max_translation_mm);
        let rot = RigidPose::rotation_about(&phantom.hip_center, &axis, angle);
        let pose = RigidPose::from_translation(t).compose(&rot);
        let mv = FragmentMove {
            fragment: fragment.to_vec(),
            relocation: pose,
            femur_relocation: pose,
        };
        match relocate_fragment(phantom, &mv, rng.random()) {
            Ok(r) => return Ok((mv, r)),
            Err(e @ Error::Collision { .. }) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::invalid("no move attempted")))
}

#[cfg(test)]
mod tests {
    use super::super::phantom::generate_phantom;
    use super::*;

    fn phantom() -> Phantom {
        generate_phantom([64, 64, 64], 4.0, 5).unwrap()
    }

    #[test]
    fn zero_perturbation_gives_baseline() {
        let p = phantom();
        let base = CuttingPlanes::baseline(&p.hip_center);
        assert!(base.contains(&p.hip_center));
        let opts = FragmentOptions {
            max_normal_angle_deg: 0.0,
            max_offset_mm: 0.0,
            max_attempts: 1,
        };
        let (planes, frag) = sample_fragment(&base, &p.labels, &opts, 9).unwrap();
        assert_eq!(planes, base);
        assert_eq!(frag, fragment_voxels(&base, &p.labels));
        assert!(!frag.is_empty());
    }

    #[test]
    fn fragment_is_deterministic_and_monotone() {
        let p = phantom();
        let base = CuttingPlanes::baseline(&p.hip_center);
        let opts = FragmentOptions::default();
        for seed in 0..20 {
            let (planes, frag) = sample_fragment(&base, &p.labels, &opts, seed).unwrap();
            assert_eq!(sample_fragment(&base, &p.labels, &opts, seed).unwrap().1, frag);
            let bigger = fragment_voxels(&planes.expanded(15.0), &p.labels);
            let set: BTreeSet<_> = bigger.iter().collect();
            assert!(frag.iter().all(|v| set.contains(v)));
            assert!(bigger.len() >= frag.len());
        }
    }

    #[test]
    fn empty_fragment_errors() {
        let p = phantom();
        // a hull far lateral of the body
        let far = CuttingPlanes::baseline(&Vec3::new(5000.0, 0.0, 0.0));
        let r = sample_fragment(&far, &p.labels, &FragmentOptions::default(), 1);
        assert!(matches!(r, Err(Error::EmptyFragment { .. })));
    }

    #[test]
    fn identity_move_changes_nothing() {
        let p = phantom();
        let frag = fragment_voxels(&CuttingPlanes::baseline(&p.hip_center), &p.labels);
        let mv = FragmentMove {
            fragment: frag,
            relocation: RigidPose::identity(),
            femur_relocation: RigidPose::identity(),
        };
        let r = relocate_fragment(&p, &mv, 1).unwrap();
        assert!(r.vacated.is_empty());
        assert_eq!(r.volume.data, p.volume.data);
        assert_eq!(r.labels.data, p.labels.data);
    }

    #[test]
    fn collision_is_detected() {
        let p = phantom();
        let frag = fragment_voxels(&CuttingPlanes::baseline(&p.hip_center), &p.labels);
        // push the fragment medially into the rest of the pelvis, femur stays
        let mv = FragmentMove {
            fragment: frag,
            relocation: RigidPose::from_translation(Vec3::new(-40.0, 0.0, 0.0)),
            femur_relocation: RigidPose::identity(),
        };
        match relocate_fragment(&p, &mv, 1) {
            Err(Error::Collision { labels: l, voxels }) => {
                assert!(voxels > 0);
                assert!(l.iter().all(|&x| labels::is_bone(x)));
            }
            other => panic!("expected collision, got {other:?}"),
        }
    }

    #[test]
    fn fragment_into_femur_collides() {
        let p = phantom();
        let frag = fragment_voxels(&CuttingPlanes::baseline(&p.hip_center), &p.labels);
        let mv = FragmentMove {
            fragment: frag,
            relocation: RigidPose::from_translation(Vec3::new(30.0, 0.0, 0.0)),
            femur_relocation: RigidPose::identity(),
        };
        match relocate_fragment(&p, &mv, 1) {
            Err(Error::Collision { labels: l, .. }) => assert!(l.contains(&labels::LEFT_FEMUR), "{l:?}"),
            other => panic!("expected collision, got {other:?}"),
        }
    }

    #[test]
    fn lateral_move_vacates_and_conserves() {
        // wide enough that the moved femur is not clipped at the border
        let p = generate_phantom([80, 64, 64], 4.0, 5).unwrap();
        let frag = fragment_voxels(&CuttingPlanes::baseline(&p.hip_center), &p.labels);
        // an exact two-voxel lateral shift
        let t = RigidPose::from_translation(Vec3::new(8.0, 0.0, 0.0));
        let mv = FragmentMove {
            fragment: frag.clone(),
            relocation: t,
            femur_relocation: t,
        };
        let r = match relocate_fragment(&p, &mv, 3) {
            Ok(r) => r,
            Err(e) => panic!("{e}"),
        };
        assert!(!r.vacated.is_empty());
        let (lo, hi) = (hu_to_mu(FILL_HU.0) as f32, hu_to_mu(FILL_HU.1) as f32);
        for &i in &r.vacated {
            assert!(r.volume.data[i] >= lo && r.volume.data[i] <= hi);
        }
        let femur = p.labels.data.iter().filter(|&&l| l == labels::LEFT_FEMUR).count();
        assert_eq!(r.moved, frag.len() + femur);
        let bone = |l: &LabelVolume| l.data.iter().filter(|&&x| labels::is_bone(x)).count();
        assert_eq!(bone(&r.labels), bone(&p.labels));
    }

    #[test]
    fn sampled_moves_are_collision_free() {
        let p = phantom();
        let (_, frag) = sample_fragment(
            &CuttingPlanes::baseline(&p.hip_center),
            &p.labels,
            &FragmentOptions::default(),
            2,
        )
        .unwrap();
        let (mv, r) = sample_move(&p, &frag, &MoveOptions::default(), 4).unwrap();
        assert!(mv.relocation.rotation_angle() <= 15f64.to_radians() + 1e-12);
        assert!(r.moved > 0);
    }
}
