//! Synthetic pelvis-like phantom. Anatomy is defined in millimetres about
//! the volume center, independent of the voxel grid: x is lateral (+x is
//! the patient's left), y runs superior to inferior (+y inferior, image
//! rows), z runs anterior to posterior.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::image::{LabelVolume, Volume3D, VolumeGeometry};
use crate::registration::Landmarks3;
use crate::weights::WeightLut;

/// Label values used by the phantom.
pub mod labels {
    pub const AIR: u16 = 0;
    pub const SOFT_TISSUE: u16 = 1;
    pub const ILIAC_WING: u16 = 2;
    pub const ILIAC_CREST: u16 = 3;
    pub const PUBIC_RAMI: u16 = 4;
    pub const ISCHIUM_RING: u16 = 5;
    pub const SACRUM: u16 = 6;
    /// Pelvis bone inside the left acetabular candidate sphere.
    pub const FRAGMENT_CANDIDATE: u16 = 7;
    pub const LEFT_FEMUR: u16 = 8;
    pub const RIGHT_FEMUR: u16 = 9;
    /// Soft tissue inside the candidate sphere.
    pub const CANDIDATE_SOFT_TISSUE: u16 = 10;

    /// Regions expected to disagree with the preoperative model.
    pub const MISMATCH: [u16; 3] = [FRAGMENT_CANDIDATE, LEFT_FEMUR, CANDIDATE_SOFT_TISSUE];
    /// Pelvis regions whose occluding boundaries are emphasized.
    pub const SURFACE: [u16; 6] = [
        ILIAC_WING,
        ILIAC_CREST,
        PUBIC_RAMI,
        ISCHIUM_RING,
        SACRUM,
        FRAGMENT_CANDIDATE,
    ];
    /// Labels that may belong to an osteotomized fragment.
    pub const PELVIS: [u16; 6] = [
        ILIAC_WING,
        ILIAC_CREST,
        PUBIC_RAMI,
        ISCHIUM_RING,
        SACRUM,
        FRAGMENT_CANDIDATE,
    ];
    pub const BONE: [u16; 8] = [
        ILIAC_WING,
        ILIAC_CREST,
        PUBIC_RAMI,
        ISCHIUM_RING,
        SACRUM,
        FRAGMENT_CANDIDATE,
        LEFT_FEMUR,
        RIGHT_FEMUR,
    ];

    pub fn is_bone(l: u16) -> bool {
        BONE.contains(&l)
    }

    pub fn is_pelvis(l: u16) -> bool {
        PELVIS.contains(&l)
    }
}

/// Linear attenuation (1/mm) of water.
pub const MU_WATER: f64 = 0.02;

/// Linear HU to attenuation map; air and below map to 0.
pub fn hu_to_mu(hu: f64) -> f64 {
    (MU_WATER * (1.0 + hu / 1000.0)).max(0.0)
}

/// Landmark names in a fixed order.
pub const LANDMARK_NAMES: [&str; 6] = ["FH", "ASIS", "AIIS", "GSN", "IOF", "SPS"];

pub struct Phantom {
    pub volume: Volume3D,
    pub labels: LabelVolume,
    pub landmarks: Landmarks3,
    /// Left hip joint center, the center of the fragment candidate sphere.
    pub hip_center: Vec3,
    pub candidate_radius: f64,
}

impl Phantom {
    /// Default 3D weights: crest and rami strongest, soft tissue faint.
    pub fn default_lut() -> WeightLut {
        use labels::*;
        WeightLut::new([
            (SOFT_TISSUE, 0.01),
            (ILIAC_WING, 0.4),
            (ILIAC_CREST, 1.0),
            (PUBIC_RAMI, 1.0),
            (ISCHIUM_RING, 0.7),
            (SACRUM, 0.5),
            (FRAGMENT_CANDIDATE, 0.7),
            (LEFT_FEMUR, 0.2),
            (RIGHT_FEMUR, 0.2),
            (CANDIDATE_SOFT_TISSUE, 0.01),
        ])
        .expect("constant weights are non-negative")
    }
}

const HIP: Vec3 = Vec3::new(80.0, 25.0, -5.0);
const CANDIDATE_RADIUS: f64 = 45.0;

/// Smooth seeded intensity texture: a few random plane waves.
struct Texture {
    waves: Vec<(Vec3, f64, f64)>,
}

impl Texture {
    fn new(rng: &mut ChaCha8Rng, amplitude: f64) -> Self {
        let waves = (0..4)
            .map(|_| {
                let dir = Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
                .try_normalize(1e-9)
                .unwrap_or(Vec3::x());
                let wavelength = rng.random_range(12.0..45.0);
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                (
                    dir * (std::f64::consts::TAU / wavelength),
                    phase,
                    amplitude * rng.random_range(0.5..1.0),
                )
            })
            .collect();
        Self { waves }
    }

    fn at(&self, p: &Vec3) -> f64 {
        self.waves.iter().map(|(k, ph, a)| a * (k.dot(p) + ph).sin()).sum()
    }
}

fn in_ellipsoid(p: &Vec3, c: Vec3, r: Vec3) -> bool {
    let d = p - c;
    (d.x / r.x).powi(2) + (d.y / r.y).powi(2) + (d.z / r.z).powi(2) <= 1.0
}

/// Distance from `p` to the segment `a`–`b`.
fn segment_distance(p: &Vec3, a: Vec3, b: Vec3) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// (label, HU before texture) of the anatomy at `p` (mm).
fn classify(p: &Vec3) -> (u16, f64) {
    use labels::*;
    if (p.x / 140.0).powi(2) + (p.z / 100.0).powi(2) > 1.0 || p.y.abs() > 125.0 {
        return (AIR, -1000.0);
    }
    let mut out = (SOFT_TISSUE, 40.0);

    if in_ellipsoid(p, Vec3::new(0.0, -45.0, 55.0), Vec3::new(38.0, 50.0, 22.0)) {
        out = (SACRUM, 500.0);
    }
    if p.x.powi(2) + (p.z - 50.0).powi(2) <= 18.0f64.powi(2) && p.y < -90.0 {
        out = (SACRUM, 650.0);
    }

    for s in [1.0f64, -1.0] {
        // iliac wing: a tilted elliptic plate
        let cw = Vec3::new(s * 78.0, -55.0, 28.0);
        let n = Vec3::new(s, 0.0, 0.5).normalize();
        let u = Vec3::y();
        let v = n.cross(&u);
        let d = p - cw;
        let (h, a, b) = (d.dot(&n), d.dot(&u) / 55.0, d.dot(&v) / 50.0);
        let rho = (a * a + b * b).sqrt();
        if rho <= 1.0 && h.abs() <= 7.0 {
            if rho >= 0.85 && a < 0.0 {
                out = (ILIAC_CREST, 1100.0);
            } else if h.abs() <= 5.0 {
                out = (ILIAC_WING, 350.0);
            }
        }

        // pelvic ring: elliptic torus in the y = 20 plane
        let dr = p - Vec3::new(0.0, 20.0, 5.0);
        let q = ((dr.x / 60.0).powi(2) + (dr.z / 55.0).powi(2)).sqrt();
        if s > 0.0 && (((q - 1.0) * 57.0).powi(2) + dr.y.powi(2)).sqrt() <= 10.0 {
            out = if dr.z < -30.0 {
                (PUBIC_RAMI, 1100.0)
            } else {
                (ISCHIUM_RING, 700.0)
            };
        }

        if in_ellipsoid(p, Vec3::new(s * 55.0, 60.0, 10.0), Vec3::new(14.0, 25.0, 18.0)) {
            out = (ISCHIUM_RING, 800.0);
        }

        // acetabulum: medial hemispherical shell around the hip center
        let hc = Vec3::new(s * HIP.x, HIP.y, HIP.z);
        let dh = p - hc;
        let r = dh.norm();
        if (26.0..=34.0).contains(&r) && -s * dh.x >= -10.0 {
            out = (ISCHIUM_RING, 900.0);
        }

        // femur: head, neck, trochanter and shaft
        let femur = if s > 0.0 { LEFT_FEMUR } else { RIGHT_FEMUR };
        let neck_end = hc + Vec3::new(s * 28.0, 28.0, 0.0);
        let shaft_top = Vec3::new(s * 110.0, 50.0, -5.0);
        let shaft_bottom = Vec3::new(s * 115.0, 130.0, -5.0);
        let shaft = segment_distance(p, shaft_top, shaft_bottom);
        if r <= 24.0 {
            out = (femur, if r >= 21.0 { 1100.0 } else { 550.0 });
        } else if segment_distance(p, hc, neck_end) <= 13.0 || (p - shaft_top).norm() <= 16.0 {
            out = (femur, 650.0);
        } else if shaft <= 15.0 {
            out = (femur, if shaft >= 9.0 { 1400.0 } else { 150.0 });
        }
    }

    if (p - HIP).norm() <= CANDIDATE_RADIUS {
        if labels::is_pelvis(out.0) {
            out.0 = FRAGMENT_CANDIDATE;
        } else if out.0 == SOFT_TISSUE {
            out.0 = CANDIDATE_SOFT_TISSUE;
        }
    }
    out
}

fn nominal_landmarks() -> [(&'static str, Vec3, bool); 6] {
    [
        ("FH", HIP, true),
        ("ASIS", Vec3::new(95.0, -45.0, -12.0), false),
        ("AIIS", Vec3::new(85.0, -8.0, -12.0), false),
        ("GSN", Vec3::new(62.0, 0.0, 62.0), false),
        ("IOF", Vec3::new(45.0, 62.0, -12.0), false),
        ("SPS", Vec3::new(6.0, 20.0, -50.0), false),
    ]
}

/// Nearest voxel center (by distance, then index) whose label passes `accept`.
fn snap(labels: &LabelVolume, p: &Vec3, accept: impl Fn(u16) -> bool) -> Option<Vec3> {
    let g = &labels.geometry;
    let c = g.to_index(p);
    let reach = (30.0 / g.min_spacing()).ceil() as isize;
    let mut best: Option<(f64, usize)> = None;
    for dk in -reach..=reach {
        for dj in -reach..=reach {
            for di in -reach..=reach {
                let (i, j, k) = (
                    c.x.round() as isize + di,
                    c.y.round() as isize + dj,
                    c.z.round() as isize + dk,
                );
                if i < 0
                    || j < 0
                    || k < 0
                    || i >= g.dims[0] as isize
                    || j >= g.dims[1] as isize
                    || k >= g.dims[2] as isize
                {
                    continue;
                }
                let idx = g.linear_index(i as usize, j as usize, k as usize);
                if !accept(labels.data[idx]) {
                    continue;
                }
                let d = (g.voxel_center(idx) - p).norm();
                if best.is_none_or(|(bd, bi)| d < bd || (d == bd && idx < bi)) {
                    best = Some((d, idx));
                }
            }
        }
    }
    best.map(|(_, idx)| g.voxel_center(idx))
}

/// Deterministic phantom on a centered `dims` grid of isotropic `spacing`.
pub fn generate_phantom(dims: [usize; 3], spacing: f64, seed: u64) -> Result<Phantom> {
    if dims.iter().any(|&d| d < 8) {
        return Err(Error::invalid("phantom needs at least 8 voxels per dimension"));
    }
    if !(spacing > 0.0) {
        return Err(Error::invalid("phantom spacing must be positive"));
    }
    let g = VolumeGeometry::centered(dims, Vec3::new(spacing, spacing, spacing))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let soft = Texture::new(&mut rng, 15.0);
    let bone = Texture::new(&mut rng, 120.0);
    let mut volume = Volume3D::zeros(g);
    let mut lab = LabelVolume::zeros(g);
    for idx in 0..g.len() {
        let p = g.voxel_center(idx);
        let (l, hu) = classify(&p);
        let noise: f64 = rng.random_range(-10.0..10.0);
        let hu = match l {
            labels::AIR => hu,
            l if labels::is_bone(l) => hu + bone.at(&p) + noise,
            _ => hu + soft.at(&p) + noise,
        };
        lab.data[idx] = l;
        volume.data[idx] = hu_to_mu(hu) as f32;
    }
    let mut landmarks = Landmarks3::new();
    for (name, p, femoral) in nominal_landmarks() {
        let q = if femoral {
            snap(&lab, &p, |l| l == labels::LEFT_FEMUR)
        } else {
            snap(&lab, &p, labels::is_pelvis)
        };
        let q =
            q.ok_or_else(|| Error::invalid(format!("grid too coarse or small to place landmark {name} inside bone")))?;
        landmarks.insert(name.to_string(), q);
    }
    Ok(Phantom {
        volume,
        labels: lab,
        landmarks,
        hip_center: HIP,
        candidate_radius: CANDIDATE_RADIUS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::nearest_label;

    #[test]
    fn deterministic_and_consistent() {
        let a = generate_phantom([48, 48, 48], 5.5, 3).unwrap();
        let b = generate_phantom([48, 48, 48], 5.5, 3).unwrap();
        assert_eq!(a.volume.data, b.volume.data);
        assert_eq!(a.labels.data, b.labels.data);
        let c = generate_phantom([48, 48, 48], 5.5, 4).unwrap();
        assert_ne!(a.volume.data, c.volume.data);
        assert_eq!(a.labels.data, c.labels.data);
    }

    #[test]
    fn labels_and_landmarks() {
        let p = generate_phantom([64, 64, 64], 4.0, 1).unwrap();
        assert!(p.labels.data.iter().all(|&l| l <= labels::CANDIDATE_SOFT_TISSUE));
        for l in 0..=labels::CANDIDATE_SOFT_TISSUE {
            assert!(p.labels.data.contains(&l), "label {l} missing");
        }
        assert_eq!(p.landmarks.len(), 6);
        for name in LANDMARK_NAMES {
            let q = p.landmarks[name];
            assert!(labels::is_bone(nearest_label(&p.labels, &q)), "{name} not in bone");
        }
        assert_eq!(nearest_label(&p.labels, &p.landmarks["FH"]), labels::LEFT_FEMUR);
        // air is attenuation-free, bone is denser than soft tissue
        for (l, mu) in p.labels.data.iter().zip(&p.volume.data) {
            match *l {
                labels::AIR => assert_eq!(*mu, 0.0),
                labels::SOFT_TISSUE => assert!((0.019..0.0225).contains(mu)),
                _ => {}
            }
        }
    }

    #[test]
    fn hu_map() {
        assert_eq!(hu_to_mu(0.0), MU_WATER);
        assert_eq!(hu_to_mu(-1000.0), 0.0);
        assert_eq!(hu_to_mu(-2000.0), 0.0);
        assert!((hu_to_mu(1000.0) - 2.0 * MU_WATER).abs() < 1e-15);
    }
}
