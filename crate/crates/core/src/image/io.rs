//! MetaImage-style (`.mhd` header + `.raw` payload) reading and writing.
//!
//! Payloads are little-endian. `MET_FLOAT` and `MET_USHORT` are the
//! interchange types; `MET_DOUBLE` is accepted for lossless 2D images.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Image2D, LabelVolume, Volume3D, VolumeGeometry};
use crate::error::{Error, Result};
use crate::geom::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementType {
    Float32,
    Float64,
    UInt16,
}

impl ElementType {
    fn tag(self) -> &'static str {
        match self {
            ElementType::Float32 => "MET_FLOAT",
            ElementType::Float64 => "MET_DOUBLE",
            ElementType::UInt16 => "MET_USHORT",
        }
    }

    fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "MET_FLOAT" => Ok(ElementType::Float32),
            "MET_DOUBLE" => Ok(ElementType::Float64),
            "MET_USHORT" => Ok(ElementType::UInt16),
            other => Err(Error::parse("mhd header", format!("unsupported ElementType {other}"))),
        }
    }

    fn size(self) -> usize {
        match self {
            ElementType::Float32 => 4,
            ElementType::Float64 => 8,
            ElementType::UInt16 => 2,
        }
    }
}

/// Parsed header fields.
#[derive(Clone, Debug, PartialEq)]
pub struct MhdHeader {
    pub dims: Vec<usize>,
    pub spacing: Vec<f64>,
    pub offset: Vec<f64>,
    pub element_type: ElementType,
    pub data_file: String,
}

fn raw_path_for(header_path: &Path) -> PathBuf {
    header_path.with_extension("raw")
}

fn join_f64(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ")
}

pub fn write_header(path: &Path, header: &MhdHeader) -> Result<()> {
    let text = format!(
        "ObjectType = Image\n\
         NDims = {}\n\
         BinaryData = True\n\
         BinaryDataByteOrderMSB = False\n\
         DimSize = {}\n\
         ElementSpacing = {}\n\
         Offset = {}\n\
         ElementType = {}\n\
         ElementDataFile = {}\n",
        header.dims.len(),
        header.dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(" "),
        join_f64(&header.spacing),
        join_f64(&header.offset),
        header.element_type.tag(),
        header.data_file,
    );
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_header(path: &Path) -> Result<MhdHeader> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut fields = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse("mhd header", format!("malformed line '{line}'")))?;
        fields.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |k: &str| {
        fields
            .get(k)
            .ok_or_else(|| Error::parse("mhd header", format!("missing {k}")))
    };
    let ndims: usize = get("NDims")?
        .parse()
        .map_err(|_| Error::parse("mhd header", "bad NDims"))?;
    if let Some(msb) = fields
        .get("BinaryDataByteOrderMSB")
        .or(fields.get("ElementByteOrderMSB"))
    {
        if msb.eq_ignore_ascii_case("true") {
            return Err(Error::parse("mhd header", "big-endian payloads are not supported"));
        }
    }
    let parse_list = |k: &str| -> Result<Vec<f64>> {
        get(k)?
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::parse("mhd header", format!("bad value in {k}")))
            })
            .collect()
    };
    let dims: Vec<usize> = get("DimSize")?
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::parse("mhd header", "bad DimSize")))
        .collect::<Result<_>>()?;
    let spacing = if fields.contains_key("ElementSpacing") {
        parse_list("ElementSpacing")?
    } else {
        vec![1.0; ndims]
    };
    let offset = if fields.contains_key("Offset") {
        parse_list("Offset")?
    } else {
        vec![0.0; ndims]
    };
    if dims.len() != ndims || spacing.len() != ndims || offset.len() != ndims {
        return Err(Error::parse("mhd header", "field lengths disagree with NDims"));
    }
    Ok(MhdHeader {
        dims,
        spacing,
        offset,
        element_type: ElementType::from_tag(get("ElementType")?)?,
        data_file: get("ElementDataFile")?.clone(),
    })
}

fn read_payload(header_path: &Path, header: &MhdHeader) -> Result<Vec<u8>> {
    let data_path = header_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&header.data_file);
    let bytes = fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
    let expect = header.dims.iter().product::<usize>() * header.element_type.size();
    if bytes.len() != expect {
        return Err(Error::DimensionMismatch(format!(
            "{} holds {} bytes, header implies {expect}",
            data_path.display(),
            bytes.len()
        )));
    }
    Ok(bytes)
}

fn decode_f64(bytes: &[u8], ty: ElementType) -> Vec<f64> {
    match ty {
        ElementType::Float32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        ElementType::Float64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        ElementType::UInt16 => bytes
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
    }
}

fn write_payload(header_path: &Path, bytes: &[u8]) -> Result<String> {
    let raw = raw_path_for(header_path);
    fs::write(&raw, bytes).map_err(|e| Error::io(&raw, e))?;
    Ok(raw
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default())
}

fn geometry_from(header: &MhdHeader) -> Result<VolumeGeometry> {
    if header.dims.len() != 3 {
        return Err(Error::DimensionMismatch(format!(
            "expected a 3D volume, header has {} dims",
            header.dims.len()
        )));
    }
    VolumeGeometry::new(
        [header.dims[0], header.dims[1], header.dims[2]],
        Vec3::new(header.spacing[0], header.spacing[1], header.spacing[2]),
        Vec3::new(header.offset[0], header.offset[1], header.offset[2]),
    )
}

fn volume_header(g: &VolumeGeometry, ty: ElementType, data_file: String) -> MhdHeader {
    MhdHeader {
        dims: g.dims.to_vec(),
        spacing: vec![g.spacing.x, g.spacing.y, g.spacing.z],
        offset: vec![g.origin.x, g.origin.y, g.origin.z],
        element_type: ty,
        data_file,
    }
}

pub fn write_volume(path: &Path, vol: &Volume3D) -> Result<()> {
    let bytes: Vec<u8> = vol.data.iter().flat_map(|v| v.to_le_bytes()).collect();
    let file = write_payload(path, &bytes)?;
    write_header(path, &volume_header(&vol.geometry, ElementType::Float32, file))
}

pub fn read_volume(path: &Path) -> Result<Volume3D> {
    let header = read_header(path)?;
    let g = geometry_from(&header)?;
    let bytes = read_payload(path, &header)?;
    let data = match header.element_type {
        ElementType::Float32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        other => decode_f64(&bytes, other).into_iter().map(|v| v as f32).collect(),
    };
    Volume3D::from_vec(g, data)
}

pub fn write_labels(path: &Path, lab: &LabelVolume) -> Result<()> {
    let bytes: Vec<u8> = lab.data.iter().flat_map(|v| v.to_le_bytes()).collect();
    let file = write_payload(path, &bytes)?;
    write_header(path, &volume_header(&lab.geometry, ElementType::UInt16, file))
}

pub fn read_labels(path: &Path) -> Result<LabelVolume> {
    let header = read_header(path)?;
    if header.element_type != ElementType::UInt16 {
        return Err(Error::parse("label volume", "labels must be MET_USHORT"));
    }
    let g = geometry_from(&header)?;
    let bytes = read_payload(path, &header)?;
    let data = bytes
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes(c.try_into().unwrap()))
        .collect();
    LabelVolume::from_vec(g, data)
}

/// Writes a 2D image; `DimSize` is `cols rows`, matching MetaImage's
/// fastest-varying-first order.
pub fn write_image(path: &Path, img: &Image2D, ty: ElementType) -> Result<()> {
    let bytes: Vec<u8> = match ty {
        ElementType::Float32 => img.data.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect(),
        ElementType::Float64 => img.data.iter().flat_map(|v| v.to_le_bytes()).collect(),
        ElementType::UInt16 => img
            .data
            .iter()
            .flat_map(|&v| (v.round().clamp(0.0, u16::MAX as f64) as u16).to_le_bytes())
            .collect(),
    };
    let file = write_payload(path, &bytes)?;
    write_header(
        path,
        &MhdHeader {
            dims: vec![img.cols, img.rows],
            spacing: vec![img.pixel_spacing, img.pixel_spacing],
            offset: vec![0.0, 0.0],
            element_type: ty,
            data_file: file,
        },
    )
}

pub fn read_image(path: &Path) -> Result<Image2D> {
    let header = read_header(path)?;
    if header.dims.len() != 2 {
        return Err(Error::DimensionMismatch(format!(
            "expected a 2D image, header has {} dims",
            header.dims.len()
        )));
    }
    if header.spacing[0] != header.spacing[1] {
        return Err(Error::parse("image header", "anisotropic pixel spacing"));
    }
    let bytes = read_payload(path, &header)?;
    Image2D::from_vec(
        header.dims[1],
        header.dims[0],
        header.spacing[0],
        decode_f64(&bytes, header.element_type),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn volume_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let g = VolumeGeometry::new([5, 4, 3], Vec3::new(0.7, 1.1, 2.3), Vec3::new(-12.25, 0.1, 3.0)).unwrap();
        let vol = Volume3D::from_vec(g, (0..g.len()).map(|_| rng.random::<f32>()).collect()).unwrap();
        let p = dir.path().join("vol.mhd");
        write_volume(&p, &vol).unwrap();
        let back = read_volume(&p).unwrap();
        assert_eq!(back, vol);
        let raw1 = fs::read(dir.path().join("vol.raw")).unwrap();
        let hdr1 = fs::read(&p).unwrap();
        write_volume(&p, &back).unwrap();
        assert_eq!(fs::read(dir.path().join("vol.raw")).unwrap(), raw1);
        assert_eq!(fs::read(&p).unwrap(), hdr1);
    }

    #[test]
    fn labels_and_images_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = VolumeGeometry::centered([3, 3, 2], Vec3::new(1.0, 1.0, 1.0)).unwrap();
        let lab = LabelVolume::from_vec(g, (0..18).map(|i| (i * 1000) as u16).collect()).unwrap();
        let lp = dir.path().join("lab.mhd");
        write_labels(&lp, &lab).unwrap();
        assert_eq!(read_labels(&lp).unwrap(), lab);

        let img = Image2D::from_fn(3, 5, 0.582, |r, c| (r * 7 + c) as f64 * 0.1 + 1.0 / 3.0);
        let ip = dir.path().join("img.mhd");
        write_image(&ip, &img, ElementType::Float64).unwrap();
        assert_eq!(read_image(&ip).unwrap(), img);
        write_image(&ip, &img, ElementType::Float32).unwrap();
        let f32_img = read_image(&ip).unwrap();
        assert_eq!((f32_img.rows, f32_img.cols), (3, 5));
        let bytes = fs::read(dir.path().join("img.raw")).unwrap();
        write_image(&ip, &f32_img, ElementType::Float32).unwrap();
        assert_eq!(fs::read(dir.path().join("img.raw")).unwrap(), bytes);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image2D::zeros(4, 4, 1.0);
        let ip = dir.path().join("img.mhd");
        write_image(&ip, &img, ElementType::Float32).unwrap();
        fs::write(dir.path().join("img.raw"), [0u8; 10]).unwrap();
        assert!(matches!(read_image(&ip), Err(Error::DimensionMismatch(_))));
        assert!(read_volume(&ip).is_err());
    }
}
