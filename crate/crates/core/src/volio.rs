//! Raw + JSON volume files.
//!
//! A volume `stem` is stored as two files: `stem.json`, a UTF-8 header with a
//! fixed key order, and `stem.raw`, the little-endian payload in C order
//! (channel, Z, H, W).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::connectivity::{ConnectivityCube, CubeKind};
use crate::error::{Error, Result};
use crate::voxel::{BinaryMask, Shape3, Volume, CHANNELS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    U8,
    F32,
}

impl Dtype {
    pub fn size(&self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::F32 => 4,
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "u8" => Ok(Dtype::U8),
            "f32" => Ok(Dtype::F32),
            other => Err(Error::UnknownDtype(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VolumeKind {
    Intensity,
    Mask,
    Distance,
    Probability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub shape: [usize; 3],
    pub channels: usize,
    pub dtype: Dtype,
    pub spacing: [f64; 3],
    pub kind: VolumeKind,
    pub byte_order: String,
}

impl VolumeHeader {
    pub fn new(shape: Shape3, channels: usize, dtype: Dtype, spacing: [f64; 3], kind: VolumeKind) -> Self {
        Self {
            shape: shape.as_array(),
            channels,
            dtype,
            spacing,
            kind,
            byte_order: "little".into(),
        }
    }

    pub fn shape3(&self) -> Shape3 {
        Shape3::new(self.shape[0], self.shape[1], self.shape[2])
    }

    pub fn element_count(&self) -> usize {
        self.shape.iter().product::<usize>() * self.channels
    }

    pub fn payload_bytes(&self) -> u64 {
        (self.element_count() * self.dtype.size()) as u64
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("header serializes");
        s.push('\n');
        s
    }
}

/// Same field order as [`VolumeHeader`] but with loosely typed enums, so an
/// unknown dtype is reported as such rather than as a parse failure.
#[derive(Deserialize)]
struct RawHeader {
    shape: [usize; 3],
    channels: usize,
    dtype: String,
    spacing: [f64; 3],
    kind: VolumeKind,
    byte_order: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum VolumeData {
    U8(Vec<u8>),
    F32(Vec<f32>),
}

impl VolumeData {
    pub fn len(&self) -> usize {
        match self {
            VolumeData::U8(v) => v.len(),
            VolumeData::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dtype(&self) -> Dtype {
        match self {
            VolumeData::U8(_) => Dtype::U8,
            VolumeData::F32(_) => Dtype::F32,
        }
    }
}

pub fn header_path(stem: &Path) -> PathBuf {
    with_suffix(stem, "json")
}

pub fn payload_path(stem: &Path) -> PathBuf {
    with_suffix(stem, "raw")
}

fn with_suffix(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn validate(header: &VolumeHeader, data: &VolumeData) -> Result<()> {
    if header.byte_order != "little" {
        return Err(Error::invalid(format!("unsupported byte order `{}`", header.byte_order)));
    }
    if header.channels != 1 && header.channels != CHANNELS {
        return Err(Error::invalid(format!("channel count {} must be 1 or 26", header.channels)));
    }
    if header.shape.contains(&0) {
        return Err(Error::invalid(format!("shape {:?} has a zero extent", header.shape)));
    }
    if header.spacing.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::invalid(format!("spacing {:?} must be positive", header.spacing)));
    }
    if data.dtype() != header.dtype {
        return Err(Error::invalid(format!(
            "payload dtype {:?} does not match header dtype {:?}",
            data.dtype(),
            header.dtype
        )));
    }
    if data.len() != header.element_count() {
        return Err(Error::invalid(format!(
            "payload holds {} elements, header declares {}",
            data.len(),
            header.element_count()
        )));
    }
    if header.kind == VolumeKind::Mask {
        match data {
            VolumeData::U8(v) => {
                if let Some(bad) = v.iter().find(|b| **b > 1) {
                    return Err(Error::invalid(format!("mask value {bad} is not 0 or 1")));
                }
            }
            VolumeData::F32(_) => return Err(Error::invalid("masks are stored as u8")),
        }
    }
    Ok(())
}

pub fn write_volume(stem: &Path, header: &VolumeHeader, data: &VolumeData) -> Result<()> {
    validate(header, data)?;
    let mut bytes = Vec::with_capacity(header.payload_bytes() as usize);
    match data {
        VolumeData::U8(v) => bytes.extend_from_slice(v),
        VolumeData::F32(v) => {
            for x in v {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    if let Some(parent) = stem.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let hp = header_path(stem);
    fs::write(&hp, header.to_json()).map_err(|e| Error::io(&hp, e))?;
    let pp = payload_path(stem);
    fs::write(&pp, bytes).map_err(|e| Error::io(&pp, e))?;
    Ok(())
}

pub fn read_header(stem: &Path) -> Result<VolumeHeader> {
    let hp = header_path(stem);
    let text = fs::read_to_string(&hp).map_err(|e| Error::io(&hp, e))?;
    let raw: RawHeader = serde_json::from_str(&text).map_err(|e| Error::MalformedHeader {
        path: hp.clone(),
        reason: e.to_string(),
    })?;
    let header = VolumeHeader {
        shape: raw.shape,
        channels: raw.channels,
        dtype: Dtype::parse(&raw.dtype)?,
        spacing: raw.spacing,
        kind: raw.kind,
        byte_order: raw.byte_order,
    };
    let malformed = |reason: String| Error::MalformedHeader {
        path: hp.clone(),
        reason,
    };
    if header.byte_order != "little" {
        return Err(malformed(format!("byte order `{}`", header.byte_order)));
    }
    if header.channels != 1 && header.channels != CHANNELS {
        return Err(malformed(format!("channel count {}", header.channels)));
    }
    if header.shape.contains(&0) || header.spacing.iter().any(|s| !(*s > 0.0)) {
        return Err(malformed("non-positive shape or spacing".into()));
    }
    Ok(header)
}

pub fn read_volume(stem: &Path) -> Result<(VolumeHeader, VolumeData)> {
    let header = read_header(stem)?;
    let pp = payload_path(stem);
    let bytes = fs::read(&pp).map_err(|e| Error::io(&pp, e))?;
    let expected = header.payload_bytes();
    let found = bytes.len() as u64;
    if found < expected {
        return Err(Error::Truncated {
            path: pp,
            expected,
            found,
        });
    }
    if found > expected {
        return Err(Error::MalformedHeader {
            path: header_path(stem),
            reason: format!("payload has {found} bytes, header declares {expected}"),
        });
    }
    let data = match header.dtype {
        Dtype::U8 => VolumeData::U8(bytes),
        Dtype::F32 => VolumeData::F32(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        ),
    };
    validate(&header, &data)?;
    Ok((header, data))
}

pub fn write_scalar(stem: &Path, v: &Volume, kind: VolumeKind) -> Result<()> {
    let header = VolumeHeader::new(v.shape(), 1, Dtype::F32, v.spacing(), kind);
    write_volume(stem, &header, &VolumeData::F32(v.data().to_vec()))
}

pub fn read_scalar(stem: &Path) -> Result<Volume> {
    let (h, data) = read_volume(stem)?;
    if h.channels != 1 {
        return Err(Error::invalid(format!("{} holds {} channels, expected 1", stem.display(), h.channels)));
    }
    let values = match data {
        VolumeData::F32(v) => v,
        VolumeData::U8(v) => v.into_iter().map(f32::from).collect(),
    };
    Volume::new(h.shape3(), h.spacing, values)
}

pub fn write_mask(stem: &Path, m: &BinaryMask, spacing: [f64; 3]) -> Result<()> {
    let header = VolumeHeader::new(m.shape(), 1, Dtype::U8, spacing, VolumeKind::Mask);
    write_volume(stem, &header, &VolumeData::U8(m.to_u8()))
}

pub fn read_mask(stem: &Path) -> Result<BinaryMask> {
    let (h, data) = read_volume(stem)?;
    match (h.kind, h.channels, data) {
        (VolumeKind::Mask, 1, VolumeData::U8(v)) => BinaryMask::from_u8(h.shape3(), &v),
        _ => Err(Error::invalid(format!("{} is not a single-channel mask", stem.display()))),
    }
}

/// Label cubes are stored as 26-channel u8 masks, probability cubes as f32.
pub fn write_cube(stem: &Path, cube: &ConnectivityCube, spacing: [f64; 3]) -> Result<()> {
    let (header, data) = match cube.kind() {
        CubeKind::Label => (
            VolumeHeader::new(cube.shape(), CHANNELS, Dtype::U8, spacing, VolumeKind::Mask),
            VolumeData::U8(cube.data().iter().map(|v| *v as u8).collect()),
        ),
        CubeKind::Probability => (
            VolumeHeader::new(cube.shape(), CHANNELS, Dtype::F32, spacing, VolumeKind::Probability),
            VolumeData::F32(cube.data().to_vec()),
        ),
    };
    write_volume(stem, &header, &data)
}

pub fn read_cube(stem: &Path) -> Result<ConnectivityCube> {
    let (h, data) = read_volume(stem)?;
    if h.channels != CHANNELS {
        return Err(Error::invalid(format!("{} holds {} channels, expected 26", stem.display(), h.channels)));
    }
    match data {
        VolumeData::U8(v) => ConnectivityCube::new(h.shape3(), CubeKind::Label, v.into_iter().map(f32::from).collect()),
        VolumeData::F32(v) => ConnectivityCube::new(h.shape3(), CubeKind::Probability, v),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn f32_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("vol");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let values: Vec<f32> = (0..60).map(|_| f32::from_bits(rng.random::<u32>() & 0x7f7f_ffff)).collect();
        let header = VolumeHeader::new(Shape3::new(3, 4, 5), 1, Dtype::F32, [0.5, 0.7, 0.7], VolumeKind::Intensity);
        write_volume(&stem, &header, &VolumeData::F32(values.clone())).unwrap();
        let (h, d) = read_volume(&stem).unwrap();
        assert_eq!(h, header);
        let VolumeData::F32(back) = d else { panic!("dtype changed") };
        assert!(back.iter().zip(&values).all(|(a, b)| a.to_bits() == b.to_bits()));
        // header bytes are stable under reserialization
        assert_eq!(fs::read_to_string(header_path(&stem)).unwrap(), h.to_json());
    }

    #[test]
    fn mask_value_two_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let header = VolumeHeader::new(Shape3::new(1, 1, 3), 1, Dtype::U8, [1.0; 3], VolumeKind::Mask);
        let err = write_volume(&dir.path().join("m"), &header, &VolumeData::U8(vec![0, 2, 1])).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn cube_roundtrip_preserves_channel_order() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("cube");
        let s = Shape3::new(2, 3, 2);
        let data: Vec<f32> = (0..CHANNELS * s.len()).map(|i| (i / s.len()) as f32 / 32.0).collect();
        let cube = ConnectivityCube::new(s, CubeKind::Probability, data).unwrap();
        write_cube(&stem, &cube, [1.0; 3]).unwrap();
        let back = read_cube(&stem).unwrap();
        for c in 0..CHANNELS {
            let sum_a: f32 = cube.channel(c).iter().sum();
            let sum_b: f32 = back.channel(c).iter().sum();
            assert_eq!(sum_a, sum_b, "channel {}", c + 1);
        }
        assert_eq!(back, cube);
    }

    #[test]
    fn distinct_read_errors() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("v");
        let header = VolumeHeader::new(Shape3::new(1, 2, 2), 1, Dtype::F32, [1.0; 3], VolumeKind::Distance);
        write_volume(&stem, &header, &VolumeData::F32(vec![0.0; 4])).unwrap();

        fs::write(payload_path(&stem), [0u8; 10]).unwrap();
        assert!(matches!(read_volume(&stem), Err(Error::Truncated { expected: 16, found: 10, .. })));

        let text = header.to_json().replace("\"f32\"", "\"f64\"");
        fs::write(header_path(&stem), text).unwrap();
        assert!(matches!(read_volume(&stem), Err(Error::UnknownDtype(d)) if d == "f64"));

        fs::write(header_path(&stem), "{ \"shape\": [1, 2").unwrap();
        assert!(matches!(read_volume(&stem), Err(Error::MalformedHeader { .. })));

        assert!(matches!(read_volume(&dir.path().join("missing")), Err(Error::Io { .. })));
    }
}
