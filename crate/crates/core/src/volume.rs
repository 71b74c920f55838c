//! Volumes, masks and the VOLZ on-disk format.
//!
//! A VOLZ file is laid out as:
//!
//! ```text
//! "VOLZ1\n"                      6 magic bytes
//! u32 little-endian              header length in bytes
//! header                         UTF-8 JSON object:
//!                                {"dims":[S,H,W],"spacing_mm":..,"thickness_mm":..,"kind":..}
//! payload                        S*H*W little-endian f32, slice-major (slice, row, col)
//! ```
//!
//! `kind` is one of `image`, `continuous_mask`, `binary_mask`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const VOLZ_MAGIC: &[u8; 6] = b"VOLZ1\n";
const MAX_HEADER_LEN: usize = 1 << 16;

/// What a VOLZ payload represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolzKind {
    Image,
    ContinuousMask,
    BinaryMask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    Continuous,
    Binary,
}

impl From<MaskKind> for VolzKind {
    fn from(kind: MaskKind) -> Self {
        match kind {
            MaskKind::Continuous => VolzKind::ContinuousMask,
            MaskKind::Binary => VolzKind::BinaryMask,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct VolzHeader {
    dims: [usize; 3],
    spacing_mm: f64,
    thickness_mm: f64,
    kind: VolzKind,
}

/// Dimensions of a volume as (slices, rows, cols).
pub type Dims = [usize; 3];

#[inline]
pub fn voxel_count(dims: Dims) -> usize {
    dims[0] * dims[1] * dims[2]
}

/// A 3D scalar image indexed (slice, row, col), values in [0, 1].
///
/// Slice 0 is the back-most coronal slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: Dims,
    data: Vec<f32>,
    pub spacing_mm: f64,
    pub thickness_mm: f64,
}

impl Volume {
    pub fn new(dims: Dims, data: Vec<f32>, spacing_mm: f64, thickness_mm: f64) -> Result<Self> {
        let v = Volume { dims, data, spacing_mm, thickness_mm };
        v.validate()?;
        Ok(v)
    }

    pub fn filled(dims: Dims, value: f32, spacing_mm: f64, thickness_mm: f64) -> Result<Self> {
        Self::new(dims, vec![value; voxel_count(dims)], spacing_mm, thickness_mm)
    }

    pub fn validate(&self) -> Result<()> {
        validate_geometry(self.dims, self.data.len(), self.spacing_mm, self.thickness_mm)?;
        if let Some(i) = self.data.iter().position(|v| !v.is_finite() || !(0.0..=1.0).contains(v)) {
            return Err(Error::Validation(format!("voxel {i} has value {} outside [0, 1]", self.data[i])));
        }
        Ok(())
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn slices(&self) -> usize {
        self.dims[0]
    }

    pub fn height(&self) -> usize {
        self.dims[1]
    }

    pub fn width(&self) -> usize {
        self.dims[2]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Mutable access for in-crate builders; callers must re-validate.
    #[inline]
    pub fn get(&self, s: usize, r: usize, c: usize) -> f32 {
        self.data[(s * self.dims[1] + r) * self.dims[2] + c]
    }

    pub fn slice(&self, s: usize) -> &[f32] {
        let n = self.dims[1] * self.dims[2];
        &self.data[s * n..(s + 1) * n]
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        write_volz(
            path.as_ref(),
            &VolzHeader {
                dims: self.dims,
                spacing_mm: self.spacing_mm,
                thickness_mm: self.thickness_mm,
                kind: VolzKind::Image,
            },
            &self.data,
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (header, data) = read_volz(path)?;
        if header.kind != VolzKind::Image {
            return Err(Error::format(
                path.display().to_string(),
                format!("expected kind image, found {:?}", header.kind),
            ));
        }
        Volume::new(header.dims, data, header.spacing_mm, header.thickness_mm)
    }
}

/// Per-voxel mask sharing the geometry of its source volume.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskVolume {
    dims: Dims,
    data: Vec<f32>,
    kind: MaskKind,
    pub spacing_mm: f64,
    pub thickness_mm: f64,
}

impl MaskVolume {
    pub fn new(dims: Dims, data: Vec<f32>, kind: MaskKind, spacing_mm: f64, thickness_mm: f64) -> Result<Self> {
        let m = MaskVolume { dims, data, kind, spacing_mm, thickness_mm };
        m.validate()?;
        Ok(m)
    }

    pub fn zeros(dims: Dims, kind: MaskKind, spacing_mm: f64, thickness_mm: f64) -> Result<Self> {
        Self::new(dims, vec![0.0; voxel_count(dims)], kind, spacing_mm, thickness_mm)
    }

    pub fn validate(&self) -> Result<()> {
        validate_geometry(self.dims, self.data.len(), self.spacing_mm, self.thickness_mm)?;
        let bad = match self.kind {
            MaskKind::Continuous => self.data.iter().position(|v| !v.is_finite() || *v < 0.0),
            MaskKind::Binary => self.data.iter().position(|v| *v != 0.0 && *v != 1.0),
        };
        if let Some(i) = bad {
            return Err(Error::Validation(format!(
                "{:?} mask voxel {i} has invalid value {}",
                self.kind, self.data[i]
            )));
        }
        Ok(())
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, s: usize, r: usize, c: usize) -> f32 {
        self.data[(s * self.dims[1] + r) * self.dims[2] + c]
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|v| **v != 0.0).count()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        write_volz(
            path.as_ref(),
            &VolzHeader {
                dims: self.dims,
                spacing_mm: self.spacing_mm,
                thickness_mm: self.thickness_mm,
                kind: self.kind.into(),
            },
            &self.data,
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (header, data) = read_volz(path)?;
        let kind = match header.kind {
            VolzKind::ContinuousMask => MaskKind::Continuous,
            VolzKind::BinaryMask => MaskKind::Binary,
            VolzKind::Image => {
                return Err(Error::format(path.display().to_string(), "expected a mask kind, found image"))
            }
        };
        MaskVolume::new(header.dims, data, kind, header.spacing_mm, header.thickness_mm)
    }
}

fn validate_geometry(dims: Dims, len: usize, spacing_mm: f64, thickness_mm: f64) -> Result<()> {
    if dims.contains(&0) {
        return Err(Error::Validation(format!("dims {dims:?} must all be >= 1")));
    }
    let expected = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Validation(format!("dims {dims:?} overflow")))?;
    if expected != len {
        return Err(Error::shape(expected, len));
    }
    if !(spacing_mm.is_finite() && spacing_mm > 0.0) {
        return Err(Error::Validation(format!("spacing_mm must be > 0, got {spacing_mm}")));
    }
    if !(thickness_mm.is_finite() && thickness_mm > 0.0) {
        return Err(Error::Validation(format!("thickness_mm must be > 0, got {thickness_mm}")));
    }
    Ok(())
}

fn write_volz(path: &Path, header: &VolzHeader, data: &[f32]) -> Result<()> {
    let header_text = serde_json::to_vec(header).expect("header serializes");
    let mut buf = Vec::with_capacity(VOLZ_MAGIC.len() + 4 + header_text.len() + data.len() * 4);
    buf.extend_from_slice(VOLZ_MAGIC);
    buf.extend_from_slice(&(header_text.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header_text);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn read_volz(path: &Path) -> Result<(VolzHeader, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_volz(&bytes).map_err(|e| match e {
        Error::Format { message, .. } => Error::format(path.display().to_string(), message),
        other => other,
    })
}

fn parse_volz(bytes: &[u8]) -> Result<(VolzHeader, Vec<f32>)> {
    let ctx = "volz";
    if bytes.len() < VOLZ_MAGIC.len() + 4 || &bytes[..VOLZ_MAGIC.len()] != VOLZ_MAGIC {
        return Err(Error::format(ctx, "magic: missing VOLZ1 signature"));
    }
    let mut len_bytes = [0u8; 4];
    len_bytes.copy_from_slice(&bytes[6..10]);
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    if header_len > MAX_HEADER_LEN || 10 + header_len > bytes.len() {
        return Err(Error::format(
            ctx,
            format!("header_len: {header_len} exceeds available {} bytes", bytes.len() - 10),
        ));
    }
    let header: VolzHeader =
        serde_json::from_slice(&bytes[10..10 + header_len]).map_err(|e| Error::format(ctx, format!("header: {e}")))?;
    let payload = &bytes[10 + header_len..];
    let expected = header
        .dims
        .iter()
        .try_fold(4usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::format(ctx, format!("dims: {:?} overflow", header.dims)))?;
    if payload.len() != expected {
        return Err(Error::format(ctx, format!("payload: expected {expected} bytes, found {}", payload.len())));
    }
    let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok((header, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random_volume(dims: Dims, seed: u64) -> Volume {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = (0..voxel_count(dims)).map(|_| rng.random::<f32>()).collect();
        Volume::new(dims, data, 4.5, 3.0).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.volz");
        let v = random_volume([4, 8, 8], 7);
        v.save(&path).unwrap();
        let back = Volume::load(&path).unwrap();
        assert_eq!(back.dims(), v.dims());
        assert_eq!(back.spacing_mm.to_bits(), v.spacing_mm.to_bits());
        assert_eq!(back.thickness_mm.to_bits(), v.thickness_mm.to_bits());
        let a: Vec<u32> = v.data().iter().map(|x| x.to_bits()).collect();
        let b: Vec<u32> = back.data().iter().map(|x| x.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn nan_volume_is_rejected_and_not_written() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nan.volz");
        let v = Volume { dims: [1, 1, 2], data: vec![0.1, f32::NAN], spacing_mm: 1.0, thickness_mm: 1.0 };
        assert!(matches!(v.save(&path), Err(Error::Validation(_))));
        assert!(!path.exists());
    }

    #[test]
    fn single_voxel_payload_is_four_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.volz");
        Volume::filled([1, 1, 1], 0.5, 1.0, 1.0).unwrap().save(&path).unwrap();
        let bytes = fs::read(&path).unwrap();
        let header_len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        assert_eq!(bytes.len() - 10 - header_len, 4);
        assert_eq!(&bytes[bytes.len() - 4..], &0.5f32.to_le_bytes());
    }

    fn raw_file(header: &str, payload_bytes: usize) -> Vec<u8> {
        let mut buf = VOLZ_MAGIC.to_vec();
        buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
        buf.extend_from_slice(header.as_bytes());
        buf.extend(std::iter::repeat_n(0u8, payload_bytes));
        buf
    }

    #[test]
    fn header_dims_define_voxel_count() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.volz");
        let header = r#"{"dims":[2,3,4],"spacing_mm":5.0,"thickness_mm":4.0,"kind":"image"}"#;
        fs::write(&path, raw_file(header, 96)).unwrap();
        let v = Volume::load(&path).unwrap();
        assert_eq!(v.data().len(), 24);
        assert_eq!(v.dims(), [2, 3, 4]);
    }

    #[test]
    fn truncated_payload_reports_lengths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.volz");
        let header = r#"{"dims":[2,3,4],"spacing_mm":5.0,"thickness_mm":4.0,"kind":"image"}"#;
        fs::write(&path, raw_file(header, 90)).unwrap();
        let err = Volume::load(&path).unwrap_err().to_string();
        assert!(err.contains("payload") && err.contains("96") && err.contains("90"), "{err}");
    }

    #[test]
    fn zero_spacing_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.volz");
        let header = r#"{"dims":[1,1,1],"spacing_mm":0.0,"thickness_mm":4.0,"kind":"image"}"#;
        fs::write(&path, raw_file(header, 4)).unwrap();
        assert!(matches!(Volume::load(&path), Err(Error::Validation(_))));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(Volume::load("/nonexistent/v.volz"), Err(Error::Io { .. })));
    }

    #[test]
    fn mask_round_trip_keeps_kind() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.volz");
        let m = MaskVolume::new([1, 2, 2], vec![0.0, 1.0, 1.0, 0.0], MaskKind::Binary, 2.0, 2.0).unwrap();
        m.save(&path).unwrap();
        assert_eq!(MaskVolume::load(&path).unwrap(), m);
        assert!(Volume::load(&path).is_err());
    }

    proptest! {
        #[test]
        fn arbitrary_bytes_never_yield_invalid_volume(
            header in "\\{\"dims\":\\[[0-9]{1,2},[0-9]{1,2},[0-9]{1,2}\\],\"spacing_mm\":-?[0-9]\\.[0-9],\"thickness_mm\":[0-9]\\.[0-9],\"kind\":\"(image|binary_mask)\"\\}",
            payload in proptest::collection::vec(any::<u8>(), 0..64),
            garbage in proptest::collection::vec(any::<u8>(), 0..32),
        ) {
            for bytes in [
                {
                    let mut b = VOLZ_MAGIC.to_vec();
                    b.extend_from_slice(&(header.len() as u32).to_le_bytes());
                    b.extend_from_slice(header.as_bytes());
                    b.extend_from_slice(&payload);
                    b
                },
                garbage.clone(),
            ] {
                if let Ok((h, data)) = parse_volz(&bytes) {
                    if h.kind == VolzKind::Image {
                        if let Ok(v) = Volume::new(h.dims, data, h.spacing_mm, h.thickness_mm) {
                            prop_assert!(v.validate().is_ok());
                        }
                    }
                }
            }
        }

        #[test]
        fn mask_round_trip(values in proptest::collection::vec(0.0f32..100.0, 12)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("c.volz");
            let m = MaskVolume::new([3, 2, 2], values, MaskKind::Continuous, 3.5, 1.25).unwrap();
            m.save(&path).unwrap();
            let back = MaskVolume::load(&path).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
