//! DBV1 volume container.
//!
//! ```text
//! offset  size  field
//!  0       4    magic "DBV1"
//!  4      12    dims x, y, z (u32 LE)
//! 16      12    spacing x, y, z in µm (f32 LE)
//! 28       1    dtype: 0 = f32 intensity, 1 = u8 binary mask
//! 29       ..   payload, x fastest, little-endian
//! ```

use std::path::Path;

use super::volume::{Mask, Volume, Voxel};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"DBV1";
pub const HEADER_LEN: usize = 29;

pub const DTYPE_F32: u8 = 0;
pub const DTYPE_MASK: u8 = 1;

/// Voxel types that have a DBV1 encoding.
pub trait DbvVoxel: Voxel {
    const DTYPE: u8;
    const SIZE: usize;
    fn check(v: Self) -> Result<()>;
    fn put(v: Self, out: &mut Vec<u8>);
    fn get(bytes: &[u8]) -> Self;
}

impl DbvVoxel for f32 {
    const DTYPE: u8 = DTYPE_F32;
    const SIZE: usize = 4;
    fn check(v: Self) -> Result<()> {
        if v.is_nan() {
            return Err(Error::NonFinite("NaN voxel cannot be written".into()));
        }
        Ok(())
    }
    fn put(v: Self, out: &mut Vec<u8>) {
        out.extend(v.to_le_bytes());
    }
    fn get(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl DbvVoxel for u8 {
    const DTYPE: u8 = DTYPE_MASK;
    const SIZE: usize = 1;
    fn check(v: Self) -> Result<()> {
        if v > 1 {
            return Err(Error::invalid(format!("mask voxel {v} is not binary")));
        }
        Ok(())
    }
    fn put(v: Self, out: &mut Vec<u8>) {
        out.push(v);
    }
    fn get(bytes: &[u8]) -> Self {
        bytes[0]
    }
}

/// A decoded DBV1 file of either dtype.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyVolume {
    Intensity(Volume<f32>),
    Mask(Mask),
}

impl AnyVolume {
    pub fn dims(&self) -> [usize; 3] {
        match self {
            AnyVolume::Intensity(v) => v.dims(),
            AnyVolume::Mask(m) => m.dims(),
        }
    }

    /// Intensities; masks become 0.0 / 1.0.
    pub fn into_intensity(self) -> Volume<f32> {
        match self {
            AnyVolume::Intensity(v) => v,
            AnyVolume::Mask(m) => m.map(|v| v as f32),
        }
    }

    pub fn into_mask(self) -> Result<Mask> {
        match self {
            AnyVolume::Mask(m) => Ok(m),
            AnyVolume::Intensity(_) => Err(Error::invalid("expected a mask volume (dtype 1), found intensities")),
        }
    }
}

pub fn encode_header(dims: [usize; 3], spacing: [f32; 3], dtype: u8) -> Result<[u8; HEADER_LEN]> {
    let mut h = [0u8; HEADER_LEN];
    h[..4].copy_from_slice(&MAGIC);
    for a in 0..3 {
        let d = u32::try_from(dims[a])
            .ok()
            .filter(|&d| d > 0)
            .ok_or_else(|| Error::invalid(format!("dimension {} not representable", dims[a])))?;
        h[4 + 4 * a..8 + 4 * a].copy_from_slice(&d.to_le_bytes());
        h[16 + 4 * a..20 + 4 * a].copy_from_slice(&spacing[a].to_le_bytes());
    }
    h[28] = dtype;
    Ok(h)
}

pub fn encode_volume<T: DbvVoxel>(v: &Volume<T>) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN + v.len() * T::SIZE);
    out.extend(encode_header(v.dims(), v.spacing(), T::DTYPE)?);
    for &x in v.data() {
        T::check(x)?;
        T::put(x, &mut out);
    }
    Ok(out)
}

fn decode_payload<T: DbvVoxel>(dims: [usize; 3], spacing: [f32; 3], payload: &[u8]) -> Result<Volume<T>> {
    let data: Vec<T> = payload.chunks_exact(T::SIZE).map(T::get).collect();
    if T::DTYPE == DTYPE_MASK && data.iter().any(|&v| T::check(v).is_err()) {
        return Err(Error::Malformed("mask payload holds non-binary values".into()));
    }
    Ok(Volume::new(dims, data)?.with_spacing(spacing))
}

pub fn decode_volume(bytes: &[u8]) -> Result<AnyVolume> {
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(Error::BadMagic {
            expected: MAGIC,
            found: magic,
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let word = |o: usize| -> [u8; 4] { bytes[o..o + 4].try_into().expect("4 bytes") };
    let dims = [0, 1, 2].map(|a| u32::from_le_bytes(word(4 + 4 * a)) as usize);
    let spacing = [0, 1, 2].map(|a| f32::from_le_bytes(word(16 + 4 * a)));
    if dims.contains(&0) {
        return Err(Error::Malformed(format!("zero dimension in {dims:?}")));
    }
    let dtype = bytes[28];
    let size = match dtype {
        DTYPE_F32 => 4,
        DTYPE_MASK => 1,
        other => return Err(Error::UnknownDtype(other)),
    };
    let expected = dims
        .iter()
        .try_fold(size, |acc: usize, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::Malformed(format!("dimensions {dims:?} overflow")))?;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::Malformed(format!(
            "{} trailing bytes after the payload",
            bytes.len() - expected
        )));
    }
    let payload = &bytes[HEADER_LEN..];
    Ok(match dtype {
        DTYPE_F32 => AnyVolume::Intensity(decode_payload(dims, spacing, payload)?),
        _ => AnyVolume::Mask(decode_payload(dims, spacing, payload)?),
    })
}

pub fn write_volume<T: DbvVoxel>(v: &Volume<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_volume(v)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<AnyVolume> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_volume(&bytes)
}

pub fn read_intensity(path: impl AsRef<Path>) -> Result<Volume<f32>> {
    Ok(read_volume(path)?.into_intensity())
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    read_volume(path)?.into_mask()
}
