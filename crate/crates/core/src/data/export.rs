//! Binary PGM (P5) slice export.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::volume::{Mask, Volume, Voxel};
use crate::error::{Error, Result};

/// Axis normal to the exported slice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" | "X" => Ok(Axis::X),
            "y" | "Y" => Ok(Axis::Y),
            "z" | "Z" => Ok(Axis::Z),
            _ => Err(Error::invalid(format!("unknown axis {s:?}"))),
        }
    }
}

/// Row-major pixels of one slice plus `(width, height)`.
fn slice<T: Voxel>(v: &Volume<T>, axis: Axis, index: usize) -> Result<(Vec<T>, usize, usize)> {
    let [nx, ny, nz] = v.dims();
    let limit = match axis {
        Axis::X => nx,
        Axis::Y => ny,
        Axis::Z => nz,
    };
    if index >= limit {
        return Err(Error::invalid(format!("slice {index} outside 0..{limit} along {axis:?}")));
    }
    let (w, h) = match axis {
        Axis::X => (ny, nz),
        Axis::Y => (nx, nz),
        Axis::Z => (nx, ny),
    };
    let mut px = Vec::with_capacity(w * h);
    for r in 0..h {
        for c in 0..w {
            px.push(match axis {
                Axis::X => v.get(index, c, r),
                Axis::Y => v.get(c, index, r),
                Axis::Z => v.get(c, r, index),
            });
        }
    }
    Ok((px, w, h))
}

pub fn encode_pgm(pixels: &[u8], width: usize, height: usize) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Min-max scaling to 0..=255; a constant slice maps to mid-gray.
pub fn scale_to_u8(values: &[f32]) -> Vec<u8> {
    let (lo, hi) = values
        .iter()
        .filter(|v| v.is_finite())
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
        return vec![128; values.len()];
    }
    let span = (hi - lo) as f64;
    values
        .iter()
        .map(|&v| {
            if v.is_finite() {
                (((v - lo) as f64 / span) * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect()
}

/// Path used for the mask slice next to `path`.
pub fn mask_slice_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.mask.pgm"))
}

/// Writes the slice to `path` and, with a mask, the mask slice (0 / 255)
/// to [`mask_slice_path`]. Returns the written paths.
pub fn export_slice(volume: &Volume<f32>, mask: Option<&Mask>, axis: Axis, index: usize, path: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let path = path.as_ref();
    let (px, w, h) = slice(volume, axis, index)?;
    let img = encode_pgm(&scale_to_u8(&px), w, h);
    let mut written = vec![path.to_path_buf()];
    let mask_bytes = match mask {
        Some(m) => {
            if m.dims() != volume.dims() {
                return Err(Error::shape("mask and volume dims differ"));
            }
            let (mp, _, _) = slice(m, axis, index)?;
            let px: Vec<u8> = mp.iter().map(|&v| if v != 0 { 255 } else { 0 }).collect();
            Some(encode_pgm(&px, w, h))
        }
        None => None,
    };
    std::fs::write(path, img).map_err(|e| Error::io(path, e))?;
    if let Some(bytes) = mask_bytes {
        let mp = mask_slice_path(path);
        std::fs::write(&mp, bytes).map_err(|e| Error::io(&mp, e))?;
        written.push(mp);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaling() {
        assert_eq!(scale_to_u8(&[0.0, 3.0]), vec![0, 255]);
        assert_eq!(scale_to_u8(&[2.0; 4]), vec![128; 4]);
    }

    #[test]
    fn slice_orientation() {
        let v = Volume::from_fn([3, 2, 4], |x, y, z| (x + 10 * y + 100 * z) as f32);
        let (px, w, h) = slice(&v, Axis::Y, 1).unwrap();
        assert_eq!((w, h), (3, 4));
        assert_eq!(px[3 * 2 + 1], 211.0);
        assert!(slice(&v, Axis::Z, 4).is_err());
    }
}
