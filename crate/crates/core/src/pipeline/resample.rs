use serde::{Deserialize, Serialize};

use crate::data::{Mask, Volume, Voxel};
use crate::error::{Error, Result};

/// Sums each 2³ block (clipped at odd trailing edges) into a half-size
/// grid, returning the sums and the number of voxels in each block.
fn block_sums<T: Voxel>(v: &Volume<T>, value: impl Fn(T) -> f64) -> (Volume<f32>, Vec<f64>, Vec<u8>) {
    let [nx, ny, nz] = v.dims();
    let half = v.dims().map(|d| d.div_ceil(2));
    let mut sums = Vec::with_capacity(half.iter().product());
    let mut counts = Vec::with_capacity(sums.capacity());
    for oz in 0..half[2] {
        for oy in 0..half[1] {
            for ox in 0..half[0] {
                let (mut s, mut n) = (0.0, 0u8);
                for z in 2 * oz..(2 * oz + 2).min(nz) {
                    for y in 2 * oy..(2 * oy + 2).min(ny) {
                        for x in 2 * ox..(2 * ox + 2).min(nx) {
                            s += value(v.get(x, y, z));
                            n += 1;
                        }
                    }
                }
                sums.push(s);
                counts.push(n);
            }
        }
    }
    let spacing = v.spacing().map(|s| 2.0 * s);
    (Volume::zeros(half).with_spacing(spacing), sums, counts)
}

/// Half-resolution volume; each voxel is the mean of its (possibly
/// partial) 2³ block.
pub fn downsample2(v: &Volume<f32>) -> Volume<f32> {
    let (mut out, sums, counts) = block_sums(v, |x| x as f64);
    for ((o, s), n) in out.data_mut().iter_mut().zip(sums).zip(counts) {
        *o = (s / n as f64) as f32;
    }
    out
}

/// Half-resolution foreground counts: each voxel holds how many of its
/// block's voxels are foreground, so window fractions stay exact.
pub fn downsample_mask_counts(mask: &Mask) -> Volume<u32> {
    let (out, sums, _) = block_sums(mask, |b| (b != 0) as u8 as f64);
    Volume::new(out.dims(), sums.into_iter().map(|s| s as u32).collect())
        .expect("sizes agree")
        .with_spacing(out.spacing())
}

/// A volume zero-padded on the high side, with the original extent.
#[derive(Clone, Debug, PartialEq)]
pub struct Padded<T = f32> {
    pub volume: Volume<T>,
    pub original_dims: [usize; 3],
    /// Zero slabs appended per axis.
    pub padding: [usize; 3],
}

impl<T: Voxel> Padded<T> {
    /// Crops a same-size volume back to the original extent.
    pub fn strip<U: Voxel>(&self, v: &Volume<U>) -> Result<Volume<U>> {
        if v.dims() != self.volume.dims() {
            return Err(Error::shape(format!(
                "cannot strip padding of {:?} from {:?}",
                self.volume.dims(),
                v.dims()
            )));
        }
        v.crop([0; 3], self.original_dims)
    }
}

/// Pads every axis shorter than `min_side` up to `min_side`.
pub fn pad_to_min<T: Voxel>(v: &Volume<T>, min_side: usize) -> Padded<T> {
    let dims = v.dims().map(|d| d.max(min_side));
    let padding = [0, 1, 2].map(|a| dims[a] - v.dims()[a]);
    Padded {
        volume: v.pad_high(dims).expect("padding only grows"),
        original_dims: v.dims(),
        padding,
    }
}

/// Cube of side `side` anchored at `anchor` (full-resolution voxels).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub anchor: [usize; 3],
    pub side: usize,
}

impl BoundingBox {
    pub fn contains(&self, p: [usize; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.anchor[a] && p[a] < self.anchor[a] + self.side)
    }

    /// Exclusive upper corner.
    pub fn end(&self) -> [usize; 3] {
        self.anchor.map(|a| a + self.side)
    }

    pub fn fits(&self, dims: [usize; 3]) -> bool {
        (0..3).all(|a| self.anchor[a] + self.side <= dims[a])
    }

    /// The box of `side` centred on `center`, shifted inward to lie inside
    /// `dims`. Each dim must be at least `side`.
    pub fn centered_clamped(center: [usize; 3], side: usize, dims: [usize; 3]) -> Result<Self> {
        if dims.iter().any(|&d| d < side) {
            return Err(Error::shape(format!("box side {side} exceeds volume {dims:?}")));
        }
        let anchor = [0, 1, 2].map(|a| center[a].saturating_sub(side / 2).min(dims[a] - side));
        Ok(BoundingBox { anchor, side })
    }
}

/// Grid anchors `0, s, 2s, …` plus a flush anchor at `dim - window` when
/// the grid misses it.
pub fn enumerate_windows_1d(dim: usize, window: usize, stride: usize) -> Vec<usize> {
    if dim < window || stride == 0 {
        return Vec::new();
    }
    let mut v: Vec<usize> = (0..=dim - window).step_by(stride).collect();
    if *v.last().expect("at least anchor 0") != dim - window {
        v.push(dim - window);
    }
    v
}

/// All 3D window anchors, x fastest.
pub fn enumerate_windows(dims: [usize; 3], window: usize, stride: usize) -> Result<Vec<[usize; 3]>> {
    if window == 0 || stride == 0 {
        return Err(Error::invalid("window and stride must be positive"));
    }
    if dims.iter().any(|&d| d < window) {
        return Err(Error::shape(format!("window {window} does not fit {dims:?}")));
    }
    let [ax, ay, az] = dims.map(|d| enumerate_windows_1d(d, window, stride));
    let mut out = Vec::with_capacity(ax.len() * ay.len() * az.len());
    for &z in &az {
        for &y in &ay {
            for &x in &ax {
                out.push([x, y, z]);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_mean() {
        let v = Volume::from_fn([2, 2, 2], |x, y, z| (x + 2 * y + 4 * z) as f32);
        assert_eq!(downsample2(&v).data(), &[3.5]);
    }

    #[test]
    fn window_hand_cases() {
        assert_eq!(enumerate_windows_1d(70, 64, 3), vec![0, 3, 6]);
        assert_eq!(enumerate_windows_1d(69, 64, 3), vec![0, 3, 5]);
        assert_eq!(enumerate_windows_1d(64, 64, 3), vec![0]);
    }

    #[test]
    fn pads_short_axis() {
        let v = Volume::filled([150, 161, 81], 1.0f32);
        let p = pad_to_min(&v, 128);
        assert_eq!(p.volume.dims(), [150, 161, 128]);
        assert_eq!(p.padding, [0, 0, 47]);
        assert_eq!(p.strip(&p.volume).unwrap(), v);
    }

    #[test]
    fn clamping_shifts_inward() {
        let b = BoundingBox::centered_clamped([2, 60, 99], 48, [100, 100, 100]).unwrap();
        assert_eq!(b.anchor, [0, 36, 52]);
        assert!(b.fits([100; 3]));
    }
}
