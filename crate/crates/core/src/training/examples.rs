//! Turning labelled volumes into training examples for both stages.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Volume, Voxel};
use crate::error::{Error, Result};

pub const POSITIVE_FRACTION: f64 = 0.99;
pub const NEGATIVE_FRACTION: f64 = 0.80;
pub const SUBVOLUME_FRACTION: f64 = 0.97;

/// Mask voxel weight: binary masks count 1 per foreground voxel, count
/// grids (from block downsampling) count their stored value.
pub trait MaskWeight: Voxel {
    fn weight(self) -> u64;
}

impl MaskWeight for u8 {
    fn weight(self) -> u64 {
        (self != 0) as u64
    }
}

impl MaskWeight for u32 {
    fn weight(self) -> u64 {
        self as u64
    }
}

/// Inclusive 3D prefix sums for constant-time box totals.
pub struct PrefixSum3 {
    dims: [usize; 3],
    sums: Vec<u64>,
}

impl PrefixSum3 {
    pub fn new<M: MaskWeight>(mask: &Volume<M>) -> Self {
        let [nx, ny, nz] = mask.dims();
        let (sx, sy) = (nx + 1, (nx + 1) * (ny + 1));
        let mut sums = vec![0u64; sy * (nz + 1)];
        for z in 0..nz {
            for y in 0..ny {
                let mut row = 0u64;
                for x in 0..nx {
                    row += mask.get(x, y, z).weight();
                    let i = (x + 1) + (y + 1) * sx + (z + 1) * sy;
                    sums[i] = row + sums[i - sx] + sums[i - sy] - sums[i - sx - sy];
                }
            }
        }
        PrefixSum3 { dims: mask.dims(), sums }
    }

    pub fn total(&self) -> u64 {
        self.box_sum([0; 3], self.dims)
    }

    /// Total weight in `[anchor, anchor + size)`; the box must fit.
    pub fn box_sum(&self, anchor: [usize; 3], size: [usize; 3]) -> u64 {
        let (sx, sy) = (self.dims[0] + 1, (self.dims[0] + 1) * (self.dims[1] + 1));
        let at = |x: usize, y: usize, z: usize| self.sums[x + y * sx + z * sy];
        let [x0, y0, z0] = anchor;
        let [x1, y1, z1] = [x0 + size[0], y0 + size[1], z0 + size[2]];
        // inclusion-exclusion; the signed order keeps every partial sum >= 0
        at(x1, y1, z1) + at(x0, y0, z1) + at(x0, y1, z0) + at(x1, y0, z0)
            - at(x0, y1, z1)
            - at(x1, y0, z1)
            - at(x1, y1, z0)
            - at(x0, y0, z0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WindowClass {
    Positive,
    Negative,
    Ambiguous,
}

impl WindowClass {
    pub fn of_fraction(fraction: f64) -> WindowClass {
        if fraction > POSITIVE_FRACTION {
            WindowClass::Positive
        } else if fraction < NEGATIVE_FRACTION {
            WindowClass::Negative
        } else {
            WindowClass::Ambiguous
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowLabel {
    pub anchor: [usize; 3],
    pub class: WindowClass,
    pub fraction: f64,
}

/// `0, stride, 2·stride, …` up to `dim - window`, with no flush anchor.
pub fn grid_anchors(dim: usize, window: usize, stride: usize) -> Vec<usize> {
    if dim < window || stride == 0 {
        return Vec::new();
    }
    (0..=dim - window).step_by(stride).collect()
}

fn check_window<M: Voxel>(mask: &Volume<M>, window: usize) -> Result<()> {
    if window == 0 || mask.dims().iter().any(|&d| d < window) {
        return Err(Error::shape(format!("window {window} does not fit mask {:?}", mask.dims())));
    }
    Ok(())
}

fn for_each_anchor(dims: [usize; 3], window: usize, stride: usize, mut f: impl FnMut([usize; 3])) {
    let [ax, ay, az] = [0, 1, 2].map(|a| grid_anchors(dims[a], window, stride));
    for &z in &az {
        for &y in &ay {
            for &x in &ax {
                f([x, y, z]);
            }
        }
    }
}

fn nonempty_total(ps: &PrefixSum3) -> Result<f64> {
    match ps.total() {
        0 => Err(Error::EmptyMask("window fractions of an empty mask are undefined".into())),
        t => Ok(t as f64),
    }
}

/// Positive windows from the `stride_pos` scan followed by negative
/// windows from the `stride_neg` scan. `mask` may be a binary mask or a
/// block-count grid.
pub fn extract_localization_examples<M: MaskWeight>(
    mask: &Volume<M>,
    window: usize,
    stride_pos: usize,
    stride_neg: usize,
) -> Result<Vec<WindowLabel>> {
    check_window(mask, window)?;
    if stride_pos == 0 || stride_neg == 0 {
        return Err(Error::invalid("strides must be positive"));
    }
    let ps = PrefixSum3::new(mask);
    let total = nonempty_total(&ps)?;
    let mut out = Vec::new();
    for (stride, keep) in [(stride_pos, WindowClass::Positive), (stride_neg, WindowClass::Negative)] {
        for_each_anchor(mask.dims(), window, stride, |anchor| {
            let fraction = ps.box_sum(anchor, [window; 3]) as f64 / total;
            let class = WindowClass::of_fraction(fraction);
            if class == keep {
                out.push(WindowLabel { anchor, class, fraction });
            }
        });
    }
    Ok(out)
}

/// Every stride-1 anchor whose `side³` cube holds at least `min_fraction`
/// of the mask.
pub fn extract_segmentation_subvolumes<M: MaskWeight>(
    mask: &Volume<M>,
    side: usize,
    min_fraction: f64,
) -> Result<Vec<[usize; 3]>> {
    check_window(mask, side)?;
    let ps = PrefixSum3::new(mask);
    let total = nonempty_total(&ps)?;
    let mut out = Vec::new();
    for_each_anchor(mask.dims(), side, 1, |anchor| {
        if ps.box_sum(anchor, [side; 3]) as f64 / total >= min_fraction {
            out.push(anchor);
        }
    });
    Ok(out)
}

/// Undersamples the majority class to the minority count, then caps each
/// class at `per_class_cap`. Ambiguous items are dropped. Positives come
/// first; survivors keep their input order within a class.
pub fn balance_classes<L: Clone, R: Rng + ?Sized>(
    items: &[L],
    class_of: impl Fn(&L) -> WindowClass,
    per_class_cap: Option<usize>,
    rng: &mut R,
) -> Vec<L> {
    let pick = |want: WindowClass| -> Vec<usize> {
        (0..items.len()).filter(|&i| class_of(&items[i]) == want).collect()
    };
    let (mut pos, mut neg) = (pick(WindowClass::Positive), pick(WindowClass::Negative));
    let n = pos.len().min(neg.len()).min(per_class_cap.unwrap_or(usize::MAX));
    for set in [&mut pos, &mut neg] {
        if set.len() > n {
            set.shuffle(rng);
            set.truncate(n);
            set.sort_unstable();
        }
    }
    pos.into_iter().chain(neg).map(|i| items[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefix_sum_matches_loop() {
        let m = Volume::from_fn([5, 4, 6], |x, y, z| ((x * 7 + y * 3 + z) % 4 == 0) as u8);
        let ps = PrefixSum3::new(&m);
        let (a, s) = ([1, 0, 2], [3, 4, 3]);
        let mut want = 0;
        for z in a[2]..a[2] + s[2] {
            for y in a[1]..a[1] + s[1] {
                for x in a[0]..a[0] + s[0] {
                    want += m.get(x, y, z) as u64;
                }
            }
        }
        assert_eq!(ps.box_sum(a, s), want);
        assert_eq!(ps.total(), m.count_nonzero() as u64);
    }

    #[test]
    fn grid_has_no_flush_anchor() {
        assert_eq!(grid_anchors(70, 64, 3), vec![0, 3, 6]);
        assert_eq!(grid_anchors(69, 64, 3), vec![0, 3]);
        assert_eq!(grid_anchors(64, 64, 2), vec![0]);
        assert!(grid_anchors(10, 64, 2).is_empty());
    }

    #[test]
    fn boundary_fraction_is_ambiguous() {
        assert_eq!(WindowClass::of_fraction(0.99), WindowClass::Ambiguous);
        assert_eq!(WindowClass::of_fraction(0.80), WindowClass::Ambiguous);
        assert_eq!(WindowClass::of_fraction(99.0 / 100.0), WindowClass::Ambiguous);
        assert_eq!(WindowClass::of_fraction(0.7999), WindowClass::Negative);
    }

    #[test]
    fn empty_mask_rejected() {
        let m: Volume<u8> = Volume::zeros([8, 8, 8]);
        assert!(matches!(extract_localization_examples(&m, 4, 2, 3), Err(Error::EmptyMask(_))));
        assert!(matches!(extract_segmentation_subvolumes(&m, 4, 0.97), Err(Error::EmptyMask(_))));
    }
}
