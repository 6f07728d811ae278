//! Lossless lattice isometries: quarter-turn rotations and axis flips.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Volume, Voxel};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Signed axis permutation on `[x, y, z]` coordinates: output axis `b`
/// reads input axis `perm[b]`, reversed when `flip[b]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AxisMap {
    pub perm: [usize; 3],
    pub flip: [bool; 3],
}

impl AxisMap {
    pub const IDENTITY: AxisMap = AxisMap {
        perm: [0, 1, 2],
        flip: [false; 3],
    };

    /// `self` applied after `first`.
    pub fn after(self, first: AxisMap) -> AxisMap {
        AxisMap {
            perm: self.perm.map(|p| first.perm[p]),
            flip: [0, 1, 2].map(|b| self.flip[b] ^ first.flip[self.perm[b]]),
        }
    }

    pub fn inverse(self) -> AxisMap {
        let mut inv = AxisMap::IDENTITY;
        for b in 0..3 {
            inv.perm[self.perm[b]] = b;
            inv.flip[self.perm[b]] = self.flip[b];
        }
        inv
    }

    pub fn output_dims(self, dims: [usize; 3]) -> [usize; 3] {
        self.perm.map(|p| dims[p])
    }

    /// Gather table: `out[i] = in[table[i]]`.
    fn table(self, dims: [usize; 3]) -> Vec<usize> {
        let od = self.output_dims(dims);
        let stride = [1, dims[0], dims[0] * dims[1]];
        let mut t = Vec::with_capacity(dims.iter().product());
        for z in 0..od[2] {
            for y in 0..od[1] {
                for x in 0..od[0] {
                    let q = [x, y, z];
                    let mut src = 0;
                    for b in 0..3 {
                        let c = if self.flip[b] { od[b] - 1 - q[b] } else { q[b] };
                        src += c * stride[self.perm[b]];
                    }
                    t.push(src);
                }
            }
        }
        t
    }

    pub fn apply<T: Copy>(self, data: &[T], dims: [usize; 3]) -> Result<Vec<T>> {
        if data.len() != dims.iter().product::<usize>() {
            return Err(Error::shape("grid data does not match its dims"));
        }
        Ok(self.table(dims).into_iter().map(|i| data[i]).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RotationAxis {
    X,
    Y,
    Z,
}

/// Identity or a quarter-turn multiple about one axis (10 choices).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rotation {
    Identity,
    About { axis: RotationAxis, quarter_turns: u8 },
}

impl Rotation {
    pub fn all() -> [Rotation; 10] {
        let mut out = [Rotation::Identity; 10];
        let mut i = 1;
        for axis in [RotationAxis::X, RotationAxis::Y, RotationAxis::Z] {
            for quarter_turns in 1..=3 {
                out[i] = Rotation::About { axis, quarter_turns };
                i += 1;
            }
        }
        out
    }

    pub fn axis_map(self) -> AxisMap {
        let (axis, turns) = match self {
            Rotation::Identity => return AxisMap::IDENTITY,
            Rotation::About { axis, quarter_turns } => (axis, quarter_turns),
        };
        // one quarter turn, right-handed
        let q = match axis {
            RotationAxis::X => AxisMap {
                perm: [0, 2, 1],
                flip: [false, true, false],
            },
            RotationAxis::Y => AxisMap {
                perm: [2, 1, 0],
                flip: [false, false, true],
            },
            RotationAxis::Z => AxisMap {
                perm: [1, 0, 2],
                flip: [true, false, false],
            },
        };
        (0..turns).fold(AxisMap::IDENTITY, |m, _| q.after(m))
    }
}

/// A rotation followed by independent flips of the x, y and z axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AugmentationOp {
    pub rotation: Rotation,
    pub flips: [bool; 3],
}

impl AugmentationOp {
    pub const IDENTITY: AugmentationOp = AugmentationOp {
        rotation: Rotation::Identity,
        flips: [false; 3],
    };

    /// All 80 listed ops. They realise 32 distinct maps: single-axis turns
    /// never produce a 3-cycle of the axes.
    pub fn all() -> Vec<AugmentationOp> {
        let mut v = Vec::with_capacity(80);
        for rotation in Rotation::all() {
            for f in 0..8u8 {
                v.push(AugmentationOp {
                    rotation,
                    flips: [f & 1 != 0, f & 2 != 0, f & 4 != 0],
                });
            }
        }
        v
    }

    pub fn axis_map(self) -> AxisMap {
        let flip = AxisMap {
            perm: [0, 1, 2],
            flip: self.flips,
        };
        flip.after(self.rotation.axis_map())
    }

    /// An op from the list that undoes this one.
    pub fn inverse(self) -> AugmentationOp {
        let target = self.axis_map().inverse();
        Self::all()
            .into_iter()
            .find(|op| op.axis_map() == target)
            .expect("the listed ops are closed under inversion")
    }

    pub fn is_valid_for(self, dims: [usize; 3]) -> bool {
        self.axis_map().output_dims(dims) == dims
    }

    /// Uniform rotation and fair-coin flips, redrawn until the op keeps
    /// `dims` (always on the first draw for cubes).
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, dims: [usize; 3]) -> AugmentationOp {
        loop {
            let rotation = Rotation::all()[rng.random_range(0..10)];
            let flips = [rng.random_bool(0.5), rng.random_bool(0.5), rng.random_bool(0.5)];
            let op = AugmentationOp { rotation, flips };
            if op.is_valid_for(dims) {
                return op;
            }
        }
    }

    fn check(self, dims: [usize; 3]) -> Result<AxisMap> {
        if !self.is_valid_for(dims) {
            return Err(Error::invalid(format!("{self:?} does not preserve dims {dims:?}")));
        }
        Ok(self.axis_map())
    }

    pub fn apply_volume<T: Voxel>(self, v: &Volume<T>) -> Result<Volume<T>> {
        let map = self.check(v.dims())?;
        Ok(Volume::new(v.dims(), map.apply(v.data(), v.dims())?)?.with_spacing(v.spacing()))
    }

    /// Applies the op to every spatial plane of a tensor (x = width).
    pub fn apply_tensor<T: Real>(self, t: &Tensor<T>) -> Result<Tensor<T>> {
        let s = t.shape();
        let dims = [s.width, s.height, s.depth];
        let map = self.check(dims)?;
        let table = map.table(dims);
        let mut out = Tensor::zeros(s);
        for n in 0..s.batch {
            for c in 0..s.channels {
                let src = t.plane(n, c);
                for (o, &i) in out.plane_mut(n, c).iter_mut().zip(&table) {
                    *o = src[i];
                }
            }
        }
        Ok(out)
    }
}

/// Applies `op` to an image and its mask alike.
pub fn augment<T: Voxel, M: Voxel>(
    volume: &Volume<T>,
    mask: Option<&Volume<M>>,
    op: AugmentationOp,
) -> Result<(Volume<T>, Option<Volume<M>>)> {
    let v = op.apply_volume(volume)?;
    let m = match mask {
        Some(m) => {
            if m.dims() != volume.dims() {
                return Err(Error::shape("mask and volume dims differ"));
            }
            Some(op.apply_volume(m)?)
        }
        None => None,
    };
    Ok((v, m))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube() -> Volume<f32> {
        Volume::from_fn([4, 4, 4], |x, y, z| (x + 4 * y + 16 * z) as f32)
    }

    #[test]
    fn quarter_turn_about_z() {
        let op = AugmentationOp {
            rotation: Rotation::About {
                axis: RotationAxis::Z,
                quarter_turns: 1,
            },
            flips: [false; 3],
        };
        let v = Volume::from_fn([3, 2, 1], |x, y, _| (x + 3 * y) as f32);
        assert!(!op.is_valid_for(v.dims()));
        let map = op.axis_map();
        assert_eq!(map.output_dims([3, 2, 1]), [2, 3, 1]);
        let out = map.apply(v.data(), v.dims()).unwrap();
        // (x, y) -> (-y, x): the top-left output reads the last row
        assert_eq!(out, vec![3.0, 0.0, 4.0, 1.0, 5.0, 2.0]);
    }

    #[test]
    fn group_laws() {
        let v = cube();
        for op in AugmentationOp::all() {
            let back = op.inverse().apply_volume(&op.apply_volume(&v).unwrap()).unwrap();
            assert_eq!(back, v, "{op:?}");
        }
        for axis in [RotationAxis::X, RotationAxis::Y, RotationAxis::Z] {
            let op = AugmentationOp {
                rotation: Rotation::About { axis, quarter_turns: 1 },
                flips: [false; 3],
            };
            let mut w = v.clone();
            for _ in 0..4 {
                w = op.apply_volume(&w).unwrap();
            }
            assert_eq!(w, v);
        }
        let distinct: std::collections::HashSet<_> = AugmentationOp::all().iter().map(|o| o.axis_map()).collect();
        assert_eq!(distinct.len(), 32);
    }
}
