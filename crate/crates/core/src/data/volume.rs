use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

pub const DEFAULT_SPACING_UM: f32 = 50.0;

/// Element type of a [`Volume`].
pub trait Voxel: Copy + Default + PartialEq + std::fmt::Debug + Send + Sync + 'static {}

impl Voxel for f32 {}
impl Voxel for u8 {}
impl Voxel for u32 {}

/// Dense 3D grid, `dims = [x, y, z]` with x varying fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume<T = f32> {
    dims: [usize; 3],
    spacing: [f32; 3],
    data: Vec<T>,
}

/// Binary mask; any nonzero voxel is foreground.
pub type Mask = Volume<u8>;

impl<T: Voxel> Volume<T> {
    pub fn new(dims: [usize; 3], data: Vec<T>) -> Result<Self> {
        let n = dims.iter().product::<usize>();
        if data.len() != n {
            return Err(Error::shape(format!(
                "volume {dims:?} needs {n} voxels, got {}",
                data.len()
            )));
        }
        Ok(Volume {
            dims,
            spacing: [DEFAULT_SPACING_UM; 3],
            data,
        })
    }

    pub fn filled(dims: [usize; 3], value: T) -> Self {
        Volume {
            dims,
            spacing: [DEFAULT_SPACING_UM; 3],
            data: vec![value; dims.iter().product()],
        }
    }

    pub fn zeros(dims: [usize; 3]) -> Self {
        Self::filled(dims, T::default())
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(dims.iter().product());
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Volume {
            dims,
            spacing: [DEFAULT_SPACING_UM; 3],
            data,
        }
    }

    pub fn with_spacing(mut self, spacing: [f32; 3]) -> Self {
        self.spacing = spacing;
        self
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.data[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: T) {
        let i = self.index(x, y, z);
        self.data[i] = v;
    }

    pub fn map<U: Voxel>(&self, f: impl Fn(T) -> U) -> Volume<U> {
        Volume {
            dims: self.dims,
            spacing: self.spacing,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Sub-box starting at `anchor` with extent `size`, which must lie
    /// inside the volume.
    pub fn crop(&self, anchor: [usize; 3], size: [usize; 3]) -> Result<Self> {
        for a in 0..3 {
            if anchor[a] + size[a] > self.dims[a] {
                return Err(Error::shape(format!(
                    "crop {anchor:?}+{size:?} leaves volume {:?}",
                    self.dims
                )));
            }
        }
        let mut data = Vec::with_capacity(size.iter().product());
        for z in 0..size[2] {
            for y in 0..size[1] {
                let start = self.index(anchor[0], anchor[1] + y, anchor[2] + z);
                data.extend_from_slice(&self.data[start..start + size[0]]);
            }
        }
        Ok(Volume {
            dims: size,
            spacing: self.spacing,
            data,
        })
    }

    /// Writes `src` into this volume at `anchor`.
    pub fn paste(&mut self, src: &Volume<T>, anchor: [usize; 3]) -> Result<()> {
        let size = src.dims;
        for a in 0..3 {
            if anchor[a] + size[a] > self.dims[a] {
                return Err(Error::shape(format!(
                    "paste {anchor:?}+{size:?} leaves volume {:?}",
                    self.dims
                )));
            }
        }
        for z in 0..size[2] {
            for y in 0..size[1] {
                let dst = self.index(anchor[0], anchor[1] + y, anchor[2] + z);
                let s = src.index(0, y, z);
                self.data[dst..dst + size[0]].copy_from_slice(&src.data[s..s + size[0]]);
            }
        }
        Ok(())
    }

    /// Grows the volume to `dims` by appending default-valued voxels on the
    /// high side of each axis.
    pub fn pad_high(&self, dims: [usize; 3]) -> Result<Self> {
        if (0..3).any(|a| dims[a] < self.dims[a]) {
            return Err(Error::shape(format!("cannot pad {:?} down to {dims:?}", self.dims)));
        }
        let mut out = Volume::zeros(dims).with_spacing(self.spacing);
        out.paste(self, [0, 0, 0])?;
        Ok(out)
    }
}

impl Volume<u8> {
    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }
}

impl Volume<f32> {
    /// A `(1, 1, z, y, x)` tensor over the same memory layout.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let [x, y, z] = self.dims;
        Tensor::from_vec(
            Shape::new(1, 1, z, y, x),
            self.data.iter().map(|&v| T::lit(v as f64)).collect(),
        )
        .expect("volume and tensor sizes agree")
    }
}

impl<T: Real> Tensor<T> {
    /// Item `n`, channel `c` as a volume.
    pub fn to_volume(&self, n: usize, c: usize) -> Volume<f32> {
        let s = self.shape();
        Volume {
            dims: [s.width, s.height, s.depth],
            spacing: [DEFAULT_SPACING_UM; 3],
            data: self.plane(n, c).iter().map(|v| v.as_f64() as f32).collect(),
        }
    }
}
