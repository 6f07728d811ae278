//! Slow, obviously-correct reference implementations shared by the
//! integration tests.

#![allow(dead_code)]

pub mod grad;

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use volseg::data::{Mask, Volume};
use volseg::tensor::{DenseKernel3D, Shape, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: Shape, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn at(s: Shape, n: usize, c: usize, z: usize, y: usize, x: usize) -> usize {
    (((n * s.channels + c) * s.depth + z) * s.height + y) * s.width + x
}

/// Direct six-loop cross-correlation with zero padding.
pub fn naive_conv(x: &Tensor<f64>, k: &DenseKernel3D<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let s = x.shape();
    let ks = k.size;
    let out = |n: usize| (n + 2 * pad - ks) / stride + 1;
    let os = Shape::new(s.batch, k.out_channels, out(s.depth), out(s.height), out(s.width));
    let mut y = Tensor::zeros(os);
    for n in 0..s.batch {
        for o in 0..k.out_channels {
            for oz in 0..os.depth {
                for oy in 0..os.height {
                    for ox in 0..os.width {
                        let mut acc = k.bias.as_ref().map_or(0.0, |b| b[o]);
                        for i in 0..s.channels {
                            for kz in 0..ks {
                                for ky in 0..ks {
                                    for kx in 0..ks {
                                        let z = (oz * stride + kz) as isize - pad as isize;
                                        let yy = (oy * stride + ky) as isize - pad as isize;
                                        let xx = (ox * stride + kx) as isize - pad as isize;
                                        if z < 0 || yy < 0 || xx < 0 {
                                            continue;
                                        }
                                        let (z, yy, xx) = (z as usize, yy as usize, xx as usize);
                                        if z >= s.depth || yy >= s.height || xx >= s.width {
                                            continue;
                                        }
                                        acc += k.weights[k.index(o, i, kz, ky, kx)] * x.data()[at(s, n, i, z, yy, xx)];
                                    }
                                }
                            }
                        }
                        y.data_mut()[at(os, n, o, oz, oy, ox)] = acc;
                    }
                }
            }
        }
    }
    y
}

/// Stride-2, size-2 transposed convolution by scattering every input voxel
/// into its 2³ output block.
pub fn naive_transpose(x: &Tensor<f64>, k: &DenseKernel3D<f64>) -> Tensor<f64> {
    let s = x.shape();
    let (cin, cout) = (k.in_channels, k.out_channels);
    assert_eq!(s.channels, cin);
    let os = Shape::new(s.batch, cout, 2 * s.depth, 2 * s.height, 2 * s.width);
    let mut y = Tensor::zeros(os);
    for n in 0..s.batch {
        for o in 0..cout {
            let b = k.bias.as_ref().map_or(0.0, |b| b[o]);
            for v in 0..os.depth * os.height * os.width {
                y.data_mut()[(n * cout + o) * os.depth * os.height * os.width + v] = b;
            }
        }
        for i in 0..cin {
            for z in 0..s.depth {
                for yy in 0..s.height {
                    for xx in 0..s.width {
                        let v = x.data()[at(s, n, i, z, yy, xx)];
                        for o in 0..cout {
                            for kz in 0..2 {
                                for ky in 0..2 {
                                    for kx in 0..2 {
                                        let w = k.weights[k.index(o, i, kz, ky, kx)];
                                        y.data_mut()[at(os, n, o, 2 * z + kz, 2 * yy + ky, 2 * xx + kx)] += w * v;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

pub fn neighbour_offsets(conn: usize) -> Vec<[isize; 3]> {
    let mut v = Vec::new();
    for dz in -1isize..=1 {
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let d2 = dx * dx + dy * dy + dz * dz;
                let keep = match conn {
                    6 => d2 == 1,
                    18 => d2 == 1 || d2 == 2,
                    26 => d2 >= 1,
                    _ => panic!("connectivity {conn}"),
                };
                if keep {
                    v.push([dx, dy, dz]);
                }
            }
        }
    }
    v
}

/// Breadth-first flood fill from every unvisited foreground voxel; returns
/// the component sizes and per-voxel component ids (`usize::MAX` for
/// background).
pub fn flood_fill(mask: &Mask, conn: usize) -> (Vec<usize>, Vec<usize>) {
    let [nx, ny, nz] = mask.dims();
    let offsets = neighbour_offsets(conn);
    let mut id = vec![usize::MAX; mask.len()];
    let mut sizes = Vec::new();
    for start in 0..mask.len() {
        if mask.data()[start] == 0 || id[start] != usize::MAX {
            continue;
        }
        let label = sizes.len();
        let mut size = 0;
        let mut queue = VecDeque::from([start]);
        id[start] = label;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (x, y, z) = ((i % nx) as isize, ((i / nx) % ny) as isize, (i / (nx * ny)) as isize);
            for [dx, dy, dz] in &offsets {
                let (a, b, c) = (x + dx, y + dy, z + dz);
                if a < 0 || b < 0 || c < 0 || a >= nx as isize || b >= ny as isize || c >= nz as isize {
                    continue;
                }
                let j = (c as usize * ny + b as usize) * nx + a as usize;
                if mask.data()[j] != 0 && id[j] == usize::MAX {
                    id[j] = label;
                    queue.push_back(j);
                }
            }
        }
        sizes.push(size);
    }
    (sizes, id)
}

pub fn flood_fill_filter(mask: &Mask, min: usize, conn: usize) -> Mask {
    let (sizes, id) = flood_fill(mask, conn);
    let data = id
        .iter()
        .map(|&l| (l != usize::MAX && sizes[l] >= min) as u8)
        .collect();
    Volume::new(mask.dims(), data).unwrap()
}

/// Mask voxels inside the cube at `anchor`, counted directly.
pub fn cube_count(mask: &Mask, anchor: [usize; 3], side: usize) -> usize {
    let mut n = 0;
    for z in anchor[2]..anchor[2] + side {
        for y in anchor[1]..anchor[1] + side {
            for x in anchor[0]..anchor[0] + side {
                n += (mask.get(x, y, z) != 0) as usize;
            }
        }
    }
    n
}

/// A mask of random blobs: a few random boxes plus sprinkled noise.
pub fn random_blob_mask(dims: [usize; 3], rng: &mut impl Rng) -> Mask {
    let mut m = Mask::zeros(dims);
    for _ in 0..rng.random_range(1..5) {
        let size: [usize; 3] = [0, 1, 2].map(|a| rng.random_range(1..=dims[a].min(8)));
        let at: [usize; 3] = [0, 1, 2].map(|a| rng.random_range(0..=dims[a] - size[a]));
        for z in at[2]..at[2] + size[2] {
            for y in at[1]..at[1] + size[1] {
                for x in at[0]..at[0] + size[0] {
                    m.set(x, y, z, 1);
                }
            }
        }
    }
    let noise = rng.random_range(0.0..0.05);
    for v in m.data_mut() {
        if rng.random_bool(noise) {
            *v = 1;
        }
    }
    m
}

/// Exhaustive scan with exact integer comparisons against 99% and 80%.
pub fn brute_force_windows(mask: &Mask, window: usize, stride_pos: usize, stride_neg: usize) -> Vec<([usize; 3], bool)> {
    let total = mask.count_nonzero();
    let dims = mask.dims();
    let mut out = Vec::new();
    for (stride, positive) in [(stride_pos, true), (stride_neg, false)] {
        let axis = |a: usize| (0..).map(move |i| i * stride).take_while(move |&s| s + window <= dims[a]);
        for z in axis(2) {
            for y in axis(1) {
                for x in axis(0) {
                    let inside = cube_count(mask, [x, y, z], window);
                    let keep = if positive {
                        100 * inside > 99 * total
                    } else {
                        100 * inside < 80 * total
                    };
                    if keep {
                        out.push(([x, y, z], positive));
                    }
                }
            }
        }
    }
    out
}

pub fn brute_force_subvolumes(mask: &Mask, side: usize) -> Vec<[usize; 3]> {
    let total = mask.count_nonzero();
    let [nx, ny, nz] = mask.dims();
    let mut out = Vec::new();
    for z in 0..=nz - side {
        for y in 0..=ny - side {
            for x in 0..=nx - side {
                if 100 * cube_count(mask, [x, y, z], side) >= 97 * total {
                    out.push([x, y, z]);
                }
            }
        }
    }
    out
}

pub fn compact_mask(dims: [usize; 3], r: &mut impl Rng) -> Mask {
    let mut m = Mask::zeros(dims);
    let size: [usize; 3] = [0, 1, 2].map(|_| r.random_range(2..7));
    let at: [usize; 3] = [0, 1, 2].map(|a| r.random_range(0..=dims[a] - size[a]));
    for z in at[2]..at[2] + size[2] {
        for y in at[1]..at[1] + size[1] {
            for x in at[0]..at[0] + size[0] {
                if r.random_bool(0.9) {
                    m.set(x, y, z, 1);
                }
            }
        }
    }
    for _ in 0..r.random_range(0..4) {
        let p: [usize; 3] = [0, 1, 2].map(|a| r.random_range(0..dims[a]));
        m.set(p[0], p[1], p[2], 1);
    }
    if m.count_nonzero() == 0 {
        m.set(at[0], at[1], at[2], 1);
    }
    m
}
