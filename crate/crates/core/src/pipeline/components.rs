//! 3D connected-component labeling and small-component removal.

use serde::{Deserialize, Serialize};

use crate::data::Mask;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Connectivity {
    /// Face neighbours.
    Six,
    /// Face and edge neighbours.
    Eighteen,
    /// Face, edge and corner neighbours.
    TwentySix,
}

impl Connectivity {
    pub fn from_count(n: usize) -> Result<Self> {
        match n {
            6 => Ok(Connectivity::Six),
            18 => Ok(Connectivity::Eighteen),
            26 => Ok(Connectivity::TwentySix),
            _ => Err(Error::invalid(format!("connectivity must be 6, 18 or 26, got {n}"))),
        }
    }

    pub fn count(self) -> usize {
        match self {
            Connectivity::Six => 6,
            Connectivity::Eighteen => 18,
            Connectivity::TwentySix => 26,
        }
    }

    /// All neighbour offsets `(dx, dy, dz)`.
    pub fn offsets(self) -> Vec<[isize; 3]> {
        let mut v = Vec::with_capacity(26);
        for dz in -1..=1isize {
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let nz = (dx != 0) as usize + (dy != 0) as usize + (dz != 0) as usize;
                    let keep = match self {
                        Connectivity::Six => nz == 1,
                        Connectivity::Eighteen => nz == 1 || nz == 2,
                        Connectivity::TwentySix => nz >= 1,
                    };
                    if keep {
                        v.push([dx, dy, dz]);
                    }
                }
            }
        }
        v
    }

    /// Offsets that precede the centre in x-fastest scan order.
    fn backward(self) -> Vec<[isize; 3]> {
        self.offsets()
            .into_iter()
            .filter(|&[dx, dy, dz]| (dz, dy, dx) < (0, 0, 0))
            .collect()
    }
}

/// Component labels: 0 is background, components are numbered from 1 in
/// order of their first voxel in scan order.
#[derive(Clone, Debug, PartialEq)]
pub struct Labels {
    pub dims: [usize; 3],
    pub labels: Vec<u32>,
    /// `sizes[k]` is the voxel count of label `k + 1`.
    pub sizes: Vec<usize>,
}

fn find(parent: &mut [u32], mut a: u32) -> u32 {
    while parent[a as usize] != a {
        let p = parent[a as usize];
        parent[a as usize] = parent[p as usize];
        a = p;
    }
    a
}

pub fn label_components(mask: &Mask, conn: Connectivity) -> Labels {
    let dims = mask.dims();
    let [nx, ny, nz] = dims;
    let back = conn.backward();
    let mut labels = vec![0u32; mask.len()];
    // parent[0] is unused so provisional labels start at 1
    let mut parent: Vec<u32> = vec![0];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = mask.index(x, y, z);
                if mask.data()[i] == 0 {
                    continue;
                }
                let mut mine = 0u32;
                for &[dx, dy, dz] in &back {
                    let (px, py, pz) = (x as isize + dx, y as isize + dy, z as isize + dz);
                    if px < 0 || py < 0 || pz < 0 || px as usize >= nx || py as usize >= ny {
                        continue;
                    }
                    let l = labels[mask.index(px as usize, py as usize, pz as usize)];
                    if l == 0 {
                        continue;
                    }
                    if mine == 0 {
                        mine = find(&mut parent, l);
                    } else {
                        let (a, b) = (find(&mut parent, mine), find(&mut parent, l));
                        if a != b {
                            let (lo, hi) = (a.min(b), a.max(b));
                            parent[hi as usize] = lo;
                            mine = lo;
                        }
                    }
                }
                if mine == 0 {
                    mine = parent.len() as u32;
                    parent.push(mine);
                }
                labels[i] = mine;
            }
        }
    }
    let mut final_id = vec![0u32; parent.len()];
    let mut sizes = Vec::new();
    for l in labels.iter_mut().filter(|l| **l != 0) {
        let root = find(&mut parent, *l) as usize;
        if final_id[root] == 0 {
            sizes.push(0);
            final_id[root] = sizes.len() as u32;
        }
        *l = final_id[root];
        sizes[*l as usize - 1] += 1;
    }
    Labels { dims, labels, sizes }
}

/// Component statistics before and after filtering.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentCensus {
    pub components_before: usize,
    pub components_after: usize,
    pub voxels_before: usize,
    pub voxels_after: usize,
}

/// Zeroes every component with fewer than `min_voxels` voxels.
pub fn remove_small_components(mask: &Mask, min_voxels: usize, conn: Connectivity) -> (Mask, ComponentCensus) {
    let labels = label_components(mask, conn);
    let keep: Vec<bool> = labels.sizes.iter().map(|&s| s >= min_voxels).collect();
    let mut out = Mask::zeros(mask.dims()).with_spacing(mask.spacing());
    for (o, &l) in out.data_mut().iter_mut().zip(&labels.labels) {
        if l != 0 && keep[l as usize - 1] {
            *o = 1;
        }
    }
    let census = ComponentCensus {
        components_before: labels.sizes.len(),
        components_after: keep.iter().filter(|&&k| k).count(),
        voxels_before: labels.sizes.iter().sum(),
        voxels_after: labels.sizes.iter().zip(&keep).filter(|(_, &k)| k).map(|(s, _)| s).sum(),
    };
    (out, census)
}
