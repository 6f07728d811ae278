//! Synthetic stand-in for ultrasound volumes with a single dark cavity.
//!
//! A bright speckled ellipsoidal body sits on a dark background. The cavity
//! is a union of 2-4 overlapping dark ellipsoids inside the body. Two
//! acquisition artifacts are mimicked: a missing boundary (a cap of the body
//! drops to background) and motion (a slab of slices shifted sideways, in
//! both image and mask).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::volume::{Mask, Volume};
use crate::error::{Error, Result};
use crate::pipeline::components::{label_components, Connectivity};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    /// Inclusive range for every axis extent.
    pub dims_min: [usize; 3],
    pub dims_max: [usize; 3],
    /// Body semi-axes as a fraction of the half extent.
    pub body_fill: (f64, f64),
    pub blob_count: (usize, usize),
    /// Target cavity volume fraction, drawn log-uniformly.
    pub target_fraction: (f64, f64),
    /// Accepted cavity volume fraction.
    pub fraction_band: (f64, f64),
    pub background: f32,
    pub tissue: f32,
    pub cavity: f32,
    /// Speckle is Gamma(looks, 1/looks): unit mean, `looks = 1` is
    /// exponential.
    pub speckle_looks: f64,
    pub missing_boundary_prob: f64,
    /// Cap depth as a fraction of the body radius along the cap direction.
    pub missing_boundary_depth: f64,
    pub motion_prob: f64,
    pub motion_max_shift: usize,
    /// Slab thickness range as a fraction of the z extent.
    pub motion_slab: (f64, f64),
    pub max_attempts: usize,
}

impl PhantomConfig {
    /// Extents drawn from the range of the real scans (81 to 362 voxels).
    pub fn full() -> Self {
        PhantomConfig {
            dims_min: [150, 161, 81],
            dims_max: [300, 281, 362],
            body_fill: (0.75, 0.9),
            blob_count: (2, 4),
            target_fraction: (0.002, 0.005),
            fraction_band: (0.001, 0.01),
            background: 0.15,
            tissue: 0.55,
            cavity: 0.08,
            speckle_looks: 1.0,
            missing_boundary_prob: 0.3,
            missing_boundary_depth: 0.2,
            motion_prob: 0.3,
            motion_max_shift: 3,
            motion_slab: (0.1, 0.25),
            max_attempts: 64,
        }
    }

    pub fn desk() -> Self {
        PhantomConfig {
            dims_min: [88, 88, 88],
            dims_max: [104, 104, 104],
            motion_max_shift: 2,
            ..Self::full()
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Generation(m.to_string()));
        if (0..3).any(|a| self.dims_min[a] == 0 || self.dims_min[a] > self.dims_max[a]) {
            return bad("dims range is empty");
        }
        if !(self.body_fill.0 > 0.0 && self.body_fill.0 <= self.body_fill.1 && self.body_fill.1 < 1.0) {
            return bad("body fill must lie in (0, 1)");
        }
        if self.blob_count.0 == 0 || self.blob_count.0 > self.blob_count.1 {
            return bad("blob count range is empty");
        }
        if !(self.target_fraction.0 > 0.0 && self.target_fraction.0 <= self.target_fraction.1) {
            return bad("target fraction range is empty");
        }
        if self.speckle_looks.is_nan() || self.speckle_looks <= 0.0 {
            return bad("speckle looks must be positive");
        }
        if self.max_attempts == 0 {
            return bad("at least one attempt is required");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Ellipsoid {
    centre: [f64; 3],
    semi: [f64; 3],
}

impl Ellipsoid {
    #[inline]
    fn level(&self, p: [f64; 3]) -> f64 {
        (0..3).map(|a| ((p[a] - self.centre[a]) / self.semi[a]).powi(2)).sum()
    }
}

fn unit_vector(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v = [0; 3].map(|_| rng.random_range(-1.0..1.0f64));
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 && n <= 1.0 {
            return v.map(|x| x / n);
        }
    }
}

struct Draft {
    dims: [usize; 3],
    body: Ellipsoid,
    mean: Volume<f32>,
    mask: Mask,
}

fn draft(cfg: &PhantomConfig, rng: &mut ChaCha8Rng) -> Option<Draft> {
    let dims = [0, 1, 2].map(|a| rng.random_range(cfg.dims_min[a]..=cfg.dims_max[a]));
    let half = dims.map(|d| d as f64 / 2.0);
    let body = Ellipsoid {
        centre: [0, 1, 2].map(|a| half[a] - 0.5 + rng.random_range(-0.04..0.04) * dims[a] as f64),
        semi: [0, 1, 2].map(|a| half[a] * rng.random_range(cfg.body_fill.0..=cfg.body_fill.1)),
    };

    let n = dims.iter().product::<usize>() as f64;
    let (lo, hi) = cfg.target_fraction;
    let target = n * (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp();
    let count = rng.random_range(cfg.blob_count.0..=cfg.blob_count.1);
    let weights: Vec<f64> = (0..count).map(|_| rng.random_range(0.5..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let mut blobs: Vec<Ellipsoid> = Vec::with_capacity(count);
    for w in weights {
        let vol = target * w / total;
        let aspect = [0; 3].map(|_| rng.random_range(0.7..1.4f64));
        let norm = aspect.iter().product::<f64>().cbrt();
        let r = (vol * 3.0 / (4.0 * std::f64::consts::PI)).cbrt();
        let semi = aspect.map(|s| (r * s / norm).max(1.0));
        let centre = match blobs.len() {
            0 => {
                let u = unit_vector(rng);
                let t = rng.random_range(0.0..0.3);
                [0, 1, 2].map(|a| body.centre[a] + u[a] * t * body.semi[a])
            }
            k => {
                let parent = blobs[rng.random_range(0..k)];
                let u = unit_vector(rng);
                [0, 1, 2].map(|a| parent.centre[a] + u[a] * 0.7 * parent.semi[a])
            }
        };
        blobs.push(Ellipsoid { centre, semi });
    }

    let mut mask = Mask::zeros(dims);
    let mut mean = Volume::filled(dims, cfg.background);
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let p = [x as f64, y as f64, z as f64];
                if body.level(p) <= 1.0 {
                    let cavity = blobs.iter().any(|b| b.level(p) <= 1.0);
                    if cavity && body.level(p) > 0.7 {
                        return None;
                    }
                    mean.set(x, y, z, if cavity { cfg.cavity } else { cfg.tissue });
                    mask.set(x, y, z, cavity as u8);
                } else if blobs.iter().any(|b| b.level(p) <= 1.0) {
                    return None;
                }
            }
        }
    }
    Some(Draft { dims, body, mean, mask })
}

/// Drops a cap of the body to background, avoiding the cavity.
fn missing_boundary(cfg: &PhantomConfig, d: &mut Draft, rng: &mut ChaCha8Rng) {
    let u = unit_vector(rng);
    let b = d.body;
    let cut = 1.0 - cfg.missing_boundary_depth;
    for z in 0..d.dims[2] {
        for y in 0..d.dims[1] {
            for x in 0..d.dims[0] {
                let p = [x as f64, y as f64, z as f64];
                let proj: f64 = (0..3).map(|a| (p[a] - b.centre[a]) / b.semi[a] * u[a]).sum();
                if proj > cut && d.mask.get(x, y, z) == 0 && b.level(p) <= 1.0 {
                    d.mean.set(x, y, z, cfg.background);
                }
            }
        }
    }
}

/// Shifts a slab of z-slices along x or y, image and mask alike.
fn motion(cfg: &PhantomConfig, d: &mut Draft, rng: &mut ChaCha8Rng) {
    let [nx, ny, nz] = d.dims;
    let thick = ((rng.random_range(cfg.motion_slab.0..=cfg.motion_slab.1) * nz as f64).round() as usize).clamp(1, nz);
    let z0 = rng.random_range(0..=nz - thick);
    let shift = rng.random_range(1..=cfg.motion_max_shift.max(1)) as isize * if rng.random::<bool>() { 1 } else { -1 };
    let along_x = rng.random::<bool>();
    let bg = cfg.background;
    for z in z0..z0 + thick {
        let mean_src = d.mean.crop([0, 0, z], [nx, ny, 1]).expect("slice");
        let mask_src = d.mask.crop([0, 0, z], [nx, ny, 1]).expect("slice");
        for y in 0..ny {
            for x in 0..nx {
                let (sx, sy) = if along_x {
                    (x as isize - shift, y as isize)
                } else {
                    (x as isize, y as isize - shift)
                };
                let inside = sx >= 0 && sy >= 0 && (sx as usize) < nx && (sy as usize) < ny;
                let (m, k) = if inside {
                    (mean_src.get(sx as usize, sy as usize, 0), mask_src.get(sx as usize, sy as usize, 0))
                } else {
                    (bg, 0)
                };
                d.mean.set(x, y, z, m);
                d.mask.set(x, y, z, k);
            }
        }
    }
}

/// Intensity volume and exact cavity mask; a pure function of
/// `(cfg, seed)`.
pub fn generate_phantom(cfg: &PhantomConfig, seed: u64) -> Result<(Volume<f32>, Mask)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let speckle = Gamma::new(cfg.speckle_looks, 1.0 / cfg.speckle_looks).map_err(|e| Error::Generation(e.to_string()))?;
    for _ in 0..cfg.max_attempts {
        let Some(mut d) = draft(cfg, &mut rng) else { continue };
        if rng.random_bool(cfg.missing_boundary_prob.clamp(0.0, 1.0)) {
            missing_boundary(cfg, &mut d, &mut rng);
        }
        if rng.random_bool(cfg.motion_prob.clamp(0.0, 1.0)) {
            motion(cfg, &mut d, &mut rng);
        }
        let fraction = d.mask.count_nonzero() as f64 / d.mask.len() as f64;
        if fraction < cfg.fraction_band.0 || fraction > cfg.fraction_band.1 {
            continue;
        }
        if label_components(&d.mask, Connectivity::TwentySix).sizes.len() != 1 {
            continue;
        }
        let mut image = d.mean;
        for v in image.data_mut() {
            *v *= speckle.sample(&mut rng) as f32;
        }
        return Ok((image, d.mask));
    }
    Err(Error::Generation(format!(
        "no valid phantom after {} attempts",
        cfg.max_attempts
    )))
}
