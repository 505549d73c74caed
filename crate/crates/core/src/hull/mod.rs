//! Visual-hull carving, surface extraction and hull normal maps.

mod mc;
mod subdiv;
mod trace;

pub use self::mc::{extract_isosurface, marching_cubes, ScalarGrid};
pub use self::subdiv::loop_subdivide;
pub use self::trace::{hull_normal_maps, trace_normal_maps};

use rayon::prelude::*;

use crate::geom::{Aabb, Camera, MaskBuffer, Vec3};
use crate::{Error, Result};

pub const DEFAULT_RESOLUTION: usize = 128;
const FIT_RESOLUTION: usize = 64;
const FIT_MARGIN_VOXELS: f64 = 2.0;

/// Boolean voxel grid over an axis-aligned box. Voxel `(i, j, k)` has its
/// center at `min + (i + ½, j + ½, k + ½) · voxel_size`.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyVolume {
    pub resolution: usize,
    pub bounds: Aabb,
    pub occupancy: Vec<bool>,
}

impl OccupancyVolume {
    pub fn voxel_size(&self) -> Vec3 {
        self.bounds.extent() / self.resolution as f64
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.resolution + j) * self.resolution + i
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.occupancy[self.index(i, j, k)]
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        voxel_center(&self.bounds, self.resolution, i, j, k)
    }

    pub fn count(&self) -> usize {
        self.occupancy.iter().filter(|&&o| o).count()
    }

    /// Occupied voxel count times voxel volume.
    pub fn volume(&self) -> f64 {
        let h = self.voxel_size();
        self.count() as f64 * h.x * h.y * h.z
    }

    /// Whether the voxel containing `p` is occupied.
    pub fn occupied_at(&self, p: &Vec3) -> bool {
        match self.voxel_of(p) {
            Some([i, j, k]) => self.get(i, j, k),
            None => false,
        }
    }

    /// Whether any point of the box `p ± tol` lies in an occupied voxel.
    pub fn contains_within(&self, p: &Vec3, tol: f64) -> bool {
        let lo = self.voxel_of_clamped(&(p - Vec3::repeat(tol)));
        let hi = self.voxel_of_clamped(&(p + Vec3::repeat(tol)));
        let (Some(lo), Some(hi)) = (lo, hi) else {
            return false;
        };
        for k in lo[2]..=hi[2] {
            for j in lo[1]..=hi[1] {
                for i in lo[0]..=hi[0] {
                    if self.get(i, j, k) {
                        return true;
                    }
                }
            }
        }
        false
    }

    /// Bounding box of the occupied voxels (their full extent).
    pub fn occupied_bounds(&self) -> Aabb {
        let h = self.voxel_size();
        let mut b = Aabb::empty();
        for k in 0..self.resolution {
            for j in 0..self.resolution {
                for i in 0..self.resolution {
                    if self.get(i, j, k) {
                        let c = self.voxel_center(i, j, k);
                        b.grow(&(c - 0.5 * h));
                        b.grow(&(c + 0.5 * h));
                    }
                }
            }
        }
        b
    }

    fn voxel_of(&self, p: &Vec3) -> Option<[usize; 3]> {
        let r = (p - self.bounds.min).component_div(&self.voxel_size());
        let n = self.resolution as f64;
        if r.iter().any(|&c| !(0.0..n).contains(&c)) {
            return None;
        }
        Some([r.x as usize, r.y as usize, r.z as usize])
    }

    fn voxel_of_clamped(&self, p: &Vec3) -> Option<[usize; 3]> {
        let r = (p - self.bounds.min).component_div(&self.voxel_size());
        if r.iter().any(|c| !c.is_finite()) {
            return None;
        }
        let m = (self.resolution - 1) as f64;
        Some([0, 1, 2].map(|a| r[a].floor().clamp(0.0, m) as usize))
    }
}

fn voxel_center(bounds: &Aabb, res: usize, i: usize, j: usize, k: usize) -> Vec3 {
    let h = bounds.extent() / res as f64;
    bounds.min + Vec3::new((i as f64 + 0.5) * h.x, (j as f64 + 0.5) * h.y, (k as f64 + 0.5) * h.z)
}

/// Silhouette test for one point: inside the mask of every view that sees it
/// in frame, and in frame in at least one view. `strict` also rejects points
/// any view sees out of frame.
fn inside_all(p: &Vec3, masks: &[MaskBuffer], cameras: &[Camera], strict: bool) -> bool {
    let mut seen = false;
    for (m, c) in masks.iter().zip(cameras) {
        match c.project(p) {
            Some(((u, v), _)) => {
                seen = true;
                if !m.get(u as usize, v as usize) {
                    return false;
                }
            }
            None if strict => return false,
            None => {}
        }
    }
    seen
}

fn carve_grid(masks: &[MaskBuffer], cameras: &[Camera], res: usize, bounds: &Aabb, strict: bool) -> OccupancyVolume {
    let occupancy = (0..res * res * res)
        .into_par_iter()
        .map(|idx| {
            let (i, j, k) = (idx % res, (idx / res) % res, idx / (res * res));
            inside_all(&voxel_center(bounds, res, i, j, k), masks, cameras, strict)
        })
        .collect();
    OccupancyVolume {
        resolution: res,
        bounds: *bounds,
        occupancy,
    }
}

/// Carves a visual hull from per-view silhouettes. With `bounds = None` the
/// box is fitted from coarse back-projections, which needs two or more views.
pub fn carve(
    masks: &[MaskBuffer],
    cameras: &[Camera],
    resolution: usize,
    bounds: Option<Aabb>,
) -> Result<OccupancyVolume> {
    if masks.is_empty() || masks.len() != cameras.len() {
        return Err(Error::Argument(format!(
            "carve needs one mask per camera (got {} masks, {} cameras)",
            masks.len(),
            cameras.len()
        )));
    }
    if resolution < 16 {
        return Err(Error::Argument(format!("hull resolution must be at least 16, got {resolution}")));
    }
    for (v, (m, c)) in masks.iter().zip(cameras).enumerate() {
        if (m.width, m.height) != (c.width, c.height) {
            return Err(Error::Argument(format!("view {v}: mask size differs from camera size")));
        }
    }
    let bounds = match bounds {
        Some(b) => {
            if b.is_empty() || b.extent().iter().any(|&e| e <= 0.0) {
                return Err(Error::Argument("carve bounds must have positive extent".into()));
            }
            b
        }
        None => fit_bounds(masks, cameras)?,
    };
    let vol = carve_grid(masks, cameras, resolution, &bounds, false);
    if vol.count() == 0 {
        return Err(Error::EmptyHull);
    }
    Ok(vol)
}

/// Cube around the coarse intersection of all silhouette cones, refined once,
/// with a margin of two coarse voxels. Points must be in frame in every view;
/// if nothing is, the lenient out-of-frame rule is used instead.
pub fn fit_bounds(masks: &[MaskBuffer], cameras: &[Camera]) -> Result<Aabb> {
    if cameras.len() < 2 {
        return Err(Error::Argument("fitting hull bounds needs at least 2 views".into()));
    }
    let start = initial_box(cameras);
    let strict = carve_grid(masks, cameras, FIT_RESOLUTION, &start, true).count() > 0;
    let mut b = start;
    for _ in 0..2 {
        let vol = carve_grid(masks, cameras, FIT_RESOLUTION, &b, strict);
        if vol.count() == 0 {
            return Err(Error::EmptyHull);
        }
        let occ = vol.occupied_bounds();
        let margin = FIT_MARGIN_VOXELS * vol.voxel_size().max();
        let half = 0.5 * occ.extent().max() + margin;
        let c = occ.center();
        b = Aabb {
            min: c - Vec3::repeat(half),
            max: c + Vec3::repeat(half),
        };
    }
    Ok(b)
}

/// Cube centered on the point nearest to all optical axes, reaching every camera.
fn initial_box(cameras: &[Camera]) -> Aabb {
    let mut a = crate::Mat3::zeros();
    let mut rhs = Vec3::zeros();
    for c in cameras {
        let d = c.forward();
        let p = crate::Mat3::identity() - d * d.transpose();
        a += p;
        rhs += p * c.center();
    }
    let mean = cameras.iter().map(|c| c.center()).sum::<Vec3>() / cameras.len() as f64;
    let center = a
        .try_inverse()
        .filter(|_| a.determinant().abs() > 1e-9 * cameras.len() as f64)
        .map(|inv| inv * rhs)
        .unwrap_or(mean);
    let half = cameras
        .iter()
        .map(|c| (c.center() - center).amax())
        .fold(0.0, f64::max)
        .max(1e-6);
    Aabb {
        min: center - Vec3::repeat(half),
        max: center + Vec3::repeat(half),
    }
}
