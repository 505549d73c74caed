//! Final shape recovery from a fused oriented cloud: point and normal losses,
//! grid Poisson reconstruction and normal-driven vertex deformation.

mod deform;
mod poisson;

pub use self::deform::{deform_vertices, DeformConfig, DeformOutput};
pub use self::poisson::{poisson_reconstruct, PoissonConfig};

use rayon::prelude::*;

use crate::geom::kdtree::PointIndex;
use crate::geom::{AccelIndex, Camera, MaskBuffer, Vec3};
use crate::parallel::{par_sum, tree_sum};
use crate::{Error, Result};

pub const LAMBDA_POSITION: f64 = 200.0;
pub const LAMBDA_NORMAL: f64 = 5.0;

/// Weights of the point and normal terms.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub position: f64,
    pub normal: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            position: LAMBDA_POSITION,
            normal: LAMBDA_NORMAL,
        }
    }
}

fn check_cloud(points: &[Vec3], normals: &[Vec3]) -> Result<()> {
    if points.len() != normals.len() {
        return Err(Error::Argument(format!(
            "{} points but {} normals",
            points.len(),
            normals.len()
        )));
    }
    Ok(())
}

/// Closest point on the ground-truth surface and the interpolated normal there.
fn nearest_target(gt: &AccelIndex, p: &Vec3) -> (Vec3, Vec3) {
    let c = gt.closest_point(p).expect("non-empty ground truth");
    (c.point, gt.mesh().interpolated_normal(c.face, c.u, c.v))
}

fn term(w: &LossWeights, p: &Vec3, n: &Vec3, tp: &Vec3, tn: &Vec3) -> f64 {
    w.position * (p - tp).norm_squared() + w.normal * (n - tn).norm_squared()
}

/// `Σ λ₁‖p − p̂‖² + λ₂‖N − N̂‖²` against the closest ground-truth surface points.
pub fn loss_nearest(points: &[Vec3], normals: &[Vec3], gt: &AccelIndex, w: &LossWeights) -> Result<f64> {
    check_cloud(points, normals)?;
    if gt.mesh().is_empty() {
        return Err(Error::EmptySurface("ground-truth mesh has no triangles".into()));
    }
    Ok(par_sum(points.len(), 256, |i| {
        let (tp, tn) = nearest_target(gt, &points[i]);
        term(w, &points[i], &normals[i], &tp, &tn)
    }))
}

/// Ground-truth first-surface positions and normals seen by one camera.
#[derive(Clone, Debug)]
pub struct SurfaceMaps {
    pub camera: Camera,
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub valid: MaskBuffer,
}

impl SurfaceMaps {
    /// Casts one ray per pixel center against `gt`.
    pub fn trace(gt: &AccelIndex, camera: &Camera) -> Self {
        let (w, h) = (camera.width, camera.height);
        let hits: Vec<_> = (0..w * h)
            .into_par_iter()
            .map(|idx| gt.intersect(&camera.pixel_ray(idx % w, idx / w), 0.0))
            .collect();
        let mut valid = MaskBuffer::new(w, h);
        let mut points = vec![Vec3::zeros(); w * h];
        let mut normals = vec![Vec3::zeros(); w * h];
        for (idx, hit) in hits.into_iter().enumerate() {
            if let Some(hit) = hit {
                valid.data[idx] = true;
                points[idx] = hit.point;
                normals[idx] = hit.normal;
            }
        }
        SurfaceMaps {
            camera: camera.clone(),
            points,
            normals,
            valid,
        }
    }

    /// Bilinear position and normal at the projection of `p`, over valid
    /// texels only.
    pub fn sample(&self, p: &Vec3) -> Option<(Vec3, Vec3)> {
        let ((u, v), _) = self.camera.project(p)?;
        let (w, h) = (self.camera.width as i64, self.camera.height as i64);
        let (x, y) = (u - 0.5, v - 0.5);
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let mut pos = Vec3::zeros();
        let mut nrm = Vec3::zeros();
        let mut total = 0.0;
        for (dx, dy, wt) in [
            (0, 0, (1.0 - fx) * (1.0 - fy)),
            (1, 0, fx * (1.0 - fy)),
            (0, 1, (1.0 - fx) * fy),
            (1, 1, fx * fy),
        ] {
            let i = (x0 as i64 + dx).clamp(0, w - 1);
            let j = (y0 as i64 + dy).clamp(0, h - 1);
            let idx = (j * w + i) as usize;
            if wt <= 0.0 || !self.valid.data[idx] {
                continue;
            }
            pos += wt * self.points[idx];
            nrm += wt * self.normals[idx];
            total += wt;
        }
        if total <= 0.0 || nrm.norm() == 0.0 {
            return None;
        }
        Some((pos / total, nrm.normalize()))
    }
}

/// View-dependent loss: points with a chosen view (1-based) are compared to
/// that view's ground-truth first surface at their projection; the rest, and
/// points projecting onto no valid texel, to their closest surface point.
pub fn loss_view(
    points: &[Vec3],
    normals: &[Vec3],
    views: &[usize],
    maps: &[SurfaceMaps],
    gt: &AccelIndex,
    w: &LossWeights,
) -> Result<f64> {
    check_cloud(points, normals)?;
    if views.len() != points.len() {
        return Err(Error::Argument("one view id per point is required".into()));
    }
    if let Some(&v) = views.iter().find(|&&v| v > maps.len()) {
        return Err(Error::Argument(format!("view id {v} exceeds the {} views", maps.len())));
    }
    Ok(par_sum(points.len(), 256, |i| {
        let p = &points[i];
        let target = match views[i] {
            0 => None,
            v => maps[v - 1].sample(p),
        };
        let (tp, tn) = target.unwrap_or_else(|| nearest_target(gt, p));
        term(w, p, &normals[i], &tp, &tn)
    }))
}

/// One direction of the Chamfer loss: unsquared distances to the nearest
/// point of `b` and to that point's normal.
fn chamfer_half(a: &[Vec3], an: &[Vec3], b: &[Vec3], bn: &[Vec3], w: &LossWeights) -> f64 {
    let index = PointIndex::new(b);
    let terms: Vec<f64> = a
        .par_iter()
        .zip(an.par_iter())
        .map(|(p, n)| {
            let (j, d2) = index.nearest(p);
            0.5 * w.position * d2.sqrt() + 0.5 * w.normal * (n - bn[j]).norm()
        })
        .collect();
    tree_sum(&terms)
}

/// Symmetric Chamfer loss with unsquared point and normal distances.
pub fn loss_chamfer(a: &[Vec3], an: &[Vec3], b: &[Vec3], bn: &[Vec3], w: &LossWeights) -> Result<f64> {
    check_cloud(a, an)?;
    check_cloud(b, bn)?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySurface("Chamfer loss needs two non-empty clouds".into()));
    }
    Ok(chamfer_half(a, an, b, bn, w) + chamfer_half(b, bn, a, an, w))
}
