//! Mapping per-view normal predictions onto points sampled from the hull.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geom::io::{load_ply, write_ply, PlyColumn, PlyFormat};
use crate::geom::{AccelIndex, Camera, EnvironmentMap, ImageBuffer, MaskBuffer, Ray, TriangleMesh, Vec3};
use crate::optics::{error_map, render_layer, NormalMapPair};
use crate::{Error, Result};

/// Initial error feature, above any achievable luminance error.
pub const ERROR_SENTINEL: f64 = 2.0;

/// Hull samples with fused features. `view` is 1-based; 0 means no view.
#[derive(Clone, Debug, PartialEq)]
pub struct OrientedPointCloud {
    pub points: Vec<Vec3>,
    /// Mesh normals at the samples.
    pub hull_normals: Vec<Vec3>,
    /// Fused first-surface normals.
    pub normals: Vec<Vec3>,
    pub err: Vec<f64>,
    pub tir: Vec<f64>,
    pub cos: Vec<f64>,
    pub view: Vec<usize>,
}

impl OrientedPointCloud {
    /// Points with their normals and initial features.
    pub fn new(points: Vec<Vec3>, normals: Vec<Vec3>) -> Result<Self> {
        if points.len() != normals.len() {
            return Err(Error::Argument("point and normal counts differ".into()));
        }
        let n = points.len();
        Ok(OrientedPointCloud {
            points,
            hull_normals: normals.clone(),
            normals,
            err: vec![ERROR_SENTINEL; n],
            tir: vec![1.0; n],
            cos: vec![0.0; n],
            view: vec![0; n],
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn set(&mut self, i: usize, f: &Features, view: usize) {
        self.normals[i] = f.normal;
        self.err[i] = f.err;
        self.tir[i] = f.tir;
        self.cos[i] = f.cos;
        self.view[i] = view;
    }

    pub fn save_ply(&self, path: &Path) -> Result<()> {
        let col = |name: &'static str, values: Vec<f64>| PlyColumn {
            name,
            ty: "float",
            values,
        };
        let p = &self.points;
        let n = &self.normals;
        let columns = vec![
            PlyColumn {
                name: "x",
                ty: "double",
                values: p.iter().map(|v| v.x).collect(),
            },
            PlyColumn {
                name: "y",
                ty: "double",
                values: p.iter().map(|v| v.y).collect(),
            },
            PlyColumn {
                name: "z",
                ty: "double",
                values: p.iter().map(|v| v.z).collect(),
            },
            col("nx", n.iter().map(|v| v.x).collect()),
            col("ny", n.iter().map(|v| v.y).collect()),
            col("nz", n.iter().map(|v| v.z).collect()),
            col("hx", self.hull_normals.iter().map(|v| v.x).collect()),
            col("hy", self.hull_normals.iter().map(|v| v.y).collect()),
            col("hz", self.hull_normals.iter().map(|v| v.z).collect()),
            col("err", self.err.clone()),
            col("tir", self.tir.clone()),
            col("cos", self.cos.clone()),
            PlyColumn {
                name: "view",
                ty: "int",
                values: self.view.iter().map(|&v| v as f64).collect(),
            },
        ];
        write_ply(path, &columns, None, PlyFormat::BinaryLittleEndian)
    }

    /// Reads a cloud written by [`save_ply`](Self::save_ply). Normals are
    /// stored in single precision and renormalized on load.
    pub fn load_ply(path: &Path) -> Result<Self> {
        let ply = load_ply(path)?;
        let v = ply
            .element("vertex")
            .ok_or_else(|| Error::Argument(format!("{}: no vertex element", path.display())))?;
        let col = |name: &str| {
            v.column(name)
                .ok_or_else(|| Error::Argument(format!("{}: missing property {name}", path.display())))
        };
        let vec3 = |a: &str, b: &str, c: &str, unit: bool| -> Result<Vec<Vec3>> {
            let (x, y, z) = (col(a)?, col(b)?, col(c)?);
            Ok((0..v.count)
                .map(|i| {
                    let p = Vec3::new(x[i], y[i], z[i]);
                    if unit && p.norm() > 0.0 {
                        p.normalize()
                    } else {
                        p
                    }
                })
                .collect())
        };
        Ok(OrientedPointCloud {
            points: vec3("x", "y", "z", false)?,
            hull_normals: vec3("hx", "hy", "hz", true)?,
            normals: vec3("nx", "ny", "nz", true)?,
            err: col("err")?.to_vec(),
            tir: col("tir")?.to_vec(),
            cos: col("cos")?.to_vec(),
            view: col("view")?.iter().map(|&x| x as usize).collect(),
        })
    }
}

/// Area-weighted uniform samples of the hull surface, seeded.
pub fn sample_hull_points(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<OrientedPointCloud> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = mesh.sample_surface(n, &mut rng)?;
    OrientedPointCloud::new(
        samples.iter().map(|s| s.position).collect(),
        samples.iter().map(|s| s.normal).collect(),
    )
}

/// Offset used to stop occlusion rays short of the point itself.
pub fn visibility_epsilon(hull: &AccelIndex) -> f64 {
    1e-4 * hull.bounds().diagonal()
}

/// The point projects in frame and nothing on the hull blocks the segment
/// from the camera center to it.
pub fn visibility(hull: &AccelIndex, camera: &Camera, p: &Vec3) -> bool {
    if camera.project(p).is_none() {
        return false;
    }
    let d = p - camera.center();
    let dist = d.norm();
    let eps = visibility_epsilon(hull);
    if dist <= eps {
        return true;
    }
    let ray = Ray {
        origin: camera.center(),
        dir: d / dist,
    };
    !hull.occluded(&ray, 0.0, dist - eps)
}

/// One view's predictions: first-surface normals (world frame), luminance
/// rendering error and TIR mask, all on the view's pixel grid.
#[derive(Clone, Debug)]
pub struct ViewMaps {
    pub camera: Camera,
    pub normals: Vec<Vec3>,
    pub valid: MaskBuffer,
    pub err: Vec<f64>,
    pub tir: MaskBuffer,
}

impl ViewMaps {
    /// Builds the maps from refined normals by rendering them and taking the
    /// luminance of the error against the observed image.
    pub fn from_prediction(
        image: &ImageBuffer,
        env: &EnvironmentMap,
        normals: &NormalMapPair,
        camera: &Camera,
        ior: f64,
    ) -> Result<Self> {
        let out = render_layer(env, normals, camera, ior)?;
        let e = error_map(image, &out, &normals.valid)?;
        Ok(ViewMaps {
            camera: camera.clone(),
            normals: normals.n1.clone(),
            valid: normals.valid.clone(),
            err: (0..e.data.len()).map(|i| e.luminance(i)).collect(),
            tir: normals.tir.clone(),
        })
    }

    /// Bilinear sample at the projection of `p` over valid texels only.
    /// `None` when out of frame or no valid texel contributes.
    pub fn sample(&self, p: &Vec3) -> Option<Features> {
        let ((u, v), _) = self.camera.project(p)?;
        let (w, h) = (self.camera.width, self.camera.height);
        let x = u - 0.5;
        let y = v - 0.5;
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let mut acc = Features {
            normal: Vec3::zeros(),
            err: 0.0,
            tir: 0.0,
            cos: 0.0,
        };
        let mut total = 0.0;
        for (dx, dy, wt) in [
            (0, 0, (1.0 - fx) * (1.0 - fy)),
            (1, 0, fx * (1.0 - fy)),
            (0, 1, (1.0 - fx) * fy),
            (1, 1, fx * fy),
        ] {
            let i = (x0 as i64 + dx).clamp(0, w as i64 - 1) as usize;
            let j = (y0 as i64 + dy).clamp(0, h as i64 - 1) as usize;
            let idx = j * w + i;
            if wt <= 0.0 || !self.valid.data[idx] {
                continue;
            }
            acc.normal += wt * self.normals[idx];
            acc.err += wt * self.err[idx];
            acc.tir += wt * if self.tir.data[idx] { 1.0 } else { 0.0 };
            total += wt;
        }
        if total <= 0.0 || acc.normal.norm() == 0.0 {
            return None;
        }
        Some(Features {
            normal: acc.normal.normalize(),
            err: acc.err / total,
            tir: acc.tir / total,
            cos: self.camera.view_cosine(p),
        })
    }
}

/// Features sampled from one view at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Features {
    pub normal: Vec3,
    pub err: f64,
    pub tir: f64,
    pub cos: f64,
}

/// Features of every view that sees the point, in view order (1-based ids).
fn observations(hull: &AccelIndex, maps: &[ViewMaps], p: &Vec3) -> Vec<(usize, Features)> {
    maps.iter()
        .enumerate()
        .filter(|(_, m)| visibility(hull, &m.camera, p))
        .filter_map(|(v, m)| m.sample(p).map(|f| (v + 1, f)))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionStrategy {
    /// Lowest rendering error among TIR-free views.
    Re,
    Avg,
    Nearest,
}

impl std::str::FromStr for FusionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "re" => Ok(FusionStrategy::Re),
            "avg" => Ok(FusionStrategy::Avg),
            "nearest" => Ok(FusionStrategy::Nearest),
            _ => Err(Error::Argument(format!("unknown fusion strategy {s:?} (re, avg, nearest)"))),
        }
    }
}

pub fn map_features(
    strategy: FusionStrategy,
    cloud: &OrientedPointCloud,
    hull: &AccelIndex,
    maps: &[ViewMaps],
) -> OrientedPointCloud {
    match strategy {
        FusionStrategy::Re => map_features_re(cloud, hull, maps),
        FusionStrategy::Avg => map_features_avg(cloud, hull, maps),
        FusionStrategy::Nearest => map_features_nearest(cloud, hull, maps),
    }
}

fn per_point(
    cloud: &OrientedPointCloud,
    hull: &AccelIndex,
    maps: &[ViewMaps],
    pick: impl Fn(&[(usize, Features)]) -> Option<(Features, usize)> + Sync,
) -> OrientedPointCloud {
    let chosen: Vec<Option<(Features, usize)>> = cloud
        .points
        .par_iter()
        .map(|p| pick(&observations(hull, maps, p)))
        .collect();
    let mut out = cloud.clone();
    for (i, c) in chosen.into_iter().enumerate() {
        if let Some((f, v)) = c {
            out.set(i, &f, v);
        }
    }
    out
}

/// Sequential best-view scan per point. TIR status is the bilinear TIR
/// sample binarized at ½. A view replaces the incumbent when it is TIR-free
/// and the incumbent is not, when both are TIR-free and its error is lower,
/// or when both are TIR and its cosine is larger.
pub fn map_features_re(cloud: &OrientedPointCloud, hull: &AccelIndex, maps: &[ViewMaps]) -> OrientedPointCloud {
    per_point(cloud, hull, maps, |obs| {
        let mut tir = 1.0;
        let mut err = ERROR_SENTINEL;
        let mut cos = 0.0;
        let mut best = None;
        for &(v, f) in obs {
            let m = if f.tir >= 0.5 { 1.0 } else { 0.0 };
            let take = (m == 0.0 && tir == 1.0) || (m == 0.0 && tir == 0.0 && f.err < err) || (m == 1.0 && tir == 1.0 && f.cos > cos);
            if take {
                tir = m;
                err = f.err;
                cos = f.cos;
                best = Some((Features { tir: m, ..f }, v));
            }
        }
        best
    })
}

/// Means over visible views, with the mean normal renormalized.
pub fn map_features_avg(cloud: &OrientedPointCloud, hull: &AccelIndex, maps: &[ViewMaps]) -> OrientedPointCloud {
    per_point(cloud, hull, maps, |obs| {
        if obs.is_empty() {
            return None;
        }
        let k = obs.len() as f64;
        let n: Vec3 = obs.iter().map(|(_, f)| f.normal).sum();
        if n.norm() == 0.0 {
            return None;
        }
        Some((
            Features {
                normal: n.normalize(),
                err: obs.iter().map(|(_, f)| f.err).sum::<f64>() / k,
                tir: obs.iter().map(|(_, f)| f.tir).sum::<f64>() / k,
                cos: obs.iter().map(|(_, f)| f.cos).sum::<f64>() / k,
            },
            0,
        ))
    })
}

/// Features of the visible view with the largest view cosine; the lowest
/// view index wins ties.
pub fn map_features_nearest(cloud: &OrientedPointCloud, hull: &AccelIndex, maps: &[ViewMaps]) -> OrientedPointCloud {
    per_point(cloud, hull, maps, |obs| {
        let mut best: Option<(Features, usize)> = None;
        for &(v, f) in obs {
            if best.is_none_or(|(b, _)| f.cos > b.cos) {
                best = Some((f, v));
            }
        }
        best
    })
}
