//! Mesh and normal-map error measures and the run report.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::geom::kdtree::PointIndex;
use crate::geom::mesh::SurfaceSample;
use crate::geom::{angle_deg, AccelIndex, ImageBuffer, TriangleMesh, Vec3};
use crate::optics::{angle_stats, AngleStats, NormalMapPair};
use crate::parallel::tree_sum;
use crate::{Error, Result};

pub const DEFAULT_SAMPLES: usize = 20_000;

/// Version of the report layout described by `schema/metrics.schema.json`.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// The JSON schema reports are validated against.
pub const REPORT_SCHEMA: &str = include_str!("../schema/metrics.schema.json");

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChamferMetrics {
    /// Mean squared nearest-sample distance, averaged over both directions.
    pub cd: f64,
    pub cdn_mean_deg: f64,
    pub cdn_median_deg: f64,
}

/// Same seed for both meshes, so a mesh compared with itself draws
/// identical samples.
fn samples(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<Vec<SurfaceSample>> {
    if n == 0 {
        return Err(Error::Argument("at least one sample is required".into()));
    }
    mesh.sample_surface(n, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// For every sample of `a`: squared distance to and normal angle with its
/// nearest sample of `b`.
fn nearest_pairs(a: &[SurfaceSample], b: &[SurfaceSample]) -> (Vec<f64>, Vec<f64>) {
    let pts: Vec<Vec3> = b.iter().map(|s| s.position).collect();
    let index = PointIndex::new(&pts);
    a.par_iter()
        .map(|s| {
            let (j, d2) = index.nearest(&s.position);
            (d2, angle_deg(&s.normal, &b[j].normal))
        })
        .unzip()
}

/// Chamfer distance and Chamfer normal angles between surface samplings.
pub fn chamfer_metrics(a: &TriangleMesh, b: &TriangleMesh, n: usize, seed: u64) -> Result<ChamferMetrics> {
    let sa = samples(a, n, seed)?;
    let sb = samples(b, n, seed)?;
    let (d_ab, ang_ab) = nearest_pairs(&sa, &sb);
    let (d_ba, ang_ba) = nearest_pairs(&sb, &sa);
    let cd = 0.5 * (tree_sum(&d_ab) / n as f64 + tree_sum(&d_ba) / n as f64);
    let angles = [ang_ab, ang_ba].concat();
    let stats = angle_stats(&angles);
    Ok(ChamferMetrics {
        cd,
        cdn_mean_deg: stats.mean_deg,
        cdn_median_deg: stats.median_deg,
    })
}

fn surface_distances(from: &[SurfaceSample], to: &TriangleMesh) -> Vec<f64> {
    let index = AccelIndex::build(to);
    from.par_iter()
        .map(|s| index.closest_point(&s.position).map_or(f64::INFINITY, |c| c.distance_squared.sqrt()))
        .collect()
}

/// Mean unsquared sample-to-surface distance, averaged over both directions.
pub fn metro(a: &TriangleMesh, b: &TriangleMesh, n: usize, seed: u64) -> Result<f64> {
    let sa = samples(a, n, seed)?;
    let sb = samples(b, n, seed)?;
    let ab = tree_sum(&surface_distances(&sa, b)) / n as f64;
    let ba = tree_sum(&surface_distances(&sb, a)) / n as f64;
    Ok(0.5 * (ab + ba))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeshMetrics {
    pub cd: f64,
    pub cdn_mean_deg: f64,
    pub cdn_median_deg: f64,
    pub metro: f64,
    pub samples: usize,
}

pub fn mesh_metrics(pred: &TriangleMesh, gt: &TriangleMesh, n: usize, seed: u64) -> Result<MeshMetrics> {
    let c = chamfer_metrics(pred, gt, n, seed)?;
    Ok(MeshMetrics {
        cd: c.cd,
        cdn_mean_deg: c.cdn_mean_deg,
        cdn_median_deg: c.cdn_median_deg,
        metro: metro(pred, gt, n, seed)?,
        samples: n,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NormalErrorStats {
    pub n1: AngleStats,
    pub n2: AngleStats,
    /// Mean luminance of the rendering error over the silhouette, when known.
    pub rendering_error: Option<f64>,
}

/// Angular errors of one or more views, pooled. Angles are taken over the
/// intersection of the predicted and reference valid masks; the rendering
/// error is averaged over the reference silhouettes.
pub fn pooled_normal_error_stats(
    views: &[(&NormalMapPair, &NormalMapPair)],
    errors: Option<&[&ImageBuffer]>,
) -> Result<NormalErrorStats> {
    let mut a1 = Vec::new();
    let mut a2 = Vec::new();
    let mut err = Vec::new();
    if let Some(e) = errors {
        if e.len() != views.len() {
            return Err(Error::Argument("one error map per view is required".into()));
        }
    }
    for (v, (pred, gt)) in views.iter().enumerate() {
        if (pred.width, pred.height) != (gt.width, gt.height) {
            return Err(Error::Argument(format!(
                "view {v}: {}x{} prediction against {}x{} reference",
                pred.width, pred.height, gt.width, gt.height
            )));
        }
        for i in 0..gt.num_pixels() {
            if pred.valid.data[i] && gt.valid.data[i] {
                a1.push(angle_deg(&pred.n1[i], &gt.n1[i]));
                a2.push(angle_deg(&pred.n2[i], &gt.n2[i]));
            }
        }
        if let Some(e) = errors {
            let e = e[v];
            if e.data.len() != gt.num_pixels() {
                return Err(Error::Argument(format!("view {v}: error map size differs")));
            }
            err.extend((0..gt.num_pixels()).filter(|&i| gt.valid.data[i]).map(|i| e.luminance(i)));
        }
    }
    Ok(NormalErrorStats {
        n1: angle_stats(&a1),
        n2: angle_stats(&a2),
        rendering_error: errors.map(|_| if err.is_empty() { 0.0 } else { tree_sum(&err) / err.len() as f64 }),
    })
}

pub fn normal_error_stats(
    pred: &NormalMapPair,
    gt: &NormalMapPair,
    error: Option<&ImageBuffer>,
) -> Result<NormalErrorStats> {
    match error {
        Some(e) => pooled_normal_error_stats(&[(pred, gt)], Some(&[e])),
        None => pooled_normal_error_stats(&[(pred, gt)], None),
    }
}

/// Hex SHA-256 of the JSON serialization of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub tool_version: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    /// Wall-clock seconds per stage.
    pub timings_s: BTreeMap<String, f64>,
    /// Mesh comparisons against ground truth, by mesh name.
    pub meshes: BTreeMap<String, MeshMetrics>,
    /// Normal-map comparisons, by stage.
    pub normals: BTreeMap<String, NormalErrorStats>,
    /// Point-cloud losses by name.
    pub losses: BTreeMap<String, f64>,
}

impl Report {
    pub fn new(config_hash: String, seeds: Vec<u64>) -> Self {
        Report {
            schema_version: REPORT_SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash,
            seeds,
            timings_s: BTreeMap::new(),
            meshes: BTreeMap::new(),
            normals: BTreeMap::new(),
            losses: BTreeMap::new(),
        }
    }

    /// `section,name,metric,value` rows in a fixed order.
    pub fn csv_rows(&self) -> Vec<[String; 4]> {
        let mut rows = Vec::new();
        let mut push = |section: &str, name: &str, metric: &str, value: f64| {
            rows.push([section.into(), name.into(), metric.into(), format!("{value:e}")]);
        };
        for (name, m) in &self.meshes {
            push("mesh", name, "cd", m.cd);
            push("mesh", name, "cdn_mean_deg", m.cdn_mean_deg);
            push("mesh", name, "cdn_median_deg", m.cdn_median_deg);
            push("mesh", name, "metro", m.metro);
        }
        for (name, s) in &self.normals {
            push("normals", name, "n1_mean_deg", s.n1.mean_deg);
            push("normals", name, "n1_median_deg", s.n1.median_deg);
            push("normals", name, "n2_mean_deg", s.n2.mean_deg);
            push("normals", name, "n2_median_deg", s.n2.median_deg);
            if let Some(e) = s.rendering_error {
                push("normals", name, "rendering_error", e);
            }
        }
        for (name, v) in &self.losses {
            push("loss", name, "value", *v);
        }
        for (name, t) in &self.timings_s {
            push("timing", name, "seconds", *t);
        }
        rows
    }
}

/// Writes `metrics.json` and `metrics.csv` into `dir`.
pub fn emit_report(report: &Report, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    crate::geom::io::save_json(&dir.join("metrics.json"), report)?;
    let mut csv = String::from("section,name,metric,value\n");
    for row in report.csv_rows() {
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    let path = dir.join("metrics.csv");
    std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))
}
