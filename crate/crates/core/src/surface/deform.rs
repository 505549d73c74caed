use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fuse::OrientedPointCloud;
use crate::geom::kdtree::PointIndex;
use crate::geom::{TriangleMesh, Vec3};
use crate::parallel::par_sum;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeformConfig {
    pub w_normal: f64,
    pub w_prox: f64,
    pub w_lap: f64,
    pub iterations: usize,
    /// Largest vertex move per iteration, as a fraction of the mesh diagonal.
    pub step_fraction: f64,
    pub max_halvings: usize,
}

impl Default for DeformConfig {
    fn default() -> Self {
        DeformConfig {
            w_normal: 1.0,
            w_prox: 0.1,
            w_lap: 0.5,
            iterations: 200,
            step_fraction: 0.005,
            max_halvings: 10,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DeformOutput {
    pub mesh: TriangleMesh,
    /// Signed offset of every vertex along its initial normal.
    pub offsets: Vec<f64>,
    /// Energy before the first step and after every accepted step.
    pub energies: Vec<f64>,
}

struct Problem<'a> {
    mesh: &'a TriangleMesh,
    base: Vec<Vec3>,
    dirs: Vec<Vec3>,
    targets: Vec<Vec3>,
    weights: Vec<f64>,
    neighbours: Vec<Vec<u32>>,
    faces_of: Vec<Vec<u32>>,
    cfg: &'a DeformConfig,
}

impl Problem<'_> {
    fn positions(&self, d: &[f64]) -> Vec<Vec3> {
        self.base.iter().zip(&self.dirs).zip(d).map(|((p, n), d)| p + *d * n).collect()
    }

    fn crosses(&self, x: &[Vec3]) -> Vec<Vec3> {
        self.mesh
            .indices
            .par_iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| x[i as usize]);
                (b - a).cross(&(c - a))
            })
            .collect()
    }

    fn vertex_sums(&self, crosses: &[Vec3]) -> Vec<Vec3> {
        self.faces_of
            .par_iter()
            .map(|fs| fs.iter().map(|&f| crosses[f as usize]).sum())
            .collect()
    }

    fn laplacian(&self, d: &[f64]) -> Vec<Vec3> {
        (0..d.len())
            .into_par_iter()
            .map(|i| {
                let nb = &self.neighbours[i];
                if nb.is_empty() {
                    return Vec3::zeros();
                }
                let mean = nb.iter().map(|&j| d[j as usize] * self.dirs[j as usize]).sum::<Vec3>() / nb.len() as f64;
                d[i] * self.dirs[i] - mean
            })
            .collect()
    }

    fn energy(&self, d: &[f64]) -> f64 {
        let x = self.positions(d);
        let m = self.vertex_sums(&self.crosses(&x));
        let lap = self.laplacian(d);
        let cfg = self.cfg;
        par_sum(d.len(), 1024, |i| {
            let len = m[i].norm();
            let normal = if len > 0.0 {
                cfg.w_normal * self.weights[i] * (m[i] / len - self.targets[i]).norm_squared()
            } else {
                0.0
            };
            normal + cfg.w_prox * d[i] * d[i] + cfg.w_lap * lap[i].norm_squared()
        })
    }

    fn gradient(&self, d: &[f64]) -> Vec<f64> {
        let cfg = self.cfg;
        let x = self.positions(d);
        let m = self.vertex_sums(&self.crosses(&x));
        // dE/dm for every vertex sum
        let gm: Vec<Vec3> = (0..d.len())
            .into_par_iter()
            .map(|i| {
                let len = m[i].norm();
                if len == 0.0 || self.weights[i] == 0.0 {
                    return Vec3::zeros();
                }
                let n = m[i] / len;
                let t = self.targets[i];
                -2.0 * cfg.w_normal * self.weights[i] * (t - t.dot(&n) * n) / len
            })
            .collect();
        let per_face: Vec<[Vec3; 3]> = self
            .mesh
            .indices
            .par_iter()
            .map(|t| {
                let g: Vec3 = t.iter().map(|&v| gm[v as usize]).sum();
                let [a, b, c] = t.map(|i| x[i as usize]);
                [(b - c).cross(&g), (c - a).cross(&g), (a - b).cross(&g)]
            })
            .collect();
        let lap = self.laplacian(d);
        (0..d.len())
            .into_par_iter()
            .map(|i| {
                let mut gx = Vec3::zeros();
                for &f in &self.faces_of[i] {
                    let t = &self.mesh.indices[f as usize];
                    let corner = t.iter().position(|&v| v as usize == i).expect("incident face");
                    gx += per_face[f as usize][corner];
                }
                // ‖L u‖² with u = δ·n: dE/du_i = 2(L_i − Σ_{k ∋ i} L_k / deg_k)
                let mut gu = lap[i];
                for &k in &self.neighbours[i] {
                    gu -= lap[k as usize] / self.neighbours[k as usize].len() as f64;
                }
                self.dirs[i].dot(&(gx + 2.0 * cfg.w_lap * gu)) + 2.0 * cfg.w_prox * d[i]
            })
            .collect()
    }
}

/// Moves every vertex along its initial normal so that the area-weighted
/// mesh normals approach the fused normals, with proximity and Laplacian
/// regularizers. Each vertex takes the normal of its nearest fused point,
/// weighted by `1 − tir`. Normalized gradient steps with backtracking; the
/// energy never increases between accepted iterations.
pub fn deform_vertices(mesh: &TriangleMesh, cloud: &OrientedPointCloud, cfg: &DeformConfig) -> Result<DeformOutput> {
    if mesh.is_empty() {
        return Err(Error::EmptySurface("cannot deform an empty mesh".into()));
    }
    if cloud.is_empty() {
        return Err(Error::EmptySurface("fused cloud is empty".into()));
    }
    let nv = mesh.num_vertices();
    let index = PointIndex::new(&cloud.points);
    let keys: Vec<usize> = mesh.positions.par_iter().map(|p| index.nearest(p).0).collect();
    let mut neighbours: Vec<Vec<u32>> = vec![Vec::new(); nv];
    let mut faces_of: Vec<Vec<u32>> = vec![Vec::new(); nv];
    for (f, t) in mesh.indices.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            neighbours[a as usize].push(b);
            neighbours[b as usize].push(a);
            faces_of[t[k] as usize].push(f as u32);
        }
    }
    for nb in &mut neighbours {
        nb.sort_unstable();
        nb.dedup();
    }
    let problem = Problem {
        mesh,
        base: mesh.positions.clone(),
        dirs: mesh.normals.clone(),
        targets: keys.iter().map(|&k| cloud.normals[k]).collect(),
        weights: keys.iter().map(|&k| (1.0 - cloud.tir[k]).clamp(0.0, 1.0)).collect(),
        neighbours,
        faces_of,
        cfg,
    };

    let max_step = cfg.step_fraction * mesh.bounds().diagonal();
    let mut d = vec![0.0; nv];
    let mut e = problem.energy(&d);
    let mut energies = vec![e];
    let mut step = max_step;
    for _ in 0..cfg.iterations {
        let g = problem.gradient(&d);
        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gmax == 0.0 || !gmax.is_finite() {
            break;
        }
        let mut accepted = false;
        for _ in 0..=cfg.max_halvings {
            let trial: Vec<f64> = d.iter().zip(&g).map(|(d, g)| d - step * g / gmax).collect();
            let et = problem.energy(&trial);
            if et <= e {
                d = trial;
                e = et;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        energies.push(e);
        step = (2.0 * step).min(max_step);
    }
    let out = TriangleMesh::new(problem.positions(&d), mesh.indices.clone())?;
    Ok(DeformOutput {
        mesh: out,
        offsets: d,
        energies,
    })
}
