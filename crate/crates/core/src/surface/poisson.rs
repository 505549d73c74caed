use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geom::kdtree::PointIndex;
use crate::geom::{Aabb, TriangleMesh, Vec3};
use crate::hull::{extract_isosurface, ScalarGrid};
use crate::parallel::par_sum;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoissonConfig {
    /// Grid nodes per axis.
    pub resolution: usize,
    /// Pull of the indicator toward ½ at the samples; 0 disables screening.
    pub screening: f64,
    /// Standard deviation of the smoothing applied to the splatted field, in cells.
    pub sigma_cells: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Padding around the samples, as a fraction of their largest extent.
    pub margin: f64,
}

impl Default for PoissonConfig {
    fn default() -> Self {
        PoissonConfig {
            resolution: 128,
            screening: 0.0,
            sigma_cells: 1.5,
            tolerance: 1e-6,
            max_iterations: 4000,
            margin: 0.1,
        }
    }
}

/// Regular node grid; `x` varies fastest.
struct Grid {
    n: usize,
    origin: Vec3,
    h: f64,
}

impl Grid {
    fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    fn at(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.n + j) * self.n + i
    }

    fn coords(&self, idx: usize) -> [usize; 3] {
        [idx % self.n, (idx / self.n) % self.n, idx / (self.n * self.n)]
    }

    fn interior(&self, idx: usize) -> bool {
        self.coords(idx).iter().all(|&c| c > 0 && c + 1 < self.n)
    }

    /// Trilinear stencil at continuous grid coordinates, clamped to the grid.
    fn stencil(&self, g: Vec3) -> [(usize, f64); 8] {
        let last = (self.n - 2) as f64;
        let base = g.map(|c| c.floor().clamp(0.0, last));
        let f = (g - base).map(|c| c.clamp(0.0, 1.0));
        let (i, j, k) = (base.x as usize, base.y as usize, base.z as usize);
        let mut out = [(0, 0.0); 8];
        for (c, slot) in out.iter_mut().enumerate() {
            let (dx, dy, dz) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
            let w = (if dx == 1 { f.x } else { 1.0 - f.x })
                * (if dy == 1 { f.y } else { 1.0 - f.y })
                * (if dz == 1 { f.z } else { 1.0 - f.z });
            *slot = (self.at(i + dx, j + dy, k + dz), w);
        }
        out
    }

    fn grid_coords(&self, p: &Vec3) -> Vec3 {
        (p - self.origin) / self.h
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-r..=r).map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable convolution with zero padding.
fn blur(grid: &Grid, field: &[f64], kernel: &[f64]) -> Vec<f64> {
    if kernel.len() == 1 {
        return field.to_vec();
    }
    let r = (kernel.len() / 2) as i64;
    let n = grid.n as i64;
    let mut cur = field.to_vec();
    for axis in 0..3 {
        let stride = [1, grid.n, grid.n * grid.n][axis];
        cur = (0..grid.len())
            .into_par_iter()
            .map(|idx| {
                let c = grid.coords(idx)[axis] as i64;
                let mut acc = 0.0;
                for (o, &w) in kernel.iter().enumerate() {
                    let q = c + o as i64 - r;
                    if (0..n).contains(&q) {
                        acc += w * cur[(idx as i64 + (q - c) * stride as i64) as usize];
                    }
                }
                acc
            })
            .collect();
    }
    cur
}

/// Surface area represented by each sample, from the distance to its
/// eighth-nearest neighbour.
fn sample_areas(points: &[Vec3]) -> Vec<f64> {
    let index = PointIndex::new(points);
    let k = 9.min(points.len());
    points
        .par_iter()
        .map(|p| {
            let d = index.nearest_n_distances(p, k);
            let r2 = d.last().copied().unwrap_or(0.0);
            std::f64::consts::PI * r2 / (k.max(2) - 1) as f64
        })
        .collect()
}

struct Screening {
    stencils: Vec<[(usize, f64); 8]>,
    weights: Vec<f64>,
}

impl Screening {
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (st, &c) in self.stencils.iter().zip(&self.weights) {
            let v: f64 = st.iter().map(|&(i, w)| w * x[i]).sum();
            for &(i, w) in st {
                y[i] += c * w * v;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    par_sum(a.len(), 4096, |i| a[i] * b[i])
}

struct System {
    grid: Grid,
    rhs: Vec<f64>,
    diag: Vec<f64>,
    screening: Screening,
    use_screening: bool,
}

impl System {
    fn assemble(points: &[Vec3], normals: &[Vec3], areas: &[f64], origin: Vec3, side: f64, n: usize, cfg: &PoissonConfig) -> Self {
        let h = side / (n - 1) as f64;
        let grid = Grid { n, origin, h };
        let h3 = h * h * h;

        // Staggered components: face `idx` of axis `a` lies between node
        // `idx` and node `idx + e_a`.
        let kernel = gaussian_kernel(cfg.sigma_cells);
        let field: Vec<Vec<f64>> = (0..3)
            .map(|a| {
                let mut comp = vec![0.0; grid.len()];
                let mut shift = Vec3::zeros();
                shift[a] = 0.5;
                for ((p, nrm), &area) in points.iter().zip(normals).zip(areas) {
                    let value = -area * nrm[a] / h3;
                    if value == 0.0 {
                        continue;
                    }
                    for (i, w) in grid.stencil(grid.grid_coords(p) - shift) {
                        comp[i] += w * value;
                    }
                }
                blur(&grid, &comp, &kernel)
            })
            .collect();

        let strides = [1, n, n * n];
        let mut rhs: Vec<f64> = (0..grid.len())
            .into_par_iter()
            .map(|idx| {
                if !grid.interior(idx) {
                    return 0.0;
                }
                (0..3).map(|a| (field[a][idx - strides[a]] - field[a][idx]) / h).sum()
            })
            .collect();

        let use_screening = cfg.screening > 0.0;
        let screening = Screening {
            stencils: points.iter().map(|p| grid.stencil(grid.grid_coords(p))).collect(),
            // one unit of screening per cell face covered by samples
            weights: areas.iter().map(|a| cfg.screening * a / (h3 * h)).collect(),
        };
        let mut diag = vec![6.0 / (h * h); grid.len()];
        if use_screening {
            for (st, &c) in screening.stencils.iter().zip(&screening.weights) {
                for &(i, w) in st {
                    rhs[i] += 0.5 * c * w;
                    diag[i] += c * w * w;
                }
            }
            for (i, r) in rhs.iter_mut().enumerate() {
                if !grid.interior(i) {
                    *r = 0.0;
                }
            }
        }
        System {
            grid,
            rhs,
            diag,
            screening,
            use_screening,
        }
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.grid.n;
        let inv_h2 = 1.0 / (self.grid.h * self.grid.h);
        y.par_chunks_mut(n).enumerate().for_each(|(row, out)| {
            let (j, k) = (row % n, row / n);
            if j == 0 || k == 0 || j + 1 == n || k + 1 == n {
                out.fill(0.0);
                return;
            }
            out[0] = 0.0;
            out[n - 1] = 0.0;
            let base = row * n;
            for i in 1..n - 1 {
                let idx = base + i;
                let nb = x[idx - 1] + x[idx + 1] + x[idx - n] + x[idx + n] + x[idx - n * n] + x[idx + n * n];
                out[i] = (6.0 * x[idx] - nb) * inv_h2;
            }
        });
        if self.use_screening {
            self.screening.apply(x, y);
            for (i, v) in y.iter_mut().enumerate() {
                if !self.grid.interior(i) {
                    *v = 0.0;
                }
            }
        }
    }

    /// Trilinear interpolation of a coarser solution at this grid's nodes.
    fn prolong(&self, coarse: &Grid, chi: &[f64]) -> Vec<f64> {
        (0..self.grid.len())
            .into_par_iter()
            .map(|idx| {
                if !self.grid.interior(idx) {
                    return 0.0;
                }
                let [i, j, k] = self.grid.coords(idx);
                let p = self.grid.origin + self.grid.h * Vec3::new(i as f64, j as f64, k as f64);
                coarse.stencil(coarse.grid_coords(&p)).iter().map(|&(c, w)| w * chi[c]).sum()
            })
            .collect()
    }
}

/// Coarsest grid used to warm-start the solve.
const MIN_LEVEL: usize = 17;

fn solve_nested(
    points: &[Vec3],
    normals: &[Vec3],
    areas: &[f64],
    origin: Vec3,
    side: f64,
    n: usize,
    cfg: &PoissonConfig,
) -> Result<(System, Vec<f64>)> {
    let system = System::assemble(points, normals, areas, origin, side, n, cfg);
    let coarse_n = n.div_ceil(2);
    let x0 = if coarse_n >= MIN_LEVEL {
        let (coarse, chi) = solve_nested(points, normals, areas, origin, side, coarse_n, cfg)?;
        system.prolong(&coarse.grid, &chi)
    } else {
        vec![0.0; system.grid.len()]
    };
    let chi = conjugate_gradients(
        &|x, y| system.apply(x, y),
        &system.rhs,
        &system.diag,
        x0,
        cfg.tolerance,
        cfg.max_iterations,
    )?;
    Ok((system, chi))
}

/// Grid Poisson surface reconstruction. Oriented samples are splatted into a
/// staggered vector field, smoothed, and the indicator `χ` solving
/// `Δχ = ∇·V` (zero on the grid boundary) is found by conjugate gradients,
/// warm-started from successively coarser grids. The surface is the level
/// set of `χ` at its mean over the samples.
pub fn poisson_reconstruct(points: &[Vec3], normals: &[Vec3], cfg: &PoissonConfig) -> Result<TriangleMesh> {
    if points.len() != normals.len() {
        return Err(Error::Argument("point and normal counts differ".into()));
    }
    if cfg.resolution < 8 {
        return Err(Error::Argument(format!("Poisson resolution {} is below 8", cfg.resolution)));
    }
    if points.is_empty() || normals.iter().all(|n| n.norm() == 0.0) {
        return Err(Error::EmptySurface("no oriented samples: the normal field is zero".into()));
    }
    let bounds = Aabb::from_points(points);
    let side = bounds.extent().max() * (1.0 + 2.0 * cfg.margin);
    if !(side > 0.0) {
        return Err(Error::Degenerate("samples span no volume".into()));
    }
    let n = cfg.resolution;
    let origin = bounds.center() - Vec3::repeat(0.5 * side);
    let areas = sample_areas(points);
    let (system, chi) = solve_nested(points, normals, &areas, origin, side, n, cfg)?;

    let samples: Vec<f64> = system
        .screening
        .stencils
        .iter()
        .map(|st| st.iter().map(|&(i, w)| w * chi[i]).sum())
        .collect();
    let iso = crate::parallel::tree_sum(&samples) / samples.len() as f64;
    let scalar = ScalarGrid {
        dims: [n, n, n],
        origin,
        spacing: Vec3::repeat(system.grid.h),
        values: chi,
    };
    let mesh = extract_isosurface(&scalar, iso)?;
    if mesh.is_empty() {
        return Err(Error::EmptySurface(format!("indicator has no level set at {iso:.3e}")));
    }
    Ok(mesh)
}

/// Jacobi-preconditioned CG from `x`. Fails with the residual history when
/// the relative residual does not reach `tol`.
fn conjugate_gradients(
    apply: &(dyn Fn(&[f64], &mut [f64]) + Sync),
    b: &[f64],
    diag: &[f64],
    mut x: Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let norm_b = dot(b, b).sqrt();
    if norm_b == 0.0 {
        return Ok(vec![0.0; b.len()]);
    }
    let mut ap = vec![0.0; b.len()];
    apply(&x, &mut ap);
    let mut r: Vec<f64> = b.par_iter().zip(&ap).map(|(b, a)| b - a).collect();
    if dot(&r, &r).sqrt() / norm_b < tol {
        return Ok(x);
    }
    let mut z: Vec<f64> = r.par_iter().zip(diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut history = Vec::new();
    for _ in 0..max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        x.par_iter_mut().zip(&p).for_each(|(x, p)| *x += alpha * p);
        r.par_iter_mut().zip(&ap).for_each(|(r, ap)| *r -= alpha * ap);
        let rel = dot(&r, &r).sqrt() / norm_b;
        history.push(rel);
        if rel < tol {
            log::debug!("conjugate gradients converged in {} iterations", history.len());
            return Ok(x);
        }
        z.par_iter_mut().zip(&r).zip(diag).for_each(|((z, r), d)| *z = r / d);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.par_iter_mut().zip(&z).for_each(|(p, z)| *p = z + beta * *p);
    }
    Err(Error::CgNonConvergence { residuals: history })
}
