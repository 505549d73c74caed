//! Cost-volume search over normal hypotheses around the hull normals.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geom::{angle_deg, Camera, EnvironmentMap, ImageBuffer, Vec3};
use crate::optics::{refract, shade, NormalMapPair};
use crate::{Error, Result};

/// Polar (`theta`) and azimuthal (`phi`) offsets, in degrees, of the sampled
/// normals around a hull normal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleSchedule {
    pub theta_deg: Vec<f64>,
    pub phi_deg: Vec<f64>,
}

impl AngleSchedule {
    /// `k` samples: the hull normal itself, then `k - 1` normals at `spread`
    /// degrees with evenly spaced azimuths starting at 0.
    pub fn uniform(k: usize, spread: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::Argument("angle schedule needs K >= 1".into()));
        }
        let mut theta = vec![0.0];
        let mut phi = vec![0.0];
        for i in 0..k - 1 {
            theta.push(spread);
            phi.push(360.0 * i as f64 / (k - 1) as f64);
        }
        Ok(AngleSchedule {
            theta_deg: theta,
            phi_deg: phi,
        })
    }

    pub fn k(&self) -> usize {
        self.theta_deg.len()
    }

    pub fn max_theta(&self) -> f64 {
        self.theta_deg.iter().copied().fold(0.0, f64::max)
    }
}

/// Published spreads for 5, 10 and 20 views.
const VIEW_TABLE: [(usize, f64); 3] = [(5, 25.0), (10, 15.0), (20, 10.0)];
const SPREAD_RANGE: (f64, f64) = (10.0, 25.0);
pub const CALIBRATION_PERCENTILE: f64 = 85.0;

/// Angle spread for `views` views. Tabulated counts use the table; others
/// interpolate linearly in 1/V and clamp to [10°, 25°]. With calibration
/// errors (degrees) the spread is their 85th percentile instead.
pub fn angle_schedule_for_views(views: usize, k: usize, calibration: Option<&[f64]>) -> Result<AngleSchedule> {
    if views < 2 {
        return Err(Error::Argument(format!("angle schedule needs at least 2 views, got {views}")));
    }
    let spread = match calibration {
        Some(errs) if !errs.is_empty() => percentile(errs, CALIBRATION_PERCENTILE),
        _ => table_spread(views),
    };
    AngleSchedule::uniform(k, spread)
}

fn table_spread(views: usize) -> f64 {
    if let Some(&(_, s)) = VIEW_TABLE.iter().find(|(v, _)| *v == views) {
        return s;
    }
    let x = 1.0 / views as f64;
    // knots in increasing 1/V
    let knots: Vec<(f64, f64)> = VIEW_TABLE.iter().rev().map(|&(v, s)| (1.0 / v as f64, s)).collect();
    let seg = if x <= knots[1].0 { 0 } else { 1 };
    let (x0, y0) = knots[seg];
    let (x1, y1) = knots[seg + 1];
    (y0 + (x - x0) * (y1 - y0) / (x1 - x0)).clamp(SPREAD_RANGE.0, SPREAD_RANGE.1)
}

/// Linear-interpolation percentile (`q` in 0..=100).
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = (q / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Orthonormal frame with `z` along the normal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalFrame {
    pub x: Vec3,
    pub y: Vec3,
    pub z: Vec3,
    /// The up vector was (nearly) parallel to the normal and was replaced.
    pub fallback: bool,
}

pub fn local_frame(n: &Vec3, up: &Vec3) -> LocalFrame {
    let z = n.normalize();
    let mut u = up.normalize();
    let mut fallback = false;
    if u.dot(&z).abs() > 1.0 - 1e-6 {
        u = if u.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
        fallback = true;
    }
    let y = (u - u.dot(&z) * z).normalize();
    let x = y.cross(&z);
    LocalFrame { x, y, z, fallback }
}

/// The `K` hypotheses around `n`.
pub fn sample_normals(n: &Vec3, schedule: &AngleSchedule, up: &Vec3) -> Vec<Vec3> {
    let f = local_frame(n, up);
    schedule
        .theta_deg
        .iter()
        .zip(&schedule.phi_deg)
        .map(|(&t, &p)| {
            let (st, ct) = t.to_radians().sin_cos();
            let (sp, cp) = p.to_radians().sin_cos();
            f.x * (cp * st) + f.y * (sp * st) + f.z * ct
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Samples per surface; the search scores `K²` pairs per pixel.
    #[serde(rename = "K")]
    pub k: usize,
    /// Soft-min temperature as a fraction of each pixel's cost range; 0 selects the argmin.
    pub tau: f64,
    pub tv_weight: f64,
    pub tv_iters: usize,
    pub tir_penalty: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            k: 4,
            tau: 0.05,
            tv_weight: 0.1,
            tv_iters: 30,
            tir_penalty: 2.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SearchOutput {
    pub normals: NormalMapPair,
    /// Lowest candidate cost per pixel (0 outside the valid mask).
    pub cost: Vec<f64>,
    /// Index `k * K + k'` of the lowest-cost pair per pixel.
    pub best_pair: Vec<Option<usize>>,
}

/// L1 photometric cost of one candidate pair, or `penalty` under TIR.
pub fn pair_cost(
    image_px: &Vec3,
    env: &EnvironmentMap,
    l: &Vec3,
    n1: &Vec3,
    n2: &Vec3,
    ior: f64,
    penalty: f64,
) -> Result<f64> {
    let s = shade(env, l, n1, n2, ior)?;
    if s.tir {
        return Ok(penalty);
    }
    let d = image_px - (s.reflected + s.transmitted);
    Ok(d.abs().sum())
}

/// Scores all `K²` hypothesis pairs per pixel, takes the soft-min, then
/// smooths each map with red-black tangent-plane TV sweeps kept within the
/// sampled cone.
pub fn search_normals(
    image: &ImageBuffer,
    env: &EnvironmentMap,
    hull: &NormalMapPair,
    camera: &Camera,
    ior: f64,
    schedule: &AngleSchedule,
    cfg: &SearchConfig,
) -> Result<SearchOutput> {
    crate::optics::check_dims(hull, camera)?;
    if (image.width, image.height) != (camera.width, camera.height) {
        return Err(Error::Argument("image size differs from camera size".into()));
    }
    if schedule.k() == 0 {
        return Err(Error::Argument("empty angle schedule".into()));
    }
    let (w, h) = (hull.width, hull.height);
    let up = camera.up();
    let k = schedule.k();
    let per_pixel: Vec<Option<(Vec3, Vec3, f64, usize)>> = (0..w * h)
        .into_par_iter()
        .map(|idx| {
            if !hull.valid.data[idx] {
                return Ok(None);
            }
            let l = camera.pixel_ray(idx % w, idx / w).dir;
            let c1 = sample_normals(&hull.n1[idx], schedule, &up);
            let c2 = sample_normals(&hull.n2[idx], schedule, &up);
            let px = image.pixel(idx);
            let mut costs = Vec::with_capacity(k * k);
            for a in &c1 {
                for b in &c2 {
                    costs.push(pair_cost(&px, env, &l, a, b, ior, cfg.tir_penalty)?);
                }
            }
            let (n1, n2, best, arg) = soft_min(&c1, &c2, &costs, cfg.tau);
            Ok(Some((n1, n2, best, arg)))
        })
        .collect::<Result<_>>()?;

    let mut out = NormalMapPair::empty(w, h);
    let mut cost = vec![0.0; w * h];
    let mut best_pair = vec![None; w * h];
    for (idx, p) in per_pixel.into_iter().enumerate() {
        if let Some((n1, n2, c, arg)) = p {
            out.set(idx % w, idx / w, n1, n2);
            cost[idx] = c;
            best_pair[idx] = Some(arg);
        }
    }
    let cone = schedule.max_theta();
    if cfg.tv_weight > 0.0 && cfg.tv_iters > 0 {
        out.n1 = tv_smooth(&out.n1, &hull.n1, &out.valid.data, w, h, cfg.tv_weight, cfg.tv_iters, cone);
        out.n2 = tv_smooth(&out.n2, &hull.n2, &out.valid.data, w, h, cfg.tv_weight, cfg.tv_iters, cone);
    }
    out.tir = exit_tir_mask(&out, camera, ior)?;
    Ok(SearchOutput {
        normals: out,
        cost,
        best_pair,
    })
}

/// Exit-TIR flags of a normal map pair under the two-bounce model.
pub fn exit_tir_mask(n: &NormalMapPair, camera: &Camera, ior: f64) -> Result<crate::geom::MaskBuffer> {
    let w = n.width;
    let data = (0..n.num_pixels())
        .into_par_iter()
        .map(|idx| {
            if !n.valid.data[idx] {
                return Ok(false);
            }
            let l = camera.pixel_ray(idx % w, idx / w).dir;
            let lm = refract(&l, &n.n1[idx], 1.0 / ior)?
                .ok_or_else(|| Error::Consistency("total internal reflection while entering".into()))?;
            Ok(refract(&lm, &n.n2[idx], ior)?.is_none())
        })
        .collect::<Result<_>>()?;
    Ok(crate::geom::MaskBuffer {
        width: w,
        height: n.height,
        data,
    })
}

/// Soft-min over the pair grid; returns both marginal normals, the minimum
/// cost and the argmin (first on ties).
fn soft_min(c1: &[Vec3], c2: &[Vec3], costs: &[f64], tau: f64) -> (Vec3, Vec3, f64, usize) {
    let k = c2.len();
    let mut arg = 0;
    for (i, &c) in costs.iter().enumerate() {
        if c < costs[arg] {
            arg = i;
        }
    }
    let lo = costs[arg];
    let hi = costs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let temp = tau * (hi - lo);
    if tau <= 0.0 || !(temp > 0.0) {
        if tau > 0.0 {
            // every pair ties: the mean of all candidates
            let n1 = c1.iter().sum::<Vec3>().normalize();
            let n2 = c2.iter().sum::<Vec3>().normalize();
            return (n1, n2, lo, arg);
        }
        return (c1[arg / k], c2[arg % k], lo, arg);
    }
    let mut n1 = Vec3::zeros();
    let mut n2 = Vec3::zeros();
    for (i, &c) in costs.iter().enumerate() {
        let wgt = (-(c - lo) / temp).exp();
        n1 += wgt * c1[i / k];
        n2 += wgt * c2[i % k];
    }
    (n1.normalize(), n2.normalize(), lo, arg)
}

const TV_DELTA: f64 = 1e-3;

/// Red-black reweighted TV smoothing on the sphere. Each pixel moves to the
/// normalized blend of its data value and its TV-weighted valid neighbours,
/// then is clamped to `cone` degrees around its hull normal.
#[allow(clippy::too_many_arguments)]
fn tv_smooth(
    data: &[Vec3],
    hull: &[Vec3],
    valid: &[bool],
    w: usize,
    h: usize,
    lambda: f64,
    iters: usize,
    cone: f64,
) -> Vec<Vec3> {
    let mut n = data.to_vec();
    for _ in 0..iters {
        for colour in 0..2 {
            let updates: Vec<(usize, Vec3)> = (0..w * h)
                .into_par_iter()
                .filter(|&idx| valid[idx] && (idx % w + idx / w) % 2 == colour)
                .map(|idx| {
                    let (i, j) = (idx % w, idx / w);
                    let mut acc = data[idx];
                    let mut nbrs = [None; 4];
                    if i > 0 {
                        nbrs[0] = Some(idx - 1);
                    }
                    if i + 1 < w {
                        nbrs[1] = Some(idx + 1);
                    }
                    if j > 0 {
                        nbrs[2] = Some(idx - w);
                    }
                    if j + 1 < h {
                        nbrs[3] = Some(idx + w);
                    }
                    for q in nbrs.into_iter().flatten() {
                        if valid[q] {
                            let wgt = lambda / (n[q] - n[idx]).norm().max(TV_DELTA);
                            acc += wgt * n[q];
                        }
                    }
                    let v = if acc.norm() > 0.0 { acc.normalize() } else { n[idx] };
                    (idx, clamp_to_cone(&v, &hull[idx], cone))
                })
                .collect();
            for (idx, v) in updates {
                n[idx] = v;
            }
        }
    }
    n
}

/// Nearest unit vector to `v` within `deg` degrees of `axis`.
pub fn clamp_to_cone(v: &Vec3, axis: &Vec3, deg: f64) -> Vec3 {
    if angle_deg(v, axis) <= deg {
        return *v;
    }
    let t = v - v.dot(axis) * axis;
    if t.norm() < 1e-12 {
        return *axis;
    }
    let (s, c) = deg.to_radians().sin_cos();
    axis * c + t.normalize() * s
}
