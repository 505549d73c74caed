//! Gradient refinement of the normal maps against the rendering loss.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geom::{Camera, EnvironmentMap, ImageBuffer, Vec3};
use crate::optics::{render_loss_and_grad, NormalMapPair};
use crate::parallel::tree_sum;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    /// Iterations with `N¹` frozen.
    pub phase1_iters: usize,
    /// Joint iterations.
    pub phase2_iters: usize,
    pub step: f64,
    pub lambda_anchor: f64,
    pub lambda_smooth: f64,
    pub max_halvings: usize,
    /// Consecutive energy increases tolerated before aborting.
    pub divergence_window: usize,
    /// Photometric cost charged to a pixel that turns TIR during the descent.
    pub tir_penalty: f64,
    /// Largest tangent move of a single normal at the nominal step; smaller
    /// steps shrink it proportionally.
    pub max_update: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            phase1_iters: 500,
            phase2_iters: 500,
            step: 0.01,
            lambda_anchor: 0.1,
            lambda_smooth: 0.05,
            max_halvings: 12,
            divergence_window: 50,
            tir_penalty: 2.0,
            max_update: 0.05,
        }
    }
}

/// One accepted iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub phase: u8,
    pub energy: f64,
    pub render_loss: f64,
    /// Lowest energy so far; never increases.
    pub best_energy: f64,
    pub step: f64,
}

#[derive(Clone, Debug)]
pub struct RefineOutput {
    pub normals: NormalMapPair,
    pub trace: Vec<TraceRow>,
    pub initial_render_loss: f64,
    pub final_render_loss: f64,
    /// Set when the divergence guard stopped the descent early.
    pub diverged: Option<String>,
}

const TV_EPS: f64 = 1e-3;

struct Problem<'a> {
    image: &'a ImageBuffer,
    env: &'a EnvironmentMap,
    camera: &'a Camera,
    ior: f64,
    init: &'a NormalMapPair,
    cfg: &'a RefineConfig,
}

struct Eval {
    energy: f64,
    render: f64,
    g1: Vec<Vec3>,
    g2: Vec<Vec3>,
}

impl Problem<'_> {
    fn eval(&self, n: &NormalMapPair) -> Result<Eval> {
        let lg = render_loss_and_grad(self.image, self.env, n, self.camera, self.ior)?;
        let init = self.init;
        let (w, h) = (n.width, n.height);
        let valid = &n.valid.data;
        // pixels that were non-TIR initially but are not active now pay the penalty
        let newly_tir = (0..w * h)
            .filter(|&i| valid[i] && !init.tir.data[i] && !lg.active[i])
            .count();
        let render = lg.loss + self.cfg.tir_penalty * newly_tir as f64;
        let mut g1 = lg.d_n1;
        let mut g2 = lg.d_n2;
        let la = self.cfg.lambda_anchor;
        let mut anchor_terms = Vec::with_capacity(w * h);
        for i in 0..w * h {
            if !valid[i] {
                anchor_terms.push(0.0);
                continue;
            }
            let d1 = n.n1[i] - init.n1[i];
            let d2 = n.n2[i] - init.n2[i];
            anchor_terms.push(d1.norm_squared() + d2.norm_squared());
            g1[i] += 2.0 * la * d1;
            g2[i] += 2.0 * la * d2;
        }
        let ls = self.cfg.lambda_smooth;
        let tv1 = tv_with_grad(&n.n1, valid, w, h, ls, &mut g1);
        let tv2 = tv_with_grad(&n.n2, valid, w, h, ls, &mut g2);
        for i in 0..w * h {
            if valid[i] {
                let (d1, d2) = (g1[i].dot(&n.n1[i]), g2[i].dot(&n.n2[i]));
                g1[i] -= n.n1[i] * d1;
                g2[i] -= n.n2[i] * d2;
            }
        }
        Ok(Eval {
            energy: render + la * tree_sum(&anchor_terms) + ls * (tv1 + tv2),
            render,
            g1,
            g2,
        })
    }
}

/// Smoothed isotropic TV over right and down neighbour pairs; adds
/// `weight · ∇TV` to `grad` and returns the unweighted TV.
fn tv_with_grad(n: &[Vec3], valid: &[bool], w: usize, h: usize, weight: f64, grad: &mut [Vec3]) -> f64 {
    let mut rows = Vec::with_capacity(h);
    for j in 0..h {
        let mut row = Vec::with_capacity(2 * w);
        for i in 0..w {
            let p = j * w + i;
            if !valid[p] {
                continue;
            }
            for q in [(i + 1 < w).then(|| p + 1), (j + 1 < h).then(|| p + w)].into_iter().flatten() {
                if !valid[q] {
                    continue;
                }
                let d = n[p] - n[q];
                let len = (d.norm_squared() + TV_EPS * TV_EPS).sqrt();
                row.push(len - TV_EPS);
                let g = d * (weight / len);
                grad[p] += g;
                grad[q] -= g;
            }
        }
        rows.push(tree_sum(&row));
    }
    tree_sum(&rows)
}

/// `step · g` with `‖g‖` capped at `cap`.
fn clipped(g: &Vec3, step: f64, cap: f64) -> Vec3 {
    let len = g.norm();
    if len > cap {
        g * (step * cap / len)
    } else {
        g * step
    }
}

fn step_maps(n: &NormalMapPair, ev: &Eval, step: f64, move_n1: bool, cap: f64) -> NormalMapPair {
    let mut out = n.clone();
    for i in 0..n.num_pixels() {
        if !n.valid.data[i] {
            continue;
        }
        if move_n1 {
            out.n1[i] = (n.n1[i] - clipped(&ev.g1[i], step, cap)).normalize();
        }
        out.n2[i] = (n.n2[i] - clipped(&ev.g2[i], step, cap)).normalize();
    }
    out
}

/// Minimizes rendering loss plus anchor and TV regularizers by projected
/// gradient descent on the unit sphere: first with `N¹` frozen, then
/// jointly. Returns the lowest-energy iterate; if its rendering loss exceeds
/// the initial one, the input is returned unchanged.
pub fn refine_normals(
    image: &ImageBuffer,
    env: &EnvironmentMap,
    init: &NormalMapPair,
    camera: &Camera,
    ior: f64,
    cfg: &RefineConfig,
) -> Result<RefineOutput> {
    if !(cfg.step > 0.0) {
        return Err(Error::Argument("refine step must be positive".into()));
    }
    let prob = Problem {
        image,
        env,
        camera,
        ior,
        init,
        cfg,
    };
    let mut cur = init.clone();
    let mut ev = prob.eval(&cur)?;
    let initial_render = ev.render;
    let mut best = (ev.energy, cur.clone(), ev.render);
    let mut trace = Vec::new();
    let mut increases = 0;
    let mut diverged = None;
    let total = cfg.phase1_iters + cfg.phase2_iters;
    let cap = cfg.max_update / cfg.step;
    let mut last_step = cfg.step;
    'outer: for iter in 0..total {
        let phase = if iter < cfg.phase1_iters { 1 } else { 2 };
        let move_n1 = phase == 2;
        // backtracking starts from twice the last accepted step
        let mut step = (2.0 * last_step).min(cfg.step);
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            let trial = step_maps(&cur, &ev, step, move_n1, cap);
            let tev = prob.eval(&trial)?;
            if tev.energy < ev.energy {
                accepted = Some((trial, tev));
                last_step = step;
                break;
            }
            step *= 0.5;
        }
        let (next, nev) = match accepted {
            Some(a) => {
                increases = 0;
                a
            }
            None => {
                // no decrease at the smallest step: take it and count it
                last_step = cfg.step;
                let trial = step_maps(&cur, &ev, step, move_n1, cap);
                let tev = prob.eval(&trial)?;
                increases += 1;
                (trial, tev)
            }
        };
        cur = next;
        ev = nev;
        if ev.energy < best.0 {
            best = (ev.energy, cur.clone(), ev.render);
        }
        trace.push(TraceRow {
            iter,
            phase,
            energy: ev.energy,
            render_loss: ev.render,
            best_energy: best.0,
            step,
        });
        if increases >= cfg.divergence_window {
            let msg = format!(
                "energy rose on {} consecutive steps (iteration {iter}); returning best iterate",
                cfg.divergence_window
            );
            log::warn!("{msg}");
            diverged = Some(msg);
            break 'outer;
        }
    }
    let (_, mut normals, mut final_render) = best;
    if final_render > initial_render {
        normals = init.clone();
        final_render = initial_render;
    }
    normals.tir = crate::costvol::exit_tir_mask(&normals, camera, ior)?;
    Ok(RefineOutput {
        normals,
        trace,
        initial_render_loss: initial_render,
        final_render_loss: final_render,
        diverged,
    })
}

/// Writes the loss trace as CSV.
pub fn write_trace_csv(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let mut write = || -> std::io::Result<()> {
        writeln!(f, "iter,phase,energy,render_loss,best_energy,step")?;
        for r in trace {
            writeln!(
                f,
                "{},{},{:e},{:e},{:e},{:e}",
                r.iter, r.phase, r.energy, r.render_loss, r.best_energy, r.step
            )?;
        }
        f.flush()
    };
    write().map_err(|e| Error::io(path, e))
}
