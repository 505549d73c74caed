use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geom::image::to_rgb32;
use crate::geom::{Camera, EnvironmentMap, Hit, ImageBuffer, MaskBuffer, Ray, RayCast, Vec3};
use crate::optics::{fresnel, reflect, refract_unchecked};
use crate::{Error, Result};

/// Exact sphere, used where mesh faceting would blur an oracle comparison.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnalyticSphere {
    pub center: Vec3,
    pub radius: f64,
}

impl RayCast for AnalyticSphere {
    fn cast(&self, ray: &Ray, t_min: f64, t_max: f64) -> Option<Hit> {
        let oc = ray.origin - self.center;
        let b = oc.dot(&ray.dir);
        let c = oc.norm_squared() - self.radius * self.radius;
        let disc = b * b - c;
        if disc < 0.0 {
            return None;
        }
        let s = disc.sqrt();
        // numerically stable pair of roots
        let q = if b > 0.0 { -b - s } else { -b + s };
        let (mut t0, mut t1) = if q == 0.0 { (0.0, 0.0) } else { (q, c / q) };
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        let t = [t0, t1].into_iter().find(|&t| t > t_min && t < t_max)?;
        let point = ray.at(t);
        Some(Hit {
            t,
            point,
            normal: (point - self.center) / self.radius,
            face: 0,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceConfig {
    /// Interface interactions allowed per path; longer paths contribute zero.
    pub max_bounces: usize,
    pub samples_per_pixel: usize,
    pub seed: u64,
    /// Uniform sub-pixel jitter; off means every sample uses the pixel center.
    pub jitter: bool,
    /// Offset past each hit, in world units.
    pub epsilon: f64,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig {
            max_bounces: 2,
            samples_per_pixel: 1,
            seed: 0,
            jitter: false,
            epsilon: 1e-6,
        }
    }
}

/// Full branching up to this many bounces, Russian roulette beyond.
pub const FULL_BRANCH_LIMIT: usize = 4;

/// Path-traced image of a clear dielectric under an environment map.
/// Background pixels see the environment directly. Each pixel draws from
/// its own random stream, so images do not depend on the thread count.
pub fn path_trace_reference(
    scene: &dyn RayCast,
    env: &EnvironmentMap,
    camera: &Camera,
    ior: f64,
    config: &TraceConfig,
) -> Result<ImageBuffer> {
    if ior < 1.0 {
        return Err(Error::Argument(format!("ior must be at least 1, got {ior}")));
    }
    if config.samples_per_pixel == 0 {
        return Err(Error::Argument("samples_per_pixel must be positive".into()));
    }
    let w = camera.width;
    let data: Vec<[f32; 3]> = (0..camera.num_pixels())
        .into_par_iter()
        .map(|idx| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(idx as u64);
            let (i, j) = ((idx % w) as f64, (idx / w) as f64);
            let mut sum = Vec3::zeros();
            for _ in 0..config.samples_per_pixel {
                let (du, dv) = if config.jitter {
                    (rng.random::<f64>(), rng.random::<f64>())
                } else {
                    (0.5, 0.5)
                };
                let ray = camera.ray(i + du, j + dv);
                sum += radiance(scene, env, &ray, ior, config, 0, &mut rng);
            }
            to_rgb32(&(sum / config.samples_per_pixel as f64))
        })
        .collect();
    Ok(ImageBuffer {
        width: w,
        height: camera.height,
        data,
    })
}

fn radiance(
    scene: &dyn RayCast,
    env: &EnvironmentMap,
    ray: &Ray,
    ior: f64,
    cfg: &TraceConfig,
    depth: usize,
    rng: &mut ChaCha8Rng,
) -> Vec3 {
    let t_min = if depth == 0 { 0.0 } else { cfg.epsilon };
    let Some(hit) = scene.cast(ray, t_min, f64::INFINITY) else {
        return env.sample(&ray.dir);
    };
    if depth >= cfg.max_bounces {
        return Vec3::zeros();
    }
    let n = hit.normal;
    let eta = if ray.dir.dot(&n) < 0.0 { 1.0 / ior } else { ior };
    let reflected = Ray {
        origin: hit.point,
        dir: reflect(&ray.dir, &n),
    };
    let Some(lt) = refract_unchecked(&ray.dir, &n, eta) else {
        return radiance(scene, env, &reflected, ior, cfg, depth + 1, rng);
    };
    let f = fresnel(&ray.dir, &lt, &n, eta);
    let refracted = Ray {
        origin: hit.point,
        dir: lt,
    };
    if cfg.max_bounces <= FULL_BRANCH_LIMIT {
        let r = if f > 0.0 {
            f * radiance(scene, env, &reflected, ior, cfg, depth + 1, rng)
        } else {
            Vec3::zeros()
        };
        let t = if f < 1.0 {
            (1.0 - f) * radiance(scene, env, &refracted, ior, cfg, depth + 1, rng)
        } else {
            Vec3::zeros()
        };
        r + t
    } else if rng.random::<f64>() < f {
        radiance(scene, env, &reflected, ior, cfg, depth + 1, rng)
    } else {
        radiance(scene, env, &refracted, ior, cfg, depth + 1, rng)
    }
}

/// Pixels whose primary ray hits the scene.
pub fn silhouette_mask(scene: &dyn RayCast, camera: &Camera) -> MaskBuffer {
    let w = camera.width;
    let data = (0..camera.num_pixels())
        .into_par_iter()
        .map(|idx| scene.cast(&camera.pixel_ray(idx % w, idx / w), 0.0, f64::INFINITY).is_some())
        .collect();
    MaskBuffer {
        width: w,
        height: camera.height,
        data,
    }
}
