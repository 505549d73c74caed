use rayon::prelude::*;

use crate::geom::{AccelIndex, Camera, MaskBuffer, Ray, RayCast, Vec3};
use crate::optics::{refract, NormalMapPair};
use crate::{Error, Result};

const GRAZING_COS: f64 = 1e-6;

/// Hull normal maps: first-hit normal, second-hit normal after refraction,
/// and the exit TIR mask. Rays restart `1e-4 × diagonal` past each hit.
pub fn hull_normal_maps(hull: &AccelIndex, camera: &Camera, ior: f64) -> Result<NormalMapPair> {
    let eps = 1e-4 * hull.bounds().diagonal();
    trace_normal_maps(hull, camera, ior, eps)
}

enum Pixel {
    Miss,
    Hit { n1: Vec3, n2: Vec3, tir: bool },
}

/// Two-hit normal tracing against any closed surface. `N²` is flipped to
/// oppose the interior ray. Pixels with no first hit, no second hit or a
/// grazing hit are invalid.
pub fn trace_normal_maps(scene: &dyn RayCast, camera: &Camera, ior: f64, eps: f64) -> Result<NormalMapPair> {
    if ior <= 1.0 {
        return Err(Error::Argument(format!("ior must exceed 1, got {ior}")));
    }
    let (w, h) = (camera.width, camera.height);
    let pixels: Vec<Pixel> = (0..w * h)
        .into_par_iter()
        .map(|idx| trace_pixel(scene, &camera.pixel_ray(idx % w, idx / w), ior, eps))
        .collect::<Result<_>>()?;
    let mut out = NormalMapPair::empty(w, h);
    let mut tir = MaskBuffer::new(w, h);
    for (idx, p) in pixels.into_iter().enumerate() {
        if let Pixel::Hit { n1, n2, tir: t } = p {
            out.set(idx % w, idx / w, n1, n2);
            tir.data[idx] = t;
        }
    }
    out.tir = tir;
    Ok(out)
}

fn trace_pixel(scene: &dyn RayCast, ray: &Ray, ior: f64, eps: f64) -> Result<Pixel> {
    let Some(h1) = scene.cast(ray, 0.0, f64::INFINITY) else {
        return Ok(Pixel::Miss);
    };
    let n1 = h1.normal;
    if ray.dir.dot(&n1).abs() < GRAZING_COS {
        return Ok(Pixel::Miss);
    }
    let Some(lm) = refract(&ray.dir, &n1, 1.0 / ior)? else {
        return Err(Error::Consistency("entering refraction reported total internal reflection".into()));
    };
    let inner = Ray {
        origin: h1.point,
        dir: lm,
    };
    let Some(h2) = scene.cast(&inner, eps, f64::INFINITY) else {
        return Ok(Pixel::Miss);
    };
    let mut n2 = h2.normal;
    if n2.dot(&lm) > 0.0 {
        n2 = -n2;
    }
    if lm.dot(&n2).abs() < GRAZING_COS {
        return Ok(Pixel::Miss);
    }
    let tir = refract(&lm, &n2, ior)?.is_none();
    Ok(Pixel::Hit { n1, n2, tir })
}
