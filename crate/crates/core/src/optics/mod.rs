//! Dielectric interface physics and the two-bounce rendering layer.
//!
//! A camera ray either reflects once off the first surface or refracts into
//! the object, travels to the second surface and refracts out. Paths that
//! would need more interactions are dropped; pixels whose exit refraction is
//! impossible are flagged as total internal reflection.

mod grad;
mod normals;

pub use self::grad::{render_loss, render_loss_and_grad, LossGrad};
pub use self::normals::{angle_stats, normal_angle_loss, AngleStats, NormalLoss, NormalMapPair};

use rayon::prelude::*;

use crate::geom::image::to_rgb32;
use crate::geom::{Camera, EnvironmentMap, ImageBuffer, MaskBuffer, Vec3};
use crate::{Error, Result};

/// Mirror reflection of incident direction `l` about `n`.
pub fn reflect(l: &Vec3, n: &Vec3) -> Vec3 {
    l - n * (2.0 * l.dot(n))
}

/// Refracts `l` (pointing towards the surface) through an interface with
/// normal `n` of either orientation. `eta` is the ratio of the incident to
/// the transmitted refractive index, so entering glass from air uses
/// `1 / ior`. `Ok(None)` signals total internal reflection.
pub fn refract(l: &Vec3, n: &Vec3, eta: f64) -> Result<Option<Vec3>> {
    if !(eta > 0.0) {
        return Err(Error::Argument(format!("relative index must be positive, got {eta}")));
    }
    Ok(refract_unchecked(l, n, eta))
}

pub(crate) fn refract_unchecked(l: &Vec3, n: &Vec3, eta: f64) -> Option<Vec3> {
    let d = l.dot(n);
    // face the normal against the incoming ray
    let nf = if d < 0.0 { *n } else { -n };
    let ci = d.abs();
    let sin2t = eta * eta * (1.0 - ci * ci);
    let radicand = 1.0 - sin2t;
    if radicand < 0.0 {
        return None;
    }
    let ct = radicand.sqrt();
    Some(l * eta + nf * (eta * ci - ct))
}

/// Unpolarized Fresnel reflectance from the unsigned incidence and
/// transmission cosines.
pub fn fresnel_cos(ci: f64, ct: f64, eta: f64) -> f64 {
    let ds = ci + eta * ct;
    let dp = eta * ci + ct;
    if ds <= 0.0 || dp <= 0.0 {
        return 1.0;
    }
    let rs = (ci - eta * ct) / ds;
    let rp = (eta * ci - ct) / dp;
    (0.5 * rs * rs + 0.5 * rp * rp).clamp(0.0, 1.0)
}

/// Fresnel reflectance of the interface crossing `l_i -> l_t` at normal `n`.
pub fn fresnel(l_i: &Vec3, l_t: &Vec3, n: &Vec3, eta: f64) -> f64 {
    fresnel_cos(l_i.dot(n).abs(), l_t.dot(n).abs(), eta)
}

/// Per-pixel result of the rendering layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelShade {
    pub reflected: Vec3,
    pub transmitted: Vec3,
    pub tir: bool,
}

/// Shades one camera ray `l` with first/second surface normals.
pub fn shade(env: &EnvironmentMap, l: &Vec3, n1: &Vec3, n2: &Vec3, ior: f64) -> Result<PixelShade> {
    let eta_in = 1.0 / ior;
    let lm = refract_unchecked(l, n1, eta_in).ok_or_else(|| {
        Error::Consistency(format!("total internal reflection while entering a denser medium (ior {ior})"))
    })?;
    let f1 = fresnel(l, &lm, n1, eta_in);
    let reflected = env.sample(&reflect(l, n1)) * f1;
    let (transmitted, tir) = match refract_unchecked(&lm, n2, ior) {
        None => (Vec3::zeros(), true),
        Some(lt) => {
            let f2 = fresnel(&lm, &lt, n2, ior);
            (env.sample(&lt) * ((1.0 - f1) * (1.0 - f2)), false)
        }
    };
    Ok(PixelShade {
        reflected,
        transmitted,
        tir,
    })
}

/// Output of [`render_layer`].
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    /// Reflected radiance `I^r`.
    pub reflected: ImageBuffer,
    /// Transmitted radiance `I^t` (zero on TIR pixels).
    pub transmitted: ImageBuffer,
    /// Total internal reflection mask `M^tr`.
    pub tir: MaskBuffer,
}

impl RenderOutput {
    /// `I^r + I^t`.
    pub fn combined(&self) -> ImageBuffer {
        let mut out = self.reflected.clone();
        for (o, t) in out.data.iter_mut().zip(&self.transmitted.data) {
            for c in 0..3 {
                o[c] += t[c];
            }
        }
        out
    }
}

/// Renders reflection and two-bounce transmission for every valid pixel.
pub fn render_layer(env: &EnvironmentMap, normals: &NormalMapPair, camera: &Camera, ior: f64) -> Result<RenderOutput> {
    check_dims(normals, camera)?;
    if !(ior > 1.0) {
        return Err(Error::Argument(format!("ior must exceed 1, got {ior}")));
    }
    let w = camera.width;
    let shades: Vec<Option<PixelShade>> = (0..camera.num_pixels())
        .into_par_iter()
        .map(|idx| {
            if !normals.valid.data[idx] {
                return Ok(None);
            }
            let l = camera.pixel_ray(idx % w, idx / w).dir;
            shade(env, &l, &normals.n1[idx], &normals.n2[idx], ior).map(Some)
        })
        .collect::<Result<_>>()?;
    let mut out = RenderOutput {
        reflected: ImageBuffer::new(camera.width, camera.height),
        transmitted: ImageBuffer::new(camera.width, camera.height),
        tir: MaskBuffer::new(camera.width, camera.height),
    };
    for (idx, s) in shades.into_iter().enumerate() {
        if let Some(s) = s {
            out.reflected.data[idx] = to_rgb32(&s.reflected);
            out.transmitted.data[idx] = to_rgb32(&s.transmitted);
            out.tir.data[idx] = s.tir;
        }
    }
    Ok(out)
}

/// `|I - (I^r + I^t)|` per channel inside `mask`, zero elsewhere.
pub fn error_map(image: &ImageBuffer, out: &RenderOutput, mask: &MaskBuffer) -> Result<ImageBuffer> {
    if image.width != mask.width
        || image.height != mask.height
        || out.reflected.width != image.width
        || out.reflected.height != image.height
    {
        return Err(Error::Argument("error_map: image, render and mask sizes differ".into()));
    }
    let mut err = ImageBuffer::new(image.width, image.height);
    for idx in 0..image.data.len() {
        if !mask.data[idx] {
            continue;
        }
        let (i, r, t) = (image.data[idx], out.reflected.data[idx], out.transmitted.data[idx]);
        err.data[idx] = [0, 1, 2].map(|c| (i[c] - (r[c] + t[c])).abs());
    }
    Ok(err)
}

pub(crate) fn check_dims(normals: &NormalMapPair, camera: &Camera) -> Result<()> {
    if normals.width != camera.width || normals.height != camera.height {
        return Err(Error::Argument(format!(
            "normal maps are {}x{} but the camera is {}x{}",
            normals.width, normals.height, camera.width, camera.height
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Mat3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    const IOR: f64 = 1.4723;

    fn rot_y(deg: f64) -> Mat3 {
        *nalgebra::Rotation3::from_axis_angle(&Vec3::y_axis(), deg.to_radians()).matrix()
    }

    fn unit(rng: &mut impl Rng) -> Vec3 {
        loop {
            let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let n = v.norm();
            if n > 0.1 && n < 1.0 {
                return v / n;
            }
        }
    }

    #[test]
    fn normal_incidence_preserves_direction() {
        let n = Vec3::new(0.2, -0.3, 0.9).normalize();
        for eta in [0.5, 1.0 / IOR, 1.0, IOR] {
            let t = refract(&(-n), &n, eta).unwrap().unwrap();
            assert!((t + n).norm() < 1e-12);
        }
    }

    #[test]
    fn unit_eta_is_identity() {
        let l = Vec3::new(0.3, -0.8, 0.1).normalize();
        let n = Vec3::new(0.0, 1.0, 0.2).normalize();
        let t = refract(&l, &n, 1.0).unwrap().unwrap();
        assert!((t - l).norm() < 1e-12);
    }

    #[test]
    fn snell_45_degrees_into_glass() {
        let n = Vec3::z();
        let a = 45f64.to_radians();
        let l = Vec3::new(a.sin(), 0.0, -a.cos());
        let t = refract(&l, &n, 1.0 / IOR).unwrap().unwrap();
        let theta_t = t.x.atan2(-t.z).to_degrees();
        let expected = (45f64.to_radians().sin() / IOR).asin().to_degrees();
        assert!((theta_t - expected).abs() < 1e-9);
        assert!((theta_t - 28.70).abs() < 0.01);
    }

    #[test]
    fn beyond_critical_angle_is_tir() {
        let critical = (1.0 / IOR).asin().to_degrees();
        assert!((critical - 42.77).abs() < 0.02);
        let n = Vec3::z();
        let a = 50f64.to_radians();
        let l = Vec3::new(a.sin(), 0.0, a.cos());
        assert!(refract(&l, &n, IOR).unwrap().is_none());
    }

    #[test]
    fn refract_rejects_non_positive_eta() {
        assert!(refract(&Vec3::z(), &Vec3::z(), 0.0).is_err());
        assert!(refract(&Vec3::z(), &Vec3::z(), -1.0).is_err());
    }

    #[test]
    fn reflect_cases() {
        let n = Vec3::new(1.0, 2.0, -0.5).normalize();
        assert!((reflect(&(-n), &n) - n).norm() < 1e-12);
        let g = crate::geom::any_perpendicular(&n);
        assert!((reflect(&g, &n) - g).norm() < 1e-12);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let n = unit(&mut rng);
            let l = unit(&mut rng);
            let r = reflect(&l, &n);
            assert!((r.norm() - 1.0).abs() < 1e-12);
            assert!((r.dot(&n) + l.dot(&n)).abs() < 1e-12);
        }
    }

    #[test]
    fn fresnel_closed_forms() {
        let n = Vec3::z();
        let f = fresnel(&(-n), &(-n), &n, IOR);
        let expected = ((IOR - 1.0) / (IOR + 1.0)).powi(2);
        assert!((f - expected).abs() < 1e-12);
        assert!((expected - 0.03649).abs() < 1e-5);
        let l = Vec3::new(0.6, 0.0, -0.8);
        assert_eq!(fresnel(&l, &l, &n, 1.0), 0.0);
        // grazing incidence
        let graze = Vec3::new(1.0, 0.0, -1e-9).normalize();
        let t = refract(&graze, &n, 1.0 / IOR).unwrap().unwrap();
        assert!(fresnel(&graze, &t, &n, 1.0 / IOR) > 0.999);
    }

    #[test]
    fn fresnel_is_monotone_in_incidence() {
        let n = Vec3::z();
        let mut prev = 0.0;
        for k in 0..=900 {
            let a = (k as f64 * 0.1).to_radians();
            let l = Vec3::new(a.sin(), 0.0, -a.cos());
            let t = refract(&l, &n, 1.0 / IOR).unwrap().unwrap();
            let f = fresnel(&l, &t, &n, 1.0 / IOR);
            assert!((0.0..=1.0).contains(&f));
            assert!(f >= prev - 1e-15, "non-monotone at {k}");
            prev = f;
        }
    }

    proptest! {
        #[test]
        fn snell_is_reversible(seed in 0u64..10_000, eta in 0.5f64..2.0) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = unit(&mut rng);
            let l = unit(&mut rng);
            if let Some(t) = refract(&l, &n, eta).unwrap() {
                prop_assert!((t.norm() - 1.0).abs() < 1e-9);
                let back = refract(&(-t), &n, 1.0 / eta).unwrap().unwrap();
                prop_assert!((back + l).norm() < 1e-6);
            }
        }
    }

    fn sphere_like_pair(cam: &Camera) -> NormalMapPair {
        let mut pair = NormalMapPair::empty(cam.width, cam.height);
        for j in 0..cam.height {
            for i in 0..cam.width {
                let l = cam.pixel_ray(i, j).dir;
                let n1 = (-l + Vec3::new(0.1 * i as f64 / cam.width as f64, 0.05, 0.0)).normalize();
                let n2 = (l + Vec3::new(0.0, 0.1 * j as f64 / cam.height as f64, 0.05)).normalize();
                pair.set(i, j, n1, n2);
            }
        }
        pair
    }

    fn test_env() -> EnvironmentMap {
        EnvironmentMap::from_fn(64, |d| {
            [
                (1.0 + 0.5 * d.x + 0.3 * (3.0 * d.y).sin()) as f32,
                (0.8 + 0.4 * d.z * d.z) as f32,
                (0.5 + 0.5 * (2.0 * d.x + d.y).cos().abs()) as f32,
            ]
        })
        .unwrap()
    }

    fn test_camera() -> Camera {
        Camera::look_at(Vec3::new(0.0, 0.0, -3.0), Vec3::zeros(), Vec3::y(), 24, 16, 30.0).unwrap()
    }

    #[test]
    fn parallel_slab_preserves_direction() {
        let n = Vec3::new(0.3, 0.1, -1.0).normalize();
        let l = Vec3::new(0.2, -0.1, 1.0).normalize();
        let lm = refract(&l, &n, 1.0 / IOR).unwrap().unwrap();
        let lt = refract(&lm, &n, IOR).unwrap().unwrap();
        assert!((lt - l).norm() < 1e-12);
    }

    #[test]
    fn constant_env_energy_bound() {
        let c = 0.7f32;
        let env = EnvironmentMap::constant(16, [c; 3]);
        let cam = test_camera();
        let pair = sphere_like_pair(&cam);
        let out = render_layer(&env, &pair, &cam, IOR).unwrap();
        for idx in 0..cam.num_pixels() {
            if out.tir.data[idx] {
                assert_eq!(out.transmitted.data[idx], [0.0; 3]);
                continue;
            }
            let l = cam.pixel_ray(idx % cam.width, idx / cam.width).dir;
            let (n1, n2) = (pair.n1[idx], pair.n2[idx]);
            let lm = refract(&l, &n1, 1.0 / IOR).unwrap().unwrap();
            let lt = refract(&lm, &n2, IOR).unwrap().unwrap();
            let f1 = fresnel(&l, &lm, &n1, 1.0 / IOR);
            let f2 = fresnel(&lm, &lt, &n2, IOR);
            let total = out.reflected.data[idx][0] + out.transmitted.data[idx][0];
            let expected = (f1 + (1.0 - f1) * (1.0 - f2)) * c as f64;
            assert!((total as f64 - expected).abs() < 1e-6);
            assert!(total <= c + 1e-6);
        }
    }

    #[test]
    fn error_map_self_consistency_and_masking() {
        let env = test_env();
        let cam = test_camera();
        let pair = sphere_like_pair(&cam);
        let out = render_layer(&env, &pair, &cam, IOR).unwrap();
        let img = out.combined();
        let err = error_map(&img, &out, &pair.valid).unwrap();
        assert!(err.data.iter().flatten().all(|&e| e < 1e-6));
        let none = MaskBuffer::new(cam.width, cam.height);
        let mut noisy = img.clone();
        noisy.data[5] = [9.0, 9.0, 9.0];
        let err = error_map(&noisy, &out, &none).unwrap();
        assert!(err.data.iter().flatten().all(|&e| e == 0.0));
        // one pixel by hand
        let err = error_map(&noisy, &out, &pair.valid).unwrap();
        let (r, t) = (out.reflected.data[5], out.transmitted.data[5]);
        for c in 0..3 {
            assert_eq!(err.data[5][c], (9.0 - (r[c] + t[c])).abs());
        }
    }

    #[test]
    fn invalid_pixels_render_black() {
        let env = test_env();
        let cam = test_camera();
        let mut pair = sphere_like_pair(&cam);
        pair.valid.data[3] = false;
        let out = render_layer(&env, &pair, &cam, IOR).unwrap();
        assert_eq!(out.reflected.data[3], [0.0; 3]);
        assert_eq!(out.transmitted.data[3], [0.0; 3]);
    }

    #[test]
    fn tir_flag_matches_radicand_sign() {
        let env = test_env();
        let cam = test_camera();
        let pair = sphere_like_pair(&cam);
        let out = render_layer(&env, &pair, &cam, IOR).unwrap();
        for idx in 0..cam.num_pixels() {
            let l = cam.pixel_ray(idx % cam.width, idx / cam.width).dir;
            let lm = refract(&l, &pair.n1[idx], 1.0 / IOR).unwrap().unwrap();
            let ci = lm.dot(&pair.n2[idx]).abs();
            let radicand = 1.0 - IOR * IOR * (1.0 - ci * ci);
            assert_eq!(out.tir.data[idx], radicand < 0.0);
        }
    }

    #[test]
    fn invariant_under_joint_rotation() {
        // rotations about +Y by whole texels shift the environment exactly
        let env = test_env();
        let cam = test_camera();
        let pair = sphere_like_pair(&cam);
        let out = render_layer(&env, &pair, &cam, IOR).unwrap();
        let deg = 360.0 * 5.0 / env.width() as f64;
        let r = rot_y(deg);
        let rcam = Camera::new(
            cam.width,
            cam.height,
            cam.fx,
            cam.fy,
            cam.cx,
            cam.cy,
            r * cam.rotation,
            r * cam.translation,
        )
        .unwrap();
        let mut rpair = pair.clone();
        for idx in 0..rpair.n1.len() {
            rpair.n1[idx] = r * pair.n1[idx];
            rpair.n2[idx] = r * pair.n2[idx];
        }
        let rout = render_layer(&env.rotated(&r), &rpair, &rcam, IOR).unwrap();
        for (a, b) in out.combined().data.iter().zip(&rout.combined().data) {
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() < 1e-4);
            }
        }
        assert_eq!(out.tir, rout.tir);
    }

    #[test]
    fn rejects_mismatched_sizes() {
        let env = test_env();
        let cam = test_camera();
        let pair = NormalMapPair::empty(3, 3);
        assert!(render_layer(&env, &pair, &cam, IOR).is_err());
    }
}
