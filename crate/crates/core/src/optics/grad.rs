//! Rendering loss `Σ ‖I − (I^r + I^t)‖²` and its analytic gradient with
//! respect to the first and second surface normals.
//!
//! The derivative is assembled by hand, backwards through: environment
//! lookup (bilinear sub-gradient) ← reflect / refract ← Fresnel ← normals.
//! Jacobians are stored as `J[(i, j)] = ∂out_i / ∂in_j`.

use rayon::prelude::*;

use super::{check_dims, reflect, NormalMapPair};
use crate::geom::{Camera, EnvironmentMap, ImageBuffer, Mat3, Vec3};
use crate::parallel::tree_sum;
use crate::{Error, Result};

/// Refraction result with derivatives of the outgoing direction and of the
/// unsigned cosines.
struct RefractJac {
    t: Vec3,
    ci: f64,
    ct: f64,
    dt_dl: Mat3,
    dt_dn: Mat3,
    dci_dl: Vec3,
    dci_dn: Vec3,
    dct_dl: Vec3,
    dct_dn: Vec3,
}

fn refract_jac(l: &Vec3, n: &Vec3, eta: f64) -> Option<RefractJac> {
    let d = l.dot(n);
    let s = if d < 0.0 { 1.0 } else { -1.0 };
    let ci = -s * d;
    let sin2t = eta * eta * (1.0 - ci * ci);
    let radicand = 1.0 - sin2t;
    if radicand < 0.0 {
        return None;
    }
    let ct = radicand.sqrt();
    let k = eta * ci - ct;
    let t = l * eta + n * (s * k);

    let dci_dl = n * -s;
    let dci_dn = l * -s;
    // ct = sqrt(1 - eta²(1 - ci²)) => dct = eta² ci / ct · dci
    let r = if ct > 0.0 { eta * eta * ci / ct } else { 0.0 };
    let dct_dl = dci_dl * r;
    let dct_dn = dci_dn * r;
    let dk_dl = dci_dl * eta - dct_dl;
    let dk_dn = dci_dn * eta - dct_dn;
    let dt_dl = Mat3::identity() * eta + (n * s) * dk_dl.transpose();
    let dt_dn = (n * s) * dk_dn.transpose() + Mat3::identity() * (s * k);
    Some(RefractJac {
        t,
        ci,
        ct,
        dt_dl,
        dt_dn,
        dci_dl,
        dci_dn,
        dct_dl,
        dct_dn,
    })
}

/// Fresnel reflectance and its partials with respect to `(ci, ct)`.
fn fresnel_grad(ci: f64, ct: f64, eta: f64) -> (f64, f64, f64) {
    let ds = ci + eta * ct;
    let dp = eta * ci + ct;
    if ds <= 0.0 || dp <= 0.0 {
        return (1.0, 0.0, 0.0);
    }
    let rs = (ci - eta * ct) / ds;
    let rp = (eta * ci - ct) / dp;
    let f = 0.5 * rs * rs + 0.5 * rp * rp;
    if !(0.0..=1.0).contains(&f) {
        return (f.clamp(0.0, 1.0), 0.0, 0.0);
    }
    let drs_dci = 2.0 * eta * ct / (ds * ds);
    let drs_dct = -2.0 * eta * ci / (ds * ds);
    let drp_dci = 2.0 * eta * ct / (dp * dp);
    let drp_dct = -2.0 * eta * ci / (dp * dp);
    (f, rs * drs_dci + rp * drp_dci, rs * drs_dct + rp * drp_dct)
}

/// Loss and raw (unprojected) gradients for a single pixel; `None` when the
/// exit refraction is totally internally reflected.
pub(crate) fn pixel_loss_grad(
    env: &EnvironmentMap,
    l: &Vec3,
    target: &Vec3,
    n1: &Vec3,
    n2: &Vec3,
    ior: f64,
    want_grad: bool,
) -> Result<Option<(f64, Vec3, Vec3)>> {
    let eta_in = 1.0 / ior;
    let enter = refract_jac(l, n1, eta_in)
        .ok_or_else(|| Error::Consistency("total internal reflection on entry".into()))?;
    let Some(exit) = refract_jac(&enter.t, n2, ior) else {
        return Ok(None);
    };
    let (f1, df1_dci, df1_dct) = fresnel_grad(enter.ci, enter.ct, eta_in);
    let (f2, df2_dci, df2_dct) = fresnel_grad(exit.ci, exit.ct, ior);
    let r = reflect(l, n1);
    let (er, jr) = env.sample_with_grad(&r);
    let (et, jt) = env.sample_with_grad(&exit.t);
    let trans = (1.0 - f1) * (1.0 - f2);
    let pred = er * f1 + et * trans;
    let resid = target - pred;
    let loss = resid.norm_squared();
    if !want_grad {
        return Ok(Some((loss, Vec3::zeros(), Vec3::zeros())));
    }

    let g = resid * -2.0; // dL/dpred
    let dl_df1 = g.dot(&er) - (1.0 - f2) * g.dot(&et);
    let dl_df2 = -(1.0 - f1) * g.dot(&et);
    let dl_dr = jr.transpose() * g * f1;
    let dl_dlt = jt.transpose() * g * trans;

    // second interface
    let dl_dlm = exit.dt_dl.transpose() * dl_dlt + (exit.dci_dl * df2_dci + exit.dct_dl * df2_dct) * dl_df2;
    let dl_dn2 = exit.dt_dn.transpose() * dl_dlt + (exit.dci_dn * df2_dci + exit.dct_dn * df2_dct) * dl_df2;

    // first interface: reflection, Fresnel, and the refracted direction
    let ldn = l.dot(n1);
    let dr_dn1 = (Mat3::identity() * ldn + n1 * l.transpose()) * -2.0;
    let dl_dn1 = dr_dn1.transpose() * dl_dr
        + (enter.dci_dn * df1_dci + enter.dct_dn * df1_dct) * dl_df1
        + enter.dt_dn.transpose() * dl_dlm;
    Ok(Some((loss, dl_dn1, dl_dn2)))
}

/// Loss value and per-pixel gradients (projected onto each normal's
/// tangent plane).
#[derive(Clone, Debug)]
pub struct LossGrad {
    pub loss: f64,
    pub d_n1: Vec<Vec3>,
    pub d_n2: Vec<Vec3>,
    /// Pixels where the photometric term is defined (valid and not TIR).
    pub active: Vec<bool>,
}

fn tangent(g: Vec3, n: &Vec3) -> Vec3 {
    g - n * g.dot(n)
}

fn evaluate(
    image: &ImageBuffer,
    env: &EnvironmentMap,
    normals: &NormalMapPair,
    camera: &Camera,
    ior: f64,
    want_grad: bool,
) -> Result<LossGrad> {
    check_dims(normals, camera)?;
    if image.width != camera.width || image.height != camera.height {
        return Err(Error::Argument("image and camera sizes differ".into()));
    }
    let w = camera.width;
    let per_pixel: Vec<(f64, Vec3, Vec3, bool)> = (0..camera.num_pixels())
        .into_par_iter()
        .map(|idx| {
            if !normals.valid.data[idx] {
                return Ok((0.0, Vec3::zeros(), Vec3::zeros(), false));
            }
            let l = camera.pixel_ray(idx % w, idx / w).dir;
            let (n1, n2) = (&normals.n1[idx], &normals.n2[idx]);
            Ok(
                match pixel_loss_grad(env, &l, &image.pixel(idx), n1, n2, ior, want_grad)? {
                    None => (0.0, Vec3::zeros(), Vec3::zeros(), false),
                    Some((loss, g1, g2)) => (loss, tangent(g1, n1), tangent(g2, n2), true),
                },
            )
        })
        .collect::<Result<_>>()?;
    // fixed-order reduction: row partials, then pairwise
    let rows: Vec<f64> = per_pixel
        .chunks(w)
        .map(|row| tree_sum(&row.iter().map(|p| p.0).collect::<Vec<_>>()))
        .collect();
    Ok(LossGrad {
        loss: tree_sum(&rows),
        d_n1: per_pixel.iter().map(|p| p.1).collect(),
        d_n2: per_pixel.iter().map(|p| p.2).collect(),
        active: per_pixel.iter().map(|p| p.3).collect(),
    })
}

/// Rendering loss over valid, non-TIR pixels and its tangent-plane
/// gradients with respect to `N¹` and `N²`.
pub fn render_loss_and_grad(
    image: &ImageBuffer,
    env: &EnvironmentMap,
    normals: &NormalMapPair,
    camera: &Camera,
    ior: f64,
) -> Result<LossGrad> {
    evaluate(image, env, normals, camera, ior, true)
}

/// Rendering loss only.
pub fn render_loss(
    image: &ImageBuffer,
    env: &EnvironmentMap,
    normals: &NormalMapPair,
    camera: &Camera,
    ior: f64,
) -> Result<f64> {
    Ok(evaluate(image, env, normals, camera, ior, false)?.loss)
}
