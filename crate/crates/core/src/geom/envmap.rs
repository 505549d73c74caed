use std::f64::consts::PI;

use super::{Mat3, Vec3};
use crate::{Error, Result};

/// Distant illumination stored as an equirectangular RGB radiance grid with
/// `width == 2 * height`.
///
/// Direction `d` maps to `u = atan2(d.x, -d.z) / 2π + 0.5` and
/// `v = acos(d.y) / π`; `v = 0` is the +Y pole (top row). Lookups are
/// bilinear with texel centers at half-integers, wrapping horizontally and
/// clamping vertically.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvironmentMap {
    width: usize,
    height: usize,
    data: Vec<[f32; 3]>,
}

impl EnvironmentMap {
    pub fn new(width: usize, height: usize, data: Vec<[f32; 3]>) -> Result<Self> {
        if height == 0 || width != 2 * height {
            return Err(Error::Argument(format!(
                "environment map must be 2:1, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::Argument("environment map data size mismatch".into()));
        }
        if data.iter().flatten().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::Argument("environment map radiance must be finite and non-negative".into()));
        }
        Ok(EnvironmentMap { width, height, data })
    }

    pub fn constant(height: usize, value: [f32; 3]) -> Self {
        EnvironmentMap {
            width: 2 * height,
            height,
            data: vec![value; 2 * height * height],
        }
    }

    /// Builds a map by evaluating `f` at the direction of every texel center.
    pub fn from_fn(height: usize, f: impl Fn(&Vec3) -> [f32; 3]) -> Result<Self> {
        let width = 2 * height;
        let mut data = Vec::with_capacity(width * height);
        for j in 0..height {
            for i in 0..width {
                let d = texel_direction(i as f64 + 0.5, j as f64 + 0.5, width, height);
                data.push(f(&d));
            }
        }
        EnvironmentMap::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn texels(&self) -> &[[f32; 3]] {
        &self.data
    }

    pub fn texel(&self, i: usize, j: usize) -> Vec3 {
        let t = self.data[j * self.width + i];
        Vec3::new(t[0] as f64, t[1] as f64, t[2] as f64)
    }

    /// Continuous texel coordinates `(x, y)` of a unit direction, with texel
    /// centers at half-integers.
    pub fn direction_to_xy(&self, dir: &Vec3) -> (f64, f64) {
        let u = dir.x.atan2(-dir.z) / (2.0 * PI) + 0.5;
        let v = dir.y.clamp(-1.0, 1.0).acos() / PI;
        (u * self.width as f64, v * self.height as f64)
    }

    /// Bilinear radiance lookup.
    pub fn sample(&self, dir: &Vec3) -> Vec3 {
        let (x, y) = self.direction_to_xy(dir);
        self.lookup(x, y).0
    }

    /// Radiance and its Jacobian with respect to the (unnormalized) lookup
    /// direction components, row `c` holding d radiance_c / d dir.
    ///
    /// Uses the bilinear sub-gradient: the derivative inside the current cell.
    pub fn sample_with_grad(&self, dir: &Vec3) -> (Vec3, Mat3) {
        let (x, y) = self.direction_to_xy(dir);
        let (value, dx, dy) = self.lookup(x, y);

        // d(u)/d(dir): u = atan2(x, -z) / 2π + 0.5
        let rho2 = dir.x * dir.x + dir.z * dir.z;
        let w = self.width as f64;
        let h = self.height as f64;
        let mut dxd = Vec3::zeros();
        if rho2 > 0.0 {
            dxd.x = -dir.z / rho2 / (2.0 * PI) * w;
            dxd.z = dir.x / rho2 / (2.0 * PI) * w;
        }
        // v = acos(y) / π
        let mut dyd = Vec3::zeros();
        let s2 = 1.0 - dir.y * dir.y;
        if s2 > 0.0 && dir.y.abs() < 1.0 {
            dyd.y = -1.0 / (PI * s2.sqrt()) * h;
        }
        let jac = dx * dxd.transpose() + dy * dyd.transpose();
        (value, jac)
    }

    /// Value and partial derivatives with respect to continuous texel
    /// coordinates.
    fn lookup(&self, x: f64, y: f64) -> (Vec3, Vec3, Vec3) {
        let xs = x - 0.5;
        let ys = y - 0.5;
        let x0 = xs.floor();
        let y0 = ys.floor();
        let fx = xs - x0;
        let fy = ys - y0;
        let w = self.width as i64;
        let i0 = (x0 as i64).rem_euclid(w) as usize;
        let i1 = (x0 as i64 + 1).rem_euclid(w) as usize;
        let clamp_row = |k: f64| k.clamp(0.0, (self.height - 1) as f64) as usize;
        let j0 = clamp_row(y0);
        let j1 = clamp_row(y0 + 1.0);
        let a = self.texel(i0, j0);
        let b = self.texel(i1, j0);
        let c = self.texel(i0, j1);
        let d = self.texel(i1, j1);
        let value = a * ((1.0 - fx) * (1.0 - fy)) + b * (fx * (1.0 - fy)) + c * ((1.0 - fx) * fy) + d * (fx * fy);
        let dx = (b - a) * (1.0 - fy) + (d - c) * fy;
        let dy = (c - a) * (1.0 - fx) + (d - b) * fx;
        (value, dx, dy)
    }

    /// Resamples the map under a rotation `r`: the result `m'` satisfies
    /// `m'.sample(r * d) ≈ m.sample(d)`.
    pub fn rotated(&self, r: &Mat3) -> EnvironmentMap {
        let inv = r.transpose();
        let mut data = Vec::with_capacity(self.data.len());
        for j in 0..self.height {
            for i in 0..self.width {
                let d = texel_direction(i as f64 + 0.5, j as f64 + 0.5, self.width, self.height);
                let v = self.sample(&(inv * d));
                data.push([v.x as f32, v.y as f32, v.z as f32]);
            }
        }
        EnvironmentMap {
            width: self.width,
            height: self.height,
            data,
        }
    }

    pub fn max_radiance(&self) -> f64 {
        self.data
            .iter()
            .flatten()
            .fold(0.0f64, |m, &c| m.max(c as f64))
    }
}

/// Unit direction of continuous texel coordinate `(x, y)`.
pub fn texel_direction(x: f64, y: f64, width: usize, height: usize) -> Vec3 {
    let u = x / width as f64;
    let v = y / height as f64;
    let phi = (u - 0.5) * 2.0 * PI;
    let theta = v * PI;
    let s = theta.sin();
    // inverse of u = atan2(x, -z)/2π + 0.5, v = acos(y)/π
    Vec3::new(s * phi.sin(), theta.cos(), -s * phi.cos())
}
