use super::Vec3;

/// Row-major H×W linear RGB image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f32; 3]>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize) -> Self {
        ImageBuffer {
            width,
            height,
            data: vec![[0.0; 3]; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for j in 0..height {
            for i in 0..width {
                data.push(f(i, j));
            }
        }
        ImageBuffer { width, height, data }
    }

    pub fn get(&self, i: usize, j: usize) -> [f32; 3] {
        self.data[j * self.width + i]
    }

    pub fn get_vec(&self, i: usize, j: usize) -> Vec3 {
        let p = self.get(i, j);
        Vec3::new(p[0] as f64, p[1] as f64, p[2] as f64)
    }

    pub fn set(&mut self, i: usize, j: usize, v: [f32; 3]) {
        self.data[j * self.width + i] = v;
    }

    pub fn pixel(&self, idx: usize) -> Vec3 {
        let p = self.data[idx];
        Vec3::new(p[0] as f64, p[1] as f64, p[2] as f64)
    }

    /// Bilinear lookup at continuous pixel coordinates (pixel centers at
    /// half-integers), clamped at the borders.
    pub fn sample_bilinear(&self, u: f64, v: f64) -> Vec3 {
        bilinear(self.width, self.height, u, v, |i, j| self.get_vec(i, j))
    }

    /// Per-pixel mean of the three channels.
    pub fn luminance(&self, idx: usize) -> f64 {
        let p = self.data[idx];
        (p[0] as f64 + p[1] as f64 + p[2] as f64) / 3.0
    }
}

pub fn to_rgb32(v: &Vec3) -> [f32; 3] {
    [v.x as f32, v.y as f32, v.z as f32]
}

/// H×W boolean mask, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskBuffer {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl MaskBuffer {
    pub fn new(width: usize, height: usize) -> Self {
        MaskBuffer {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        MaskBuffer {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[j * self.width + i]
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.data[j * self.width + i] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Bilinear lookup of the mask as a {0, 1} field.
    pub fn sample_bilinear(&self, u: f64, v: f64) -> f64 {
        bilinear(self.width, self.height, u, v, |i, j| if self.get(i, j) { 1.0 } else { 0.0 })
    }

    /// Intersection over union with another mask of the same size.
    pub fn iou(&self, other: &MaskBuffer) -> f64 {
        let mut inter = 0usize;
        let mut union = 0usize;
        for (a, b) in self.data.iter().zip(&other.data) {
            inter += (*a && *b) as usize;
            union += (*a || *b) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Clamped bilinear interpolation of a per-texel function at continuous
/// coordinates whose texel centers sit at half-integers.
pub(crate) fn bilinear<T>(width: usize, height: usize, u: f64, v: f64, at: impl Fn(usize, usize) -> T) -> T
where
    T: std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T>,
{
    let x = u - 0.5;
    let y = v - 0.5;
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let clamp = |k: f64, n: usize| k.clamp(0.0, (n - 1) as f64) as usize;
    let (i0, i1) = (clamp(x0, width), clamp(x0 + 1.0, width));
    let (j0, j1) = (clamp(y0, height), clamp(y0 + 1.0, height));
    at(i0, j0) * ((1.0 - fx) * (1.0 - fy))
        + at(i1, j0) * (fx * (1.0 - fy))
        + at(i0, j1) * ((1.0 - fx) * fy)
        + at(i1, j1) * (fx * fy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_hits_texel_centers_exactly() {
        let img = ImageBuffer::from_fn(3, 2, |i, j| [i as f32, j as f32, 0.0]);
        let v = img.sample_bilinear(1.5, 0.5);
        assert_eq!(v, Vec3::new(1.0, 0.0, 0.0));
        let mid = img.sample_bilinear(2.0, 1.0);
        assert!((mid - Vec3::new(1.5, 0.5, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn mask_iou() {
        let mut a = MaskBuffer::new(2, 2);
        let mut b = MaskBuffer::new(2, 2);
        a.set(0, 0, true);
        a.set(1, 0, true);
        b.set(1, 0, true);
        assert_eq!(a.iou(&b), 0.5);
    }
}
