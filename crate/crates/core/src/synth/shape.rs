use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geom::{rotation_between, Aabb, Mat3, TriangleMesh, Vec3};
use crate::hull::{extract_isosurface, loop_subdivide, ScalarGrid};
use crate::{Error, Result};

/// Implicit building block with an (approximate) signed distance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    Sphere { center: Vec3, radius: f64 },
    Ellipsoid { center: Vec3, radii: Vec3, rotation: Mat3 },
    Capsule { a: Vec3, b: Vec3, radius: f64 },
}

impl Primitive {
    pub fn sdf(&self, p: &Vec3) -> f64 {
        match self {
            Primitive::Sphere { center, radius } => (p - center).norm() - radius,
            Primitive::Ellipsoid { center, radii, rotation } => {
                let q = rotation.transpose() * (p - center);
                let k0 = q.component_div(radii).norm();
                let k1 = q.component_div(&radii.component_mul(radii)).norm();
                if k1 == 0.0 {
                    -radii.min()
                } else {
                    k0 * (k0 - 1.0) / k1
                }
            }
            Primitive::Capsule { a, b, radius } => {
                let ab = b - a;
                let t = ((p - a).dot(&ab) / ab.norm_squared().max(f64::MIN_POSITIVE)).clamp(0.0, 1.0);
                (p - (a + t * ab)).norm() - radius
            }
        }
    }

    pub fn bounds(&self) -> Aabb {
        match self {
            Primitive::Sphere { center, radius } => Aabb {
                min: center - Vec3::repeat(*radius),
                max: center + Vec3::repeat(*radius),
            },
            Primitive::Ellipsoid { center, radii, .. } => Aabb {
                min: center - Vec3::repeat(radii.max()),
                max: center + Vec3::repeat(radii.max()),
            },
            Primitive::Capsule { a, b, radius } => Aabb {
                min: a.inf(b) - Vec3::repeat(*radius),
                max: a.sup(b) + Vec3::repeat(*radius),
            },
        }
    }

    fn size(&self) -> f64 {
        match self {
            Primitive::Sphere { radius, .. } => *radius,
            Primitive::Ellipsoid { radii, .. } => radii.mean(),
            Primitive::Capsule { a, b, radius } => radius + 0.5 * (b - a).norm(),
        }
    }

    fn center(&self) -> Vec3 {
        match self {
            Primitive::Sphere { center, .. } | Primitive::Ellipsoid { center, .. } => *center,
            Primitive::Capsule { a, b, .. } => 0.5 * (a + b),
        }
    }
}

/// Polynomial smooth minimum with blend radius `k`.
pub fn smooth_min(a: f64, b: f64, k: f64) -> f64 {
    if k <= 0.0 {
        return a.min(b);
    }
    let h = (k - (a - b).abs()).max(0.0) / k;
    a.min(b) - 0.25 * h * h * k
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapeParams {
    /// Samples per axis of the polygonization grid.
    pub resolution: usize,
    pub min_primitives: usize,
    pub max_primitives: usize,
    pub blend: f64,
    pub subdivisions: usize,
    /// Fixed primitives; random ones are drawn when absent.
    pub primitives: Option<Vec<Primitive>>,
}

impl Default for ShapeParams {
    fn default() -> Self {
        ShapeParams {
            resolution: 128,
            min_primitives: 3,
            max_primitives: 8,
            blend: 0.15,
            subdivisions: 1,
            primitives: None,
        }
    }
}

fn random_unit<R: Rng>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Random chain of overlapping primitives: each new one is centered near the
/// surface of an earlier one so the union stays connected.
pub fn random_primitives(seed: u64, params: &ShapeParams) -> Vec<Primitive> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(params.min_primitives..=params.max_primitives.max(params.min_primitives));
    let mut out: Vec<Primitive> = Vec::with_capacity(n);
    for k in 0..n {
        let center = if k == 0 {
            Vec3::zeros()
        } else {
            let parent = &out[rng.random_range(0..k)];
            parent.center() + random_unit(&mut rng) * parent.size() * rng.random_range(0.4..0.8)
        };
        let p = match rng.random_range(0..3) {
            0 => Primitive::Sphere {
                center,
                radius: rng.random_range(0.25..0.5),
            },
            1 => Primitive::Ellipsoid {
                center,
                radii: Vec3::new(
                    rng.random_range(0.2..0.5),
                    rng.random_range(0.2..0.5),
                    rng.random_range(0.2..0.5),
                ),
                rotation: rotation_between(&Vec3::z(), &random_unit(&mut rng)),
            },
            _ => {
                let axis = random_unit(&mut rng) * rng.random_range(0.15..0.4);
                Primitive::Capsule {
                    a: center - axis,
                    b: center + axis,
                    radius: rng.random_range(0.15..0.3),
                }
            }
        };
        out.push(p);
    }
    out
}

/// Signed distance of the smooth union.
pub fn union_sdf(prims: &[Primitive], blend: f64, p: &Vec3) -> f64 {
    prims
        .iter()
        .map(|q| q.sdf(p))
        .reduce(|a, b| smooth_min(a, b, blend))
        .unwrap_or(f64::INFINITY)
}

/// Procedural closed shape: smooth union of primitives, polygonized and
/// Loop-subdivided.
pub fn gen_shape(seed: u64, params: &ShapeParams) -> Result<TriangleMesh> {
    if params.resolution < 8 {
        return Err(Error::Argument("shape resolution must be at least 8".into()));
    }
    let prims = match &params.primitives {
        Some(p) if p.is_empty() => return Err(Error::Argument("empty primitive list".into())),
        Some(p) => p.clone(),
        None => random_primitives(seed, params),
    };
    let mut b = Aabb::empty();
    for p in &prims {
        b = b.union(&p.bounds());
    }
    let half = 0.5 * b.extent().max() + params.blend + 0.05;
    let origin = b.center() - Vec3::repeat(half);
    let h = 2.0 * half / (params.resolution - 1) as f64;
    let grid = ScalarGrid::from_fn([params.resolution; 3], origin, Vec3::repeat(h), |p| {
        -union_sdf(&prims, params.blend, p)
    });
    let mesh = extract_isosurface(&grid, 0.0)?;
    if mesh.is_empty() {
        return Err(Error::Degenerate("shape polygonized to an empty mesh".into()));
    }
    loop_subdivide(&mesh, params.subdivisions)
}
