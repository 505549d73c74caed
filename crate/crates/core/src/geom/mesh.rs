use std::collections::HashMap;

use rand::Rng;

use super::{Aabb, Mat3, Vec3};
use crate::{Error, Result};

/// Indexed triangle surface with per-vertex unit normals.
#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh {
    pub positions: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub indices: Vec<[u32; 3]>,
}

impl TriangleMesh {
    /// Builds a mesh and computes area-weighted vertex normals.
    pub fn new(positions: Vec<Vec3>, indices: Vec<[u32; 3]>) -> Result<Self> {
        let n = positions.len() as u32;
        if let Some(t) = indices.iter().find(|t| t.iter().any(|&i| i >= n)) {
            return Err(Error::Argument(format!("triangle {t:?} indexes past {n} vertices")));
        }
        let mut mesh = TriangleMesh {
            normals: vec![Vec3::zeros(); positions.len()],
            positions,
            indices,
        };
        mesh.recompute_normals();
        Ok(mesh)
    }

    /// Builds a mesh with caller-supplied normals (renormalized).
    pub fn with_normals(positions: Vec<Vec3>, normals: Vec<Vec3>, indices: Vec<[u32; 3]>) -> Result<Self> {
        if normals.len() != positions.len() {
            return Err(Error::Argument("normal count differs from vertex count".into()));
        }
        let mut mesh = TriangleMesh::new(positions, indices)?;
        for (dst, src) in mesh.normals.iter_mut().zip(normals) {
            let len = src.norm();
            if len > 0.0 {
                *dst = src / len;
            }
        }
        Ok(mesh)
    }

    pub fn num_vertices(&self) -> usize {
        self.positions.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn triangle(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.indices[f];
        [self.positions[a as usize], self.positions[b as usize], self.positions[c as usize]]
    }

    /// Unnormalized face normal (twice the area).
    pub fn face_cross(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.triangle(f);
        (b - a).cross(&(c - a))
    }

    pub fn face_area(&self, f: usize) -> f64 {
        0.5 * self.face_cross(f).norm()
    }

    pub fn area(&self) -> f64 {
        (0..self.num_triangles()).map(|f| self.face_area(f)).sum()
    }

    /// Area-weighted vertex normals. Vertices without incident area keep
    /// a zero normal replaced by +Z.
    pub fn recompute_normals(&mut self) {
        let mut acc = vec![Vec3::zeros(); self.positions.len()];
        for f in 0..self.indices.len() {
            let n = self.face_cross(f);
            for &v in &self.indices[f] {
                acc[v as usize] += n;
            }
        }
        for (dst, a) in self.normals.iter_mut().zip(acc) {
            let len = a.norm();
            *dst = if len > 0.0 { a / len } else { Vec3::z() };
        }
    }

    /// Signed enclosed volume; positive for closed outward-oriented meshes.
    pub fn signed_volume(&self) -> f64 {
        let mut v = 0.0;
        for f in 0..self.indices.len() {
            let [a, b, c] = self.triangle(f);
            v += a.dot(&b.cross(&c));
        }
        v / 6.0
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(&self.positions)
    }

    /// Counts how many triangles use each undirected edge.
    pub fn edge_counts(&self) -> HashMap<(u32, u32), usize> {
        let mut counts = HashMap::new();
        for t in &self.indices {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Every edge is shared by exactly two triangles.
    pub fn is_watertight(&self) -> bool {
        !self.indices.is_empty() && self.edge_counts().values().all(|&c| c == 2)
    }

    /// Every directed edge appears once and its twin once, i.e. closed and
    /// consistently oriented.
    pub fn is_consistently_oriented(&self) -> bool {
        let mut directed = HashMap::new();
        for t in &self.indices {
            for k in 0..3 {
                *directed.entry((t[k], t[(k + 1) % 3])).or_insert(0usize) += 1;
            }
        }
        directed
            .iter()
            .all(|(&(a, b), &c)| c == 1 && directed.get(&(b, a)) == Some(&1))
    }

    /// V - E + F over referenced vertices.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.positions.len()];
        for t in &self.indices {
            for &v in t {
                used[v as usize] = true;
            }
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        let e = self.edge_counts().len() as i64;
        v - e + self.indices.len() as i64
    }

    /// Applies `p -> r p + t` to positions and `n -> r n` to normals.
    pub fn transformed(&self, r: &Mat3, t: &Vec3) -> TriangleMesh {
        TriangleMesh {
            positions: self.positions.iter().map(|p| r * p + t).collect(),
            normals: self.normals.iter().map(|n| r * n).collect(),
            indices: self.indices.clone(),
        }
    }

    /// Reverses triangle winding and normals.
    pub fn flipped(&self) -> TriangleMesh {
        TriangleMesh {
            positions: self.positions.clone(),
            normals: self.normals.iter().map(|n| -n).collect(),
            indices: self.indices.iter().map(|&[a, b, c]| [a, c, b]).collect(),
        }
    }

    /// Copy with three private vertices per face, so every hit sees the face normal.
    pub fn with_flat_normals(&self) -> TriangleMesh {
        let mut positions = Vec::with_capacity(3 * self.num_triangles());
        let mut normals = Vec::with_capacity(3 * self.num_triangles());
        let mut indices = Vec::with_capacity(self.num_triangles());
        for f in 0..self.num_triangles() {
            let n = self.face_cross(f).normalize();
            let base = positions.len() as u32;
            positions.extend(self.triangle(f));
            normals.extend([n; 3]);
            indices.push([base, base + 1, base + 2]);
        }
        TriangleMesh {
            positions,
            normals,
            indices,
        }
    }

    /// Drops vertices not referenced by any triangle.
    pub fn compacted(&self) -> TriangleMesh {
        let mut remap = vec![u32::MAX; self.positions.len()];
        let mut positions = Vec::new();
        let mut normals = Vec::new();
        let mut indices = Vec::with_capacity(self.indices.len());
        for t in &self.indices {
            let mut nt = [0u32; 3];
            for k in 0..3 {
                let v = t[k] as usize;
                if remap[v] == u32::MAX {
                    remap[v] = positions.len() as u32;
                    positions.push(self.positions[v]);
                    normals.push(self.normals[v]);
                }
                nt[k] = remap[v];
            }
            indices.push(nt);
        }
        TriangleMesh {
            positions,
            normals,
            indices,
        }
    }

    /// Barycentric-interpolated, renormalized vertex normal on face `f`.
    pub fn interpolated_normal(&self, f: usize, u: f64, v: f64) -> Vec3 {
        let [a, b, c] = self.indices[f];
        let n = self.normals[a as usize] * (1.0 - u - v) + self.normals[b as usize] * u + self.normals[c as usize] * v;
        let len = n.norm();
        if len > 0.0 {
            n / len
        } else {
            self.face_cross(f).normalize()
        }
    }

    /// Cumulative face areas for area-weighted sampling.
    pub fn area_cdf(&self) -> Result<Vec<f64>> {
        let mut cdf = Vec::with_capacity(self.indices.len());
        let mut total = 0.0;
        for f in 0..self.indices.len() {
            total += self.face_area(f);
            cdf.push(total);
        }
        if !(total > 0.0) {
            return Err(Error::Degenerate("mesh has zero surface area".into()));
        }
        Ok(cdf)
    }

    /// Draws `n` area-uniform surface samples: `(position, face, u, v)`.
    pub fn sample_surface<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Vec<SurfaceSample>> {
        let cdf = self.area_cdf()?;
        let total = *cdf.last().unwrap();
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let x = rng.random::<f64>() * total;
            let f = cdf.partition_point(|&c| c <= x).min(cdf.len() - 1);
            let (r1, r2): (f64, f64) = (rng.random(), rng.random());
            let s = r1.sqrt();
            let u = s * (1.0 - r2);
            let v = s * r2;
            let [a, b, c] = self.triangle(f);
            let p = a * (1.0 - u - v) + b * u + c * v;
            out.push(SurfaceSample {
                position: p,
                face: f,
                u,
                v,
                face_normal: self.face_cross(f).normalize(),
                normal: self.interpolated_normal(f, u, v),
            });
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceSample {
    pub position: Vec3,
    pub face: usize,
    pub u: f64,
    pub v: f64,
    pub face_normal: Vec3,
    /// Interpolated vertex normal.
    pub normal: Vec3,
}

/// Closest point to `p` on triangle `abc`, with barycentrics `(u, v)` of
/// `b` and `c`.
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> (Vec3, f64, f64) {
    // Ericson, Real-Time Collision Detection, 5.1.5
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, 0.0, 0.0);
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, 1.0, 0.0);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, v, 0.0);
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, 0.0, 1.0);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, 0.0, w);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, 1.0 - w, w);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, v, w)
}

/// Regular octahedron with vertices on the unit sphere.
pub fn octahedron() -> TriangleMesh {
    let positions = vec![
        Vec3::x(),
        -Vec3::x(),
        Vec3::y(),
        -Vec3::y(),
        Vec3::z(),
        -Vec3::z(),
    ];
    let indices = vec![
        [0, 2, 4],
        [2, 1, 4],
        [1, 3, 4],
        [3, 0, 4],
        [2, 0, 5],
        [1, 2, 5],
        [3, 1, 5],
        [0, 3, 5],
    ];
    TriangleMesh::new(positions, indices).expect("static octahedron")
}

/// Icosphere of the given radius; `subdivisions` midpoint splits projected
/// back onto the sphere, with exact radial normals.
pub fn icosphere(radius: f64, subdivisions: usize) -> TriangleMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut positions: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut indices: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut mid: HashMap<(u32, u32), u32> = HashMap::new();
        let mut next = Vec::with_capacity(indices.len() * 4);
        let mut midpoint = |a: u32, b: u32, positions: &mut Vec<Vec3>| -> u32 {
            let key = (a.min(b), a.max(b));
            *mid.entry(key).or_insert_with(|| {
                let p = (positions[a as usize] + positions[b as usize]).normalize();
                positions.push(p);
                (positions.len() - 1) as u32
            })
        };
        for &[a, b, c] in &indices {
            let ab = midpoint(a, b, &mut positions);
            let bc = midpoint(b, c, &mut positions);
            let ca = midpoint(c, a, &mut positions);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        indices = next;
    }
    let normals = positions.clone();
    let positions = positions.into_iter().map(|p| p * radius).collect();
    TriangleMesh {
        positions,
        normals,
        indices,
    }
}
