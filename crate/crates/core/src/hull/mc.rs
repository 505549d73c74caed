//! Marching cubes over the occupancy field with a generated 256-case table.
//!
//! Each cube face contributes oriented segments between its crossing edges;
//! ambiguous faces cut off their inside corners. Segments are chained into
//! loops and fanned into triangles, so neighbouring cubes always agree on
//! shared faces and the output is closed.

use std::collections::HashMap;
use std::sync::OnceLock;

use super::OccupancyVolume;
use crate::geom::{TriangleMesh, Vec3};
use crate::{Error, Result};

const ISO: f64 = 0.5;

/// Corner `c` sits at `(c & 1, (c >> 1) & 1, (c >> 2) & 1)`.
fn corner_pos(c: usize) -> Vec3 {
    Vec3::new((c & 1) as f64, ((c >> 1) & 1) as f64, ((c >> 2) & 1) as f64)
}

/// The 12 cube edges as `(low corner, high corner, axis)`.
fn edges() -> [(usize, usize, usize); 12] {
    let mut out = [(0, 0, 0); 12];
    let mut n = 0;
    for axis in 0..3 {
        for c in 0..8 {
            if c & (1 << axis) == 0 {
                out[n] = (c, c | (1 << axis), axis);
                n += 1;
            }
        }
    }
    out
}

fn edge_between(a: usize, b: usize) -> usize {
    let (lo, hi) = (a.min(b), a.max(b));
    edges().iter().position(|&(x, y, _)| x == lo && y == hi).expect("adjacent corners")
}

/// Triangle ids below `CENTROID_BASE` are cube edges; `CENTROID_BASE + k`
/// is the centroid of loop `k`.
const CENTROID_BASE: usize = 12;

#[derive(Clone, Debug, Default)]
struct Case {
    tris: Vec<[u8; 3]>,
    loops: Vec<Vec<u8>>,
    /// Loops fanned around their centroid.
    centroids: Vec<usize>,
}

/// Triangulation for each of the 256 inside-corner masks.
fn case_table() -> &'static Vec<Case> {
    static TABLE: OnceLock<Vec<Case>> = OnceLock::new();
    TABLE.get_or_init(|| (0..256).map(build_case).collect())
}

fn build_case(case: usize) -> Case {
    let inside = |c: usize| case & (1 << c) != 0;
    let es = edges();
    let mid = |e: usize| 0.5 * (corner_pos(es[e].0) + corner_pos(es[e].1));
    // outside minus inside along a crossing edge
    let out_dir = |e: usize| {
        let (a, b, _) = es[e];
        if inside(a) {
            corner_pos(b) - corner_pos(a)
        } else {
            corner_pos(a) - corner_pos(b)
        }
    };

    let mut next = [usize::MAX; 12];
    for axis in 0..3 {
        let (e1, e2) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in 0..2 {
            let base = side << axis;
            let ring = [base, base | (1 << e1), base | (1 << e1) | (1 << e2), base | (1 << e2)];
            let ring_edges: [usize; 4] = std::array::from_fn(|k| edge_between(ring[k], ring[(k + 1) % 4]));
            let crossing: Vec<usize> = (0..4).filter(|&k| inside(ring[k]) != inside(ring[(k + 1) % 4])).collect();
            let segments: Vec<(usize, usize)> = match crossing.len() {
                0 => vec![],
                2 => vec![(ring_edges[crossing[0]], ring_edges[crossing[1]])],
                4 => (0..4)
                    .filter(|&k| inside(ring[k]))
                    .map(|k| (ring_edges[(k + 3) % 4], ring_edges[k]))
                    .collect(),
                _ => unreachable!("a face ring has an even number of sign changes"),
            };
            let mut face_out = Vec3::zeros();
            face_out[axis] = if side == 0 { -1.0 } else { 1.0 };
            for (p, q) in segments {
                let g = out_dir(p) + out_dir(q);
                let (p, q) = if (mid(q) - mid(p)).dot(&face_out.cross(&g)) > 0.0 { (q, p) } else { (p, q) };
                debug_assert_eq!(next[p], usize::MAX);
                next[p] = q;
            }
        }
    }

    let mut case = Case::default();
    let mut used = [false; 12];
    for start in 0..12 {
        if next[start] == usize::MAX || used[start] {
            continue;
        }
        let mut lp = vec![start];
        used[start] = true;
        let mut e = next[start];
        while e != start {
            used[e] = true;
            lp.push(e);
            e = next[e];
        }
        triangulate_loop(&lp, &mut case);
    }
    case
}

/// Fans a loop from a vertex whose diagonals avoid the cube faces; a diagonal
/// on a face would be repeated by the neighbouring cube. Loops without such a
/// vertex are fanned around their centroid instead.
fn triangulate_loop(lp: &[usize], case: &mut Case) {
    let n = lp.len();
    let fan_start = (0..n).find(|&s| (2..n - 1).all(|k| !share_face(lp[s], lp[(s + k) % n])));
    match fan_start {
        Some(s) => {
            for k in 1..n - 1 {
                case.tris.push([lp[s] as u8, lp[(s + k) % n] as u8, lp[(s + k + 1) % n] as u8]);
            }
        }
        None => {
            let c = (CENTROID_BASE + case.loops.len()) as u8;
            case.centroids.push(case.loops.len());
            for k in 0..n {
                case.tris.push([c, lp[k] as u8, lp[(k + 1) % n] as u8]);
            }
        }
    }
    case.loops.push(lp.iter().map(|&e| e as u8).collect());
}

/// Whether two cube edges lie on a common face.
fn share_face(e1: usize, e2: usize) -> bool {
    let es = edges();
    let faces = |e: usize| {
        let (a, _, axis) = es[e];
        (0..3).filter(move |&d| d != axis).map(move |d| (d, (a >> d) & 1))
    };
    faces(e1).any(|f| faces(e2).any(|g| f == g))
}

/// Extracts the iso-0.5 surface of the occupancy field, optionally after one
/// 3×3×3 box-filter pass. The grid is padded with empty voxels, so the result
/// is closed and outward-oriented.
pub fn marching_cubes(vol: &OccupancyVolume, smooth: bool) -> Result<TriangleMesh> {
    if vol.count() == 0 {
        return Err(Error::EmptyHull);
    }
    let r = vol.resolution;
    let n = r + 2;
    let mut field = vec![0.0f64; n * n * n];
    for k in 0..r {
        for j in 0..r {
            for i in 0..r {
                if vol.get(i, j, k) {
                    field[((k + 1) * n + j + 1) * n + i + 1] = 1.0;
                }
            }
        }
    }
    if smooth {
        field = box_filter(&field, n);
    }
    let h = vol.voxel_size();
    // padded grid point (x, y, z) is the center of voxel (x-1, y-1, z-1)
    let grid = ScalarGrid {
        dims: [n, n, n],
        origin: vol.bounds.min - 0.5 * h,
        spacing: h,
        values: field,
    };
    let mesh = extract_isosurface(&grid, ISO)?;
    if mesh.is_empty() {
        return Err(Error::EmptyHull);
    }
    Ok(mesh)
}

/// Samples on a regular lattice: point `(x, y, z)` is at
/// `origin + (x, y, z) ⊙ spacing`, stored x-fastest.
#[derive(Clone, Debug)]
pub struct ScalarGrid {
    pub dims: [usize; 3],
    pub origin: Vec3,
    pub spacing: Vec3,
    pub values: Vec<f64>,
}

impl ScalarGrid {
    pub fn from_fn(dims: [usize; 3], origin: Vec3, spacing: Vec3, f: impl Fn(&Vec3) -> f64 + Sync) -> Self {
        use rayon::prelude::*;
        let values = (0..dims[0] * dims[1] * dims[2])
            .into_par_iter()
            .map(|idx| {
                let (x, y, z) = (idx % dims[0], (idx / dims[0]) % dims[1], idx / (dims[0] * dims[1]));
                f(&(origin + Vec3::new(x as f64, y as f64, z as f64).component_mul(&spacing)))
            })
            .collect();
        ScalarGrid {
            dims,
            origin,
            spacing,
            values,
        }
    }

    fn at(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    fn point(&self, x: usize, y: usize, z: usize) -> Vec3 {
        self.origin + Vec3::new(x as f64, y as f64, z as f64).component_mul(&self.spacing)
    }
}

/// Surface separating `value > iso` (inside) from the rest, with normals
/// pointing toward lower values. Closed whenever the boundary samples are
/// all outside.
pub fn extract_isosurface(grid: &ScalarGrid, iso: f64) -> Result<TriangleMesh> {
    let [nx, ny, nz] = grid.dims;
    if grid.values.len() != nx * ny * nz || nx < 2 || ny < 2 || nz < 2 {
        return Err(Error::Argument("scalar grid needs at least 2 samples per axis".into()));
    }
    let table = case_table();
    let es = edges();
    let field = &grid.values;
    let mut positions: Vec<Vec3> = Vec::new();
    let mut vertex_of: HashMap<usize, u32> = HashMap::new();
    let mut indices: Vec<[u32; 3]> = Vec::new();
    for z in 0..nz - 1 {
        for y in 0..ny - 1 {
            for x in 0..nx - 1 {
                let corner = |c: usize| (x + (c & 1), y + ((c >> 1) & 1), z + ((c >> 2) & 1));
                let mut case = 0usize;
                for c in 0..8 {
                    let (cx, cy, cz) = corner(c);
                    if field[grid.at(cx, cy, cz)] > iso {
                        case |= 1 << c;
                    }
                }
                let entry = &table[case];
                if entry.tris.is_empty() {
                    continue;
                }
                let mut vid = |e: usize| -> u32 {
                    let (a, b, axis) = es[e];
                    let (ax, ay, az) = corner(a);
                    let key = grid.at(ax, ay, az) * 3 + axis;
                    *vertex_of.entry(key).or_insert_with(|| {
                        let (bx, by, bz) = corner(b);
                        let (va, vb) = (field[grid.at(ax, ay, az)], field[grid.at(bx, by, bz)]);
                        let t = (iso - va) / (vb - va);
                        let (pa, pb) = (grid.point(ax, ay, az), grid.point(bx, by, bz));
                        positions.push(pa + t * (pb - pa));
                        (positions.len() - 1) as u32
                    })
                };
                let mut local = [u32::MAX; CENTROID_BASE];
                for lp in &entry.loops {
                    for &e in lp {
                        local[e as usize] = vid(e as usize);
                    }
                }
                let mut centroid = vec![u32::MAX; entry.loops.len()];
                for &k in &entry.centroids {
                    let lp = &entry.loops[k];
                    let c = lp.iter().map(|&e| positions[local[e as usize] as usize]).sum::<Vec3>() / lp.len() as f64;
                    centroid[k] = positions.len() as u32;
                    positions.push(c);
                }
                let id = |k: u8| {
                    let k = k as usize;
                    if k < CENTROID_BASE {
                        local[k]
                    } else {
                        centroid[k - CENTROID_BASE]
                    }
                };
                for t in &entry.tris {
                    indices.push([id(t[0]), id(t[1]), id(t[2])]);
                }
            }
        }
    }
    TriangleMesh::new(positions, indices)
}

fn box_filter(field: &[f64], n: usize) -> Vec<f64> {
    let at = |x: usize, y: usize, z: usize| (z * n + y) * n + x;
    // separable 3-tap mean along each axis; samples outside the grid are 0
    let mut cur = field.to_vec();
    for axis in 0..3 {
        let mut out = vec![0.0; cur.len()];
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    let p = [x, y, z];
                    let mut s = cur[at(x, y, z)];
                    if p[axis] > 0 {
                        let mut q = p;
                        q[axis] -= 1;
                        s += cur[at(q[0], q[1], q[2])];
                    }
                    if p[axis] + 1 < n {
                        let mut q = p;
                        q[axis] += 1;
                        s += cur[at(q[0], q[1], q[2])];
                    }
                    out[at(x, y, z)] = s / 3.0;
                }
            }
        }
        cur = out;
    }
    cur
}
