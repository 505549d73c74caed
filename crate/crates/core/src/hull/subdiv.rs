use std::collections::HashMap;

use crate::geom::{TriangleMesh, Vec3};
use crate::{Error, Result};

/// Applies `iterations` rounds of Loop subdivision.
pub fn loop_subdivide(mesh: &TriangleMesh, iterations: usize) -> Result<TriangleMesh> {
    let mut cur = mesh.clone();
    for _ in 0..iterations {
        cur = loop_once(&cur)?;
    }
    Ok(cur)
}

struct Edge {
    a: u32,
    b: u32,
    opposite: [u32; 2],
    faces: usize,
}

/// Loop's vertex weight for valence `n`.
pub fn loop_beta(n: usize) -> f64 {
    if n == 3 {
        3.0 / 16.0
    } else {
        3.0 / (8.0 * n as f64)
    }
}

fn loop_once(mesh: &TriangleMesh) -> Result<TriangleMesh> {
    let nv = mesh.num_vertices();
    let mut edges: Vec<Edge> = Vec::new();
    let mut edge_of: HashMap<(u32, u32), usize> = HashMap::new();
    let mut face_edges: Vec<[usize; 3]> = Vec::with_capacity(mesh.num_triangles());
    for tri in &mesh.indices {
        let mut fe = [0; 3];
        for k in 0..3 {
            let (a, b, c) = (tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]);
            let key = (a.min(b), a.max(b));
            let e = *edge_of.entry(key).or_insert_with(|| {
                edges.push(Edge {
                    a: key.0,
                    b: key.1,
                    opposite: [u32::MAX; 2],
                    faces: 0,
                });
                edges.len() - 1
            });
            let edge = &mut edges[e];
            if edge.faces >= 2 {
                return Err(Error::NonManifold(format!("edge {}-{} has more than two faces", key.0, key.1)));
            }
            edge.opposite[edge.faces] = c;
            edge.faces += 1;
            fe[k] = e;
        }
        face_edges.push(fe);
    }
    if let Some(e) = edges.iter().find(|e| e.faces != 2) {
        return Err(Error::NonManifold(format!("edge {}-{} is a boundary edge", e.a, e.b)));
    }

    let p = &mesh.positions;
    let mut neighbour_sum = vec![Vec3::zeros(); nv];
    let mut valence = vec![0usize; nv];
    for e in &edges {
        neighbour_sum[e.a as usize] += p[e.b as usize];
        neighbour_sum[e.b as usize] += p[e.a as usize];
        valence[e.a as usize] += 1;
        valence[e.b as usize] += 1;
    }
    let mut positions: Vec<Vec3> = (0..nv)
        .map(|v| {
            let n = valence[v];
            if n == 0 {
                return p[v];
            }
            let beta = loop_beta(n);
            (1.0 - n as f64 * beta) * p[v] + beta * neighbour_sum[v]
        })
        .collect();
    positions.extend(edges.iter().map(|e| {
        0.375 * (p[e.a as usize] + p[e.b as usize])
            + 0.125 * (p[e.opposite[0] as usize] + p[e.opposite[1] as usize])
    }));

    let mut indices = Vec::with_capacity(4 * mesh.num_triangles());
    for (tri, fe) in mesh.indices.iter().zip(&face_edges) {
        let [a, b, c] = *tri;
        let m = fe.map(|e| (nv + e) as u32); // ab, bc, ca
        indices.push([a, m[0], m[2]]);
        indices.push([b, m[1], m[0]]);
        indices.push([c, m[2], m[1]]);
        indices.push([m[0], m[1], m[2]]);
    }
    TriangleMesh::new(positions, indices)
}
