//! Bounding-volume hierarchy over the triangles of one mesh.

use super::mesh::{closest_point_on_triangle, TriangleMesh};
use super::{Aabb, Ray, Vec3};

/// Anything rays can be traced against.
pub trait RayCast: Sync {
    /// Nearest hit with `t_min < t < t_max`.
    fn cast(&self, ray: &Ray, t_min: f64, t_max: f64) -> Option<Hit>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub point: Vec3,
    /// Smooth (interpolated, renormalized) unit normal.
    pub normal: Vec3,
    pub face: usize,
}

#[derive(Clone, Debug)]
enum Node {
    Leaf { bounds: Aabb, start: u32, count: u32 },
    Inner { bounds: Aabb, left: u32, right: u32 },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

const LEAF_SIZE: usize = 4;
const SAH_BINS: usize = 12;

/// Immutable BVH built with binned SAH splits. Owns a copy of the mesh so
/// that hits can report interpolated normals.
#[derive(Clone, Debug)]
pub struct AccelIndex {
    mesh: TriangleMesh,
    nodes: Vec<Node>,
    /// Triangle ids in leaf order.
    order: Vec<u32>,
}

impl AccelIndex {
    pub fn build(mesh: &TriangleMesh) -> Self {
        let n = mesh.num_triangles();
        let bounds: Vec<Aabb> = (0..n).map(|f| Aabb::from_points(&mesh.triangle(f))).collect();
        let centroids: Vec<Vec3> = bounds.iter().map(|b| b.center()).collect();
        let mut order: Vec<u32> = (0..n as u32).collect();
        let mut nodes = Vec::with_capacity(2 * n / LEAF_SIZE + 1);
        if n > 0 {
            build_recursive(&mut nodes, &mut order, 0, n, &bounds, &centroids);
        }
        AccelIndex {
            mesh: mesh.clone(),
            nodes,
            order,
        }
    }

    pub fn mesh(&self) -> &TriangleMesh {
        &self.mesh
    }

    pub fn bounds(&self) -> Aabb {
        self.nodes.first().map(|n| *n.bounds()).unwrap_or_else(Aabb::empty)
    }

    /// Nearest intersection with `t > t_min`.
    pub fn intersect(&self, ray: &Ray, t_min: f64) -> Option<Hit> {
        self.cast(ray, t_min, f64::INFINITY)
    }

    /// Whether anything is hit in `(t_min, t_max)`.
    pub fn occluded(&self, ray: &Ray, t_min: f64, t_max: f64) -> bool {
        if self.nodes.is_empty() {
            return false;
        }
        let inv = ray.dir.map(|c| 1.0 / c);
        let mut stack = vec![0u32];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni as usize];
            if node.bounds().intersect(ray, &inv, t_min, t_max).is_none() {
                continue;
            }
            match *node {
                Node::Leaf { start, count, .. } => {
                    for &f in &self.order[start as usize..(start + count) as usize] {
                        if let Some((t, _, _)) = intersect_triangle(&self.mesh, f as usize, ray) {
                            if t > t_min && t < t_max {
                                return true;
                            }
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    stack.push(left);
                    stack.push(right);
                }
            }
        }
        false
    }

    /// Closest surface point to `p`: `(squared distance, point, face, u, v)`.
    pub fn closest_point(&self, p: &Vec3) -> Option<ClosestPoint> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = ClosestPoint {
            distance_squared: f64::INFINITY,
            point: *p,
            face: usize::MAX,
            u: 0.0,
            v: 0.0,
        };
        let mut stack = vec![0u32];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni as usize];
            if node.bounds().distance_squared(p) > best.distance_squared {
                continue;
            }
            match *node {
                Node::Leaf { start, count, .. } => {
                    for &f in &self.order[start as usize..(start + count) as usize] {
                        let [a, b, c] = self.mesh.triangle(f as usize);
                        let (q, u, v) = closest_point_on_triangle(p, &a, &b, &c);
                        let d2 = (q - p).norm_squared();
                        let f = f as usize;
                        if d2 < best.distance_squared || (d2 == best.distance_squared && f < best.face) {
                            best = ClosestPoint {
                                distance_squared: d2,
                                point: q,
                                face: f,
                                u,
                                v,
                            };
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    let dl = self.nodes[left as usize].bounds().distance_squared(p);
                    let dr = self.nodes[right as usize].bounds().distance_squared(p);
                    // visit the nearer child first
                    if dl < dr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
        Some(best)
    }

    /// Checks the structural invariants: every triangle referenced exactly
    /// once and every node's bounds contain its children.
    pub fn validate(&self) -> bool {
        let mut seen = vec![0u32; self.mesh.num_triangles()];
        for &f in &self.order {
            seen[f as usize] += 1;
        }
        if seen.iter().any(|&c| c != 1) {
            return false;
        }
        self.nodes.iter().all(|node| match *node {
            Node::Leaf { bounds, start, count } => self.order[start as usize..(start + count) as usize]
                .iter()
                .all(|&f| bounds.contains_box(&Aabb::from_points(&self.mesh.triangle(f as usize)))),
            Node::Inner { bounds, left, right } => {
                bounds.contains_box(self.nodes[left as usize].bounds())
                    && bounds.contains_box(self.nodes[right as usize].bounds())
            }
        })
    }

    fn make_hit(&self, ray: &Ray, f: usize, t: f64, u: f64, v: f64) -> Hit {
        Hit {
            t,
            point: ray.at(t),
            normal: self.mesh.interpolated_normal(f, u, v),
            face: f,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClosestPoint {
    pub distance_squared: f64,
    pub point: Vec3,
    pub face: usize,
    pub u: f64,
    pub v: f64,
}

impl RayCast for AccelIndex {
    fn cast(&self, ray: &Ray, t_min: f64, t_max: f64) -> Option<Hit> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv = ray.dir.map(|c| 1.0 / c);
        let mut best: Option<(f64, usize, f64, f64)> = None;
        let mut t_far = t_max;
        let mut stack: Vec<u32> = Vec::with_capacity(64);
        stack.push(0);
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni as usize];
            // Ties at t_far must still be visited to resolve face-id ties.
            if node.bounds().intersect(ray, &inv, t_min, t_far).is_none() {
                continue;
            }
            match *node {
                Node::Leaf { start, count, .. } => {
                    for &f in &self.order[start as usize..(start + count) as usize] {
                        let f = f as usize;
                        if let Some((t, u, v)) = intersect_triangle(&self.mesh, f, ray) {
                            if t > t_min && t < t_max && closer(t, f, best) {
                                best = Some((t, f, u, v));
                                t_far = t;
                            }
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    stack.push(left);
                    stack.push(right);
                }
            }
        }
        best.map(|(t, f, u, v)| self.make_hit(ray, f, t, u, v))
    }
}

fn closer(t: f64, f: usize, best: Option<(f64, usize, f64, f64)>) -> bool {
    match best {
        None => true,
        Some((bt, bf, _, _)) => t < bt || (t == bt && f < bf),
    }
}

/// Möller–Trumbore; returns `(t, u, v)` for any `t` (caller filters range).
pub fn intersect_triangle(mesh: &TriangleMesh, f: usize, ray: &Ray) -> Option<(f64, f64, f64)> {
    let [a, b, c] = mesh.triangle(f);
    let e1 = b - a;
    let e2 = c - a;
    let p = ray.dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = ray.origin - a;
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = ray.dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    Some((t, u, v))
}

/// Exhaustive nearest-hit scan over all triangles, with the same tie rule as
/// the BVH (smaller `t`, then smaller face id).
pub fn intersect_brute_force(mesh: &TriangleMesh, ray: &Ray, t_min: f64) -> Option<Hit> {
    let mut best: Option<(f64, usize, f64, f64)> = None;
    for f in 0..mesh.num_triangles() {
        if let Some((t, u, v)) = intersect_triangle(mesh, f, ray) {
            if t > t_min && closer(t, f, best) {
                best = Some((t, f, u, v));
            }
        }
    }
    best.map(|(t, f, u, v)| Hit {
        t,
        point: ray.at(t),
        normal: mesh.interpolated_normal(f, u, v),
        face: f,
    })
}

fn build_recursive(
    nodes: &mut Vec<Node>,
    order: &mut [u32],
    start: usize,
    end: usize,
    bounds: &[Aabb],
    centroids: &[Vec3],
) -> u32 {
    let node_bounds = order[start..end]
        .iter()
        .fold(Aabb::empty(), |acc, &f| acc.union(&bounds[f as usize]));
    let idx = nodes.len() as u32;
    let count = end - start;
    if count <= LEAF_SIZE {
        nodes.push(Node::Leaf {
            bounds: node_bounds,
            start: start as u32,
            count: count as u32,
        });
        return idx;
    }
    let cb = Aabb::from_points(order[start..end].iter().map(|&f| &centroids[f as usize]));
    let ext = cb.extent();
    let axis = if ext.x >= ext.y && ext.x >= ext.z {
        0
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    let mid = if ext[axis] <= 0.0 {
        start + count / 2
    } else {
        sah_split(order, start, end, axis, &cb, bounds, centroids)
            .unwrap_or_else(|| median_split(order, start, end, axis, centroids))
    };
    nodes.push(Node::Leaf {
        bounds: node_bounds,
        start: 0,
        count: 0,
    });
    let left = build_recursive(nodes, order, start, mid, bounds, centroids);
    let right = build_recursive(nodes, order, mid, end, bounds, centroids);
    nodes[idx as usize] = Node::Inner {
        bounds: node_bounds,
        left,
        right,
    };
    idx
}

fn median_split(order: &mut [u32], start: usize, end: usize, axis: usize, centroids: &[Vec3]) -> usize {
    let mid = start + (end - start) / 2;
    order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
        centroids[a as usize][axis]
            .total_cmp(&centroids[b as usize][axis])
            .then(a.cmp(&b))
    });
    mid
}

fn sah_split(
    order: &mut [u32],
    start: usize,
    end: usize,
    axis: usize,
    cb: &Aabb,
    bounds: &[Aabb],
    centroids: &[Vec3],
) -> Option<usize> {
    let lo = cb.min[axis];
    let scale = SAH_BINS as f64 / (cb.max[axis] - lo);
    let bin_of = |f: u32| (((centroids[f as usize][axis] - lo) * scale) as usize).min(SAH_BINS - 1);
    let mut bin_bounds = [Aabb::empty(); SAH_BINS];
    let mut bin_count = [0usize; SAH_BINS];
    for &f in &order[start..end] {
        let b = bin_of(f);
        bin_bounds[b] = bin_bounds[b].union(&bounds[f as usize]);
        bin_count[b] += 1;
    }
    let mut best_cost = f64::INFINITY;
    let mut best_split = 0;
    for split in 1..SAH_BINS {
        let (mut lb, mut lc) = (Aabb::empty(), 0);
        for k in 0..split {
            lb = lb.union(&bin_bounds[k]);
            lc += bin_count[k];
        }
        let (mut rb, mut rc) = (Aabb::empty(), 0);
        for k in split..SAH_BINS {
            rb = rb.union(&bin_bounds[k]);
            rc += bin_count[k];
        }
        if lc == 0 || rc == 0 {
            continue;
        }
        let cost = lb.surface_area() * lc as f64 + rb.surface_area() * rc as f64;
        if cost < best_cost {
            best_cost = cost;
            best_split = split;
        }
    }
    if best_split == 0 {
        return None;
    }
    let slice = &mut order[start..end];
    let mut i = 0;
    for j in 0..slice.len() {
        if bin_of(slice[j]) < best_split {
            slice.swap(i, j);
            i += 1;
        }
    }
    Some(start + i)
}
