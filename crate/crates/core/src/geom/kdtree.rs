use kiddo::{ImmutableKdTree, SquaredEuclidean};

use super::Vec3;

/// Nearest-neighbour index over a fixed point set.
pub struct PointIndex {
    tree: ImmutableKdTree<f64, 3>,
    len: usize,
}

impl PointIndex {
    pub fn new(points: &[Vec3]) -> Self {
        let entries: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        let tree = ImmutableKdTree::new_from_slice(&entries).expect("kd-tree construction");
        PointIndex {
            tree,
            len: points.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Index of and squared distance to the nearest point.
    pub fn nearest(&self, p: &Vec3) -> (usize, f64) {
        let r = self
            .tree
            .query(&[p.x, p.y, p.z])
            .nearest_one::<SquaredEuclidean<f64>>()
            .execute();
        (r.item as usize, r.distance)
    }

    /// Squared distances to the `k` nearest points, ascending.
    pub fn nearest_n_distances(&self, p: &Vec3, k: usize) -> Vec<f64> {
        let Some(k) = std::num::NonZeroUsize::new(k.min(self.len)) else {
            return Vec::new();
        };
        self.tree
            .query(&[p.x, p.y, p.z])
            .nearest_n::<SquaredEuclidean<f64>>(k)
            .execute()
            .into_iter()
            .map(|r| r.distance)
            .collect()
    }
}

/// Exhaustive nearest neighbour, first index on ties.
pub fn nearest_brute_force(points: &[Vec3], p: &Vec3) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for (i, q) in points.iter().enumerate() {
        let d = (q - p).norm_squared();
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}
