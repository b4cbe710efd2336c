//! Bounding volume hierarchy over mesh triangles for nearest-hit ray casts.

use std::cmp::Ordering;

use crate::geom::{Aabb, Point3, TriangleMesh, Vec3};
use crate::Real;

const LEAF_SIZE: usize = 4;

#[derive(Clone, Debug)]
struct Node<T> {
    bounds: Aabb<T>,
    /// Leaf: `[start, start + count)` into `order`. Interior: `count == 0`,
    /// children at `start` and `start + 1`.
    start: u32,
    count: u32,
}

#[derive(Clone, Debug)]
pub struct Bvh<'m, T> {
    mesh: &'m TriangleMesh<T>,
    nodes: Vec<Node<T>>,
    order: Vec<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit<T> {
    pub t: T,
    pub triangle: u32,
}

impl<'m, T: Real> Bvh<'m, T> {
    pub fn build(mesh: &'m TriangleMesh<T>) -> Self {
        let n = mesh.triangles.len();
        let mut bvh = Bvh {
            mesh,
            nodes: Vec::with_capacity(2 * n / LEAF_SIZE + 1),
            order: (0..n as u32).collect(),
        };
        let centroids: Vec<Point3<T>> = (0..n)
            .map(|t| {
                let [a, b, c] = mesh.corners(t);
                (a + b + c) / T::of(3.0)
            })
            .collect();
        bvh.nodes.push(Node {
            bounds: Aabb::empty(),
            start: 0,
            count: 0,
        });
        if n > 0 {
            bvh.build_node(0, 0, n, &centroids);
        }
        bvh
    }

    fn tri_bounds(&self, t: u32) -> Aabb<T> {
        Aabb::from_points(&self.mesh.corners(t as usize))
    }

    fn build_node(&mut self, node: usize, start: usize, end: usize, centroids: &[Point3<T>]) {
        let mut bounds = Aabb::empty();
        let mut cbounds = Aabb::empty();
        for &t in &self.order[start..end] {
            bounds = bounds.union(&self.tri_bounds(t));
            cbounds.grow(centroids[t as usize]);
        }
        self.nodes[node].bounds = bounds;
        if end - start <= LEAF_SIZE {
            self.nodes[node].start = start as u32;
            self.nodes[node].count = (end - start) as u32;
            return;
        }
        let axis = cbounds.extent().argmax();
        let mid = start + (end - start) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centroids[a as usize][axis]
                .partial_cmp(&centroids[b as usize][axis])
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(&b))
        });
        let left = self.nodes.len();
        let empty = Node {
            bounds: Aabb::empty(),
            start: 0,
            count: 0,
        };
        self.nodes.push(empty.clone());
        self.nodes.push(empty);
        self.nodes[node].start = left as u32;
        self.nodes[node].count = 0;
        self.build_node(left, start, mid, centroids);
        self.build_node(left + 1, mid, end, centroids);
    }

    /// Nearest hit with `t` in `(t_min, t_max)`, ties resolved to the lower
    /// triangle index.
    pub fn intersect(&self, origin: Point3<T>, dir: Vec3<T>, t_min: T, t_max: T) -> Option<Hit<T>> {
        if self.mesh.triangles.is_empty() {
            return None;
        }
        let inv = Vec3::new(T::one() / dir.x, T::one() / dir.y, T::one() / dir.z);
        let mut best: Option<Hit<T>> = None;
        let mut limit = t_max;
        let mut stack = Vec::with_capacity(64);
        stack.push(0usize);
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if node.bounds.ray_entry(origin, inv, limit).is_none() {
                continue;
            }
            if node.count > 0 {
                for &t in &self.order[node.start as usize..(node.start + node.count) as usize] {
                    let [a, b, c] = self.mesh.corners(t as usize);
                    if let Some(th) = ray_triangle(origin, dir, a, b, c) {
                        if th > t_min {
                            let better = match best {
                                None => th <= limit,
                                Some(h) => th < h.t || (th == h.t && t < h.triangle),
                            };
                            if better {
                                best = Some(Hit { t: th, triangle: t });
                                limit = th;
                            }
                        }
                    }
                }
            } else {
                let (l, r) = (node.start as usize, node.start as usize + 1);
                let dl = self.nodes[l].bounds.ray_entry(origin, inv, limit);
                let dr = self.nodes[r].bounds.ray_entry(origin, inv, limit);
                match (dl, dr) {
                    (Some(a), Some(b)) => {
                        if a <= b {
                            stack.push(r);
                            stack.push(l);
                        } else {
                            stack.push(l);
                            stack.push(r);
                        }
                    }
                    (Some(_), None) => stack.push(l),
                    (None, Some(_)) => stack.push(r),
                    (None, None) => {}
                }
            }
        }
        best
    }
}

/// Möller–Trumbore; returns the ray parameter of a front- or back-face hit.
#[inline]
pub fn ray_triangle<T: Real>(o: Point3<T>, d: Vec3<T>, a: Point3<T>, b: Point3<T>, c: Point3<T>) -> Option<T> {
    let e1 = b - a;
    let e2 = c - a;
    let p = d.cross(e2);
    let det = e1.dot(p);
    if det.abs() <= T::min_positive_value() {
        return None;
    }
    let inv = T::one() / det;
    let s = o - a;
    let u = s.dot(p) * inv;
    if u < T::zero() || u > T::one() {
        return None;
    }
    let q = s.cross(e1);
    let v = d.dot(q) * inv;
    if v < T::zero() || u + v > T::one() {
        return None;
    }
    Some(e2.dot(q) * inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::shapes;

    #[test]
    fn matches_brute_force_on_sphere() {
        let m = shapes::icosphere(Vec3::new(0.1f64, -0.2, 0.3), 0.7, 3);
        let bvh = Bvh::build(&m);
        let o = Vec3::new(-3.0, 0.4, 0.2);
        for k in 0..200 {
            let d = Vec3::new(1.0, (k as f64 * 0.37).sin() * 0.4, (k as f64 * 0.11).cos() * 0.4);
            let mut brute: Option<Hit<f64>> = None;
            for t in 0..m.triangles.len() {
                let [a, b, c] = m.corners(t);
                if let Some(th) = ray_triangle(o, d, a, b, c) {
                    if th > 0.0 && brute.is_none_or(|h| th < h.t) {
                        brute = Some(Hit { t: th, triangle: t as u32 });
                    }
                }
            }
            let got = bvh.intersect(o, d, 0.0, f64::INFINITY);
            assert_eq!(got.map(|h| h.t), brute.map(|h| h.t));
        }
    }
}
