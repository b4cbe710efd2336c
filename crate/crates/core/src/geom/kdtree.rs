//! Static k-d tree for exact k-nearest-neighbour queries in 3-space.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::geom::{Aabb, Point3};
use crate::{Error, Real, Result};

pub const DEFAULT_LEAF_SIZE: usize = 16;

#[derive(Clone, Debug)]
enum Node<T> {
    Leaf {
        start: u32,
        end: u32,
    },
    Split {
        axis: u8,
        value: T,
        left: u32,
        right: u32,
    },
}

/// Immutable balanced k-d tree over a point list.
///
/// Results are exact and ties in distance are broken by lower point index,
/// so a query returns the same list as a brute-force scan.
#[derive(Clone, Debug)]
pub struct KdTree<T> {
    points: Vec<Point3<T>>,
    order: Vec<u32>,
    nodes: Vec<Node<T>>,
}

/// Candidate ordered by `(squared distance, index)`.
#[derive(Clone, Copy, Debug)]
struct Candidate<T> {
    d2: T,
    index: u32,
}

impl<T: Real> PartialEq for Candidate<T> {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}

impl<T: Real> Eq for Candidate<T> {}

impl<T: Real> PartialOrd for Candidate<T> {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl<T: Real> Ord for Candidate<T> {
    fn cmp(&self, o: &Self) -> Ordering {
        self.d2
            .partial_cmp(&o.d2)
            .unwrap_or(Ordering::Equal)
            .then(self.index.cmp(&o.index))
    }
}

impl<T: Real> KdTree<T> {
    pub fn build(points: &[Point3<T>]) -> Result<Self> {
        Self::with_leaf_size(points, DEFAULT_LEAF_SIZE)
    }

    pub fn with_leaf_size(points: &[Point3<T>], leaf_size: usize) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput("kd-tree points"));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::invalid(format!("point {i} is not finite")));
        }
        if points.len() > u32::MAX as usize {
            return Err(Error::invalid("too many points for a kd-tree"));
        }
        let mut tree = KdTree {
            points: points.to_vec(),
            order: (0..points.len() as u32).collect(),
            nodes: Vec::new(),
        };
        let n = tree.order.len();
        tree.build_node(0, n, leaf_size.max(1));
        Ok(tree)
    }

    fn build_node(&mut self, start: usize, end: usize, leaf_size: usize) -> u32 {
        let id = self.nodes.len() as u32;
        if end - start <= leaf_size {
            self.nodes.push(Node::Leaf {
                start: start as u32,
                end: end as u32,
            });
            return id;
        }
        let bounds = Aabb::from_points(self.order[start..end].iter().map(|&i| &self.points[i as usize]));
        let axis = bounds.extent().argmax();
        let mid = start + (end - start) / 2;
        let pts = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            pts[a as usize][axis]
                .partial_cmp(&pts[b as usize][axis])
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(&b))
        });
        let value = self.points[self.order[mid] as usize][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build_node(start, mid, leaf_size);
        let right = self.build_node(mid, end, leaf_size);
        self.nodes[id as usize] = Node::Split {
            axis: axis as u8,
            value,
            left,
            right,
        };
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3<T>] {
        &self.points
    }

    /// The `min(k, n)` nearest points as `(index, distance)`, ascending by
    /// distance, ties broken by lower index.
    pub fn knn(&self, query: Point3<T>, k: usize) -> Vec<(usize, T)> {
        let k = k.min(self.points.len());
        if k == 0 {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, query, k, &mut heap);
        let mut out: Vec<Candidate<T>> = heap.into_vec();
        out.sort();
        out.into_iter()
            .map(|c| (c.index as usize, c.d2.sqrt()))
            .collect()
    }

    /// Nearest point as `(index, distance)`.
    pub fn nearest(&self, query: Point3<T>) -> (usize, T) {
        self.knn(query, 1)[0]
    }

    fn search(&self, node: u32, q: Point3<T>, k: usize, heap: &mut BinaryHeap<Candidate<T>>) {
        match self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start as usize..end as usize] {
                    let c = Candidate {
                        d2: self.points[i as usize].distance_squared(q),
                        index: i,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if let Some(top) = heap.peek() {
                        if c < *top {
                            heap.pop();
                            heap.push(c);
                        }
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis as usize] - value;
                let (near, far) = if diff <= T::zero() {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, q, k, heap);
                let visit_far = heap.len() < k || heap.peek().is_some_and(|top| diff * diff <= top.d2);
                if visit_far {
                    self.search(far, q, k, heap);
                }
            }
        }
    }
}

/// Exhaustive k-NN with the same ordering rule, for verification.
pub fn brute_force_knn<T: Real>(points: &[Point3<T>], query: Point3<T>, k: usize) -> Vec<(usize, T)> {
    let mut all: Vec<Candidate<T>> = points
        .iter()
        .enumerate()
        .map(|(i, p)| Candidate {
            d2: p.distance_squared(query),
            index: i as u32,
        })
        .collect();
    all.sort();
    all.truncate(k);
    all.into_iter().map(|c| (c.index as usize, c.d2.sqrt())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_input_is_rejected() {
        assert!(matches!(KdTree::<f32>::build(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn single_point_is_every_neighbor() {
        let t = KdTree::build(&[Vec3::new(1.0f32, 2.0, 3.0)]).unwrap();
        let r = t.knn(Vec3::new(-5.0, 0.0, 9.0), 4);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].0, 0);
    }

    #[test]
    fn duplicates_are_both_returned() {
        let p = Vec3::new(0.5f64, 0.5, 0.5);
        let t = KdTree::build(&[p, Vec3::new(3.0, 3.0, 3.0), p]).unwrap();
        let r = t.knn(p, 2);
        assert_eq!(r.iter().map(|x| x.0).collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(r[0].1, 0.0);
    }

    #[test]
    fn lattice_center_has_six_face_neighbors() {
        let mut pts = Vec::new();
        for z in -1..=1 {
            for y in -1..=1 {
                for x in -1..=1 {
                    pts.push(Vec3::new(x as f64, y as f64, z as f64));
                }
            }
        }
        let t = KdTree::with_leaf_size(&pts, 2).unwrap();
        let r = t.knn(Vec3::zero(), 7);
        assert_eq!(r[0], (13, 0.0));
        let mut faces: Vec<usize> = r[1..].iter().map(|x| x.0).collect();
        faces.sort();
        // by hand: (0,0,-1)=4, (0,-1,0)=10, (-1,0,0)=12, (1,0,0)=14, (0,1,0)=16, (0,0,1)=22
        assert_eq!(faces, vec![4, 10, 12, 14, 16, 22]);
        assert!(r[1..].iter().all(|x| x.1 == 1.0));
    }

    #[test]
    fn k_larger_than_n_is_clamped() {
        let pts: Vec<_> = (0..5).map(|i| Vec3::new(i as f32, 0.0, 0.0)).collect();
        let t = KdTree::build(&pts).unwrap();
        assert_eq!(t.knn(Vec3::zero(), 50).len(), 5);
    }

    #[test]
    fn uniform_random_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<Vec3<f64>> = (0..1000)
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let t = KdTree::build(&pts).unwrap();
        for _ in 0..50 {
            let q = Vec3::new(rng.random(), rng.random(), rng.random());
            assert_eq!(t.knn(q, 20), brute_force_knn(&pts, q, 20));
        }
    }
}
