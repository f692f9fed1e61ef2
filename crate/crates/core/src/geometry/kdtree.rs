//! Static k-d tree for exact nearest-neighbor queries.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::cloud::{Point, PointCloud};
use crate::error::{Error, Result};

const DEFAULT_LEAF_SIZE: usize = 16;

#[derive(Clone, Debug)]
struct Node {
    lo: [f64; 3],
    hi: [f64; 3],
    start: usize,
    end: usize,
    // Child node indices; `usize::MAX` marks a leaf.
    left: usize,
    right: usize,
}

/// Balanced spatial tree over a fixed set of points.
///
/// Queries return exactly what a linear scan would, with ties resolved to
/// the lowest point index.
#[derive(Clone, Debug)]
pub struct KdIndex {
    points: Vec<Point>,
    order: Vec<usize>,
    nodes: Vec<Node>,
    leaf_size: usize,
}

impl KdIndex {
    pub fn new(cloud: &PointCloud) -> Result<Self> {
        Self::from_points(cloud.points().to_vec(), DEFAULT_LEAF_SIZE)
    }

    pub fn from_points(points: Vec<Point>, leaf_size: usize) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if leaf_size == 0 {
            return Err(Error::InvalidConfig("leaf size must be positive".into()));
        }
        let mut index = Self {
            order: (0..points.len()).collect(),
            points,
            nodes: Vec::new(),
            leaf_size,
        };
        index.build(0, index.points.len());
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn leaf_size(&self) -> usize {
        self.leaf_size
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            let p = &self.points[i];
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            lo,
            hi,
            start,
            end,
            left: usize::MAX,
            right: usize::MAX,
        });
        if end - start > self.leaf_size {
            let dim = (0..3)
                .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
                .unwrap();
            let mid = start + (end - start) / 2;
            let points = &self.points;
            self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
                points[a][dim].total_cmp(&points[b][dim])
            });
            let left = self.build(start, mid);
            let right = self.build(mid, end);
            self.nodes[id].left = left;
            self.nodes[id].right = right;
        }
        id
    }

    fn box_dist2(node: &Node, q: &Point) -> f64 {
        let mut d2 = 0.0;
        for k in 0..3 {
            let v = if q[k] < node.lo[k] {
                node.lo[k] - q[k]
            } else if q[k] > node.hi[k] {
                q[k] - node.hi[k]
            } else {
                0.0
            };
            d2 += v * v;
        }
        d2
    }

    /// Index and Euclidean distance of the stored point closest to `q`.
    pub fn nearest(&self, q: &Point) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_in(0, q, &mut best);
        (best.0, best.1.sqrt())
    }

    fn nearest_in(&self, id: usize, q: &Point, best: &mut (usize, f64)) {
        let node = &self.nodes[id];
        if node.left == usize::MAX {
            for &i in &self.order[node.start..node.end] {
                let d2 = (self.points[i] - q).norm_squared();
                if d2 < best.1 || (d2 == best.1 && i < best.0) {
                    *best = (i, d2);
                }
            }
            return;
        }
        let dl = Self::box_dist2(&self.nodes[node.left], q);
        let dr = Self::box_dist2(&self.nodes[node.right], q);
        let (first, df, second, ds) = if dl <= dr {
            (node.left, dl, node.right, dr)
        } else {
            (node.right, dr, node.left, dl)
        };
        // `<=` keeps equidistant subtrees in play for the lowest-index rule.
        if df <= best.1 {
            self.nearest_in(first, q, best);
        }
        if ds <= best.1 {
            self.nearest_in(second, q, best);
        }
    }

    /// The `k` nearest stored points, closest first (ties by index).
    pub fn knn(&self, q: &Point, k: usize) -> Vec<(usize, f64)> {
        if k == 0 {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        self.knn_in(0, q, k, &mut heap);
        let mut out: Vec<(usize, f64)> = heap
            .into_sorted_vec()
            .into_iter()
            .map(|c| (c.index, c.dist2.sqrt()))
            .collect();
        out.truncate(k);
        out
    }

    fn knn_in(&self, id: usize, q: &Point, k: usize, heap: &mut BinaryHeap<Candidate>) {
        let node = &self.nodes[id];
        let bound = |heap: &BinaryHeap<Candidate>| {
            if heap.len() < k {
                f64::INFINITY
            } else {
                heap.peek().unwrap().dist2
            }
        };
        if node.left == usize::MAX {
            for &i in &self.order[node.start..node.end] {
                let c = Candidate {
                    dist2: (self.points[i] - q).norm_squared(),
                    index: i,
                };
                if heap.len() < k {
                    heap.push(c);
                } else if c < *heap.peek().unwrap() {
                    heap.pop();
                    heap.push(c);
                }
            }
            return;
        }
        let dl = Self::box_dist2(&self.nodes[node.left], q);
        let dr = Self::box_dist2(&self.nodes[node.right], q);
        let (first, df, second, ds) = if dl <= dr {
            (node.left, dl, node.right, dr)
        } else {
            (node.right, dr, node.left, dl)
        };
        if df <= bound(heap) {
            self.knn_in(first, q, k, heap);
        }
        if ds <= bound(heap) {
            self.knn_in(second, q, k, heap);
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    dist2: f64,
    index: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}
