//! KD-tree over a point matrix: median splits on the axis of largest
//! spread, exact k-nearest-neighbour search, and the leaf partition used as
//! a clustering by SMOOTH.
//!
//! Neighbour ordering is by squared Euclidean distance, then by index, so
//! results are fully determined by the input.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::matrix::{squared_distance, Matrix};

/// Leaf size used when a tree is only built to answer neighbour queries.
pub const SEARCH_LEAF_CAPACITY: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Split {
        axis: usize,
        /// Largest coordinate on `axis` in the left subtree.
        left_max: f64,
        /// Smallest coordinate on `axis` in the right subtree.
        right_min: f64,
        left: usize,
        right: usize,
    },
    Leaf(usize),
}

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Matrix,
    leaf_capacity: usize,
    nodes: Vec<Node>,
    leaves: Vec<Vec<usize>>,
}

impl KdTree {
    pub fn build(points: &Matrix, leaf_capacity: usize) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyPointSet);
        }
        if leaf_capacity == 0 {
            return Err(Error::InvalidParameter("leaf capacity must be >= 1".into()));
        }
        let mut tree = Self {
            points: points.clone(),
            leaf_capacity,
            nodes: Vec::new(),
            leaves: Vec::new(),
        };
        let mut idx: Vec<usize> = (0..points.rows()).collect();
        tree.build_node(&mut idx);
        Ok(tree)
    }

    fn build_node(&mut self, idx: &mut [usize]) -> usize {
        let id = self.nodes.len();
        if idx.len() <= self.leaf_capacity {
            self.nodes.push(Node::Leaf(self.leaves.len()));
            self.leaves.push(idx.to_vec());
            return id;
        }
        let axis = self.widest_axis(idx);
        let pts = &self.points;
        idx.sort_by(|&a, &b| pts.get(a, axis).total_cmp(&pts.get(b, axis)).then(a.cmp(&b)));
        let mid = idx.len() / 2;
        let left_max = pts.get(idx[mid - 1], axis);
        let right_min = pts.get(idx[mid], axis);
        // placeholder, patched once children exist
        self.nodes.push(Node::Leaf(usize::MAX));
        let (lo, hi) = idx.split_at_mut(mid);
        let left = self.build_node(lo);
        let right = self.build_node(hi);
        self.nodes[id] = Node::Split {
            axis,
            left_max,
            right_min,
            left,
            right,
        };
        id
    }

    fn widest_axis(&self, idx: &[usize]) -> usize {
        let d = self.points.cols();
        let mut best = (0, f64::NEG_INFINITY);
        for axis in 0..d {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in idx {
                let v = self.points.get(i, axis);
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi - lo > best.1 {
                best = (axis, hi - lo);
            }
        }
        best.0
    }

    pub fn points(&self) -> &Matrix {
        &self.points
    }

    pub fn leaf_capacity(&self) -> usize {
        self.leaf_capacity
    }

    /// Index sets of the leaves, left to right. They partition `0..m`.
    pub fn leaves(&self) -> &[Vec<usize>] {
        &self.leaves
    }

    /// Number of edges on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], id: usize) -> usize {
            match nodes[id] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// The `k` nearest eligible points to stored point `query_index`,
    /// excluding the query itself. `eligible`, when given, masks which
    /// stored points may be returned.
    pub fn knn(&self, query_index: usize, k: usize, eligible: Option<&[bool]>) -> Result<Vec<usize>> {
        let query = self.points.row(query_index).to_vec();
        self.search(&query, k, |i| i != query_index && eligible.is_none_or(|m| m[i]))
    }

    /// The `k` nearest eligible stored points to an arbitrary query point.
    pub fn knn_point(&self, query: &[f64], k: usize, eligible: Option<&[bool]>) -> Result<Vec<usize>> {
        self.search(query, k, |i| eligible.is_none_or(|m| m[i]))
    }

    fn search(&self, query: &[f64], k: usize, ok: impl Fn(usize) -> bool) -> Result<Vec<usize>> {
        let available = (0..self.points.rows()).filter(|&i| ok(i)).count();
        if available < k {
            return Err(Error::NotEnoughNeighbors { k, available });
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.visit(0, query, k, &ok, &mut heap);
        let mut found = heap.into_vec();
        found.sort();
        Ok(found.into_iter().map(|c| c.index).collect())
    }

    fn visit(&self, id: usize, query: &[f64], k: usize, ok: &impl Fn(usize) -> bool, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[id] {
            Node::Leaf(leaf) => {
                for &i in &self.leaves[leaf] {
                    if !ok(i) {
                        continue;
                    }
                    let c = Candidate {
                        dist2: squared_distance(query, self.points.row(i)),
                        index: i,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if heap.peek().is_some_and(|top| c < *top) {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split {
                axis,
                left_max,
                right_min,
                left,
                right,
            } => {
                let q = query[axis];
                let gap_left = (q - left_max).max(0.0);
                let gap_right = (right_min - q).max(0.0);
                let (near, far, gap) = if gap_left <= gap_right {
                    (left, right, gap_right)
                } else {
                    (right, left, gap_left)
                };
                self.visit(near, query, k, ok, heap);
                // `<=` keeps equal-distance candidates with lower indices reachable
                if heap.len() < k || heap.peek().is_some_and(|top| gap * gap <= top.dist2) {
                    self.visit(far, query, k, ok, heap);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
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
        self.dist2.total_cmp(&other.dist2).then(self.index.cmp(&other.index))
    }
}

/// Builds a search tree over `points` and returns the `k` nearest eligible
/// neighbours of row `query_index`.
pub fn knn(points: &Matrix, query_index: usize, k: usize, same_label_filter: Option<&[bool]>) -> Result<Vec<usize>> {
    KdTree::build(points, SEARCH_LEAF_CAPACITY)?.knn(query_index, k, same_label_filter)
}
