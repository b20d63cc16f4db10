//! Exact k-nearest-neighbor search over fixed-dimension f32 points.
//!
//! The tree is a median-split kd-tree with backtracking. Results are exact
//! and deterministic: candidates are ordered by squared distance with point
//! id as the tie-break, distances accumulate in f64 in dimension order, and
//! a subtree is skipped only when it provably cannot improve the current
//! worst candidate under that ordering.

use std::collections::BinaryHeap;

use crate::{Error, Result};

const LEAF_SIZE: usize = 16;
const SPREAD_SAMPLES: usize = 32;

/// One search result. `dist2` is the exact squared Euclidean distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: u32,
    pub dist2: f64,
}

#[derive(Debug)]
enum Node {
    Leaf { start: usize, len: usize },
    Split { dim: usize, value: f32, left: usize, right: usize },
}

#[derive(Debug)]
pub struct KdTree {
    dim: usize,
    /// Point coordinates permuted into tree order, `len() = n * dim`.
    pts: Vec<f32>,
    /// Original point id at each permuted position.
    ids: Vec<u32>,
    nodes: Vec<Node>,
}

#[derive(PartialEq)]
struct Cand {
    d2: f64,
    id: u32,
}

impl Eq for Cand {}

impl Ord for Cand {
    fn cmp(&self, other: &Cand) -> std::cmp::Ordering {
        self.d2.total_cmp(&other.d2).then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Cand) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl KdTree {
    /// Build over `n = points.len() / dim` points; point `i` gets id `i`.
    pub fn build(points: &[f32], dim: usize) -> Result<KdTree> {
        if dim == 0 || points.len() % dim != 0 {
            return Err(Error::SizeMismatch(format!(
                "point buffer length {} is not a multiple of dimension {}",
                points.len(),
                dim
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("kd-tree input".into()));
        }
        let n = points.len() / dim;
        let mut idx: Vec<u32> = (0..n as u32).collect();
        let mut nodes = Vec::new();
        if n > 0 {
            build_node(points, dim, &mut idx, 0, &mut nodes);
        }
        let mut pts = Vec::with_capacity(points.len());
        for &i in &idx {
            let base = i as usize * dim;
            pts.extend_from_slice(&points[base..base + dim]);
        }
        Ok(KdTree { dim, pts, ids: idx, nodes })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// The `min(k, len)` nearest points to `query`, ascending by
    /// `(dist2, id)`. Exactly matches a linear scan under that ordering.
    pub fn knn(&self, query: &[f32], k: usize) -> Vec<Neighbor> {
        assert_eq!(query.len(), self.dim, "query dimension mismatch");
        if k == 0 || self.is_empty() {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Cand> = BinaryHeap::with_capacity(k + 1);
        self.search(0, query, k, &mut heap);
        heap.into_sorted_vec()
            .into_iter()
            .map(|c| Neighbor { id: c.id, dist2: c.d2 })
            .collect()
    }

    fn search(&self, node: usize, q: &[f32], k: usize, heap: &mut BinaryHeap<Cand>) {
        match &self.nodes[node] {
            Node::Leaf { start, len } => {
                for i in *start..*start + *len {
                    let p = &self.pts[i * self.dim..(i + 1) * self.dim];
                    let full = heap.len() == k;
                    let (worst_d2, worst_id) = match heap.peek() {
                        Some(c) if full => (c.d2, c.id),
                        _ => (f64::INFINITY, u32::MAX),
                    };
                    let mut acc = 0.0f64;
                    for d in 0..self.dim {
                        let diff = p[d] as f64 - q[d] as f64;
                        acc += diff * diff;
                        if acc > worst_d2 {
                            break;
                        }
                    }
                    if acc > worst_d2 {
                        continue;
                    }
                    let id = self.ids[i];
                    if !full {
                        heap.push(Cand { d2: acc, id });
                    } else if acc < worst_d2 || id < worst_id {
                        heap.pop();
                        heap.push(Cand { d2: acc, id });
                    }
                }
            }
            Node::Split { dim, value, left, right } => {
                let delta = q[*dim] as f64 - *value as f64;
                let (near, far) = if delta < 0.0 { (*left, *right) } else { (*right, *left) };
                self.search(near, q, k, heap);
                // Equality must recurse: the far side can hold a point at the
                // same distance with a smaller id.
                let worst = if heap.len() == k { heap.peek().unwrap().d2 } else { f64::INFINITY };
                if delta * delta <= worst {
                    self.search(far, q, k, heap);
                }
            }
        }
    }
}

fn build_node(points: &[f32], dim: usize, idx: &mut [u32], offset: usize, nodes: &mut Vec<Node>) -> usize {
    let this = nodes.len();
    if idx.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf { start: offset, len: idx.len() });
        return this;
    }
    // Pick the dimension with the widest sampled spread.
    let step = (idx.len() / SPREAD_SAMPLES).max(1);
    let mut best_dim = 0;
    let mut best_spread = -1.0f32;
    for d in 0..dim {
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        for &i in idx.iter().step_by(step) {
            let v = points[i as usize * dim + d];
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if hi - lo > best_spread {
            best_spread = hi - lo;
            best_dim = d;
        }
    }
    if best_spread <= 0.0 {
        // All sampled coordinates coincide; splitting cannot make progress.
        nodes.push(Node::Leaf { start: offset, len: idx.len() });
        return this;
    }
    let mid = idx.len() / 2;
    idx.select_nth_unstable_by(mid, |&a, &b| {
        let va = points[a as usize * dim + best_dim];
        let vb = points[b as usize * dim + best_dim];
        va.total_cmp(&vb).then(a.cmp(&b))
    });
    let value = points[idx[mid] as usize * dim + best_dim];
    nodes.push(Node::Split { dim: best_dim, value, left: 0, right: 0 });
    let (lo, hi) = idx.split_at_mut(mid);
    let left = build_node(points, dim, lo, offset, nodes);
    let right = build_node(points, dim, hi, offset + mid, nodes);
    if let Node::Split { left: l, right: r, .. } = &mut nodes[this] {
        *l = left;
        *r = right;
    }
    this
}

/// Reference scan with the same ordering contract as `KdTree::knn`.
pub fn linear_knn(points: &[f32], dim: usize, query: &[f32], k: usize) -> Vec<Neighbor> {
    let n = points.len() / dim;
    let mut all: Vec<Neighbor> = (0..n)
        .map(|i| {
            let mut acc = 0.0f64;
            for d in 0..dim {
                let diff = points[i * dim + d] as f64 - query[d] as f64;
                acc += diff * diff;
            }
            Neighbor { id: i as u32, dist2: acc }
        })
        .collect();
    all.sort_by(|a, b| a.dist2.total_cmp(&b.dist2).then(a.id.cmp(&b.id)));
    all.truncate(k);
    all
}
