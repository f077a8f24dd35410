use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::dist2;
use crate::error::{Error, Result};

const LEAF_SIZE: usize = 12;
const NONE: u32 = u32::MAX;

/// A neighbor returned by [`SpatialIndex::knn`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

#[derive(Clone, Debug)]
struct Node {
    lo: [f64; 3],
    hi: [f64; 3],
    /// Range into `SpatialIndex::order` covered by this subtree.
    start: u32,
    end: u32,
    left: u32,
    right: u32,
}

/// Immutable k-d tree over a set of positions.
///
/// All results are exact. Distance ties are broken by ascending point
/// index, so query results are identical to an exhaustive scan.
#[derive(Clone, Debug)]
pub struct SpatialIndex {
    points: Vec<[f64; 3]>,
    order: Vec<u32>,
    nodes: Vec<Node>,
}

/// Max-heap entry ordered by `(squared distance, index)`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Candidate {
    d2: f64,
    index: u32,
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
        self.d2
            .total_cmp(&other.d2)
            .then_with(|| self.index.cmp(&other.index))
    }
}

impl SpatialIndex {
    pub fn new(points: &[[f64; 3]]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::NoPoints);
        }
        if points.len() >= NONE as usize {
            return Err(Error::InvalidArgument("too many points for the index".into()));
        }
        let mut index = Self {
            points: points.to_vec(),
            order: (0..points.len() as u32).collect(),
            nodes: Vec::with_capacity(2 * points.len() / LEAF_SIZE + 1),
        };
        index.build_node(0, points.len());
        Ok(index)
    }

    fn build_node(&mut self, start: usize, end: usize) -> u32 {
        let (lo, hi) = super::bounds_of(&self.points, &self.order[start..end]);
        let id = self.nodes.len() as u32;
        self.nodes.push(Node {
            lo,
            hi,
            start: start as u32,
            end: end as u32,
            left: NONE,
            right: NONE,
        });
        if end - start > LEAF_SIZE {
            let axis = (0..3)
                .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
                .unwrap_or(0);
            let mid = start + (end - start) / 2;
            let points = &self.points;
            self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
                points[a as usize][axis]
                    .total_cmp(&points[b as usize][axis])
                    .then(a.cmp(&b))
            });
            let left = self.build_node(start, mid);
            let right = self.build_node(mid, end);
            let node = &mut self.nodes[id as usize];
            node.left = left;
            node.right = right;
        }
        id
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.points.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    #[inline]
    pub fn positions(&self) -> &[[f64; 3]] {
        &self.points
    }

    /// The `k` nearest points, sorted by distance then index.
    pub fn knn(&self, query: [f64; 3], k: usize) -> Result<Vec<Neighbor>> {
        if k == 0 || k > self.len() {
            return Err(Error::InvalidArgument(format!(
                "k = {k} must lie in [1, {}]",
                self.len()
            )));
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_search(0, &query, k, &mut heap);
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort_unstable();
        Ok(out
            .into_iter()
            .map(|c| Neighbor {
                index: c.index as usize,
                distance: c.d2.sqrt(),
            })
            .collect())
    }

    /// Indices of the `k` nearest points, written into `out` (cleared first).
    pub(crate) fn knn_indices_into(
        &self,
        query: [f64; 3],
        k: usize,
        heap: &mut BinaryHeap<Candidate>,
        out: &mut Vec<usize>,
    ) {
        heap.clear();
        out.clear();
        let k = k.min(self.len());
        self.knn_search(0, &query, k, heap);
        let mut v = std::mem::take(heap).into_vec();
        v.sort_unstable();
        out.extend(v.iter().map(|c| c.index as usize));
        v.clear();
        *heap = BinaryHeap::from(v);
    }

    fn knn_search(&self, node: u32, q: &[f64; 3], k: usize, heap: &mut BinaryHeap<Candidate>) {
        let n = &self.nodes[node as usize];
        if n.left == NONE {
            for &i in &self.order[n.start as usize..n.end as usize] {
                let c = Candidate {
                    d2: dist2(q, &self.points[i as usize]),
                    index: i,
                };
                if heap.len() < k {
                    heap.push(c);
                } else if c < *heap.peek().expect("heap is full") {
                    heap.pop();
                    heap.push(c);
                }
            }
            return;
        }
        let dl = box_dist2(q, &self.nodes[n.left as usize]);
        let dr = box_dist2(q, &self.nodes[n.right as usize]);
        let (first, df, second, ds) = if dl <= dr {
            (n.left, dl, n.right, dr)
        } else {
            (n.right, dr, n.left, dl)
        };
        // Equal-distance boxes are still visited: they may hold a lower index.
        if heap.len() < k || df <= heap.peek().expect("heap is full").d2 {
            self.knn_search(first, q, k, heap);
        }
        if heap.len() < k || ds <= heap.peek().expect("heap is full").d2 {
            self.knn_search(second, q, k, heap);
        }
    }

    /// All indices within Euclidean distance `r` (inclusive), ascending.
    pub fn radius_query(&self, center: [f64; 3], r: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.radius_into(center, r, &mut out);
        out
    }

    /// Like [`radius_query`](Self::radius_query) but reuses `out`.
    pub fn radius_into(&self, center: [f64; 3], r: f64, out: &mut Vec<usize>) {
        out.clear();
        if r.is_nan() || r < 0.0 {
            return;
        }
        let r2 = r * r;
        let mut stack = vec![0u32];
        while let Some(id) = stack.pop() {
            let n = &self.nodes[id as usize];
            if box_dist2(&center, n) > r2 {
                continue;
            }
            if n.left == NONE {
                for &i in &self.order[n.start as usize..n.end as usize] {
                    if dist2(&center, &self.points[i as usize]) <= r2 {
                        out.push(i as usize);
                    }
                }
            } else {
                stack.push(n.left);
                stack.push(n.right);
            }
        }
        out.sort_unstable();
    }

    /// Nearest point (lowest index on ties).
    pub fn nearest(&self, query: [f64; 3]) -> Neighbor {
        self.knn(query, 1).expect("index is non-empty")[0]
    }
}

#[inline]
fn box_dist2(q: &[f64; 3], n: &Node) -> f64 {
    let mut d = 0.0;
    for a in 0..3 {
        let v = if q[a] < n.lo[a] {
            n.lo[a] - q[a]
        } else if q[a] > n.hi[a] {
            q[a] - n.hi[a]
        } else {
            0.0
        };
        d += v * v;
    }
    d
}

/// Index of the nearest source point for every target position.
pub fn nn_indices(source: &SpatialIndex, targets: &[[f64; 3]]) -> Vec<usize> {
    let mut heap = BinaryHeap::with_capacity(2);
    let mut buf = Vec::with_capacity(1);
    targets
        .iter()
        .map(|&t| {
            source.knn_indices_into(t, 1, &mut heap, &mut buf);
            buf[0]
        })
        .collect()
}

/// Each target receives the payload of its nearest source point.
pub fn nn_transfer<P: Clone>(
    source: &SpatialIndex,
    payload: &[P],
    targets: &[[f64; 3]],
) -> Result<Vec<P>> {
    if payload.len() != source.len() {
        return Err(Error::Shape(format!(
            "payload has {} entries for {} source points",
            payload.len(),
            source.len()
        )));
    }
    Ok(nn_indices(source, targets)
        .into_iter()
        .map(|i| payload[i].clone())
        .collect())
}

/// [`nn_transfer`] for row-major payloads of `width` values per point.
pub fn nn_transfer_rows<T: Copy>(
    source: &SpatialIndex,
    payload: &[T],
    width: usize,
    targets: &[[f64; 3]],
) -> Result<Vec<T>> {
    if payload.len() != source.len() * width {
        return Err(Error::Shape(format!(
            "payload has {} values, expected {} × {}",
            payload.len(),
            source.len(),
            width
        )));
    }
    let mut out = Vec::with_capacity(targets.len() * width);
    for i in nn_indices(source, targets) {
        out.extend_from_slice(&payload[i * width..(i + 1) * width]);
    }
    Ok(out)
}
