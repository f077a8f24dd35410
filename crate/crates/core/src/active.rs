//! Temporal output discrepancy (TOD) and the diverse batch query.
//!
//! `D(x) = Σ_c (p_curr − p_prev)²` is averaged onto a coarse grid of cell
//! `r / 5`, smoothed over a k-nn graph with probability-similarity and
//! distance weights, thinned to local maxima within `r`, and finally
//! consumed greedily so that the `K` emitted centers are pairwise more than
//! `r` apart.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::{dist2, grid_cells, SpatialIndex, SubsampleMap};
use crate::scalar::{dot, Scalar};
use crate::weaklabel::knn_with_self;

/// Neighbors used by [`refine_tod`] (self included).
pub const DEFAULT_REFINE_K: usize = 16;
/// Coarse cell as a fraction of the sub-cloud radius.
pub const COARSE_CELL_FRACTION: f64 = 0.2;

/// Per-point discrepancy between two consecutive prediction maps.
#[derive(Clone, Debug, PartialEq)]
pub struct TodMap<T> {
    pub values: Vec<T>,
    /// Cycle whose predictions are `p_curr`.
    pub cycle: usize,
}

impl<T: Scalar> TodMap<T> {
    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.f64()).collect()
    }
}

/// `D(x_i) = Σ_c (curr − prev)²` over row-major `n × C` probability maps.
pub fn compute_tod<T: Scalar>(prev: &[T], curr: &[T], classes: usize, cycle: usize) -> Result<TodMap<T>> {
    if prev.len() != curr.len() || classes == 0 || prev.len() % classes != 0 {
        return Err(Error::Shape(format!(
            "probability maps of length {} and {} with {} classes",
            prev.len(),
            curr.len(),
            classes
        )));
    }
    let values = prev
        .chunks_exact(classes)
        .zip(curr.chunks_exact(classes))
        .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| (y - x) * (y - x)).sum())
        .collect();
    Ok(TodMap { values, cycle })
}

/// TOD and probabilities averaged onto a coarse grid.
#[derive(Clone, Debug)]
pub struct CoarseMap<T> {
    /// Cell centroids.
    pub positions: Vec<[f64; 3]>,
    pub tod: Vec<T>,
    /// Row-major `m × C`, each row renormalized to sum to one.
    pub probs: Vec<T>,
    pub classes: usize,
    pub cells: SubsampleMap,
}

impl<T: Scalar> CoarseMap<T> {
    #[inline]
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Grid-subsamples at cell `r / 5`; each coarse point carries the mean TOD
/// and the renormalized mean probability row of its members.
pub fn coarse_map<T: Scalar>(
    positions: &[[f64; 3]],
    tod: &TodMap<T>,
    probs: &[T],
    classes: usize,
    r: f64,
) -> Result<CoarseMap<T>> {
    if !(r > 0.0) {
        return Err(Error::InvalidArgument(format!("radius must be positive, got {r}")));
    }
    if tod.len() != positions.len() || probs.len() != positions.len() * classes {
        return Err(Error::Shape("TOD, probabilities and positions disagree in length".into()));
    }
    let cells = grid_cells(positions, r * COARSE_CELL_FRACTION)?;
    let m = cells.len();
    let mut out_pos = Vec::with_capacity(m);
    let mut out_tod = Vec::with_capacity(m);
    let mut out_probs = Vec::with_capacity(m * classes);
    let mut row = vec![0.0f64; classes];
    for j in 0..m {
        let members = cells.members(j);
        let inv = 1.0 / members.len() as f64;
        let mut c = [0.0; 3];
        let mut t = 0.0;
        row.iter_mut().for_each(|v| *v = 0.0);
        for &i in members {
            for a in 0..3 {
                c[a] += positions[i][a];
            }
            t += tod.values[i].f64();
            for (acc, p) in row.iter_mut().zip(&probs[i * classes..(i + 1) * classes]) {
                *acc += p.f64();
            }
        }
        out_pos.push(c.map(|v| v * inv));
        out_tod.push(T::of(t * inv));
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            out_probs.extend(row.iter().map(|&v| T::of(v / total)));
        } else {
            out_probs.extend(std::iter::repeat(T::of(1.0 / classes as f64)).take(classes));
        }
    }
    Ok(CoarseMap {
        positions: out_pos,
        tod: out_tod,
        probs: out_probs,
        classes,
        cells,
    })
}

/// Refined TOD together with the min and max raw TOD of each k-neighborhood.
#[derive(Clone, Debug, PartialEq)]
pub struct RefinedTod<T> {
    pub values: Vec<T>,
    pub lower: Vec<T>,
    pub upper: Vec<T>,
}

fn cosine<T: Scalar>(a: &[T], b: &[T]) -> T {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == T::zero() || nb == T::zero() {
        return T::zero();
    }
    (dot(a, b) / (na * nb)).max(T::zero()).min(T::one())
}

/// k-nn smoothing of the coarse TOD.
///
/// For point `x` with neighbors `x_i` (self included) at squared distances
/// `d_i`: `w_i = cos(p_x, p_i) · (1 − d_i / max_j d_j)²` and
/// `D̃(x) = Σ w_i D(x_i) / Σ w_i`. Falls back to `D(x)` when the weights
/// vanish or all neighbors coincide.
pub fn refine_tod<T: Scalar>(positions: &[[f64; 3]], tod: &[T], probs: &[T], classes: usize, k: usize) -> Result<Vec<T>> {
    refine_tod_with_bounds(positions, tod, probs, classes, k).map(|r| r.values)
}

pub fn refine_tod_with_bounds<T: Scalar>(
    positions: &[[f64; 3]],
    tod: &[T],
    probs: &[T],
    classes: usize,
    k: usize,
) -> Result<RefinedTod<T>> {
    let n = positions.len();
    if tod.len() != n || probs.len() != n * classes {
        return Err(Error::Shape("TOD, probabilities and positions disagree in length".into()));
    }
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("k = {k} must lie in [1, {n}]")));
    }
    let index = SpatialIndex::new(positions)?;
    let neighbors = knn_with_self(&index, k);
    let mut out = RefinedTod {
        values: Vec::with_capacity(n),
        lower: Vec::with_capacity(n),
        upper: Vec::with_capacity(n),
    };
    let mut d = Vec::with_capacity(k);
    for x in 0..n {
        let nb = &neighbors[x * k..(x + 1) * k];
        d.clear();
        d.extend(nb.iter().map(|&i| dist2(&positions[x], &positions[i])));
        let dmax = d.iter().copied().fold(0.0, f64::max);
        let (mut lo, mut hi) = (tod[x], tod[x]);
        for &i in nb {
            lo = lo.min(tod[i]);
            hi = hi.max(tod[i]);
        }
        let px = &probs[x * classes..(x + 1) * classes];
        let mut value = tod[x];
        if dmax > 0.0 {
            let (mut num, mut den) = (T::zero(), T::zero());
            for (&i, &di) in nb.iter().zip(&d) {
                let falloff = T::of((1.0 - di / dmax).powi(2));
                let w = cosine(px, &probs[i * classes..(i + 1) * classes]) * falloff;
                num += w * tod[i];
                den += w;
            }
            if den > T::zero() {
                value = num / den;
            }
        }
        out.values.push(value);
        out.lower.push(lo);
        out.upper.push(hi);
    }
    Ok(out)
}

/// Candidate query centers on the coarse grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSet<T> {
    /// Coarse point indices, ascending.
    pub indices: Vec<usize>,
    pub values: Vec<T>,
    pub consumed: Vec<bool>,
}

impl<T> SeedSet<T> {
    #[inline]
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn remaining(&self) -> usize {
        self.consumed.iter().filter(|&&c| !c).count()
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Points whose value is `≥` every value within distance `r` (inclusive).
/// Tied candidates within `r` of each other are merged transitively and only
/// the lowest index of each group survives.
pub fn local_maxima<T: Scalar>(positions: &[[f64; 3]], values: &[T], r: f64) -> Result<SeedSet<T>> {
    if !(r > 0.0) {
        return Err(Error::InvalidArgument(format!("radius must be positive, got {r}")));
    }
    if values.len() != positions.len() {
        return Err(Error::Shape("values and positions disagree in length".into()));
    }
    let n = positions.len();
    if n == 0 {
        return Ok(SeedSet {
            indices: Vec::new(),
            values: Vec::new(),
            consumed: Vec::new(),
        });
    }
    let index = SpatialIndex::new(positions)?;
    let mut candidate = vec![false; n];
    let mut hood: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut buf = Vec::new();
    for i in 0..n {
        index.radius_into(positions[i], r, &mut buf);
        if buf.iter().all(|&j| values[i] >= values[j]) {
            candidate[i] = true;
            hood[i] = buf.clone();
        }
    }
    let mut parent: Vec<usize> = (0..n).collect();
    for i in (0..n).filter(|&i| candidate[i]) {
        for &j in &hood[i] {
            if j != i && candidate[j] && values[j] == values[i] {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut indices = Vec::new();
    for i in 0..n {
        // Roots are always the smallest member of their group.
        if candidate[i] && find(&mut parent, i) == i {
            indices.push(i);
        }
    }
    let values = indices.iter().map(|&i| values[i]).collect();
    let consumed = vec![false; indices.len()];
    Ok(SeedSet {
        indices,
        values,
        consumed,
    })
}

/// One emitted sub-cloud center.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryCenter {
    pub position: [f64; 3],
    pub coarse_index: usize,
    /// Picked by the fallback rule after the seeds ran out.
    pub fallback: bool,
}

#[derive(PartialEq)]
struct Ranked<T> {
    value: T,
    index: usize,
}

impl<T: PartialOrd> Eq for Ranked<T> {}

impl<T: PartialOrd> Ord for Ranked<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        // max-heap on value, then lowest index first
        self.value
            .partial_cmp(&other.value)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.index.cmp(&self.index))
    }
}

impl<T: PartialOrd> PartialOrd for Ranked<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Emits up to `k` centers: repeatedly the unconsumed seed with the largest
/// value (ties to the lowest index), consuming every seed within `r` of it.
/// When the seeds run out, the highest-valued coarse points farther than `r`
/// from every chosen center are used. Fewer than `k` centers are returned
/// only if no such point remains.
pub fn query_batch<T: Scalar>(
    seeds: &mut SeedSet<T>,
    positions: &[[f64; 3]],
    refined: &[T],
    r: f64,
    k: usize,
) -> Result<Vec<QueryCenter>> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    if refined.len() != positions.len() || seeds.indices.iter().any(|&i| i >= positions.len()) {
        return Err(Error::Shape("seeds, values and positions disagree".into()));
    }
    let r2 = r * r;
    let mut heap: BinaryHeap<Ranked<T>> = (0..seeds.len())
        .filter(|&s| !seeds.consumed[s])
        .map(|s| Ranked {
            value: seeds.values[s],
            index: s,
        })
        .collect();
    let mut out: Vec<QueryCenter> = Vec::with_capacity(k);
    while out.len() < k {
        let Some(top) = heap.pop() else { break };
        if seeds.consumed[top.index] {
            continue;
        }
        let ci = seeds.indices[top.index];
        let p = positions[ci];
        for s in 0..seeds.len() {
            if !seeds.consumed[s] && dist2(&positions[seeds.indices[s]], &p) <= r2 {
                seeds.consumed[s] = true;
            }
        }
        out.push(QueryCenter {
            position: p,
            coarse_index: ci,
            fallback: false,
        });
    }
    if out.len() < k {
        let mut order: Vec<usize> = (0..positions.len()).collect();
        order.sort_by(|&a, &b| {
            refined[b]
                .partial_cmp(&refined[a])
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(&b))
        });
        for i in order {
            if out.len() == k {
                break;
            }
            if out.iter().all(|c| dist2(&c.position, &positions[i]) > r2) {
                out.push(QueryCenter {
                    position: positions[i],
                    coarse_index: i,
                    fallback: true,
                });
            }
        }
    }
    Ok(out)
}

/// Everything one TOD-guided query computes.
#[derive(Clone, Debug)]
pub struct QueryPlan<T> {
    pub coarse: CoarseMap<T>,
    pub refined: RefinedTod<T>,
    pub centers: Vec<QueryCenter>,
}

/// Coarse map, refinement, seeds and `k` centers from a TOD map and the
/// current probabilities over `positions`.
pub fn plan_query<T: Scalar>(
    positions: &[[f64; 3]],
    tod: &TodMap<T>,
    probs: &[T],
    classes: usize,
    r: f64,
    refine_k: usize,
    k: usize,
) -> Result<QueryPlan<T>> {
    let coarse = coarse_map(positions, tod, probs, classes, r)?;
    let refined = refine_tod_with_bounds(&coarse.positions, &coarse.tod, &coarse.probs, classes, refine_k.min(coarse.len()))?;
    let mut seeds = local_maxima(&coarse.positions, &refined.values, r)?;
    let centers = query_batch(&mut seeds, &coarse.positions, &refined.values, r, k)?;
    Ok(QueryPlan { coarse, refined, centers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tod_examples() {
        let t = compute_tod(&[0.3f64, 0.7], &[0.3, 0.7], 2, 1).unwrap();
        assert_eq!(t.values, vec![0.0]);
        let t = compute_tod(&[1.0f64, 0.0], &[0.0, 1.0], 2, 1).unwrap();
        assert_eq!(t.values, vec![2.0]);
        let t = compute_tod(&[0.5f64, 0.5], &[0.6, 0.4], 2, 1).unwrap();
        assert!((t.values[0] - 0.02).abs() < 1e-15);
        assert!(compute_tod(&[0.5f64, 0.5], &[1.0], 2, 1).is_err());
    }

    #[test]
    fn coarse_examples() {
        let pos = [[0.1, 0.1, 0.1], [0.2, 0.2, 0.2], [0.3, 0.1, 0.0]];
        let tod = TodMap {
            values: vec![1.0f64, 2.0, 3.0],
            cycle: 1,
        };
        let probs = [0.5f64, 0.5, 1.0, 0.0, 0.0, 1.0];
        let cm = coarse_map(&pos, &tod, &probs, 2, 4.0).unwrap();
        assert_eq!(cm.len(), 1);
        assert!((cm.tod[0] - 2.0).abs() < 1e-15);
        assert!((cm.probs[0] + cm.probs[1] - 1.0).abs() < 1e-15);

        // cells of 0.8: {1, 3} and {2}
        let pos = [[0.1, 0.0, 0.0], [2.0, 0.0, 0.0], [0.2, 0.0, 0.0]];
        let tod = TodMap {
            values: vec![1.0f64, 2.0, 3.0],
            cycle: 1,
        };
        let cm = coarse_map(&pos, &tod, &[0.5f64; 6], 2, 4.0).unwrap();
        assert_eq!(cm.tod, vec![2.0, 2.0]);

        let uniform = TodMap {
            values: vec![0.7f64; 3],
            cycle: 1,
        };
        let cm = coarse_map(&pos, &uniform, &[0.5f64; 6], 2, 4.0).unwrap();
        assert!(cm.tod.iter().all(|&t| (t - 0.7).abs() < 1e-15));
    }

    #[test]
    fn refine_examples() {
        let pos = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0]];
        let probs = [0.2f64, 0.8, 0.9, 0.1, 0.5, 0.5];
        let r = refine_tod(&pos, &[0.3f64; 3], &probs, 2, 3).unwrap();
        assert!(r.iter().all(|&v| (v - 0.3).abs() < 1e-15));

        // self at d = 0, the other at d_max
        let pos = [[0.0, 0.0, 0.0], [3.0, 0.0, 0.0]];
        let probs = [0.5f64, 0.5, 0.5, 0.5];
        let r = refine_tod(&pos, &[4.0f64, 0.0], &probs, 2, 2).unwrap();
        assert_eq!(r[0], 4.0);
        assert_eq!(r[1], 0.0);

        let r = refine_tod(&pos, &[4.0f64, 1.5], &probs, 2, 1).unwrap();
        assert_eq!(r, vec![4.0, 1.5]);
        assert!(refine_tod(&pos, &[4.0f64, 1.5], &probs, 2, 3).is_err());
    }

    #[test]
    fn refine_stays_in_hull() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 400;
        let pos: Vec<[f64; 3]> = (0..n)
            .map(|_| [rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0), rng.gen_range(0.0..2.0)])
            .collect();
        let tod: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.0)).collect();
        let probs: Vec<f64> = (0..n)
            .flat_map(|_| {
                let a: f64 = rng.gen();
                [a, 1.0 - a]
            })
            .collect();
        let r = refine_tod_with_bounds(&pos, &tod, &probs, 2, 16).unwrap();
        for i in 0..n {
            let slack = 1e-15 * r.upper[i];
            assert!(r.lower[i] - slack <= r.values[i] && r.values[i] <= r.upper[i] + slack);
        }
    }

    #[test]
    fn local_maxima_examples() {
        let line = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        let s = local_maxima(&line, &[1.0f64, 3.0, 2.0], 1.5).unwrap();
        assert_eq!(s.indices, vec![1]);

        let pos: Vec<[f64; 3]> = (0..6).map(|i| [i as f64, 0.0, 0.0]).collect();
        let s = local_maxima(&pos, &[0.0f64, 1.0, 2.0, 3.0, 4.0, 5.0], 1.0).unwrap();
        assert_eq!(s.indices, vec![5]);

        // constant plateau yields one representative
        let s = local_maxima(&pos, &[1.0f64; 6], 1.0).unwrap();
        assert_eq!(s.indices, vec![0]);
    }

    #[test]
    fn query_examples() {
        let pos = [[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]];
        let vals = [1.0f64, 2.0];
        let mut seeds = local_maxima(&pos, &vals, 4.0).unwrap();
        let q = query_batch(&mut seeds, &pos, &vals, 4.0, 2).unwrap();
        assert_eq!(q.iter().map(|c| c.coarse_index).collect::<Vec<_>>(), vec![1, 0]);
        assert!(q.iter().all(|c| !c.fallback));

        let pos = [[0.0, 0.0, 0.0], [3.0, 0.0, 0.0], [9.0, 0.0, 0.0]];
        let vals = [5.0f64, 4.0, 1.0];
        let mut seeds = SeedSet {
            indices: vec![0, 1],
            values: vec![5.0, 4.0],
            consumed: vec![false, false],
        };
        let q = query_batch(&mut seeds, &pos, &vals, 4.0, 2).unwrap();
        assert_eq!(q[0].coarse_index, 0);
        assert!(seeds.consumed[1]);
        assert!(q[1].fallback);
        assert_eq!(q[1].coarse_index, 2);

        // nothing left beyond r
        let mut seeds = SeedSet {
            indices: vec![0],
            values: vec![5.0],
            consumed: vec![false],
        };
        let q = query_batch(&mut seeds, &pos[..2], &vals[..2], 4.0, 3).unwrap();
        assert_eq!(q.len(), 1);
    }
}
