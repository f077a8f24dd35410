//! Sub-clouds, one-class-one-click (OCOC) annotation and the labeled pool.
//!
//! The annotator is simulated from ground truth: either one uniformly random
//! point per present class, or the point with the highest boundary-decayed,
//! homogeneity-filtered TOD saliency per class.

use std::collections::{BTreeMap, BinaryHeap};
use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::SpatialIndex;
use crate::scalar::Scalar;

/// Default neighborhood size of the semantic-homogeneity graph.
pub const DEFAULT_SALIENCY_K: usize = 16;

/// Spherical subset of the training cloud.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubCloud {
    pub id: usize,
    pub center: [f64; 3],
    pub radius: f64,
    /// Indices into the training cloud, ascending.
    pub members: Vec<usize>,
    /// Active-learning cycle in which the sub-cloud was acquired (1-based).
    pub cycle: usize,
}

impl SubCloud {
    #[inline]
    pub fn len(&self) -> usize {
        self.members.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Horizontal distance of `p` from the center.
    #[inline]
    pub fn planar_distance(&self, p: [f64; 3]) -> f64 {
        (p[0] - self.center[0]).hypot(p[1] - self.center[1])
    }
}

/// One clicked point per class present in a sub-cloud: class id → point
/// index into the training cloud.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OcocLabel {
    pub clicks: BTreeMap<usize, usize>,
}

impl OcocLabel {
    #[inline]
    pub fn len(&self) -> usize {
        self.clicks.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.clicks.is_empty()
    }

    pub fn classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.clicks.keys().copied()
    }

    #[inline]
    pub fn contains_class(&self, c: usize) -> bool {
        self.clicks.contains_key(&c)
    }

    /// Multi-hot vector of the clicked classes.
    pub fn multi_hot(&self, class_count: usize) -> Vec<bool> {
        let mut v = vec![false; class_count];
        for c in self.classes() {
            v[c] = true;
        }
        v
    }
}

/// All points within `r` of `center`.
pub fn extract_subcloud(
    index: &SpatialIndex,
    center: [f64; 3],
    r: f64,
    cycle: usize,
    id: usize,
) -> Result<SubCloud> {
    if !(r > 0.0) {
        return Err(Error::InvalidArgument(format!("sub-cloud radius must be positive, got {r}")));
    }
    let members = index.radius_query(center, r);
    if members.is_empty() {
        return Err(Error::EmptySubCloud);
    }
    Ok(SubCloud {
        id,
        center,
        radius: r,
        members,
        cycle,
    })
}

fn members_by_class(sub: &SubCloud, gt: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &m in &sub.members {
        by_class.entry(gt[m]).or_default().push(m);
    }
    by_class
}

/// One uniformly random member per present class.
pub fn simulate_ococ_random<R: Rng + ?Sized>(sub: &SubCloud, gt: &[usize], rng: &mut R) -> OcocLabel {
    let clicks = members_by_class(sub, gt)
        .into_iter()
        .map(|(c, pts)| (c, pts[rng.gen_range(0..pts.len())]))
        .collect();
    OcocLabel { clicks }
}

/// `1 − exp(−r (r − d))`: zero on the rim, close to one near the center.
#[inline]
pub fn boundary_index(r: f64, d: f64) -> f64 {
    1.0 - (-r * (r - d)).exp()
}

/// TOD saliency used by the simulated annotator.
///
/// For member `x` with k-nn set `N(x)` inside the sub-cloud (self included):
/// `D′(x) = b_x · Σ_{i∈N(x)} D(x_i)·[l_{x_i} = l_x] / k`, where `b_x` is the
/// [`boundary_index`] of the horizontal distance from the center.
/// `tod` and the result are indexed like `sub.members`.
pub fn click_saliency<T: Scalar>(
    sub: &SubCloud,
    positions: &[[f64; 3]],
    tod: &[T],
    gt: &[usize],
    k: usize,
) -> Result<Vec<T>> {
    let n = sub.len();
    if tod.len() != n {
        return Err(Error::Shape(format!("{} TOD values for {} members", tod.len(), n)));
    }
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("k = {k} must lie in [1, {n}]")));
    }
    let local: Vec<[f64; 3]> = sub.members.iter().map(|&m| positions[m]).collect();
    let index = SpatialIndex::new(&local)?;
    let neighbors = knn_with_self(&index, k);
    let inv_k = T::of(1.0 / k as f64);
    Ok((0..n)
        .map(|x| {
            let lx = gt[sub.members[x]];
            let mut acc = T::zero();
            for &i in &neighbors[x * k..(x + 1) * k] {
                if gt[sub.members[i]] == lx {
                    acc += tod[i];
                }
            }
            let b = boundary_index(sub.radius, sub.planar_distance(local[x]));
            acc * inv_k * T::of(b)
        })
        .collect())
}

/// Row-major `n × k` neighbor lists in which every point lists itself
/// first, followed by its nearest others.
pub(crate) fn knn_with_self(index: &SpatialIndex, k: usize) -> Vec<usize> {
    let n = index.len();
    let k = k.min(n);
    let mut out = Vec::with_capacity(n * k);
    let mut heap = BinaryHeap::new();
    let mut buf = Vec::with_capacity(k + 1);
    for i in 0..n {
        index.knn_indices_into(index.positions()[i], (k + 1).min(n), &mut heap, &mut buf);
        out.push(i);
        out.extend(buf.iter().copied().filter(|&j| j != i).take(k - 1));
    }
    out
}

/// Clicks the member with the highest saliency of each present class;
/// ties go to the smallest point index.
pub fn simulate_ococ_tod<T: Scalar>(
    sub: &SubCloud,
    positions: &[[f64; 3]],
    tod: &[T],
    gt: &[usize],
    k: usize,
) -> Result<OcocLabel> {
    let saliency = click_saliency(sub, positions, tod, gt, k)?;
    let mut best: BTreeMap<usize, (usize, T)> = BTreeMap::new();
    for (x, &m) in sub.members.iter().enumerate() {
        let s = saliency[x];
        best.entry(gt[m])
            .and_modify(|e| {
                if s > e.1 {
                    *e = (m, s);
                }
            })
            .or_insert((m, s));
    }
    Ok(OcocLabel {
        clicks: best.into_iter().map(|(c, (m, _))| (c, m)).collect(),
    })
}

/// Inverse-square-root class weights normalized to sum to one; classes
/// without clicks get weight zero.
pub fn class_weights(click_counts: &[usize]) -> Result<Vec<f64>> {
    let inv: Vec<f64> = click_counts
        .iter()
        .map(|&m| if m == 0 { 0.0 } else { 1.0 / (m as f64).sqrt() })
        .collect();
    let total: f64 = inv.iter().sum();
    if total == 0.0 {
        return Err(Error::EmptyPool);
    }
    Ok(inv.into_iter().map(|w| w / total).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub sub: SubCloud,
    pub label: OcocLabel,
}

/// Annotated sub-clouds accumulated over the active-learning cycles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledPool {
    pub class_count: usize,
    pub entries: Vec<PoolEntry>,
}

impl LabeledPool {
    pub fn new(class_count: usize) -> Self {
        Self {
            class_count,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, sub: SubCloud, label: OcocLabel) {
        self.entries.push(PoolEntry { sub, label });
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Scene-level multi-hot label of entry `k`.
    pub fn scene_label(&self, k: usize) -> Vec<bool> {
        self.entries[k].label.multi_hot(self.class_count)
    }

    /// Clicks per class across the pool.
    pub fn click_counts(&self) -> Vec<usize> {
        let mut m = vec![0; self.class_count];
        for e in &self.entries {
            for c in e.label.classes() {
                m[c] += 1;
            }
        }
        m
    }

    pub fn total_clicks(&self) -> usize {
        self.entries.iter().map(|e| e.label.len()).sum()
    }

    pub fn class_weights(&self) -> Result<Vec<f64>> {
        class_weights(&self.click_counts())
    }

    /// Clicked points over the size of the (subsampled) training cloud.
    pub fn label_fraction(&self, training_points: usize) -> f64 {
        label_fraction(self.total_clicks(), training_points)
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn read_json<R: Read>(r: R) -> Result<Self> {
        Ok(serde_json::from_reader(r)?)
    }
}

pub fn label_fraction(clicks: usize, training_points: usize) -> f64 {
    if training_points == 0 {
        0.0
    } else {
        clicks as f64 / training_points as f64
    }
}
