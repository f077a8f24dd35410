//! Point-cloud data model, ingestion, grid subsampling and spatial queries.

mod grid;
mod index;
mod io;

pub use grid::{grid_cells, grid_subsample, SubsampleMap};
pub use index::{nn_indices, nn_transfer, nn_transfer_rows, Neighbor, SpatialIndex};
pub use io::{parse_cloud, read_cloud, write_cloud, Column, Format, Schema};

use crate::error::{Error, Result};

/// Positions in meters, per-point feature vectors and optional class ids.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    positions: Vec<[f64; 3]>,
    /// Row-major `N × feature_dim`.
    features: Vec<f64>,
    feature_dim: usize,
    labels: Option<Vec<usize>>,
    class_count: usize,
}

impl PointCloud {
    pub fn new(
        positions: Vec<[f64; 3]>,
        features: Vec<f64>,
        feature_dim: usize,
        labels: Option<Vec<usize>>,
        class_count: usize,
    ) -> Result<Self> {
        let n = positions.len();
        if n == 0 {
            return Err(Error::NoPoints);
        }
        if class_count == 0 {
            return Err(Error::Schema("class count must be positive".into()));
        }
        if features.len() != n * feature_dim {
            return Err(Error::Shape(format!(
                "{} feature values for {} points of dimension {}",
                features.len(),
                n,
                feature_dim
            )));
        }
        if let Some(i) = positions.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::InvalidArgument(format!("point {i} has a non-finite coordinate")));
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(Error::Shape(format!("{} labels for {} points", labels.len(), n)));
            }
            if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
                return Err(Error::Schema(format!("label {bad} outside [0, {class_count})")));
            }
        }
        Ok(Self {
            positions,
            features,
            feature_dim,
            labels,
            class_count,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    /// Always false; a cloud holds at least one point.
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    #[inline]
    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    #[inline]
    pub fn position(&self, i: usize) -> [f64; 3] {
        self.positions[i]
    }

    #[inline]
    pub fn features(&self) -> &[f64] {
        &self.features
    }

    #[inline]
    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    #[inline]
    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    #[inline]
    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    #[inline]
    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Labels, or an error naming the operation that needed them.
    pub fn require_labels(&self, what: &str) -> Result<&[usize]> {
        self.labels()
            .ok_or_else(|| Error::Schema(format!("{what} requires ground-truth labels")))
    }

    /// Copy of the cloud restricted to `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let positions = indices.iter().map(|&i| self.positions[i]).collect();
        let mut features = Vec::with_capacity(indices.len() * self.feature_dim);
        for &i in indices {
            features.extend_from_slice(self.feature(i));
        }
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        Self::new(positions, features, self.feature_dim, labels, self.class_count)
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        bounds(&self.positions)
    }

    /// Per-class point counts; zeros when unlabeled.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.class_count];
        if let Some(labels) = &self.labels {
            for &l in labels {
                h[l] += 1;
            }
        }
        h
    }
}

pub(crate) fn bounds(points: &[[f64; 3]]) -> ([f64; 3], [f64; 3]) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    (lo, hi)
}

pub(crate) fn bounds_of(points: &[[f64; 3]], subset: &[u32]) -> ([f64; 3], [f64; 3]) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in subset {
        let p = &points[i as usize];
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    (lo, hi)
}

/// k-d tree over the positions of `cloud`.
pub fn build_index(cloud: &PointCloud) -> SpatialIndex {
    SpatialIndex::new(cloud.positions()).expect("a point cloud is never empty")
}

#[inline]
pub fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}
