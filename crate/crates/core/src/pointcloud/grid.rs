use std::collections::HashMap;

use super::PointCloud;
use crate::error::{Error, Result};

/// Source ↔ representative correspondence produced by grid subsampling.
#[derive(Clone, Debug, PartialEq)]
pub struct SubsampleMap {
    cell: f64,
    members: Vec<Vec<usize>>,
    representative: Vec<usize>,
}

impl SubsampleMap {
    #[inline]
    pub fn cell(&self) -> f64 {
        self.cell
    }

    /// Number of occupied cells (subsampled points).
    #[inline]
    pub fn len(&self) -> usize {
        self.members.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Source indices aggregated into subsampled point `i`, ascending.
    #[inline]
    pub fn members(&self, i: usize) -> &[usize] {
        &self.members[i]
    }

    /// Subsampled point representing source point `j`.
    #[inline]
    pub fn representative(&self, j: usize) -> usize {
        self.representative[j]
    }

    pub fn representatives(&self) -> &[usize] {
        &self.representative
    }

    /// Mean of a per-source row-major payload over each cell.
    pub fn mean_rows(&self, payload: &[f64], width: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.len() * width];
        for (i, members) in self.members.iter().enumerate() {
            let row = &mut out[i * width..(i + 1) * width];
            for &j in members {
                for (o, v) in row.iter_mut().zip(&payload[j * width..(j + 1) * width]) {
                    *o += v;
                }
            }
            let inv = 1.0 / members.len() as f64;
            row.iter_mut().for_each(|o| *o *= inv);
        }
        out
    }
}

/// Groups positions by axis-aligned cubic cell of side `cell`.
///
/// Output cells are ordered by their lowest member index.
pub fn grid_cells(positions: &[[f64; 3]], cell: f64) -> Result<SubsampleMap> {
    if !(cell > 0.0) || !cell.is_finite() {
        return Err(Error::InvalidArgument(format!("grid cell must be positive, got {cell}")));
    }
    let mut slots: HashMap<[i64; 3], usize> = HashMap::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut representative = Vec::with_capacity(positions.len());
    for (j, p) in positions.iter().enumerate() {
        let key = [
            (p[0] / cell).floor() as i64,
            (p[1] / cell).floor() as i64,
            (p[2] / cell).floor() as i64,
        ];
        let slot = *slots.entry(key).or_insert_with(|| {
            members.push(Vec::new());
            members.len() - 1
        });
        members[slot].push(j);
        representative.push(slot);
    }
    Ok(SubsampleMap {
        cell,
        members,
        representative,
    })
}

/// One point per occupied cell: centroid position, mean features and the
/// majority label (ties go to the smallest class id).
pub fn grid_subsample(cloud: &PointCloud, cell: f64) -> Result<(PointCloud, SubsampleMap)> {
    let map = grid_cells(cloud.positions(), cell)?;
    let d = cloud.feature_dim();
    let mut positions = Vec::with_capacity(map.len());
    let mut features = Vec::with_capacity(map.len() * d);
    let mut labels = cloud.labels().map(|_| Vec::with_capacity(map.len()));
    let mut votes = vec![0usize; cloud.class_count()];
    for members in &map.members {
        let inv = 1.0 / members.len() as f64;
        let mut c = [0.0; 3];
        for &j in members {
            let p = cloud.position(j);
            for a in 0..3 {
                c[a] += p[a];
            }
        }
        positions.push([c[0] * inv, c[1] * inv, c[2] * inv]);

        let start = features.len();
        features.resize(start + d, 0.0);
        for &j in members {
            for (o, v) in features[start..].iter_mut().zip(cloud.feature(j)) {
                *o += v;
            }
        }
        features[start..].iter_mut().for_each(|o| *o *= inv);

        if let (Some(out), Some(src)) = (labels.as_mut(), cloud.labels()) {
            votes.iter_mut().for_each(|v| *v = 0);
            for &j in members {
                votes[src[j]] += 1;
            }
            out.push(majority(&votes));
        }
    }
    let sub = PointCloud::new(positions, features, d, labels, cloud.class_count())?;
    Ok((sub, map))
}

/// Index of the largest count, smallest index on ties.
pub(crate) fn majority(votes: &[usize]) -> usize {
    let mut best = 0;
    for (c, &v) in votes.iter().enumerate() {
        if v > votes[best] {
            best = c;
        }
    }
    best
}
