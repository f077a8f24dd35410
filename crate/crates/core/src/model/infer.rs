use super::{Model, Params, SampleInput};
use crate::error::{Error, Result};
use crate::pointcloud::{grid_cells, PointCloud, SpatialIndex};
use crate::scalar::Scalar;

/// Per-point class probabilities for a whole cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMap<T> {
    pub classes: usize,
    /// Row-major `n × C`.
    pub probs: Vec<T>,
    /// Number of inference sub-clouds containing each point.
    pub coverage: Vec<u32>,
    pub centers: Vec<[f64; 3]>,
}

impl<T: Scalar> ProbabilityMap<T> {
    #[inline]
    pub fn len(&self) -> usize {
        self.coverage.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.coverage.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.probs[i * self.classes..(i + 1) * self.classes]
    }

    /// Most probable class; ties go to the smaller class id.
    pub fn argmax(&self, i: usize) -> usize {
        argmax(self.row(i))
    }

    pub fn predictions(&self) -> Vec<usize> {
        (0..self.len()).map(|i| self.argmax(i)).collect()
    }

    /// Points no inference sub-cloud reached; their rows are uniform.
    pub fn uncovered(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.coverage[i] == 0).collect()
    }

    pub fn mean_coverage(&self) -> f64 {
        self.coverage.iter().map(|&c| c as f64).sum::<f64>() / self.len().max(1) as f64
    }

    /// Probabilities as `f64` rows, e.g. for export.
    pub fn to_f64(&self) -> Vec<f64> {
        self.probs.iter().map(|p| p.f64()).collect()
    }
}

pub(crate) fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (c, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = c;
        }
    }
    best
}

/// Sub-cloud centers covering `cloud`: the centroids of the columns of a
/// horizontal `stride` grid, then a greedy pass (in point order) that adds a center at every point
/// still outside all spheres of radius `r`.
pub fn inference_centers(cloud: &PointCloud, index: &SpatialIndex, r: f64, stride: f64) -> Result<Vec<[f64; 3]>> {
    if !(r > 0.0) || !(stride > 0.0) {
        return Err(Error::InvalidArgument(format!("radius {r} and stride {stride} must be positive")));
    }
    // Cells tile the horizontal plane only; tall structures are reached by
    // the gap-filling pass below.
    let flat: Vec<[f64; 3]> = cloud.positions().iter().map(|p| [p[0], p[1], 0.0]).collect();
    let cells = grid_cells(&flat, stride)?;
    let mut centers: Vec<[f64; 3]> = (0..cells.len())
        .map(|j| {
            let m = cells.members(j);
            let mut c = [0.0; 3];
            for &i in m {
                let p = cloud.position(i);
                for a in 0..3 {
                    c[a] += p[a];
                }
            }
            c.map(|v| v / m.len() as f64)
        })
        .collect();
    let mut covered = vec![false; cloud.len()];
    let mut buf = Vec::new();
    for c in &centers {
        index.radius_into(*c, r, &mut buf);
        for &i in &buf {
            covered[i] = true;
        }
    }
    for i in 0..cloud.len() {
        if !covered[i] {
            let c = cloud.position(i);
            index.radius_into(c, r, &mut buf);
            for &j in &buf {
                covered[j] = true;
            }
            centers.push(c);
        }
    }
    Ok(centers)
}

/// Predicts every point of `cloud` by averaging the softmax outputs of all
/// overlapping inference sub-clouds (see [`inference_centers`]).
pub fn infer_cloud<T: Scalar>(
    model: &Model<T>,
    params: &Params<T>,
    cloud: &PointCloud,
    index: &SpatialIndex,
    r: f64,
    stride: f64,
) -> Result<ProbabilityMap<T>> {
    let c = model.classes();
    if cloud.feature_dim() != model.config().feature_dim {
        return Err(Error::Shape(format!(
            "cloud has {} features, model expects {}",
            cloud.feature_dim(),
            model.config().feature_dim
        )));
    }
    let centers = inference_centers(cloud, index, r, stride)?;
    let mut sum = vec![0.0f64; cloud.len() * c];
    let mut coverage = vec![0u32; cloud.len()];
    let mut members = Vec::new();
    for &center in &centers {
        index.radius_into(center, r, &mut members);
        if members.is_empty() {
            continue;
        }
        let input = SampleInput::new(cloud, &members, center, model.config().k_agg)?;
        let trace = model.predict(params, &input)?;
        for (row, &m) in members.iter().enumerate() {
            coverage[m] += 1;
            for (s, p) in sum[m * c..(m + 1) * c].iter_mut().zip(trace.prob_row(row)) {
                *s += p.f64();
            }
        }
    }
    let uniform = 1.0 / c as f64;
    let probs = sum
        .chunks_exact(c)
        .zip(&coverage)
        .flat_map(|(row, &k)| {
            row.iter()
                .map(move |&s| T::of(if k == 0 { uniform } else { s / k as f64 }))
        })
        .collect();
    Ok(ProbabilityMap {
        classes: c,
        probs,
        coverage,
        centers,
    })
}
