//! Exhaustive O(N²) reference implementations.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn d2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Uniform points in a 20 m cube, with some duplicated positions so that
/// distance ties actually occur.
pub fn random_cloud(n: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts: Vec<[f64; 3]> = Vec::with_capacity(n);
    for i in 0..n {
        if i > 0 && rng.gen_bool(0.05) {
            let j = rng.gen_range(0..i);
            pts.push(pts[j]);
        } else {
            pts.push([rng.gen_range(0.0..20.0), rng.gen_range(0.0..20.0), rng.gen_range(0.0..20.0)]);
        }
    }
    pts
}

/// `(index, squared distance)` of the k nearest points, ties by index.
pub fn knn(points: &[[f64; 3]], q: [f64; 3], k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = points.iter().enumerate().map(|(i, p)| (i, d2(p, &q))).collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

pub fn radius(points: &[[f64; 3]], q: [f64; 3], r: f64) -> Vec<usize> {
    (0..points.len()).filter(|&i| d2(&points[i], &q) <= r * r).collect()
}

/// Local maxima with `≥` over the closed ball, then equal-valued maxima
/// within `r` of each other merged transitively, lowest index kept.
pub fn local_maxima(points: &[[f64; 3]], values: &[f64], r: f64) -> Vec<usize> {
    let n = points.len();
    let near = |i: usize, j: usize| d2(&points[i], &points[j]) <= r * r;
    let cand: Vec<bool> = (0..n).map(|i| (0..n).all(|j| !near(i, j) || values[i] >= values[j])).collect();
    let mut group = vec![usize::MAX; n];
    let mut out = Vec::new();
    for s in 0..n {
        if !cand[s] || group[s] != usize::MAX {
            continue;
        }
        out.push(s);
        group[s] = s;
        let mut stack = vec![s];
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if cand[j] && group[j] == usize::MAX && values[j] == values[i] && near(i, j) {
                    group[j] = s;
                    stack.push(j);
                }
            }
        }
    }
    out
}
