//! Deterministic synthetic urban scenes with ground-truth labels.
//!
//! Ground is a jittered planar grid; buildings are box shells (walls and
//! roof); trees are a cylindrical trunk under a spherical crown; cars are
//! small rotated box shells; poles are thin vertical cylinders. Each class
//! has a base pseudo-color perturbed per object and per point, so color
//! helps but does not separate the classes on its own.

use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::PointCloud;

pub const GROUND: usize = 0;
pub const BUILDING: usize = 1;
pub const TREE: usize = 2;
pub const CAR: usize = 3;
pub const POLE: usize = 4;
pub const CLASS_NAMES: [&str; 5] = ["ground", "building", "tree", "car", "pole"];

/// Objects placed on top of the ground plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectCounts {
    pub buildings: usize,
    pub trees: usize,
    pub cars: usize,
    pub poles: usize,
}

impl Default for ObjectCounts {
    fn default() -> Self {
        Self {
            buildings: 4,
            trees: 18,
            cars: 14,
            poles: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    /// Width and depth of the scene in meters, starting at the origin.
    pub extent: [f64; 2],
    /// Points per square meter of sampled surface.
    pub density: f64,
    pub ground: bool,
    pub objects: ObjectCounts,
    /// Gaussian position noise σ in meters.
    pub noise: f64,
    /// Per-point color noise σ (colors in `[0, 1]`).
    pub color_noise: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            extent: [60.0, 60.0],
            density: 30.0,
            ground: true,
            objects: ObjectCounts::default(),
            noise: 0.02,
            color_noise: 0.08,
            seed: 0,
        }
    }
}

impl SceneConfig {
    /// Ground-only scene.
    pub fn ground_only(extent: [f64; 2], density: f64, seed: u64) -> Self {
        Self {
            extent,
            density,
            objects: ObjectCounts {
                buildings: 0,
                trees: 0,
                cars: 0,
                poles: 0,
            },
            seed,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.density > 0.0) || !self.density.is_finite() {
            return Err(Error::Config(format!("density must be positive, got {}", self.density)));
        }
        if !(self.extent[0] > 0.0 && self.extent[1] > 0.0) {
            return Err(Error::Config(format!("extent must be positive, got {:?}", self.extent)));
        }
        if !(self.noise >= 0.0) || !(self.color_noise >= 0.0) {
            return Err(Error::Config("noise levels must be non-negative".into()));
        }
        if !self.ground {
            return Err(Error::Config("a scene needs at least the ground class".into()));
        }
        Ok(())
    }
}

/// Record of what a generated scene contains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub seed: u64,
    pub points: usize,
    pub class_names: Vec<String>,
    pub class_counts: Vec<usize>,
    pub objects: ObjectCounts,
}

struct Builder {
    rng: ChaCha8Rng,
    noise: Normal<f64>,
    color_noise: Normal<f64>,
    density: f64,
    positions: Vec<[f64; 3]>,
    features: Vec<f64>,
    labels: Vec<usize>,
}

impl Builder {
    fn push(&mut self, p: [f64; 3], color: [f64; 3], label: usize) {
        let q = [
            p[0] + self.noise.sample(&mut self.rng),
            p[1] + self.noise.sample(&mut self.rng),
            p[2] + self.noise.sample(&mut self.rng),
        ];
        self.positions.push(q);
        for c in color {
            let v = c + self.color_noise.sample(&mut self.rng);
            self.features.push(v.clamp(0.0, 1.0));
        }
        self.labels.push(label);
    }

    fn count_for(&mut self, area: f64) -> usize {
        let expected = area * self.density;
        let base = expected.floor();
        base as usize + usize::from(self.rng.gen::<f64>() < expected - base)
    }

    fn jitter_color(&mut self, base: [f64; 3], sigma: f64) -> [f64; 3] {
        let n = Normal::new(0.0, sigma).expect("sigma is finite");
        [
            base[0] + n.sample(&mut self.rng),
            base[1] + n.sample(&mut self.rng),
            base[2] + n.sample(&mut self.rng),
        ]
    }

    /// Uniform samples on a rectangle spanned by `origin + s·u + t·v`.
    fn rectangle(&mut self, origin: [f64; 3], u: [f64; 3], v: [f64; 3], color: [f64; 3], label: usize) {
        let area = norm(u) * norm(v);
        for _ in 0..self.count_for(area) {
            let s: f64 = self.rng.gen();
            let t: f64 = self.rng.gen();
            let p = [
                origin[0] + s * u[0] + t * v[0],
                origin[1] + s * u[1] + t * v[1],
                origin[2] + s * u[2] + t * v[2],
            ];
            self.push(p, color, label);
        }
    }

    /// Lateral surface of a vertical cylinder.
    fn cylinder(&mut self, base: [f64; 3], radius: f64, height: f64, color: [f64; 3], label: usize) {
        let area = 2.0 * PI * radius * height;
        for _ in 0..self.count_for(area) {
            let a = self.rng.gen::<f64>() * 2.0 * PI;
            let h = self.rng.gen::<f64>() * height;
            self.push(
                [base[0] + radius * a.cos(), base[1] + radius * a.sin(), base[2] + h],
                color,
                label,
            );
        }
    }

    /// Sphere surface with a little radial depth, like foliage.
    fn crown(&mut self, center: [f64; 3], radius: f64, color: [f64; 3], label: usize) {
        let area = 4.0 * PI * radius * radius;
        for _ in 0..self.count_for(area) {
            let z: f64 = self.rng.gen_range(-1.0..1.0);
            let a = self.rng.gen::<f64>() * 2.0 * PI;
            let s = (1.0 - z * z).sqrt();
            let r = radius * (1.0 - 0.25 * self.rng.gen::<f64>());
            self.push(
                [center[0] + r * s * a.cos(), center[1] + r * s * a.sin(), center[2] + r * z],
                color,
                label,
            );
        }
    }

    /// Box shell without floor, rotated by `yaw` about its vertical axis.
    fn box_shell(
        &mut self,
        center: [f64; 2],
        size: [f64; 3],
        yaw: f64,
        wall_density: f64,
        wall: [f64; 3],
        roof: [f64; 3],
        label: usize,
    ) {
        let (c, s) = (yaw.cos(), yaw.sin());
        let ex = [size[0] * c, size[0] * s, 0.0];
        let ey = [-size[1] * s, size[1] * c, 0.0];
        let corner = [
            center[0] - 0.5 * (ex[0] + ey[0]),
            center[1] - 0.5 * (ex[1] + ey[1]),
            0.0,
        ];
        let up = [0.0, 0.0, size[2]];
        let roof_origin = [corner[0], corner[1], size[2]];
        self.rectangle(roof_origin, ex, ey, roof, label);
        let saved = self.density;
        self.density *= wall_density;
        let far_x = [corner[0] + ex[0], corner[1] + ex[1], 0.0];
        let far_y = [corner[0] + ey[0], corner[1] + ey[1], 0.0];
        self.rectangle(corner, ex, up, wall, label);
        self.rectangle(corner, ey, up, wall, label);
        self.rectangle(far_x, ey, up, wall, label);
        self.rectangle(far_y, ex, up, wall, label);
        self.density = saved;
    }
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Footprint used for non-overlapping placement.
struct Footprint {
    center: [f64; 2],
    radius: f64,
}

fn place(
    rng: &mut ChaCha8Rng,
    extent: [f64; 2],
    radius: f64,
    taken: &mut Vec<Footprint>,
) -> Option<[f64; 2]> {
    let margin = radius + 0.5;
    if extent[0] <= 2.0 * margin || extent[1] <= 2.0 * margin {
        return None;
    }
    for _ in 0..200 {
        let c = [
            rng.gen_range(margin..extent[0] - margin),
            rng.gen_range(margin..extent[1] - margin),
        ];
        let free = taken.iter().all(|f| {
            let dx = f.center[0] - c[0];
            let dy = f.center[1] - c[1];
            (dx * dx + dy * dy).sqrt() > f.radius + radius + 0.5
        });
        if free {
            taken.push(Footprint { center: c, radius });
            return Some(c);
        }
    }
    None
}

/// Generates a labeled scene. Output depends only on `config`.
pub fn generate_scene(config: &SceneConfig) -> Result<(PointCloud, SceneManifest)> {
    config.validate()?;
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        noise: Normal::new(0.0, config.noise).map_err(|e| Error::Config(e.to_string()))?,
        color_noise: Normal::new(0.0, config.color_noise).map_err(|e| Error::Config(e.to_string()))?,
        density: config.density,
        positions: Vec::new(),
        features: Vec::new(),
        labels: Vec::new(),
    };
    let extent = config.extent;
    let mut taken: Vec<Footprint> = Vec::new();
    let mut placed = ObjectCounts {
        buildings: 0,
        trees: 0,
        cars: 0,
        poles: 0,
    };

    // Buildings first; their footprints hide the ground underneath.
    let mut roofs: Vec<([f64; 2], [f64; 2], f64)> = Vec::new();
    for _ in 0..config.objects.buildings {
        let w: f64 = b.rng.gen_range(7.0..13.0);
        let d = b.rng.gen_range(7.0..13.0);
        let h = b.rng.gen_range(5.0..12.0);
        let yaw = b.rng.gen_range(0.0..PI / 2.0);
        let radius = 0.5 * (w * w + d * d).sqrt();
        let Some(c) = place(&mut b.rng, extent, radius, &mut taken) else {
            continue;
        };
        let wall = b.jitter_color([0.72, 0.66, 0.58], 0.06);
        let roof = b.jitter_color([0.60, 0.36, 0.30], 0.08);
        b.box_shell(c, [w, d, h], yaw, 0.35, wall, roof, BUILDING);
        roofs.push((c, [w, d], yaw));
        placed.buildings += 1;
    }
    for _ in 0..config.objects.trees {
        let crown = b.rng.gen_range(1.5..3.0);
        let Some(c) = place(&mut b.rng, extent, crown, &mut taken) else {
            continue;
        };
        let trunk_h = b.rng.gen_range(1.5..3.0);
        let bark = b.jitter_color([0.40, 0.30, 0.22], 0.04);
        let leaves = b.jitter_color([0.30, 0.52, 0.24], 0.07);
        b.cylinder([c[0], c[1], 0.0], 0.2, trunk_h, bark, TREE);
        b.crown([c[0], c[1], trunk_h + 0.8 * crown], crown, leaves, TREE);
        placed.trees += 1;
    }
    for _ in 0..config.objects.cars {
        let Some(c) = place(&mut b.rng, extent, 2.4, &mut taken) else {
            continue;
        };
        let yaw = b.rng.gen_range(0.0..PI);
        let paint = [b.rng.gen_range(0.1..0.9), b.rng.gen_range(0.1..0.9), b.rng.gen_range(0.1..0.9)];
        b.box_shell(c, [4.3, 1.8, 1.5], yaw, 0.8, paint, paint, CAR);
        placed.cars += 1;
    }
    for _ in 0..config.objects.poles {
        let Some(c) = place(&mut b.rng, extent, 0.3, &mut taken) else {
            continue;
        };
        let h = b.rng.gen_range(4.0..8.0);
        let metal = b.jitter_color([0.52, 0.52, 0.54], 0.04);
        // Thin cylinders get few surface samples; keep them visible.
        let saved = b.density;
        b.density *= 3.0;
        b.cylinder([c[0], c[1], 0.0], 0.12, h, metal, POLE);
        b.density = saved;
        placed.poles += 1;
    }

    // Ground: jittered grid, skipping building footprints. A few grassy
    // patches share hue with tree crowns.
    let spacing = 1.0 / config.density.sqrt();
    let nx = (extent[0] / spacing).round().max(1.0) as usize;
    let ny = (extent[1] / spacing).round().max(1.0) as usize;
    let patches: Vec<([f64; 2], f64)> = (0..6)
        .map(|_| {
            (
                [b.rng.gen_range(0.0..extent[0]), b.rng.gen_range(0.0..extent[1])],
                b.rng.gen_range(3.0..8.0),
            )
        })
        .collect();
    let asphalt = [0.42, 0.41, 0.40];
    let grass = [0.38, 0.50, 0.30];
    for i in 0..nx {
        for j in 0..ny {
            let x = (i as f64 + b.rng.gen::<f64>()) * extent[0] / nx as f64;
            let y = (j as f64 + b.rng.gen::<f64>()) * extent[1] / ny as f64;
            if roofs.iter().any(|&(c, size, yaw)| inside_rotated(x, y, c, size, yaw)) {
                continue;
            }
            let grassy = patches.iter().any(|&(c, r)| (x - c[0]).hypot(y - c[1]) < r);
            let color = if grassy { grass } else { asphalt };
            b.push([x, y, 0.0], color, GROUND);
        }
    }

    let mut class_counts = vec![0; CLASS_NAMES.len()];
    for &l in &b.labels {
        class_counts[l] += 1;
    }
    let manifest = SceneManifest {
        seed: config.seed,
        points: b.positions.len(),
        class_names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        class_counts,
        objects: placed,
    };
    let cloud = PointCloud::new(b.positions, b.features, 3, Some(b.labels), CLASS_NAMES.len())?;
    Ok((cloud, manifest))
}

fn inside_rotated(x: f64, y: f64, c: [f64; 2], size: [f64; 2], yaw: f64) -> bool {
    let (dx, dy) = (x - c[0], y - c[1]);
    let u = dx * yaw.cos() + dy * yaw.sin();
    let v = -dx * yaw.sin() + dy * yaw.cos();
    u.abs() <= 0.5 * size[0] && v.abs() <= 0.5 * size[1]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ground_only_scene() {
        let (cloud, manifest) = generate_scene(&SceneConfig::ground_only([10.0, 10.0], 100.0, 3)).unwrap();
        assert_eq!(cloud.len(), 10_000);
        assert!(cloud.labels().unwrap().iter().all(|&l| l == GROUND));
        assert_eq!(manifest.class_counts, vec![10_000, 0, 0, 0, 0]);
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let cfg = SceneConfig {
            extent: [30.0, 30.0],
            density: 10.0,
            seed: 11,
            ..SceneConfig::default()
        };
        let (a, _) = generate_scene(&cfg).unwrap();
        let (b, _) = generate_scene(&cfg).unwrap();
        assert_eq!(a, b);
        let (c, _) = generate_scene(&SceneConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn missing_ground_is_an_error() {
        let cfg = SceneConfig {
            ground: false,
            ..SceneConfig::default()
        };
        assert!(matches!(generate_scene(&cfg), Err(Error::Config(_))));
        let cfg = SceneConfig {
            density: 0.0,
            ..SceneConfig::default()
        };
        assert!(generate_scene(&cfg).is_err());
    }

    #[test]
    fn points_stay_inside_extent() {
        let cfg = SceneConfig {
            extent: [40.0, 25.0],
            density: 8.0,
            seed: 5,
            ..SceneConfig::default()
        };
        let (cloud, _) = generate_scene(&cfg).unwrap();
        let m = 3.0 * cfg.noise;
        for p in cloud.positions() {
            assert!(p[0] >= -m && p[0] <= cfg.extent[0] + m, "{p:?}");
            assert!(p[1] >= -m && p[1] <= cfg.extent[1] + m, "{p:?}");
        }
    }
}
