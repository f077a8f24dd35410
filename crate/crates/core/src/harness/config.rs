use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossFlags;
use crate::model::ModelConfig;
use crate::synth::SceneConfig;

/// Inference stride as a multiple of the sub-cloud radius; gives a mean
/// coverage close to three on the synthetic scenes.
pub const DEFAULT_STRIDE_FACTOR: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Clicks only (`L_seg`).
    Baseline,
    /// Clicks, scene-level constraints and pseudo labels.
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryMode {
    Random,
    Tod,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Supervision {
    /// Actively queried sub-clouds with one click per present class.
    Ococ,
    /// Every training point labeled; sub-clouds tile the cloud.
    Dense,
}

macro_rules! parse_enum {
    ($t:ty, $($s:literal => $v:expr),+) => {
        impl FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.to_ascii_lowercase().as_str() {
                    $($s => Ok($v),)+
                    other => Err(Error::Config(format!("unknown value `{other}`"))),
                }
            }
        }
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let s = match self { $(v if *v == $v => $s,)+ _ => unreachable!() };
                f.write_str(s)
            }
        }
    };
}

parse_enum!(Mode, "baseline" => Mode::Baseline, "full" => Mode::Full);
parse_enum!(QueryMode, "random" => QueryMode::Random, "tod" => QueryMode::Tod);
parse_enum!(Supervision, "ococ" => Supervision::Ococ, "dense" => Supervision::Dense);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Where the training and validation clouds come from. When a path is set
/// the file is read with `columns`; otherwise the scene is generated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub train_scene: SceneConfig,
    pub validation_scene: SceneConfig,
    pub train_path: Option<PathBuf>,
    pub validation_path: Option<PathBuf>,
    /// Column roles for file input, e.g. `xyzrgbl`.
    pub columns: String,
    pub classes: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_scene: SceneConfig {
                seed: 1,
                ..SceneConfig::default()
            },
            validation_scene: SceneConfig {
                seed: 2,
                ..SceneConfig::default()
            },
            train_path: None,
            validation_path: None,
            columns: "xyzrgbl".into(),
            classes: crate::synth::CLASS_NAMES.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Training-cloud subsampling cell in meters.
    pub grid_cell: f64,
    /// Sub-cloud radius `r` in meters.
    pub radius: f64,
    /// Sub-clouds queried per cycle (`K`).
    pub per_cycle: usize,
    pub cycles: usize,
    pub epochs: usize,
    /// Maximum member points per training batch.
    pub batch_cap: usize,
    pub mode: Mode,
    pub query: QueryMode,
    pub supervision: Supervision,
    /// Overrides the mode's choice for `L_sl` and `L_gmp`.
    pub contextual: Option<bool>,
    /// Overrides the mode's choice for `L_pl`.
    pub pseudo: Option<bool>,
    /// Inference stride in meters; `radius · DEFAULT_STRIDE_FACTOR` if unset.
    pub inference_stride: Option<f64>,
    /// k of the refined-TOD graph.
    pub refine_k: usize,
    /// k of the annotator's saliency smoothing.
    pub saliency_k: usize,
    /// Record structural invariants on every step.
    pub audit: bool,
    pub optimizer: OptimizerConfig,
    pub model: ModelConfig,
    pub data: DataConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            grid_cell: 0.1,
            radius: 4.0,
            per_cycle: 30,
            cycles: 5,
            epochs: 30,
            batch_cap: 12_000,
            mode: Mode::Full,
            query: QueryMode::Tod,
            supervision: Supervision::Ococ,
            contextual: None,
            pseudo: None,
            inference_stride: None,
            refine_k: crate::active::DEFAULT_REFINE_K,
            saliency_k: crate::weaklabel::DEFAULT_SALIENCY_K,
            audit: false,
            optimizer: OptimizerConfig::default(),
            model: ModelConfig::default(),
            data: DataConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// The full configuration, defaults included, as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("per_cycle", self.per_cycle),
            ("cycles", self.cycles),
            ("epochs", self.epochs),
            ("batch_cap", self.batch_cap),
            ("refine_k", self.refine_k),
            ("saliency_k", self.saliency_k),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        for (name, v) in [("grid_cell", self.grid_cell), ("radius", self.radius), ("optimizer.lr", self.optimizer.lr)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if let Some(s) = self.inference_stride {
            if !(s > 0.0) {
                return Err(Error::Config(format!("inference_stride must be positive, got {s}")));
            }
        }
        if self.data.classes == 0 {
            return Err(Error::Config("data.classes must be positive".into()));
        }
        self.model.validate()
    }

    pub fn stride(&self) -> f64 {
        self.inference_stride.unwrap_or(self.radius * DEFAULT_STRIDE_FACTOR)
    }

    /// Enabled loss terms after applying the overrides.
    pub fn loss_flags(&self) -> LossFlags {
        let mut flags = match (self.supervision, self.mode) {
            (Supervision::Dense, _) | (_, Mode::Baseline) => LossFlags::BASELINE,
            (_, Mode::Full) => LossFlags::FULL,
        };
        if self.supervision == Supervision::Ococ {
            if let Some(c) = self.contextual {
                flags.sl = c;
                flags.gmp = c;
            }
            if let Some(p) = self.pseudo {
                flags.pl = p;
            }
        }
        flags
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = ExperimentConfig::default();
        assert_eq!((c.grid_cell, c.radius, c.batch_cap, c.optimizer.lr), (0.1, 4.0, 12_000, 1e-3));
        assert_eq!(c.loss_flags(), LossFlags::FULL);
        assert!((c.stride() - 3.6).abs() < 1e-12);
    }

    #[test]
    fn toml_round_trip_and_overrides() {
        let c = ExperimentConfig::from_toml(
            r#"
            seed = 9
            mode = "baseline"
            query = "random"
            pseudo = true
            [model]
            encoder_widths = [8, 8]
            [data.train_scene]
            extent = [20.0, 20.0]
            "#,
        )
        .unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.query, QueryMode::Random);
        assert_eq!(c.model.encoder_widths, vec![8, 8]);
        assert_eq!(c.data.train_scene.extent, [20.0, 20.0]);
        assert_eq!(c.data.train_scene.density, SceneConfig::default().density);
        let f = c.loss_flags();
        assert!(f.seg && !f.sl && !f.gmp && f.pl);
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::from_toml("cycles = 0").is_err());
        assert!(ExperimentConfig::from_toml("radius = -1.0").is_err());
        assert!(ExperimentConfig::from_toml("mode = \"weird\"").is_err());
        assert_eq!("TOD".parse::<QueryMode>().unwrap(), QueryMode::Tod);
        assert_eq!(Mode::Full.to_string(), "full");
    }
}
