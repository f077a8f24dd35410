//! Finite-difference check of the full training-loss gradient.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::losses::{make_pseudo_labels, total_loss, BatchItem, Click, LossFlags, PseudoLabels, PseudoMode};
use crate::model::{ForwardTrace, Model, ModelConfig, Params, SampleInput};
use crate::pointcloud::PointCloud;
use crate::weaklabel::class_weights;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckConfig {
    pub points: usize,
    pub classes: usize,
    pub model: ModelConfig,
    /// Central-difference step.
    pub eps: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            points: 30,
            classes: 5,
            model: ModelConfig {
                encoder_widths: vec![8, 12],
                k_agg: 6,
                decoder_hidden: 10,
                scene_hidden: 8,
                classes: 5,
                feature_dim: 3,
            },
            eps: 1e-5,
            floor: 1e-7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub parameters: usize,
    /// Parameters whose ±eps perturbation changed a ReLU sign or a max
    /// argument; finite differences are meaningless there.
    pub skipped: usize,
    pub max_rel_error: f64,
    /// Parameter with the largest error.
    pub worst: String,
    pub seconds: f64,
}

/// One random sub-cloud with one click per present class and fixed pseudo
/// labels, all four loss terms enabled.
struct Problem {
    model: Model<f64>,
    input: SampleInput<f64>,
    clicks: Vec<Click>,
    scene: Vec<bool>,
    weights: Vec<f64>,
}

impl Problem {
    fn new(cfg: &GradcheckConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let n = cfg.points;
        let c = cfg.classes;
        let positions = (0..n)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.0..1.0)])
            .collect();
        let features = (0..n * cfg.model.feature_dim).map(|_| rng.gen_range(0.0..1.0)).collect();
        // at least two classes present
        let labels: Vec<usize> = (0..n)
            .map(|i| if i < 2 { i % c } else { rng.gen_range(0..c) })
            .collect();
        let cloud = PointCloud::new(positions, features, cfg.model.feature_dim, Some(labels.clone()), c)?;
        let mut model_cfg = cfg.model.clone();
        model_cfg.classes = c;
        let model = Model::new(model_cfg)?;
        let members: Vec<usize> = (0..n).collect();
        let input = SampleInput::new(&cloud, &members, [0.0, 0.0, 0.5], model.config().k_agg)?;
        let mut clicks = Vec::new();
        let mut scene = vec![false; c];
        let mut counts = vec![0; c];
        for class in 0..c {
            let rows: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
            if !rows.is_empty() {
                clicks.push(Click {
                    row: rows[rng.gen_range(0..rows.len())],
                    class,
                });
                scene[class] = true;
                counts[class] = 1 + rng.gen_range(0..4);
            }
        }
        Ok(Self {
            model,
            input,
            clicks,
            scene,
            weights: class_weights(&counts)?,
        })
    }

    fn loss(&self, trace: &ForwardTrace<f64>, pseudo: &[PseudoLabels<f64>]) -> Result<crate::losses::BatchLoss<f64>> {
        let item = BatchItem {
            trace,
            clicks: &self.clicks,
            scene: &self.scene,
        };
        total_loss(&[item], &self.weights, LossFlags::FULL, PseudoMode::Fixed(pseudo))
    }
}

/// Hash of every discrete choice the forward pass and `L_gmp` make.
fn pattern(trace: &ForwardTrace<f64>) -> u64 {
    let mut h = DefaultHasher::new();
    trace.hash_pattern(&mut h);
    let c = trace.classes();
    for class in 0..c {
        let mut arg = 0;
        for i in 1..trace.len() {
            if trace.probs()[i * c + class] > trace.probs()[arg * c + class] {
                arg = i;
            }
        }
        arg.hash(&mut h);
    }
    h.finish()
}

/// Compares the analytic gradient of `L_seg + L_sl + L_gmp + L_pl` with
/// central differences on every parameter of a freshly initialized model.
pub fn gradcheck(cfg: &GradcheckConfig, seed: u64) -> Result<GradcheckReport> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let problem = Problem::new(cfg, &mut rng)?;
    let model = &problem.model;
    let params = model.init_params(seed);
    let trace = model.forward(&params, &problem.input)?;
    let pseudo = vec![make_pseudo_labels(trace.probs(), cfg.classes, &problem.clicks)?];
    let loss = problem.loss(&trace, &pseudo)?;
    let analytic = model.backward(&params, &trace, &loss.grads[0])?;
    let base = pattern(&trace);

    let eval = |p: &Params<f64>| -> Result<(f64, u64)> {
        let tr = model.forward(p, &problem.input)?;
        Ok((problem.loss(&tr, &pseudo)?.bundle.total, pattern(&tr)))
    };
    let mut report = GradcheckReport {
        seed,
        parameters: params.len(),
        skipped: 0,
        max_rel_error: 0.0,
        worst: String::new(),
        seconds: 0.0,
    };
    let mut probe = params.clone();
    for i in 0..params.len() {
        probe.values[i] = params.values[i] + cfg.eps;
        let (plus, pp) = eval(&probe)?;
        probe.values[i] = params.values[i] - cfg.eps;
        let (minus, pm) = eval(&probe)?;
        probe.values[i] = params.values[i];
        if pp != base || pm != base {
            report.skipped += 1;
            continue;
        }
        let fd = (plus - minus) / (2.0 * cfg.eps);
        let a = analytic[i];
        let err = (fd - a).abs() / fd.abs().max(a.abs()).max(cfg.floor);
        if err > report.max_rel_error {
            report.max_rel_error = err;
            let t = params.layout.tensor_of(i).expect("index in layout");
            report.worst = format!("{}[{}]", t.name, i - t.offset);
        }
    }
    report.seconds = start.elapsed().as_secs_f64();
    Ok(report)
}
