use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, QueryMode, Supervision};
use super::metrics::{metrics, Confusion};
use super::report::{CycleReport, Summary};
use crate::active::{compute_tod, plan_query, TodMap};
use crate::error::{Error, Result};
use crate::losses::{total_loss, BatchItem, Click, LossBundle, LossFlags, PseudoMode};
use crate::model::{infer_cloud, inference_centers, AdamState, Model, Params, ProbabilityMap, SampleInput};
use crate::pointcloud::{grid_subsample, nn_indices, read_cloud, Format, PointCloud, Schema, SpatialIndex};
use crate::scalar::Scalar;
use crate::synth::generate_scene;
use crate::weaklabel::{
    class_weights, extract_subcloud, label_fraction, simulate_ococ_random, simulate_ococ_tod, LabeledPool, OcocLabel,
    SubCloud,
};

/// Training and validation clouds, subsampled and indexed.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub classes: usize,
    /// Point count of the training cloud before subsampling.
    pub train_raw_len: usize,
    /// Subsampled training cloud; sub-clouds and clicks refer to it.
    pub train: PointCloud,
    pub train_index: SpatialIndex,
    /// Full-resolution validation cloud that metrics are computed on.
    pub validation_raw: PointCloud,
    pub validation: PointCloud,
    pub validation_index: SpatialIndex,
    /// Nearest subsampled validation point of every raw validation point.
    pub validation_lookup: Vec<usize>,
}

impl Dataset {
    /// Reads or generates both clouds as configured.
    pub fn prepare(cfg: &ExperimentConfig) -> Result<Self> {
        let d = &cfg.data;
        let load = |path: &Option<std::path::PathBuf>, scene: &crate::synth::SceneConfig| -> Result<PointCloud> {
            match path {
                Some(p) => {
                    let schema = Schema::parse_roles(&d.columns, d.classes)?;
                    read_cloud(p, Format::from_path(p), &schema)
                }
                None => Ok(generate_scene(scene)?.0),
            }
        };
        let train = load(&d.train_path, &d.train_scene)?;
        let validation = load(&d.validation_path, &d.validation_scene)?;
        Self::from_clouds(train, validation, cfg.grid_cell)
    }

    pub fn from_clouds(train_raw: PointCloud, validation_raw: PointCloud, grid_cell: f64) -> Result<Self> {
        train_raw.require_labels("training cloud")?;
        validation_raw.require_labels("validation cloud")?;
        if train_raw.class_count() != validation_raw.class_count()
            || train_raw.feature_dim() != validation_raw.feature_dim()
        {
            return Err(Error::Schema("training and validation clouds disagree in classes or features".into()));
        }
        let (train, _) = grid_subsample(&train_raw, grid_cell)?;
        let (validation, _) = grid_subsample(&validation_raw, grid_cell)?;
        let train_index = SpatialIndex::new(train.positions())?;
        let validation_index = SpatialIndex::new(validation.positions())?;
        let validation_lookup = nn_indices(&validation_index, validation_raw.positions());
        Ok(Self {
            classes: train_raw.class_count(),
            train_raw_len: train_raw.len(),
            train,
            train_index,
            validation_raw,
            validation,
            validation_index,
            validation_lookup,
        })
    }

    fn train_labels(&self) -> &[usize] {
        self.train.labels().expect("checked at construction")
    }
}

/// Structural checks recorded on every training step when auditing.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InvariantAudit {
    pub steps: usize,
    /// max |Σ_c p_ic − 1| over all points of all batches
    pub max_prob_row_error: f64,
    pub pseudo_labels_checked: usize,
    /// Pseudo labels outside their sub-cloud's OCOC class set.
    pub pseudo_violations: usize,
    /// Pseudo-label weights outside `[0, 1]`.
    pub pseudo_weight_violations: usize,
    /// max |Σ_c w_c − 1|
    pub max_class_weight_error: f64,
    pub refined_checked: usize,
    /// Largest relative excess of a refined TOD value over its
    /// neighborhood's `[min, max]` raw TOD.
    pub max_refined_excess: f64,
    pub max_batch_points: usize,
    pub batch_cap: usize,
}

/// Everything a run produces besides the per-cycle reports.
#[derive(Clone, Debug)]
pub struct ExperimentOutput<T> {
    pub reports: Vec<CycleReport>,
    pub summary: Summary,
    pub pool: LabeledPool,
    pub model: Model<T>,
    pub params: Params<T>,
    /// Predicted class of every raw validation point after the last cycle.
    pub validation_predictions: Vec<usize>,
    /// Probability of the predicted class.
    pub validation_confidence: Vec<f64>,
    /// TOD over the training cloud from the last query (TOD mode only).
    pub last_tod: Option<TodMap<T>>,
    /// Probabilities over the training cloud behind `last_tod`.
    pub last_train_probs: Option<ProbabilityMap<T>>,
    pub audit: Option<InvariantAudit>,
}

struct TrainItem<T> {
    input: SampleInput<T>,
    clicks: Vec<Click>,
    scene: Vec<bool>,
    /// Class set of `clicks`, for auditing pseudo labels.
    click_classes: Vec<bool>,
}

struct Runner<'a, T: Scalar> {
    cfg: &'a ExperimentConfig,
    data: &'a Dataset,
    flags: LossFlags,
    model: Model<T>,
    params: Params<T>,
    adam: AdamState<T>,
    rng: ChaCha8Rng,
    pool: LabeledPool,
    items: Vec<TrainItem<T>>,
    audit: Option<InvariantAudit>,
    log: Option<&'a mut dyn Write>,
    step: usize,
}

/// Generates or reads the data and runs the configured experiment.
pub fn run_experiment<T: Scalar>(cfg: &ExperimentConfig) -> Result<ExperimentOutput<T>> {
    cfg.validate()?;
    let data = Dataset::prepare(cfg)?;
    run_experiment_on(cfg, &data, None)
}

/// Runs the active-learning loop on prepared data; per-step loss records
/// are appended to `log` as JSON lines.
pub fn run_experiment_on<'a, T: Scalar>(
    cfg: &'a ExperimentConfig,
    data: &'a Dataset,
    log: Option<&'a mut dyn Write>,
) -> Result<ExperimentOutput<T>> {
    cfg.validate()?;
    let mut model_cfg = cfg.model.clone();
    model_cfg.classes = data.classes;
    model_cfg.feature_dim = data.train.feature_dim();
    let model = Model::<T>::new(model_cfg)?;
    let params = model.init_params(cfg.seed);
    let o = &cfg.optimizer;
    let adam = AdamState::with_betas(params.len(), o.lr, o.beta1, o.beta2, o.eps);
    let runner = Runner {
        cfg,
        data,
        flags: cfg.loss_flags(),
        model,
        params,
        adam,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15),
        pool: LabeledPool::new(data.classes),
        items: Vec::new(),
        audit: cfg.audit.then(|| InvariantAudit {
            batch_cap: cfg.batch_cap,
            ..Default::default()
        }),
        log,
        step: 0,
    };
    match cfg.supervision {
        Supervision::Ococ => runner.run_active(),
        Supervision::Dense => runner.run_dense(),
    }
}

impl<'a, T: Scalar> Runner<'a, T> {
    /// A sub-cloud around a uniformly drawn training point.
    fn random_subcloud(&mut self, cycle: usize) -> Result<SubCloud> {
        let center = self.data.train.position(self.rng.gen_range(0..self.data.train.len()));
        extract_subcloud(&self.data.train_index, center, self.cfg.radius, cycle, self.pool.len())
    }

    fn add_to_pool(&mut self, sub: SubCloud, label: OcocLabel) -> Result<()> {
        let clicked: BTreeMap<usize, usize> = label.clicks.iter().map(|(&c, &p)| (p, c)).collect();
        let item = self.make_item(&sub.members, sub.center, &clicked)?;
        self.items.push(item);
        self.pool.push(sub, label);
        Ok(())
    }

    /// Builds the network input; sub-clouds above the batch cap are
    /// randomly thinned to the cap, keeping every clicked point.
    fn make_item(&mut self, members: &[usize], center: [f64; 3], clicked: &BTreeMap<usize, usize>) -> Result<TrainItem<T>> {
        let cap = self.cfg.batch_cap;
        let kept: Vec<usize> = if members.len() > cap {
            let (mut keep, mut rest): (Vec<usize>, Vec<usize>) =
                members.iter().partition(|m| clicked.contains_key(m));
            rest.shuffle(&mut self.rng);
            let room = cap.saturating_sub(keep.len());
            keep.extend_from_slice(&rest[..room.min(rest.len())]);
            keep.sort_unstable();
            keep
        } else {
            members.to_vec()
        };
        let c = self.data.classes;
        let mut clicks = Vec::with_capacity(clicked.len());
        let mut scene = vec![false; c];
        for (row, m) in kept.iter().enumerate() {
            if let Some(&class) = clicked.get(m) {
                clicks.push(Click { row, class });
                scene[class] = true;
            }
        }
        let input = SampleInput::new(&self.data.train, &kept, center, self.cfg.model.k_agg)?;
        Ok(TrainItem {
            input,
            clicks,
            click_classes: scene.clone(),
            scene,
        })
    }

    fn infer(&self, cloud: &PointCloud, index: &SpatialIndex) -> Result<ProbabilityMap<T>> {
        infer_cloud(&self.model, &self.params, cloud, index, self.cfg.radius, self.cfg.stride())
    }

    fn run_active(mut self) -> Result<ExperimentOutput<T>> {
        let start = Instant::now();
        let k = self.cfg.per_cycle;
        let gt = self.data.train_labels().to_vec();
        for _ in 0..k {
            let sub = self.random_subcloud(1)?;
            let label = simulate_ococ_random(&sub, &gt, &mut self.rng);
            self.add_to_pool(sub, label)?;
        }
        let tod_mode = self.cfg.query == QueryMode::Tod;
        let mut p_prev = if tod_mode {
            Some(self.infer(&self.data.train, &self.data.train_index)?)
        } else {
            None
        };
        let mut reports = Vec::with_capacity(self.cfg.cycles);
        let mut last_tod = None;
        let mut eval = (Vec::new(), Vec::new());
        for cycle in 1..=self.cfg.cycles {
            let t0 = Instant::now();
            let weights = self.pool.class_weights()?;
            let (steps, losses) = self.train_cycle(cycle, &weights)?;
            let (metrics, preds, conf) = self.evaluate()?;
            eval = (preds, conf);

            let mut tod_mean = None;
            let mut fallback = 0;
            if cycle < self.cfg.cycles {
                if tod_mode {
                    let curr = self.infer(&self.data.train, &self.data.train_index)?;
                    let prev = p_prev.take().expect("kept between cycles");
                    let tod = compute_tod(&prev.probs, &curr.probs, self.data.classes, cycle)?;
                    tod_mean = Some(tod.values.iter().map(|v| v.f64()).sum::<f64>() / tod.len() as f64);
                    fallback = self.query_tod(cycle + 1, &tod, &curr, &gt)?;
                    p_prev = Some(curr);
                    last_tod = Some(tod);
                } else {
                    for _ in 0..k {
                        let sub = self.random_subcloud(cycle + 1)?;
                        let label = simulate_ococ_random(&sub, &gt, &mut self.rng);
                        self.add_to_pool(sub, label)?;
                    }
                }
            }
            let trained_on = self.items_in_cycle(cycle);
            let clicks: usize = self.pool.entries[..trained_on].iter().map(|e| e.label.len()).sum();
            reports.push(CycleReport {
                cycle,
                sub_clouds: trained_on,
                clicks,
                label_fraction: label_fraction(clicks, self.data.train.len()),
                steps,
                losses,
                metrics,
                tod_mean,
                fallback_centers: fallback,
                seconds: t0.elapsed().as_secs_f64(),
            });
        }
        Ok(self.finish(reports, eval, last_tod, p_prev, start))
    }

    /// Pool entries tagged with a cycle ≤ `cycle`.
    fn items_in_cycle(&self, cycle: usize) -> usize {
        self.pool.entries.iter().filter(|e| e.sub.cycle <= cycle).count()
    }

    /// Queries `K` TOD-guided sub-clouds; returns the number of fallback centers.
    fn query_tod(&mut self, next_cycle: usize, tod: &TodMap<T>, curr: &ProbabilityMap<T>, gt: &[usize]) -> Result<usize> {
        let c = self.data.classes;
        let r = self.cfg.radius;
        let plan = plan_query(self.data.train.positions(), tod, &curr.probs, c, r, self.cfg.refine_k, self.cfg.per_cycle)?;
        let refined = &plan.refined;
        if let Some(a) = self.audit.as_mut() {
            for ((&v, &lo), &hi) in refined.values.iter().zip(&refined.lower).zip(&refined.upper) {
                let scale = hi.f64().abs().max(f64::MIN_POSITIVE);
                let excess = (lo.f64() - v.f64()).max(v.f64() - hi.f64()).max(0.0) / scale;
                a.max_refined_excess = a.max_refined_excess.max(excess);
                a.refined_checked += 1;
            }
        }
        let centers = plan.centers;
        let fallback = centers.iter().filter(|c| c.fallback).count();
        for center in centers {
            let sub = match extract_subcloud(&self.data.train_index, center.position, r, next_cycle, self.pool.len()) {
                Ok(s) => s,
                Err(Error::EmptySubCloud) => continue,
                Err(e) => return Err(e),
            };
            let member_tod: Vec<T> = sub.members.iter().map(|&m| tod.values[m]).collect();
            let sk = self.cfg.saliency_k.min(sub.len());
            let label = simulate_ococ_tod(&sub, self.data.train.positions(), &member_tod, gt, sk)?;
            self.add_to_pool(sub, label)?;
        }
        Ok(fallback)
    }

    fn run_dense(mut self) -> Result<ExperimentOutput<T>> {
        let start = Instant::now();
        let t0 = Instant::now();
        let gt = self.data.train_labels().to_vec();
        let centers = inference_centers(&self.data.train, &self.data.train_index, self.cfg.radius, self.cfg.stride())?;
        let mut buf = Vec::new();
        for center in centers {
            self.data.train_index.radius_into(center, self.cfg.radius, &mut buf);
            if buf.is_empty() {
                continue;
            }
            let members = buf.clone();
            let all: BTreeMap<usize, usize> = members.iter().map(|&m| (m, gt[m])).collect();
            let item = self.make_item(&members, center, &all)?;
            self.items.push(item);
        }
        let weights = class_weights(&self.data.train.class_histogram())?;
        let (steps, losses) = self.train_cycle(1, &weights)?;
        let (metrics, preds, conf) = self.evaluate()?;
        let clicks = self.data.train.len();
        let reports = vec![CycleReport {
            cycle: 1,
            sub_clouds: self.items.len(),
            clicks,
            label_fraction: label_fraction(clicks, self.data.train.len()),
            steps,
            losses,
            metrics,
            tod_mean: None,
            fallback_centers: 0,
            seconds: t0.elapsed().as_secs_f64(),
        }];
        Ok(self.finish(reports, (preds, conf), None, None, start))
    }

    fn finish(
        self,
        reports: Vec<CycleReport>,
        eval: (Vec<usize>, Vec<f64>),
        last_tod: Option<TodMap<T>>,
        last_train_probs: Option<ProbabilityMap<T>>,
        start: Instant,
    ) -> ExperimentOutput<T> {
        let last = reports.last().expect("at least one cycle");
        let summary = Summary {
            seed: self.cfg.seed,
            mode: self.cfg.mode.to_string(),
            query: self.cfg.query.to_string(),
            supervision: self.cfg.supervision.to_string(),
            cycles: reports.len(),
            final_oa: last.metrics.oa,
            final_avg_f1: last.metrics.avg_f1,
            final_avg_iou: last.metrics.avg_iou,
            final_label_fraction: last.label_fraction,
            avg_f1_per_cycle: reports.iter().map(|r| r.metrics.avg_f1).collect(),
            seconds: start.elapsed().as_secs_f64(),
        };
        ExperimentOutput {
            reports,
            summary,
            pool: self.pool,
            model: self.model,
            params: self.params,
            validation_predictions: eval.0,
            validation_confidence: eval.1,
            last_train_probs: last_tod.as_ref().and(last_train_probs),
            last_tod,
            audit: self.audit,
        }
    }

    fn evaluate(&self) -> Result<(super::metrics::Metrics, Vec<usize>, Vec<f64>)> {
        let map = self.infer(&self.data.validation, &self.data.validation_index)?;
        let (mut preds, mut conf) = (Vec::new(), Vec::new());
        for &j in &self.data.validation_lookup {
            let c = map.argmax(j);
            preds.push(c);
            conf.push(map.row(j)[c].f64());
        }
        let gt = self.data.validation_raw.labels().expect("checked at construction");
        let m = metrics(&Confusion::from_labels(&preds, gt, self.data.classes)?)?;
        Ok((m, preds, conf))
    }

    /// Trains `epochs` epochs on the pool; returns the step count and the
    /// mean loss terms.
    fn train_cycle(&mut self, cycle: usize, weights: &[f64]) -> Result<(usize, LossBundle<f64>)> {
        if let Some(a) = self.audit.as_mut() {
            let err = (weights.iter().sum::<f64>() - 1.0).abs();
            a.max_class_weight_error = a.max_class_weight_error.max(err);
        }
        let active = match self.cfg.supervision {
            Supervision::Ococ => self.items_in_cycle(cycle),
            Supervision::Dense => self.items.len(),
        };
        let pseudo_on = self.flags.pl && cycle > 1;
        let mut sum = LossBundle::<f64>::default();
        let mut steps = 0;
        for epoch in 1..=self.cfg.epochs {
            let mut order: Vec<usize> = (0..active).collect();
            order.shuffle(&mut self.rng);
            let mut batch = Vec::new();
            let mut points = 0;
            for i in order {
                let n = self.items[i].input.n;
                if !batch.is_empty() && points + n > self.cfg.batch_cap {
                    let b = self.step_batch(cycle, epoch, &batch, points, weights, pseudo_on)?;
                    accumulate(&mut sum, &b);
                    steps += 1;
                    batch.clear();
                    points = 0;
                }
                batch.push(i);
                points += n;
            }
            if !batch.is_empty() {
                let b = self.step_batch(cycle, epoch, &batch, points, weights, pseudo_on)?;
                accumulate(&mut sum, &b);
                steps += 1;
            }
        }
        let inv = 1.0 / steps.max(1) as f64;
        Ok((
            steps,
            LossBundle {
                seg: sum.seg * inv,
                sl: sum.sl * inv,
                gmp: sum.gmp * inv,
                pl: sum.pl * inv,
                total: sum.total * inv,
            },
        ))
    }

    fn step_batch(
        &mut self,
        cycle: usize,
        epoch: usize,
        batch: &[usize],
        points: usize,
        weights: &[f64],
        pseudo_on: bool,
    ) -> Result<LossBundle<f64>> {
        self.step += 1;
        let traces = batch
            .iter()
            .map(|&i| self.model.forward(&self.params, &self.items[i].input))
            .collect::<Result<Vec<_>>>()?;
        let items: Vec<BatchItem<T>> = batch
            .iter()
            .zip(&traces)
            .map(|(&i, trace)| BatchItem {
                trace,
                clicks: &self.items[i].clicks,
                scene: &self.items[i].scene,
            })
            .collect();
        let mode = if pseudo_on { PseudoMode::Online } else { PseudoMode::Disabled };
        let loss = total_loss(&items, weights, self.flags, mode)?;
        let bundle = loss.bundle.to_f64();
        if !loss.bundle.is_finite() {
            return Err(Error::NonFiniteLoss {
                cycle,
                epoch,
                step: self.step,
                snapshot: format!(
                    "losses {bundle:?}, sub-clouds {:?}, points {points}",
                    batch.iter().map(|&i| self.pool.entries.get(i).map_or(i, |e| e.sub.id)).collect::<Vec<_>>()
                ),
            });
        }
        if let Some(a) = self.audit.as_mut() {
            a.steps += 1;
            a.max_batch_points = a.max_batch_points.max(points);
            for tr in &traces {
                for i in 0..tr.len() {
                    let s: f64 = tr.prob_row(i).iter().map(|p| p.f64()).sum();
                    a.max_prob_row_error = a.max_prob_row_error.max((s - 1.0).abs());
                }
            }
            for (ps, &i) in loss.pseudo.iter().zip(batch) {
                let allowed = &self.items[i].click_classes;
                a.pseudo_labels_checked += ps.len();
                a.pseudo_violations += ps.labels.iter().filter(|&&l| !allowed[l]).count();
                a.pseudo_weight_violations += ps
                    .weights
                    .iter()
                    .filter(|w| !(w.f64() >= 0.0 && w.f64() <= 1.0))
                    .count();
            }
        }
        let mut grad = self.params.zeros_like();
        for (trace, g) in traces.iter().zip(&loss.grads) {
            self.model.backward_into(&self.params, trace, g, &mut grad)?;
        }
        self.adam.update(&mut self.params, &grad)?;
        if let Some(log) = self.log.as_deref_mut() {
            let rec = serde_json::json!({
                "cycle": cycle,
                "epoch": epoch,
                "step": self.step,
                "sub_clouds": batch.len(),
                "points": points,
                "seg": bundle.seg,
                "sl": bundle.sl,
                "gmp": bundle.gmp,
                "pl": bundle.pl,
                "total": bundle.total,
            });
            writeln!(log, "{rec}")?;
        }
        Ok(bundle)
    }
}

fn accumulate(sum: &mut LossBundle<f64>, b: &LossBundle<f64>) {
    sum.seg += b.seg;
    sum.sl += b.sl;
    sum.gmp += b.gmp;
    sum.pl += b.pl;
    sum.total += b.total;
}
