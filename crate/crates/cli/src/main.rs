use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use ococ_core::active::{compute_tod, plan_query, DEFAULT_REFINE_K};
use ococ_core::harness::{
    gradcheck, metrics, run_experiment_on, write_csv, Confusion, Dataset, ExperimentConfig, GradcheckConfig, Mode,
    QueryMode,
};
use ococ_core::model::Checkpoint;
use ococ_core::pointcloud::{read_cloud, write_cloud, Format, Schema};
use ococ_core::synth::{generate_scene, SceneConfig};
use ococ_core::PointCloud;

#[derive(Parser)]
#[command(name = "ococ", version, about = "Active weakly supervised point-cloud segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic scene.
    Synth {
        /// TOML scene configuration; defaults are used for missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output cloud (`.xyz`, `.csv` or `.ply`); the manifest goes next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the active-learning experiment.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        query: Option<QueryMode>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Score a prediction dump against a labeled cloud.
    Eval {
        /// Prediction dump written by `train` (x y z pred confidence).
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Column roles of the ground-truth file.
        #[arg(long, default_value = "xyzrgbl")]
        gt_columns: String,
        #[arg(long, default_value_t = 5)]
        classes: usize,
    },
    /// Pick TOD-guided sub-cloud centers from two probability dumps.
    Query {
        /// Probability dump of the previous cycle (x y z p_0 … p_{C-1}).
        #[arg(long)]
        pred_prev: PathBuf,
        #[arg(long)]
        pred_curr: PathBuf,
        /// Cloud the dumps refer to, point for point.
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long, default_value = "xyzrgbl")]
        cloud_columns: String,
        #[arg(short = 'r', long)]
        radius: f64,
        #[arg(short = 'k', long = "count")]
        count: usize,
        #[arg(long, default_value_t = 5)]
        classes: usize,
        #[arg(long, default_value_t = DEFAULT_REFINE_K)]
        refine_k: usize,
        /// Centers CSV; stdout if absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the loss gradient against central differences.
    Gradcheck {
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Synth { config, out } => synth(config.as_deref(), &out),
        Command::Train {
            config,
            mode,
            query,
            seed,
            out,
        } => {
            let mut cfg = match config {
                Some(p) => ExperimentConfig::load(&p)?,
                None => ExperimentConfig::default(),
            };
            if let Some(m) = mode {
                cfg.mode = m;
            }
            if let Some(q) = query {
                cfg.query = q;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            train(&cfg, &out)
        }
        Command::Eval {
            pred,
            gt,
            gt_columns,
            classes,
        } => eval(&pred, &gt, &gt_columns, classes),
        Command::Query {
            pred_prev,
            pred_curr,
            cloud,
            cloud_columns,
            radius,
            count,
            classes,
            refine_k,
            out,
        } => query(&pred_prev, &pred_curr, &cloud, &cloud_columns, radius, count, classes, refine_k, out.as_deref()),
        Command::Gradcheck { seeds, tolerance } => {
            let cfg = GradcheckConfig::default();
            let mut worst: f64 = 0.0;
            for seed in 0..seeds {
                let r = gradcheck(&cfg, seed)?;
                println!("{}", serde_json::to_string(&r)?);
                worst = worst.max(r.max_rel_error);
            }
            if worst >= tolerance {
                bail!("max relative error {worst:e} exceeds {tolerance:e}");
            }
            Ok(())
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn synth(config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg: SceneConfig = match config {
        Some(p) => toml::from_str(&fs::read_to_string(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => SceneConfig::default(),
    };
    let (cloud, manifest) = generate_scene(&cfg)?;
    let schema = Schema::xyz_rgb(cloud.class_count()).with_label();
    write_cloud(create(out)?, &cloud, Format::from_path(out), &schema, &[])?;
    let manifest_path = out.with_extension("manifest.json");
    serde_json::to_writer_pretty(create(&manifest_path)?, &manifest)?;
    eprintln!("{} points -> {}, manifest {}", manifest.points, out.display(), manifest_path.display());
    Ok(())
}

fn train(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let echo = cfg.to_toml();
    eprintln!("{echo}");
    fs::write(out.join("config.toml"), &echo)?;

    let data = Dataset::prepare(cfg)?;
    let mut log = create(&out.join("train_log.jsonl"))?;
    writeln!(log, "{}", serde_json::json!({ "config": cfg }))?;
    let run = run_experiment_on::<f32>(cfg, &data, Some(&mut log))?;
    log.flush()?;

    write_csv(create(&out.join("cycles.csv"))?, &run.reports)?;
    serde_json::to_writer_pretty(create(&out.join("summary.json"))?, &run.summary)?;
    run.pool.write_json(create(&out.join("pool.json"))?)?;

    let conf = run.validation_confidence.clone();
    let pred: Vec<f64> = run.validation_predictions.iter().map(|&c| c as f64).collect();
    write_columns(&out.join("predictions.csv"), &data.validation_raw, &[("pred", &pred), ("confidence", &conf)])?;

    if let (Some(tod), Some(probs)) = (&run.last_tod, &run.last_train_probs) {
        let tod: Vec<f64> = tod.to_f64();
        write_columns(&out.join("tod.csv"), &data.train, &[("tod", &tod)])?;
        write_probabilities(&out.join("train_probs.csv"), &data.train, &probs.to_f64(), data.classes)?;
    }

    let header = serde_json::json!({ "experiment": cfg, "summary": run.summary });
    Checkpoint::new(&run.model, &run.params, header).write_json(create(&out.join("checkpoint.json"))?)?;

    for r in &run.reports {
        eprintln!(
            "cycle {}: {} sub-clouds, {} clicks, OA {:.4}, avg F1 {:.4}, mIoU {:.4}",
            r.cycle, r.sub_clouds, r.clicks, r.metrics.oa, r.metrics.avg_f1, r.metrics.avg_iou
        );
    }
    Ok(())
}

fn write_probabilities(path: &Path, cloud: &PointCloud, probs: &[f64], classes: usize) -> Result<()> {
    let columns: Vec<(String, Vec<f64>)> = (0..classes)
        .map(|c| (format!("p_{c}"), probs.iter().skip(c).step_by(classes).copied().collect()))
        .collect();
    let extra: Vec<(&str, &[f64])> = columns.iter().map(|(n, v)| (n.as_str(), v.as_slice())).collect();
    write_columns(path, cloud, &extra)
}

/// CSV of the coordinates of `cloud` followed by `extra`; colors and labels are dropped.
fn write_columns(path: &Path, cloud: &PointCloud, extra: &[(&str, &[f64])]) -> Result<()> {
    let bare = PointCloud::new(cloud.positions().to_vec(), Vec::new(), 0, None, cloud.class_count())?;
    write_cloud(create(path)?, &bare, Format::Csv, &Schema::xyz(cloud.class_count()), extra)?;
    Ok(())
}

/// Reads a probability dump as a cloud whose features are the probabilities.
fn read_probabilities(path: &Path, classes: usize) -> Result<PointCloud> {
    let roles = format!("xyz{}", "f".repeat(classes));
    let schema = Schema::parse_roles(&roles, classes)?;
    read_cloud(path, Format::from_path(path), &schema).with_context(|| format!("reading {}", path.display()))
}

fn eval(pred: &Path, gt: &Path, gt_columns: &str, classes: usize) -> Result<()> {
    let pred_cloud = read_cloud(pred, Format::from_path(pred), &Schema::parse_roles("xyzl_", classes)?)
        .with_context(|| format!("reading {}", pred.display()))?;
    let gt_cloud = read_cloud(gt, Format::from_path(gt), &Schema::parse_roles(gt_columns, classes)?)
        .with_context(|| format!("reading {}", gt.display()))?;
    if pred_cloud.len() != gt_cloud.len() {
        bail!("{} predictions for {} ground-truth points", pred_cloud.len(), gt_cloud.len());
    }
    let m = metrics(&Confusion::from_labels(
        pred_cloud.require_labels("prediction")?,
        gt_cloud.require_labels("ground truth")?,
        classes,
    )?)?;
    println!("{}", serde_json::to_string_pretty(&m)?);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn query(
    prev: &Path,
    curr: &Path,
    cloud: &Path,
    cloud_columns: &str,
    r: f64,
    k: usize,
    classes: usize,
    refine_k: usize,
    out: Option<&Path>,
) -> Result<()> {
    let prev = read_probabilities(prev, classes)?;
    let curr = read_probabilities(curr, classes)?;
    let cloud = read_cloud(cloud, Format::from_path(cloud), &Schema::parse_roles(cloud_columns, classes)?)
        .with_context(|| format!("reading {}", cloud.display()))?;
    if prev.len() != cloud.len() || curr.len() != cloud.len() {
        bail!("probability dumps and cloud disagree in point count");
    }
    let tod = compute_tod(prev.features(), curr.features(), classes, 1)?;
    let plan = plan_query(cloud.positions(), &tod, curr.features(), classes, r, refine_k, k)?;
    let mut w: Box<dyn Write> = match out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    writeln!(w, "x,y,z,refined_tod,fallback")?;
    for c in &plan.centers {
        let [x, y, z] = c.position;
        writeln!(w, "{x},{y},{z},{},{}", plan.refined.values[c.coarse_index], c.fallback)?;
    }
    w.flush()?;
    if plan.centers.len() < k {
        eprintln!("only {} of {k} centers could be placed", plan.centers.len());
    }
    Ok(())
}
