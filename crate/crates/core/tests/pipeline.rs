use ococ_core::harness::{read_csv, run_experiment, write_csv, ExperimentConfig, Mode, QueryMode, Supervision};
use ococ_core::model::{Checkpoint, ModelConfig};
use ococ_core::synth::SceneConfig;

fn small(seed: u64, mode: Mode, query: QueryMode) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        seed,
        mode,
        query,
        radius: 3.0,
        per_cycle: 5,
        cycles: 3,
        epochs: 2,
        model: ModelConfig {
            encoder_widths: vec![8, 16],
            decoder_hidden: 16,
            scene_hidden: 8,
            ..ModelConfig::default()
        },
        ..ExperimentConfig::default()
    };
    for (scene, s) in [(&mut cfg.data.train_scene, 1), (&mut cfg.data.validation_scene, 2)] {
        *scene = SceneConfig {
            extent: [20.0, 20.0],
            density: 10.0,
            seed: s,
            ..SceneConfig::default()
        };
        scene.objects.buildings = 1;
        scene.objects.trees = 3;
        scene.objects.cars = 2;
        scene.objects.poles = 2;
    }
    cfg
}

#[test]
fn pool_grows_by_k_and_pseudo_loss_starts_in_cycle_two() {
    let cfg = small(1, Mode::Full, QueryMode::Tod);
    let out = run_experiment::<f32>(&cfg).unwrap();
    assert_eq!(out.reports.len(), 3);
    for (i, r) in out.reports.iter().enumerate() {
        assert_eq!(r.cycle, i + 1);
        assert_eq!(r.sub_clouds, (i + 1) * cfg.per_cycle);
        let m = &r.metrics;
        for v in [m.oa, m.avg_f1, m.avg_iou, m.avg_precision, m.avg_recall] {
            assert!((0.0..=1.0).contains(&v));
        }
        assert!(r.losses.is_finite());
    }
    assert_eq!(out.reports[0].losses.pl, 0.0);
    assert!(out.reports[1].losses.pl > 0.0);
    assert!(out.reports.windows(2).all(|w| w[0].clicks <= w[1].clicks));
    // the last cycle trains on the pool but queries nothing more
    assert_eq!(out.pool.len(), 3 * cfg.per_cycle);
    assert!(out.reports[0].tod_mean.is_some() && out.reports[2].tod_mean.is_none());
    assert_eq!(out.validation_predictions.len(), out.validation_confidence.len());
}

#[test]
fn baseline_uses_click_loss_only() {
    let out = run_experiment::<f32>(&small(2, Mode::Baseline, QueryMode::Random)).unwrap();
    for r in &out.reports {
        assert_eq!((r.losses.sl, r.losses.gmp, r.losses.pl), (0.0, 0.0, 0.0));
        assert_eq!(r.losses.total, r.losses.seg);
        assert!(r.tod_mean.is_none());
    }
}

#[test]
fn same_seed_same_reports() {
    let cfg = small(3, Mode::Full, QueryMode::Tod);
    let scrub = |mut v: Vec<ococ_core::harness::CycleReport>| {
        v.iter_mut().for_each(|r| r.seconds = 0.0);
        v
    };
    let a = scrub(run_experiment::<f32>(&cfg).unwrap().reports);
    let b = scrub(run_experiment::<f32>(&cfg).unwrap().reports);
    assert_eq!(a, b);
    let c = scrub(run_experiment::<f32>(&small(4, Mode::Full, QueryMode::Tod)).unwrap().reports);
    assert_ne!(a, c);
}

#[test]
fn reports_round_trip_through_csv() {
    let out = run_experiment::<f32>(&small(5, Mode::Full, QueryMode::Random)).unwrap();
    let mut buf = Vec::new();
    write_csv(&mut buf, &out.reports).unwrap();
    assert_eq!(read_csv(buf.as_slice()).unwrap(), out.reports);
}

#[test]
fn checkpoint_restores_the_trained_model() {
    let out = run_experiment::<f32>(&small(6, Mode::Full, QueryMode::Tod)).unwrap();
    let ck = Checkpoint::new(&out.model, &out.params, serde_json::json!({"seed": 6}));
    let mut buf = Vec::new();
    ck.write_json(&mut buf).unwrap();
    let (model, params) = Checkpoint::read_json(buf.as_slice()).unwrap().restore::<f32>().unwrap();
    assert_eq!(model.config(), out.model.config());
    assert_eq!(params.values, out.params.values);
}

#[test]
fn dense_supervision_labels_every_point() {
    let mut cfg = small(7, Mode::Baseline, QueryMode::Random);
    cfg.supervision = Supervision::Dense;
    let out = run_experiment::<f32>(&cfg).unwrap();
    assert_eq!(out.reports.len(), 1);
    assert_eq!(out.reports[0].label_fraction, 1.0);
}

#[test]
fn f64_audit_run_holds_invariants() {
    let mut cfg = small(8, Mode::Full, QueryMode::Tod);
    cfg.audit = true;
    let a = run_experiment::<f64>(&cfg).unwrap().audit.unwrap();
    assert!(a.steps > 0 && a.pseudo_labels_checked > 0 && a.refined_checked > 0);
    assert!(a.max_prob_row_error <= 1e-9);
    assert_eq!((a.pseudo_violations, a.pseudo_weight_violations), (0, 0));
    assert!(a.max_class_weight_error <= 1e-12);
    assert!(a.max_refined_excess <= 1e-12);
    assert!(a.max_batch_points <= a.batch_cap);
}

#[test]
fn config_toml_round_trip() {
    let cfg = small(9, Mode::Baseline, QueryMode::Random);
    let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
    assert_eq!(back, cfg);
}
