//! Trainer behaviour: determinism, no-op runs, loss decrease, warm-up
//! gating, frozen-teacher invariance, CMS/SSLKD reduction equivalence and
//! CPS symmetry.

use std::time::Instant;

use sslkd_core::dataset::Sample;
use sslkd_core::losses::LossWeights;
use sslkd_core::model::{build_model, BackboneDepth, Family, Mode, ModelSpec};
use sslkd_core::scene::{generate_synthetic_scene, SceneParams};
use sslkd_core::schedule::poly_lr;
use sslkd_core::train::{
    train_cms_baseline, train_cps_baseline, train_cross_model, train_student_sslkd,
    train_supervised, TrainConfig,
};

const N: usize = 32;

fn spec(family: Family, depth: BackboneDepth) -> ModelSpec {
    ModelSpec {
        family,
        backbone_depth: depth,
        base_channels: 8,
        n_classes: 2,
        feature_tap_channels: 32,
        input_size: N,
    }
}

fn scenes(count: usize, first_seed: u64) -> Vec<Sample> {
    let params = SceneParams {
        image_size: N,
        ..SceneParams::default()
    };
    (0..count)
        .map(|i| generate_synthetic_scene(&params, first_seed + i as u64).unwrap())
        .collect()
}

fn strip_masks(samples: &[Sample]) -> Vec<Sample> {
    samples
        .iter()
        .map(|s| Sample {
            id: s.id.clone(),
            image: s.image.clone(),
            mask: None,
        })
        .collect()
}

fn quick_cfg(max_iters: u64) -> TrainConfig {
    TrainConfig {
        max_iters,
        distill_warmup_iters: max_iters / 5,
        ..TrainConfig::default()
    }
}

#[test]
fn noop_run_leaves_model_untouched() {
    let model = build_model(&spec(Family::DilatedPyramid, BackboneDepth::Deep), 1).unwrap();
    let before = model.content_hash();
    let labelled = scenes(4, 100);
    let (model, log) = train_supervised(model, &labelled, &quick_cfg(0), None).unwrap();
    assert_eq!(model.content_hash(), before);
    assert!(log.records.is_empty());

    // the mutual trainers are also no-ops at zero iterations
    let a = build_model(&spec(Family::DilatedPyramid, BackboneDepth::Shallow), 2).unwrap();
    let b = build_model(&spec(Family::DilatedPyramid, BackboneDepth::Shallow), 3).unwrap();
    let (ha, hb) = (a.content_hash(), b.content_hash());
    let unlab = strip_masks(&scenes(4, 200));
    let (a, b, _) = train_cps_baseline(a, b, &labelled, &unlab, &quick_cfg(0), None).unwrap();
    assert_eq!(a.content_hash(), ha);
    assert_eq!(b.content_hash(), hb);
}

#[test]
fn empty_partition_is_a_config_error() {
    let model = build_model(&spec(Family::DilatedPyramid, BackboneDepth::Deep), 1).unwrap();
    assert!(train_supervised(model, &[], &quick_cfg(5), None).is_err());
}

#[test]
fn supervised_loss_decreases() {
    let labelled = scenes(8, 300);
    let model = build_model(&spec(Family::DilatedPyramid, BackboneDepth::Deep), 4).unwrap();
    let t0 = Instant::now();
    let cfg = TrainConfig {
        max_iters: 200,
        ..TrainConfig::default()
    };
    let (_, log) = train_supervised(model, &labelled, &cfg, None).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    println!("supervised 200 iters (batch 4, {N}x{N}): {secs:.2}s");

    let first10: f64 = log.records[..10].iter().map(|r| r.l_sup).sum::<f64>() / 10.0;
    let last10: f64 = log.records[190..].iter().map(|r| r.l_sup).sum::<f64>() / 10.0;
    assert!(
        last10 < first10,
        "loss did not decrease: first 10 mean {first10}, last 10 mean {last10}"
    );
}

#[test]
fn identical_seeds_reproduce_identical_logs() {
    let labelled = scenes(6, 400);
    let cfg = quick_cfg(12);
    let run = || {
        let model = build_model(&spec(Family::PoolIndex, BackboneDepth::Deep), 5).unwrap();
        train_supervised(model, &labelled, &cfg, None).unwrap()
    };
    let (m1, log1) = run();
    let (m2, log2) = run();
    assert_eq!(m1.content_hash(), m2.content_hash());
    assert_eq!(log1.records, log2.records); // bit-identical in f64
}

#[test]
fn lr_trace_matches_poly_schedule_and_warmup_gates_distillation() {
    let labelled = scenes(6, 500);
    let unlab = strip_masks(&scenes(10, 600));
    let mut t1 = build_model(&spec(Family::DilatedPyramid, BackboneDepth::Deep), 6).unwrap();
    let mut t2 = build_model(&spec(Family::PoolIndex, BackboneDepth::Deep), 7).unwrap();
    t1.set_mode(Mode::Eval);
    t2.set_mode(Mode::Eval);
    let student = build_model(&spec(Family::DilatedPyramid, BackboneDepth::Shallow), 8).unwrap();

    let cfg = TrainConfig {
        max_iters: 20,
        distill_warmup_iters: 8,
        ..TrainConfig::default()
    };
    let (_, log) = train_student_sslkd(student, &t1, &t2, &labelled, &unlab, &cfg, None).unwrap();

    assert_eq!(log.records.len(), 20);
    for r in &log.records {
        let expect = poly_lr(cfg.base_lr, r.iter, cfg.max_iters, cfg.lr_power).unwrap();
        assert_eq!(r.lr, expect, "lr trace diverges at iter {}", r.iter);
        if r.iter < cfg.distill_warmup_iters {
            assert_eq!((r.l_dis_f, r.l_dis_p, r.l_unsup), (0.0, 0.0, 0.0));
        } else {
            assert!(r.l_dis_f > 0.0 && r.l_dis_p > 0.0);
        }
    }
}

#[test]
fn frozen_teachers_are_bit_identical_after_distillation() {
    let labelled = scenes(6, 700);
    let unlab = strip_masks(&scenes(10, 800));
    let mut t1 = build_model(&spec(Family::DilatedPyramid, BackboneDepth::Deep), 9).unwrap();
    let mut t2 = build_model(&spec(Family::PoolIndex, BackboneDepth::Deep), 10).unwrap();
    t1.set_mode(Mode::Eval);
    t2.set_mode(Mode::Eval);
    let (h1, h2) = (t1.content_hash(), t2.content_hash());

    let student = build_model(&spec(Family::DilatedPyramid, BackboneDepth::Shallow), 11).unwrap();
    let cfg = TrainConfig {
        max_iters: 30,
        distill_warmup_iters: 5,
        ..TrainConfig::default()
    };
    let _ = train_student_sslkd(student, &t1, &t2, &labelled, &unlab, &cfg, None).unwrap();

    assert_eq!(t1.content_hash(), h1);
    assert_eq!(t2.content_hash(), h2);

    // teachers must be frozen: a train-mode teacher is rejected
    t1.set_mode(Mode::Train);
    let student = build_model(&spec(Family::DilatedPyramid, BackboneDepth::Shallow), 11).unwrap();
    assert!(train_student_sslkd(student, &t1, &t2, &labelled, &unlab, &cfg, None).is_err());
}

#[test]
fn degenerate_warmup_equals_supervised_training() {
    let labelled = scenes(6, 900);
    let unlab = strip_masks(&scenes(6, 1000));
    let mut t1 = build_model(&spec(Family::DilatedPyramid, BackboneDepth::Deep), 12).unwrap();
    let mut t2 = build_model(&spec(Family::PoolIndex, BackboneDepth::Deep), 13).unwrap();
    t1.set_mode(Mode::Eval);
    t2.set_mode(Mode::Eval);

    let cfg = TrainConfig {
        max_iters: 15,
        distill_warmup_iters: 15,
        ..TrainConfig::default()
    };
    let student =
        || build_model(&spec(Family::DilatedPyramid, BackboneDepth::Shallow), 14).unwrap();

    let (m_kd, log_kd) =
        train_student_sslkd(student(), &t1, &t2, &labelled, &unlab, &cfg, None).unwrap();
    let (m_sup, log_sup) = train_supervised(student(), &labelled, &cfg, None).unwrap();

    assert_eq!(m_kd.content_hash(), m_sup.content_hash());
    for (a, b) in log_kd.records.iter().zip(&log_sup.records) {
        assert_eq!(a.l_sup, b.l_sup);
        assert_eq!(a.total, b.total);
    }
}

#[test]
fn cms_equals_sslkd_with_single_teacher_and_zeroed_mae_terms() {
    let labelled = scenes(6, 1100);
    let unlab = strip_masks(&scenes(8, 1200));
    let mut teacher = build_model(&spec(Family::PoolIndex, BackboneDepth::Deep), 15).unwrap();
    teacher.set_mode(Mode::Eval);
    let student =
        || build_model(&spec(Family::DilatedPyramid, BackboneDepth::Shallow), 16).unwrap();

    let cfg = TrainConfig {
        max_iters: 50,
        distill_warmup_iters: 10,
        ..TrainConfig::default()
    };
    let kd_cfg = TrainConfig {
        loss_weights: LossWeights {
            dis_f: 0.0,
            dis_p: 0.0,
            ..LossWeights::default()
        },
        ..cfg.clone()
    };

    // aggregation over (teacher, teacher) collapses to the single teacher
    let (m_kd, log_kd) = train_student_sslkd(
        student(),
        &teacher,
        &teacher,
        &labelled,
        &unlab,
        &kd_cfg,
        None,
    )
    .unwrap();
    let (m_cms, log_cms) =
        train_cms_baseline(student(), &teacher, &labelled, &unlab, &cfg, None).unwrap();

    assert_eq!(m_kd.content_hash(), m_cms.content_hash());
    for (a, b) in log_kd.records.iter().zip(&log_cms.records) {
        assert_eq!(a.l_sup, b.l_sup, "iter {}", a.iter);
        assert_eq!(a.l_unsup, b.l_unsup, "iter {}", a.iter);
        assert_eq!(a.total, b.total, "iter {}", a.iter);
    }
}

#[test]
fn cps_preserves_symmetry_of_identical_networks() {
    let labelled = scenes(6, 1300);
    let unlab = strip_masks(&scenes(8, 1400));
    let mk = || build_model(&spec(Family::DilatedPyramid, BackboneDepth::Shallow), 17).unwrap();
    let cfg = quick_cfg(10);
    let (a, b, log) = train_cps_baseline(mk(), mk(), &labelled, &unlab, &cfg, None).unwrap();
    // bit-identical networks receive bit-identical updates every iteration
    assert_eq!(a.content_hash(), b.content_hash());
    assert!(log.warnings.iter().any(|w| w.contains("degenerate")));

    // different specs are rejected
    let other = build_model(&spec(Family::PoolIndex, BackboneDepth::Deep), 18).unwrap();
    assert!(train_cps_baseline(mk(), other, &labelled, &unlab, &cfg, None).is_err());
}

#[test]
fn flip_augmentation_stays_deterministic_and_changes_the_trajectory() {
    let labelled = scenes(6, 1700);
    let mk = || build_model(&spec(Family::DilatedPyramid, BackboneDepth::Shallow), 21).unwrap();
    let plain = TrainConfig {
        max_iters: 6,
        distill_warmup_iters: 0,
        ..TrainConfig::default()
    };
    let flipped = TrainConfig {
        augment_flips: true,
        ..plain.clone()
    };

    let (_, log_a) = train_supervised(mk(), &labelled, &flipped, None).unwrap();
    let (_, log_b) = train_supervised(mk(), &labelled, &flipped, None).unwrap();
    assert_eq!(log_a.records, log_b.records);

    let (_, log_plain) = train_supervised(mk(), &labelled, &plain, None).unwrap();
    assert_ne!(log_plain.records, log_a.records);
}

#[test]
fn feature_projection_bridges_mismatched_taps() {
    // teacher tap is 48-wide, student tap 32-wide: the feature term needs
    // the learned projection
    let wide_teacher = ModelSpec {
        family: Family::DilatedPyramid,
        backbone_depth: BackboneDepth::Deep,
        base_channels: 12,
        n_classes: 2,
        feature_tap_channels: 48,
        input_size: N,
    };
    let labelled = scenes(4, 1800);
    let unlab = strip_masks(&scenes(6, 1900));
    let mut t1 = build_model(&wide_teacher, 22).unwrap();
    let mut t2 = build_model(&spec(Family::PoolIndex, BackboneDepth::Deep), 23).unwrap();
    t1.set_mode(Mode::Eval);
    t2.set_mode(Mode::Eval);
    let student =
        || build_model(&spec(Family::DilatedPyramid, BackboneDepth::Shallow), 24).unwrap();

    let cfg = TrainConfig {
        max_iters: 4,
        distill_warmup_iters: 0,
        ..TrainConfig::default()
    };
    // without the projection the tap mismatch is a shape error
    let err = train_student_sslkd(student(), &t1, &t2, &labelled, &unlab, &cfg, None);
    assert!(matches!(err, Err(sslkd_core::CoreError::Shape(_))));

    let cfg = TrainConfig {
        feature_projection: true,
        ..cfg
    };
    let (_, log) = train_student_sslkd(student(), &t1, &t2, &labelled, &unlab, &cfg, None).unwrap();
    assert!(log.records.iter().all(|r| r.l_dis_f > 0.0));
}

#[test]
fn cross_model_runs_and_improves_on_pseudo_agreement() {
    // smoke test of the mutual loop mechanics at tiny scale; the directional
    // desk-scale claims live in the acceptance suite
    let labelled = scenes(6, 1500);
    let unlab = strip_masks(&scenes(8, 1600));
    let t1 = build_model(&spec(Family::DilatedPyramid, BackboneDepth::Deep), 19).unwrap();
    let t2 = build_model(&spec(Family::PoolIndex, BackboneDepth::Deep), 20).unwrap();
    let cfg = quick_cfg(10);
    let (t1b, t2b, log) = train_cross_model(t1, t2, &labelled, &unlab, &cfg, None).unwrap();
    assert_eq!(log.records.len(), 10);
    assert!(log.records.iter().all(|r| r.l_unsup > 0.0 && r.l_sup > 0.0));
    // both teachers actually moved
    let fresh1 = build_model(&spec(Family::DilatedPyramid, BackboneDepth::Deep), 19).unwrap();
    let fresh2 = build_model(&spec(Family::PoolIndex, BackboneDepth::Deep), 20).unwrap();
    assert_ne!(t1b.content_hash(), fresh1.content_hash());
    assert_ne!(t2b.content_hash(), fresh2.content_hash());
}
