use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::Sample;
use crate::error::{CoreError, Result};
use crate::eval::evaluate_as;
use crate::losses::{
    argmax_labels_batch, ce_loss_grad, mae_loss_grad, mean_probs, prob_mae_loss_grad,
    softmax_batch, LabelSource, LossParts, IGNORE_LABEL,
};
use crate::model::{Mode, SegModel};
use crate::nn::Conv2d;
use crate::schedule::poly_lr;
use crate::tensor::{LabelMap, Tensor};
use crate::train::{
    flip_batch, stack_images, stack_masks, stream_seed, BatchSampler, IterRecord, Sgd, TrainConfig,
    TrainLog, ValPoint,
};

/// Pseudo labels with their producer, so consumers can assert they never
/// train on their own output.
struct TaggedLabels {
    labels: LabelMap,
    source: LabelSource,
}

/// Cross-entropy that tolerates fully-ignored batches (a thresholded
/// pseudo-label batch can be empty); returns `None` when no pixel is valid.
fn masked_ce(logits: &Tensor, labels: &LabelMap) -> Result<Option<(f64, Tensor)>> {
    if labels.data().iter().all(|&v| v == IGNORE_LABEL) {
        return Ok(None);
    }
    ce_loss_grad(logits, labels, Some(IGNORE_LABEL)).map(Some)
}

fn non_finite_abort(stage: &str, iter: u64, lr: f64, parts: &LossParts) -> CoreError {
    CoreError::NonFiniteLoss {
        iter,
        diagnostic: format!(
            "stage={stage} lr={lr} sup={} dis_f={} dis_p={} unsup={}",
            parts.sup, parts.dis_f, parts.dis_p, parts.unsup
        ),
    }
}

fn check_labelled(partition: &[Sample], stage: &str) -> Result<()> {
    if partition.is_empty() {
        return Err(CoreError::Config(format!(
            "{stage}: labelled partition is empty"
        )));
    }
    for s in partition {
        if s.mask.is_none() {
            return Err(CoreError::Config(format!(
                "{stage}: labelled sample {} has no mask",
                s.id
            )));
        }
    }
    Ok(())
}

fn augment_rng(cfg: &TrainConfig) -> Option<ChaCha8Rng> {
    cfg.augment_flips
        .then(|| ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, "augment")))
}

fn maybe_eval(
    log: &mut TrainLog,
    model: &mut SegModel,
    id: &str,
    iter: u64,
    cfg: &TrainConfig,
    val: Option<&[Sample]>,
) -> Result<()> {
    if cfg.eval_every == 0 || !(iter + 1).is_multiple_of(cfg.eval_every) {
        return Ok(());
    }
    let Some(val) = val else { return Ok(()) };
    model.set_mode(Mode::Eval);
    let report = evaluate_as(id, model, val, None)?;
    model.set_mode(Mode::Train);
    log.val.push(ValPoint { iter, report });
    Ok(())
}

/// Step 1a / baseline: plain supervised training on pixel-averaged cross-entropy.
pub fn train_supervised(
    mut model: SegModel,
    labelled: &[Sample],
    cfg: &TrainConfig,
    val: Option<&[Sample]>,
) -> Result<(SegModel, TrainLog)> {
    cfg.validate()?;
    check_labelled(labelled, "supervised")?;
    let mut log = TrainLog::new("supervised");
    model.set_mode(Mode::Train);
    let mut opt = Sgd::new(cfg.momentum, cfg.weight_decay);
    let mut sampler = BatchSampler::new(
        labelled.len(),
        cfg.batch_size,
        stream_seed(cfg.seed, "labelled"),
    );
    let mut aug = augment_rng(cfg);

    for iter in 0..cfg.max_iters {
        let lr = poly_lr(cfg.base_lr, iter, cfg.max_iters, cfg.lr_power)?;
        let idxs = sampler.next_batch();
        let mut images = stack_images(labelled, &idxs)?;
        let mut labels = stack_masks(labelled, &idxs)?;
        if let Some(rng) = aug.as_mut() {
            flip_batch(&mut images, Some(&mut labels), rng);
        }

        model.zero_grads();
        let (_, logits) = model.forward(&images)?;
        let (loss, grad) = ce_loss_grad(&logits, &labels, None)?;
        if !loss.is_finite() {
            let parts = LossParts {
                sup: loss,
                ..LossParts::zero(cfg.loss_weights)
            };
            return Err(non_finite_abort(&log.stage, iter, lr, &parts));
        }
        model.backward(&grad, None)?;
        opt.step(&mut model.params_mut(), lr);

        log.records.push(IterRecord {
            iter,
            lr,
            l_sup: loss,
            l_dis_f: 0.0,
            l_dis_p: 0.0,
            l_unsup: 0.0,
            total: loss,
        });
        maybe_eval(&mut log, &mut model, "supervised", iter, cfg, val)?;
    }
    Ok((model, log))
}

/// Shared mechanics of cross-model supervision: two networks exchange hard
/// pseudo labels on the unlabelled batch (never consuming their own) and,
/// optionally, keep the supervised term on the labelled batch.
#[allow(clippy::too_many_arguments)]
fn train_mutual(
    mut a: SegModel,
    mut b: SegModel,
    a_ident: (&str, LabelSource),
    b_ident: (&str, LabelSource),
    stage: &str,
    labelled: &[Sample],
    unlabelled: &[Sample],
    cfg: &TrainConfig,
    val: Option<&[Sample]>,
) -> Result<(SegModel, SegModel, TrainLog)> {
    cfg.validate()?;
    if unlabelled.is_empty() && cfg.max_iters > 0 {
        return Err(CoreError::Config(format!(
            "{stage}: unlabelled partition is empty"
        )));
    }
    if cfg.labelled_in_cross {
        check_labelled(labelled, stage)?;
    }
    let mut log = TrainLog::new(stage);
    a.set_mode(Mode::Train);
    b.set_mode(Mode::Train);
    let mut opt_a = Sgd::new(cfg.momentum, cfg.weight_decay);
    let mut opt_b = Sgd::new(cfg.momentum, cfg.weight_decay);
    let mut unlab_sampler = (cfg.max_iters > 0).then(|| {
        BatchSampler::new(
            unlabelled.len(),
            cfg.batch_size,
            stream_seed(cfg.seed, "unlabelled"),
        )
    });
    let mut lab_sampler = (cfg.labelled_in_cross && cfg.max_iters > 0).then(|| {
        BatchSampler::new(
            labelled.len(),
            cfg.batch_size,
            stream_seed(cfg.seed, "labelled"),
        )
    });
    let mut aug = augment_rng(cfg);

    for iter in 0..cfg.max_iters {
        let lr = poly_lr(cfg.base_lr, iter, cfg.max_iters, cfg.lr_power)?;
        a.zero_grads();
        b.zero_grads();

        let idxs = unlab_sampler.as_mut().unwrap().next_batch();
        let mut images = stack_images(unlabelled, &idxs)?;
        if let Some(rng) = aug.as_mut() {
            flip_batch(&mut images, None, rng);
        }
        let (_, za) = a.forward(&images)?;
        let (_, zb) = b.forward(&images)?;
        let from_a = TaggedLabels {
            labels: argmax_labels_batch(&softmax_batch(&za)?, cfg.pseudo_threshold)?,
            source: a_ident.1,
        };
        let from_b = TaggedLabels {
            labels: argmax_labels_batch(&softmax_batch(&zb)?, cfg.pseudo_threshold)?,
            source: b_ident.1,
        };
        // pseudo labels never supervise their own producer
        assert!(
            from_b.source != a_ident.1,
            "self-supervision detected for {}",
            a_ident.0
        );
        assert!(
            from_a.source != b_ident.1,
            "self-supervision detected for {}",
            b_ident.0
        );

        let mut cross_a = 0.0;
        if let Some((l, g)) = masked_ce(&za, &from_b.labels)? {
            cross_a = l;
            a.backward(&g, None)?;
        }
        let mut cross_b = 0.0;
        if let Some((l, g)) = masked_ce(&zb, &from_a.labels)? {
            cross_b = l;
            b.backward(&g, None)?;
        }

        let mut sup_a = 0.0;
        let mut sup_b = 0.0;
        if let Some(sampler) = lab_sampler.as_mut() {
            let idxs = sampler.next_batch();
            let mut images = stack_images(labelled, &idxs)?;
            let mut labels = stack_masks(labelled, &idxs)?;
            if let Some(rng) = aug.as_mut() {
                flip_batch(&mut images, Some(&mut labels), rng);
            }
            let (_, za) = a.forward(&images)?;
            let (l, g) = ce_loss_grad(&za, &labels, None)?;
            sup_a = l;
            a.backward(&g, None)?;
            let (_, zb) = b.forward(&images)?;
            let (l, g) = ce_loss_grad(&zb, &labels, None)?;
            sup_b = l;
            b.backward(&g, None)?;
        }

        let l_sup = 0.5 * (sup_a + sup_b);
        let l_unsup = 0.5 * (cross_a + cross_b);
        let total = l_sup + l_unsup;
        if !total.is_finite() {
            let parts = LossParts {
                sup: l_sup,
                unsup: l_unsup,
                ..LossParts::zero(cfg.loss_weights)
            };
            return Err(non_finite_abort(stage, iter, lr, &parts));
        }
        opt_a.step(&mut a.params_mut(), lr);
        opt_b.step(&mut b.params_mut(), lr);

        log.records.push(IterRecord {
            iter,
            lr,
            l_sup,
            l_dis_f: 0.0,
            l_dis_p: 0.0,
            l_unsup,
            total,
        });
        maybe_eval(&mut log, &mut a, a_ident.0, iter, cfg, val)?;
        maybe_eval(&mut log, &mut b, b_ident.0, iter, cfg, val)?;
    }
    Ok((a, b, log))
}

/// Step 1b: cross-model supervision of the two (structurally different)
/// teachers on unlabelled data.
pub fn train_cross_model(
    teacher1: SegModel,
    teacher2: SegModel,
    labelled: &[Sample],
    unlabelled: &[Sample],
    cfg: &TrainConfig,
    val: Option<&[Sample]>,
) -> Result<(SegModel, SegModel, TrainLog)> {
    train_mutual(
        teacher1,
        teacher2,
        ("teacher1", LabelSource::Teacher1),
        ("teacher2", LabelSource::Teacher2),
        "cross_model",
        labelled,
        unlabelled,
        cfg,
        val,
    )
}

/// Cross-pseudo-supervision baseline: the same mutual mechanics applied to
/// two student-spec networks that differ only in initialization.
pub fn train_cps_baseline(
    model_a: SegModel,
    model_b: SegModel,
    labelled: &[Sample],
    unlabelled: &[Sample],
    cfg: &TrainConfig,
    val: Option<&[Sample]>,
) -> Result<(SegModel, SegModel, TrainLog)> {
    if model_a.spec() != model_b.spec() {
        return Err(CoreError::Config(
            "cps requires both networks to share one model spec".into(),
        ));
    }
    let degenerate = model_a.content_hash() == model_b.content_hash();
    let (a, b, mut log) = train_mutual(
        model_a,
        model_b,
        ("cps_a", LabelSource::Teacher1),
        ("cps_b", LabelSource::Teacher2),
        "cps",
        labelled,
        unlabelled,
        cfg,
        val,
    )?;
    if degenerate {
        log.warnings.push(String::from(
            "cps networks started bit-identical: network perturbation is degenerate",
        ));
    }
    Ok((a, b, log))
}

/// Distillation core shared by SSLKD and the CMS baseline. `teachers` holds
/// one or two frozen networks: with two, their probabilities are averaged
/// and teacher #1's feature tap can drive the feature term; with one, only
/// probability/label supervision is possible.
#[allow(clippy::too_many_arguments)]
fn train_distill(
    mut student: SegModel,
    teachers: &[&SegModel],
    use_feature_term: bool,
    stage: &str,
    labelled: &[Sample],
    unlabelled: &[Sample],
    cfg: &TrainConfig,
    val: Option<&[Sample]>,
) -> Result<(SegModel, TrainLog)> {
    cfg.validate()?;
    for t in teachers {
        if t.mode() != Mode::Eval {
            return Err(CoreError::Config(format!(
                "{stage}: teachers must be frozen in eval mode before distillation"
            )));
        }
    }
    check_labelled(labelled, stage)?;
    if unlabelled.is_empty() && cfg.max_iters > cfg.distill_warmup_iters {
        return Err(CoreError::Config(format!(
            "{stage}: unlabelled partition is empty"
        )));
    }
    let w = cfg.loss_weights;
    let mut log = TrainLog::new(stage);
    log.distill_warmup_iters = cfg.distill_warmup_iters;
    student.set_mode(Mode::Train);
    let mut opt = Sgd::new(cfg.momentum, cfg.weight_decay);
    let mut lab_sampler = BatchSampler::new(
        labelled.len(),
        cfg.batch_size,
        stream_seed(cfg.seed, "labelled"),
    );
    let mut unlab_sampler = (!unlabelled.is_empty()).then(|| {
        BatchSampler::new(
            unlabelled.len(),
            cfg.batch_size,
            stream_seed(cfg.seed, "unlabelled"),
        )
    });
    let mut aug = augment_rng(cfg);

    // learned 1x1 channel projection from the student tap onto the teacher
    // tap, for mismatched widths; off by default
    let mut projection = if cfg.feature_projection && use_feature_term && w.dis_f > 0.0 {
        let from = student.spec().feature_tap_channels;
        let to = teachers[0].spec().feature_tap_channels;
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, "projection"));
        Some((
            Conv2d::new("feature_projection", from, to, 1, 1, 0, 1, false, &mut rng),
            Sgd::new(cfg.momentum, cfg.weight_decay),
        ))
    } else {
        None
    };

    for iter in 0..cfg.max_iters {
        let lr = poly_lr(cfg.base_lr, iter, cfg.max_iters, cfg.lr_power)?;
        student.zero_grads();
        if let Some((proj, _)) = projection.as_mut() {
            proj.w.zero_grad();
        }
        let mut parts = LossParts::zero(w);

        // supervised term on the labelled batch (this alone is the warm-up
        // phase, i.e. the student's supervised initialization)
        let idxs = lab_sampler.next_batch();
        let mut images = stack_images(labelled, &idxs)?;
        let mut labels = stack_masks(labelled, &idxs)?;
        if let Some(rng) = aug.as_mut() {
            flip_batch(&mut images, Some(&mut labels), rng);
        }
        let (_, logits) = student.forward(&images)?;
        let (l_sup, mut g_sup) = ce_loss_grad(&logits, &labels, None)?;
        parts.sup = l_sup;
        g_sup.scale(w.sup);
        student.backward(&g_sup, None)?;

        if iter >= cfg.distill_warmup_iters {
            let idxs = unlab_sampler.as_mut().unwrap().next_batch();
            let mut images = stack_images(unlabelled, &idxs)?;
            if let Some(rng) = aug.as_mut() {
                flip_batch(&mut images, None, rng);
            }

            let mut teacher_logits = Vec::with_capacity(teachers.len());
            let mut teacher_feat = None;
            for (ti, t) in teachers.iter().enumerate() {
                let (f, z) = t.forward_frozen(&images)?;
                if ti == 0 {
                    teacher_feat = Some(f);
                }
                teacher_logits.push(z);
            }
            let mut p_agg = softmax_batch(&teacher_logits[0])?;
            for z in &teacher_logits[1..] {
                p_agg = mean_probs(&p_agg, &softmax_batch(z)?)?;
            }
            let pseudo = argmax_labels_batch(&p_agg, cfg.pseudo_threshold)?;

            let (feat, logits) = student.forward(&images)?;
            let mut g_logits = Tensor::zeros(logits.shape());
            let mut g_feat = None;

            if use_feature_term && w.dis_f > 0.0 {
                let teacher_feat = teacher_feat.as_ref().unwrap();
                g_feat = Some(match projection.as_mut() {
                    Some((proj, _)) => {
                        let projected = proj.forward(&feat);
                        let (l, mut g) = mae_loss_grad(teacher_feat, &projected)?;
                        parts.dis_f = l;
                        g.scale(w.dis_f);
                        proj.backward(&feat, &g)
                    }
                    None => {
                        let (l, mut g) = mae_loss_grad(teacher_feat, &feat)?;
                        parts.dis_f = l;
                        g.scale(w.dis_f);
                        g
                    }
                });
            }
            if w.dis_p > 0.0 {
                let (l, mut g) = prob_mae_loss_grad(&p_agg, &logits)?;
                parts.dis_p = l;
                g.scale(w.dis_p);
                g_logits.add_assign(&g)?;
            }
            if w.unsup > 0.0 {
                if let Some((l, mut g)) = masked_ce(&logits, &pseudo)? {
                    parts.unsup = l;
                    g.scale(w.unsup);
                    g_logits.add_assign(&g)?;
                }
            }
            student.backward(&g_logits, g_feat.as_ref())?;
        }

        let total = crate::losses::total_sslkd_loss(&parts)?;
        if !total.is_finite() {
            return Err(non_finite_abort(stage, iter, lr, &parts));
        }
        opt.step(&mut student.params_mut(), lr);
        if let Some((proj, proj_opt)) = projection.as_mut() {
            proj_opt.step(&mut [&mut proj.w], lr);
        }

        log.records.push(IterRecord {
            iter,
            lr,
            l_sup: parts.sup,
            l_dis_f: parts.dis_f,
            l_dis_p: parts.dis_p,
            l_unsup: parts.unsup,
            total,
        });
        maybe_eval(&mut log, &mut student, stage, iter, cfg, val)?;
    }
    Ok((student, log))
}

/// Step 2: the full distillation objective against two frozen teachers —
/// supervised CE on labelled data plus feature MAE (teacher #1 only),
/// probability MAE against the aggregated teacher output, and CE against
/// the aggregated pseudo labels on unlabelled data.
pub fn train_student_sslkd(
    student: SegModel,
    teacher1: &SegModel,
    teacher2: &SegModel,
    labelled: &[Sample],
    unlabelled: &[Sample],
    cfg: &TrainConfig,
    val: Option<&[Sample]>,
) -> Result<(SegModel, TrainLog)> {
    train_distill(
        student,
        &[teacher1, teacher2],
        true,
        "sslkd",
        labelled,
        unlabelled,
        cfg,
        val,
    )
}

/// CMS baseline: one frozen teacher supervises the student through pseudo
/// labels only — no feature or probability MAE terms.
pub fn train_cms_baseline(
    student: SegModel,
    teacher: &SegModel,
    labelled: &[Sample],
    unlabelled: &[Sample],
    cfg: &TrainConfig,
    val: Option<&[Sample]>,
) -> Result<(SegModel, TrainLog)> {
    let cfg = TrainConfig {
        loss_weights: crate::losses::LossWeights {
            dis_f: 0.0,
            dis_p: 0.0,
            ..cfg.loss_weights
        },
        ..cfg.clone()
    };
    train_distill(
        student,
        &[teacher],
        false,
        "cms",
        labelled,
        unlabelled,
        &cfg,
        val,
    )
}
