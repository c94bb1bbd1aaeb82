//! Staged experiment orchestration following the two-step procedure:
//! dataset preparation, supervised teacher training, cross-model
//! supervision, student distillation, the enabled baselines, final
//! evaluation and report emission. Every stage checkpoints its outputs and
//! can be skipped on resume when its checkpoint verifies.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sslkd_core::dataset::{partition, split_dataset, Partitions, Sample};
use sslkd_core::eval::evaluate_as;
use sslkd_core::model::{build_model, Mode, SegModel};
use sslkd_core::scene::generate_synthetic_scene;
use sslkd_core::train::{
    train_cms_baseline, train_cps_baseline, train_cross_model, train_student_sslkd,
    train_supervised, TrainLog,
};

use crate::checkpoint;
use crate::config::{DataSource, ExperimentConfig};
use crate::dataset_io::{load_dataset, write_split};
use crate::error::{AppError, AppResult};
use crate::manifest::{unix_ms, CheckpointRef, RunManifest, StageEntry};
use crate::report::emit_report;
use crate::runlog::write_log;

/// Environment variable that re-roots relative run directories.
pub const RUN_ROOT_ENV: &str = "SSLKD_RUN_ROOT";

pub fn resolve_run_dir(run_dir: &Path) -> PathBuf {
    match env::var_os(RUN_ROOT_ENV) {
        Some(root) if run_dir.is_relative() => PathBuf::from(root).join(run_dir),
        _ => run_dir.to_path_buf(),
    }
}

pub struct RunResult {
    pub manifest: RunManifest,
    pub logs: Vec<TrainLog>,
    pub run_dir: PathBuf,
    pub report_path: PathBuf,
}

/// Builds the sample pool a config describes (synthetic scenes or a dataset
/// directory).
pub fn materialize_samples(cfg: &ExperimentConfig) -> AppResult<Vec<Sample>> {
    match cfg.dataset.source {
        DataSource::Synthetic => {
            let n = cfg.dataset.n_scenes.expect("validated");
            (0..n)
                .map(|i| {
                    generate_synthetic_scene(&cfg.dataset.scene, cfg.scene_seed(i))
                        .map_err(AppError::Core)
                })
                .collect()
        }
        DataSource::Directory => load_dataset(cfg.dataset.root.as_ref().expect("validated")),
    }
}

struct StageCtx {
    run_dir: PathBuf,
    manifest: RunManifest,
    previous: Option<RunManifest>,
    logs: Vec<TrainLog>,
}

impl StageCtx {
    fn ckpt_path(&self, model_key: &str) -> PathBuf {
        self.run_dir
            .join("checkpoints")
            .join(format!("{model_key}.ckpt"))
    }

    /// Runs one stage or restores it from verified checkpoints. The closure
    /// returns the trained models keyed by checkpoint name plus the stage
    /// log. Restored models come back in eval mode.
    fn stage(
        &mut self,
        name: &str,
        train: impl FnOnce() -> AppResult<(Vec<(String, SegModel)>, TrainLog)>,
    ) -> AppResult<Vec<SegModel>> {
        if let Some(prev) = &self.previous {
            if let Some(entry) = prev.stage(name) {
                let mut models = Vec::with_capacity(entry.checkpoints.len());
                for cref in &entry.checkpoints {
                    let path = self.run_dir.join(&cref.path);
                    let (model, hash) = checkpoint::load(&path)?;
                    if hash != cref.content_hash {
                        return Err(AppError::Checkpoint {
                            path,
                            message: format!(
                                "stale checkpoint for stage {name}: manifest records \
                                 {:016x} but the file hashes to {hash:016x}; refusing to \
                                 resume (delete the run directory to retrain)",
                                cref.content_hash
                            ),
                        });
                    }
                    models.push(model);
                }
                eprintln!("[resume] stage {name}: restored from checkpoints");
                self.manifest.stages.push(entry.clone());
                self.manifest.save(&self.run_dir.join("manifest.json"))?;
                return Ok(models);
            }
        }

        eprintln!("[run] stage {name}");
        let started = unix_ms();
        let t0 = Instant::now();
        let (keyed, mut log) = train()?;
        log.wall_secs = t0.elapsed().as_secs_f64();
        let finished = unix_ms();

        let mut refs = Vec::with_capacity(keyed.len());
        let mut models = Vec::with_capacity(keyed.len());
        for (key, model) in keyed {
            let path = self.ckpt_path(&key);
            let hash = checkpoint::save(&path, &model)?;
            refs.push(CheckpointRef {
                model: key,
                path: PathBuf::from("checkpoints").join(path.file_name().unwrap()),
                content_hash: hash,
            });
            models.push(model);
        }
        write_log(&self.run_dir.join("logs").join(format!("{name}.csv")), &log)?;
        self.logs.push(log);
        self.manifest.stages.push(StageEntry {
            name: name.to_string(),
            checkpoints: refs,
            wall_secs: t0.elapsed().as_secs_f64(),
            started_unix_ms: started,
            finished_unix_ms: finished,
        });
        self.manifest.save(&self.run_dir.join("manifest.json"))?;
        Ok(models)
    }
}

pub fn run_experiment(config_path: &Path, resume: bool) -> AppResult<RunResult> {
    let cfg = ExperimentConfig::from_path(config_path)?;
    run_with_config(&cfg, resume)
}

pub fn run_with_config(cfg: &ExperimentConfig, resume: bool) -> AppResult<RunResult> {
    cfg.validate()?;
    let run_dir = resolve_run_dir(&cfg.output.run_dir);
    let manifest_path = run_dir.join("manifest.json");

    let previous = if manifest_path.exists() {
        if !resume {
            return Err(AppError::Config(format!(
                "{} already contains a manifest; resume it or pick a fresh run directory",
                run_dir.display()
            )));
        }
        let prev = RunManifest::load(&manifest_path)?;
        if prev.config_hash != cfg.hash() {
            return Err(AppError::Config(format!(
                "refusing to resume: run directory was produced by config {:016x}, \
                 current config hashes to {:016x}",
                prev.config_hash,
                cfg.hash()
            )));
        }
        Some(prev)
    } else {
        None
    };

    fs::create_dir_all(&run_dir).map_err(AppError::io(&run_dir))?;
    fs::write(run_dir.join("config.toml"), cfg.to_toml()?)
        .map_err(AppError::io(run_dir.join("config.toml")))?;

    // dataset preparation
    let samples = materialize_samples(cfg)?;
    let split = split_dataset(
        &samples,
        cfg.dataset.n_labelled,
        cfg.dataset.unlabelled_ratio,
        cfg.dataset.n_val,
        cfg.split_seed(),
    )
    .map_err(AppError::Core)?;
    write_split(&run_dir.join("split.txt"), &split)?;
    let Partitions {
        labelled,
        unlabelled,
        validation,
    } = partition(&samples, &split).map_err(AppError::Core)?;
    let val = Some(validation.as_slice());

    let mut ctx = StageCtx {
        run_dir: run_dir.clone(),
        manifest: RunManifest::new(cfg.hash(), cfg.seed),
        previous,
        logs: Vec::new(),
    };

    // Step 1a: supervised teachers
    let t1_sup = ctx
        .stage("teacher1_supervised", || {
            let model = build_model(&cfg.models.teacher1, cfg.init_seed("teacher1"))
                .map_err(AppError::Core)?;
            let scfg = cfg.stage_cfg(&cfg.stages.teacher_supervised, "teacher1_supervised");
            let (m, mut log) =
                train_supervised(model, &labelled, &scfg, val).map_err(AppError::Core)?;
            log.stage = "teacher1_supervised".into();
            Ok((vec![("teacher1_sup".to_string(), m)], log))
        })?
        .remove(0);

    let t2_sup = ctx
        .stage("teacher2_supervised", || {
            let model = build_model(&cfg.models.teacher2, cfg.init_seed("teacher2"))
                .map_err(AppError::Core)?;
            let scfg = cfg.stage_cfg(&cfg.stages.teacher_supervised, "teacher2_supervised");
            let (m, mut log) =
                train_supervised(model, &labelled, &scfg, val).map_err(AppError::Core)?;
            log.stage = "teacher2_supervised".into();
            Ok((vec![("teacher2_sup".to_string(), m)], log))
        })?
        .remove(0);

    // supervised-only student baseline
    let student_sup = if cfg.baselines.supervised {
        Some(
            ctx.stage("student_supervised", || {
                let model = build_model(&cfg.models.student, cfg.init_seed("student"))
                    .map_err(AppError::Core)?;
                let scfg = cfg.stage_cfg(&cfg.stages.student_supervised, "student_supervised");
                let (m, mut log) =
                    train_supervised(model, &labelled, &scfg, val).map_err(AppError::Core)?;
                log.stage = "student_supervised".into();
                Ok((vec![("student_sup".to_string(), m)], log))
            })?
            .remove(0),
        )
    } else {
        None
    };

    // Step 1b: cross-model supervision of the teachers on unlabelled data
    let mut crossed = ctx.stage("cross_model", || {
        let scfg = cfg.stage_cfg(&cfg.stages.cross_model, "cross_model");
        let (a, b, log) = train_cross_model(
            t1_sup.clone(),
            t2_sup.clone(),
            &labelled,
            &unlabelled,
            &scfg,
            val,
        )
        .map_err(AppError::Core)?;
        Ok((
            vec![
                ("teacher1_cross".to_string(), a),
                ("teacher2_cross".to_string(), b),
            ],
            log,
        ))
    })?;
    let mut t2_cross = crossed.remove(1);
    let mut t1_cross = crossed.remove(0);
    t1_cross.set_mode(Mode::Eval);
    t2_cross.set_mode(Mode::Eval);

    // Step 2: student distillation against the frozen cross-trained teachers
    let student_sslkd = ctx
        .stage("sslkd", || {
            let student = build_model(&cfg.models.student, cfg.init_seed("student"))
                .map_err(AppError::Core)?;
            let scfg = cfg.stage_cfg(&cfg.stages.sslkd, "sslkd");
            let (m, log) = train_student_sslkd(
                student,
                &t1_cross,
                &t2_cross,
                &labelled,
                &unlabelled,
                &scfg,
                val,
            )
            .map_err(AppError::Core)?;
            Ok((vec![("student_sslkd".to_string(), m)], log))
        })?
        .remove(0);

    // CMS baseline supervises the student with the better cross-trained
    // teacher (by validation IoU)
    let student_cms = if cfg.baselines.cms {
        let iou1 = evaluate_as("teacher1_cross", &t1_cross, &validation, None)
            .map_err(AppError::Core)?
            .iou;
        let iou2 = evaluate_as("teacher2_cross", &t2_cross, &validation, None)
            .map_err(AppError::Core)?
            .iou;
        let best = if iou2 >= iou1 { &t2_cross } else { &t1_cross };
        Some(
            ctx.stage("cms", || {
                let student = build_model(&cfg.models.student, cfg.init_seed("student"))
                    .map_err(AppError::Core)?;
                let scfg = cfg.stage_cfg(&cfg.stages.sslkd, "cms");
                let (m, log) =
                    train_cms_baseline(student, best, &labelled, &unlabelled, &scfg, val)
                        .map_err(AppError::Core)?;
                Ok((vec![("student_cms".to_string(), m)], log))
            })?
            .remove(0),
        )
    } else {
        None
    };

    // CPS baseline: two student-spec networks with different initializations
    let cps_pair = if cfg.baselines.cps {
        let mut pair = ctx.stage("cps", || {
            let a = build_model(&cfg.models.student, cfg.init_seed("student"))
                .map_err(AppError::Core)?;
            let b =
                build_model(&cfg.models.student, cfg.init_seed("cps_b")).map_err(AppError::Core)?;
            let scfg = cfg.stage_cfg(&cfg.stages.cross_model, "cps");
            let (a, b, log) = train_cps_baseline(a, b, &labelled, &unlabelled, &scfg, val)
                .map_err(AppError::Core)?;
            Ok((
                vec![("cps_a".to_string(), a), ("cps_b".to_string(), b)],
                log,
            ))
        })?;
        let b = pair.remove(1);
        let a = pair.remove(0);
        Some((a, b))
    } else {
        None
    };

    // final validation pass over every produced model
    fn eval_model(
        reports: &mut Vec<sslkd_core::metrics::MetricsReport>,
        id: &str,
        mut model: SegModel,
        validation: &[Sample],
    ) -> AppResult<()> {
        model.set_mode(Mode::Eval);
        reports.push(evaluate_as(id, &model, validation, None).map_err(AppError::Core)?);
        Ok(())
    }
    let mut reports = Vec::new();
    eval_model(&mut reports, "teacher1_sup", t1_sup, &validation)?;
    eval_model(&mut reports, "teacher2_sup", t2_sup, &validation)?;
    if let Some(m) = student_sup {
        eval_model(&mut reports, "student_sup", m, &validation)?;
    }
    eval_model(&mut reports, "teacher1_cross", t1_cross, &validation)?;
    eval_model(&mut reports, "teacher2_cross", t2_cross, &validation)?;
    if let Some(m) = student_cms {
        eval_model(&mut reports, "student_cms", m, &validation)?;
    }
    if let Some((mut a, mut b)) = cps_pair {
        // report the better of the two mutually-trained networks
        a.set_mode(Mode::Eval);
        b.set_mode(Mode::Eval);
        let ra = evaluate_as("student_cps", &a, &validation, None).map_err(AppError::Core)?;
        let rb = evaluate_as("student_cps", &b, &validation, None).map_err(AppError::Core)?;
        reports.push(if rb.iou > ra.iou { rb } else { ra });
    }
    eval_model(&mut reports, "student_sslkd", student_sslkd, &validation)?;

    ctx.manifest.reports = reports;
    ctx.manifest.save(&manifest_path)?;
    ctx.manifest.check_stage_order()?;
    let report_path = emit_report(&ctx.manifest, &run_dir.join("report.txt"))?;

    Ok(RunResult {
        manifest: ctx.manifest,
        logs: ctx.logs,
        run_dir,
        report_path,
    })
}

/// Re-verifies every checkpoint recorded in a manifest against its file.
pub fn verify_manifest(run_dir: &Path, manifest: &RunManifest) -> AppResult<()> {
    for stage in &manifest.stages {
        for cref in &stage.checkpoints {
            let path = run_dir.join(&cref.path);
            let (_, hash) = checkpoint::load(&path)?;
            if hash != cref.content_hash {
                return Err(AppError::Checkpoint {
                    path,
                    message: format!(
                        "manifest integrity violation in stage {}: recorded \
                         {:016x}, file hashes to {hash:016x}",
                        stage.name, cref.content_hash
                    ),
                });
            }
        }
    }
    Ok(())
}
