use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sslkd::config::{DataSource, ExperimentConfig};
use sslkd::dataset_io::{load_dataset, write_dataset};
use sslkd::manifest::RunManifest;
use sslkd::report::emit_report;
use sslkd::runner::{materialize_samples, resolve_run_dir, run_experiment, run_with_config};
use sslkd::{checkpoint, AppError, AppResult};
use sslkd_core::eval::evaluate_as;

/// Two-step semi-supervised knowledge distillation for road segmentation:
/// train two teachers, cross-supervise them on unlabelled data, then
/// distill a lightweight student at feature, probability and label level.
#[derive(Parser)]
#[command(name = "sslkd", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the full experiment pipeline described by a TOML config.
    Run {
        config: PathBuf,
        /// Reuse hash-valid checkpoints found in the run directory.
        #[arg(long)]
        resume: bool,
    },
    /// Resume an interrupted run from its directory (reads the stored
    /// config copy).
    Resume { run_dir: PathBuf },
    /// Re-emit the comparison report for a finished run.
    Report { run_dir: PathBuf },
    /// Materialize the synthetic dataset of a config into its
    /// `dataset.root` directory as PNGs.
    GenData { config: PathBuf },
    /// Evaluate a checkpoint over a dataset directory (mask-bearing
    /// samples only).
    Eval {
        checkpoint: PathBuf,
        dataset: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Cmd) -> AppResult<()> {
    match cmd {
        Cmd::Run { config, resume } => {
            let result = run_experiment(&config, resume)?;
            println!("run complete: {}", result.run_dir.display());
            print!(
                "{}",
                std::fs::read_to_string(&result.report_path).unwrap_or_default()
            );
            Ok(())
        }
        Cmd::Resume { run_dir } => {
            let run_dir = resolve_run_dir(&run_dir);
            let config_path = run_dir.join("config.toml");
            let mut cfg = ExperimentConfig::from_path(&config_path)?;
            cfg.output.run_dir = run_dir.clone();
            let result = run_with_config(&cfg, true)?;
            println!("run complete: {}", result.run_dir.display());
            print!(
                "{}",
                std::fs::read_to_string(&result.report_path).unwrap_or_default()
            );
            Ok(())
        }
        Cmd::Report { run_dir } => {
            let run_dir = resolve_run_dir(&run_dir);
            let manifest = RunManifest::load(&run_dir.join("manifest.json"))?;
            let path = emit_report(&manifest, &run_dir.join("report.txt"))?;
            print!(
                "{}",
                std::fs::read_to_string(&path).map_err(AppError::io(&path))?
            );
            Ok(())
        }
        Cmd::GenData { config } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            if cfg.dataset.source != DataSource::Synthetic {
                return Err(AppError::Config(
                    "gen-data needs a synthetic dataset section".into(),
                ));
            }
            let root = cfg.dataset.root.clone().ok_or_else(|| {
                AppError::Config("gen-data needs dataset.root as its destination".into())
            })?;
            let samples = materialize_samples(&cfg)?;
            write_dataset(&root, &samples)?;
            println!("wrote {} scenes to {}", samples.len(), root.display());
            Ok(())
        }
        Cmd::Eval {
            checkpoint: ckpt,
            dataset,
        } => {
            let (model, hash) = checkpoint::load(&ckpt)?;
            let samples = load_dataset(&dataset)?;
            let masked: Vec<_> = samples.into_iter().filter(|s| s.mask.is_some()).collect();
            if masked.is_empty() {
                return Err(AppError::Config(format!(
                    "no mask-bearing samples under {}",
                    dataset.display()
                )));
            }
            let report = evaluate_as("eval", &model, &masked, None)?;
            println!(
                "checkpoint {} (content hash {hash:016x}), {} samples",
                ckpt.display(),
                masked.len()
            );
            println!(
                "IoU {:.2}%  OA {:.2}%  Precision {:.2}%  Recall {:.2}%  F1 {:.2}%  GFLOPs {}",
                report.iou * 100.0,
                report.oa * 100.0,
                report.precision * 100.0,
                report.recall * 100.0,
                report.f1 * 100.0,
                sslkd::report::gflops_str(report.gflops)
            );
            println!(
                "{}",
                serde_json::to_string(&report).expect("report serializes")
            );
            Ok(())
        }
    }
}
