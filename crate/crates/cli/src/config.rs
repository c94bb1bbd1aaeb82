//! The TOML experiment configuration. See `configs/reference.toml` for an
//! annotated example; the full schema is documented in the README.
//!
//! Seed policy: every random decision in a run derives from the single
//! top-level `seed` via documented stream tags, so any stage can be
//! reproduced in isolation:
//!   - scene `i` of a synthetic pool: stream `"scene"` + i
//!   - the dataset split: stream `"split"`
//!   - model initializations: streams `"init/teacher1"`, `"init/teacher2"`,
//!     `"init/student"`, `"init/cps_b"` (CPS's partner network)
//!   - per-stage batch sampling: stream `"stage/<stage name>"`
//!
//! The per-stage `TrainConfig::seed` field is therefore not part of the
//! file schema; the runner assigns it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sslkd_core::hash::fnv64;
use sslkd_core::model::{Family, ModelSpec};
use sslkd_core::scene::SceneParams;
use sslkd_core::train::{stream_seed, TrainConfig};

use crate::error::{AppError, AppResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic,
    Directory,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DataSource,
    /// Dataset directory (`images/`, `masks/`); required for `directory`
    /// source, and the destination of `gen-data`.
    #[serde(default)]
    pub root: Option<PathBuf>,
    /// Synthetic pool size; must cover the split counts.
    #[serde(default)]
    pub n_scenes: Option<usize>,
    pub n_labelled: usize,
    pub unlabelled_ratio: usize,
    pub n_val: usize,
    #[serde(default)]
    pub scene: SceneParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelsConfig {
    pub teacher1: ModelSpec,
    pub teacher2: ModelSpec,
    pub student: ModelSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StagesConfig {
    #[serde(default)]
    pub teacher_supervised: TrainConfig,
    #[serde(default)]
    pub cross_model: TrainConfig,
    /// Configuration of the supervised-only student baseline. The student's
    /// supervised *initialization* inside SSLKD is the sslkd stage's
    /// warm-up phase, not a separate stage.
    #[serde(default)]
    pub student_supervised: TrainConfig,
    #[serde(default)]
    pub sslkd: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineToggles {
    pub supervised: bool,
    pub cms: bool,
    pub cps: bool,
}

impl Default for BaselineToggles {
    fn default() -> Self {
        BaselineToggles {
            supervised: true,
            cms: true,
            cps: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub run_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub models: ModelsConfig,
    pub stages: StagesConfig,
    #[serde(default)]
    pub baselines: BaselineToggles,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> AppResult<Self> {
        let text = fs::read_to_string(path).map_err(AppError::io(path))?;
        let cfg: ExperimentConfig = toml::from_str(&text).map_err(|e| AppError::ConfigParse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> AppResult<String> {
        toml::to_string_pretty(self)
            .map_err(|e| AppError::Config(format!("cannot serialize config: {e}")))
    }

    /// Fingerprint over the canonical JSON encoding; identifies a run's
    /// configuration in manifests and checkpoints.
    pub fn hash(&self) -> u64 {
        fnv64(&serde_json::to_vec(self).expect("config serializes"))
    }

    pub fn validate(&self) -> AppResult<()> {
        for (name, spec) in [
            ("teacher1", &self.models.teacher1),
            ("teacher2", &self.models.teacher2),
            ("student", &self.models.student),
        ] {
            spec.validate()
                .map_err(|e| AppError::Config(format!("models.{name}: {e}")))?;
        }
        for (name, stage) in [
            ("teacher_supervised", &self.stages.teacher_supervised),
            ("cross_model", &self.stages.cross_model),
            ("student_supervised", &self.stages.student_supervised),
            ("sslkd", &self.stages.sslkd),
        ] {
            stage
                .validate()
                .map_err(|e| AppError::Config(format!("stages.{name}: {e}")))?;
        }
        let d = &self.dataset;
        let required = d.n_labelled * (1 + d.unlabelled_ratio) + d.n_val;
        match d.source {
            DataSource::Synthetic => {
                d.scene
                    .validate()
                    .map_err(|e| AppError::Config(format!("dataset.scene: {e}")))?;
                let n = d.n_scenes.ok_or_else(|| {
                    AppError::Config("dataset.n_scenes is required for synthetic source".into())
                })?;
                if n < required {
                    return Err(AppError::Config(format!(
                        "dataset.n_scenes = {n} cannot cover the split \
                         ({required} samples required)"
                    )));
                }
            }
            DataSource::Directory => {
                if d.root.is_none() {
                    return Err(AppError::Config(
                        "dataset.root is required for directory source".into(),
                    ));
                }
            }
        }
        if self.dataset.n_labelled == 0 {
            return Err(AppError::Config("dataset.n_labelled must be >= 1".into()));
        }
        if self.dataset.n_val == 0 {
            return Err(AppError::Config(
                "dataset.n_val must be >= 1 (validation drives the reports)".into(),
            ));
        }
        // feature distillation needs aligned taps between teacher #1 and
        // the student, unless a learned projection bridges them
        if self.stages.sslkd.loss_weights.dis_f > 0.0 && !self.stages.sslkd.feature_projection {
            let (t1, st) = (&self.models.teacher1, &self.models.student);
            if t1.family != Family::DilatedPyramid
                || st.family != Family::DilatedPyramid
                || t1.feature_tap_channels != st.feature_tap_channels
            {
                return Err(AppError::Config(
                    "feature distillation (sslkd.loss_weights.dis_f > 0) requires teacher1 \
                     and student to share the dilated_pyramid family and tap width; set \
                     stages.sslkd.feature_projection = true to bridge mismatched taps"
                        .into(),
                ));
            }
        }
        Ok(())
    }

    /// Stage-scoped training config: the shared section plus the derived
    /// stage seed.
    pub fn stage_cfg(&self, section: &TrainConfig, stage: &str) -> TrainConfig {
        TrainConfig {
            seed: stream_seed(self.seed, &format!("stage/{stage}")),
            ..section.clone()
        }
    }

    pub fn init_seed(&self, model: &str) -> u64 {
        stream_seed(self.seed, &format!("init/{model}"))
    }

    pub fn split_seed(&self) -> u64 {
        stream_seed(self.seed, "split")
    }

    pub fn scene_seed(&self, index: usize) -> u64 {
        stream_seed(self.seed, "scene").wrapping_add(index as u64)
    }
}
