//! Experiment configuration, read from a TOML file.
//!
//! Every section is optional; missing values take the desk-scale defaults.
//! Relative paths are resolved against the working directory.

use std::path::{Path, PathBuf};

use ets_core::model::{BlockPlan, EncoderConfig, HeadConfig, ModelKind};
use ets_core::synth::CohortSpec;
use ets_core::training::{SourceTask, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// The three target tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Diagnosis,
    Mortality30,
    Isd,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Diagnosis, Task::Mortality30, Task::Isd];

    pub fn kind(self) -> ModelKind {
        match self {
            Task::Diagnosis => ModelKind::Diagnosis,
            Task::Mortality30 => ModelKind::Mortality30,
            Task::Isd => ModelKind::Isd,
        }
    }

    pub fn from_kind(kind: ModelKind) -> Option<Self> {
        match kind {
            ModelKind::Diagnosis => Some(Task::Diagnosis),
            ModelKind::Mortality30 => Some(Task::Mortality30),
            ModelKind::Isd => Some(Task::Isd),
            _ => None,
        }
    }

    pub fn source_task(self) -> SourceTask {
        match self {
            Task::Diagnosis => SourceTask::MultilabelCodes,
            Task::Mortality30 => SourceTask::AllcauseMortality,
            Task::Isd => SourceTask::AllcauseSurvival,
        }
    }

    pub fn name(self) -> &'static str {
        self.kind().name()
    }

    /// Headline metric: AUROC for classifiers, C-index for ISD.
    pub fn metric_name(self) -> &'static str {
        match self {
            Task::Isd => "c_index",
            _ => "auroc",
        }
    }

    /// Mortality tasks are studied on diagnosed patients only.
    pub fn positive_only(self) -> bool {
        !matches!(self, Task::Diagnosis)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub cohort: PathBuf,
    pub source_cohort: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            cohort: "runs/cohort".into(),
            source_cohort: "runs/source_cohort".into(),
            checkpoints: "runs/checkpoints".into(),
            reports: "runs/reports".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Patient fraction of the development side of the dev/holdout split.
    pub dev_fraction: f64,
    pub replicates: usize,
    pub threshold: f64,
    /// Report L1 losses as per-patient means instead of sums.
    pub l1_mean: bool,
    /// Cohorts up to this many records are rendered into memory once.
    pub cache_limit: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            dev_fraction: 0.6,
            replicates: 1000,
            threshold: 0.5,
            l1_mean: false,
            cache_limit: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReproduceConfig {
    pub seeds: Vec<u64>,
    pub tasks: Vec<Task>,
    /// Run the no-signal diagnosis control on `null_cohort`.
    pub null_control: bool,
    pub null_cohort: CohortSpec,
}

impl Default for ReproduceConfig {
    fn default() -> Self {
        Self {
            seeds: (0..5).collect(),
            tasks: Task::ALL.to_vec(),
            null_control: true,
            null_cohort: CohortSpec {
                n_patients: 5000,
                ecgs_per_patient_mean: 1.0,
                prevalence: 0.5,
                effect_size: 0.0,
                ..CohortSpec::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub task: Task,
    pub transfer: bool,
    pub paths: Paths,
    /// Target (pandemic-era) cohort.
    pub cohort: CohortSpec,
    /// Source (pre-pandemic) cohort used for pretraining.
    pub source_cohort: CohortSpec,
    pub encoder: EncoderConfig,
    pub heads: HeadConfig,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub evaluation: EvaluationConfig,
    pub reproduce: ReproduceConfig,
}

/// Encoder sized for single-core CPU training on 12x4096 inputs.
pub fn desk_encoder() -> EncoderConfig {
    EncoderConfig {
        stem_channels: 8,
        stem_stride: 4,
        blocks: vec![
            BlockPlan { channels: 8, stride: 4 },
            BlockPlan { channels: 16, stride: 4 },
            BlockPlan { channels: 16, stride: 2 },
            BlockPlan { channels: 16, stride: 2 },
        ],
        kernel: 16,
        dropout: 0.2,
        dense_units: 32,
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            task: Task::Diagnosis,
            transfer: true,
            paths: Paths::default(),
            cohort: CohortSpec {
                n_patients: 800,
                ecgs_per_patient_mean: 1.25,
                ..CohortSpec::default()
            },
            source_cohort: CohortSpec {
                n_patients: 10_000,
                ecgs_per_patient_mean: 2.0,
                ..CohortSpec::default()
            },
            encoder: desk_encoder(),
            heads: HeadConfig::default(),
            pretrain: TrainConfig {
                max_epochs: 6,
                batch_size: 8,
                ..TrainConfig::default()
            },
            finetune: TrainConfig {
                max_epochs: 60,
                ..TrainConfig::default()
            },
            evaluation: EvaluationConfig::default(),
            reproduce: ReproduceConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let cfg: Self = toml::from_str(&text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate().map_err(|message| CliError::Config {
            path: path.to_path_buf(),
            message,
        })?;
        Ok(cfg)
    }

    /// Checks every section before any work starts.
    pub fn validate(&self) -> Result<(), String> {
        fn ctx(section: &str) -> impl Fn(ets_core::Error) -> String + '_ {
            move |e| format!("[{section}] {e}")
        }
        self.cohort.validate().map_err(ctx("cohort"))?;
        self.source_cohort.validate().map_err(ctx("source_cohort"))?;
        self.encoder.validate().map_err(ctx("encoder"))?;
        self.pretrain.validate().map_err(ctx("pretrain"))?;
        self.finetune.validate().map_err(ctx("finetune"))?;
        self.reproduce.null_cohort.validate().map_err(ctx("reproduce.null_cohort"))?;
        let e = &self.evaluation;
        if !(e.dev_fraction > 0.0 && e.dev_fraction < 1.0) {
            return Err("[evaluation] dev_fraction outside (0, 1)".into());
        }
        if e.replicates == 0 {
            return Err("[evaluation] replicates must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&e.threshold) {
            return Err("[evaluation] threshold outside [0, 1]".into());
        }
        if self.reproduce.seeds.is_empty() || self.reproduce.tasks.is_empty() {
            return Err("[reproduce] needs at least one seed and one task".into());
        }
        if self.heads.transfer_hidden == 0 || self.heads.isd_hidden == 0 {
            return Err("[heads] widths must be >= 1".into());
        }
        Ok(())
    }

    /// Applies a seed override to the config and every seed it governs.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}
