#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use ets_cli::config::{ExperimentConfig, ReproduceConfig, Task};
use ets_core::model::{BlockPlan, EncoderConfig};
use ets_core::synth::CohortSpec;

pub fn tiny_encoder() -> EncoderConfig {
    EncoderConfig {
        stem_channels: 2,
        stem_stride: 8,
        blocks: vec![
            BlockPlan { channels: 2, stride: 4 },
            BlockPlan { channels: 4, stride: 4 },
            BlockPlan { channels: 4, stride: 2 },
            BlockPlan { channels: 4, stride: 2 },
        ],
        kernel: 8,
        dropout: 0.2,
        dense_units: 4,
    }
}

/// Seconds-scale configuration rooted at `dir`.
pub fn tiny_config(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.paths.cohort = dir.join("cohort");
    cfg.paths.source_cohort = dir.join("source");
    cfg.paths.checkpoints = dir.join("checkpoints");
    cfg.paths.reports = dir.join("reports");
    cfg.cohort = CohortSpec {
        n_patients: 60,
        ecgs_per_patient_mean: 1.25,
        prevalence: 0.3,
        ..CohortSpec::default()
    };
    cfg.source_cohort = CohortSpec {
        n_patients: 60,
        ecgs_per_patient_mean: 1.5,
        ..CohortSpec::default()
    };
    cfg.encoder = tiny_encoder();
    cfg.pretrain.max_epochs = 2;
    cfg.pretrain.batch_size = 32;
    cfg.finetune.max_epochs = 3;
    cfg.finetune.batch_size = 32;
    cfg.evaluation.replicates = 50;
    cfg.reproduce = ReproduceConfig {
        seeds: vec![0, 1],
        tasks: Task::ALL.to_vec(),
        null_control: true,
        null_cohort: CohortSpec {
            n_patients: 60,
            ecgs_per_patient_mean: 1.0,
            prevalence: 0.5,
            effect_size: 0.0,
            ..CohortSpec::default()
        },
    };
    cfg
}

pub fn write_config(cfg: &ExperimentConfig, path: &Path) {
    std::fs::write(path, toml::to_string(cfg).unwrap()).unwrap();
}

pub fn ets(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ets"))
        .args(args)
        .current_dir(cwd)
        .env_remove("ETS_SEED")
        .output()
        .unwrap()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn sink() -> impl FnMut(&str) {
    |_: &str| {}
}
