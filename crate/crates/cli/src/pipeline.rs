//! Stage functions shared by the subcommands and the full reproduction.

use std::fmt::Write as _;
use std::path::Path;

use ets_core::metrics::{classification_report, survival_report, BinaryEval, MetricValue, MetricsReport, ReportOptions};
use ets_core::model::{build_model_with, EcgModel, EcgRecord};
use ets_core::mtlr::SurvivalLabel;
use ets_core::nn::{Module, StateRef};
use ets_core::rng::derive_seed;
use ets_core::synth::{select_eval_ecgs, split_by_patient, Cohort, CohortSpec, EvalSelection};
use ets_core::training::{
    freeze_for_transfer, pretrain_source, save_checkpoint, survival_grid, train_with, Checkpoint, EpochRecord,
    TrainConfig,
};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Task};
use crate::error::CliError;

pub type Result<T> = std::result::Result<T, CliError>;

/// Stream identifiers under the top-level seed.
mod stream {
    pub const SOURCE_COHORT: u64 = 0x50;
    pub const TARGET_COHORT: u64 = 0x7a;
    pub const SPLIT: u64 = 0x5b;
    pub const PRETRAIN: u64 = 0x91;
    pub const FINETUNE: u64 = 0xf1;
    pub const EVALUATE: u64 = 0xe7;
    pub const NULL: u64 = 0x0c;
}

fn task_index(task: Task) -> u64 {
    Task::ALL.iter().position(|&t| t == task).expect("known task") as u64
}

pub fn source_spec(cfg: &ExperimentConfig) -> CohortSpec {
    CohortSpec {
        seed: derive_seed(cfg.seed, &[stream::SOURCE_COHORT]),
        ..cfg.source_cohort.clone()
    }
}

/// Target cohort of the single-run commands.
pub fn target_spec(cfg: &ExperimentConfig) -> CohortSpec {
    CohortSpec {
        seed: derive_seed(cfg.seed, &[stream::TARGET_COHORT]),
        ..cfg.cohort.clone()
    }
}

/// Target cohort of repetition `rep` of `task` in the reproduction.
pub fn repetition_spec(cfg: &ExperimentConfig, task: Task, rep: u64) -> CohortSpec {
    CohortSpec {
        seed: derive_seed(cfg.seed, &[stream::TARGET_COHORT, task_index(task), rep]),
        positive_only: task.positive_only(),
        ..cfg.cohort.clone()
    }
}

pub fn pretrain_config(cfg: &ExperimentConfig, task: Task) -> TrainConfig {
    TrainConfig {
        seed: derive_seed(cfg.seed, &[stream::PRETRAIN, task_index(task)]),
        ..cfg.pretrain.clone()
    }
}

pub fn split_seed(cfg: &ExperimentConfig, rep: Option<u64>) -> u64 {
    match rep {
        Some(r) => derive_seed(cfg.seed, &[stream::SPLIT, r]),
        None => derive_seed(cfg.seed, &[stream::SPLIT]),
    }
}

/// Renders small cohorts into memory so training epochs skip regeneration.
pub fn prepare(cohort: Cohort, cfg: &ExperimentConfig) -> Result<Cohort> {
    if cohort.len() <= cfg.evaluation.cache_limit {
        Ok(cohort.materialize()?)
    } else {
        Ok(cohort)
    }
}

pub fn split(cfg: &ExperimentConfig, cohort: &Cohort, seed: u64) -> Result<(Cohort, Cohort)> {
    Ok(split_by_patient(cohort, cfg.evaluation.dev_fraction, seed)?)
}

pub fn pretrain(
    cfg: &ExperimentConfig,
    task: Task,
    source: &Cohort,
    log: &mut dyn FnMut(&str),
) -> Result<Checkpoint> {
    let train_cfg = pretrain_config(cfg, task);
    let label = format!("pretrain {}", task.source_task_name());
    let (_, checkpoint) = pretrain_source(source, task.source_task(), &cfg.encoder, &train_cfg, &mut |e| {
        log(&epoch_line(&label, e))
    })?;
    Ok(checkpoint)
}

impl Task {
    pub fn source_task_name(self) -> &'static str {
        match self {
            Task::Diagnosis => "source_codes",
            Task::Mortality30 => "source_mortality",
            Task::Isd => "source_survival",
        }
    }
}

pub fn epoch_line(label: &str, e: &EpochRecord) -> String {
    format!(
        "[{label}] epoch {:>3}  train {:.5}  tuning {:.5}  lr {:.0e}",
        e.epoch, e.train_loss, e.tuning_loss, e.lr
    )
}

/// Bytes of every frozen tensor compared before and after fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeCheck {
    pub frozen_tensors: usize,
    pub trainable_parameters: usize,
    pub identical: bool,
}

fn frozen_state(model: &EcgModel) -> Vec<(String, Vec<u64>)> {
    let mut out = Vec::new();
    model.visit("", &mut |name, s| {
        let t = match s {
            StateRef::Param(p) if p.frozen => &p.value,
            StateRef::Buffer(b) => b,
            _ => return,
        };
        out.push((name.to_string(), t.data().iter().map(|v| v.to_bits()).collect()));
    });
    out
}

pub struct Finetuned {
    pub model: EcgModel,
    pub checkpoint: Checkpoint,
    pub freeze: Option<FreezeCheck>,
}

/// Trains `task` on `dev`, from `source` with transfer surgery or from a fresh initialization.
pub fn finetune(
    cfg: &ExperimentConfig,
    task: Task,
    dev: &Cohort,
    source: Option<&Checkpoint>,
    seed: u64,
    label: &str,
    log: &mut dyn FnMut(&str),
) -> Result<Finetuned> {
    let train_cfg = TrainConfig {
        seed: derive_seed(seed, &[stream::FINETUNE]),
        ..cfg.finetune.clone()
    };
    let grid = match task {
        Task::Isd => Some(survival_grid(dev)?),
        _ => None,
    };
    let init_seed = derive_seed(seed, &[stream::FINETUNE, 1]);
    let mut model = match source {
        Some(ck) => freeze_for_transfer(ck, task.kind(), grid, init_seed)?,
        None => build_model_with(task.kind(), &cfg.encoder, cfg.heads, grid, init_seed)?,
    };
    let before = source.map(|_| frozen_state(&model));
    let checkpoint = train_with(&mut model, dev, &train_cfg, &mut |e| log(&epoch_line(label, e)))?;
    let freeze = before.map(|before| FreezeCheck {
        frozen_tensors: before.len(),
        trainable_parameters: model.trainable_count(),
        identical: frozen_state(&model) == before,
    });
    Ok(Finetuned {
        model,
        checkpoint,
        freeze,
    })
}

/// Survival curves of the evaluated patients, one column per patient.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveTable {
    pub patient_ids: Vec<String>,
    pub times: Vec<f64>,
    /// `values[j][i]`: survival of patient `i` at `times[j]`.
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Headline {
    pub metric: String,
    pub value: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
}

/// Contents of an evaluation report file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub task: Task,
    pub n_eval: usize,
    pub headline: Headline,
    pub metrics: MetricsReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub freeze_check: Option<FreezeCheck>,
}

pub struct Evaluation {
    pub report: EvaluationReport,
    pub curves: Option<CurveTable>,
    pub labels: Vec<SurvivalLabel>,
}

const EVAL_BATCH: usize = 64;

fn selection(task: Task) -> EvalSelection {
    match task {
        Task::Diagnosis => EvalSelection::Diagnosis,
        Task::Mortality30 | Task::Isd => EvalSelection::Mortality,
    }
}

/// Scores the selected holdout ECGs and computes the metric panel.
pub fn evaluate(
    cfg: &ExperimentConfig,
    task: Task,
    model: &mut EcgModel,
    holdout: &Cohort,
    seed: u64,
) -> Result<Evaluation> {
    if Task::from_kind(model.kind) != Some(task) {
        return Err(CliError::Usage(format!(
            "checkpoint holds a {} model, task is {}",
            model.kind.name(),
            task.name()
        )));
    }
    let chosen = select_eval_ecgs(holdout, selection(task), derive_seed(seed, &[stream::EVALUATE]))?;
    let opts = ReportOptions {
        replicates: cfg.evaluation.replicates,
        seed: derive_seed(seed, &[stream::EVALUATE, 1]),
        threshold: cfg.evaluation.threshold,
        l1_mean: cfg.evaluation.l1_mean,
    };
    let mut scores = Vec::with_capacity(chosen.len());
    let mut curves = Vec::new();
    let mut ids = Vec::with_capacity(chosen.len());
    let mut metas = Vec::with_capacity(chosen.len());
    for batch in chosen.chunks(EVAL_BATCH) {
        let records: Vec<EcgRecord> = holdout.records(batch)?;
        let refs: Vec<&EcgRecord> = records.iter().collect();
        match task {
            Task::Isd => curves.extend(model.isd_forward(&refs)?.1),
            _ => scores.extend(model.classify(&refs)?),
        }
        for r in records {
            ids.push(r.meta.patient_id.clone());
            metas.push(r.meta);
        }
    }
    let missing = |what: &str| CliError::Core(ets_core::Error::Data(format!("evaluation records lack {what}")));
    let (metrics, curve_table, labels) = match task {
        Task::Isd => {
            let labels: Vec<SurvivalLabel> = metas
                .iter()
                .map(|m| m.survival.ok_or_else(|| missing("survival labels")))
                .collect::<Result<_>>()?;
            let metrics = survival_report(&curves, &labels, &opts)?;
            let times: Vec<f64> = curves.first().map(|c| c.times.clone()).unwrap_or_default();
            let values = (0..times.len()).map(|j| curves.iter().map(|c| c.values[j]).collect()).collect();
            let table = CurveTable {
                patient_ids: ids,
                times,
                values,
            };
            (metrics, Some(table), labels)
        }
        _ => {
            let y: Vec<bool> = metas
                .iter()
                .map(|m| match task {
                    Task::Diagnosis => m.label_covid.ok_or_else(|| missing("diagnosis labels")),
                    _ => m.died_within(30.0).ok_or_else(|| missing("survival labels")),
                })
                .collect::<Result<_>>()?;
            let eval = BinaryEval::with_threshold(scores, y, cfg.evaluation.threshold)?;
            (classification_report(&eval, &opts)?, None, Vec::new())
        }
    };
    let head = match task {
        Task::Isd => metrics.c_index,
        _ => metrics.auroc,
    }
    .unwrap_or_default();
    Ok(Evaluation {
        report: EvaluationReport {
            task,
            n_eval: chosen.len(),
            headline: headline(task, head),
            metrics,
            freeze_check: None,
        },
        curves: curve_table,
        labels,
    })
}

fn headline(task: Task, v: MetricValue) -> Headline {
    Headline {
        metric: task.metric_name().into(),
        value: v.point,
        ci_lo: v.ci_lo,
        ci_hi: v.ci_hi,
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn save_checkpoint_with_history(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    save_checkpoint(checkpoint, path)?;
    write_json(&history_path(path), &checkpoint.history)
}

/// `model.etsv` -> `model.history.json`.
pub fn history_path(checkpoint: &Path) -> std::path::PathBuf {
    checkpoint.with_extension("history.json")
}

/// Curves CSV: header `time,<patient ids>`, first row `t = 0` at survival 1.
pub fn curves_csv(table: &CurveTable) -> String {
    let mut out = String::from("time");
    for id in &table.patient_ids {
        out.push(',');
        out.push_str(id);
    }
    out.push('\n');
    let _ = write!(out, "0");
    for _ in &table.patient_ids {
        out.push_str(",1");
    }
    out.push('\n');
    for (t, row) in table.times.iter().zip(&table.values).skip_while(|(t, _)| **t == 0.0) {
        let _ = write!(out, "{t}");
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Kaplan-Meier CSV: `time,survival,at_risk,events`, starting at `t = 0`.
pub fn km_csv(labels: &[SurvivalLabel]) -> Result<String> {
    let times: Vec<f64> = labels.iter().map(|l| l.time).collect();
    let events: Vec<bool> = labels.iter().map(|l| !l.censored).collect();
    let km = ets_core::metrics::kaplan_meier(&times, &events)?;
    let mut out = String::from("time,survival,at_risk,events\n0,1,");
    let _ = writeln!(out, "{},0", labels.len());
    for i in 0..km.times.len() {
        let _ = writeln!(out, "{},{},{},{}", km.times[i], km.survival[i], km.at_risk[i], km.events[i]);
    }
    Ok(out)
}

/// Null-control cohort: no diagnosis signal.
pub fn null_spec(cfg: &ExperimentConfig) -> CohortSpec {
    CohortSpec {
        seed: derive_seed(cfg.seed, &[stream::NULL]),
        ..cfg.reproduce.null_cohort.clone()
    }
}
