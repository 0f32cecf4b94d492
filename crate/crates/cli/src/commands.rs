//! The subcommands. Each returns the lines it prints so tests can inspect them.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ets_core::synth::{Cohort, VoltageStore, VOLTAGES_FILE};
use ets_core::training::{load_checkpoint, Checkpoint};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, Task};
use crate::error::CliError;
use crate::pipeline::{self, Evaluation, FreezeCheck, Result};

/// Progress and summary lines go through this sink.
pub type Log<'a> = &'a mut dyn FnMut(&str);

pub fn source_checkpoint_path(cfg: &ExperimentConfig, task: Task) -> PathBuf {
    cfg.paths.checkpoints.join(format!("{}.etsv", task.source_task_name()))
}

pub fn arm_name(transfer: bool) -> &'static str {
    if transfer {
        "transfer"
    } else {
        "scratch"
    }
}

pub fn target_checkpoint_path(cfg: &ExperimentConfig, task: Task, transfer: bool) -> PathBuf {
    cfg.paths
        .checkpoints
        .join(format!("{}_{}.etsv", task.name(), arm_name(transfer)))
}

fn freeze_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("freeze.json")
}

fn load_cohort(dir: &Path, what: &str) -> Result<Cohort> {
    if !dir.join(ets_core::synth::MANIFEST_FILE).exists() {
        return Err(CliError::Core(ets_core::Error::Data(format!(
            "{what} cohort not found at {} (run `ets generate{}` first)",
            dir.display(),
            if what == "source" { " --source" } else { "" }
        ))));
    }
    Ok(Cohort::load(dir)?)
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let mut hex = String::with_capacity(64);
    for b in Sha256::digest(&bytes).iter() {
        let _ = write!(hex, "{b:02x}");
    }
    Ok(hex)
}

/// Writes the target cohort, or the source cohort with `source`.
pub fn generate(cfg: &ExperimentConfig, source: bool, store: VoltageStore, log: Log<'_>) -> Result<()> {
    let (spec, dir) = if source {
        (pipeline::source_spec(cfg), &cfg.paths.source_cohort)
    } else {
        (pipeline::target_spec(cfg), &cfg.paths.cohort)
    };
    let cohort = Cohort::generate(&spec)?;
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    cohort.save(dir, store)?;
    let patients = cohort.patient_ids().len();
    log(&format!(
        "wrote {} cohort to {}: {patients} patients, {} ECGs",
        if source { "source" } else { "target" },
        dir.display(),
        cohort.len()
    ));
    let expected = if spec.positive_only { 1.0 } else { spec.prevalence };
    log(&format!(
        "positive patients {:.4} (configured {:.4})",
        cohort.positive_patient_fraction(),
        expected
    ));
    if store == VoltageStore::File {
        log(&format!("voltages.bin sha256 {}", sha256_file(&dir.join(VOLTAGES_FILE))?));
    }
    Ok(())
}

pub fn pretrain(cfg: &ExperimentConfig, task: Task, out: Option<&Path>, log: Log<'_>) -> Result<PathBuf> {
    let source = pipeline::prepare(load_cohort(&cfg.paths.source_cohort, "source")?, cfg)?;
    let checkpoint = pipeline::pretrain(cfg, task, &source, log)?;
    let path = out.map_or_else(|| source_checkpoint_path(cfg, task), Path::to_path_buf);
    pipeline::save_checkpoint_with_history(&checkpoint, &path)?;
    log(&format!(
        "wrote {} (best epoch {:?}, {} epochs)",
        path.display(),
        checkpoint.history.best_epoch,
        checkpoint.history.epochs.len()
    ));
    Ok(path)
}

/// Fine-tunes on the development side of the target cohort.
pub fn finetune(
    cfg: &ExperimentConfig,
    task: Task,
    source_checkpoint: Option<&Path>,
    out: Option<&Path>,
    log: Log<'_>,
) -> Result<PathBuf> {
    let source = if cfg.transfer {
        let path = source_checkpoint.map_or_else(|| source_checkpoint_path(cfg, task), Path::to_path_buf);
        Some(load_checkpoint(&path)?)
    } else {
        if let Some(p) = source_checkpoint {
            log(&format!(
                "warning: transfer is off; ignoring source checkpoint {}",
                p.display()
            ));
        }
        None
    };
    let cohort = pipeline::prepare(load_cohort(&cfg.paths.cohort, "target")?, cfg)?;
    let (dev, _) = pipeline::split(cfg, &cohort, pipeline::split_seed(cfg, None))?;
    let label = format!("{} {}", task.name(), arm_name(cfg.transfer));
    let tuned = pipeline::finetune(cfg, task, &dev, source.as_ref(), cfg.seed, &label, log)?;
    let path = out.map_or_else(|| target_checkpoint_path(cfg, task, cfg.transfer), Path::to_path_buf);
    pipeline::save_checkpoint_with_history(&tuned.checkpoint, &path)?;
    if let Some(check) = tuned.freeze {
        log(&freeze_line(&check));
        pipeline::write_json(&freeze_path(&path), &check)?;
        if !check.identical {
            return Err(CliError::Core(ets_core::Error::State(
                "frozen parameters changed during fine-tuning".into(),
            )));
        }
    } else if freeze_path(&path).exists() {
        std::fs::remove_file(freeze_path(&path)).map_err(|e| CliError::io(freeze_path(&path), e))?;
    }
    log(&format!("wrote {}", path.display()));
    Ok(path)
}

fn freeze_line(check: &FreezeCheck) -> String {
    format!(
        "freeze check: {} frozen tensors {}, {} trainable parameters",
        check.frozen_tensors,
        if check.identical { "bit-identical" } else { "CHANGED" },
        check.trainable_parameters
    )
}

/// Files written by one evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvaluationFiles {
    pub report: PathBuf,
    pub curves: Option<PathBuf>,
    pub km: Option<PathBuf>,
}

fn write_evaluation(eval: &Evaluation, dir: &Path, stem: &str) -> Result<EvaluationFiles> {
    let report = dir.join(format!("{stem}.json"));
    pipeline::write_json(&report, &eval.report)?;
    let (mut curves, mut km) = (None, None);
    if let Some(table) = &eval.curves {
        let path = dir.join(format!("{stem}.curves.csv"));
        pipeline::write_text(&path, &pipeline::curves_csv(table))?;
        curves = Some(path);
        let path = dir.join(format!("{stem}.km.csv"));
        pipeline::write_text(&path, &pipeline::km_csv(&eval.labels)?)?;
        km = Some(path);
    }
    Ok(EvaluationFiles { report, curves, km })
}

/// Evaluates a fine-tuned checkpoint on the holdout side of the target cohort.
pub fn evaluate(cfg: &ExperimentConfig, task: Task, checkpoint: &Path, log: Log<'_>) -> Result<EvaluationFiles> {
    let ck = load_checkpoint(checkpoint)?;
    let mut model = ck.to_model()?;
    let cohort = load_cohort(&cfg.paths.cohort, "target")?;
    let (_, holdout) = pipeline::split(cfg, &cohort, pipeline::split_seed(cfg, None))?;
    let mut eval = pipeline::evaluate(cfg, task, &mut model, &holdout, cfg.seed)?;
    let freeze = freeze_path(checkpoint);
    if freeze.exists() {
        let text = std::fs::read_to_string(&freeze).map_err(|e| CliError::io(&freeze, e))?;
        eval.report.freeze_check = Some(serde_json::from_str(&text)?);
    }
    let stem = checkpoint
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("report")
        .to_string();
    let files = write_evaluation(&eval, &cfg.paths.reports, &stem)?;
    log(&headline_line(task, &eval));
    log(&format!("wrote {}", files.report.display()));
    Ok(files)
}

fn headline_line(task: Task, eval: &Evaluation) -> String {
    let h = &eval.report.headline;
    let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
    format!(
        "{} {} {} [{}, {}] on {} ECGs",
        task.name(),
        h.metric,
        fmt(h.value),
        fmt(h.ci_lo),
        fmt(h.ci_hi),
        eval.report.n_eval
    )
}

/// Kaplan-Meier estimate over the target cohort, one label per patient.
pub fn km(cfg: &ExperimentConfig, out: Option<&Path>, log: Log<'_>) -> Result<PathBuf> {
    let cohort = load_cohort(&cfg.paths.cohort, "target")?;
    let mut seen = std::collections::HashSet::new();
    let mut labels = Vec::new();
    for m in cohort.metas() {
        if seen.insert(m.patient_id.as_str()) {
            labels.push(m.survival.ok_or_else(|| {
                CliError::Core(ets_core::Error::Data(format!("record of {} has no survival label", m.patient_id)))
            })?);
        }
    }
    let path = out.map_or_else(|| cfg.paths.reports.join("cohort.km.csv"), Path::to_path_buf);
    pipeline::write_text(&path, &pipeline::km_csv(&labels)?)?;
    log(&format!("wrote {} ({} patients)", path.display(), labels.len()));
    Ok(path)
}

/// One row of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub task: Task,
    pub arm: String,
    pub seed: u64,
    pub metric: String,
    pub value: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub n_eval: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task: Task,
    pub metric: String,
    pub transfer_mean: f64,
    pub scratch_mean: f64,
    pub gap: f64,
    pub seeds: usize,
    pub freeze_identical: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullSummary {
    pub transfer_auroc: f64,
    pub scratch_auroc: f64,
    pub n_eval: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub seed: u64,
    pub tasks: Vec<TaskSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub null_control: Option<NullSummary>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn row(task: Task, arm: &str, seed: u64, eval: &Evaluation) -> ResultRow {
    let h = &eval.report.headline;
    ResultRow {
        task,
        arm: arm.into(),
        seed,
        metric: h.metric.clone(),
        value: h.value,
        ci_lo: h.ci_lo,
        ci_hi: h.ci_hi,
        n_eval: eval.report.n_eval,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v}"))
}

pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from("task,arm,seed,metric,value,ci_lo,ci_hi,n_eval\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.task.name(),
            r.arm,
            r.seed,
            r.metric,
            opt(r.value),
            opt(r.ci_lo),
            opt(r.ci_hi),
            r.n_eval
        );
    }
    out
}

pub fn summary_markdown(summary: &Summary, rows: &[ResultRow]) -> String {
    let cell = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"));
    let mut out = String::from("| task | arm | seed | metric | value | 95% CI |\n|---|---|---|---|---|---|\n");
    for r in rows {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | [{}, {}] |",
            r.task.name(),
            r.arm,
            r.seed,
            r.metric,
            cell(r.value),
            cell(r.ci_lo),
            cell(r.ci_hi)
        );
    }
    out.push_str("\n| task | metric | transfer mean | scratch mean | gap |\n|---|---|---|---|---|\n");
    for t in &summary.tasks {
        let _ = writeln!(
            out,
            "| {} | {} | {:.3} | {:.3} | {:+.3} |",
            t.task.name(),
            t.metric,
            t.transfer_mean,
            t.scratch_mean,
            t.gap
        );
    }
    if let Some(n) = &summary.null_control {
        let _ = writeln!(
            out,
            "\nNull control (no diagnosis signal, {} ECGs): transfer AUROC {:.3}, scratch AUROC {:.3}",
            n.n_eval, n.transfer_auroc, n.scratch_auroc
        );
    }
    out
}

/// Pretrains once per task, then fine-tunes and evaluates both arms per seed.
///
/// Everything lands under `out`; artifacts of finished stages stay on disk if
/// a later stage fails.
pub fn reproduce(cfg: &ExperimentConfig, out: &Path, log: Log<'_>) -> Result<Summary> {
    let checkpoints = out.join("checkpoints");
    let reports = out.join("reports");
    let source_dir = out.join("source_cohort");
    let source = Cohort::generate(&pipeline::source_spec(cfg))?;
    std::fs::create_dir_all(&source_dir).map_err(|e| CliError::io(&source_dir, e))?;
    source.save(&source_dir, VoltageStore::Synthetic)?;
    log(&format!("source cohort: {} ECGs", source.len()));

    let mut rows = Vec::new();
    let mut tasks = Vec::new();
    let mut sources: Vec<(Task, Checkpoint)> = Vec::new();
    for &task in &cfg.reproduce.tasks {
        let ck = pipeline::pretrain(cfg, task, &source, log)?;
        pipeline::save_checkpoint_with_history(&ck, &checkpoints.join(format!("{}.etsv", task.source_task_name())))?;
        let mut freeze_identical = true;
        let mut task_rows = Vec::new();
        for &rep in &cfg.reproduce.seeds {
            let cohort = pipeline::prepare(Cohort::generate(&pipeline::repetition_spec(cfg, task, rep))?, cfg)?;
            let (dev, holdout) = pipeline::split(cfg, &cohort, pipeline::split_seed(cfg, Some(rep)))?;
            let run_seed = ets_core::rng::derive_seed(cfg.seed, &[0x5eed, rep]);
            for transfer in [true, false] {
                let arm = arm_name(transfer);
                let label = format!("{} {arm} seed {rep}", task.name());
                let source_ck = transfer.then_some(&ck);
                let mut tuned = pipeline::finetune(cfg, task, &dev, source_ck, run_seed, &label, log)?;
                let stem = format!("{}_{arm}_seed{rep}", task.name());
                pipeline::save_checkpoint_with_history(&tuned.checkpoint, &checkpoints.join(format!("{stem}.etsv")))?;
                let mut eval = pipeline::evaluate(cfg, task, &mut tuned.model, &holdout, run_seed)?;
                if let Some(check) = tuned.freeze {
                    log(&freeze_line(&check));
                    freeze_identical &= check.identical;
                    eval.report.freeze_check = Some(check);
                }
                write_evaluation(&eval, &reports, &stem)?;
                log(&headline_line(task, &eval));
                task_rows.push(row(task, arm, rep, &eval));
            }
        }
        let arm_mean = |arm: &str| mean(task_rows.iter().filter(|r| r.arm == arm).filter_map(|r| r.value));
        let (t, s) = (arm_mean("transfer"), arm_mean("scratch"));
        tasks.push(TaskSummary {
            task,
            metric: task.metric_name().into(),
            transfer_mean: t,
            scratch_mean: s,
            gap: t - s,
            seeds: cfg.reproduce.seeds.len(),
            freeze_identical,
        });
        rows.extend(task_rows);
        sources.push((task, ck));
    }

    let null_control = match sources.iter().find(|(t, _)| *t == Task::Diagnosis) {
        Some((_, ck)) if cfg.reproduce.null_control => Some(null_control(cfg, ck, &reports, log)?),
        _ => None,
    };
    let summary = Summary {
        seed: cfg.seed,
        tasks,
        null_control,
    };
    pipeline::write_text(&out.join("results.csv"), &results_csv(&rows))?;
    pipeline::write_json(&out.join("summary.json"), &summary)?;
    pipeline::write_text(&out.join("summary.md"), &summary_markdown(&summary, &rows))?;
    log(&format!("wrote {}", out.join("summary.md").display()));
    Ok(summary)
}

fn null_control(cfg: &ExperimentConfig, source: &Checkpoint, reports: &Path, log: Log<'_>) -> Result<NullSummary> {
    let cohort = pipeline::prepare(Cohort::generate(&pipeline::null_spec(cfg))?, cfg)?;
    let (dev, holdout) = pipeline::split(cfg, &cohort, pipeline::split_seed(cfg, None))?;
    let seed = ets_core::rng::derive_seed(cfg.seed, &[0x0c]);
    let mut auroc = [0.0; 2];
    let mut n_eval = 0;
    for (i, transfer) in [true, false].into_iter().enumerate() {
        let arm = arm_name(transfer);
        let label = format!("null {arm}");
        let mut tuned = pipeline::finetune(cfg, Task::Diagnosis, &dev, transfer.then_some(source), seed, &label, log)?;
        let eval = pipeline::evaluate(cfg, Task::Diagnosis, &mut tuned.model, &holdout, seed)?;
        write_evaluation(&eval, reports, &format!("null_{arm}"))?;
        log(&format!("null control {}", headline_line(Task::Diagnosis, &eval)));
        auroc[i] = eval.report.headline.value.unwrap_or(f64::NAN);
        n_eval = eval.report.n_eval;
    }
    Ok(NullSummary {
        transfer_auroc: auroc[0],
        scratch_auroc: auroc[1],
        n_eval,
    })
}
