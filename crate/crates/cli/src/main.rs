use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ets_cli::commands;
use ets_cli::config::{ExperimentConfig, Task};
use ets_cli::error::CliError;
use ets_core::synth::VoltageStore;

#[derive(Parser)]
#[command(name = "ets", version, about = "ECG transfer-learning experiments on synthetic cohorts")]
struct Cli {
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the config seed.
    #[arg(long, global = true, env = "ETS_SEED")]
    seed: Option<u64>,

    /// Caps worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Diagnosis,
    Mortality30,
    Isd,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Diagnosis => Task::Diagnosis,
            TaskArg::Mortality30 => Task::Mortality30,
            TaskArg::Isd => Task::Isd,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StoreArg {
    File,
    Synthetic,
}

#[derive(Subcommand)]
enum Command {
    /// Writes a synthetic cohort container.
    Generate {
        /// Writes the pretraining cohort instead of the target cohort.
        #[arg(long)]
        source: bool,
        #[arg(long, value_enum, default_value = "file")]
        store: StoreArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Trains the source model of a task on the source cohort.
    Pretrain {
        #[arg(long, value_enum)]
        task: Option<TaskArg>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Trains a target model, from a source checkpoint or from scratch.
    Finetune {
        #[arg(long, value_enum)]
        task: Option<TaskArg>,
        #[arg(long)]
        source_checkpoint: Option<PathBuf>,
        /// Trains from a fresh initialization.
        #[arg(long)]
        no_transfer: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Scores a fine-tuned checkpoint on the holdout patients.
    Evaluate {
        #[arg(long, value_enum)]
        task: Option<TaskArg>,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Kaplan-Meier curve of the target cohort as CSV.
    Km {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Runs every stage for every configured task and seed.
    Reproduce {
        #[arg(long, default_value = "runs/reproduce")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot size the worker pool: {e}")))?;
    }
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    let log = &mut |line: &str| eprintln!("{line}");
    match cli.command {
        Command::Generate { source, store, out } => {
            if let Some(out) = out {
                if source {
                    cfg.paths.source_cohort = out;
                } else {
                    cfg.paths.cohort = out;
                }
            }
            let store = match store {
                StoreArg::File => VoltageStore::File,
                StoreArg::Synthetic => VoltageStore::Synthetic,
            };
            commands::generate(&cfg, source, store, log)?;
        }
        Command::Pretrain { task, out } => {
            let task = task.map_or(cfg.task, Task::from);
            commands::pretrain(&cfg, task, out.as_deref(), log)?;
        }
        Command::Finetune {
            task,
            source_checkpoint,
            no_transfer,
            out,
        } => {
            let task = task.map_or(cfg.task, Task::from);
            if no_transfer {
                cfg.transfer = false;
            }
            commands::finetune(&cfg, task, source_checkpoint.as_deref(), out.as_deref(), log)?;
        }
        Command::Evaluate { task, checkpoint } => {
            let task = task.map_or(cfg.task, Task::from);
            commands::evaluate(&cfg, task, &checkpoint, log)?;
        }
        Command::Km { out } => {
            commands::km(&cfg, out.as_deref(), log)?;
        }
        Command::Reproduce { out } => {
            let summary = commands::reproduce(&cfg, &out, log)?;
            for t in &summary.tasks {
                println!(
                    "{}: transfer {:.3}  scratch {:.3}  gap {:+.3}",
                    t.task.name(),
                    t.transfer_mean,
                    t.scratch_mean,
                    t.gap
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
