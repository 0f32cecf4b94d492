//! Minibatch training with Adam, a single-drop plateau schedule, early
//! stopping on a patient-grouped tuning split, transfer surgery and
//! checkpoint persistence.

mod adam;
mod checkpoint;
mod loss;
mod schedule;

pub use adam::{adam_update, Adam, BETA1, BETA2, EPS};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, NamedTensor, TensorRole, CHECKPOINT_VERSION, MAGIC};
pub use loss::{bce_with_logits, mtlr_loss};
pub use schedule::{lr_schedule_update, PlateauSchedule, ScheduleStep};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{batch_inputs, build_model, EcgModel, EncoderConfig, Head, ModelKind, RecordMeta};
use crate::mtlr::{build_time_grid, encode_label, EncodedLabel, TimeGrid};
use crate::nn::{ForwardCtx, Module, Param, StateMut, StateRef};
use crate::rng::{derive_seed, rng_for};
use crate::synth::{patient_split_indices, Cohort};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Bce,
    MultilabelBce,
    MtlrNll,
}

impl LossKind {
    pub fn for_kind(kind: ModelKind) -> Self {
        match kind {
            ModelKind::SourceCodes { .. } => LossKind::MultilabelBce,
            k if k.is_survival() => LossKind::MtlrNll,
            _ => LossKind::Bce,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub floor_lr: f64,
    pub patience_lr: usize,
    pub patience_stop: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Defaults to the loss implied by the model kind.
    pub loss: Option<LossKind>,
    /// MTLR smoothness penalty `C`.
    pub mtlr_c: f64,
    /// Fraction of development patients held out for the tuning loss.
    pub tuning_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            initial_lr: 1e-3,
            floor_lr: 1e-6,
            patience_lr: 9,
            patience_stop: 9,
            batch_size: 64,
            max_epochs: 100,
            seed: 0,
            loss: None,
            mtlr_c: 1.0,
            tuning_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(format!("train config: {msg}")));
        if !(self.floor_lr > 0.0 && self.floor_lr <= self.initial_lr && self.initial_lr.is_finite()) {
            return bad("need 0 < floor_lr <= initial_lr");
        }
        if self.patience_lr == 0 || self.patience_stop == 0 {
            return bad("patience values must be >= 1");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be >= 1");
        }
        if !(self.mtlr_c >= 0.0 && self.mtlr_c.is_finite()) {
            return bad("mtlr_c must be >= 0");
        }
        if !(self.tuning_fraction > 0.0 && self.tuning_fraction < 1.0) {
            return bad("tuning_fraction outside (0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub tuning_loss: f64,
    /// Rate used during this epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

/// Per-record supervision for one model kind.
#[derive(Debug, Clone)]
pub enum Targets {
    /// `[N, K]` zero/one targets.
    Binary(Tensor),
    Survival(Vec<EncodedLabel>),
}

impl Targets {
    fn select(&self, rows: &[usize]) -> Result<Targets> {
        Ok(match self {
            Targets::Binary(t) => {
                let k = t.dim(1);
                let data = rows.iter().flat_map(|&r| t.row(r).iter().copied()).collect();
                Targets::Binary(Tensor::new(vec![rows.len(), k], data)?)
            }
            Targets::Survival(l) => Targets::Survival(rows.iter().map(|&r| l[r]).collect()),
        })
    }
}

fn missing(kind: ModelKind, meta: &RecordMeta, what: &str) -> Error {
    Error::Data(format!(
        "{} training needs {what}, record of patient {} has none",
        kind.name(),
        meta.patient_id
    ))
}

/// Extracts the targets of `kind` from record metadata.
pub fn targets_for<'a>(
    kind: ModelKind,
    metas: impl ExactSizeIterator<Item = &'a RecordMeta>,
    grid: Option<&TimeGrid>,
) -> Result<Targets> {
    let n = metas.len();
    match kind {
        ModelKind::Diagnosis => {
            let y = metas
                .map(|m| m.label_covid.map(f64::from).ok_or_else(|| missing(kind, m, "a diagnosis label")))
                .collect::<Result<Vec<_>>>()?;
            Ok(Targets::Binary(Tensor::new(vec![n, 1], y)?))
        }
        ModelKind::Mortality30 | ModelKind::SourceMortality => {
            let y = metas
                .map(|m| {
                    m.died_within(30.0)
                        .map(f64::from)
                        .ok_or_else(|| missing(kind, m, "a survival label"))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Targets::Binary(Tensor::new(vec![n, 1], y)?))
        }
        ModelKind::SourceCodes { labels } => {
            let mut y = Vec::with_capacity(n * labels);
            for m in metas {
                let codes = m
                    .source_labels
                    .as_ref()
                    .filter(|c| c.len() >= labels)
                    .ok_or_else(|| missing(kind, m, &format!("{labels} source labels")))?;
                y.extend(codes[..labels].iter().map(|&b| f64::from(b)));
            }
            Ok(Targets::Binary(Tensor::new(vec![n, labels], y)?))
        }
        ModelKind::Isd | ModelKind::SourceSurvival => {
            let grid = grid.ok_or_else(|| Error::InvalidArgument(format!("{} targets need a time grid", kind.name())))?;
            let labels = metas
                .map(|m| {
                    m.survival
                        .map(|s| encode_label(&s, grid))
                        .ok_or_else(|| missing(kind, m, "a survival label"))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Targets::Survival(labels))
        }
    }
}

/// Time grid built from the survival labels of a cohort.
pub fn survival_grid(cohort: &Cohort) -> Result<TimeGrid> {
    let labels: Vec<_> = cohort
        .metas()
        .map(|m| m.survival.ok_or_else(|| missing(ModelKind::Isd, m, "a survival label")))
        .collect::<Result<_>>()?;
    let times: Vec<f64> = labels.iter().map(|l| l.time).collect();
    let censored: Vec<bool> = labels.iter().map(|l| l.censored).collect();
    build_time_grid(&times, &censored)
}

/// Where a batch enters the network.
enum Stage {
    /// Voltages and tabular inputs.
    Raw,
    /// Cached fused trunk output, one row per record.
    Fused(Tensor),
    /// Cached MTLR input features.
    Features(Tensor),
}

fn rows_of(t: &Tensor, rows: &[usize]) -> Result<Tensor> {
    let w = t.dim(1);
    let data = rows.iter().flat_map(|&r| t.row(r).iter().copied()).collect();
    Tensor::new(vec![rows.len(), w], data)
}

/// Copies of every parameter value and buffer, in visit order.
pub fn snapshot(model: &dyn Module) -> Vec<Tensor> {
    let mut out = Vec::new();
    model.visit("", &mut |_, s| {
        out.push(match s {
            StateRef::Param(p) => p.value.clone(),
            StateRef::Buffer(b) => b.clone(),
        })
    });
    out
}

pub fn restore(model: &mut dyn Module, state: &[Tensor]) {
    let mut it = state.iter();
    model.visit_mut("", &mut |_, s| {
        let src = it.next().expect("snapshot of this model");
        match s {
            StateMut::Param(p) => p.value.data_mut().copy_from_slice(src.data()),
            StateMut::Buffer(b) => b.data_mut().copy_from_slice(src.data()),
        }
    });
}

struct Runner<'a> {
    cohort: &'a Cohort,
    /// Cohort indices of the records being fed.
    records: &'a [usize],
    targets: &'a Targets,
    stage: &'a Stage,
    loss: LossKind,
    c: f64,
    n_train: usize,
}

impl Runner<'_> {
    /// Loss of the batch at positions `rows` (into `records`); accumulates
    /// gradients when `backward` is set.
    fn batch(&self, model: &mut EcgModel, rows: &[usize], ctx: &mut ForwardCtx<'_>, backward: bool) -> Result<f64> {
        let targets = self.targets.select(rows)?;
        let out = match self.stage {
            Stage::Raw => {
                let idx: Vec<usize> = rows.iter().map(|&r| self.records[r]).collect();
                let recs = self.cohort.records(&idx)?;
                let refs: Vec<_> = recs.iter().collect();
                let (v, t) = batch_inputs(&refs)?;
                model.forward(&v, &t, ctx)?
            }
            Stage::Fused(f) => model.head_forward(&rows_of(f, rows)?, ctx)?,
            Stage::Features(z) => rows_of(z, rows)?,
        };
        let (loss, grad_out) = match (&targets, self.loss) {
            (Targets::Binary(y), LossKind::Bce | LossKind::MultilabelBce) => bce_with_logits(&out, y)?,
            (Targets::Survival(labels), LossKind::MtlrNll) => {
                let theta = &model.isd_head()?.mtlr.value;
                let (loss, dtheta, dz) = mtlr_loss(theta, &out, labels, self.c, self.n_train)?;
                if backward {
                    if let Head::Isd(h) = &mut model.head {
                        h.mtlr.accumulate(dtheta.data());
                    }
                }
                (loss, dz)
            }
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "loss {:?} does not fit a {} model",
                    self.loss,
                    model.kind.name()
                )))
            }
        };
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                location: format!("{:?} loss of a {}-record batch", self.loss, rows.len()),
            });
        }
        if backward && !matches!(self.stage, Stage::Features(_)) {
            let g = model.head_backward(&grad_out)?;
            if matches!(self.stage, Stage::Raw) && !model.trunk.all_frozen() {
                model.trunk_backward(&g)?;
            }
        }
        Ok(loss)
    }

    /// Mean loss over all records in evaluation mode.
    fn evaluate(&self, model: &mut EcgModel, batch_size: usize) -> Result<f64> {
        let rows: Vec<usize> = (0..self.records.len()).collect();
        let mut total = 0.0;
        for chunk in rows.chunks(batch_size) {
            total += chunk.len() as f64 * self.batch(model, chunk, &mut ForwardCtx::eval(), false)?;
        }
        Ok(total / rows.len() as f64)
    }
}

/// Runs the network up to the first trainable layer once, in evaluation mode.
fn cache_stage(model: &mut EcgModel, cohort: &Cohort, records: &[usize], batch_size: usize) -> Result<Stage> {
    if !model.trunk.all_frozen() {
        return Ok(Stage::Raw);
    }
    let features_frozen = matches!(&model.head, Head::Isd(h) if h.features_frozen());
    let mut rows = Vec::with_capacity(records.len());
    let mut width = 0;
    for chunk in records.chunks(batch_size) {
        let recs = cohort.records(chunk)?;
        let refs: Vec<_> = recs.iter().collect();
        let (v, t) = batch_inputs(&refs)?;
        let mut ctx = ForwardCtx::eval();
        let mut out = model.fused(&v, &t, &mut ctx)?;
        if features_frozen {
            out = model.head_forward(&out, &mut ctx)?;
        }
        width = out.dim(1);
        rows.extend(out.into_data());
    }
    let t = Tensor::new(vec![records.len(), width], rows)?;
    Ok(if features_frozen { Stage::Features(t) } else { Stage::Fused(t) })
}

pub fn train(model: &mut EcgModel, dev: &Cohort, config: &TrainConfig) -> Result<Checkpoint> {
    train_with(model, dev, config, &mut |_| {})
}

/// Trains on a patient-grouped split of `dev`, keeping the parameters of the
/// epoch with the lowest tuning loss; `observer` sees every finished epoch.
pub fn train_with(
    model: &mut EcgModel,
    dev: &Cohort,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<Checkpoint> {
    config.validate()?;
    let loss = config.loss.unwrap_or(LossKind::for_kind(model.kind));
    if loss != LossKind::for_kind(model.kind) && !(loss == LossKind::MultilabelBce && model.kind.outputs().is_some()) {
        return Err(Error::InvalidArgument(format!(
            "loss {loss:?} does not fit a {} model",
            model.kind.name()
        )));
    }
    if model.trainable_count() == 0 {
        return Err(Error::State("model has no trainable parameters".into()));
    }
    let (tuning_part, train_part) =
        patient_split_indices(dev, config.tuning_fraction, derive_seed(config.seed, &[0x7e57]))?;
    let grid = model.grid().cloned();
    let targets_of = |idx: &[usize]| targets_for(model.kind, idx.iter().map(|&i| dev.meta(i)), grid.as_ref());
    let train_targets = targets_of(&train_part)?;
    let tuning_targets = targets_of(&tuning_part)?;

    let train_stage = cache_stage(model, dev, &train_part, config.batch_size)?;
    let tuning_stage = cache_stage(model, dev, &tuning_part, config.batch_size)?;
    let runner = |records, targets, stage| Runner {
        cohort: dev,
        records,
        targets,
        stage,
        loss,
        c: config.mtlr_c,
        n_train: train_part.len(),
    };
    let train_run = runner(&train_part, &train_targets, &train_stage);
    let tuning_run = runner(&tuning_part, &tuning_targets, &tuning_stage);

    let mut adam = Adam::new();
    let mut schedule = PlateauSchedule::new(config.initial_lr, config.floor_lr, config.patience_lr, config.patience_stop);
    let mut history = History::default();
    let mut best = snapshot(model);
    let mut order: Vec<usize> = (0..train_part.len()).collect();

    for epoch in 0..config.max_epochs {
        let lr = schedule.lr;
        order.shuffle(&mut rng_for(config.seed, &[0x5f1e, epoch as u64]));
        let mut total = 0.0;
        for (b, rows) in order.chunks(config.batch_size).enumerate() {
            let mut rng = rng_for(config.seed, &[0xd0, epoch as u64, b as u64]);
            model.zero_grad();
            let l = train_run.batch(model, rows, &mut ForwardCtx::train(&mut rng), true)?;
            adam.step(model, lr)?;
            total += l * rows.len() as f64;
        }
        let tuning_loss = tuning_run.evaluate(model, config.batch_size)?;
        let record = EpochRecord {
            epoch,
            train_loss: total / order.len() as f64,
            tuning_loss,
            lr,
        };
        observer(&record);
        history.epochs.push(record);
        let step = schedule.update(tuning_loss);
        if step.improved {
            best = snapshot(model);
            history.best_epoch = Some(epoch);
        }
        if step.stop {
            history.stopped_early = true;
            break;
        }
    }
    restore(model, &best);
    model.zero_grad();
    Ok(Checkpoint::from_model(model, history))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceTask {
    /// Independent sigmoid per source code.
    MultilabelCodes,
    /// 30-day all-cause mortality.
    AllcauseMortality,
    /// All-cause survival with an MTLR head.
    AllcauseSurvival,
}

impl SourceTask {
    pub fn kind(self, labels: usize) -> ModelKind {
        match self {
            SourceTask::MultilabelCodes => ModelKind::SourceCodes { labels },
            SourceTask::AllcauseMortality => ModelKind::SourceMortality,
            SourceTask::AllcauseSurvival => ModelKind::SourceSurvival,
        }
    }

    /// Source task whose representation a target task starts from.
    pub fn for_target(target: ModelKind) -> Result<Self> {
        match target {
            ModelKind::Diagnosis => Ok(SourceTask::MultilabelCodes),
            ModelKind::Mortality30 => Ok(SourceTask::AllcauseMortality),
            ModelKind::Isd => Ok(SourceTask::AllcauseSurvival),
            k => Err(Error::InvalidArgument(format!("{} is not a target task", k.name()))),
        }
    }
}

/// Builds and trains a source-task model on `source`.
pub fn pretrain_source(
    source: &Cohort,
    task: SourceTask,
    encoder: &EncoderConfig,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<(EcgModel, Checkpoint)> {
    if source.is_empty() {
        return Err(Error::InvalidArgument("empty source cohort".into()));
    }
    let (kind, grid) = match task {
        SourceTask::MultilabelCodes => {
            let k = source
                .meta(0)
                .source_labels
                .as_ref()
                .map(Vec::len)
                .filter(|&k| k > 0)
                .ok_or_else(|| missing(ModelKind::SourceCodes { labels: 0 }, source.meta(0), "source labels"))?;
            (task.kind(k), None)
        }
        SourceTask::AllcauseMortality => (task.kind(0), None),
        SourceTask::AllcauseSurvival => (task.kind(0), Some(survival_grid(source)?)),
    };
    let mut model = build_model(kind, encoder, grid, derive_seed(config.seed, &[0x50c]))?;
    let checkpoint = train_with(&mut model, source, config, observer)?;
    Ok((model, checkpoint))
}

/// Prepares a pretrained model for fine-tuning on `target`.
///
/// Classification targets: the source head is dropped, every pretrained
/// parameter is frozen and a new `FC -> ReLU -> FC` head is the only trainable
/// part. ISD targets: everything except the MTLR weights is frozen, and the
/// MTLR block is re-initialized to zeros on `grid` (or the source grid).
pub fn freeze_for_transfer(
    checkpoint: &Checkpoint,
    target: ModelKind,
    grid: Option<TimeGrid>,
    seed: u64,
) -> Result<EcgModel> {
    let incompatible = || {
        Error::InvalidArgument(format!(
            "cannot transfer a {} checkpoint to {}",
            checkpoint.kind.name(),
            target.name()
        ))
    };
    let mut model = checkpoint.to_model()?;
    match target {
        ModelKind::Diagnosis | ModelKind::Mortality30 => {
            if checkpoint.kind.outputs().is_none() {
                return Err(incompatible());
            }
            model.set_frozen(true);
            let mut rng = rng_for(seed, &[0x4ead]);
            model.head = Head::transfer(model.trunk.width(), model.head_config.transfer_hidden, &mut rng);
        }
        ModelKind::Isd => {
            if !checkpoint.kind.is_survival() {
                return Err(incompatible());
            }
            model.set_frozen(true);
            let Head::Isd(h) = &mut model.head else {
                return Err(incompatible());
            };
            if let Some(g) = grid {
                h.grid = g;
            }
            h.mtlr = Param::new(Tensor::zeros(&[h.grid.len(), h.hidden() + 1]));
        }
        _ => return Err(incompatible()),
    }
    model.kind = target;
    Ok(model)
}
