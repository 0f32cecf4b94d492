//! The ECG network: residual encoder plus tabular branch, fused and fed to a
//! sigmoid head or an ISD head (three dense layers and an MTLR block).

mod record;

pub use record::{preprocess, EcgRecord, RecordMeta, INPUT_LEN, LEADS, RAW_LEN, SAMPLE_RATE_HZ, TABULAR_FEATURES};

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::mtlr::{survival_curve, SurvivalCurve, TimeGrid};
use crate::nn::{
    join, same_padding, BatchNorm1d, Conv1d, Dense, Dropout, ForwardCtx, GlobalAvgPool, Layer, Mode, Module, Param,
    Relu, ResidualBlock, SkipKind, StateMut, StateRef,
};
use crate::rng::{rng_for, Rng};
use crate::tensor::Tensor;

/// Width of the tabular (age, sex) branch.
pub const TABULAR_UNITS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPlan {
    pub channels: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub stem_channels: usize,
    pub stem_stride: usize,
    /// Exactly four residual blocks.
    pub blocks: Vec<BlockPlan>,
    pub kernel: usize,
    pub dropout: f64,
    /// Width of the dense layer after global average pooling.
    pub dense_units: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        let plan = [(16, 2), (32, 2), (32, 2), (64, 2)];
        Self {
            stem_channels: 16,
            stem_stride: 1,
            blocks: plan
                .iter()
                .map(|&(channels, stride)| BlockPlan { channels, stride })
                .collect(),
            kernel: 16,
            dropout: 0.2,
            dense_units: 32,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.blocks.len() != 4 {
            return bad(format!("encoder needs exactly 4 residual blocks, got {}", self.blocks.len()));
        }
        if self.kernel == 0 || self.stem_channels == 0 || self.stem_stride == 0 || self.dense_units == 0 {
            return bad(format!("invalid encoder config {self:?}"));
        }
        if self.blocks.iter().any(|b| b.channels == 0 || b.stride == 0) {
            return bad(format!("invalid block plan {:?}", self.blocks));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout rate {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    /// Width of the fused representation: encoder dense units plus the tabular branch.
    pub fn fused_width(&self) -> usize {
        self.dense_units + TABULAR_UNITS
    }
}

/// Hidden widths of the task heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    /// Fully connected layer added on top of a frozen classifier.
    pub transfer_hidden: usize,
    /// Width of the three dense layers before the MTLR block.
    pub isd_hidden: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            transfer_hidden: 32,
            isd_hidden: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    Diagnosis,
    Mortality30,
    Isd,
    /// Pretraining: multi-label code classification.
    SourceCodes { labels: usize },
    /// Pretraining: all-cause 30-day mortality.
    SourceMortality,
    /// Pretraining: all-cause survival with an ISD head.
    SourceSurvival,
}

impl ModelKind {
    pub fn is_survival(self) -> bool {
        matches!(self, ModelKind::Isd | ModelKind::SourceSurvival)
    }

    pub fn is_source(self) -> bool {
        matches!(
            self,
            ModelKind::SourceCodes { .. } | ModelKind::SourceMortality | ModelKind::SourceSurvival
        )
    }

    /// Sigmoid outputs of a classification kind.
    pub fn outputs(self) -> Option<usize> {
        match self {
            ModelKind::Diagnosis | ModelKind::Mortality30 | ModelKind::SourceMortality => Some(1),
            ModelKind::SourceCodes { labels } => Some(labels),
            ModelKind::Isd | ModelKind::SourceSurvival => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Diagnosis => "diagnosis",
            ModelKind::Mortality30 => "mortality30",
            ModelKind::Isd => "isd",
            ModelKind::SourceCodes { .. } => "source_codes",
            ModelKind::SourceMortality => "source_mortality",
            ModelKind::SourceSurvival => "source_survival",
        }
    }
}

/// Stem convolution, four residual blocks, global average pooling, dense layer.
pub struct Encoder {
    pub stem: Conv1d,
    pub stem_bn: BatchNorm1d,
    stem_relu: Relu,
    stem_drop: Dropout,
    pub blocks: Vec<ResidualBlock>,
    pool: GlobalAvgPool,
    pub dense: Dense,
}

impl Encoder {
    pub fn new(cfg: &EncoderConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let stem = Conv1d::new(
            LEADS,
            cfg.stem_channels,
            cfg.kernel,
            cfg.stem_stride,
            same_padding(cfg.kernel),
            rng,
        )?;
        let mut blocks = Vec::with_capacity(4);
        let mut channels = cfg.stem_channels;
        for plan in &cfg.blocks {
            blocks.push(ResidualBlock::new(
                channels,
                plan.channels,
                cfg.kernel,
                plan.stride,
                cfg.dropout,
                SkipKind::Auto,
                rng,
            )?);
            channels = plan.channels;
        }
        Ok(Self {
            stem,
            stem_bn: BatchNorm1d::new(cfg.stem_channels),
            stem_relu: Relu::default(),
            stem_drop: Dropout::new(cfg.dropout)?,
            blocks,
            pool: GlobalAvgPool::default(),
            dense: Dense::new(channels, cfg.dense_units, rng),
        })
    }

    pub fn forward(&mut self, x: &Tensor, ctx: &mut ForwardCtx<'_>) -> Result<Tensor> {
        let mut h = self.stem.forward(x, ctx)?;
        h = self.stem_bn.forward(&h, ctx)?;
        h = self.stem_relu.forward(&h, ctx)?;
        h = self.stem_drop.forward(&h, ctx)?;
        for block in &mut self.blocks {
            h = block.forward(&h, ctx)?;
        }
        let pooled = self.pool.forward(&h, ctx)?;
        self.dense.forward(&pooled, ctx)
    }

    /// Accumulates parameter gradients; the input gradient is not needed.
    pub fn backward(&mut self, grad: &Tensor) -> Result<()> {
        let mut g = self.dense.backward(grad)?;
        g = self.pool.backward(&g)?;
        for block in self.blocks.iter_mut().rev() {
            g = block.backward(&g)?;
        }
        g = self.stem_drop.backward(&g)?;
        g = self.stem_relu.backward(&g)?;
        g = self.stem_bn.backward(&g)?;
        self.stem.backward_params(&g)
    }
}

impl Module for Encoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, StateRef<'_>)) {
        self.stem.visit(&join(prefix, "stem"), f);
        self.stem_bn.visit(&join(prefix, "stem_bn"), f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("block{i}")), f);
        }
        self.dense.visit(&join(prefix, "dense"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, StateMut<'_>)) {
        self.stem.visit_mut(&join(prefix, "stem"), f);
        self.stem_bn.visit_mut(&join(prefix, "stem_bn"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("block{i}")), f);
        }
        self.dense.visit_mut(&join(prefix, "dense"), f);
    }
}

/// Encoder and tabular branch, concatenated.
pub struct Trunk {
    pub encoder: Encoder,
    pub tabular: Dense,
    tab_relu: Relu,
    dense_units: usize,
}

impl Trunk {
    pub fn new(cfg: &EncoderConfig, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            encoder: Encoder::new(cfg, rng)?,
            tabular: Dense::new(TABULAR_FEATURES, TABULAR_UNITS, rng),
            tab_relu: Relu::default(),
            dense_units: cfg.dense_units,
        })
    }

    pub fn width(&self) -> usize {
        self.dense_units + TABULAR_UNITS
    }

    /// `voltages [N, 12, L]`, `tabular [N, 2]` -> fused `[N, dense_units + 10]`.
    pub fn forward(&mut self, voltages: &Tensor, tabular: &Tensor, ctx: &mut ForwardCtx<'_>) -> Result<Tensor> {
        let n = voltages.dim(0);
        tabular.expect_shape(&[n, TABULAR_FEATURES], "tabular input")?;
        let enc = self.encoder.forward(voltages, ctx)?;
        let tab = self.tabular.forward(tabular, ctx)?;
        let tab = self.tab_relu.forward(&tab, ctx)?;
        let w = self.width();
        let mut fused = Vec::with_capacity(n * w);
        for i in 0..n {
            fused.extend_from_slice(enc.row(i));
            fused.extend_from_slice(tab.row(i));
        }
        Tensor::new(vec![n, w], fused)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<()> {
        let n = grad.dim(0);
        grad.expect_shape(&[n, self.width()], "fused gradient")?;
        let d = self.dense_units;
        let mut g_enc = Vec::with_capacity(n * d);
        let mut g_tab = Vec::with_capacity(n * TABULAR_UNITS);
        for i in 0..n {
            let row = grad.row(i);
            g_enc.extend_from_slice(&row[..d]);
            g_tab.extend_from_slice(&row[d..]);
        }
        self.encoder.backward(&Tensor::new(vec![n, d], g_enc)?)?;
        let g = self.tab_relu.backward(&Tensor::new(vec![n, TABULAR_UNITS], g_tab)?)?;
        self.tabular.backward(&g)?;
        Ok(())
    }
}

impl Module for Trunk {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, StateRef<'_>)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.tabular.visit(&join(prefix, "tabular"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, StateMut<'_>)) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.tabular.visit_mut(&join(prefix, "tabular"), f);
    }
}

/// `ReLU -> FC -> ReLU -> FC -> ReLU -> FC`, producing the MTLR input, and the MTLR weights.
pub struct IsdHead {
    relu0: Relu,
    pub fc1: Dense,
    relu1: Relu,
    pub fc2: Dense,
    relu2: Relu,
    pub fc3: Dense,
    /// `[m, hidden + 1]`, last column the intercept.
    pub mtlr: Param,
    pub grid: TimeGrid,
}

impl IsdHead {
    pub fn new(inputs: usize, hidden: usize, grid: TimeGrid, rng: &mut Rng) -> Self {
        let m = grid.len();
        Self {
            relu0: Relu::default(),
            fc1: Dense::new(inputs, hidden, rng),
            relu1: Relu::default(),
            fc2: Dense::new(hidden, hidden, rng),
            relu2: Relu::default(),
            fc3: Dense::new(hidden, hidden, rng),
            mtlr: Param::new(Tensor::zeros(&[m, hidden + 1])),
            grid,
        }
    }

    pub fn hidden(&self) -> usize {
        self.fc3.outputs()
    }

    /// Fused features -> MTLR input features `[N, hidden]`.
    pub fn features(&mut self, fused: &Tensor, ctx: &mut ForwardCtx<'_>) -> Result<Tensor> {
        let h = self.relu0.forward(fused, ctx)?;
        let h = self.fc1.forward(&h, ctx)?;
        let h = self.relu1.forward(&h, ctx)?;
        let h = self.fc2.forward(&h, ctx)?;
        let h = self.relu2.forward(&h, ctx)?;
        self.fc3.forward(&h, ctx)
    }

    pub fn features_backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let g = self.fc3.backward(grad)?;
        let g = self.relu2.backward(&g)?;
        let g = self.fc2.backward(&g)?;
        let g = self.relu1.backward(&g)?;
        let g = self.fc1.backward(&g)?;
        self.relu0.backward(&g)
    }

    /// True when only the MTLR block can change.
    pub fn features_frozen(&self) -> bool {
        self.fc1.all_frozen() && self.fc2.all_frozen() && self.fc3.all_frozen()
    }

    pub fn curves(&self, features: &Tensor) -> Result<Vec<SurvivalCurve>> {
        (0..features.dim(0))
            .map(|i| survival_curve(&self.mtlr.value, &crate::mtlr::augment(features.row(i)), &self.grid))
            .collect()
    }
}

impl Module for IsdHead {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, StateRef<'_>)) {
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
        self.fc3.visit(&join(prefix, "fc3"), f);
        f(&join(prefix, "mtlr.theta"), StateRef::Param(&self.mtlr));
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, StateMut<'_>)) {
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
        self.fc3.visit_mut(&join(prefix, "fc3"), f);
        f(&join(prefix, "mtlr.theta"), StateMut::Param(&mut self.mtlr));
    }
}

/// Architecture of the head, as recorded in checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum HeadSpec {
    /// One dense layer to the sigmoid outputs.
    Sigmoid { outputs: usize },
    /// Added on top of a frozen trunk: `FC(hidden) -> ReLU -> FC(1)`.
    Transfer { hidden: usize },
    Isd { hidden: usize, grid_len: usize },
}

pub enum Head {
    Sigmoid { out: Dense },
    Transfer { fc: Dense, relu: Relu, out: Dense },
    Isd(IsdHead),
}

impl Head {
    pub fn spec(&self) -> HeadSpec {
        match self {
            Head::Sigmoid { out } => HeadSpec::Sigmoid { outputs: out.outputs() },
            Head::Transfer { fc, .. } => HeadSpec::Transfer { hidden: fc.outputs() },
            Head::Isd(h) => HeadSpec::Isd {
                hidden: h.hidden(),
                grid_len: h.grid.len(),
            },
        }
    }

    pub fn transfer(inputs: usize, hidden: usize, rng: &mut Rng) -> Self {
        Head::Transfer {
            fc: Dense::new(inputs, hidden, rng),
            relu: Relu::default(),
            out: Dense::new(hidden, 1, rng),
        }
    }
}

impl Module for Head {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, StateRef<'_>)) {
        match self {
            Head::Sigmoid { out } => out.visit(&join(prefix, "out"), f),
            Head::Transfer { fc, out, .. } => {
                fc.visit(&join(prefix, "fc"), f);
                out.visit(&join(prefix, "out"), f);
            }
            Head::Isd(h) => h.visit(prefix, f),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, StateMut<'_>)) {
        match self {
            Head::Sigmoid { out } => out.visit_mut(&join(prefix, "out"), f),
            Head::Transfer { fc, out, .. } => {
                fc.visit_mut(&join(prefix, "fc"), f);
                out.visit_mut(&join(prefix, "out"), f);
            }
            Head::Isd(h) => h.visit_mut(prefix, f),
        }
    }
}

/// A complete model variant.
pub struct EcgModel {
    pub kind: ModelKind,
    pub encoder_config: EncoderConfig,
    pub head_config: HeadConfig,
    pub trunk: Trunk,
    pub head: Head,
}

/// Stacks records into `[N, 12, 4096]` voltages and `[N, 2]` tabular inputs.
pub fn batch_inputs(records: &[&EcgRecord]) -> Result<(Tensor, Tensor)> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let volts: Vec<&Tensor> = records.iter().map(|r| &r.voltages).collect();
    let voltages = Tensor::stack(&volts)?;
    let tab: Vec<f64> = records.iter().flat_map(|r| r.meta.tabular()).collect();
    Ok((voltages, Tensor::new(vec![records.len(), TABULAR_FEATURES], tab)?))
}

/// Builds a freshly initialized model; survival kinds need a time grid.
pub fn build_model(kind: ModelKind, config: &EncoderConfig, grid: Option<TimeGrid>, seed: u64) -> Result<EcgModel> {
    build_model_with(kind, config, HeadConfig::default(), grid, seed)
}

pub fn build_model_with(
    kind: ModelKind,
    config: &EncoderConfig,
    head_config: HeadConfig,
    grid: Option<TimeGrid>,
    seed: u64,
) -> Result<EcgModel> {
    config.validate()?;
    let mut rng = rng_for(seed, &[0x1417]);
    let trunk = Trunk::new(config, &mut rng)?;
    let head = match (kind.outputs(), grid) {
        (Some(outputs), _) => Head::Sigmoid {
            out: Dense::new(trunk.width(), outputs, &mut rng),
        },
        (None, Some(grid)) => Head::Isd(IsdHead::new(trunk.width(), head_config.isd_hidden, grid, &mut rng)),
        (None, None) => {
            return Err(Error::InvalidArgument(format!(
                "{} model needs a time grid",
                kind.name()
            )))
        }
    };
    Ok(EcgModel {
        kind,
        encoder_config: config.clone(),
        head_config,
        trunk,
        head,
    })
}

impl EcgModel {
    /// A frozen trunk always runs in evaluation mode: its batch-norm
    /// statistics stay fixed and no dropout is applied.
    pub fn trunk_mode(&self, requested: Mode) -> Mode {
        if self.trunk.all_frozen() {
            Mode::Eval
        } else {
            requested
        }
    }

    pub fn fused(&mut self, voltages: &Tensor, tabular: &Tensor, ctx: &mut ForwardCtx<'_>) -> Result<Tensor> {
        let mode = self.trunk_mode(ctx.mode);
        self.trunk.forward(voltages, tabular, &mut ctx.with_mode(mode))
    }

    /// Logits `[N, outputs]` for classification heads, MTLR input features for ISD heads.
    pub fn head_forward(&mut self, fused: &Tensor, ctx: &mut ForwardCtx<'_>) -> Result<Tensor> {
        match &mut self.head {
            Head::Sigmoid { out } => out.forward(fused, ctx),
            Head::Transfer { fc, relu, out } => {
                let h = fc.forward(fused, ctx)?;
                let h = relu.forward(&h, ctx)?;
                out.forward(&h, ctx)
            }
            Head::Isd(h) => h.features(fused, ctx),
        }
    }

    /// Gradient with respect to the fused representation.
    pub fn head_backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        match &mut self.head {
            Head::Sigmoid { out } => out.backward(grad),
            Head::Transfer { fc, relu, out } => {
                let g = out.backward(grad)?;
                let g = relu.backward(&g)?;
                fc.backward(&g)
            }
            Head::Isd(h) => h.features_backward(grad),
        }
    }

    pub fn trunk_backward(&mut self, grad: &Tensor) -> Result<()> {
        self.trunk.backward(grad)
    }

    /// Head outputs for a batch of raw inputs.
    pub fn forward(&mut self, voltages: &Tensor, tabular: &Tensor, ctx: &mut ForwardCtx<'_>) -> Result<Tensor> {
        let fused = self.fused(voltages, tabular, ctx)?;
        self.head_forward(&fused, ctx)
    }

    pub fn isd_head(&self) -> Result<&IsdHead> {
        match &self.head {
            Head::Isd(h) => Ok(h),
            _ => Err(Error::InvalidArgument(format!(
                "{} model has no ISD head",
                self.kind.name()
            ))),
        }
    }

    pub fn grid(&self) -> Option<&TimeGrid> {
        self.isd_head().ok().map(|h| &h.grid)
    }

    /// Sigmoid probabilities `[N, outputs]` in evaluation mode.
    pub fn predict_probs(&mut self, records: &[&EcgRecord]) -> Result<Tensor> {
        if self.kind.is_survival() {
            return Err(Error::InvalidArgument(format!(
                "{} model does not produce class probabilities",
                self.kind.name()
            )));
        }
        let (v, t) = batch_inputs(records)?;
        let mut logits = self.forward(&v, &t, &mut ForwardCtx::eval())?;
        logits
            .data_mut()
            .iter_mut()
            .for_each(|z| *z = crate::nn::sigmoid(*z));
        Ok(logits)
    }

    /// One probability per record for single-output classifiers.
    pub fn classify(&mut self, records: &[&EcgRecord]) -> Result<Vec<f64>> {
        if self.kind.outputs() != Some(1) {
            return Err(Error::InvalidArgument(format!(
                "{} model is not a single-output classifier",
                self.kind.name()
            )));
        }
        Ok(self.predict_probs(records)?.into_data())
    }

    /// MTLR input features and survival curves in evaluation mode.
    pub fn isd_forward(&mut self, records: &[&EcgRecord]) -> Result<(Tensor, Vec<SurvivalCurve>)> {
        self.isd_head()?;
        let (v, t) = batch_inputs(records)?;
        let z = self.forward(&v, &t, &mut ForwardCtx::eval())?;
        let curves = self.isd_head()?.curves(&z)?;
        Ok((z, curves))
    }

    /// Names and element counts of all trainable parameters.
    pub fn trainable_blocks(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, s| {
            if let StateRef::Param(p) = s {
                if !p.frozen {
                    out.push((name.to_string(), p.len()));
                }
            }
        });
        out
    }

    /// Checks that an input batch matches the network.
    pub fn check_input(&self, voltages: &Tensor) -> Result<()> {
        voltages.expect_rank(3, "model input")?;
        if voltages.dim(1) != LEADS {
            return Err(shape_err!("model input has {} leads, expected {LEADS}", voltages.dim(1)));
        }
        Ok(())
    }
}

impl Module for EcgModel {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, StateRef<'_>)) {
        self.trunk.visit(&join(prefix, "trunk"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, StateMut<'_>)) {
        self.trunk.visit_mut(&join(prefix, "trunk"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> EncoderConfig {
        EncoderConfig {
            stem_channels: 2,
            stem_stride: 1,
            blocks: vec![BlockPlan { channels: 2, stride: 1 }; 4],
            kernel: 3,
            dropout: 0.2,
            dense_units: 4,
        }
    }

    #[test]
    fn isd_needs_grid() {
        assert!(build_model(ModelKind::Isd, &tiny(), None, 1).is_err());
        let grid = TimeGrid::new((1..=10).map(|i| i as f64 * 10.0).collect()).unwrap();
        let m = build_model(ModelKind::Isd, &tiny(), Some(grid), 1).unwrap();
        assert_eq!(m.isd_head().unwrap().mtlr.value.shape(), &[10, 33]);
    }

    #[test]
    fn rejects_wrong_block_count() {
        let mut cfg = tiny();
        cfg.blocks.pop();
        assert!(build_model(ModelKind::Diagnosis, &cfg, None, 1).is_err());
    }
}
