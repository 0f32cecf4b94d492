//! Layer kernels with exact reverse-mode gradients.
//!
//! Every layer caches what its backward pass needs during `forward` and
//! consumes that cache in `backward`; calling `backward` without a preceding
//! `forward` is an error. Activations are batched: convolutional layers take
//! `[N, C, L]`, dense layers `[N, D]`.

mod activation;
mod conv;
mod dense;
mod linalg;
mod norm;
mod param;
mod pool;
mod residual;
mod sequential;

pub use activation::{pointwise_forward, sigmoid, Dropout, Pointwise, Relu, Sigmoid};
pub use conv::{conv1d_forward, conv_output_len, same_padding, Conv1d};
pub use dense::{dense_forward, Dense};
pub use linalg::gemm;
pub use norm::{batch_norm1d_forward, BatchNorm1d, RunningStats, BN_EPS, BN_MOMENTUM};
pub use param::{join, Module, Param, StateMut, StateRef};
pub use pool::GlobalAvgPool;
pub use residual::{residual_block_forward, ResidualBlock, SkipKind};
pub use sequential::Sequential;

use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-forward-pass context: the mode and, for dropout in training, an RNG.
pub struct ForwardCtx<'a> {
    pub mode: Mode,
    pub rng: Option<&'a mut Rng>,
}

impl<'a> ForwardCtx<'a> {
    pub fn eval() -> Self {
        Self {
            mode: Mode::Eval,
            rng: None,
        }
    }

    pub fn train(rng: &'a mut Rng) -> Self {
        Self {
            mode: Mode::Train,
            rng: Some(rng),
        }
    }

    pub fn with_mode(&mut self, mode: Mode) -> ForwardCtx<'_> {
        ForwardCtx {
            mode,
            rng: self.rng.as_deref_mut(),
        }
    }
}

/// Hyperparameters of one layer, as declared in a model configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    BatchNorm1d {
        channels: usize,
        momentum: f64,
        eps: f64,
    },
    Relu,
    Dropout {
        rate: f64,
    },
    Dense {
        inputs: usize,
        outputs: usize,
    },
    ResidualBlock {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        dropout: f64,
    },
    Sigmoid,
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        use crate::error::Error::InvalidArgument as Bad;
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            } => {
                if kernel == 0 || stride == 0 || in_channels == 0 || out_channels == 0 {
                    return Err(Bad(format!("invalid conv1d spec {self:?}")));
                }
            }
            LayerSpec::BatchNorm1d { channels, eps, momentum } => {
                if channels == 0 || !(eps > 0.0) || !(0.0..=1.0).contains(&momentum) {
                    return Err(Bad(format!("invalid batch-norm spec {self:?}")));
                }
            }
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(Bad(format!("dropout rate {rate} outside [0, 1)")));
                }
            }
            LayerSpec::Dense { inputs, outputs } => {
                if inputs == 0 || outputs == 0 {
                    return Err(Bad(format!("invalid dense spec {self:?}")));
                }
            }
            LayerSpec::ResidualBlock {
                in_channels,
                out_channels,
                kernel,
                stride,
                dropout,
            } => {
                if kernel == 0 || stride == 0 || in_channels == 0 || out_channels == 0 {
                    return Err(Bad(format!("invalid residual block spec {self:?}")));
                }
                if !(0.0..1.0).contains(&dropout) {
                    return Err(Bad(format!("dropout rate {dropout} outside [0, 1)")));
                }
            }
            LayerSpec::Relu | LayerSpec::Sigmoid => {}
        }
        Ok(())
    }

    /// Builds the layer with Kaiming-uniform weights drawn from `rng`.
    pub fn build(&self, rng: &mut Rng) -> Result<Box<dyn Layer>> {
        self.validate()?;
        Ok(match *self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => Box::new(Conv1d::new(
                in_channels,
                out_channels,
                kernel,
                stride,
                (padding, padding),
                rng,
            )?),
            LayerSpec::BatchNorm1d {
                channels,
                momentum,
                eps,
            } => Box::new(BatchNorm1d::with_params(channels, momentum, eps)?),
            LayerSpec::Relu => Box::new(Relu::default()),
            LayerSpec::Sigmoid => Box::new(Sigmoid::default()),
            LayerSpec::Dropout { rate } => Box::new(Dropout::new(rate)?),
            LayerSpec::Dense { inputs, outputs } => Box::new(Dense::new(inputs, outputs, rng)),
            LayerSpec::ResidualBlock {
                in_channels,
                out_channels,
                kernel,
                stride,
                dropout,
            } => Box::new(ResidualBlock::new(
                in_channels,
                out_channels,
                kernel,
                stride,
                dropout,
                SkipKind::Auto,
                rng,
            )?),
        })
    }
}

/// A differentiable layer.
pub trait Layer: Module + Send {
    fn forward(&mut self, input: &Tensor, ctx: &mut ForwardCtx<'_>) -> Result<Tensor>;

    /// Accumulates parameter gradients and returns the gradient with respect
    /// to the input of the last `forward` call.
    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor>;
}

/// Kaiming-uniform fan-in initialization bound for ReLU networks.
pub(crate) fn kaiming_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

pub(crate) fn kaiming_uniform(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor {
    use rand::Rng as _;
    let bound = kaiming_bound(fan_in);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("kaiming_uniform: shape/data agree")
}
