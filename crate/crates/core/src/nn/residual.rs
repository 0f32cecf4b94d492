use super::activation::{Dropout, Relu};
use super::conv::{same_padding, Conv1d};
use super::norm::BatchNorm1d;
use super::param::{join, Module, StateMut, StateRef};
use super::{ForwardCtx, Layer};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Skip-path wiring for a residual block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipKind {
    /// Identity when shapes agree, otherwise a strided 1x1 projection.
    Auto,
    Identity,
    Projection,
}

/// `conv -> BN -> ReLU -> dropout -> conv -> BN`, plus skip, then `ReLU -> dropout`.
///
/// The first convolution carries the stride; both use "same" padding so the
/// main path produces `ceil(L / stride)` samples, matching a strided 1x1
/// projection on the skip path.
pub struct ResidualBlock {
    pub conv1: Conv1d,
    pub bn1: BatchNorm1d,
    relu1: Relu,
    drop1: Dropout,
    pub conv2: Conv1d,
    pub bn2: BatchNorm1d,
    pub skip: Option<Conv1d>,
    relu_out: Relu,
    drop_out: Dropout,
}

impl ResidualBlock {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        dropout: f64,
        skip: SkipKind,
        rng: &mut Rng,
    ) -> Result<Self> {
        let reshapes = in_channels != out_channels || stride != 1;
        let project = match skip {
            SkipKind::Auto => reshapes,
            SkipKind::Projection => true,
            SkipKind::Identity if reshapes => {
                return Err(Error::Shape(format!(
                    "identity skip cannot map {in_channels} channels at stride {stride} to {out_channels} channels"
                )))
            }
            SkipKind::Identity => false,
        };
        let pad = same_padding(kernel);
        let conv1 = Conv1d::new(in_channels, out_channels, kernel, stride, pad, rng)?;
        let conv2 = Conv1d::new(out_channels, out_channels, kernel, 1, pad, rng)?;
        let skip = if project {
            Some(Conv1d::new(in_channels, out_channels, 1, stride, (0, 0), rng)?)
        } else {
            None
        };
        Ok(Self {
            conv1,
            bn1: BatchNorm1d::new(out_channels),
            relu1: Relu::default(),
            drop1: Dropout::new(dropout)?,
            conv2,
            bn2: BatchNorm1d::new(out_channels),
            skip,
            relu_out: Relu::default(),
            drop_out: Dropout::new(dropout)?,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.conv1.in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.conv1.out_channels()
    }

    pub fn output_len(&self, len: usize) -> Result<usize> {
        self.conv1.output_len(len)
    }
}

/// Forward pass of a configured block.
pub fn residual_block_forward(
    input: &Tensor,
    block: &mut ResidualBlock,
    ctx: &mut ForwardCtx<'_>,
) -> Result<Tensor> {
    block.forward(input, ctx)
}

impl Module for ResidualBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, StateRef<'_>)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.bn1.visit(&join(prefix, "bn1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.bn2.visit(&join(prefix, "bn2"), f);
        if let Some(s) = &self.skip {
            s.visit(&join(prefix, "skip"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, StateMut<'_>)) {
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.bn1.visit_mut(&join(prefix, "bn1"), f);
        self.conv2.visit_mut(&join(prefix, "conv2"), f);
        self.bn2.visit_mut(&join(prefix, "bn2"), f);
        if let Some(s) = &mut self.skip {
            s.visit_mut(&join(prefix, "skip"), f);
        }
    }
}

impl Layer for ResidualBlock {
    fn forward(&mut self, input: &Tensor, ctx: &mut ForwardCtx<'_>) -> Result<Tensor> {
        let h = self.conv1.forward(input, ctx)?;
        let h = self.bn1.forward(&h, ctx)?;
        let h = self.relu1.forward(&h, ctx)?;
        let h = self.drop1.forward(&h, ctx)?;
        let h = self.conv2.forward(&h, ctx)?;
        let mut h = self.bn2.forward(&h, ctx)?;
        match &mut self.skip {
            Some(proj) => h.add_assign(&proj.forward(input, ctx)?)?,
            None => h.add_assign(input)?,
        }
        let h = self.relu_out.forward(&h, ctx)?;
        self.drop_out.forward(&h, ctx)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let g = self.drop_out.backward(grad_output)?;
        let g_sum = self.relu_out.backward(&g)?;
        let g = self.bn2.backward(&g_sum)?;
        let g = self.conv2.backward(&g)?;
        let g = self.drop1.backward(&g)?;
        let g = self.relu1.backward(&g)?;
        let g = self.bn1.backward(&g)?;
        let mut gx = self.conv1.backward(&g)?;
        match &mut self.skip {
            Some(proj) => gx.add_assign(&proj.backward(&g_sum)?)?,
            None => gx.add_assign(&g_sum)?,
        }
        Ok(gx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{conv1d_forward, pointwise_forward, Pointwise};
    use rand::Rng as _;

    #[test]
    fn zero_main_path_is_relu_of_input() {
        let mut rng = crate::rng::rng_for(1, &[]);
        let mut block = ResidualBlock::new(2, 2, 5, 1, 0.2, SkipKind::Identity, &mut rng).unwrap();
        block.conv1.weight.value.fill(0.0);
        block.conv2.weight.value.fill(0.0);
        let x = Tensor::new(vec![1, 2, 6], (0..12).map(|i| i as f64 - 6.0).collect()).unwrap();
        let y = block.forward(&x, &mut ForwardCtx::eval()).unwrap();
        let want = pointwise_forward(&x, Pointwise::Relu).unwrap();
        for (a, b) in y.data().iter().zip(want.data()) {
            // BN eval of zeros is exactly zero with running mean 0
            assert_eq!(a, b);
        }
    }

    #[test]
    fn projection_halves_length_and_doubles_channels() {
        let mut rng = crate::rng::rng_for(2, &[]);
        let mut block = ResidualBlock::new(4, 8, 16, 2, 0.0, SkipKind::Auto, &mut rng).unwrap();
        assert!(block.skip.is_some());
        let x = Tensor::filled(&[2, 4, 64], 0.3);
        let y = block.forward(&x, &mut ForwardCtx::eval()).unwrap();
        assert_eq!(y.shape(), &[2, 8, 32]);
    }

    #[test]
    fn identity_skip_with_reshape_is_rejected() {
        let mut rng = crate::rng::rng_for(3, &[]);
        assert!(ResidualBlock::new(4, 8, 3, 1, 0.0, SkipKind::Identity, &mut rng).is_err());
        assert!(ResidualBlock::new(4, 4, 3, 2, 0.0, SkipKind::Identity, &mut rng).is_err());
    }

    /// Straight-line re-derivation of the block wiring for one channel, eval mode.
    #[test]
    fn single_channel_matches_straight_line_oracle() {
        let mut rng = crate::rng::rng_for(4, &[]);
        let mut block = ResidualBlock::new(1, 1, 3, 1, 0.0, SkipKind::Auto, &mut rng).unwrap();
        // non-trivial BN state
        block.bn1.gamma.value.data_mut()[0] = 1.3;
        block.bn1.beta.value.data_mut()[0] = -0.2;
        block.bn1.stats.mean.data_mut()[0] = 0.1;
        block.bn1.stats.var.data_mut()[0] = 2.0;
        block.bn2.gamma.value.data_mut()[0] = 0.7;
        block.bn2.beta.value.data_mut()[0] = 0.4;
        block.bn2.stats.mean.data_mut()[0] = -0.3;
        block.bn2.stats.var.data_mut()[0] = 0.5;
        block.conv1.bias.value.data_mut()[0] = 0.05;
        let x: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();

        let w1 = block.conv1.weight.value.clone();
        let w2 = block.conv2.weight.value.clone();
        let bn = |v: f64, g: f64, b: f64, m: f64, var: f64| g * (v - m) / (var + 1e-5).sqrt() + b;
        let xt = Tensor::new(vec![1, 8], x.clone()).unwrap();
        let h = conv1d_forward(&xt, &w1, &[0.05], 1, 1).unwrap();
        let h: Vec<f64> = h.data().iter().map(|&v| bn(v, 1.3, -0.2, 0.1, 2.0).max(0.0)).collect();
        let ht = Tensor::new(vec![1, 8], h).unwrap();
        let h2 = conv1d_forward(&ht, &w2, &[0.0], 1, 1).unwrap();
        let want: Vec<f64> = h2
            .data()
            .iter()
            .zip(&x)
            .map(|(&v, &xi)| (bn(v, 0.7, 0.4, -0.3, 0.5) + xi).max(0.0))
            .collect();

        let got = block
            .forward(&Tensor::new(vec![1, 1, 8], x).unwrap(), &mut ForwardCtx::eval())
            .unwrap();
        for (a, b) in got.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}
