use rand::Rng as _;

use super::param::{Module, StateMut, StateRef};
use super::{ForwardCtx, Layer, Mode};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Elementwise operation selector for [`pointwise_forward`].
pub enum Pointwise<'a> {
    Relu,
    Sigmoid,
    Dropout {
        rate: f64,
        train: bool,
        rng: Option<&'a mut Rng>,
    },
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn pointwise_forward(input: &Tensor, kind: Pointwise<'_>) -> Result<Tensor> {
    let mut out = input.clone();
    match kind {
        Pointwise::Relu => out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0)),
        Pointwise::Sigmoid => out.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v)),
        Pointwise::Dropout { rate, train, rng } => {
            if train && rate > 0.0 {
                let rng = rng.ok_or_else(|| Error::State("dropout in train mode needs an rng".into()))?;
                let mask = dropout_mask(input.len(), rate, rng);
                for (v, m) in out.data_mut().iter_mut().zip(mask) {
                    *v *= m;
                }
            }
        }
    }
    Ok(out)
}

fn dropout_mask(n: usize, rate: f64, rng: &mut Rng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..n)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

macro_rules! stateless_module {
    ($t:ty) => {
        impl Module for $t {
            fn visit(&self, _: &str, _: &mut dyn FnMut(&str, StateRef<'_>)) {}
            fn visit_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, StateMut<'_>)) {}
        }
    };
}
pub(crate) use stateless_module;

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

stateless_module!(Relu);

impl Layer for Relu {
    fn forward(&mut self, input: &Tensor, _ctx: &mut ForwardCtx<'_>) -> Result<Tensor> {
        self.mask = Some(input.data().iter().map(|&v| v > 0.0).collect());
        pointwise_forward(input, Pointwise::Relu)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let mask = self
            .mask
            .take()
            .ok_or_else(|| Error::State("relu backward without forward".into()))?;
        if mask.len() != grad_output.len() {
            return Err(Error::Shape("relu grad_output size".into()));
        }
        let mut g = grad_output.clone();
        for (v, keep) in g.data_mut().iter_mut().zip(mask) {
            if !keep {
                *v = 0.0;
            }
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Sigmoid {
    output: Option<Tensor>,
}

stateless_module!(Sigmoid);

impl Layer for Sigmoid {
    fn forward(&mut self, input: &Tensor, _ctx: &mut ForwardCtx<'_>) -> Result<Tensor> {
        let out = pointwise_forward(input, Pointwise::Sigmoid)?;
        self.output = Some(out.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let out = self
            .output
            .take()
            .ok_or_else(|| Error::State("sigmoid backward without forward".into()))?;
        grad_output.expect_shape(out.shape(), "sigmoid grad_output")?;
        let mut g = grad_output.clone();
        for (v, s) in g.data_mut().iter_mut().zip(out.data()) {
            *v *= s * (1.0 - s);
        }
        Ok(g)
    }
}

/// Inverted dropout: survivors are scaled by `1 / (1 - rate)` in training.
#[derive(Debug, Clone)]
pub struct Dropout {
    rate: f64,
    mask: Option<Option<Vec<f64>>>,
}

stateless_module!(Dropout);

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate {rate} outside [0, 1)"
            )));
        }
        Ok(Self { rate, mask: None })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }
}

impl Layer for Dropout {
    fn forward(&mut self, input: &Tensor, ctx: &mut ForwardCtx<'_>) -> Result<Tensor> {
        if ctx.mode == Mode::Eval || self.rate == 0.0 {
            self.mask = Some(None);
            return Ok(input.clone());
        }
        let rng = ctx
            .rng
            .as_deref_mut()
            .ok_or_else(|| Error::State("dropout in train mode needs an rng".into()))?;
        let mask = dropout_mask(input.len(), self.rate, rng);
        let mut out = input.clone();
        for (v, m) in out.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        self.mask = Some(Some(mask));
        Ok(out)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let mask = self
            .mask
            .take()
            .ok_or_else(|| Error::State("dropout backward without forward".into()))?;
        let mut g = grad_output.clone();
        if let Some(mask) = mask {
            if mask.len() != g.len() {
                return Err(Error::Shape("dropout grad_output size".into()));
            }
            for (v, m) in g.data_mut().iter_mut().zip(mask) {
                *v *= m;
            }
        }
        Ok(g)
    }
}
