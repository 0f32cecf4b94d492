use super::linalg::gemm;
use super::param::{join, Module, Param, StateMut, StateRef};
use super::{kaiming_uniform, ForwardCtx, Layer};
use crate::error::{shape_err, Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Affine map `W x + b` for one sample; `weights` is `[d_out, d_in]`.
pub fn dense_forward(input: &[f64], weights: &Tensor, bias: &[f64]) -> Result<Vec<f64>> {
    weights.expect_rank(2, "dense weights")?;
    let (d_out, d_in) = (weights.dim(0), weights.dim(1));
    if input.len() != d_in || bias.len() != d_out {
        return Err(shape_err!(
            "dense: weights {d_out}x{d_in}, input {}, bias {}",
            input.len(),
            bias.len()
        ));
    }
    let mut out = bias.to_vec();
    gemm(1, d_in, d_out, input, false, weights.data(), true, 1.0, &mut out);
    Ok(out)
}

/// Fully connected layer over `[N, d_in]`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
    cache: Option<Tensor>,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        Self {
            weight: Param::new(kaiming_uniform(&[outputs, inputs], inputs, rng)),
            bias: Param::new(Tensor::zeros(&[outputs])),
            cache: None,
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Param::new(Tensor::zeros(&[outputs, inputs])),
            bias: Param::new(Tensor::zeros(&[outputs])),
            cache: None,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.dim(1)
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.dim(0)
    }
}

impl Module for Dense {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, StateRef<'_>)) {
        f(&join(prefix, "weight"), StateRef::Param(&self.weight));
        f(&join(prefix, "bias"), StateRef::Param(&self.bias));
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, StateMut<'_>)) {
        f(&join(prefix, "weight"), StateMut::Param(&mut self.weight));
        f(&join(prefix, "bias"), StateMut::Param(&mut self.bias));
    }
}

impl Layer for Dense {
    fn forward(&mut self, input: &Tensor, _ctx: &mut ForwardCtx<'_>) -> Result<Tensor> {
        input.expect_rank(2, "dense input")?;
        let (n, d_in) = (input.dim(0), input.dim(1));
        if d_in != self.inputs() {
            return Err(shape_err!(
                "dense: input width {d_in}, layer expects {}",
                self.inputs()
            ));
        }
        input.check_finite("dense input")?;
        let d_out = self.outputs();
        let mut out = Vec::with_capacity(n * d_out);
        for _ in 0..n {
            out.extend_from_slice(self.bias.value.data());
        }
        gemm(n, d_in, d_out, input.data(), false, self.weight.value.data(), true, 1.0, &mut out);
        self.cache = Some(input.clone());
        Tensor::new(vec![n, d_out], out)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let input = self
            .cache
            .take()
            .ok_or_else(|| Error::State("dense backward without forward".into()))?;
        let (n, d_in, d_out) = (input.dim(0), self.inputs(), self.outputs());
        grad_output.expect_shape(&[n, d_out], "dense grad_output")?;
        if !self.weight.frozen {
            let mut dw = vec![0.0; d_out * d_in];
            gemm(d_out, n, d_in, grad_output.data(), true, input.data(), false, 0.0, &mut dw);
            self.weight.accumulate(&dw);
        }
        if !self.bias.frozen {
            let mut db = vec![0.0; d_out];
            for r in 0..n {
                for (a, b) in db.iter_mut().zip(grad_output.row(r)) {
                    *a += b;
                }
            }
            self.bias.accumulate(&db);
        }
        let mut dx = vec![0.0; n * d_in];
        gemm(n, d_out, d_in, grad_output.data(), false, self.weight.value.data(), false, 0.0, &mut dx);
        Tensor::new(vec![n, d_in], dx)
    }
}
