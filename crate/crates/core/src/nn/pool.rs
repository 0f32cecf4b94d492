use super::activation::stateless_module;
use super::param::{Module, StateMut, StateRef};
use super::{ForwardCtx, Layer};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean over the time axis: `[N, C, L] -> [N, C]`.
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    shape: Option<Vec<usize>>,
}

stateless_module!(GlobalAvgPool);

impl Layer for GlobalAvgPool {
    fn forward(&mut self, input: &Tensor, _ctx: &mut ForwardCtx<'_>) -> Result<Tensor> {
        input.expect_rank(3, "global average pool input")?;
        let (n, c, l) = (input.dim(0), input.dim(1), input.dim(2));
        let out = input
            .data()
            .chunks(l)
            .map(|row| row.iter().sum::<f64>() / l as f64)
            .collect();
        self.shape = Some(input.shape().to_vec());
        Tensor::new(vec![n, c], out)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let shape = self
            .shape
            .take()
            .ok_or_else(|| Error::State("pool backward without forward".into()))?;
        let (n, c, l) = (shape[0], shape[1], shape[2]);
        grad_output.expect_shape(&[n, c], "pool grad_output")?;
        let mut dx = Vec::with_capacity(n * c * l);
        for &g in grad_output.data() {
            dx.extend(std::iter::repeat(g / l as f64).take(l));
        }
        Tensor::new(shape, dx)
    }
}
