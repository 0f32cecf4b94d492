use super::param::{Module, StateMut, StateRef};
use super::{ForwardCtx, Layer};
use crate::error::Result;
use crate::tensor::Tensor;

/// Layers applied in order; parameters are named by position.
#[derive(Default)]
pub struct Sequential {
    layers: Vec<Box<dyn Layer>>,
}

impl Sequential {
    pub fn new(layers: Vec<Box<dyn Layer>>) -> Self {
        Self { layers }
    }

    pub fn push(&mut self, layer: Box<dyn Layer>) {
        self.layers.push(layer);
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

impl Module for Sequential {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, StateRef<'_>)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&super::join(prefix, &i.to_string()), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, StateMut<'_>)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&super::join(prefix, &i.to_string()), f);
        }
    }
}

impl Layer for Sequential {
    fn forward(&mut self, input: &Tensor, ctx: &mut ForwardCtx<'_>) -> Result<Tensor> {
        let mut x = input.clone();
        for l in &mut self.layers {
            x = l.forward(&x, ctx)?;
        }
        Ok(x)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let mut g = grad_output.clone();
        for l in self.layers.iter_mut().rev() {
            g = l.backward(&g)?;
        }
        Ok(g)
    }
}
