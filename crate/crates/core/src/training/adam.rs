use crate::error::{shape_err, Result};
use crate::nn::{Module, StateMut};
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Bias-corrected Adam moments, one slot per parameter in visit order.
#[derive(Debug, Clone, Default)]
pub struct Adam {
    pub step: u64,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
}

/// One Adam update of `value` in place; `t` is the 1-based step count.
pub fn adam_update(value: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], t: u64, lr: f64) {
    let c1 = 1.0 - BETA1.powi(t as i32);
    let c2 = 1.0 - BETA2.powi(t as i32);
    for (((w, &g), m), v) in value.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = BETA1 * *m + (1.0 - BETA1) * g;
        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
        *w -= lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
    }
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    /// Applies one update to every trainable parameter of `module`.
    ///
    /// Moment buffers are created on the first call; later calls must see
    /// the same parameter shapes in the same order.
    pub fn step(&mut self, module: &mut dyn Module, lr: f64) -> Result<()> {
        let init = self.first.is_empty();
        let mut slot = 0;
        let mut err = None;
        self.step += 1;
        let t = self.step;
        let (first, second) = (&mut self.first, &mut self.second);
        module.visit_mut("", &mut |name, s| {
            let StateMut::Param(p) = s else { return };
            if err.is_some() {
                return;
            }
            if init {
                first.push(Tensor::zeros(p.value.shape()));
                second.push(Tensor::zeros(p.value.shape()));
            }
            match first.get_mut(slot) {
                Some(m) if m.shape() == p.value.shape() => {
                    if !p.frozen {
                        let v = &mut second[slot];
                        adam_update(p.value.data_mut(), p.grad.data(), m.data_mut(), v.data_mut(), t, lr);
                    }
                }
                Some(m) => {
                    err = Some(shape_err!(
                        "optimizer state for {name} has shape {:?}, parameter has {:?}",
                        m.shape(),
                        p.value.shape()
                    ))
                }
                None => err = Some(shape_err!("no optimizer state for parameter {name}")),
            }
            slot += 1;
        });
        if err.is_none() && slot != self.first.len() {
            err = Some(shape_err!(
                "optimizer tracks {} parameters, module has {slot}",
                self.first.len()
            ));
        }
        match err {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}
