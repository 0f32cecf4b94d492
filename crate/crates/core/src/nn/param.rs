use crate::tensor::Tensor;

/// A trainable tensor with its gradient accumulator.
///
/// A frozen parameter never accumulates gradient and is skipped by the
/// optimizer; its `grad` stays identically zero.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    pub frozen: bool,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            value,
            grad,
            frozen: false,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    /// Adds `delta` into the gradient unless frozen.
    pub fn accumulate(&mut self, delta: &[f64]) {
        if self.frozen {
            return;
        }
        debug_assert_eq!(delta.len(), self.grad.len());
        for (g, d) in self.grad.data_mut().iter_mut().zip(delta) {
            *g += d;
        }
    }
}

/// Borrowed view of one named piece of model state.
pub enum StateRef<'a> {
    Param(&'a Param),
    /// Non-trainable state such as batch-norm running statistics.
    Buffer(&'a Tensor),
}

pub enum StateMut<'a> {
    Param(&'a mut Param),
    Buffer(&'a mut Tensor),
}

/// Named traversal of parameters and buffers in a fixed order.
pub trait Module {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, StateRef<'_>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, StateMut<'_>));

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, s| {
            if let StateMut::Param(p) = s {
                p.zero_grad();
            }
        });
    }

    fn set_frozen(&mut self, frozen: bool) {
        self.visit_mut("", &mut |_, s| {
            if let StateMut::Param(p) = s {
                p.frozen = frozen;
                p.zero_grad();
            }
        });
    }

    fn trainable_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, s| {
            if let StateRef::Param(p) = s {
                if !p.frozen {
                    n += p.len();
                }
            }
        });
        n
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, s| {
            if let StateRef::Param(p) = s {
                n += p.len();
            }
        });
        n
    }

    fn all_frozen(&self) -> bool {
        let mut all = true;
        self.visit("", &mut |_, s| {
            if let StateRef::Param(p) = s {
                all &= p.frozen;
            }
        });
        all
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
