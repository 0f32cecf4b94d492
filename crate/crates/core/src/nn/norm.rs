use super::param::{join, Module, Param, StateMut, StateRef};
use super::{ForwardCtx, Layer, Mode};
use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Per-channel running mean and (unbiased) variance.
#[derive(Debug, Clone)]
pub struct RunningStats {
    pub mean: Tensor,
    pub var: Tensor,
    pub momentum: f64,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::filled(&[channels], 1.0),
            momentum: BN_MOMENTUM,
        }
    }
}

struct Normalized {
    out: Tensor,
    x_hat: Vec<f64>,
    inv_std: Vec<f64>,
}

fn normalize(
    input: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
    mode: Mode,
    stats: &mut RunningStats,
) -> Result<Normalized> {
    input.expect_rank(3, "batch_norm1d input")?;
    let (n, c, l) = (input.dim(0), input.dim(1), input.dim(2));
    if gamma.len() != c || beta.len() != c || stats.mean.len() != c {
        return Err(shape_err!(
            "batch_norm1d: {c} channels but gamma/beta/stats sized {}/{}/{}",
            gamma.len(),
            beta.len(),
            stats.mean.len()
        ));
    }
    let count = n * l;
    let x = input.data();
    let (mean, var) = match mode {
        Mode::Train => {
            if count < 2 {
                return Err(Error::InvalidArgument(format!(
                    "batch_norm1d in train mode needs at least 2 values per channel, got {count}"
                )));
            }
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ch in 0..c {
                let mut s = 0.0;
                for b in 0..n {
                    s += x[(b * c + ch) * l..(b * c + ch + 1) * l].iter().sum::<f64>();
                }
                let m = s / count as f64;
                let mut v = 0.0;
                for b in 0..n {
                    v += x[(b * c + ch) * l..(b * c + ch + 1) * l]
                        .iter()
                        .map(|xi| (xi - m) * (xi - m))
                        .sum::<f64>();
                }
                mean[ch] = m;
                var[ch] = v / count as f64;
            }
            let mom = stats.momentum;
            let unbias = count as f64 / (count as f64 - 1.0);
            for ch in 0..c {
                let rm = &mut stats.mean.data_mut()[ch];
                *rm = (1.0 - mom) * *rm + mom * mean[ch];
                let rv = &mut stats.var.data_mut()[ch];
                *rv = (1.0 - mom) * *rv + mom * var[ch] * unbias;
            }
            (mean, var)
        }
        Mode::Eval => (stats.mean.data().to_vec(), stats.var.data().to_vec()),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    if inv_std.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            location: "batch_norm1d inverse std (zero variance with eps = 0)".into(),
        });
    }
    let mut x_hat = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * l;
            for i in base..base + l {
                let h = (x[i] - mean[ch]) * inv_std[ch];
                x_hat[i] = h;
                out[i] = gamma[ch] * h + beta[ch];
            }
        }
    }
    Ok(Normalized {
        out: Tensor::new(vec![n, c, l], out)?,
        x_hat,
        inv_std,
    })
}

/// Batch normalization over `[N, C, L]`, per channel across `(N, L)`.
///
/// Train mode normalizes with batch statistics and updates `stats`; eval mode
/// uses `stats`. `eps` may be zero here; layers require it positive.
pub fn batch_norm1d_forward(
    input: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
    mode: Mode,
    stats: &mut RunningStats,
) -> Result<Tensor> {
    Ok(normalize(input, gamma, beta, eps, mode, stats)?.out)
}

#[derive(Debug, Clone)]
struct BnCache {
    x_hat: Vec<f64>,
    inv_std: Vec<f64>,
    shape: Vec<usize>,
    mode: Mode,
}

#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    pub gamma: Param,
    pub beta: Param,
    pub stats: RunningStats,
    eps: f64,
    cache: Option<BnCache>,
}

impl BatchNorm1d {
    pub fn new(channels: usize) -> Self {
        Self::with_params(channels, BN_MOMENTUM, BN_EPS).expect("default batch-norm params are valid")
    }

    pub fn with_params(channels: usize, momentum: f64, eps: f64) -> Result<Self> {
        if channels == 0 || !(eps > 0.0) || !(0.0..=1.0).contains(&momentum) {
            return Err(Error::InvalidArgument(format!(
                "batch_norm1d: channels {channels}, momentum {momentum}, eps {eps}"
            )));
        }
        let mut stats = RunningStats::new(channels);
        stats.momentum = momentum;
        Ok(Self {
            gamma: Param::new(Tensor::filled(&[channels], 1.0)),
            beta: Param::new(Tensor::zeros(&[channels])),
            stats,
            eps,
            cache: None,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

impl Module for BatchNorm1d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, StateRef<'_>)) {
        f(&join(prefix, "gamma"), StateRef::Param(&self.gamma));
        f(&join(prefix, "beta"), StateRef::Param(&self.beta));
        f(&join(prefix, "running_mean"), StateRef::Buffer(&self.stats.mean));
        f(&join(prefix, "running_var"), StateRef::Buffer(&self.stats.var));
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, StateMut<'_>)) {
        f(&join(prefix, "gamma"), StateMut::Param(&mut self.gamma));
        f(&join(prefix, "beta"), StateMut::Param(&mut self.beta));
        f(&join(prefix, "running_mean"), StateMut::Buffer(&mut self.stats.mean));
        f(&join(prefix, "running_var"), StateMut::Buffer(&mut self.stats.var));
    }
}

impl Layer for BatchNorm1d {
    fn forward(&mut self, input: &Tensor, ctx: &mut ForwardCtx<'_>) -> Result<Tensor> {
        input.check_finite("batch_norm1d input")?;
        let norm = normalize(
            input,
            self.gamma.value.data(),
            self.beta.value.data(),
            self.eps,
            ctx.mode,
            &mut self.stats,
        )?;
        self.cache = Some(BnCache {
            x_hat: norm.x_hat,
            inv_std: norm.inv_std,
            shape: input.shape().to_vec(),
            mode: ctx.mode,
        });
        Ok(norm.out)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("batch_norm1d backward without forward".into()))?;
        grad_output.expect_shape(&cache.shape, "batch_norm1d grad_output")?;
        let (n, c, l) = (cache.shape[0], cache.shape[1], cache.shape[2]);
        let dy = grad_output.data();
        let gamma = self.gamma.value.data();
        let m = (n * l) as f64;
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * l;
                for i in base..base + l {
                    dgamma[ch] += dy[i] * cache.x_hat[i];
                    dbeta[ch] += dy[i];
                }
            }
        }
        let mut dx = vec![0.0; dy.len()];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * l;
                let scale = gamma[ch] * cache.inv_std[ch];
                match cache.mode {
                    Mode::Train => {
                        for i in base..base + l {
                            dx[i] = scale / m
                                * (m * dy[i] - dbeta[ch] - cache.x_hat[i] * dgamma[ch]);
                        }
                    }
                    Mode::Eval => {
                        for i in base..base + l {
                            dx[i] = scale * dy[i];
                        }
                    }
                }
            }
        }
        self.gamma.accumulate(&dgamma);
        self.beta.accumulate(&dbeta);
        Tensor::new(cache.shape.clone(), dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_example() {
        let x = Tensor::new(vec![1, 1, 2], vec![1.0, 3.0]).unwrap();
        let mut stats = RunningStats::new(1);
        let y = batch_norm1d_forward(&x, &[1.0], &[0.0], 0.0, Mode::Train, &mut stats).unwrap();
        assert_eq!(y.data(), &[-1.0, 1.0]);
        // running stats moved 10% toward mean 2, unbiased var 2
        assert!((stats.mean.data()[0] - 0.2).abs() < 1e-15);
        assert!((stats.var.data()[0] - (0.9 + 0.2)).abs() < 1e-15);
    }

    #[test]
    fn standardized_input_passes_through() {
        let x = Tensor::new(vec![2, 1, 2], vec![1.0, -1.0, -1.0, 1.0]).unwrap();
        let mut stats = RunningStats::new(1);
        let y = batch_norm1d_forward(&x, &[1.0], &[0.0], BN_EPS, Mode::Train, &mut stats).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn zero_gamma_gives_beta() {
        let x = Tensor::new(vec![1, 2, 3], vec![1.0, 5.0, -2.0, 0.0, 7.0, 3.0]).unwrap();
        let mut stats = RunningStats::new(2);
        let y = batch_norm1d_forward(&x, &[0.0, 0.0], &[0.5, -2.0], BN_EPS, Mode::Train, &mut stats)
            .unwrap();
        assert_eq!(y.data(), &[0.5, 0.5, 0.5, -2.0, -2.0, -2.0]);
    }

    #[test]
    fn single_value_batch_rejected_in_train_mode() {
        let x = Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap();
        let mut stats = RunningStats::new(1);
        assert!(batch_norm1d_forward(&x, &[1.0], &[0.0], BN_EPS, Mode::Train, &mut stats).is_err());
        // eval mode only needs running stats
        assert!(batch_norm1d_forward(&x, &[1.0], &[0.0], BN_EPS, Mode::Eval, &mut stats).is_ok());
    }

    #[test]
    fn layer_rejects_nonpositive_eps() {
        assert!(BatchNorm1d::with_params(3, 0.1, 0.0).is_err());
    }
}
