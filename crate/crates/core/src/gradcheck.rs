//! Central finite-difference oracles for checking analytic gradients.
//!
//! These only ever call forward passes, so they stay independent of the
//! backward code they check.

use rand::Rng as _;

use crate::error::Result;
use crate::nn::{ForwardCtx, Layer, Mode, StateMut, StateRef};
use crate::rng::rng_for;
use crate::tensor::Tensor;

/// Central differences of `f` at `x` with step `h`.
pub fn finite_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||, 1e-4)`.
///
/// The floor keeps gradients that are analytically zero (a bias feeding
/// batch norm, say) from being judged against finite-difference rounding
/// noise, which is around `eps * |f| / h`, i.e. 1e-10 at `h = 1e-5`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb = numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-4)
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Name of the tensor with the largest error (`input` for the input gradient).
    pub worst: String,
    pub checked_tensors: usize,
}

impl GradCheckReport {
    fn record(&mut self, name: &str, err: f64) {
        self.checked_tensors += 1;
        if err > self.max_rel_error || self.worst.is_empty() {
            self.max_rel_error = self.max_rel_error.max(err);
            self.worst = name.to_string();
        }
    }
}

fn weighted_output(layer: &mut dyn Layer, x: &Tensor, weights: &[f64], mode: Mode, seed: u64) -> Result<f64> {
    let mut rng = rng_for(seed, &[0xD20]);
    let mut ctx = ForwardCtx {
        mode,
        rng: Some(&mut rng),
    };
    let y = layer.forward(x, &mut ctx)?;
    Ok(y.data().iter().zip(weights).map(|(a, b)| a * b).sum())
}

fn set_param(layer: &mut dyn Layer, target: usize, elem: usize, value: f64) {
    let mut idx = 0;
    layer.visit_mut("", &mut |_, s| {
        if let StateMut::Param(p) = s {
            if idx == target {
                p.value.data_mut()[elem] = value;
            }
            idx += 1;
        }
    });
}

/// Checks every parameter gradient and the input gradient of `layer` against
/// central differences of `sum(w * layer(x))` for a random weighting `w`.
///
/// Dropout masks are held fixed by reseeding the RNG for every forward call.
pub fn check_layer(layer: &mut dyn Layer, input: &Tensor, mode: Mode, seed: u64, h: f64) -> Result<GradCheckReport> {
    let mut wrng = rng_for(seed, &[0x3E1]);
    let probe = {
        let mut rng = rng_for(seed, &[0xD20]);
        let mut ctx = ForwardCtx {
            mode,
            rng: Some(&mut rng),
        };
        layer.forward(input, &mut ctx)?
    };
    let weights: Vec<f64> = (0..probe.len()).map(|_| wrng.random_range(-1.0..1.0)).collect();
    layer.zero_grad();
    let upstream = Tensor::new(probe.shape().to_vec(), weights.clone())?;
    let dx = layer.backward(&upstream)?;

    let mut analytic: Vec<(String, Vec<f64>, Vec<f64>, bool)> = Vec::new();
    layer.visit("", &mut |name, s| {
        if let StateRef::Param(p) = s {
            analytic.push((
                name.to_string(),
                p.grad.data().to_vec(),
                p.value.data().to_vec(),
                p.frozen,
            ));
        }
    });

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked_tensors: 0,
    };

    let mut x = input.clone();
    let mut numeric_dx = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + h;
        let up = weighted_output(layer, &x, &weights, mode, seed)?;
        x.data_mut()[i] = orig - h;
        let down = weighted_output(layer, &x, &weights, mode, seed)?;
        x.data_mut()[i] = orig;
        numeric_dx.push((up - down) / (2.0 * h));
    }
    report.record("input", relative_error(dx.data(), &numeric_dx));

    for (t, (name, grad, values, frozen)) in analytic.iter().enumerate() {
        let numeric: Vec<f64> = if *frozen {
            vec![0.0; grad.len()]
        } else {
            let mut out = Vec::with_capacity(grad.len());
            for e in 0..grad.len() {
                set_param(layer, t, e, values[e] + h);
                let up = weighted_output(layer, input, &weights, mode, seed)?;
                set_param(layer, t, e, values[e] - h);
                let down = weighted_output(layer, input, &weights, mode, seed)?;
                set_param(layer, t, e, values[e]);
                out.push((up - down) / (2.0 * h));
            }
            out
        };
        report.record(name, relative_error(grad, &numeric));
    }
    Ok(report)
}

/// Gradient checks for every layer kind plus a two-block toy network, on
/// small random shapes drawn from `seed`. Returns one report per case.
pub fn layer_suite(seed: u64) -> Result<Vec<(String, GradCheckReport)>> {
    use crate::nn::{
        BatchNorm1d, Conv1d, Dense, Dropout, GlobalAvgPool, Relu, ResidualBlock, Sequential, Sigmoid, SkipKind,
    };

    const H: f64 = 1e-5;
    let mut rng = rng_for(seed, &[0x5017E]);
    let rand_tensor = |shape: &[usize], rng: &mut crate::rng::Rng| {
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
            .expect("shape matches data")
    };
    let mut out = Vec::new();

    let n = rng.random_range(1..=3);
    let cin = rng.random_range(1..=3);
    let cout = rng.random_range(1..=3);
    let k = rng.random_range(1..=5);
    let stride = rng.random_range(1..=3);
    let len = rng.random_range(k.max(4)..=12);
    let pad = rng.random_range(0..=2);
    let mut conv = Conv1d::new(cin, cout, k, stride, (pad, pad), &mut rng)?;
    let x = rand_tensor(&[n, cin, len], &mut rng);
    out.push(("conv1d".into(), check_layer(&mut conv, &x, Mode::Train, seed, H)?));

    let c = rng.random_range(1..=3);
    let mut bn = BatchNorm1d::new(c);
    for v in bn.gamma.value.data_mut() {
        *v = rng.random_range(0.5..1.5);
    }
    for v in bn.beta.value.data_mut() {
        *v = rng.random_range(-0.5..0.5);
    }
    let x = rand_tensor(&[2, c, 5], &mut rng);
    out.push(("batch_norm1d/train".into(), check_layer(&mut bn, &x, Mode::Train, seed, H)?));
    out.push(("batch_norm1d/eval".into(), check_layer(&mut bn, &x, Mode::Eval, seed, H)?));

    // keep activations away from the ReLU kink so differences stay smooth
    let x = Tensor::new(
        vec![2, 7],
        (0..14)
            .map(|_| {
                let v: f64 = rng.random_range(0.05..1.0);
                if rng.random::<bool>() { v } else { -v }
            })
            .collect(),
    )?;
    out.push(("relu".into(), check_layer(&mut Relu::default(), &x, Mode::Train, seed, H)?));
    out.push(("sigmoid".into(), check_layer(&mut Sigmoid::default(), &x, Mode::Train, seed, H)?));
    out.push((
        "dropout".into(),
        check_layer(&mut Dropout::new(0.2)?, &x, Mode::Train, seed, H)?,
    ));

    let d_in = rng.random_range(1..=6);
    let d_out = rng.random_range(1..=4);
    let mut dense = Dense::new(d_in, d_out, &mut rng);
    let x = rand_tensor(&[3, d_in], &mut rng);
    out.push(("dense".into(), check_layer(&mut dense, &x, Mode::Train, seed, H)?));

    let x = rand_tensor(&[2, 2, 6], &mut rng);
    out.push((
        "global_avg_pool".into(),
        check_layer(&mut GlobalAvgPool::default(), &x, Mode::Train, seed, H)?,
    ));

    let mut block = ResidualBlock::new(2, 2, 3, 1, 0.2, SkipKind::Auto, &mut rng)?;
    let x = rand_tensor(&[2, 2, 8], &mut rng);
    out.push(("residual_block/identity".into(), check_layer(&mut block, &x, Mode::Train, seed, H)?));
    let mut block = ResidualBlock::new(2, 3, 4, 2, 0.2, SkipKind::Auto, &mut rng)?;
    out.push(("residual_block/projection".into(), check_layer(&mut block, &x, Mode::Train, seed, H)?));

    let mut net = Sequential::new(vec![
        Box::new(Conv1d::new(2, 3, 3, 1, (1, 1), &mut rng)?),
        Box::new(BatchNorm1d::new(3)),
        Box::new(Relu::default()),
        Box::new(ResidualBlock::new(3, 3, 3, 1, 0.2, SkipKind::Auto, &mut rng)?),
        Box::new(ResidualBlock::new(3, 4, 3, 2, 0.2, SkipKind::Auto, &mut rng)?),
        Box::new(GlobalAvgPool::default()),
        Box::new(Dense::new(4, 2, &mut rng)),
    ]);
    let x = rand_tensor(&[3, 2, 10], &mut rng);
    out.push(("two_block_network".into(), check_layer(&mut net, &x, Mode::Train, seed, H)?));

    Ok(out)
}
