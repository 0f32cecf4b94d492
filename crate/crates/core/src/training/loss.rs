use crate::error::{shape_err, Result};
use crate::mtlr::{augment, l2_penalty, record_nll, EncodedLabel};
use crate::tensor::Tensor;

/// Binary cross-entropy on logits, summed over outputs and averaged over the
/// batch; returns the loss and its gradient with respect to the logits.
pub fn bce_with_logits(logits: &Tensor, targets: &Tensor) -> Result<(f64, Tensor)> {
    if logits.shape() != targets.shape() || logits.ndim() != 2 {
        return Err(shape_err!(
            "logits {:?} and targets {:?} must be equal [N, K]",
            logits.shape(),
            targets.shape()
        ));
    }
    let n = logits.dim(0) as f64;
    let mut grad = Tensor::zeros(logits.shape());
    let mut total = 0.0;
    for ((g, &z), &y) in grad.data_mut().iter_mut().zip(logits.data()).zip(targets.data()) {
        total += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        *g = (crate::nn::sigmoid(z) - y) / n;
    }
    Ok((total / n, grad))
}

/// Mean MTLR negative log-likelihood over the batch plus
/// `C / (2 n_train) * ||theta||^2` (intercepts excluded).
///
/// Returns the loss, `d loss / d theta` and `d loss / d features`.
pub fn mtlr_loss(
    theta: &Tensor,
    features: &Tensor,
    labels: &[EncodedLabel],
    c: f64,
    n_train: usize,
) -> Result<(f64, Tensor, Tensor)> {
    let n = features.dim(0);
    if labels.len() != n {
        return Err(shape_err!("{n} feature rows but {} labels", labels.len()));
    }
    let h = features.dim(1);
    let mut dtheta = Tensor::zeros(theta.shape());
    let mut dz = Tensor::zeros(features.shape());
    let mut total = 0.0;
    let mut dx = vec![0.0; h + 1];
    for (i, label) in labels.iter().enumerate() {
        dx.fill(0.0);
        total += record_nll(theta, &augment(features.row(i)), *label, Some(dtheta.data_mut()), Some(&mut dx))?;
        for (g, d) in dz.row_mut(i).iter_mut().zip(&dx[..h]) {
            *g = d / n as f64;
        }
    }
    dtheta.data_mut().iter_mut().for_each(|g| *g /= n as f64);
    let scale = c / n_train.max(1) as f64;
    let pen = l2_penalty(theta, scale, Some(dtheta.data_mut()));
    Ok((total / n as f64 + pen, dtheta, dz))
}
