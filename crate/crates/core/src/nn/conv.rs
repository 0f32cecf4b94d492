use rayon::prelude::*;

use super::param::{join, Module, Param, StateMut, StateRef};
use super::{kaiming_uniform, ForwardCtx, Layer};
use crate::error::{shape_err, Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Output length of a strided convolution with `(left, right)` padding.
pub fn conv_output_len(len: usize, kernel: usize, stride: usize, padding: (usize, usize)) -> Result<usize> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be >= 1".into()));
    }
    let padded = len + padding.0 + padding.1;
    if padded < kernel {
        return Err(shape_err!(
            "input length {len} with padding {padding:?} is shorter than kernel {kernel}"
        ));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Padding that keeps the length at stride 1; the extra sample for even
/// kernels goes on the right.
pub fn same_padding(kernel: usize) -> (usize, usize) {
    let left = (kernel - 1) / 2;
    (left, kernel - 1 - left)
}

struct Geometry {
    cin: usize,
    len: usize,
    kernel: usize,
    stride: usize,
    pad_left: usize,
    out_len: usize,
}

/// Output positions unfolded at a time, keeping the row buffer cache-resident.
const TILE: usize = 64;

impl Geometry {
    fn tiles(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.out_len)
            .step_by(TILE)
            .map(|first| (first, TILE.min(self.out_len - first)))
    }

    /// Unfolds one sample `[cin, len]` into rows `[tile, cin * kernel]`:
    /// row `j` holds the receptive field of output position `first + j`.
    fn im2row(&self, x: &[f64], first: usize, rows: &mut [f64]) {
        let (len, kernel, ck) = (self.len, self.kernel, self.cin * self.kernel);
        for (j, row) in rows.chunks_mut(ck).enumerate() {
            let j = first + j;
            let start = (j * self.stride) as isize - self.pad_left as isize;
            let lo = (-start).clamp(0, kernel as isize) as usize;
            let hi = (len as isize - start).clamp(0, kernel as isize) as usize;
            for (ci, taps) in row.chunks_mut(kernel).enumerate() {
                if lo >= hi {
                    taps.fill(0.0);
                    continue;
                }
                taps[..lo].fill(0.0);
                taps[hi..].fill(0.0);
                let base = ci * len + (start + lo as isize) as usize;
                taps[lo..hi].copy_from_slice(&x[base..base + (hi - lo)]);
            }
        }
    }

    /// Adjoint of `im2row`: scatters row gradients back onto the input.
    fn row2im(&self, rows: &[f64], first: usize, dx: &mut [f64]) {
        let (len, kernel, ck) = (self.len, self.kernel, self.cin * self.kernel);
        for (j, row) in rows.chunks(ck).enumerate() {
            let j = first + j;
            let start = (j * self.stride) as isize - self.pad_left as isize;
            let lo = (-start).clamp(0, kernel as isize) as usize;
            let hi = (len as isize - start).clamp(0, kernel as isize) as usize;
            if lo >= hi {
                continue;
            }
            for (ci, taps) in row.chunks(kernel).enumerate() {
                let base = ci * len + (start + lo as isize) as usize;
                for (d, t) in dx[base..base + (hi - lo)].iter_mut().zip(&taps[lo..hi]) {
                    *d += t;
                }
            }
        }
    }
}

thread_local! {
    static SCRATCH: std::cell::RefCell<Vec<f64>> = const { std::cell::RefCell::new(Vec::new()) };
}

/// Runs `f` with a per-thread scratch buffer of `len` elements (contents unspecified).
fn with_scratch<R>(len: usize, f: impl FnOnce(&mut [f64]) -> R) -> R {
    SCRATCH.with(|cell| {
        let mut buf = cell.borrow_mut();
        if buf.len() < len {
            buf.resize(len, 0.0);
        }
        f(&mut buf[..len])
    })
}

/// `out[c, first + j] += rows[j] . w[c]` for every channel `c` and tile row `j`.
///
/// Output channels are few and `cin * kernel` rows are short, a shape where a
/// general packed GEMM spends most of its time packing; four channels share
/// each row load here.
fn rows_times_weights(rows: &[f64], weight: &[f64], ck: usize, out_len: usize, first: usize, out: &mut [f64]) {
    let cout = weight.len() / ck;
    let mut c0 = 0;
    while c0 + 4 <= cout {
        let w: [&[f64]; 4] = std::array::from_fn(|i| &weight[(c0 + i) * ck..(c0 + i + 1) * ck]);
        for (j, row) in rows.chunks_exact(ck).enumerate() {
            let d = dot4(row, w);
            for (i, v) in d.into_iter().enumerate() {
                out[(c0 + i) * out_len + first + j] += v;
            }
        }
        c0 += 4;
    }
    for c in c0..cout {
        let w = &weight[c * ck..(c + 1) * ck];
        for (j, row) in rows.chunks_exact(ck).enumerate() {
            out[c * out_len + first + j] += dot4(row, [w, w, w, w])[0];
        }
    }
}

#[inline(always)]
fn dot4(a: &[f64], w: [&[f64]; 4]) -> [f64; 4] {
    let mut acc = [[0.0f64; 4]; 4];
    let body = a.len() / 4 * 4;
    for q in (0..body).step_by(4) {
        let x = &a[q..q + 4];
        for (acc, w) in acc.iter_mut().zip(&w) {
            let y = &w[q..q + 4];
            for i in 0..4 {
                acc[i] += x[i] * y[i];
            }
        }
    }
    let mut out = [0.0; 4];
    for ((o, acc), w) in out.iter_mut().zip(&acc).zip(&w) {
        *o = acc.iter().sum::<f64>() + (body..a.len()).map(|p| a[p] * w[p]).sum::<f64>();
    }
    out
}

/// `dst[q] += sum_i coef[i] * src[i][q]` over four sources.
#[inline(always)]
fn axpy4(dst: &mut [f64], coef: [f64; 4], src: [&[f64]; 4]) {
    for (q, d) in dst.iter_mut().enumerate() {
        *d += coef[0] * src[0][q] + coef[1] * src[1][q] + coef[2] * src[2][q] + coef[3] * src[3][q];
    }
}

/// `dw[c] += sum_j dy[c, first + j] * rows[j]`.
fn weight_grad(rows: &[f64], dy: &[f64], ck: usize, out_len: usize, first: usize, dw: &mut [f64]) {
    let tile = rows.len() / ck;
    for (c, dwc) in dw.chunks_exact_mut(ck).enumerate() {
        let g = &dy[c * out_len + first..c * out_len + first + tile];
        let mut j = 0;
        while j + 4 <= tile {
            let src = std::array::from_fn(|i| &rows[(j + i) * ck..(j + i + 1) * ck]);
            axpy4(dwc, [g[j], g[j + 1], g[j + 2], g[j + 3]], src);
            j += 4;
        }
        for j in j..tile {
            for (d, r) in dwc.iter_mut().zip(&rows[j * ck..(j + 1) * ck]) {
                *d += g[j] * r;
            }
        }
    }
}

/// `drows[j] = sum_c dy[c, first + j] * w[c]`.
fn rows_grad(dy: &[f64], weight: &[f64], ck: usize, out_len: usize, first: usize, drows: &mut [f64]) {
    let cout = weight.len() / ck;
    drows.fill(0.0);
    let mut c0 = 0;
    while c0 + 4 <= cout {
        let w = std::array::from_fn(|i| &weight[(c0 + i) * ck..(c0 + i + 1) * ck]);
        for (j, row) in drows.chunks_exact_mut(ck).enumerate() {
            let coef = std::array::from_fn(|i| dy[(c0 + i) * out_len + first + j]);
            axpy4(row, coef, w);
        }
        c0 += 4;
    }
    for c in c0..cout {
        let w = &weight[c * ck..(c + 1) * ck];
        for (j, row) in drows.chunks_exact_mut(ck).enumerate() {
            let g = dy[c * out_len + first + j];
            for (d, v) in row.iter_mut().zip(w) {
                *d += g * v;
            }
        }
    }
}

fn forward_sample(g: &Geometry, x: &[f64], weight: &[f64], bias: &[f64], out: &mut [f64]) {
    let ck = g.cin * g.kernel;
    for (c, row) in out.chunks_mut(g.out_len).enumerate() {
        row.fill(bias[c]);
    }
    for (first, tile) in g.tiles() {
        with_scratch(ck * tile, |rows| {
            g.im2row(x, first, rows);
            rows_times_weights(rows, weight, ck, g.out_len, first, out);
        });
    }
}

/// Single-sample cross-correlation: `input [C_in, L]`, `weights [C_out, C_in, K]`.
pub fn conv1d_forward(
    input: &Tensor,
    weights: &Tensor,
    bias: &[f64],
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    input.expect_rank(2, "conv1d input")?;
    weights.expect_rank(3, "conv1d weights")?;
    let (cin, len) = (input.dim(0), input.dim(1));
    let (cout, wcin, kernel) = (weights.dim(0), weights.dim(1), weights.dim(2));
    if wcin != cin {
        return Err(shape_err!(
            "conv1d: input has {cin} channels, weights expect {wcin}"
        ));
    }
    if bias.len() != cout {
        return Err(shape_err!("conv1d: bias length {} != {cout}", bias.len()));
    }
    let out_len = conv_output_len(len, kernel, stride, (padding, padding))?;
    let g = Geometry {
        cin,
        len,
        kernel,
        stride,
        pad_left: padding,
        out_len,
    };
    let mut out = vec![0.0; cout * out_len];
    forward_sample(&g, input.data(), weights.data(), bias, &mut out);
    Tensor::new(vec![cout, out_len], out)
}

/// Batched 1-D convolution layer over `[N, C_in, L]`.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: Param,
    pub bias: Param,
    stride: usize,
    padding: (usize, usize),
    cache: Option<Tensor>,
}

impl Conv1d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: (usize, usize),
        rng: &mut Rng,
    ) -> Result<Self> {
        if kernel == 0 || stride == 0 || in_channels == 0 || out_channels == 0 {
            return Err(Error::InvalidArgument(format!(
                "conv1d: channels {in_channels}->{out_channels}, kernel {kernel}, stride {stride}"
            )));
        }
        let weight = kaiming_uniform(
            &[out_channels, in_channels, kernel],
            in_channels * kernel,
            rng,
        );
        Ok(Self {
            weight: Param::new(weight),
            bias: Param::new(Tensor::zeros(&[out_channels])),
            stride,
            padding,
            cache: None,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.dim(1)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.dim(0)
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.dim(2)
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn output_len(&self, len: usize) -> Result<usize> {
        conv_output_len(len, self.kernel(), self.stride, self.padding)
    }

    fn geometry(&self, len: usize) -> Result<Geometry> {
        Ok(Geometry {
            cin: self.in_channels(),
            len,
            kernel: self.kernel(),
            stride: self.stride,
            pad_left: self.padding.0,
            out_len: self.output_len(len)?,
        })
    }

    /// Backward pass that skips the input gradient, for the first layer of a network.
    pub fn backward_params(&mut self, grad_output: &Tensor) -> Result<()> {
        self.backward_impl(grad_output, false).map(|_| ())
    }

    fn backward_impl(&mut self, grad_output: &Tensor, input_grad: bool) -> Result<Option<Tensor>> {
        let input = self
            .cache
            .take()
            .ok_or_else(|| Error::State("conv1d backward without forward".into()))?;
        let (n, len) = (input.dim(0), input.dim(2));
        let g = self.geometry(len)?;
        let cout = self.out_channels();
        grad_output.expect_shape(&[n, cout, g.out_len], "conv1d grad_output")?;
        let ck = g.cin * g.kernel;
        let need_params = !self.weight.frozen || !self.bias.frozen;
        if !need_params && !input_grad {
            return Ok(None);
        }
        let weight = self.weight.value.data();
        let per_sample: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
            .into_par_iter()
            .map(|s| {
                let x = input.outer(s);
                let dy = grad_output.outer(s);
                let mut dw = Vec::new();
                if need_params {
                    dw = vec![0.0; cout * ck];
                    for (first, tile) in g.tiles() {
                        with_scratch(ck * tile, |rows| {
                            g.im2row(x, first, rows);
                            weight_grad(rows, dy, ck, g.out_len, first, &mut dw);
                        });
                    }
                }
                let mut dx = Vec::new();
                if input_grad {
                    dx = vec![0.0; g.cin * len];
                    for (first, tile) in g.tiles() {
                        with_scratch(ck * tile, |drows| {
                            rows_grad(dy, weight, ck, g.out_len, first, drows);
                            g.row2im(drows, first, &mut dx);
                        });
                    }
                }
                (dw, dx)
            })
            .collect();

        if need_params {
            let mut dw = vec![0.0; cout * ck];
            let mut db = vec![0.0; cout];
            for (s, (sample_dw, _)) in per_sample.iter().enumerate() {
                for (a, b) in dw.iter_mut().zip(sample_dw) {
                    *a += b;
                }
                for (c, row) in grad_output.outer(s).chunks(g.out_len).enumerate() {
                    db[c] += row.iter().sum::<f64>();
                }
            }
            self.weight.accumulate(&dw);
            self.bias.accumulate(&db);
        }
        if !input_grad {
            return Ok(None);
        }
        let mut dx = Vec::with_capacity(n * g.cin * len);
        for (_, sample_dx) in per_sample {
            dx.extend_from_slice(&sample_dx);
        }
        Ok(Some(Tensor::new(vec![n, g.cin, len], dx)?))
    }
}

impl Module for Conv1d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, StateRef<'_>)) {
        f(&join(prefix, "weight"), StateRef::Param(&self.weight));
        f(&join(prefix, "bias"), StateRef::Param(&self.bias));
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, StateMut<'_>)) {
        f(&join(prefix, "weight"), StateMut::Param(&mut self.weight));
        f(&join(prefix, "bias"), StateMut::Param(&mut self.bias));
    }
}

impl Layer for Conv1d {
    fn forward(&mut self, input: &Tensor, _ctx: &mut ForwardCtx<'_>) -> Result<Tensor> {
        input.expect_rank(3, "conv1d input")?;
        if input.dim(1) != self.in_channels() {
            return Err(shape_err!(
                "conv1d: input has {} channels, layer expects {}",
                input.dim(1),
                self.in_channels()
            ));
        }
        input.check_finite("conv1d input")?;
        let (n, len) = (input.dim(0), input.dim(2));
        let g = self.geometry(len)?;
        let cout = self.out_channels();
        let weight = self.weight.value.data();
        let bias = self.bias.value.data();
        let mut out = vec![0.0; n * cout * g.out_len];
        out.par_chunks_mut(cout * g.out_len)
            .enumerate()
            .for_each(|(s, o)| forward_sample(&g, input.outer(s), weight, bias, o));
        self.cache = Some(input.clone());
        Tensor::new(vec![n, cout, g.out_len], out)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        Ok(self
            .backward_impl(grad_output, true)?
            .expect("input gradient requested"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct sliding-window dot product.
    fn naive(x: &[f64], w: &[f64], stride: usize, pad: usize) -> Vec<f64> {
        let k = w.len();
        let padded: Vec<f64> = std::iter::repeat(0.0)
            .take(pad)
            .chain(x.iter().copied())
            .chain(std::iter::repeat(0.0).take(pad))
            .collect();
        (0..=(padded.len() - k) / stride)
            .map(|j| (0..k).map(|i| padded[j * stride + i] * w[i]).sum())
            .collect()
    }

    #[test]
    fn derivative_kernel_example() {
        let x = Tensor::new(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::new(vec![1, 1, 3], vec![1.0, 0.0, -1.0]).unwrap();
        let y = conv1d_forward(&x, &w, &[0.0], 1, 0).unwrap();
        assert_eq!(y.data(), naive(x.data(), w.data(), 1, 0).as_slice());
        assert_eq!(y.data(), &[-2.0, -2.0]);
    }

    #[test]
    fn unit_kernel_is_identity() {
        let data: Vec<f64> = (0..17).map(|i| (i as f64).sin()).collect();
        let x = Tensor::new(vec![1, 17], data.clone()).unwrap();
        let w = Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap();
        let y = conv1d_forward(&x, &w, &[0.0], 1, 0).unwrap();
        assert_eq!(y.data(), data.as_slice());
    }

    #[test]
    fn length_formula() {
        assert_eq!(conv_output_len(4096, 16, 1, (8, 8)).unwrap(), 4097);
        assert_eq!(conv_output_len(4096, 16, 4, same_padding(16)).unwrap(), 1024);
        assert!(conv_output_len(3, 5, 1, (0, 0)).is_err());
    }

    #[test]
    fn strided_padded_matches_naive() {
        let x: Vec<f64> = (0..23).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let w = vec![0.5, -1.0, 2.0, 0.25];
        let xt = Tensor::new(vec![1, 23], x.clone()).unwrap();
        let wt = Tensor::new(vec![1, 1, 4], w.clone()).unwrap();
        for stride in 1..4 {
            for pad in 0..3 {
                let y = conv1d_forward(&xt, &wt, &[0.0], stride, pad).unwrap();
                let want = naive(&x, &w, stride, pad);
                assert_eq!(y.len(), want.len());
                for (a, b) in y.data().iter().zip(&want) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn channel_mismatch_is_a_shape_error() {
        let x = Tensor::zeros(&[2, 8]);
        let w = Tensor::zeros(&[1, 3, 2]);
        assert!(matches!(
            conv1d_forward(&x, &w, &[0.0], 1, 0),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn backward_without_forward_fails() {
        let mut rng = crate::rng::rng_for(0, &[]);
        let mut c = Conv1d::new(1, 1, 3, 1, (1, 1), &mut rng).unwrap();
        assert!(matches!(
            c.backward(&Tensor::zeros(&[1, 1, 4])),
            Err(Error::State(_))
        ));
    }

    /// Several channels (including a remainder past the 4-wide blocks) and
    /// outputs spanning more than one tile, against direct sums.
    #[test]
    fn multichannel_tiles_match_direct_sums() {
        let (cin, cout, kernel, stride, len) = (3, 6, 5, 2, 301);
        let mut rng = crate::rng::rng_for(4, &[]);
        let mut conv = Conv1d::new(cin, cout, kernel, stride, same_padding(kernel), &mut rng).unwrap();
        let x: Vec<f64> = (0..cin * len).map(|i| (i as f64 * 0.13).sin()).collect();
        let xt = Tensor::new(vec![1, cin, len], x.clone()).unwrap();
        let y = conv.forward(&xt, &mut ForwardCtx::eval()).unwrap();
        let out_len = y.dim(2);
        assert!(out_len > TILE);
        let (w, b) = (conv.weight.value.data().to_vec(), conv.bias.value.data().to_vec());
        let pad = same_padding(kernel).0 as isize;
        let at = |c: usize, p: isize| if p < 0 || p >= len as isize { 0.0 } else { x[c * len + p as usize] };
        for co in 0..cout {
            for j in 0..out_len {
                let mut want = b[co];
                for ci in 0..cin {
                    for t in 0..kernel {
                        want += w[(co * cin + ci) * kernel + t] * at(ci, (j * stride + t) as isize - pad);
                    }
                }
                assert!((y.data()[co * out_len + j] - want).abs() < 1e-12);
            }
        }

        let dy: Vec<f64> = (0..cout * out_len).map(|i| (i as f64 * 0.71).cos()).collect();
        let dx = conv.backward(&Tensor::new(vec![1, cout, out_len], dy.clone()).unwrap()).unwrap();
        let mut want_dx = vec![0.0; cin * len];
        let mut want_dw = vec![0.0; w.len()];
        for co in 0..cout {
            for j in 0..out_len {
                let g = dy[co * out_len + j];
                for ci in 0..cin {
                    for t in 0..kernel {
                        let p = (j * stride + t) as isize - pad;
                        if p >= 0 && p < len as isize {
                            want_dx[ci * len + p as usize] += g * w[(co * cin + ci) * kernel + t];
                            want_dw[(co * cin + ci) * kernel + t] += g * x[ci * len + p as usize];
                        }
                    }
                }
            }
        }
        for (a, b) in dx.data().iter().zip(&want_dx) {
            assert!((a - b).abs() < 1e-10);
        }
        for (a, b) in conv.weight.grad.data().iter().zip(&want_dw) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
