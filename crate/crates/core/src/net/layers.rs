//! Layer kernels and their exact derivatives.

use super::params::{BatchNormParams, Conv2dParams};
use super::tensor::FeatureMap;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const BN_EPSILON: f64 = 1e-5;
/// Weight of the previous running statistic in the exponential average.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running averages updated.
    Train,
    /// Running statistics only; samples are independent.
    Infer,
}

const TAPS: usize = 9;

/// Unrolls 3×3 zero-padded neighbourhoods: row `i*9 + ky*3 + kx`, column `y*w + x`.
fn im2col<T: Real>(input: &FeatureMap<T>) -> Vec<T> {
    let (h, w) = (input.height, input.width);
    let p = h * w;
    let mut col = vec![T::zero(); input.channels * TAPS * p];
    for i in 0..input.channels {
        let plane = input.plane(i);
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[(i * TAPS + ky * 3 + kx) * p..(i * TAPS + ky * 3 + kx + 1) * p];
                let (y_lo, y_hi) = (usize::from(ky == 0), h - usize::from(ky == 2));
                let (x_lo, x_hi) = (usize::from(kx == 0), w - usize::from(kx == 2));
                for y in y_lo..y_hi {
                    let sy = y + ky - 1;
                    let dst = &mut row[y * w + x_lo..y * w + x_hi];
                    let src = &plane[sy * w + x_lo + kx - 1..sy * w + x_hi + kx - 1];
                    dst.copy_from_slice(src);
                }
            }
        }
    }
    col
}

/// Scatters column gradients back onto the input grid (adjoint of `im2col`).
fn col2im<T: Real>(col: &[T], channels: usize, h: usize, w: usize) -> FeatureMap<T> {
    let p = h * w;
    let mut out = FeatureMap::zeros(channels, h, w);
    for i in 0..channels {
        let plane = out.plane_mut(i);
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[(i * TAPS + ky * 3 + kx) * p..(i * TAPS + ky * 3 + kx + 1) * p];
                let (y_lo, y_hi) = (usize::from(ky == 0), h - usize::from(ky == 2));
                let (x_lo, x_hi) = (usize::from(kx == 0), w - usize::from(kx == 2));
                for y in y_lo..y_hi {
                    let sy = y + ky - 1;
                    let src = &row[y * w + x_lo..y * w + x_hi];
                    let dst = &mut plane[sy * w + x_lo + kx - 1..sy * w + x_hi + kx - 1];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += *s;
                    }
                }
            }
        }
    }
    out
}

fn check_conv_input<T: Real>(input: &FeatureMap<T>, params: &Conv2dParams<T>) -> Result<()> {
    if input.channels != params.in_channels {
        return Err(Error::shape(format!(
            "conv expects {} input channels, got {}",
            params.in_channels, input.channels
        )));
    }
    Ok(())
}

/// 3×3 cross-correlation, stride 1, zero padding 1.
pub fn conv2d<T: Real>(input: &FeatureMap<T>, params: &Conv2dParams<T>) -> Result<FeatureMap<T>> {
    check_conv_input(input, params)?;
    let p = input.plane_len();
    let k = params.in_channels * TAPS;
    let col = im2col(input);
    let mut out = FeatureMap::zeros(params.out_channels, input.height, input.width);
    for (o, &b) in params.bias.iter().enumerate() {
        out.plane_mut(o).fill(b);
    }
    T::gemm(params.out_channels, k, p, T::one(), &params.weight, false, &col, false, T::one(), &mut out.data);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub input: Option<FeatureMap<T>>,
}

pub fn conv2d_backward<T: Real>(
    input: &FeatureMap<T>,
    params: &Conv2dParams<T>,
    grad_out: &FeatureMap<T>,
    want_input_grad: bool,
) -> Result<ConvGrads<T>> {
    check_conv_input(input, params)?;
    if grad_out.shape() != (params.out_channels, input.height, input.width) {
        return Err(Error::shape("conv output gradient has the wrong shape"));
    }
    let p = input.plane_len();
    let k = params.in_channels * TAPS;
    let col = im2col(input);
    let mut weight = vec![T::zero(); params.out_channels * k];
    T::gemm(params.out_channels, p, k, T::one(), &grad_out.data, false, &col, true, T::zero(), &mut weight);
    let bias = (0..params.out_channels).map(|o| grad_out.plane(o).iter().copied().sum()).collect();
    let input_grad = want_input_grad.then(|| {
        let mut dcol = vec![T::zero(); k * p];
        T::gemm(k, params.out_channels, p, T::one(), &params.weight, true, &grad_out.data, false, T::zero(), &mut dcol);
        col2im(&dcol, params.in_channels, input.height, input.width)
    });
    Ok(ConvGrads { weight, bias, input: input_grad })
}

/// 2×2 max pooling, stride 2. Also returns, per output value, the flat input
/// index it came from (first maximum in scan order on ties).
pub fn maxpool2<T: Real>(input: &FeatureMap<T>) -> Result<(FeatureMap<T>, Vec<u32>)> {
    if input.height % 2 != 0 || input.width % 2 != 0 {
        return Err(Error::shape(format!("max-pool needs even dims, got {}x{}", input.height, input.width)));
    }
    let (oh, ow) = (input.height / 2, input.width / 2);
    let mut out = FeatureMap::zeros(input.channels, oh, ow);
    let mut argmax = vec![0u32; out.data.len()];
    for c in 0..input.channels {
        for y in 0..oh {
            for x in 0..ow {
                let mut best_idx = (c * input.height + 2 * y) * input.width + 2 * x;
                let mut best = input.data[best_idx];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = (c * input.height + 2 * y + dy) * input.width + 2 * x + dx;
                    if input.data[idx] > best {
                        best = input.data[idx];
                        best_idx = idx;
                    }
                }
                let o = (c * oh + y) * ow + x;
                out.data[o] = best;
                argmax[o] = best_idx as u32;
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool2_backward<T: Real>(
    grad_out: &FeatureMap<T>,
    argmax: &[u32],
    input_shape: (usize, usize, usize),
) -> Result<FeatureMap<T>> {
    let (c, h, w) = input_shape;
    if argmax.len() != grad_out.data.len() || grad_out.shape() != (c, h / 2, w / 2) {
        return Err(Error::shape("max-pool gradient does not match recorded argmax"));
    }
    let mut out = FeatureMap::zeros(c, h, w);
    for (g, &idx) in grad_out.data.iter().zip(argmax) {
        out.data[idx as usize] += *g;
    }
    Ok(out)
}

/// Nearest-neighbour ×2 upsampling.
pub fn upsample2<T: Real>(input: &FeatureMap<T>) -> FeatureMap<T> {
    let (h, w) = (input.height * 2, input.width * 2);
    let mut out = FeatureMap::zeros(input.channels, h, w);
    for c in 0..input.channels {
        let src = input.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = src[(y / 2) * input.width + x / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward<T: Real>(grad_out: &FeatureMap<T>) -> Result<FeatureMap<T>> {
    if grad_out.height % 2 != 0 || grad_out.width % 2 != 0 {
        return Err(Error::shape("upsample gradient must have even dims"));
    }
    let (h, w) = (grad_out.height / 2, grad_out.width / 2);
    let mut out = FeatureMap::zeros(grad_out.channels, h, w);
    for c in 0..grad_out.channels {
        let src = grad_out.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..grad_out.height {
            for x in 0..grad_out.width {
                dst[(y / 2) * w + x / 2] += src[y * grad_out.width + x];
            }
        }
    }
    Ok(out)
}

pub fn relu<T: Real>(input: &FeatureMap<T>) -> FeatureMap<T> {
    let mut out = input.clone();
    out.data.iter_mut().for_each(|v| *v = v.max(T::zero()));
    out
}

/// Gradient through ReLU given its output (positive exactly where it passed).
pub fn relu_backward<T: Real>(output: &FeatureMap<T>, grad_out: &FeatureMap<T>) -> FeatureMap<T> {
    let mut g = grad_out.clone();
    for (d, &y) in g.data.iter_mut().zip(&output.data) {
        if y <= T::zero() {
            *d = T::zero();
        }
    }
    g
}

#[derive(Clone, Debug)]
pub struct BatchNormOutput<T> {
    pub output: Vec<FeatureMap<T>>,
    /// `x̂ = (x - μ) / sqrt(σ² + ε)`, kept for the backward pass in train mode.
    pub normalized: Option<Vec<FeatureMap<T>>>,
    pub inv_std: Vec<T>,
    /// Updated `(running_mean, running_var)` in train mode.
    pub running: Option<(Vec<T>, Vec<T>)>,
}

fn check_batch<T: Real>(batch: &[FeatureMap<T>], channels: usize) -> Result<()> {
    let first = batch.first().ok_or_else(|| Error::shape("empty batch"))?;
    if first.channels != channels || batch.iter().any(|m| !m.same_shape(first)) {
        return Err(Error::shape("batch-norm inputs must share a shape matching the layer"));
    }
    Ok(())
}

pub fn batchnorm<T: Real>(
    batch: &[FeatureMap<T>],
    params: &BatchNormParams<T>,
    mode: Mode,
    momentum: T,
) -> Result<BatchNormOutput<T>> {
    let channels = params.gamma.len();
    check_batch(batch, channels)?;
    let eps = T::lit(BN_EPSILON);
    let mut output: Vec<FeatureMap<T>> = batch.to_vec();
    match mode {
        Mode::Infer => {
            let inv_std: Vec<T> = params.running_var.iter().map(|&v| (v + eps).sqrt().recip()).collect();
            for map in &mut output {
                for c in 0..channels {
                    let (m, s, g, b) = (params.running_mean[c], inv_std[c], params.gamma[c], params.beta[c]);
                    map.plane_mut(c).iter_mut().for_each(|v| *v = g * (*v - m) * s + b);
                }
            }
            Ok(BatchNormOutput { output, normalized: None, inv_std, running: None })
        }
        Mode::Train => {
            if batch.len() < 2 {
                return Err(Error::validation("batch-norm training needs at least 2 samples"));
            }
            let count = T::from_usize_lossy(batch.len() * batch[0].plane_len());
            let mut normalized = batch.to_vec();
            let mut inv_std = Vec::with_capacity(channels);
            let mut run_mean = params.running_mean.clone();
            let mut run_var = params.running_var.clone();
            for c in 0..channels {
                let mean = batch.iter().map(|m| m.plane(c).iter().copied().sum::<T>()).sum::<T>() / count;
                let var = batch
                    .iter()
                    .map(|m| m.plane(c).iter().map(|&v| (v - mean) * (v - mean)).sum::<T>())
                    .sum::<T>()
                    / count;
                let s = (var + eps).sqrt().recip();
                inv_std.push(s);
                let (g, b) = (params.gamma[c], params.beta[c]);
                for (xh, y) in normalized.iter_mut().zip(output.iter_mut()) {
                    for (n, o) in xh.plane_mut(c).iter_mut().zip(y.plane_mut(c)) {
                        *n = (*n - mean) * s;
                        *o = g * *n + b;
                    }
                }
                run_mean[c] = momentum * run_mean[c] + (T::one() - momentum) * mean;
                run_var[c] = momentum * run_var[c] + (T::one() - momentum) * var;
            }
            Ok(BatchNormOutput { output, normalized: Some(normalized), inv_std, running: Some((run_mean, run_var)) })
        }
    }
}

/// Returns `(dx, dγ, dβ)` for a train-mode batch-norm, including the paths
/// through the batch mean and variance.
pub fn batchnorm_backward<T: Real>(
    normalized: &[FeatureMap<T>],
    inv_std: &[T],
    gamma: &[T],
    grad_out: &[FeatureMap<T>],
) -> Result<(Vec<FeatureMap<T>>, Vec<T>, Vec<T>)> {
    check_batch(normalized, gamma.len())?;
    if grad_out.len() != normalized.len() || grad_out.iter().zip(normalized).any(|(g, n)| !g.same_shape(n)) {
        return Err(Error::shape("batch-norm gradient does not match cached activations"));
    }
    let channels = gamma.len();
    let count = T::from_usize_lossy(normalized.len() * normalized[0].plane_len());
    let mut dx: Vec<FeatureMap<T>> = grad_out.to_vec();
    let mut dgamma = Vec::with_capacity(channels);
    let mut dbeta = Vec::with_capacity(channels);
    for c in 0..channels {
        let mut sum_dy = T::zero();
        let mut sum_dy_xh = T::zero();
        for (g, n) in grad_out.iter().zip(normalized) {
            for (&dy, &xh) in g.plane(c).iter().zip(n.plane(c)) {
                sum_dy += dy;
                sum_dy_xh += dy * xh;
            }
        }
        dgamma.push(sum_dy_xh);
        dbeta.push(sum_dy);
        let scale = gamma[c] * inv_std[c] / count;
        for (d, n) in dx.iter_mut().zip(normalized) {
            for (v, &xh) in d.plane_mut(c).iter_mut().zip(n.plane(c)) {
                *v = scale * (count * *v - sum_dy - xh * sum_dy_xh);
            }
        }
    }
    Ok((dx, dgamma, dbeta))
}

/// Per-pixel softmax over channels, max-subtracted.
pub fn softmax_pixelwise<T: Real>(logits: &FeatureMap<T>) -> FeatureMap<T> {
    let p = logits.plane_len();
    let mut out = logits.clone();
    for i in 0..p {
        let max = (0..logits.channels).map(|c| logits.data[c * p + i]).fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for c in 0..logits.channels {
            let e = (logits.data[c * p + i] - max).exp();
            out.data[c * p + i] = e;
            total += e;
        }
        for c in 0..logits.channels {
            out.data[c * p + i] /= total;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureMap<f64> {
        FeatureMap::new(c, h, w, (0..c * h * w).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).unwrap()
    }

    fn random_conv(rng: &mut ChaCha8Rng, i: usize, o: usize) -> Conv2dParams<f64> {
        Conv2dParams {
            in_channels: i,
            out_channels: o,
            weight: (0..o * i * 9).map(|_| rng.random::<f64>() - 0.5).collect(),
            bias: (0..o).map(|_| rng.random::<f64>() - 0.5).collect(),
        }
    }

    /// Direct quadruple loop over output channel, pixel, input channel and tap.
    fn naive_conv(input: &FeatureMap<f64>, p: &Conv2dParams<f64>) -> FeatureMap<f64> {
        let (h, w) = (input.height as isize, input.width as isize);
        let mut out = FeatureMap::zeros(p.out_channels, input.height, input.width);
        for o in 0..p.out_channels {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = p.bias[o];
                    for i in 0..p.in_channels {
                        for ky in 0..3isize {
                            for kx in 0..3isize {
                                let (sy, sx) = (y + ky - 1, x + kx - 1);
                                if sy >= 0 && sy < h && sx >= 0 && sx < w {
                                    let wv = p.weight[((o * p.in_channels + i) * 3 + ky as usize) * 3 + kx as usize];
                                    acc += wv * input.at(i, sy as usize, sx as usize);
                                }
                            }
                        }
                    }
                    out.data[(o * input.height + y as usize) * input.width + x as usize] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let input = random_map(&mut rng, 1, 6, 5);
        let mut weight = vec![0.0; 9];
        weight[4] = 1.0;
        let p = Conv2dParams { in_channels: 1, out_channels: 1, weight, bias: vec![0.0] };
        assert_eq!(conv2d(&input, &p).unwrap(), input);
    }

    #[test]
    fn bias_only_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let input = random_map(&mut rng, 2, 4, 4);
        let p = Conv2dParams { in_channels: 2, out_channels: 3, weight: vec![0.0; 54], bias: vec![0.7; 3] };
        assert!(conv2d(&input, &p).unwrap().data.iter().all(|&v| v == 0.7));
    }

    #[test]
    fn conv_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input = random_map(&mut rng, 1, 5, 5);
        let p = random_conv(&mut rng, 1, 1);
        let (a, b) = (conv2d(&input, &p).unwrap(), naive_conv(&input, &p));
        assert!(a.data.iter().zip(&b.data).all(|(x, y)| (x - y).abs() <= 1e-12));

        let input = random_map(&mut rng, 3, 7, 4);
        let p = random_conv(&mut rng, 3, 5);
        let (a, b) = (conv2d(&input, &p).unwrap(), naive_conv(&input, &p));
        assert!(a.data.iter().zip(&b.data).all(|(x, y)| (x - y).abs() <= 1e-12));
    }

    #[test]
    fn conv_channel_mismatch_is_shape_error() {
        let input = FeatureMap::<f64>::zeros(2, 4, 4);
        let p = Conv2dParams { in_channels: 1, out_channels: 1, weight: vec![0.0; 9], bias: vec![0.0] };
        assert!(matches!(conv2d(&input, &p), Err(Error::Shape(_))));
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let input = random_map(&mut rng, 2, 5, 6);
        let p = random_conv(&mut rng, 2, 3);
        let seed = random_map(&mut rng, 3, 5, 6);
        // Scalar objective: <seed, conv(input)>.
        let objective = |inp: &FeatureMap<f64>, q: &Conv2dParams<f64>| -> f64 {
            conv2d(inp, q).unwrap().data.iter().zip(&seed.data).map(|(a, b)| a * b).sum()
        };
        let g = conv2d_backward(&input, &p, &seed, true).unwrap();
        let h = 1e-6;
        for i in 0..p.weight.len() {
            let (mut up, mut dn) = (p.clone(), p.clone());
            up.weight[i] += h;
            dn.weight[i] -= h;
            let fd = (objective(&input, &up) - objective(&input, &dn)) / (2.0 * h);
            assert!((fd - g.weight[i]).abs() < 1e-7);
        }
        for o in 0..3 {
            let sum: f64 = seed.plane(o).iter().sum();
            assert!((sum - g.bias[o]).abs() < 1e-12);
        }
        let gi = g.input.unwrap();
        for i in 0..input.data.len() {
            let (mut up, mut dn) = (input.clone(), input.clone());
            up.data[i] += h;
            dn.data[i] -= h;
            let fd = (objective(&up, &p) - objective(&dn, &p)) / (2.0 * h);
            assert!((fd - gi.data[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn maxpool_cases() {
        let constant = FeatureMap::new(1, 4, 6, vec![3.0f64; 24]).unwrap();
        let (out, _) = maxpool2(&constant).unwrap();
        assert_eq!(out.shape(), (1, 2, 3));
        assert!(out.data.iter().all(|&v| v == 3.0));

        let block = FeatureMap::new(1, 2, 2, vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let (out, arg) = maxpool2(&block).unwrap();
        assert_eq!(out.data, vec![4.0]);
        assert_eq!(arg, vec![3]);

        assert!(matches!(maxpool2(&FeatureMap::<f64>::zeros(1, 3, 4)), Err(Error::Shape(_))));
    }

    #[test]
    fn maxpool_matches_window_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let input = random_map(&mut rng, 1, 8, 8);
        let (out, arg) = maxpool2(&input).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let window = [(0, 0), (0, 1), (1, 0), (1, 1)].map(|(dy, dx)| input.at(0, 2 * y + dy, 2 * x + dx));
                let max = window.iter().copied().fold(f64::MIN, f64::max);
                assert_eq!(out.at(0, y, x), max);
                assert_eq!(input.data[arg[y * 4 + x] as usize], max);
            }
        }
        let grad = FeatureMap::new(1, 4, 4, vec![1.0; 16]).unwrap();
        let back = maxpool2_backward(&grad, &arg, input.shape()).unwrap();
        assert_eq!(back.data.iter().sum::<f64>(), 16.0);
        assert!(arg.iter().all(|&i| back.data[i as usize] == 1.0));
    }

    #[test]
    fn upsample_cases() {
        let x = FeatureMap::new(1, 2, 2, vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let up = upsample2(&x);
        assert_eq!(up.data, vec![1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]);
        let c = FeatureMap::new(2, 3, 1, vec![5.0f64; 6]).unwrap();
        assert!(upsample2(&c).data.iter().all(|&v| v == 5.0));
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let m = random_map(&mut rng, 3, 3, 5);
            assert_eq!(maxpool2(&upsample2(&m)).unwrap().0, m);
        }
        let g = upsample2_backward(&FeatureMap::new(1, 4, 4, vec![1.0f64; 16]).unwrap()).unwrap();
        assert_eq!(g.data, vec![4.0; 4]);
    }

    #[test]
    fn relu_cases() {
        let x = FeatureMap::new(1, 1, 3, vec![-1.0f64, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data, vec![0.0, 0.0, 2.0]);
        let neg = FeatureMap::new(1, 2, 2, vec![-1.0f64, -2.0, -0.5, -9.0]).unwrap();
        assert!(relu(&neg).data.iter().all(|&v| v == 0.0));
        assert_eq!(relu(&relu(&x)), relu(&x));
    }

    fn bn_params(c: usize, gamma: f64, beta: f64) -> BatchNormParams<f64> {
        BatchNormParams {
            gamma: vec![gamma; c],
            beta: vec![beta; c],
            running_mean: vec![0.0; c],
            running_var: vec![1.0; c],
        }
    }

    #[test]
    fn batchnorm_fixed_points() {
        // Per-channel zero mean, unit variance already.
        let a = FeatureMap::new(1, 1, 2, vec![1.0f64, -1.0]).unwrap();
        let b = FeatureMap::new(1, 1, 2, vec![-1.0f64, 1.0]).unwrap();
        let out = batchnorm(&[a.clone(), b.clone()], &bn_params(1, 1.0, 0.0), Mode::Train, 0.9).unwrap();
        for (o, i) in out.output.iter().zip([&a, &b]) {
            assert!(o.data.iter().zip(&i.data).all(|(x, y)| (x - y).abs() <= 1e-4));
        }

        let c = FeatureMap::new(1, 2, 2, vec![3.0f64; 4]).unwrap();
        let out = batchnorm(&[c.clone(), c], &bn_params(1, 1.0, 5.0), Mode::Train, 0.9).unwrap();
        assert!(out.output.iter().all(|m| m.data.iter().all(|&v| v == 5.0)));
    }

    #[test]
    fn batchnorm_output_statistics_and_running_update() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let batch: Vec<_> = (0..3).map(|_| random_map(&mut rng, 2, 4, 5).cast::<f64>()).collect();
        let batch: Vec<_> = batch
            .into_iter()
            .map(|mut m| {
                m.data.iter_mut().for_each(|v| *v = *v * 7.0 + 3.0);
                m
            })
            .collect();
        let out = batchnorm(&batch, &bn_params(2, 1.0, 0.0), Mode::Train, 0.9).unwrap();
        for c in 0..2 {
            let vals: Vec<f64> = out.output.iter().flat_map(|m| m.plane(c).to_vec()).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() <= 1e-10);
            assert!((var - 1.0).abs() <= 1e-3);

            let raw: Vec<f64> = batch.iter().flat_map(|m| m.plane(c).to_vec()).collect();
            let rm = raw.iter().sum::<f64>() / n;
            let (run_mean, _) = out.running.as_ref().unwrap();
            assert!((run_mean[c] - 0.1 * rm).abs() < 1e-12);
        }
    }

    #[test]
    fn batchnorm_rejects_single_sample_training() {
        let m = FeatureMap::<f64>::zeros(1, 2, 2);
        assert!(matches!(batchnorm(&[m.clone()], &bn_params(1, 1.0, 0.0), Mode::Train, 0.9), Err(Error::Validation(_))));
        assert!(batchnorm(&[m], &bn_params(1, 1.0, 0.0), Mode::Infer, 0.9).is_ok());
    }

    #[test]
    fn batchnorm_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let batch: Vec<_> = (0..2).map(|_| random_map(&mut rng, 2, 3, 3)).collect();
        let seeds: Vec<_> = (0..2).map(|_| random_map(&mut rng, 2, 3, 3)).collect();
        let mut params = bn_params(2, 1.3, -0.2);
        params.gamma[1] = 0.6;
        let objective = |b: &[FeatureMap<f64>], p: &BatchNormParams<f64>| -> f64 {
            let out = batchnorm(b, p, Mode::Train, 0.9).unwrap();
            out.output.iter().zip(&seeds).map(|(o, s)| o.data.iter().zip(&s.data).map(|(a, b)| a * b).sum::<f64>()).sum()
        };
        let fwd = batchnorm(&batch, &params, Mode::Train, 0.9).unwrap();
        let (dx, dg, db) =
            batchnorm_backward(fwd.normalized.as_ref().unwrap(), &fwd.inv_std, &params.gamma, &seeds).unwrap();
        let h = 1e-6;
        for s in 0..2 {
            for i in 0..batch[s].data.len() {
                let (mut up, mut dn) = (batch.clone(), batch.clone());
                up[s].data[i] += h;
                dn[s].data[i] -= h;
                let fd = (objective(&up, &params) - objective(&dn, &params)) / (2.0 * h);
                assert!((fd - dx[s].data[i]).abs() < 1e-7, "{fd} vs {}", dx[s].data[i]);
            }
        }
        for c in 0..2 {
            let (mut up, mut dn) = (params.clone(), params.clone());
            up.gamma[c] += h;
            dn.gamma[c] -= h;
            assert!(((objective(&batch, &up) - objective(&batch, &dn)) / (2.0 * h) - dg[c]).abs() < 1e-7);
            let (mut up, mut dn) = (params.clone(), params.clone());
            up.beta[c] += h;
            dn.beta[c] -= h;
            assert!(((objective(&batch, &up) - objective(&batch, &dn)) / (2.0 * h) - db[c]).abs() < 1e-7);
        }
    }

    #[test]
    fn softmax_cases() {
        let eq = FeatureMap::new(2, 1, 1, vec![0.3f64, 0.3]).unwrap();
        assert_eq!(softmax_pixelwise(&eq).data, vec![0.5, 0.5]);
        let l = FeatureMap::new(2, 1, 1, vec![3f64.ln(), 0.0]).unwrap();
        let p = softmax_pixelwise(&l);
        assert!((p.data[0] - 0.75).abs() < 1e-15 && (p.data[1] - 0.25).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = random_map(&mut rng, 2, 3, 3);
        let mut shifted = m.clone();
        for i in 0..9 {
            shifted.data[i] += i as f64 * 10.0;
            shifted.data[9 + i] += i as f64 * 10.0;
        }
        let (a, b) = (softmax_pixelwise(&m), softmax_pixelwise(&shifted));
        assert!(a.data.iter().zip(&b.data).all(|(x, y)| (x - y).abs() < 1e-12));
        let big = FeatureMap::new(2, 1, 1, vec![1000.0f64, -1000.0]).unwrap();
        assert_eq!(softmax_pixelwise(&big).data, vec![1.0, 0.0]);
    }
}
