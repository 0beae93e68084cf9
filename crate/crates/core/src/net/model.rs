//! Whole-network forward and backward passes.

use rayon::prelude::*;

use super::arch::{ArchitectureSpec, LayerKind};
use super::layers::{
    batchnorm, batchnorm_backward, conv2d, conv2d_backward, maxpool2, maxpool2_backward, relu, relu_backward,
    softmax_pixelwise, upsample2, upsample2_backward, Mode, BN_MOMENTUM,
};
use super::params::{NetworkGrads, NetworkParams};
use super::tensor::{crop_to, pad_to_multiple, FeatureMap};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::volgrid::Image2D;

#[derive(Clone, Debug)]
enum StepCache<T> {
    Conv {
        input: Vec<FeatureMap<T>>,
        normalized: Option<Vec<FeatureMap<T>>>,
        inv_std: Vec<T>,
        activated: Option<Vec<FeatureMap<T>>>,
    },
    Pool {
        argmax: Vec<Vec<u32>>,
        input_shape: (usize, usize, usize),
    },
    Up,
}

/// Activations retained by a train-mode forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    arch: ArchitectureSpec,
    fingerprint: u64,
    batch: usize,
    height: usize,
    width: usize,
    steps: Vec<StepCache<T>>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput<T> {
    pub logits: Vec<FeatureMap<T>>,
    /// Present in train mode only.
    pub cache: Option<ForwardCache<T>>,
    /// Updated `(running_mean, running_var)` per batch-norm, train mode only.
    pub running: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Real> ForwardCache<T> {
    /// Hash of every ReLU on/off state and max-pool winner. Two forward passes
    /// with equal signatures lie in the same smooth piece of the network.
    pub fn activation_signature(&self) -> u64 {
        let mut h = Fnv::new();
        for step in &self.steps {
            match step {
                StepCache::Conv { activated: Some(maps), .. } => {
                    for m in maps {
                        for chunk in m.data.chunks(64) {
                            let bits = chunk.iter().enumerate().fold(0u64, |acc, (i, v)| acc | (u64::from(*v > T::zero()) << i));
                            h.feed(bits);
                        }
                    }
                }
                StepCache::Pool { argmax, .. } => argmax.iter().flatten().for_each(|&i| h.feed(u64::from(i))),
                _ => {}
            }
        }
        h.0
    }
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    fn feed(&mut self, v: u64) {
        self.0 = (self.0 ^ v).wrapping_mul(0x0000_0100_0000_01b3);
    }
}

/// FNV-1a over the bit patterns of every parameter.
fn fingerprint<T: Real>(params: &NetworkParams<T>) -> u64 {
    let mut h = Fnv::new();
    for t in params.trainable() {
        for v in t {
            h.feed(v.to_f64().unwrap_or(f64::NAN).to_bits());
        }
    }
    h.0
}

fn check_inputs<T: Real>(arch: &ArchitectureSpec, images: &[FeatureMap<T>]) -> Result<(usize, usize)> {
    let first = images.first().ok_or_else(|| Error::shape("empty input batch"))?;
    if images.iter().any(|m| !m.same_shape(first)) {
        return Err(Error::shape("all images in a batch must share one shape"));
    }
    if first.channels != arch.in_channels {
        return Err(Error::shape(format!("network takes {} input channel(s)", arch.in_channels)));
    }
    let m = ArchitectureSpec::SIZE_MULTIPLE;
    if first.height % m != 0 || first.width % m != 0 {
        return Err(Error::shape(format!(
            "input {}x{} must be padded to multiples of {m}",
            first.height, first.width
        )));
    }
    Ok((first.height, first.width))
}

/// Runs the full layer schedule. Returns raw two-channel logits.
pub fn forward<T: Real>(
    arch: &ArchitectureSpec,
    params: &NetworkParams<T>,
    images: &[FeatureMap<T>],
    mode: Mode,
) -> Result<ForwardOutput<T>> {
    params.check_arch(arch)?;
    let (height, width) = check_inputs(arch, images)?;
    let train = mode == Mode::Train;
    let momentum = T::lit(BN_MOMENTUM);
    let mut acts: Vec<FeatureMap<T>> = images.to_vec();
    let mut steps = Vec::new();
    let mut running = Vec::new();

    for layer in arch.layers() {
        match layer {
            LayerKind::Conv { conv, activated, .. } => {
                let p = &params.convs[conv];
                let out: Result<Vec<_>> = acts.par_iter().map(|x| conv2d(x, p)).collect();
                let mut out = out?;
                let mut normalized = None;
                let mut inv_std = Vec::new();
                let mut relu_out = None;
                if activated {
                    let bn = batchnorm(&out, &params.norms[conv], mode, momentum)?;
                    if let Some(r) = bn.running {
                        running.push(r);
                    }
                    out = bn.output.par_iter().map(relu).collect();
                    normalized = bn.normalized;
                    inv_std = bn.inv_std;
                    if train {
                        relu_out = Some(out.clone());
                    }
                }
                let input = std::mem::replace(&mut acts, out);
                if train {
                    steps.push(StepCache::Conv { input, normalized, inv_std, activated: relu_out });
                }
            }
            LayerKind::MaxPool => {
                let input_shape = acts[0].shape();
                let pooled: Result<Vec<_>> = acts.par_iter().map(maxpool2).collect();
                let (maps, argmax): (Vec<_>, Vec<_>) = pooled?.into_iter().unzip();
                acts = maps;
                if train {
                    steps.push(StepCache::Pool { argmax, input_shape });
                }
            }
            LayerKind::Upsample => {
                acts = acts.par_iter().map(upsample2).collect();
                if train {
                    steps.push(StepCache::Up);
                }
            }
        }
    }

    let cache = train.then(|| ForwardCache {
        arch: *arch,
        fingerprint: fingerprint(params),
        batch: images.len(),
        height,
        width,
        steps,
    });
    Ok(ForwardOutput { logits: acts, cache, running })
}

/// Exact parameter gradients given `dLoss/dLogits` for every sample.
pub fn backward<T: Real>(
    arch: &ArchitectureSpec,
    params: &NetworkParams<T>,
    cache: &ForwardCache<T>,
    grad_logits: &[FeatureMap<T>],
) -> Result<NetworkGrads<T>> {
    if cache.arch != *arch || cache.fingerprint != fingerprint(params) {
        return Err(Error::State("forward cache was produced by different parameters".into()));
    }
    let expected = (arch.num_classes, cache.height, cache.width);
    if grad_logits.len() != cache.batch || grad_logits.iter().any(|g| g.shape() != expected) {
        return Err(Error::State("logit gradient does not match the cached forward pass".into()));
    }
    let mut grads = NetworkGrads::zeros_like(params);
    let mut grad: Vec<FeatureMap<T>> = grad_logits.to_vec();
    let layers = arch.layers();

    for (layer, step) in layers.iter().zip(&cache.steps).rev() {
        match (layer, step) {
            (
                LayerKind::Conv { conv, activated, .. },
                StepCache::Conv { input, normalized, inv_std, activated: relu_out },
            ) => {
                if *activated {
                    let (relu_out, normalized) = relu_out
                        .as_ref()
                        .zip(normalized.as_ref())
                        .ok_or_else(|| Error::State("missing activation cache".into()))?;
                    let pre: Vec<_> = relu_out.iter().zip(&grad).map(|(y, g)| relu_backward(y, g)).collect();
                    let (dx, dgamma, dbeta) = batchnorm_backward(normalized, inv_std, &params.norms[*conv].gamma, &pre)?;
                    grads.gamma[*conv] = dgamma;
                    grads.beta[*conv] = dbeta;
                    grad = dx;
                }
                let p = &params.convs[*conv];
                let want_input = *conv > 0;
                let per_sample: Result<Vec<_>> =
                    input.par_iter().zip(grad.par_iter()).map(|(x, g)| conv2d_backward(x, p, g, want_input)).collect();
                let per_sample = per_sample?;
                // Fixed-order reduction keeps the sum independent of scheduling.
                let (dw, db) = (&mut grads.conv_weight[*conv], &mut grads.conv_bias[*conv]);
                for s in &per_sample {
                    dw.iter_mut().zip(&s.weight).for_each(|(a, b)| *a += *b);
                    db.iter_mut().zip(&s.bias).for_each(|(a, b)| *a += *b);
                }
                if want_input {
                    grad = per_sample.into_iter().map(|s| s.input.expect("requested")).collect();
                }
            }
            (LayerKind::MaxPool, StepCache::Pool { argmax, input_shape }) => {
                let back: Result<Vec<_>> =
                    grad.par_iter().zip(argmax.par_iter()).map(|(g, a)| maxpool2_backward(g, a, *input_shape)).collect();
                grad = back?;
            }
            (LayerKind::Upsample, StepCache::Up) => {
                let back: Result<Vec<_>> = grad.par_iter().map(upsample2_backward).collect();
                grad = back?;
            }
            _ => return Err(Error::State("forward cache does not follow the layer schedule".into())),
        }
    }
    Ok(grads)
}

impl<T: Real> NetworkParams<T> {
    pub fn set_running(&mut self, running: Vec<(Vec<T>, Vec<T>)>) -> Result<()> {
        if running.len() != self.norms.len() {
            return Err(Error::shape("running statistics count does not match batch-norm layers"));
        }
        for (n, (m, v)) in self.norms.iter_mut().zip(running) {
            n.running_mean = m;
            n.running_var = v;
        }
        Ok(())
    }
}

/// Inference on arbitrary-size slices: pad to a multiple of 4, forward with
/// running statistics, softmax, crop. Returns the foreground probability.
pub fn predict_foreground<T: Real>(
    arch: &ArchitectureSpec,
    params: &NetworkParams<T>,
    images: &[Image2D<T>],
) -> Result<Vec<Image2D<T>>> {
    params.check_arch(arch)?;
    images
        .par_iter()
        .map(|img| {
            let (map, pad) = pad_to_multiple(img, ArchitectureSpec::SIZE_MULTIPLE);
            let out = forward(arch, params, std::slice::from_ref(&map), Mode::Infer)?;
            let prob = softmax_pixelwise(&out.logits[0]);
            Ok(crop_to(&prob, 1, &pad))
        })
        .collect()
}
