//! z-loss and the cross-entropy baseline, with exact logit gradients.
//!
//! The z-loss standardises the whole two-channel logit map of an image with
//! one mean and one population standard deviation, then applies
//! `softplus(a (b - z)) / a` to the standardised logit of each pixel's true
//! class. Any positive affine change of the logits leaves it unchanged.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::net::{softmax_pixelwise, FeatureMap};
use crate::scalar::Real;

pub const SIGMA_FLOOR: f64 = 1e-6;
const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ZLossParams {
    /// Sharpness, `> 0`.
    pub a: f64,
    /// Margin on the standardised logit.
    pub b: f64,
    pub sigma_floor: f64,
}

impl Default for ZLossParams {
    fn default() -> Self {
        Self { a: 1.0, b: 1.0, sigma_floor: SIGMA_FLOOR }
    }
}

impl ZLossParams {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        let p = Self { a, b, sigma_floor: SIGMA_FLOOR };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a.is_finite()) || !self.b.is_finite() {
            return Err(Error::Parameter(format!("z-loss needs a > 0 and finite b, got a={} b={}", self.a, self.b)));
        }
        if !(self.sigma_floor > 0.0) {
            return Err(Error::Parameter("sigma floor must be positive".into()));
        }
        Ok(())
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        (T::one() + (-x).exp()).recip()
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn check_pair<T: Real>(logits: &FeatureMap<T>, labels: &[u8]) -> Result<()> {
    if logits.channels != 2 {
        return Err(Error::shape(format!("expected 2 logit channels, got {}", logits.channels)));
    }
    if labels.len() != logits.plane_len() {
        return Err(Error::shape(format!("{} labels for {} pixels", labels.len(), logits.plane_len())));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::validation("labels must be binary"));
    }
    Ok(())
}

/// Global standardisation statistics of a logit map.
#[derive(Clone, Copy, Debug)]
pub struct MapStats<T> {
    pub mean: T,
    pub sigma: T,
    /// True when the raw σ fell below the floor (σ is then a constant).
    pub floored: bool,
}

pub fn map_stats<T: Real>(values: &[T], floor: f64) -> MapStats<T> {
    let n = T::from_usize_lossy(values.len());
    let mean = values.iter().copied().sum::<T>() / n;
    let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let raw = var.sqrt();
    let floor = T::lit(floor);
    if raw < floor {
        MapStats { mean, sigma: floor, floored: true }
    } else {
        MapStats { mean, sigma: raw, floored: false }
    }
}

/// Loss value and `dL/dlogits` for one image.
pub fn zloss_with_grad<T: Real>(
    logits: &FeatureMap<T>,
    labels: &[u8],
    params: &ZLossParams,
) -> Result<(T, FeatureMap<T>)> {
    params.validate()?;
    check_pair(logits, labels)?;
    let p = logits.plane_len();
    let n = T::from_usize_lossy(2 * p);
    let pixels = T::from_usize_lossy(p);
    let (a, b) = (T::lit(params.a), T::lit(params.b));
    let stats = map_stats(&logits.data, params.sigma_floor);

    let mut loss = T::zero();
    // dℓ/dz for each pixel's true-class logit, and the sums feeding μ and σ.
    let mut dz = vec![T::zero(); p];
    let (mut sum_dz, mut sum_dz_z) = (T::zero(), T::zero());
    for (i, &label) in labels.iter().enumerate() {
        let z = (logits.data[usize::from(label) * p + i] - stats.mean) / stats.sigma;
        let arg = a * (b - z);
        loss += softplus(arg) / a;
        let d = -sigmoid(arg);
        dz[i] = d;
        sum_dz += d;
        sum_dz_z += d * z;
    }
    loss /= pixels;

    let scale = (pixels * stats.sigma).recip();
    let mut grad = FeatureMap::zeros(2, logits.height, logits.width);
    for (j, g) in grad.data.iter_mut().enumerate() {
        let mut v = -sum_dz / n;
        if !stats.floored {
            let zj = (logits.data[j] - stats.mean) / stats.sigma;
            v -= zj * sum_dz_z / n;
        }
        let (class, pixel) = (j / p, j % p);
        if usize::from(labels[pixel]) == class {
            v += dz[pixel];
        }
        *g = v * scale;
    }
    Ok((loss, grad))
}

pub fn zloss<T: Real>(logits: &FeatureMap<T>, labels: &[u8], params: &ZLossParams) -> Result<T> {
    zloss_with_grad(logits, labels, params).map(|(l, _)| l)
}

pub fn zloss_grad<T: Real>(logits: &FeatureMap<T>, labels: &[u8], params: &ZLossParams) -> Result<FeatureMap<T>> {
    zloss_with_grad(logits, labels, params).map(|(_, g)| g)
}

/// Mean `-ln p_true` over pixels and its gradient with respect to the logits
/// that produced `probabilities` through a softmax.
pub fn cross_entropy<T: Real>(probabilities: &FeatureMap<T>, labels: &[u8]) -> Result<(T, FeatureMap<T>)> {
    check_pair(probabilities, labels)?;
    let p = probabilities.plane_len();
    let pixels = T::from_usize_lossy(p);
    let floor = T::lit(PROB_FLOOR);
    let mut loss = T::zero();
    let mut grad = probabilities.clone();
    for (i, &label) in labels.iter().enumerate() {
        let t = usize::from(label) * p + i;
        loss -= probabilities.data[t].max(floor).ln();
        grad.data[t] -= T::one();
    }
    grad.data.iter_mut().for_each(|g| *g /= pixels);
    Ok((loss / pixels, grad))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LossKind {
    ZLoss(ZLossParams),
    CrossEntropy,
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::ZLoss(_) => "zloss",
            LossKind::CrossEntropy => "cross_entropy",
        }
    }

    /// Loss and logit gradient of a single image.
    pub fn evaluate<T: Real>(&self, logits: &FeatureMap<T>, labels: &[u8]) -> Result<(T, FeatureMap<T>)> {
        match self {
            LossKind::ZLoss(p) => zloss_with_grad(logits, labels, p),
            LossKind::CrossEntropy => cross_entropy(&softmax_pixelwise(logits), labels),
        }
    }

    /// Mean loss over a batch; gradients carry the `1/batch` factor.
    pub fn evaluate_batch<T: Real>(
        &self,
        logits: &[FeatureMap<T>],
        labels: &[&[u8]],
    ) -> Result<(T, Vec<FeatureMap<T>>)> {
        if logits.len() != labels.len() || logits.is_empty() {
            return Err(Error::shape("logit and label batches differ in size"));
        }
        let inv = T::from_usize_lossy(logits.len()).recip();
        let mut total = T::zero();
        let mut grads = Vec::with_capacity(logits.len());
        for (l, y) in logits.iter().zip(labels) {
            let (loss, mut g) = self.evaluate(l, y)?;
            total += loss;
            g.data.iter_mut().for_each(|v| *v *= inv);
            grads.push(g);
        }
        Ok((total * inv, grads))
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "zloss" | "z-loss" => Ok(LossKind::ZLoss(ZLossParams::default())),
            "cross_entropy" | "cross-entropy" | "ce" => Ok(LossKind::CrossEntropy),
            other => Err(Error::Config(format!("unknown loss {other:?}"))),
        }
    }
}
