//! Finite-difference verification of the analytic network gradient (f64).
//!
//! Numeric derivatives use the 5-point central stencil. When a perturbation
//! moves any ReLU or max-pool decision (detected by the forward cache's
//! activation signature) the step is shrunk tenfold and retried, since a
//! difference quotient across a kink measures nothing.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::net::{backward, forward, ArchitectureSpec, FeatureMap, Mode, NetworkGrads, NetworkParams};

/// Scalar whose parameter gradient is verified.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Objective {
    /// Batch-mean training loss.
    Loss(LossKind),
    /// One raw output logit.
    Logit { sample: usize, channel: usize, y: usize, x: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckOptions {
    pub arch: ArchitectureSpec,
    pub seed: u64,
    pub tolerance: f64,
    pub objective: Objective,
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    /// Initial finite-difference step.
    pub step: f64,
    /// Smallest step tried before accepting a kinked estimate.
    pub min_step: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    /// Check a seeded random subset of this many coordinates; `None` checks all.
    pub max_params: Option<usize>,
}

impl GradCheckOptions {
    pub fn new(arch: ArchitectureSpec, seed: u64, tolerance: f64, objective: Objective) -> Self {
        Self {
            arch,
            seed,
            tolerance,
            objective,
            batch: 2,
            height: 8,
            width: 8,
            step: 1e-3,
            min_step: 1e-6,
            floor: 1e-6,
            max_params: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckEntry {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    /// Step the numeric value was taken at.
    pub step: f64,
    /// True if even the smallest step crossed an activation boundary.
    pub kinked: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Entry with the largest relative error.
    pub worst: Option<GradCheckEntry>,
    pub checked: usize,
    pub kinked: usize,
    pub pass: bool,
    pub entries: Vec<GradCheckEntry>,
}

/// Checks every parameter of a freshly initialised net on random 8×8 inputs
/// (batch 2) against the training loss.
pub fn gradient_check(arch: &ArchitectureSpec, seed: u64, tolerance: f64, loss: LossKind) -> Result<GradCheckReport> {
    gradient_check_with(&GradCheckOptions::new(*arch, seed, tolerance, Objective::Loss(loss)), |_| {})
}

struct Fixture {
    images: Vec<FeatureMap<f64>>,
    labels: Vec<Vec<u8>>,
}

impl Fixture {
    fn new(o: &GradCheckOptions) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(o.seed ^ 0x5eed_f1f0);
        let n = o.height * o.width;
        let images = (0..o.batch)
            .map(|_| FeatureMap::new(1, o.height, o.width, (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()))
            .collect::<Result<_>>()?;
        let labels = (0..o.batch).map(|_| (0..n).map(|_| rng.random_range(0..2u8)).collect()).collect();
        Ok(Self { images, labels })
    }

    /// Objective value, its logit gradient and the activation signature.
    fn evaluate(
        &self,
        o: &GradCheckOptions,
        params: &NetworkParams<f64>,
    ) -> Result<(f64, Vec<FeatureMap<f64>>, crate::net::ForwardCache<f64>)> {
        let out = forward(&o.arch, params, &self.images, Mode::Train)?;
        let cache = out.cache.ok_or_else(|| Error::State("train forward produced no cache".into()))?;
        match o.objective {
            Objective::Loss(loss) => {
                let labels: Vec<&[u8]> = self.labels.iter().map(Vec::as_slice).collect();
                let (value, grads) = loss.evaluate_batch(&out.logits, &labels)?;
                Ok((value, grads, cache))
            }
            Objective::Logit { sample, channel, y, x } => {
                let map = out.logits.get(sample).ok_or_else(|| Error::validation("logit sample out of range"))?;
                if channel >= map.channels || y >= map.height || x >= map.width {
                    return Err(Error::validation("logit coordinate out of range"));
                }
                let value = map.at(channel, y, x);
                let grads = out
                    .logits
                    .iter()
                    .enumerate()
                    .map(|(s, m)| {
                        let mut g = FeatureMap::zeros(m.channels, m.height, m.width);
                        if s == sample {
                            g.data[(channel * m.height + y) * m.width + x] = 1.0;
                        }
                        g
                    })
                    .collect();
                Ok((value, grads, cache))
            }
        }
    }
}

fn numeric_derivative(
    o: &GradCheckOptions,
    fixture: &Fixture,
    params: &NetworkParams<f64>,
    tensor: usize,
    index: usize,
    signature: u64,
) -> Result<(f64, f64, bool)> {
    let mut h = o.step;
    loop {
        let mut values = [0.0; 4];
        let mut smooth = true;
        for (slot, offset) in [-2.0, -1.0, 1.0, 2.0].into_iter().enumerate() {
            let mut p = params.clone();
            p.trainable_mut()[tensor][index] += offset * h;
            let (v, _, cache) = fixture.evaluate(o, &p)?;
            smooth &= cache.activation_signature() == signature;
            values[slot] = v;
        }
        let d = (values[0] - 8.0 * values[1] + 8.0 * values[2] - values[3]) / (12.0 * h);
        if smooth || h / 10.0 < o.min_step {
            return Ok((d, h, !smooth));
        }
        h /= 10.0;
    }
}

/// As [`gradient_check`], with `corrupt` applied to the analytic gradient
/// before comparison (fault-injection fixtures).
pub fn gradient_check_with(
    options: &GradCheckOptions,
    corrupt: impl FnOnce(&mut NetworkGrads<f64>),
) -> Result<GradCheckReport> {
    let o = options;
    if o.batch < 2 || o.height == 0 || o.width == 0 || !(o.step > 0.0) || !(o.floor > 0.0) {
        return Err(Error::validation("gradient check needs batch ≥ 2, a non-empty image, positive step and floor"));
    }
    let params = NetworkParams::<f64>::init(&o.arch, o.seed);
    let fixture = Fixture::new(o)?;
    let (_, logit_grads, cache) = fixture.evaluate(o, &params)?;
    let signature = cache.activation_signature();
    let mut grads = backward(&o.arch, &params, &cache, &logit_grads)?;
    corrupt(&mut grads);

    let names = params.trainable_names();
    let analytic = grads.tensors();
    let mut coords: Vec<(usize, usize)> =
        analytic.iter().enumerate().flat_map(|(t, g)| (0..g.len()).map(move |i| (t, i))).collect();
    if let Some(limit) = o.max_params.filter(|&m| m < coords.len()) {
        let mut rng = ChaCha8Rng::seed_from_u64(o.seed ^ 0xc0de);
        let mut picked = sample(&mut rng, coords.len(), limit).into_vec();
        picked.sort_unstable();
        coords = picked.into_iter().map(|k| coords[k]).collect();
    }

    let entries = coords
        .par_iter()
        .map(|&(t, i)| {
            let (numeric, step, kinked) = numeric_derivative(o, &fixture, &params, t, i, signature)?;
            let a = analytic[t][i];
            let rel_error = (a - numeric).abs() / numeric.abs().max(o.floor);
            Ok(GradCheckEntry { tensor: names[t].clone(), index: i, analytic: a, numeric, rel_error, step, kinked })
        })
        .collect::<Result<Vec<_>>>()?;

    let worst = entries
        .iter()
        .fold(None::<&GradCheckEntry>, |w, e| match w {
            Some(w) if w.rel_error >= e.rel_error => Some(w),
            _ => Some(e),
        })
        .cloned();
    let max_rel_error = worst.as_ref().map_or(0.0, |w| w.rel_error);
    Ok(GradCheckReport {
        max_rel_error,
        checked: entries.len(),
        kinked: entries.iter().filter(|e| e.kinked).count(),
        pass: max_rel_error <= o.tolerance && max_rel_error.is_finite(),
        worst,
        entries,
    })
}
