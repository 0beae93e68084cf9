use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::sgd::{sgd_step, zero_velocity};
use crate::error::{Error, Result};
use crate::net::{backward, forward, ArchitectureSpec, FeatureMap, Mode, NetworkParams};
use crate::scalar::Real;

/// One padded training slice and its mask (row-major, same size).
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    pub image: FeatureMap<T>,
    pub labels: Vec<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochReport {
    /// 1-based index of the finished epoch.
    pub epoch: usize,
    pub mean_loss: f64,
    pub steps: usize,
}

/// Owns the parameters of one view's network; the only writer of them.
#[derive(Clone, Debug, PartialEq)]
pub struct Trainer<T> {
    pub(crate) arch: ArchitectureSpec,
    pub(crate) params: NetworkParams<T>,
    pub(crate) velocity: Vec<Vec<T>>,
    pub(crate) config: TrainConfig,
    pub(crate) epoch: usize,
    lr: f64,
}

/// Epoch permutation seed: a pure function of run seed and epoch.
fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

impl<T: Real> Trainer<T> {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let arch = ArchitectureSpec::new(config.base_filters)?;
        let params = NetworkParams::init(&arch, config.seed);
        let velocity = zero_velocity(&params);
        Ok(Self { arch, params, velocity, lr: config.lr, config, epoch: 0 })
    }

    pub(crate) fn from_parts(
        config: TrainConfig,
        params: NetworkParams<T>,
        velocity: Vec<Vec<T>>,
        epoch: usize,
    ) -> Result<Self> {
        config.validate()?;
        let arch = ArchitectureSpec::new(config.base_filters)?;
        params.check_arch(&arch)?;
        let shapes_ok = velocity.len() == params.trainable().len()
            && velocity.iter().zip(params.trainable()).all(|(v, p)| v.len() == p.len());
        if !shapes_ok {
            return Err(Error::shape("velocity does not match the parameters"));
        }
        Ok(Self { arch, params, velocity, lr: config.lr, config, epoch })
    }

    pub fn arch(&self) -> &ArchitectureSpec {
        &self.arch
    }

    pub fn params(&self) -> &NetworkParams<T> {
        &self.params
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Overrides the step size; zero freezes the weights (running statistics still update).
    pub fn set_learning_rate(&mut self, lr: f64) -> Result<()> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be non-negative, got {lr}")));
        }
        self.lr = lr;
        Ok(())
    }

    /// One forward/backward/update on `batch`. Returns the batch loss.
    pub fn step(&mut self, batch: &[&Sample<T>]) -> Result<f64> {
        let images: Vec<FeatureMap<T>> = batch.iter().map(|s| s.image.clone()).collect();
        let labels: Vec<&[u8]> = batch.iter().map(|s| s.labels.as_slice()).collect();
        let out = forward(&self.arch, &self.params, &images, Mode::Train)?;
        let (loss, grad_logits) = self.config.loss.evaluate_batch(&out.logits, &labels)?;
        let loss = loss.to_f64().unwrap_or(f64::NAN);
        if !loss.is_finite() {
            return Err(Error::Divergence(format!("non-finite loss at epoch {}", self.epoch + 1)));
        }
        let cache = out.cache.expect("train mode keeps a cache");
        let grads = backward(&self.arch, &self.params, &cache, &grad_logits)?;
        if !grads.is_finite() {
            return Err(Error::Divergence(format!("non-finite gradient at epoch {}", self.epoch + 1)));
        }
        sgd_step(&mut self.params, &grads, T::lit(self.lr), T::lit(self.config.momentum), &mut self.velocity)?;
        self.params.set_running(out.running)?;
        Ok(loss)
    }

    /// Shuffles with a permutation fixed by `(seed, epoch)`, then steps through
    /// full batches. A trailing partial batch is used when it holds at least 2
    /// samples.
    pub fn train_epoch(&mut self, dataset: &[Sample<T>]) -> Result<EpochReport> {
        if dataset.is_empty() {
            return Err(Error::Config("empty training set".into()));
        }
        if self.config.batch > dataset.len() {
            return Err(Error::Config(format!(
                "batch {} larger than dataset of {}",
                self.config.batch,
                dataset.len()
            )));
        }
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(self.config.seed, self.epoch)));
        let mut total = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(self.config.batch) {
            if chunk.len() < 2 {
                continue;
            }
            let batch: Vec<&Sample<T>> = chunk.iter().map(|&i| &dataset[i]).collect();
            total += self.step(&batch)?;
            steps += 1;
        }
        self.epoch += 1;
        Ok(EpochReport { epoch: self.epoch, mean_loss: total / steps as f64, steps })
    }
}
