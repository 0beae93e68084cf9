use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::arch::ArchitectureSpec;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2dParams<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `out × in × 3 × 3`, row-major.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

/// All network state in schedule order. `norms[i]` follows `convs[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<T> {
    pub convs: Vec<Conv2dParams<T>>,
    pub norms: Vec<BatchNormParams<T>>,
}

/// Gradients of every trainable tensor, mirroring [`NetworkParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkGrads<T> {
    pub conv_weight: Vec<Vec<T>>,
    pub conv_bias: Vec<Vec<T>>,
    pub gamma: Vec<Vec<T>>,
    pub beta: Vec<Vec<T>>,
}

impl<T: Real> NetworkParams<T> {
    /// He-normal conv weights, zero biases, unit γ, zero β, fresh running stats.
    pub fn init(arch: &ArchitectureSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let convs = arch
            .conv_shapes()
            .into_iter()
            .map(|(i, o)| {
                let std = (2.0 / (i * 9) as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("positive std");
                Conv2dParams {
                    in_channels: i,
                    out_channels: o,
                    weight: (0..o * i * 9).map(|_| T::lit(normal.sample(&mut rng))).collect(),
                    bias: vec![T::zero(); o],
                }
            })
            .collect();
        let norms = arch
            .norm_widths()
            .into_iter()
            .map(|c| BatchNormParams {
                gamma: vec![T::one(); c],
                beta: vec![T::zero(); c],
                running_mean: vec![T::zero(); c],
                running_var: vec![T::one(); c],
            })
            .collect();
        Self { convs, norms }
    }

    pub fn check_arch(&self, arch: &ArchitectureSpec) -> Result<()> {
        let shapes = arch.conv_shapes();
        let widths = arch.norm_widths();
        let convs_ok = self.convs.len() == shapes.len()
            && self.convs.iter().zip(&shapes).all(|(c, &(i, o))| {
                c.in_channels == i && c.out_channels == o && c.weight.len() == o * i * 9 && c.bias.len() == o
            });
        let norms_ok = self.norms.len() == widths.len()
            && self.norms.iter().zip(&widths).all(|(n, &w)| {
                n.gamma.len() == w && n.beta.len() == w && n.running_mean.len() == w && n.running_var.len() == w
            });
        if !(convs_ok && norms_ok) {
            return Err(Error::shape("network parameters do not match the architecture"));
        }
        if self.norms.iter().flat_map(|n| &n.running_var).any(|&v| v < T::zero()) {
            return Err(Error::validation("running variance must be non-negative"));
        }
        Ok(())
    }

    /// Trainable tensors in canonical order: per conv weight, bias, then γ, β
    /// of its batch-norm if any.
    pub fn trainable_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut norms = self.norms.iter_mut();
        let mut out = Vec::new();
        for conv in &mut self.convs {
            out.push(&mut conv.weight);
            out.push(&mut conv.bias);
            if let Some(n) = norms.next() {
                out.push(&mut n.gamma);
                out.push(&mut n.beta);
            }
        }
        out
    }

    pub fn trainable(&self) -> Vec<&Vec<T>> {
        let mut norms = self.norms.iter();
        let mut out = Vec::new();
        for conv in &self.convs {
            out.push(&conv.weight);
            out.push(&conv.bias);
            if let Some(n) = norms.next() {
                out.push(&n.gamma);
                out.push(&n.beta);
            }
        }
        out
    }

    /// Names for [`Self::trainable`] entries, in the same order.
    pub fn trainable_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for i in 0..self.convs.len() {
            out.push(format!("conv{i:02}.weight"));
            out.push(format!("conv{i:02}.bias"));
            if i < self.norms.len() {
                out.push(format!("bn{i:02}.gamma"));
                out.push(format!("bn{i:02}.beta"));
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.trainable().iter().map(|t| t.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> NetworkParams<U> {
        let c = |v: &Vec<T>| v.iter().map(|x| U::from(*x).expect("finite cast")).collect::<Vec<U>>();
        NetworkParams {
            convs: self
                .convs
                .iter()
                .map(|p| Conv2dParams {
                    in_channels: p.in_channels,
                    out_channels: p.out_channels,
                    weight: c(&p.weight),
                    bias: c(&p.bias),
                })
                .collect(),
            norms: self
                .norms
                .iter()
                .map(|n| BatchNormParams {
                    gamma: c(&n.gamma),
                    beta: c(&n.beta),
                    running_mean: c(&n.running_mean),
                    running_var: c(&n.running_var),
                })
                .collect(),
        }
    }
}

impl<T: Real> NetworkGrads<T> {
    pub fn zeros_like(params: &NetworkParams<T>) -> Self {
        Self {
            conv_weight: params.convs.iter().map(|c| vec![T::zero(); c.weight.len()]).collect(),
            conv_bias: params.convs.iter().map(|c| vec![T::zero(); c.bias.len()]).collect(),
            gamma: params.norms.iter().map(|n| vec![T::zero(); n.gamma.len()]).collect(),
            beta: params.norms.iter().map(|n| vec![T::zero(); n.beta.len()]).collect(),
        }
    }

    /// Same ordering as [`NetworkParams::trainable`].
    pub fn tensors(&self) -> Vec<&Vec<T>> {
        let mut out = Vec::new();
        for i in 0..self.conv_weight.len() {
            out.push(&self.conv_weight[i]);
            out.push(&self.conv_bias[i]);
            if i < self.gamma.len() {
                out.push(&self.gamma[i]);
                out.push(&self.beta[i]);
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out = Vec::new();
        let mut gamma = self.gamma.iter_mut();
        let mut beta = self.beta.iter_mut();
        for (w, b) in self.conv_weight.iter_mut().zip(self.conv_bias.iter_mut()) {
            out.push(w);
            out.push(b);
            if let (Some(g), Some(be)) = (gamma.next(), beta.next()) {
                out.push(g);
                out.push(be);
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded_and_shaped() {
        let arch = ArchitectureSpec::new(2).unwrap();
        let a = NetworkParams::<f64>::init(&arch, 11);
        let b = NetworkParams::<f64>::init(&arch, 11);
        let c = NetworkParams::<f64>::init(&arch, 12);
        assert_eq!(a, b);
        assert_ne!(a, c);
        a.check_arch(&arch).unwrap();
        assert_eq!(a.trainable().len(), a.trainable_names().len());
        assert_eq!(a.trainable().len(), 19 * 2 + 18 * 2);
        assert!(a.check_arch(&ArchitectureSpec::new(3).unwrap()).is_err());
    }

    #[test]
    fn he_init_scale() {
        let arch = ArchitectureSpec::new(16).unwrap();
        let p = NetworkParams::<f64>::init(&arch, 3);
        let w = &p.convs[4].weight;
        let var = w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
        let want = 2.0 / (32.0 * 9.0);
        assert!((var / want - 1.0).abs() < 0.1);
    }
}
