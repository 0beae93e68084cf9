use crate::error::{Error, Result};
use crate::net::{NetworkGrads, NetworkParams};
use crate::scalar::Real;

/// `v ← momentum·v − lr·g; p ← p + v` on every trainable tensor.
pub fn sgd_step<T: Real>(
    params: &mut NetworkParams<T>,
    grads: &NetworkGrads<T>,
    lr: T,
    momentum: T,
    velocity: &mut [Vec<T>],
) -> Result<()> {
    let gs = grads.tensors();
    let mut ps = params.trainable_mut();
    if gs.len() != ps.len() || velocity.len() != ps.len() {
        return Err(Error::shape("gradient / velocity tensor count does not match the parameters"));
    }
    if ps.iter().zip(&gs).zip(velocity.iter()).any(|((p, g), v)| p.len() != g.len() || p.len() != v.len()) {
        return Err(Error::shape("gradient / velocity tensor shapes do not match the parameters"));
    }
    for ((p, g), v) in ps.iter_mut().zip(gs).zip(velocity.iter_mut()) {
        for ((pi, &gi), vi) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
            *vi = momentum * *vi - lr * gi;
            *pi += *vi;
        }
    }
    Ok(())
}

/// Zero velocity shaped like the trainable tensors.
pub(crate) fn zero_velocity<T: Real>(params: &NetworkParams<T>) -> Vec<Vec<T>> {
    params.trainable().iter().map(|t| vec![T::zero(); t.len()]).collect()
}
