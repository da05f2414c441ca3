use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::loss::LossBreakdown;

/// Classical momentum: `v <- mu * v - lr * grad; theta <- theta + v`.
pub fn sgd_momentum_step(params: &mut [f64], grads: &[f64], velocity: &mut [f64], lr: f64, momentum: f64) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), velocity.len());
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v - lr * g;
        *p += *v;
    }
}

/// Stream reserved for parameter initialisation; epoch `e` uses stream `e`.
pub(crate) const INIT_STREAM: u64 = u64::MAX;

pub(crate) fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Visiting order for one epoch, a pure function of `(seed, epoch)`.
pub fn epoch_permutation(seed: u64, epoch: usize, len: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut seeded_rng(seed, epoch as u64));
    order
}

pub(crate) struct LoopSettings {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

/// Mini-batch SGD over `len` examples. `step` receives the batch indices and
/// current parameters, and returns the batch loss and flat gradient.
pub(crate) fn run_sgd<F>(params: &mut [f64], len: usize, settings: &LoopSettings, mut step: F) -> Result<Vec<LossBreakdown>>
where
    F: FnMut(&[usize], &[f64]) -> Result<(LossBreakdown, Vec<f64>)>,
{
    let mut velocity = vec![0.0; params.len()];
    let mut history = Vec::with_capacity(settings.epochs);
    for epoch in 0..settings.epochs {
        let order = epoch_permutation(settings.seed, epoch, len);
        let mut sum = LossBreakdown::default();
        for (batch_no, batch) in order.chunks(settings.batch_size).enumerate() {
            let (loss, grad) = step(batch, params)?;
            if !loss.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    batch: batch_no,
                });
            }
            let w = batch.len() as f64;
            sum.ce += loss.ce * w;
            sum.l1 += loss.l1 * w;
            sum.logits_term += loss.logits_term * w;
            sum.total += loss.total * w;
            sgd_momentum_step(params, &grad, &mut velocity, settings.learning_rate, settings.momentum);
            // Parameters are stored as f32, so leaving its range is divergence.
            if params.iter().any(|p| p.is_nan() || p.abs() > f64::from(f32::MAX)) {
                return Err(Error::Divergence {
                    epoch,
                    batch: batch_no,
                });
            }
        }
        let m = len as f64;
        history.push(LossBreakdown {
            ce: sum.ce / m,
            l1: sum.l1 / m,
            logits_term: sum.logits_term / m,
            total: sum.total / m,
        });
    }
    Ok(history)
}
