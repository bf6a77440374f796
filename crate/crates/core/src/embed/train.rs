//! SGD-with-momentum trainer under a 1cycle schedule.
//!
//! The learning rate ramps linearly 0 -> max_lr over the first half of the
//! step budget and back to ~0 over the second half; momentum ramps inversely
//! between max_momentum and min_momentum. Weight decay is added to the
//! gradient. Training is deterministic for a fixed schedule seed.

use super::grad::{loss_and_gradient, Gradients};
use super::{EmbeddingModel, Triplet};
use crate::error::{Error, Result};
use crate::rng::rng_for;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// Batch gradients above this global norm are rescaled before entering the
/// momentum buffer. The guarded normalization has slope 1/NORM_GUARD at a
/// dead branch, so a single pathological batch can otherwise poison the
/// velocity for thousands of steps.
const GRAD_CLIP_NORM: f64 = 50.0;

/// Anything that can produce training triplets. Sources are stateless given
/// the rng, so parallel evaluation only needs independent rng streams.
pub trait TripletSource {
    fn sample(&self, rng: &mut ChaCha12Rng) -> Option<Triplet>;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub steps: usize,
    /// Triplets averaged per SGD step.
    pub batch_size: usize,
    pub max_lr: f64,
    pub min_momentum: f64,
    pub max_momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            steps: 25_000,
            batch_size: 8,
            max_lr: 0.003,
            min_momentum: 0.85,
            max_momentum: 0.95,
            weight_decay: 1e-6,
            seed: 0,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_lr > 0.0) {
            return Err(Error::InvalidSchedule("max_lr must be > 0".into()));
        }
        if !(0.0 <= self.min_momentum
            && self.min_momentum <= self.max_momentum
            && self.max_momentum < 1.0)
        {
            return Err(Error::InvalidSchedule(
                "need 0 <= min_momentum <= max_momentum < 1".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidSchedule("batch_size must be > 0".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidSchedule("weight_decay must be >= 0".into()));
        }
        Ok(())
    }

    /// (learning rate, momentum) at step `i` of `self.steps`.
    pub fn lr_momentum_at(&self, i: usize) -> (f64, f64) {
        let n = self.steps as f64;
        let half = n / 2.0;
        let frac = if (i as f64) < half {
            i as f64 / half
        } else {
            (n - i as f64) / (n - half)
        };
        let lr = self.max_lr * frac;
        let momentum = self.max_momentum - (self.max_momentum - self.min_momentum) * frac;
        (lr, momentum)
    }
}

/// One row of the loss history.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub lr: f64,
    pub momentum: f64,
    pub loss: f64,
}

/// Run the schedule, returning the trained model and per-step loss history.
/// Aborts with a diagnostic if the loss goes non-finite.
pub fn train(
    mut model: EmbeddingModel,
    source: &impl TripletSource,
    schedule: &TrainSchedule,
) -> Result<(EmbeddingModel, Vec<TrainRecord>)> {
    schedule.validate()?;
    let mut rng = rng_for(schedule.seed, "train-sampler");
    let mut velocity = Gradients::zeros_like(&model);
    let mut history = Vec::with_capacity(schedule.steps);

    for step in 0..schedule.steps {
        let (lr, momentum) = schedule.lr_momentum_at(step);

        let mut batch_grad = Gradients::zeros_like(&model);
        let mut batch_loss = 0.0;
        for _ in 0..schedule.batch_size {
            let triplet = sample_with_retry(source, &mut rng, step)?;
            let (loss, grad) = loss_and_gradient(&model, &triplet)?;
            batch_loss += loss;
            batch_grad.add_assign(&grad);
        }
        let scale = 1.0 / schedule.batch_size as f64;
        batch_loss *= scale;
        batch_grad.scale(scale);

        if !batch_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                loss: batch_loss,
            });
        }

        let grad_norm = batch_grad
            .flat()
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        if grad_norm > GRAD_CLIP_NORM {
            batch_grad.scale(GRAD_CLIP_NORM / grad_norm);
        }

        // v <- m v + (g + wd w); w <- w - lr v
        for (l, (layer, vel)) in model
            .layers
            .iter_mut()
            .zip(velocity.layers.iter_mut())
            .enumerate()
        {
            let g = &batch_grad.layers[l];
            for ((w, v), gw) in layer.w.iter_mut().zip(vel.w.iter_mut()).zip(&g.w) {
                *v = momentum * *v + (gw + schedule.weight_decay * *w);
                *w -= lr * *v;
            }
            for ((b, v), gb) in layer.b.iter_mut().zip(vel.b.iter_mut()).zip(&g.b) {
                *v = momentum * *v + gb;
                *b -= lr * *v;
            }
        }

        history.push(TrainRecord {
            step,
            lr,
            momentum,
            loss: batch_loss,
        });
    }
    Ok((model, history))
}

fn sample_with_retry(
    source: &impl TripletSource,
    rng: &mut ChaCha12Rng,
    step: usize,
) -> Result<Triplet> {
    for _ in 0..16 {
        if let Some(t) = source.sample(rng) {
            return Ok(t);
        }
    }
    Err(Error::InvalidSchedule(format!(
        "triplet source exhausted at step {step}"
    )))
}

/// Mean triplet loss over a held-out set.
pub fn mean_loss(model: &EmbeddingModel, triplets: &[Triplet]) -> Result<f64> {
    if triplets.is_empty() {
        return Err(Error::EmptyInput("triplets"));
    }
    let mut total = 0.0;
    for t in triplets {
        total += super::loss::triplet_loss(model, t)?;
    }
    Ok(total / triplets.len() as f64)
}
