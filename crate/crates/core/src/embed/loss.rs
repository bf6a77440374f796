//! The softmax-triplet loss.
//!
//! With D_p = ||f(a) - f(p)|| and D_n = ||f(a) - f(n)||, the loss is the
//! two-class cross entropy of softmax((D_p, D_n)) with the target on the
//! negative-distance slot:
//!
//!   L = -ln( exp(D_n) / (exp(D_p) + exp(D_n)) ) = softplus(D_p - D_n)
//!
//! so it shrinks the positive distance and grows the negative one.

use super::{EmbeddingModel, Triplet};
use crate::error::Result;

/// Numerically stable ln(1 + e^x).
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Loss as a function of the two distances: softplus(D_p - D_n).
pub fn loss_from_distances(d_pos: f64, d_neg: f64) -> f64 {
    softplus(d_pos - d_neg)
}

/// The literal two-class cross-entropy form, kept for validating the
/// algebraic identity with [`loss_from_distances`].
pub fn cross_entropy_form(d_pos: f64, d_neg: f64) -> f64 {
    let m = d_pos.max(d_neg);
    // -ln( e^{dn} / (e^{dp} + e^{dn}) ), stabilized by factoring out e^m.
    -(((d_neg - m).exp()) / ((d_pos - m).exp() + (d_neg - m).exp())).ln()
}

/// (D_p, D_n) for a triplet under the model.
pub fn triplet_distances(model: &EmbeddingModel, triplet: &Triplet) -> Result<(f64, f64)> {
    let a = model.forward(&triplet.anchor.raw_feature)?;
    let p = model.forward(&triplet.positive.raw_feature)?;
    let n = model.forward(&triplet.negative.raw_feature)?;
    Ok((euclidean(&a, &p), euclidean(&a, &n)))
}

/// Triplet loss for a model: softplus(D_p - D_n). Non-negative, zero only
/// in the limit D_n - D_p -> infinity.
pub fn triplet_loss(model: &EmbeddingModel, triplet: &Triplet) -> Result<f64> {
    let (dp, dn) = triplet_distances(model, triplet)?;
    Ok(loss_from_distances(dp, dn))
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
