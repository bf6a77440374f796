//! Analytic gradients of the triplet loss with respect to all weights.
//!
//! The three branches share the model, so branch gradients accumulate into
//! one parameter-shaped structure. Verified against central finite
//! differences (the oracle lives in the tests and the acceptance suite).

use super::loss::{euclidean, loss_from_distances};
use super::{EmbeddingModel, ForwardTrace, Triplet};
use crate::error::Result;

/// Distances below this are treated as zero when differentiating a norm;
/// the subgradient there is zero.
const DIST_EPS: f64 = 1e-12;

/// Parameter-shaped gradient accumulator.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

#[derive(Debug, Clone)]
pub struct LayerGrad {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(model: &EmbeddingModel) -> Self {
        Self {
            layers: model
                .layers()
                .iter()
                .map(|l| LayerGrad {
                    w: vec![0.0; l.w.len()],
                    b: vec![0.0; l.b.len()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.w.iter_mut().zip(&b.w) {
                *x += y;
            }
            for (x, y) in a.b.iter_mut().zip(&b.b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            for v in &mut l.w {
                *v *= factor;
            }
            for v in &mut l.b {
                *v *= factor;
            }
        }
    }

    /// Flat view in the same order as `EmbeddingModel::param`.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(&l.b).all(|v| v.is_finite()))
    }
}

/// Loss and its gradient w.r.t. every weight and bias.
pub fn loss_and_gradient(model: &EmbeddingModel, triplet: &Triplet) -> Result<(f64, Gradients)> {
    model.forward(&triplet.anchor.raw_feature)?; // validates dims/finiteness
    model.forward(&triplet.positive.raw_feature)?;
    model.forward(&triplet.negative.raw_feature)?;

    let tr_a = model.forward_trace(&triplet.anchor.raw_feature);
    let tr_p = model.forward_trace(&triplet.positive.raw_feature);
    let tr_n = model.forward_trace(&triplet.negative.raw_feature);

    let dp = euclidean(&tr_a.output, &tr_p.output);
    let dn = euclidean(&tr_a.output, &tr_n.output);
    let loss = loss_from_distances(dp, dn);

    // dL/dDp = sigma(Dp - Dn), dL/dDn = -sigma(Dp - Dn)
    let gap = dp - dn;
    let sig = 1.0 / (1.0 + (-gap).exp());

    let dim = tr_a.output.len();
    let mut d_ya = vec![0.0; dim];
    let mut d_yp = vec![0.0; dim];
    let mut d_yn = vec![0.0; dim];
    if dp > DIST_EPS {
        for i in 0..dim {
            let diff = (tr_a.output[i] - tr_p.output[i]) / dp;
            d_ya[i] += sig * diff;
            d_yp[i] -= sig * diff;
        }
    }
    if dn > DIST_EPS {
        for i in 0..dim {
            let diff = (tr_a.output[i] - tr_n.output[i]) / dn;
            d_ya[i] -= sig * diff;
            d_yn[i] += sig * diff;
        }
    }

    let mut grads = Gradients::zeros_like(model);
    backprop_branch(model, &tr_a, &d_ya, &mut grads);
    backprop_branch(model, &tr_p, &d_yp, &mut grads);
    backprop_branch(model, &tr_n, &d_yn, &mut grads);
    Ok((loss, grads))
}

/// Gradient only (spec-shaped convenience).
pub fn loss_gradient(model: &EmbeddingModel, triplet: &Triplet) -> Result<Gradients> {
    Ok(loss_and_gradient(model, triplet)?.1)
}

/// Backpropagate d(loss)/d(output) of one branch into the shared gradients.
fn backprop_branch(
    model: &EmbeddingModel,
    trace: &ForwardTrace,
    d_output: &[f64],
    grads: &mut Gradients,
) {
    // Through the guarded normalization y = z / s: for s = ||z|| this is
    // the exact Jacobian dz = (dy - y (y . dy)) / s; with the guard active
    // the same expression stays finite and fades to dy / s as z -> 0.
    let s = trace.denom;
    let y = &trace.output;
    let y_dot_dy: f64 = y.iter().zip(d_output).map(|(a, b)| a * b).sum();
    let mut delta: Vec<f64> = d_output
        .iter()
        .zip(y)
        .map(|(dy, yi)| (dy - yi * y_dot_dy) / s)
        .collect();

    for l in (0..model.layers().len()).rev() {
        let layer = &model.layers()[l];
        let input = &trace.activations[l];
        // Rectifier mask applies to every layer output except the last.
        if l + 1 < model.layers().len() {
            for (d, z) in delta.iter_mut().zip(&trace.pre[l]) {
                if *z <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        let g = &mut grads.layers[l];
        for r in 0..layer.rows {
            let dr = delta[r];
            if dr != 0.0 {
                let row = &mut g.w[r * layer.cols..(r + 1) * layer.cols];
                for (wi, xi) in row.iter_mut().zip(input) {
                    *wi += dr * xi;
                }
            }
            g.b[r] += dr;
        }
        if l > 0 {
            let mut prev = vec![0.0; layer.cols];
            for r in 0..layer.rows {
                let dr = delta[r];
                if dr != 0.0 {
                    let row = &layer.w[r * layer.cols..(r + 1) * layer.cols];
                    for (p, wi) in prev.iter_mut().zip(row) {
                        *p += dr * wi;
                    }
                }
            }
            delta = prev;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::loss::triplet_loss;
    use crate::embed::TripletKind;
    use crate::geo::GeoPose;
    use crate::rng::rng_for;
    use crate::world::FrameRecord;
    use rand::Rng;

    fn frame(feature: Vec<f64>, id: u64) -> FrameRecord {
        FrameRecord {
            frame_id: id,
            ride_id: id,
            t: 0.0,
            pose: GeoPose::new(0.0, 0.0, 0.0),
            raw_feature: feature,
            nuisance_seed: id,
        }
    }

    fn random_triplet(dim: usize, seed: u64) -> Triplet {
        let mut rng = rng_for(seed, "grad-triplet");
        let mut feat = || -> Vec<f64> { (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect() };
        Triplet {
            anchor: frame(feat(), 0),
            positive: frame(feat(), 1),
            negative: frame(feat(), 2),
            source: TripletKind::Regular,
        }
    }

    /// Central-difference oracle: max relative error over all parameters.
    pub fn finite_diff_max_rel_err(
        model: &EmbeddingModel,
        triplet: &Triplet,
        h: f64,
    ) -> f64 {
        let (_, grads) = loss_and_gradient(model, triplet).unwrap();
        let flat = grads.flat();
        let mut probe = model.clone();
        let mut max_rel: f64 = 0.0;
        for i in 0..probe.param_count() {
            let orig = probe.param(i);
            probe.set_param(i, orig + h);
            let lp = triplet_loss(&probe, triplet).unwrap();
            probe.set_param(i, orig - h);
            let lm = triplet_loss(&probe, triplet).unwrap();
            probe.set_param(i, orig);
            let numeric = (lp - lm) / (2.0 * h);
            let analytic = flat[i];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3);
            max_rel = max_rel.max(rel);
        }
        max_rel
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..8 {
            let model = EmbeddingModel::with_dims(&[10, 8, 6, 5], 100 + seed);
            let triplet = random_triplet(10, 200 + seed);
            let err = finite_diff_max_rel_err(&model, &triplet, 1e-5);
            assert!(err <= 1e-4, "seed {seed}: max rel err {err}");
        }
    }

    #[test]
    fn shared_branch_cancellation_when_positive_equals_negative() {
        // positive == negative record: D_p == D_n, the loss is the constant
        // softplus(0) composition and the analytic gradient must still match
        // finite differences.
        let mut triplet = random_triplet(10, 77);
        triplet.negative = triplet.positive.clone();
        let model = EmbeddingModel::with_dims(&[10, 8, 6, 5], 78);
        let (loss, _) = loss_and_gradient(&model, &triplet).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-12);
        let err = finite_diff_max_rel_err(&model, &triplet, 1e-5);
        assert!(err <= 1e-4, "max rel err {err}");
    }

    #[test]
    fn zero_final_layer_keeps_gradient_finite() {
        let mut model = EmbeddingModel::with_dims(&[10, 8, 6, 5], 13);
        let last = model.layers.len() - 1;
        for v in &mut model.layers[last].w {
            *v = 0.0;
        }
        for v in &mut model.layers[last].b {
            *v = 0.0;
        }
        let triplet = random_triplet(10, 14);
        let (loss, grads) = loss_and_gradient(&model, &triplet).unwrap();
        assert!(loss.is_finite());
        assert!(grads.is_finite());
    }

    #[test]
    fn gradient_is_finite_for_production_dims() {
        let model = EmbeddingModel::new(128, 55);
        let triplet = random_triplet(128, 56);
        let (loss, grads) = loss_and_gradient(&model, &triplet).unwrap();
        assert!(loss.is_finite());
        assert!(grads.is_finite());
    }
}
