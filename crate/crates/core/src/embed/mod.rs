//! Compact place-descriptor model.
//!
//! A small fully-connected stack (raw feature -> 64 -> 48 -> 30, rectifier
//! between layers) whose final layer is L2-normalized, trained with the
//! softmax-triplet loss: the cross entropy of softmax over (positive
//! distance, negative distance), which reduces to softplus(D_p - D_n).
//! Gradients are analytic and checked against central finite differences.

mod grad;
mod io;
mod loss;
mod train;

pub use grad::{loss_and_gradient, loss_gradient, Gradients};
pub use io::{load_model, read_history_csv, save_model, write_history_csv, MODEL_FORMAT_VERSION};
pub use loss::{cross_entropy_form, loss_from_distances, softplus, triplet_distances, triplet_loss};
pub use train::{mean_loss, train, TrainRecord, TrainSchedule, TripletSource};

use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::world::FrameRecord;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Output dimension of the production descriptor.
pub const DESCRIPTOR_DIM: usize = 30;

/// Guard added to the L2 denominator when the pre-norm vector is tiny,
/// keeping gradients finite at pathological weights.
pub const NORM_GUARD: f64 = 1e-8;

/// Unit-norm descriptor vector. Distances between descriptors live in [0, 2].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Descriptor(Vec<f64>);

impl Descriptor {
    pub(crate) fn from_unit(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Euclidean distance to another descriptor.
    pub fn distance(&self, other: &Descriptor) -> f64 {
        debug_assert_eq!(self.0.len(), other.0.len());
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Which generator produced a triplet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TripletKind {
    Regular,
    HardNegative,
    Video,
}

impl TripletKind {
    pub fn label(&self) -> &'static str {
        match self {
            TripletKind::Regular => "regular",
            TripletKind::HardNegative => "hard_negative",
            TripletKind::Video => "video",
        }
    }
}

/// Anchor/positive/negative frames plus the generator tag.
#[derive(Debug, Clone)]
pub struct Triplet {
    pub anchor: FrameRecord,
    pub positive: FrameRecord,
    pub negative: FrameRecord,
    pub source: TripletKind,
}

/// One fully connected layer, row-major weights (rows = outputs).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    fn apply(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for r in 0..self.rows {
            let row = &self.w[r * self.cols..(r + 1) * self.cols];
            let mut acc = self.b[r];
            for (wi, xi) in row.iter().zip(input) {
                acc += wi * xi;
            }
            out.push(acc);
        }
    }
}

/// The descriptor model: fully connected layers with a rectifier between
/// them and L2 normalization after the last. Immutable for inference, so
/// concurrent reads are safe.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingModel {
    layers: Vec<Layer>,
}

impl EmbeddingModel {
    /// Production model: `raw_dim` -> 64 -> 48 -> 30, He-uniform init.
    pub fn new(raw_dim: usize, seed: u64) -> Self {
        Self::with_dims(&[raw_dim, 64, 48, DESCRIPTOR_DIM], seed)
    }

    /// Model with arbitrary layer dims (first = input, last = output).
    pub fn with_dims(dims: &[usize], seed: u64) -> Self {
        assert!(dims.len() >= 2, "need at least one layer");
        let mut rng = rng_for(seed, "model-init");
        let layers = dims
            .windows(2)
            .map(|d| {
                let (cols, rows) = (d[0], d[1]);
                let limit = (6.0 / cols as f64).sqrt();
                let w = (0..rows * cols)
                    .map(|_| rng.random_range(-limit..limit))
                    .collect();
                // Slightly positive biases keep rectifier units alive at init.
                Layer {
                    rows,
                    cols,
                    w,
                    b: vec![0.01; rows],
                }
            })
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().rows
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.rows));
        dims
    }

    fn check_input(&self, raw: &[f64]) -> Result<()> {
        if raw.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                got: raw.len(),
                expected: self.input_dim(),
            });
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("raw feature"));
        }
        Ok(())
    }

    /// Forward pass to the unit-norm output.
    pub fn forward(&self, raw: &[f64]) -> Result<Vec<f64>> {
        self.check_input(raw)?;
        let trace = self.forward_trace(raw);
        Ok(trace.output)
    }

    /// Embed a raw feature into a descriptor (output dim must be 30).
    pub fn embed(&self, raw: &[f64]) -> Result<Descriptor> {
        if self.output_dim() != DESCRIPTOR_DIM {
            return Err(Error::DimensionMismatch {
                got: self.output_dim(),
                expected: DESCRIPTOR_DIM,
            });
        }
        Ok(Descriptor::from_unit(self.forward(raw)?))
    }

    /// Forward pass keeping intermediate activations for backprop.
    pub(crate) fn forward_trace(&self, raw: &[f64]) -> ForwardTrace {
        let n_layers = self.layers.len();
        // activations[l] is the input to layer l; the rectifier is applied
        // between layers, not after the last.
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
        let mut current = raw.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            activations.push(current.clone());
            let mut z = Vec::with_capacity(layer.rows);
            layer.apply(&current, &mut z);
            pre.push(z.clone());
            if l + 1 < n_layers {
                for v in &mut z {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            current = z;
        }
        let norm = current.iter().map(|v| v * v).sum::<f64>().sqrt();
        let denom = if norm < NORM_GUARD {
            norm + NORM_GUARD
        } else {
            norm
        };
        let output: Vec<f64> = current.iter().map(|v| v / denom).collect();
        ForwardTrace {
            activations,
            pre,
            denom,
            output,
        }
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Flat parameter access in layer order (weights then biases), used by
    /// the finite-difference oracle and the optimizer.
    pub fn param(&self, mut idx: usize) -> f64 {
        for l in &self.layers {
            if idx < l.w.len() {
                return l.w[idx];
            }
            idx -= l.w.len();
            if idx < l.b.len() {
                return l.b[idx];
            }
            idx -= l.b.len();
        }
        panic!("param index out of range");
    }

    pub fn set_param(&mut self, mut idx: usize, value: f64) {
        for l in &mut self.layers {
            if idx < l.w.len() {
                l.w[idx] = value;
                return;
            }
            idx -= l.w.len();
            if idx < l.b.len() {
                l.b[idx] = value;
                return;
            }
            idx -= l.b.len();
        }
        panic!("param index out of range");
    }
}

/// Intermediates of one forward pass.
pub(crate) struct ForwardTrace {
    /// Input to each layer (after the previous rectifier).
    pub activations: Vec<Vec<f64>>,
    /// Pre-rectifier outputs of each layer.
    pub pre: Vec<Vec<f64>>,
    /// Guarded L2 denominator.
    pub denom: f64,
    /// Unit-norm output.
    pub output: Vec<f64>,
}
