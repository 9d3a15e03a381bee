//! Feedforward networks with exact derivatives.
//!
//! The solver parametrizes each player's value function `V(t, x)` and policy
//! `ℓ(t, x)` by small multilayer perceptrons: input `(t/T, x) ∈ ℝ^{1+3N}`,
//! tanh hidden layers, and an identity (value) or logistic (policy) output
//! head. This module owns the parameter container ([`MlpParams`]), plain
//! evaluation ([`MlpParams::forward`], [`MlpParams::forward_batch`]), the
//! exact input gradient ([`MlpParams::input_gradient`]), the
//! adaptive-moment optimizer ([`OptimizerState`]), checkpoint serialization
//! ([`checkpoint`]), and — through [`tape`] — reverse-mode parameter
//! gradients of losses that may themselves contain input gradients, which
//! requires exact second-order derivatives.
//!
//! Initialization draws hidden weights uniformly with scale
//! `√(6/(fan_in + fan_out))` and zeroes all biases, keeping tanh units in
//! their linear regime at the start of training. Inputs are expected
//! normalized: time as `t/T`, compartments as fractions (already `O(1)`).

pub mod adam;
pub mod checkpoint;
pub mod tape;

pub use adam::OptimizerState;
pub use tape::{BoundNet, ForwardTrace, Tape, Var};

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Output-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    /// Raw affine output — value networks.
    Identity,
    /// Logistic squash into `(0, 1)` — policy networks.
    Logistic,
}

/// Parameters of one feedforward network: `dims = [in, h₁, …, out]`, weight
/// matrix `W_l` of shape `dims[l+1] × dims[l]` and bias of length
/// `dims[l+1]` per layer, tanh hidden activations, and an output [`Head`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    dims: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    head: Head,
}

/// Parameter-shaped gradient container produced by a tape sweep.
#[derive(Debug, Clone)]
pub struct MlpGradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl MlpParams {
    /// All-zero parameters (useful as a known fixed point: the identity head
    /// then outputs 0 everywhere, the logistic head 1/2).
    pub fn new_zero(dims: &[usize], head: Head) -> Result<Self> {
        check_dims(dims)?;
        let weights = layer_pairs(dims)
            .map(|(d_in, d_out)| Array2::zeros((d_out, d_in)))
            .collect();
        let biases = layer_pairs(dims).map(|(_, d_out)| Array1::zeros(d_out)).collect();
        Ok(MlpParams { dims: dims.to_vec(), weights, biases, head })
    }

    /// Glorot-uniform initialization: `W_l ~ U[−s, s]` entrywise with
    /// `s = √(6/(fan_in + fan_out))`, biases zero. Entries are drawn in
    /// layer order, row-major within each matrix, so a fixed RNG stream
    /// reproduces the same network bitwise.
    pub fn glorot(dims: &[usize], head: Head, rng: &mut ChaCha8Rng) -> Result<Self> {
        check_dims(dims)?;
        let mut weights = Vec::with_capacity(dims.len() - 1);
        for (d_in, d_out) in layer_pairs(dims) {
            let scale = (6.0 / (d_in + d_out) as f64).sqrt();
            let mut w = Array2::zeros((d_out, d_in));
            for v in w.iter_mut() {
                *v = rng.gen_range(-scale..scale);
            }
            weights.push(w);
        }
        let biases = layer_pairs(dims).map(|(_, d_out)| Array1::zeros(d_out)).collect();
        Ok(MlpParams { dims: dims.to_vec(), weights, biases, head })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("nonempty dims")
    }

    /// Total scalar parameter count.
    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Scalar forward pass; `input` is the already-normalized `(t/T, x)` row.
    pub fn forward(&self, input: &[f64]) -> Result<f64> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "network input has {} components, expected {}",
                input.len(),
                self.input_dim()
            )));
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("network input has non-finite components"));
        }
        if self.output_dim() != 1 {
            return Err(Error::invalid("scalar forward needs an output dimension of 1"));
        }
        let row = ArrayView2::from_shape((1, input.len()), input)
            .expect("contiguous slice reshapes to a row");
        Ok(self.forward_batch(row)[[0, 0]])
    }

    /// Batched forward pass over rows of `inputs` (`B × dims[0]`), returning
    /// `B × dims.last()`.
    pub fn forward_batch(&self, inputs: ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(inputs.ncols(), self.input_dim(), "input width mismatch");
        let mut h = inputs.to_owned();
        let layers = self.weights.len();
        for l in 0..layers {
            let mut pre = h.dot(&self.weights[l].t());
            pre += &self.biases[l].view().insert_axis(ndarray::Axis(0));
            h = if l + 1 < layers {
                pre.mapv_into(f64::tanh)
            } else {
                match self.head {
                    Head::Identity => pre,
                    Head::Logistic => pre.mapv_into(|v| 1.0 / (1.0 + (-v).exp())),
                }
            };
        }
        h
    }

    /// Exact gradient of the scalar output with respect to the *state*
    /// coordinates: component 0 of the input is the time channel and is
    /// excluded, so the result has length `dims[0] − 1`.
    pub fn input_gradient(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "network input has {} components, expected {}",
                input.len(),
                self.input_dim()
            )));
        }
        if self.output_dim() != 1 {
            return Err(Error::invalid("input gradient needs a scalar-output network"));
        }
        let layers = self.weights.len();
        // Forward, keeping post-activation layers for the backward chain.
        let mut activations: Vec<Array1<f64>> = Vec::with_capacity(layers - 1);
        let mut h = Array1::from_vec(input.to_vec());
        for l in 0..layers - 1 {
            let mut pre = self.weights[l].dot(&h);
            pre += &self.biases[l];
            h = pre.mapv_into(f64::tanh);
            activations.push(h.clone());
        }
        let out_pre = self.weights[layers - 1].dot(&h)[0] + self.biases[layers - 1][0];
        // δ_L = head'(a_L); then δ_{l−1} = (δ_l W_l) ⊙ (1 − h_{l−1}²).
        let head_slope = match self.head {
            Head::Identity => 1.0,
            Head::Logistic => {
                let s = 1.0 / (1.0 + (-out_pre).exp());
                s * (1.0 - s)
            }
        };
        let mut delta = Array1::from_elem(1, head_slope);
        for l in (1..layers).rev() {
            let g = delta.dot(&self.weights[l]);
            let act = &activations[l - 1];
            delta = g * &act.mapv(|v| 1.0 - v * v);
        }
        let full = delta.dot(&self.weights[0]);
        Ok(full.iter().skip(1).copied().collect())
    }

    /// Batched [`MlpParams::input_gradient`]: one state-gradient row per
    /// input row, shape `B × (dims[0] − 1)`.
    pub fn input_gradient_batch(&self, inputs: ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(inputs.ncols(), self.input_dim(), "input width mismatch");
        assert_eq!(self.output_dim(), 1, "input gradient needs a scalar-output network");
        let layers = self.weights.len();
        let mut activations: Vec<Array2<f64>> = Vec::with_capacity(layers - 1);
        let mut h = inputs.to_owned();
        for l in 0..layers - 1 {
            let mut pre = h.dot(&self.weights[l].t());
            pre += &self.biases[l].view().insert_axis(ndarray::Axis(0));
            h = pre.mapv_into(f64::tanh);
            activations.push(h.clone());
        }
        let mut out_pre = h.dot(&self.weights[layers - 1].t());
        out_pre += &self.biases[layers - 1].view().insert_axis(ndarray::Axis(0));
        let mut delta: Array2<f64> = match self.head {
            Head::Identity => Array2::ones(out_pre.dim()),
            Head::Logistic => out_pre.mapv(|v| {
                let s = 1.0 / (1.0 + (-v).exp());
                s * (1.0 - s)
            }),
        };
        for l in (1..layers).rev() {
            let g = delta.dot(&self.weights[l]);
            let act = &activations[l - 1];
            delta = g * &act.mapv(|v| 1.0 - v * v);
        }
        let full = delta.dot(&self.weights[0]);
        full.slice(ndarray::s![.., 1..]).to_owned()
    }

    /// Mutable weight access, intended for finite-difference probes in tests.
    pub fn weights_mut(&mut self, layer: usize) -> &mut Array2<f64> {
        &mut self.weights[layer]
    }

    /// In-place parameter update `p ← p − step` used by the optimizer.
    pub(crate) fn apply_update(&mut self, layer: usize, weight_step: &Array2<f64>, bias_step: &Array1<f64>) {
        self.weights[layer] -= weight_step;
        self.biases[layer] -= bias_step;
    }

    pub fn validate(&self) -> Result<()> {
        check_dims(&self.dims)?;
        for (l, (d_in, d_out)) in layer_pairs(&self.dims).enumerate() {
            if self.weights[l].shape() != [d_out, d_in] {
                return Err(Error::DimensionMismatch(format!(
                    "layer {l}: weight shape {:?} does not chain {d_in} → {d_out}",
                    self.weights[l].shape()
                )));
            }
            if self.biases[l].len() != d_out {
                return Err(Error::DimensionMismatch(format!(
                    "layer {l}: bias length {} does not match width {d_out}",
                    self.biases[l].len()
                )));
            }
        }
        let all_finite = self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()));
        if !all_finite {
            return Err(Error::invalid("network parameters contain non-finite values"));
        }
        Ok(())
    }

    /// Parameters flattened in the documented order: for each layer, the
    /// weight matrix row-major, then the bias. Inverse of
    /// [`MlpParams::from_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.parameter_count());
        for l in 0..self.weights.len() {
            flat.extend(self.weights[l].iter());
            flat.extend(self.biases[l].iter());
        }
        flat
    }

    /// Rebuild from [`MlpParams::to_flat`] output.
    pub fn from_flat(dims: &[usize], head: Head, flat: &[f64]) -> Result<Self> {
        let mut net = MlpParams::new_zero(dims, head)?;
        if flat.len() != net.parameter_count() {
            return Err(Error::DimensionMismatch(format!(
                "flat parameter vector has {} entries, network needs {}",
                flat.len(),
                net.parameter_count()
            )));
        }
        let mut cursor = 0;
        for l in 0..net.weights.len() {
            for v in net.weights[l].iter_mut() {
                *v = flat[cursor];
                cursor += 1;
            }
            for v in net.biases[l].iter_mut() {
                *v = flat[cursor];
                cursor += 1;
            }
        }
        net.validate()?;
        Ok(net)
    }
}

impl MlpGradients {
    /// Zero gradients shaped like `params`.
    pub fn zeros_like(params: &MlpParams) -> Self {
        MlpGradients {
            weights: params.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: params.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
        }
    }

    /// Largest absolute entry across all gradients.
    pub fn max_abs(&self) -> f64 {
        let w = self
            .weights
            .iter()
            .flat_map(|w| w.iter())
            .fold(0.0f64, |acc, v| acc.max(v.abs()));
        self.biases
            .iter()
            .flat_map(|b| b.iter())
            .fold(w, |acc, v| acc.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::invalid("a network needs at least input and output layers"));
    }
    if dims.iter().any(|d| *d == 0) {
        return Err(Error::invalid("layer widths must be positive"));
    }
    Ok(())
}

fn layer_pairs(dims: &[usize]) -> impl Iterator<Item = (usize, usize)> + '_ {
    dims.windows(2).map(|w| (w[0], w[1]))
}
