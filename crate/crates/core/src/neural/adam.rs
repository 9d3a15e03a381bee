//! Adaptive-moment parameter updates.
//!
//! The standard first/second-moment recursion with bias correction:
//!
//! ```text
//! m ← β₁ m + (1−β₁) g,    v ← β₂ v + (1−β₂) g²,
//! p ← p − lr · (m / (1−β₁ᵗ)) / (√(v / (1−β₂ᵗ)) + ε),
//! ```
//!
//! with the conventional defaults β₁ = 0.9, β₂ = 0.999, ε = 1e-8. Updates
//! are deterministic given the gradient sequence, and a zero gradient leaves
//! parameters exactly unchanged (both moments stay zero, so the step is
//! `lr·0/(0+ε) = 0` bitwise).

use ndarray::{Array1, Array2};

use super::{MlpGradients, MlpParams};

/// Per-parameter moment accumulators plus the step counter and learning
/// rate for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: u64,
    m_weights: Vec<Array2<f64>>,
    v_weights: Vec<Array2<f64>>,
    m_biases: Vec<Array1<f64>>,
    v_biases: Vec<Array1<f64>>,
}

impl OptimizerState {
    pub fn new(params: &MlpParams, learning_rate: f64) -> Self {
        OptimizerState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m_weights: params.weights().iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            v_weights: params.weights().iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            m_biases: params.biases().iter().map(|b| Array1::zeros(b.len())).collect(),
            v_biases: params.biases().iter().map(|b| Array1::zeros(b.len())).collect(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    /// Rescale the learning rate (divergence guards halve it mid-training).
    pub fn set_learning_rate(&mut self, lr: f64) {
        self.learning_rate = lr;
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update of `params` in place from `grads`.
    pub fn step(&mut self, params: &mut MlpParams, grads: &MlpGradients) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for l in 0..self.m_weights.len() {
            let g = &grads.weights[l];
            self.m_weights[l].zip_mut_with(g, |m, g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            self.v_weights[l]
                .zip_mut_with(g, |v, g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            let mut w_step = Array2::zeros(g.raw_dim());
            w_step
                .iter_mut()
                .zip(self.m_weights[l].iter().zip(self.v_weights[l].iter()))
                .for_each(|(s, (m, v))| {
                    *s = self.learning_rate * (m / bc1) / ((v / bc2).sqrt() + self.epsilon);
                });

            let gb = &grads.biases[l];
            self.m_biases[l].zip_mut_with(gb, |m, g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            self.v_biases[l]
                .zip_mut_with(gb, |v, g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            let mut b_step = Array1::zeros(gb.len());
            b_step
                .iter_mut()
                .zip(self.m_biases[l].iter().zip(self.v_biases[l].iter()))
                .for_each(|(s, (m, v))| {
                    *s = self.learning_rate * (m / bc1) / ((v / bc2).sqrt() + self.epsilon);
                });

            params.apply_update(l, &w_step, &b_step);
        }
    }

    /// Moments flattened in the parameter order documented on
    /// [`MlpParams::to_flat`]: per layer, weight moments row-major, then
    /// bias moments — first all of `m`, separately all of `v`.
    pub fn to_flat(&self) -> (Vec<f64>, Vec<f64>) {
        let mut m = Vec::new();
        let mut v = Vec::new();
        for l in 0..self.m_weights.len() {
            m.extend(self.m_weights[l].iter());
            m.extend(self.m_biases[l].iter());
            v.extend(self.v_weights[l].iter());
            v.extend(self.v_biases[l].iter());
        }
        (m, v)
    }

    /// Rebuild from flattened moments; inverse of [`OptimizerState::to_flat`].
    pub fn from_flat(
        params: &MlpParams,
        learning_rate: f64,
        step: u64,
        m_flat: &[f64],
        v_flat: &[f64],
    ) -> crate::Result<Self> {
        let mut state = OptimizerState::new(params, learning_rate);
        state.step = step;
        let expected = params.parameter_count();
        if m_flat.len() != expected || v_flat.len() != expected {
            return Err(crate::Error::DimensionMismatch(format!(
                "optimizer moments have {}/{} entries, network needs {expected}",
                m_flat.len(),
                v_flat.len()
            )));
        }
        let mut cursor = 0;
        for l in 0..state.m_weights.len() {
            for idx in 0..state.m_weights[l].len() {
                let slot = state.m_weights[l].as_slice_mut().expect("standard layout");
                slot[idx] = m_flat[cursor];
                let slot = state.v_weights[l].as_slice_mut().expect("standard layout");
                slot[idx] = v_flat[cursor];
                cursor += 1;
            }
            for idx in 0..state.m_biases[l].len() {
                state.m_biases[l][idx] = m_flat[cursor];
                state.v_biases[l][idx] = v_flat[cursor];
                cursor += 1;
            }
        }
        Ok(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Head;

    #[test]
    fn zero_gradient_leaves_parameters_bitwise_unchanged() {
        let mut net = MlpParams::new_zero(&[3, 4, 1], Head::Identity).unwrap();
        net.weights[0][[0, 0]] = 0.123456789;
        let before = net.clone();
        let mut opt = OptimizerState::new(&net, 5e-4);
        let grads = MlpGradients::zeros_like(&net);
        for _ in 0..3 {
            opt.step(&mut net, &grads);
        }
        assert_eq!(net, before);
    }

    #[test]
    fn single_step_descends_a_scalar_square() {
        // One parameter, loss p²: gradient 2p at p = 1.
        let mut net = MlpParams::new_zero(&[1, 1], Head::Identity).unwrap();
        net.weights[0][[0, 0]] = 1.0;
        let mut opt = OptimizerState::new(&net, 0.01);
        let mut grads = MlpGradients::zeros_like(&net);
        grads.weights[0][[0, 0]] = 2.0;
        opt.step(&mut net, &grads);
        let p = net.weights[0][[0, 0]];
        assert!(p < 1.0 && p > 0.9, "one step should move slightly downhill, got {p}");
    }

    #[test]
    fn two_dimensional_quadratic_converges() {
        // f(p) = (p₀ − 0.3)² + 2(p₁ + 0.7)², minimum (0.3, −0.7).
        let mut net = MlpParams::new_zero(&[2, 1], Head::Identity).unwrap();
        let mut opt = OptimizerState::new(&net, 0.05);
        for _ in 0..200 {
            let p0 = net.weights[0][[0, 0]];
            let p1 = net.weights[0][[0, 1]];
            let mut grads = MlpGradients::zeros_like(&net);
            grads.weights[0][[0, 0]] = 2.0 * (p0 - 0.3);
            grads.weights[0][[0, 1]] = 4.0 * (p1 + 0.7);
            opt.step(&mut net, &grads);
        }
        let p0 = net.weights[0][[0, 0]];
        let p1 = net.weights[0][[0, 1]];
        let dist = ((p0 - 0.3).powi(2) + (p1 + 0.7).powi(2)).sqrt();
        assert!(dist <= 1e-3, "after 200 steps distance to the minimum is {dist:.2e}");
    }

    #[test]
    fn updates_are_deterministic() {
        let run = || {
            let mut net = MlpParams::new_zero(&[2, 2, 1], Head::Identity).unwrap();
            let mut opt = OptimizerState::new(&net, 1e-3);
            let mut grads = MlpGradients::zeros_like(&net);
            for s in 0..10 {
                grads.weights[0][[0, 0]] = (s as f64 + 1.0) * 0.1;
                grads.biases[1][0] = -0.3;
                opt.step(&mut net, &grads);
            }
            net
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn moment_round_trip_resumes_identically() {
        let mut net = MlpParams::new_zero(&[2, 3, 1], Head::Identity).unwrap();
        let mut opt = OptimizerState::new(&net, 0.02);
        let mut grads = MlpGradients::zeros_like(&net);
        grads.weights[0][[1, 0]] = 0.5;
        grads.weights[1][[0, 2]] = -0.25;
        for _ in 0..5 {
            opt.step(&mut net, &grads);
        }
        let (m, v) = opt.to_flat();
        let restored =
            OptimizerState::from_flat(&net, 0.02, opt.step_count(), &m, &v).unwrap();
        assert_eq!(opt, restored);
        // Continuing from the restored state matches continuing the original.
        let mut net2 = net.clone();
        let mut opt2 = restored;
        opt.step(&mut net, &grads);
        opt2.step(&mut net2, &grads);
        assert_eq!(net, net2);
    }
}
