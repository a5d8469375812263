//! Adam optimizer over a set of networks.

use crate::error::{Error, Result};
use crate::tensor::mlp::{GradBuffer, Mlp};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates, flattened per network in parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(nets: &[&Mlp]) -> Self {
        AdamState {
            step: 0,
            m: nets.iter().map(|n| vec![0.0; n.num_params()]).collect(),
            v: nets.iter().map(|n| vec![0.0; n.num_params()]).collect(),
        }
    }

    pub fn matches(&self, nets: &[&Mlp]) -> bool {
        self.m.len() == nets.len()
            && self.v.len() == nets.len()
            && nets
                .iter()
                .zip(self.m.iter().zip(&self.v))
                .all(|(n, (m, v))| m.len() == n.num_params() && v.len() == n.num_params())
    }

    /// One bias-corrected Adam update. Every gradient is checked for
    /// finiteness first; on failure no parameter is touched.
    pub fn step(&mut self, nets: &mut [&mut Mlp], grads: &[GradBuffer], names: &[&str], lr: f64) -> Result<()> {
        if nets.len() != grads.len() || nets.len() != self.m.len() {
            return Err(Error::Dimension {
                context: "optimizer networks",
                expected: self.m.len(),
                got: nets.len(),
            });
        }
        for (k, g) in grads.iter().enumerate() {
            if !g.is_finite() {
                let name = names.get(k).copied().unwrap_or("network");
                return Err(Error::NonFinite(format!("gradient of {name} ({})", locate_non_finite(g))));
            }
        }
        self.step += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
        for (k, (net, g)) in nets.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, gi) in g.values().enumerate() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * gi;
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                *net.param_mut(i) -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }
}

fn locate_non_finite(g: &GradBuffer) -> String {
    for (l, w) in g.weights.iter().enumerate() {
        if w.iter().any(|v| !(v * g.scale).is_finite()) {
            return format!("layer {l} weights");
        }
    }
    for (l, b) in g.biases.iter().enumerate() {
        if b.iter().any(|v| !(v * g.scale).is_finite()) {
            return format!("layer {l} biases");
        }
    }
    "scale".into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::mlp::Activation;
    use ndarray::{Array1, Array2};

    fn scalar_net(w: f64) -> Mlp {
        Mlp::new(&[1, 1], Activation::Tanh, vec![Array2::from_elem((1, 1), w)], vec![Array1::zeros(1)]).unwrap()
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut net = scalar_net(1.0);
        let mut state = AdamState::new(&[&net]);
        let mut g = GradBuffer::zeros_for(&net);
        g.weights[0][[0, 0]] = 3.7;
        g.biases[0][0] = -0.2;
        state.step(&mut [&mut net], &[g], &["net"], 0.01).unwrap();
        assert!((net.weights()[0][[0, 0]] - 0.99).abs() < 1e-9);
        assert!((net.biases()[0][0] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut net = scalar_net(5.0);
        let mut state = AdamState::new(&[&net]);
        for _ in 0..3000 {
            let mut g = GradBuffer::zeros_for(&net);
            g.weights[0][[0, 0]] = 2.0 * (net.weights()[0][[0, 0]] - 1.5);
            state.step(&mut [&mut net], &[g], &["net"], 0.01).unwrap();
        }
        assert!((net.weights()[0][[0, 0]] - 1.5).abs() < 1e-3);
    }

    #[test]
    fn non_finite_gradient_leaves_parameters_untouched() {
        let mut net = scalar_net(2.0);
        let mut state = AdamState::new(&[&net]);
        let mut g = GradBuffer::zeros_for(&net);
        g.biases[0][0] = f64::NAN;
        let err = state.step(&mut [&mut net], &[g], &["trunk"], 0.1).unwrap_err();
        assert!(err.to_string().contains("trunk"));
        assert!(err.to_string().contains("layer 0 biases"));
        assert_eq!(net.weights()[0][[0, 0]], 2.0);
        assert_eq!(state.step, 0);
    }
}
