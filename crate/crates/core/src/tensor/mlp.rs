use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::jet::{Jet, JetPlan, Slots};
use crate::tensor::tape::JetTape;

/// Hidden-layer nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    /// Exact `z·Φ(z)` form (not the tanh approximation).
    Gelu,
}

/// Highest activation derivative available. Third-order jets need the fourth
/// derivative during reverse accumulation.
pub const MAX_ACTIVATION_DERIVATIVE: usize = 4;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

impl Activation {
    /// Writes `σ^(k)(z)` for `k = 0..out.len()` into `out`.
    #[inline]
    pub fn derivatives(self, z: f64, out: &mut [f64]) {
        debug_assert!(out.len() <= MAX_ACTIVATION_DERIVATIVE + 1);
        match self {
            Activation::Tanh => {
                let s = tanh(z);
                let s2 = s * s;
                let d1 = 1.0 - s2;
                let all = [
                    s,
                    d1,
                    -2.0 * s * d1,
                    d1 * (6.0 * s2 - 2.0),
                    8.0 * s * d1 * (2.0 - 3.0 * s2),
                ];
                out.copy_from_slice(&all[..out.len()]);
            }
            Activation::Gelu => {
                let cdf = 0.5 * (1.0 + libm::erf(z * std::f64::consts::FRAC_1_SQRT_2));
                let pdf = INV_SQRT_2PI * (-0.5 * z * z).exp();
                let z2 = z * z;
                let all = [
                    z * cdf,
                    cdf + z * pdf,
                    pdf * (2.0 - z2),
                    pdf * z * (z2 - 4.0),
                    pdf * (-z2 * z2 + 7.0 * z2 - 4.0),
                ];
                out.copy_from_slice(&all[..out.len()]);
            }
        }
    }

    /// Column form of [`Activation::derivatives`]: `out[k][i] = σ^(k)(z[i])`.
    pub fn derivative_columns(self, z: &[f64], out: &mut [Vec<f64>]) {
        debug_assert!(out.len() <= MAX_ACTIVATION_DERIVATIVE + 1);
        let n = z.len();
        for col in out.iter_mut() {
            col.resize(n, 0.0);
        }
        match self {
            Activation::Tanh => {
                let (first, rest) = out.split_first_mut().expect("at least one column");
                let s = &mut first[..n];
                for (si, &zi) in s.iter_mut().zip(z) {
                    *si = tanh(zi);
                }
                let s = &*s;
                if rest.is_empty() {
                    return;
                }
                let (d1, rest) = rest.split_first_mut().expect("checked non-empty");
                let d1 = &mut d1[..n];
                for i in 0..n {
                    d1[i] = 1.0 - s[i] * s[i];
                }
                let d1 = &*d1;
                for (k, col) in rest.iter_mut().enumerate() {
                    let col = &mut col[..n];
                    match k {
                        0 => {
                            for i in 0..n {
                                col[i] = -2.0 * s[i] * d1[i];
                            }
                        }
                        1 => {
                            for i in 0..n {
                                col[i] = d1[i] * (6.0 * s[i] * s[i] - 2.0);
                            }
                        }
                        _ => {
                            for i in 0..n {
                                col[i] = 8.0 * s[i] * d1[i] * (2.0 - 3.0 * s[i] * s[i]);
                            }
                        }
                    }
                }
            }
            Activation::Gelu => {
                let mut buf = [0.0; MAX_ACTIVATION_DERIVATIVE + 1];
                let buf = &mut buf[..out.len()];
                for (i, &zi) in z.iter().enumerate() {
                    self.derivatives(zi, buf);
                    for (col, &v) in out.iter_mut().zip(buf.iter()) {
                        col[i] = v;
                    }
                }
            }
        }
    }

    pub fn apply(self, z: f64) -> f64 {
        let mut d = [0.0];
        self.derivatives(z, &mut d);
        d[0]
    }
}

/// `tanh` through a single `exp`. Absolute error stays within a few ulps of
/// one, which is all a hidden unit needs, at roughly a third of the cost of
/// the correctly rounded routine.
#[inline]
fn tanh(z: f64) -> f64 {
    let e = (-2.0 * z.abs()).exp();
    ((1.0 - e) / (1.0 + e)).copysign(z)
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Gelu => "gelu",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "gelu" => Ok(Activation::Gelu),
            other => Err(Error::Invalid(format!("unknown activation '{other}'"))),
        }
    }
}

/// A fully connected network `x ↦ W_L σ(… σ(W_1 x + b_1) …) + b_L`.
///
/// Weight `k` is stored `out × in`. There is no activation after the last
/// layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    activation: Activation,
    widths: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

impl Mlp {
    pub fn new(
        widths: &[usize],
        activation: Activation,
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
    ) -> Result<Self> {
        validate_widths(widths)?;
        if weights.len() != widths.len() - 1 || biases.len() != widths.len() - 1 {
            return Err(Error::Dimension {
                context: "layer count",
                expected: widths.len() - 1,
                got: weights.len().min(biases.len()),
            });
        }
        for (k, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.dim() != (widths[k + 1], widths[k]) {
                return Err(Error::Dimension {
                    context: "layer weight shape",
                    expected: widths[k + 1] * widths[k],
                    got: w.len(),
                });
            }
            if b.len() != widths[k + 1] {
                return Err(Error::Dimension {
                    context: "layer bias length",
                    expected: widths[k + 1],
                    got: b.len(),
                });
            }
            if w.iter().chain(b.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("parameters of layer {k}")));
            }
        }
        Ok(Mlp {
            activation,
            widths: widths.to_vec(),
            weights: weights.into_iter().map(|w| w.as_standard_layout().into_owned()).collect(),
            biases,
        })
    }

    pub fn zeros(widths: &[usize], activation: Activation) -> Result<Self> {
        validate_widths(widths)?;
        let weights = widths.windows(2).map(|w| Array2::zeros((w[1], w[0]))).collect();
        let biases = widths[1..].iter().map(|&n| Array1::zeros(n)).collect();
        Mlp::new(widths, activation, weights, biases)
    }

    /// Glorot-uniform weights `U(±√(6/(fan_in+fan_out)))`, zero biases.
    pub fn glorot<R: Rng + ?Sized>(widths: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        let mut net = Mlp::zeros(widths, activation)?;
        for w in &mut net.weights {
            let (fan_out, fan_in) = w.dim();
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in w.iter_mut() {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("validated widths")
    }

    pub fn layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Array1<f64>] {
        &mut self.biases
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Parameter `i` in flat order (layer by layer, weights row-major then bias).
    pub fn param(&self, i: usize) -> f64 {
        let (layer, is_bias, j) = self.locate(i);
        if is_bias {
            self.biases[layer][j]
        } else {
            self.weights[layer].as_slice().expect("standard layout")[j]
        }
    }

    pub fn param_mut(&mut self, i: usize) -> &mut f64 {
        let (layer, is_bias, j) = self.locate(i);
        if is_bias {
            &mut self.biases[layer][j]
        } else {
            &mut self.weights[layer].as_slice_mut().expect("standard layout")[j]
        }
    }

    fn locate(&self, mut i: usize) -> (usize, bool, usize) {
        for (layer, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            if i < w.len() {
                return (layer, false, i);
            }
            i -= w.len();
            if i < b.len() {
                return (layer, true, i);
            }
            i -= b.len();
        }
        panic!("parameter index out of range");
    }

    /// Single-input forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = Array2::from_shape_vec((1, input.len()), input.to_vec()).expect("row vector");
        Ok(self.forward_batch(&x)?.into_raw_vec_and_offset().0)
    }

    /// Forward pass over the rows of `inputs`.
    pub fn forward_batch(&self, inputs: &Array2<f64>) -> Result<Array2<f64>> {
        let tape = self.forward_jets(&JetPlan::value(), inputs.to_owned(), inputs.nrows())?;
        Ok(tape.into_output())
    }

    /// Output jets at a single space-time point for a `(x1, x2, t)`-input network.
    pub fn jet(&self, x: [f64; 2], t: f64, order: usize) -> Result<Vec<Jet>> {
        let plan = JetPlan::full(order)?;
        let tape = self.forward_jets(&plan, JetTape::seed_points(&plan, &[[x[0], x[1], t]]), 1)?;
        let out = tape.output();
        Ok((0..self.output_dim())
            .map(|k| {
                let mut s = Slots::zero();
                for (c, &slot) in plan.slots().iter().enumerate() {
                    s[slot] = out[[c, k]];
                }
                Jet::from_slots(&s, order)
            })
            .collect())
    }
}

fn validate_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 || widths.contains(&0) {
        return Err(Error::Invalid(format!("invalid layer widths {widths:?}")));
    }
    Ok(())
}

/// Gradient accumulators shaped like an [`Mlp`]. The effective gradient is
/// `scale ×` the stored values.
#[derive(Clone, Debug, PartialEq)]
pub struct GradBuffer {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub scale: f64,
}

impl GradBuffer {
    pub fn zeros_for(net: &Mlp) -> Self {
        GradBuffer {
            weights: net.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            biases: net.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
            scale: 1.0,
        }
    }

    pub fn matches(&self, net: &Mlp) -> bool {
        self.weights.len() == net.weights.len()
            && self.weights.iter().zip(&net.weights).all(|(g, w)| g.dim() == w.dim())
            && self.biases.iter().zip(&net.biases).all(|(g, b)| g.len() == b.len())
    }

    /// Adds `other` (with its scale) into `self` (in `self`'s units).
    pub fn accumulate(&mut self, other: &GradBuffer) {
        let f = other.scale / self.scale;
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.scaled_add(f, b);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.scaled_add(f, b);
        }
    }

    /// Effective gradient of flat parameter `i` (same order as [`Mlp::param`]).
    pub fn get(&self, mut i: usize) -> f64 {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            if i < w.len() {
                return self.scale * w.as_slice().expect("standard layout")[i];
            }
            i -= w.len();
            if i < b.len() {
                return self.scale * b[i];
            }
            i -= b.len();
        }
        panic!("parameter index out of range");
    }

    /// Effective gradient values in flat parameter order.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
            .map(move |v| v * self.scale)
    }

    pub fn is_finite(&self) -> bool {
        self.scale.is_finite() && self.values().all(f64::is_finite)
    }
}
