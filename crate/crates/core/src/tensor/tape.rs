//! Batched jet propagation with reverse accumulation.
//!
//! Activations are stored as `(channels · points) × width` matrices with the
//! channel index outermost, so every layer is one matrix product regardless of
//! how many derivative slots are carried. The forward pass records what the
//! reverse pass needs: layer inputs, pre-activation jets and the activation
//! derivative values at each pre-activation.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Axis};

use crate::error::{Error, Result};
use crate::tensor::jet::{slot, JetPlan};
use crate::tensor::mlp::{GradBuffer, Mlp};

struct HiddenRecord {
    /// Pre-activation jets, `(C·B) × out`.
    z: Array2<f64>,
    /// `σ^(k)(z_value)` for `k = 0..=max_order+1`, each of length `B·out`.
    derivs: Vec<Vec<f64>>,
}

/// Coordinate-wise affine map `p ↦ scale ⊙ p + offset` applied to trunk
/// inputs before the first layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InputMap {
    pub scale: [f64; 3],
    pub offset: [f64; 3],
}

impl InputMap {
    pub const IDENTITY: InputMap = InputMap {
        scale: [1.0; 3],
        offset: [0.0; 3],
    };

    #[inline]
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|k| self.scale[k] * p[k] + self.offset[k])
    }
}

/// Forward record of one network over a batch of points.
pub struct JetTape {
    plan: JetPlan,
    npts: usize,
    inputs: Vec<Array2<f64>>,
    hidden: Vec<HiddenRecord>,
    output: Array2<f64>,
}

impl JetTape {
    /// Input jets for `(x1, x2, t)` points: the value channel holds the
    /// coordinates and each first-order channel is the matching unit vector.
    pub fn seed_points(plan: &JetPlan, points: &[[f64; 3]]) -> Array2<f64> {
        Self::seed_mapped(plan, points, &InputMap::IDENTITY)
    }

    /// Input jets of `map(p)`: derivatives are still taken with respect to
    /// the raw coordinates, so first-order channels carry the map's scales.
    pub fn seed_mapped(plan: &JetPlan, points: &[[f64; 3]], map: &InputMap) -> Array2<f64> {
        let b = points.len();
        let mut input = Array2::zeros((plan.channels() * b, 3));
        for (i, p) in points.iter().enumerate() {
            let q = map.apply(*p);
            for v in 0..3 {
                input[[i, v]] = q[v];
            }
        }
        for (var, s) in [slot::X1, slot::X2, slot::T].into_iter().enumerate() {
            if let Some(c) = plan.channel_of(s) {
                input.slice_mut(s![c * b..(c + 1) * b, var]).fill(map.scale[var]);
            }
        }
        input
    }

    pub fn plan(&self) -> &JetPlan {
        &self.plan
    }

    pub fn points(&self) -> usize {
        self.npts
    }

    /// Output jets, `(C·B) × out`; row `c·B + b` is channel `c` of point `b`.
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn into_output(self) -> Array2<f64> {
        self.output
    }

    /// Accumulates into `grads` the parameter gradient of `Σ adj_out ⊙ output`.
    pub fn backward(&self, net: &Mlp, adj_out: &Array2<f64>, grads: &mut GradBuffer) -> Result<()> {
        if adj_out.dim() != self.output.dim() {
            return Err(Error::Dimension {
                context: "output adjoint",
                expected: self.output.len(),
                got: adj_out.len(),
            });
        }
        if !grads.matches(net) {
            return Err(Error::Invalid("gradient buffer does not match network".into()));
        }
        let b = self.npts;
        let inv_scale = 1.0 / grads.scale;
        let mut adj_z = adj_out.to_owned();
        for layer in (0..net.layers()).rev() {
            general_mat_mul(inv_scale, &adj_z.t(), &self.inputs[layer], 1.0, &mut grads.weights[layer]);
            grads.biases[layer].scaled_add(inv_scale, &adj_z.slice(s![0..b, ..]).sum_axis(Axis(0)));
            if layer == 0 {
                break;
            }
            let adj_a = adj_z.dot(&net.weights()[layer]);
            adj_z = activation_backward(&self.plan, b, &adj_a, &self.hidden[layer - 1]);
        }
        Ok(())
    }
}

impl Mlp {
    /// Propagates input jets (`(C·B) × in`, laid out as [`JetTape`] expects)
    /// through the network and records a tape.
    pub fn forward_jets(&self, plan: &JetPlan, input: Array2<f64>, npts: usize) -> Result<JetTape> {
        if input.ncols() != self.input_dim() {
            return Err(Error::Dimension {
                context: "network input",
                expected: self.input_dim(),
                got: input.ncols(),
            });
        }
        if input.nrows() != plan.channels() * npts {
            return Err(Error::Dimension {
                context: "input jet rows",
                expected: plan.channels() * npts,
                got: input.nrows(),
            });
        }
        let nderiv = plan.max_order() + 2;
        let layers = self.layers();
        let mut inputs = Vec::with_capacity(layers);
        let mut hidden = Vec::with_capacity(layers.saturating_sub(1));
        let mut a = input;
        for layer in 0..layers {
            let w = &self.weights()[layer];
            let mut z = a.dot(&w.t());
            z.slice_mut(s![0..npts, ..]).scaled_add(1.0, &self.biases()[layer].view().insert_axis(Axis(0)));
            inputs.push(a);
            if layer + 1 == layers {
                return Ok(JetTape {
                    plan: plan.clone(),
                    npts,
                    inputs,
                    hidden,
                    output: z,
                });
            }
            let width = z.ncols();
            let bw = npts * width;
            let zs = z.as_slice().expect("standard layout");
            let mut derivs = vec![Vec::new(); nderiv];
            self.activation().derivative_columns(&zs[..bw], &mut derivs);
            let mut next = Array2::zeros(z.dim());
            activation_forward(plan, bw, zs, &derivs, next.as_slice_mut().expect("fresh array"));
            hidden.push(HiddenRecord { z, derivs });
            a = next;
        }
        unreachable!("networks have at least one layer")
    }
}

fn activation_forward(plan: &JetPlan, bw: usize, z: &[f64], derivs: &[Vec<f64>], out: &mut [f64]) {
    out[..bw].copy_from_slice(&derivs[0][..bw]);
    for c in 1..plan.channels() {
        let dst = &mut out[c * bw..(c + 1) * bw];
        for term in plan.terms(c) {
            let d = &derivs[term.order][..bw];
            let zb = |j: usize| &z[term.blocks[j] * bw..(term.blocks[j] + 1) * bw];
            match term.nblocks {
                1 => {
                    let z0 = zb(0);
                    for i in 0..bw {
                        dst[i] += d[i] * z0[i];
                    }
                }
                2 => {
                    let (z0, z1) = (zb(0), zb(1));
                    for i in 0..bw {
                        dst[i] += d[i] * z0[i] * z1[i];
                    }
                }
                _ => {
                    let (z0, z1, z2) = (zb(0), zb(1), zb(2));
                    for i in 0..bw {
                        dst[i] += d[i] * z0[i] * z1[i] * z2[i];
                    }
                }
            }
        }
    }
}

/// Block `b` of `gz`, where blocks have length `bw`.
#[inline]
fn block_mut(gz: &mut [f64], b: usize, bw: usize) -> &mut [f64] {
    &mut gz[b * bw..(b + 1) * bw]
}

fn activation_backward(plan: &JetPlan, npts: usize, adj_a: &Array2<f64>, rec: &HiddenRecord) -> Array2<f64> {
    let width = adj_a.ncols();
    let bw = npts * width;
    let ga = adj_a.as_slice().expect("standard layout");
    let z = rec.z.as_slice().expect("standard layout");
    let zb = |b: usize| &z[b * bw..(b + 1) * bw];
    let d: Vec<&[f64]> = rec.derivs.iter().map(|v| &v[..bw]).collect();
    let mut adj_z = Array2::zeros(adj_a.dim());
    let gz = adj_z.as_slice_mut().expect("fresh array");
    {
        let (g0, d1) = (&ga[..bw], d[1]);
        let out = &mut gz[..bw];
        for i in 0..bw {
            out[i] = g0[i] * d1[i];
        }
    }
    // Value-block contribution (needs σ^(k+1)) and block contributions (σ^(k)),
    // accumulated in separate sweeps so each loop touches disjoint slices.
    let mut tmp = vec![0.0; bw];
    for c in 1..plan.channels() {
        let g = &ga[c * bw..(c + 1) * bw];
        for term in plan.terms(c) {
            let k = term.order;
            let (dk, dk1) = (d[k], d[k + 1]);
            for i in 0..bw {
                tmp[i] = g[i] * dk[i];
            }
            let [b0, b1, b2] = term.blocks;
            match term.nblocks {
                1 => {
                    let z0 = zb(b0);
                    let out = &mut gz[..bw];
                    for i in 0..bw {
                        out[i] += g[i] * dk1[i] * z0[i];
                    }
                    let out = block_mut(gz, b0, bw);
                    for i in 0..bw {
                        out[i] += tmp[i];
                    }
                }
                2 => {
                    let (z0, z1) = (zb(b0), zb(b1));
                    let out = &mut gz[..bw];
                    for i in 0..bw {
                        out[i] += g[i] * dk1[i] * z0[i] * z1[i];
                    }
                    let out = block_mut(gz, b0, bw);
                    for i in 0..bw {
                        out[i] += tmp[i] * z1[i];
                    }
                    let out = block_mut(gz, b1, bw);
                    for i in 0..bw {
                        out[i] += tmp[i] * z0[i];
                    }
                }
                _ => {
                    let (z0, z1, z2) = (zb(b0), zb(b1), zb(b2));
                    let out = &mut gz[..bw];
                    for i in 0..bw {
                        out[i] += g[i] * dk1[i] * z0[i] * z1[i] * z2[i];
                    }
                    let out = block_mut(gz, b0, bw);
                    for i in 0..bw {
                        out[i] += tmp[i] * z1[i] * z2[i];
                    }
                    let out = block_mut(gz, b1, bw);
                    for i in 0..bw {
                        out[i] += tmp[i] * z0[i] * z2[i];
                    }
                    let out = block_mut(gz, b2, bw);
                    for i in 0..bw {
                        out[i] += tmp[i] * z0[i] * z1[i];
                    }
                }
            }
        }
    }
    adj_z
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::jet::{Slots, NSLOTS, SLOT_INDEX};
    use crate::tensor::mlp::Activation;
    use ndarray::Array1;
    use rand::{Rng, SeedableRng};
    use rand_pcg::Pcg64;

    fn random_net(act: Activation, seed: u64) -> Mlp {
        let mut rng = Pcg64::seed_from_u64(seed);
        let mut net = Mlp::glorot(&[3, 12, 10, 4], act, &mut rng).unwrap();
        for b in net.biases_mut() {
            b.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        net
    }

    /// Partial derivative by nested central differences over the value-only
    /// forward pass; independent of the jet machinery.
    fn fd_partial(net: &Mlp, p: [f64; 3], index: &[u8], out: usize, h: f64) -> f64 {
        match index.split_first() {
            None => net.forward(&p).unwrap()[out],
            Some((&v, rest)) => {
                let mut lo = p;
                let mut hi = p;
                lo[v as usize] -= h;
                hi[v as usize] += h;
                (fd_partial(net, hi, rest, out, h) - fd_partial(net, lo, rest, out, h)) / (2.0 * h)
            }
        }
    }

    #[test]
    fn affine_network_jet_is_weight_row() {
        let w = Array2::from_shape_vec((2, 3), vec![1.0, -2.0, 0.5, 3.0, 0.25, -1.0]).unwrap();
        let b = Array1::from(vec![0.1, 0.2]);
        let net = Mlp::new(&[3, 2], Activation::Tanh, vec![w.clone()], vec![b]).unwrap();
        let jets = net.jet([0.3, 0.7], 0.2, 3).unwrap();
        for (k, jet) in jets.iter().enumerate() {
            assert_eq!(jet.d1, [w[[k, 0]], w[[k, 1]], w[[k, 2]]]);
            assert_eq!(jet.d2, [0.0; 6]);
            assert_eq!(jet.d3, Some([[0.0; 6]; 2]));
        }
    }

    #[test]
    fn constant_network_has_zero_partials() {
        let mut net = Mlp::zeros(&[3, 5, 2], Activation::Gelu).unwrap();
        net.biases_mut()[1].assign(&Array1::from(vec![0.7, -1.5]));
        let jets = net.jet([1.0, 2.0], 0.5, 3).unwrap();
        assert_eq!(jets[0].value, 0.7);
        assert_eq!(jets[1].value, -1.5);
        for j in &jets {
            assert_eq!(j.d1, [0.0; 3]);
            assert_eq!(j.d2, [0.0; 6]);
        }
    }

    #[test]
    fn jets_match_finite_differences() {
        for (act, tol) in [(Activation::Tanh, 1e-5), (Activation::Gelu, 1e-4)] {
            let net = random_net(act, 3);
            let p = [0.4, -0.3, 0.6];
            let jets = net.jet([p[0], p[1]], p[2], 3).unwrap();
            for (k, jet) in jets.iter().enumerate() {
                let s = jet.to_slots();
                for slot in 0..NSLOTS {
                    let idx = SLOT_INDEX[slot];
                    let h = if idx.len() == 3 { 2e-3 } else { 1e-4 };
                    let fd = fd_partial(&net, p, idx, k, h);
                    let err = (s[slot] - fd).abs() / fd.abs().max(1.0);
                    let bound = if idx.len() == 3 { 1e-4 } else { tol };
                    assert!(err < bound, "{act} out {k} slot {idx:?}: {} vs {fd}", s[slot]);
                }
            }
        }
    }

    #[test]
    fn batch_rows_are_independent_of_batch_composition() {
        let net = random_net(Activation::Tanh, 9);
        let plan = JetPlan::full(2).unwrap();
        let pts: Vec<[f64; 3]> = (0..37).map(|i| [0.1 * i as f64, 1.0 - 0.05 * i as f64, 0.02 * i as f64]).collect();
        let batch = net.forward_jets(&plan, JetTape::seed_points(&plan, &pts), pts.len()).unwrap();
        for (i, p) in pts.iter().enumerate().step_by(5) {
            let single = net.forward_jets(&plan, JetTape::seed_points(&plan, &[*p]), 1).unwrap();
            for c in 0..plan.channels() {
                for k in 0..4 {
                    assert_eq!(batch.output()[[c * pts.len() + i, k]], single.output()[[c, k]]);
                }
            }
        }
    }

    /// Gradient of a scalar built from the jet outputs, checked against
    /// parameter finite differences.
    #[test]
    fn backward_through_jets_matches_finite_differences() {
        for act in [Activation::Tanh, Activation::Gelu] {
            let net = random_net(act, 11);
            let plan = JetPlan::full(3).unwrap();
            let pts = [[0.2, 0.5, 0.3], [-0.4, 0.1, 0.9]];
            let mut rng = Pcg64::seed_from_u64(5);
            let rows = plan.channels() * pts.len();
            let weights = Array2::from_shape_fn((rows, 4), |_| rng.random_range(-1.0..1.0));
            let loss = |n: &Mlp| -> f64 {
                let tape = n.forward_jets(&plan, JetTape::seed_points(&plan, &pts), pts.len()).unwrap();
                tape.output().iter().zip(weights.iter()).map(|(o, w)| 0.5 * w * o * o).sum()
            };
            let tape = net.forward_jets(&plan, JetTape::seed_points(&plan, &pts), pts.len()).unwrap();
            let adj = tape.output() * &weights;
            let mut grads = GradBuffer::zeros_for(&net);
            tape.backward(&net, &adj, &mut grads).unwrap();
            for i in (0..net.num_params()).step_by(7) {
                let h = 1e-5;
                let mut hi = net.clone();
                *hi.param_mut(i) += h;
                let mut lo = net.clone();
                *lo.param_mut(i) -= h;
                let fd = (loss(&hi) - loss(&lo)) / (2.0 * h);
                let g = grads.get(i);
                assert!((g - fd).abs() <= 1e-5 * fd.abs().max(1.0), "{act} param {i}: {g} vs {fd}");
            }
        }
    }

    #[test]
    fn slots_helper_is_consistent() {
        let s = Slots::constant(2.0);
        assert_eq!(s[0], 2.0);
        assert_eq!(s[slot::X1], 0.0);
    }
}
