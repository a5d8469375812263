//! The coupled branch/trunk operators for the density and the potential.
//!
//! ```text
//! C(x, t) = Σ_k B⁰ᶜ_k(μ₀) B¹ᶜ_k(μ₁) Tᶜ_k(x, t)
//! H(x, t) = Σ_k B⁰ʰ_k(μ₀) B¹ʰ_k(μ₁) Tʰ_k(x, t)
//! ```
//!
//! Branch networks see the sensor values of the boundary densities; trunk
//! networks see `(x1, x2, t)`. All space-time partials therefore come from
//! the trunk jets, weighted by the branch products.

pub mod analytic;
pub mod residual;

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::{DensityGrid, Domain, MassConvention, MeshSpec};
use crate::tensor::jet::{Jet, JetPlan, Slots};
use crate::tensor::mlp::{Activation, Mlp};
use crate::tensor::tape::{InputMap, JetTape};

pub use analytic::TranslationField;
pub use residual::{residuals_at, FieldPair, ResidualAdjoint, ResidualOptions, Residuals};

/// Network positions inside [`OperatorParams`], also their serialization order.
pub const BRANCH0_CTY: usize = 0;
pub const BRANCH1_CTY: usize = 1;
pub const TRUNK_CTY: usize = 2;
pub const BRANCH0_HJ: usize = 3;
pub const BRANCH1_HJ: usize = 4;
pub const TRUNK_HJ: usize = 5;
pub const NETWORK_NAMES: [&str; 6] = ["branch0_cty", "branch1_cty", "trunk_cty", "branch0_hj", "branch1_hj", "trunk_hj"];

/// Shapes shared by the six networks. Depth counts hidden layers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Architecture {
    pub branch_width: usize,
    pub branch_depth: usize,
    pub trunk_width: usize,
    pub trunk_depth: usize,
    pub p: usize,
    pub activation: Activation,
    /// Sensor locations of the branch inputs; `m = nx · ny`.
    pub sensors: MeshSpec,
}

impl Architecture {
    pub fn m(&self) -> usize {
        self.sensors.len()
    }

    pub fn domain(&self) -> Domain {
        self.sensors.domain
    }

    pub fn branch_widths(&self) -> Vec<usize> {
        let mut w = vec![self.m()];
        w.extend(std::iter::repeat_n(self.branch_width, self.branch_depth));
        w.push(self.p);
        w
    }

    pub fn trunk_widths(&self) -> Vec<usize> {
        let mut w = vec![3];
        w.extend(std::iter::repeat_n(self.trunk_width, self.trunk_depth));
        w.push(self.p);
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.branch_width == 0 || self.trunk_width == 0 || self.p == 0 {
            return Err(Error::Config("network widths and p must be positive".into()));
        }
        if self.branch_depth == 0 || self.trunk_depth == 0 {
            return Err(Error::Config("networks need at least one hidden layer".into()));
        }
        Ok(())
    }

    /// Fixed trunk input normalization: `Ω × [0, 1]` onto `[-1, 1]³`.
    pub fn trunk_map(&self) -> InputMap {
        let d = self.domain();
        let scale = [2.0 / d.width(), 2.0 / d.height(), 2.0];
        InputMap {
            scale,
            offset: [-1.0 - scale[0] * d.x_min, -1.0 - scale[1] * d.y_min, -1.0],
        }
    }

    /// Total trainable parameters over all six networks.
    pub fn num_params(&self) -> usize {
        let count = |w: &[usize]| w.windows(2).map(|p| p[0] * p[1] + p[1]).sum::<usize>();
        4 * count(&self.branch_widths()) + 2 * count(&self.trunk_widths())
    }
}

/// The six networks and their shared architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorParams {
    arch: Architecture,
    nets: Vec<Mlp>,
}

/// Per-pair branch products `B⁰_k(μ₀) B¹_k(μ₁)` for both operators.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchCoefficients {
    pub cty: Vec<f64>,
    pub hj: Vec<f64>,
}

impl OperatorParams {
    /// Glorot-initialized networks.
    pub fn init<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let b = arch.branch_widths();
        let t = arch.trunk_widths();
        let mut nets = Vec::with_capacity(6);
        for k in 0..6 {
            let widths = if k == TRUNK_CTY || k == TRUNK_HJ { &t } else { &b };
            nets.push(Mlp::glorot(widths, arch.activation, rng)?);
        }
        Ok(OperatorParams { arch, nets })
    }

    /// Assembles from existing networks in [`NETWORK_NAMES`] order.
    pub fn from_networks(arch: Architecture, nets: Vec<Mlp>) -> Result<Self> {
        arch.validate()?;
        if nets.len() != 6 {
            return Err(Error::Dimension {
                context: "operator networks",
                expected: 6,
                got: nets.len(),
            });
        }
        for (k, net) in nets.iter().enumerate() {
            let expect = if k == TRUNK_CTY || k == TRUNK_HJ {
                arch.trunk_widths()
            } else {
                arch.branch_widths()
            };
            if net.widths() != expect.as_slice() || net.activation() != arch.activation {
                return Err(Error::Invalid(format!(
                    "{} has widths {:?} ({}), architecture expects {:?} ({})",
                    NETWORK_NAMES[k],
                    net.widths(),
                    net.activation(),
                    expect,
                    arch.activation
                )));
            }
        }
        Ok(OperatorParams { arch, nets })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn networks(&self) -> &[Mlp] {
        &self.nets
    }

    pub fn networks_mut(&mut self) -> &mut [Mlp] {
        &mut self.nets
    }

    pub fn net(&self, k: usize) -> &Mlp {
        &self.nets[k]
    }

    pub fn num_params(&self) -> usize {
        self.nets.iter().map(Mlp::num_params).sum()
    }

    fn check_samples(&self, mu0: &[f64], mu1: &[f64]) -> Result<()> {
        for s in [mu0, mu1] {
            if s.len() != self.arch.m() {
                return Err(Error::Dimension {
                    context: "branch input samples",
                    expected: self.arch.m(),
                    got: s.len(),
                });
            }
        }
        Ok(())
    }

    /// Branch products for one pair of sensor vectors.
    pub fn branch_coefficients(&self, mu0: &[f64], mu1: &[f64]) -> Result<BranchCoefficients> {
        self.check_samples(mu0, mu1)?;
        let prod = |a: usize, b: usize| -> Result<Vec<f64>> {
            let x = self.nets[a].forward(mu0)?;
            let y = self.nets[b].forward(mu1)?;
            Ok(x.iter().zip(&y).map(|(u, v)| u * v).collect())
        };
        Ok(BranchCoefficients {
            cty: prod(BRANCH0_CTY, BRANCH1_CTY)?,
            hj: prod(BRANCH0_HJ, BRANCH1_HJ)?,
        })
    }

    /// Jet of the density operator at `(x, t)`.
    pub fn eval_c(&self, mu0: &[f64], mu1: &[f64], x: [f64; 2], t: f64, order: usize) -> Result<Jet> {
        let coef = self.branch_coefficients(mu0, mu1)?;
        combine_jet(&self.nets[TRUNK_CTY], &self.arch.trunk_map(), &coef.cty, x, t, order)
    }

    /// Jet of the potential operator at `(x, t)`.
    pub fn eval_h(&self, mu0: &[f64], mu1: &[f64], x: [f64; 2], t: f64, order: usize) -> Result<Jet> {
        let coef = self.branch_coefficients(mu0, mu1)?;
        combine_jet(&self.nets[TRUNK_HJ], &self.arch.trunk_map(), &coef.hj, x, t, order)
    }

    /// The density operator at every node of `mesh` at time `t`.
    ///
    /// Returns the raw values (possibly negative) and a copy clamped at zero.
    pub fn eval_geodesic_grid(&self, mu0: &[f64], mu1: &[f64], mesh: MeshSpec, t: f64) -> Result<GeodesicFrame> {
        let coef = self.branch_coefficients(mu0, mu1)?;
        self.eval_grid_with(&coef, mesh, t)
    }

    /// Same as [`Self::eval_geodesic_grid`] with precomputed branch products.
    pub fn eval_grid_with(&self, coef: &BranchCoefficients, mesh: MeshSpec, t: f64) -> Result<GeodesicFrame> {
        const CHUNK: usize = 4096;
        let nodes = mesh.nodes();
        let trunk = &self.nets[TRUNK_CTY];
        let map = self.arch.trunk_map();
        let mut values = Vec::with_capacity(nodes.len());
        for chunk in nodes.chunks(CHUNK) {
            let mut input = Array2::zeros((chunk.len(), 3));
            for (r, p) in chunk.iter().enumerate() {
                let q = map.apply([p[0], p[1], t]);
                input[[r, 0]] = q[0];
                input[[r, 1]] = q[1];
                input[[r, 2]] = q[2];
            }
            let out = trunk.forward_batch(&input)?;
            for row in out.rows() {
                values.push(combine(&coef.cty, row.as_slice().expect("standard layout")));
            }
        }
        let raw = DensityGrid::new(mesh, values, MassConvention::Density)?;
        let clamped = raw.clamped();
        Ok(GeodesicFrame { raw, clamped })
    }

    /// Both operators as a [`FieldPair`] for one boundary pair.
    pub fn fields<'a>(&'a self, mu0: &[f64], mu1: &[f64]) -> Result<OperatorFields<'a>> {
        Ok(OperatorFields {
            params: self,
            coef: self.branch_coefficients(mu0, mu1)?,
        })
    }
}

/// `Σ_k coef_k · trunk_k`, summed in index order.
#[inline]
pub(crate) fn combine(coef: &[f64], trunk: &[f64]) -> f64 {
    let mut acc = 0.0;
    for k in 0..coef.len() {
        acc += coef[k] * trunk[k];
    }
    acc
}

fn combine_jet(trunk: &Mlp, map: &InputMap, coef: &[f64], x: [f64; 2], t: f64, order: usize) -> Result<Jet> {
    let plan = JetPlan::full(order)?;
    let tape = trunk.forward_jets(&plan, JetTape::seed_mapped(&plan, &[[x[0], x[1], t]], map), 1)?;
    let out = tape.output();
    let mut s = Slots::zero();
    for (c, &slot) in plan.slots().iter().enumerate() {
        s[slot] = combine(coef, out.row(c).as_slice().expect("standard layout"));
    }
    Ok(Jet::from_slots(&s, order))
}

/// A predicted geodesic frame.
#[derive(Clone, Debug, PartialEq)]
pub struct GeodesicFrame {
    pub raw: DensityGrid,
    pub clamped: DensityGrid,
}

/// The trained operators bound to one boundary pair.
pub struct OperatorFields<'a> {
    params: &'a OperatorParams,
    coef: BranchCoefficients,
}

impl OperatorFields<'_> {
    pub fn coefficients(&self) -> &BranchCoefficients {
        &self.coef
    }
}

impl FieldPair for OperatorFields<'_> {
    fn fields(&self, x: [f64; 2], t: f64, order: usize) -> Result<(Jet, Jet)> {
        let map = self.params.arch.trunk_map();
        Ok((
            combine_jet(&self.params.nets[TRUNK_CTY], &map, &self.coef.cty, x, t, order)?,
            combine_jet(&self.params.nets[TRUNK_HJ], &map, &self.coef.hj, x, t, order)?,
        ))
    }
}

/// Independent operators per image channel, sharing one architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct StackedOperator {
    pub channels: Vec<OperatorParams>,
}

impl StackedOperator {
    pub fn new(channels: Vec<OperatorParams>) -> Result<Self> {
        let first = channels.first().ok_or_else(|| Error::Invalid("no channels".into()))?;
        if channels.iter().any(|c| c.arch != first.arch) {
            return Err(Error::Invalid("channel operators disagree on architecture".into()));
        }
        Ok(StackedOperator { channels })
    }

    pub fn arch(&self) -> &Architecture {
        &self.channels[0].arch
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;
    use rand::SeedableRng;
    use rand_pcg::Pcg64;

    fn small_arch(p: usize) -> Architecture {
        Architecture {
            branch_width: 8,
            branch_depth: 2,
            trunk_width: 10,
            trunk_depth: 2,
            p,
            activation: Activation::Tanh,
            sensors: MeshSpec::new(3, 3, Domain::default()).unwrap(),
        }
    }

    fn samples(seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = Pcg64::seed_from_u64(seed);
        let a = (0..9).map(|_| rng.random_range(0.0..0.2)).collect();
        let b = (0..9).map(|_| rng.random_range(0.0..0.2)).collect();
        (a, b)
    }

    #[test]
    fn parameter_counts_match_reported_architectures() {
        let gauss = Architecture {
            branch_width: 180,
            branch_depth: 5,
            trunk_width: 120,
            trunk_depth: 7,
            p: 120,
            activation: Activation::Tanh,
            sensors: MeshSpec::new(30, 30, Domain::default()).unwrap(),
        };
        assert_eq!(gauss.num_params(), 1_461_120);
        let image = Architecture {
            branch_width: 300,
            branch_depth: 4,
            trunk_width: 120,
            trunk_depth: 6,
            p: 250,
            activation: Activation::Gelu,
            sensors: MeshSpec::new(32, 32, Domain::default()).unwrap(),
        };
        assert_eq!(image.num_params(), 2_821_260);
    }

    #[test]
    fn combination_equals_explicit_product_sum() {
        let params = OperatorParams::init(small_arch(6), &mut Pcg64::seed_from_u64(0)).unwrap();
        let (mu0, mu1) = samples(1);
        let x = [2.5, 2.5];
        let t = 0.5;
        let c = params.eval_c(&mu0, &mu1, x, t, 2).unwrap();
        let b0 = params.net(BRANCH0_CTY).forward(&mu0).unwrap();
        let b1 = params.net(BRANCH1_CTY).forward(&mu1).unwrap();
        let q = params.arch().trunk_map().apply([x[0], x[1], t]);
        assert_eq!(q, [0.0, 0.0, 0.0]);
        let tr = params.net(TRUNK_CTY).forward(&q).unwrap();
        let mut expect = 0.0;
        for k in 0..6 {
            expect += (b0[k] * b1[k]) * tr[k];
        }
        assert_eq!(c.value, expect);
        let grid = params
            .eval_geodesic_grid(&mu0, &mu1, MeshSpec::new(1, 1, Domain::new(2.0, 3.0, 2.0, 3.0).unwrap()).unwrap(), t)
            .unwrap();
        assert_eq!(grid.raw.values[0], expect);
    }

    #[test]
    fn constant_trunk_gives_constant_field() {
        let mut params = OperatorParams::init(small_arch(4), &mut Pcg64::seed_from_u64(2)).unwrap();
        let trunk = &mut params.networks_mut()[TRUNK_HJ];
        for w in trunk.weights_mut() {
            w.fill(0.0);
        }
        let last = trunk.layers() - 1;
        trunk.biases_mut()[last].assign(&Array1::from(vec![0.3, -0.2, 0.1, 0.5]));
        let (mu0, mu1) = samples(3);
        let h = params.eval_h(&mu0, &mu1, [1.0, 4.0], 0.2, 2).unwrap();
        let coef = params.branch_coefficients(&mu0, &mu1).unwrap();
        let expect = combine(&coef.hj, &[0.3, -0.2, 0.1, 0.5]);
        assert_eq!(h.value, expect);
        assert_eq!(h.d1, [0.0; 3]);
        assert_eq!(h.d2, [0.0; 6]);
    }

    #[test]
    fn single_term_with_unit_branches_is_the_trunk() {
        let mut params = OperatorParams::init(small_arch(1), &mut Pcg64::seed_from_u64(4)).unwrap();
        for k in [BRANCH0_CTY, BRANCH1_CTY] {
            let net = &mut params.networks_mut()[k];
            for w in net.weights_mut() {
                w.fill(0.0);
            }
            let last = net.layers() - 1;
            net.biases_mut()[last].fill(1.0);
        }
        let (mu0, mu1) = samples(5);
        let c = params.eval_c(&mu0, &mu1, [0.7, 1.9], 0.8, 3).unwrap();
        // Same trunk at the mapped point; partials pick up the map's scales.
        let map = params.arch().trunk_map();
        let q = map.apply([0.7, 1.9, 0.8]);
        let tj = &params.net(TRUNK_CTY).jet([q[0], q[1]], q[2], 3).unwrap()[0];
        let s = map.scale;
        let close = |a: f64, b: f64| assert!((a - b).abs() <= 1e-13 * (1.0 + b.abs()), "{a} vs {b}");
        close(c.value, tj.value);
        for k in 0..3 {
            close(c.d1[k], s[k] * tj.d1[k]);
        }
        let d2_scale = [s[0] * s[0], s[1] * s[1], s[2] * s[2], s[0] * s[2], s[1] * s[2], s[0] * s[1]];
        for k in 0..6 {
            close(c.d2[k], d2_scale[k] * tj.d2[k]);
        }
    }

    #[test]
    fn wrong_sample_length_is_rejected() {
        let params = OperatorParams::init(small_arch(2), &mut Pcg64::seed_from_u64(6)).unwrap();
        assert!(matches!(
            params.eval_c(&[0.0; 8], &[0.0; 9], [1.0, 1.0], 0.5, 1),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn grid_is_independent_of_sensor_resolution_and_nests() {
        let params = OperatorParams::init(small_arch(5), &mut Pcg64::seed_from_u64(7)).unwrap();
        let (mu0, mu1) = samples(8);
        let coarse = MeshSpec::new(5, 4, Domain::default()).unwrap();
        let fine = MeshSpec::new(15, 12, Domain::default()).unwrap();
        let gc = params.eval_geodesic_grid(&mu0, &mu1, coarse, 0.3).unwrap();
        let gf = params.eval_geodesic_grid(&mu0, &mu1, fine, 0.3).unwrap();
        assert_eq!(gf.raw.values.len(), 180);
        for j in 0..4 {
            for i in 0..5 {
                assert_eq!(gc.raw.get(i, j), gf.raw.get(3 * i + 1, 3 * j + 1));
            }
        }
        assert!(gf.clamped.values.iter().all(|v| *v >= 0.0));
    }
}
