//! Bivariate Gaussian mixtures and their random generation.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::{DensityGrid, MassConvention, MeshSpec};

/// One weighted Gaussian component with cached inverse and normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
    inv: [[f64; 2]; 2],
    norm: f64,
}

impl Component {
    fn new(weight: f64, mean: [f64; 2], cov: [[f64; 2]; 2]) -> Result<Self> {
        let [[a, b], [b2, d]] = cov;
        if (b - b2).abs() > 1e-12 * (1.0 + b.abs()) {
            return Err(Error::Invalid(format!("covariance is not symmetric: {cov:?}")));
        }
        let det = a * d - b * b;
        if !(a > 0.0 && det > 0.0 && det.is_finite()) {
            return Err(Error::Invalid(format!("covariance is not positive definite: {cov:?}")));
        }
        if !(weight > 0.0 && weight.is_finite()) || !mean.iter().all(|v| v.is_finite()) {
            return Err(Error::Invalid(format!("bad component weight {weight} or mean {mean:?}")));
        }
        Ok(Component {
            weight,
            mean,
            cov: [[a, b], [b, d]],
            inv: [[d / det, -b / det], [-b / det, a / det]],
            norm: 1.0 / (2.0 * PI * det.sqrt()),
        })
    }
}

/// Spatial partials of a scalar field at one point, up to third order.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SpatialDerivatives {
    pub value: f64,
    pub d1: [f64; 2],
    pub d2: [[f64; 2]; 2],
    pub d3: [[[f64; 2]; 2]; 2],
}

impl SpatialDerivatives {
    /// Partial for a list of axes (0 = x1, 1 = x2), at most three long.
    pub fn get(&self, axes: &[usize]) -> f64 {
        match *axes {
            [] => self.value,
            [i] => self.d1[i],
            [i, j] => self.d2[i][j],
            [i, j, k] => self.d3[i][j][k],
            _ => panic!("at most third-order partials are stored"),
        }
    }
}

/// `Σ_i π_i N(x | u_i, Σ_i)` on the plane.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMixture2D {
    components: Vec<Component>,
}

impl GaussianMixture2D {
    pub fn new(weights: &[f64], means: &[[f64; 2]], covs: &[[[f64; 2]; 2]]) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != covs.len() {
            return Err(Error::Invalid(format!(
                "mixture needs matching non-empty parameter lists, got {} weights, {} means, {} covariances",
                weights.len(),
                means.len(),
                covs.len()
            )));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Invalid(format!("mixture weights sum to {total}, not 1")));
        }
        let components = weights
            .iter()
            .zip(means.iter().zip(covs))
            .map(|(&w, (&m, &c))| Component::new(w, m, c))
            .collect::<Result<_>>()?;
        Ok(GaussianMixture2D { components })
    }

    pub fn single(mean: [f64; 2], cov: [[f64; 2]; 2]) -> Result<Self> {
        Self::new(&[1.0], &[mean], &[cov])
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn density(&self, x: [f64; 2]) -> f64 {
        self.components
            .iter()
            .map(|c| {
                let d = [x[0] - c.mean[0], x[1] - c.mean[1]];
                let q = c.inv[0][0] * d[0] * d[0] + 2.0 * c.inv[0][1] * d[0] * d[1] + c.inv[1][1] * d[1] * d[1];
                c.weight * c.norm * (-0.5 * q).exp()
            })
            .sum()
    }

    /// Value and spatial partials up to third order.
    pub fn spatial_derivatives(&self, x: [f64; 2]) -> SpatialDerivatives {
        let mut out = SpatialDerivatives::default();
        for c in &self.components {
            let d = [x[0] - c.mean[0], x[1] - c.mean[1]];
            let p = c.inv;
            let r = [p[0][0] * d[0] + p[0][1] * d[1], p[1][0] * d[0] + p[1][1] * d[1]];
            let g = c.weight * c.norm * (-0.5 * (r[0] * d[0] + r[1] * d[1])).exp();
            out.value += g;
            for i in 0..2 {
                out.d1[i] -= r[i] * g;
                for j in 0..2 {
                    out.d2[i][j] += (r[i] * r[j] - p[i][j]) * g;
                    for k in 0..2 {
                        out.d3[i][j][k] += (-r[i] * r[j] * r[k] + p[i][j] * r[k] + p[i][k] * r[j] + p[j][k] * r[i]) * g;
                    }
                }
            }
        }
        out
    }
}

/// How mixture weights are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightScheme {
    /// All weights `1/k`.
    Uniform,
    /// Uniform on the simplex, via normalized exponential draws.
    RandomSimplex,
}

/// Parameter box from which random mixtures are drawn.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixtureRanges {
    pub k0: usize,
    pub k1: usize,
    /// Both mean coordinates are drawn from this interval.
    pub mean: (f64, f64),
    /// Per-axis variance interval.
    pub variance: (f64, f64),
    /// Off-diagonal covariance interval.
    pub covariance: (f64, f64),
    pub weights: WeightScheme,
}

impl Default for MixtureRanges {
    /// The training family: five components at `t = 0`, two at `t = 1`.
    fn default() -> Self {
        MixtureRanges {
            k0: 5,
            k1: 2,
            mean: (1.3, 3.7),
            variance: (0.4, 1.0),
            covariance: (-0.4, 0.4),
            weights: WeightScheme::RandomSimplex,
        }
    }
}

impl MixtureRanges {
    /// Five equally weighted components at both ends with a wider mean box
    /// and narrower variances.
    pub fn equal_weight_family() -> Self {
        MixtureRanges {
            k0: 5,
            k1: 5,
            mean: (1.1, 3.9),
            variance: (0.4, 0.8),
            covariance: (-0.4, 0.4),
            weights: WeightScheme::Uniform,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok_interval = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if self.k0 == 0 || self.k1 == 0 {
            return Err(Error::Invalid("mixtures need at least one component".into()));
        }
        if !ok_interval(self.mean) || !ok_interval(self.variance) || !ok_interval(self.covariance) {
            return Err(Error::Invalid(format!("invalid mixture ranges {self:?}")));
        }
        if self.variance.0 <= 0.0 {
            return Err(Error::Invalid("variances must be positive".into()));
        }
        // Rejection sampling terminates only if some |σ01| in range is below
        // the largest attainable σ0·σ1.
        let (lo, hi) = self.covariance;
        let smallest_abs = if lo <= 0.0 && hi >= 0.0 { 0.0 } else { lo.abs().min(hi.abs()) };
        if smallest_abs >= self.variance.1 {
            return Err(Error::Invalid("covariance range admits no positive-definite matrix".into()));
        }
        Ok(())
    }

    fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
        if lo == hi {
            lo
        } else {
            rng.random_range(lo..hi)
        }
    }

    pub fn sample_mixture<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<GaussianMixture2D> {
        let mut means = Vec::with_capacity(k);
        let mut covs = Vec::with_capacity(k);
        for _ in 0..k {
            means.push([Self::uniform(rng, self.mean), Self::uniform(rng, self.mean)]);
            loop {
                let s0 = Self::uniform(rng, self.variance);
                let s1 = Self::uniform(rng, self.variance);
                let c = Self::uniform(rng, self.covariance);
                if c * c < s0 * s1 {
                    covs.push([[s0, c], [c, s1]]);
                    break;
                }
            }
        }
        let weights = match self.weights {
            WeightScheme::Uniform => vec![1.0 / k as f64; k],
            WeightScheme::RandomSimplex => {
                let e: Vec<f64> = (0..k).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
                let s: f64 = e.iter().sum();
                let mut w: Vec<f64> = e.iter().map(|v| v / s).collect();
                // Absorb rounding so the weights sum to one exactly enough.
                let rest: f64 = w[1..].iter().sum();
                w[0] = 1.0 - rest;
                w
            }
        };
        GaussianMixture2D::new(&weights, &means, &covs)
    }

    /// A random `(μ₀, μ₁)` pair with `k0` and `k1` components.
    pub fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(GaussianMixture2D, GaussianMixture2D)> {
        self.validate()?;
        let a = self.sample_mixture(self.k0, rng)?;
        let b = self.sample_mixture(self.k1, rng)?;
        Ok((a, b))
    }
}

/// Density values at the mesh nodes, renormalized to unit mass.
pub fn discretize(density: impl Fn([f64; 2]) -> f64, mesh: MeshSpec) -> Result<DensityGrid> {
    let mut g = DensityGrid::from_fn(mesh, MassConvention::Density, density);
    if g.values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Invalid("density must be finite and nonnegative".into()));
    }
    g.normalize()?;
    Ok(g)
}
