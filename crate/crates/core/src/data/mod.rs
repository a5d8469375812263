//! Training and test densities: analytic mixtures, discretization and image
//! ingestion.

pub mod dataset;
pub mod image;
pub mod mixture;

pub use image::{load_image_density, parse_pnm, pixmap_density, Pixmap};
pub use mixture::{discretize, GaussianMixture2D, MixtureRanges, SpatialDerivatives, WeightScheme};

use crate::error::Result;
use crate::grid::{DensityGrid, MeshSpec};

/// A boundary density that can be evaluated anywhere in the domain.
#[derive(Clone, Debug, PartialEq)]
pub enum BoundaryField {
    /// Exact mixture pdf.
    Mixture(GaussianMixture2D),
    /// Gridded density, bilinearly interpolated between nodes.
    Grid(DensityGrid),
}

impl BoundaryField {
    pub fn value(&self, x: [f64; 2]) -> f64 {
        match self {
            BoundaryField::Mixture(m) => m.density(x),
            BoundaryField::Grid(g) => g.sample(x),
        }
    }

    /// Unit-mass density values at the sensor nodes.
    pub fn sensor_values(&self, sensors: MeshSpec) -> Result<Vec<f64>> {
        Ok(discretize(|x| self.value(x), sensors)?.values)
    }
}

/// One `(μ₀, μ₁)` training or test pair.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityPair {
    pub mu0: BoundaryField,
    pub mu1: BoundaryField,
}
