//! Reference optimal-transport solvers: entropic Sinkhorn (dense and
//! separable-grid), exact LP on small supports, displacement interpolation and
//! closed-form Gaussian geodesics.
//!
//! Ground cost is always the squared Euclidean distance.

mod gaussian;
mod grid;
mod lp;
mod sinkhorn;

pub use gaussian::{bures_geodesic, sqrtm_spd, w2_gaussian, Gaussian2D};
pub use grid::{displacement_interpolate, sinkhorn_grid, w2_grid_estimate, GridTransport};
pub use lp::{lp_transport, LP_MAX_SUPPORT};
pub use sinkhorn::{sinkhorn, SinkhornOptions, SinkhornResult};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::{DensityGrid, MassConvention};

/// Mass tolerance for [`DiscreteMeasure`].
pub const MASS_TOLERANCE: f64 = 1e-12;

/// Finitely supported probability measure on the plane.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMeasure {
    points: Vec<[f64; 2]>,
    masses: Vec<f64>,
}

impl DiscreteMeasure {
    /// Masses must be positive and sum to one within [`MASS_TOLERANCE`].
    pub fn new(points: Vec<[f64; 2]>, masses: Vec<f64>) -> Result<Self> {
        if points.len() != masses.len() {
            return Err(Error::Dimension {
                context: "measure masses",
                expected: points.len(),
                got: masses.len(),
            });
        }
        if points.is_empty() {
            return Err(Error::Invalid("measure has empty support".into()));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("support point".into()));
        }
        if let Some(m) = masses.iter().find(|&&m| !(m > 0.0 && m.is_finite())) {
            return Err(Error::Invalid(format!("measure mass {m} is not positive")));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::Invalid(format!("measure masses sum to {total}, not 1")));
        }
        Ok(DiscreteMeasure { points, masses })
    }

    /// Rescales nonnegative `weights` to unit mass first.
    pub fn normalized(points: Vec<[f64; 2]>, weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Invalid(format!("weights sum to {total}")));
        }
        Self::new(points, weights.iter().map(|w| w / total).collect())
    }

    /// Cells with positive mass, located at their nodes.
    pub fn from_grid(grid: &DensityGrid) -> Result<Self> {
        let h = grid.to_convention(MassConvention::Histogram);
        let nodes = grid.mesh.nodes();
        let (points, weights): (Vec<_>, Vec<_>) =
            nodes.into_iter().zip(h.values).filter(|(_, w)| *w > 0.0).unzip();
        Self::normalized(points, &weights)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }
}

/// Transport plan between two measures.
#[derive(Clone, Debug)]
pub struct Coupling {
    pub source: DiscreteMeasure,
    pub target: DiscreteMeasure,
    /// `source.len() × target.len()`.
    pub plan: Array2<f64>,
    /// Largest deviation of a plan row sum from its source mass.
    pub row_error: f64,
    /// Largest deviation of a plan column sum from its target mass.
    pub col_error: f64,
}

impl Coupling {
    pub(crate) fn new(source: DiscreteMeasure, target: DiscreteMeasure, plan: Array2<f64>) -> Self {
        let row_error = plan.rows().into_iter().zip(source.masses()).map(|(r, m)| (r.sum() - m).abs()).fold(0.0, f64::max);
        let col_error = plan.columns().into_iter().zip(target.masses()).map(|(c, m)| (c.sum() - m).abs()).fold(0.0, f64::max);
        Coupling {
            source,
            target,
            plan,
            row_error,
            col_error,
        }
    }

    /// `Σ π_ij |x_i − y_j|²`.
    pub fn cost(&self) -> f64 {
        let mut total = 0.0;
        for (i, x) in self.source.points().iter().enumerate() {
            for (j, y) in self.target.points().iter().enumerate() {
                total += self.plan[[i, j]] * sq_dist(*x, *y);
            }
        }
        total
    }
}

pub(crate) fn sq_dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

pub(crate) fn cost_matrix(source: &DiscreteMeasure, target: &DiscreteMeasure) -> Array2<f64> {
    Array2::from_shape_fn((source.len(), target.len()), |(i, j)| {
        sq_dist(source.points()[i], target.points()[j])
    })
}
