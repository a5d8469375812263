//! Rectangular domains, regular meshes and gridded densities.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Axis-aligned rectangle `[x_min, x_max] × [y_min, y_max]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Domain {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Domain {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        let d = Domain {
            x_min,
            x_max,
            y_min,
            y_max,
        };
        if [x_min, x_max, y_min, y_max].iter().all(|v| v.is_finite()) && x_max > x_min && y_max > y_min {
            Ok(d)
        } else {
            Err(Error::Invalid(format!("degenerate domain {d}")))
        }
    }

    /// The square `[0, side]²`.
    pub fn square(side: f64) -> Self {
        Domain::new(0.0, side, 0.0, side).expect("positive side")
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x_min && p[0] <= self.x_max && p[1] >= self.y_min && p[1] <= self.y_max
    }
}

impl Default for Domain {
    fn default() -> Self {
        Domain::square(5.0)
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}] x [{}, {}]", self.x_min, self.x_max, self.y_min, self.y_max)
    }
}

/// A regular `nx × ny` mesh whose nodes are the cell centers of a uniform
/// subdivision of the domain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeshSpec {
    pub nx: usize,
    pub ny: usize,
    pub domain: Domain,
}

impl MeshSpec {
    pub fn new(nx: usize, ny: usize, domain: Domain) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::Invalid(format!("mesh must be non-empty, got {nx}x{ny}")));
        }
        Ok(MeshSpec { nx, ny, domain })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dx(&self) -> f64 {
        self.domain.width() / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        self.domain.height() / self.ny as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.dx() * self.dy()
    }

    pub fn node(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.domain.x_min + (i as f64 + 0.5) * self.dx(),
            self.domain.y_min + (j as f64 + 0.5) * self.dy(),
        ]
    }

    /// All nodes, row-major with x fastest.
    pub fn nodes(&self) -> Vec<[f64; 2]> {
        let mut out = Vec::with_capacity(self.len());
        for j in 0..self.ny {
            for i in 0..self.nx {
                out.push(self.node(i, j));
            }
        }
        out
    }
}

/// How grid values relate to total mass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MassConvention {
    /// Values approximate a pdf: `Σ values · Δx · Δy = 1`.
    Density,
    /// Values are cell masses: `Σ values = 1`.
    Histogram,
}

impl fmt::Display for MassConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MassConvention::Density => "density",
            MassConvention::Histogram => "histogram",
        })
    }
}

impl FromStr for MassConvention {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "density" => Ok(MassConvention::Density),
            "histogram" => Ok(MassConvention::Histogram),
            _ => Err(Error::Invalid(format!("unknown mass convention {s:?}"))),
        }
    }
}

/// Values on a mesh, row-major with x fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityGrid {
    pub mesh: MeshSpec,
    pub values: Vec<f64>,
    pub convention: MassConvention,
}

impl DensityGrid {
    pub fn new(mesh: MeshSpec, values: Vec<f64>, convention: MassConvention) -> Result<Self> {
        if values.len() != mesh.len() {
            return Err(Error::Dimension {
                context: "grid values",
                expected: mesh.len(),
                got: values.len(),
            });
        }
        Ok(DensityGrid {
            mesh,
            values,
            convention,
        })
    }

    pub fn from_fn(mesh: MeshSpec, convention: MassConvention, f: impl Fn([f64; 2]) -> f64) -> Self {
        let values = mesh.nodes().into_iter().map(f).collect();
        DensityGrid {
            mesh,
            values,
            convention,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.mesh.nx + i]
    }

    /// Total mass under the grid's convention.
    pub fn mass(&self) -> f64 {
        let s: f64 = self.values.iter().sum();
        match self.convention {
            MassConvention::Density => s * self.mesh.cell_area(),
            MassConvention::Histogram => s,
        }
    }

    /// Rescales to unit mass.
    pub fn normalize(&mut self) -> Result<()> {
        let m = self.mass();
        if !(m.is_finite() && m > 0.0) {
            return Err(Error::Invalid(format!("cannot normalize grid with mass {m}")));
        }
        for v in &mut self.values {
            *v /= m;
        }
        Ok(())
    }

    /// The same measure under the other convention.
    pub fn to_convention(&self, convention: MassConvention) -> DensityGrid {
        let area = self.mesh.cell_area();
        let factor = match (self.convention, convention) {
            (a, b) if a == b => 1.0,
            (MassConvention::Density, MassConvention::Histogram) => area,
            _ => 1.0 / area,
        };
        DensityGrid {
            mesh: self.mesh,
            values: self.values.iter().map(|v| v * factor).collect(),
            convention,
        }
    }

    pub fn clamped(&self) -> DensityGrid {
        DensityGrid {
            mesh: self.mesh,
            values: self.values.iter().map(|v| v.max(0.0)).collect(),
            convention: self.convention,
        }
    }

    /// Bilinear interpolation between nodes, constant extrapolation beyond
    /// the outermost nodes.
    pub fn sample(&self, p: [f64; 2]) -> f64 {
        let m = &self.mesh;
        let fx = ((p[0] - m.domain.x_min) / m.dx() - 0.5).clamp(0.0, (m.nx - 1) as f64);
        let fy = ((p[1] - m.domain.y_min) / m.dy() - 0.5).clamp(0.0, (m.ny - 1) as f64);
        let i0 = (fx.floor() as usize).min(m.nx.saturating_sub(2));
        let j0 = (fy.floor() as usize).min(m.ny.saturating_sub(2));
        let i1 = (i0 + 1).min(m.nx - 1);
        let j1 = (j0 + 1).min(m.ny - 1);
        let (wx, wy) = (fx - i0 as f64, fy - j0 as f64);
        let lo = (1.0 - wx) * self.get(i0, j0) + wx * self.get(i1, j0);
        let hi = (1.0 - wx) * self.get(i0, j1) + wx * self.get(i1, j1);
        (1.0 - wy) * lo + wy * hi
    }
}
