//! Transport between grid measures and displacement interpolation.
//!
//! On a tensor mesh the squared distance splits as `Cx(a, c) + Cy(b, d)`, so
//! one log-sum-exp over all `nx·ny` target cells factors into two passes of
//! one-dimensional sums. A half sweep then costs `O(n³)` for an `n×n` mesh
//! instead of `O(n⁴)`, and the `n²×n²` cost matrix is never stored. The plan
//! is regenerated from the potentials whenever atoms are needed.

use super::sinkhorn::{lse, solve, LogKernel, SinkhornOptions};
use super::Coupling;
use crate::error::{Error, Result};
use crate::grid::{DensityGrid, MassConvention, MeshSpec};

/// Plan entries below `exp(-PRUNE)` times their row maximum are skipped when
/// atoms are enumerated.
const PRUNE: f64 = 36.0;

/// Splat stencil half-width in kernel widths.
const SPLAT_RADIUS: f64 = 4.0;

struct GridKernel {
    rows: MeshSpec,
    cols: MeshSpec,
    /// `cx[a·cols.nx + c] = (x_a − x_c)²`.
    cx: Vec<f64>,
    /// `cy[b·cols.ny + d] = (y_b − y_d)²`.
    cy: Vec<f64>,
    cx_t: Vec<f64>,
    cy_t: Vec<f64>,
}

fn axis(m: &MeshSpec, x: bool) -> Vec<f64> {
    if x {
        (0..m.nx).map(|i| m.node(i, 0)[0]).collect()
    } else {
        (0..m.ny).map(|j| m.node(0, j)[1]).collect()
    }
}

fn sq_table(p: &[f64], q: &[f64]) -> Vec<f64> {
    p.iter().flat_map(|a| q.iter().map(move |b| (a - b) * (a - b))).collect()
}

impl GridKernel {
    fn new(rows: MeshSpec, cols: MeshSpec) -> Self {
        let (rx, ry, cxs, cys) = (axis(&rows, true), axis(&rows, false), axis(&cols, true), axis(&cols, false));
        GridKernel {
            rows,
            cols,
            cx: sq_table(&rx, &cxs),
            cy: sq_table(&ry, &cys),
            cx_t: sq_table(&cxs, &rx),
            cy_t: sq_table(&cys, &ry),
        }
    }
}

/// `out[ty·tnx + tx] = LSE_{sx,sy} (v[sy·snx + sx] − (kx[tx·snx + sx] + ky[ty·sny + sy])·inv)`.
fn separable_lse(v: &[f64], src: (usize, usize), dst: (usize, usize), kx: &[f64], ky: &[f64], inv: f64, out: &mut [f64]) {
    let (snx, sny) = src;
    let (tnx, tny) = dst;
    let mut vt = vec![0.0; snx * sny];
    for sy in 0..sny {
        for sx in 0..snx {
            vt[sx * sny + sy] = v[sy * snx + sx];
        }
    }
    // h[ty·snx + sx] = LSE_sy (v[sy, sx] − ky[ty, sy]·inv)
    let mut h = vec![0.0; tny * snx];
    for ty in 0..tny {
        let krow = &ky[ty * sny..(ty + 1) * sny];
        for sx in 0..snx {
            let col = &vt[sx * sny..(sx + 1) * sny];
            h[ty * snx + sx] = lse(col.iter().zip(krow).map(|(v, k)| v - k * inv));
        }
    }
    for ty in 0..tny {
        let hrow = &h[ty * snx..(ty + 1) * snx];
        for tx in 0..tnx {
            let krow = &kx[tx * snx..(tx + 1) * snx];
            out[ty * tnx + tx] = lse(hrow.iter().zip(krow).map(|(h, k)| h - k * inv));
        }
    }
}

impl LogKernel for GridKernel {
    fn rows(&self) -> usize {
        self.rows.len()
    }

    fn cols(&self) -> usize {
        self.cols.len()
    }

    fn max_cost(&self) -> f64 {
        let mx = self.cx.iter().copied().fold(0.0, f64::max);
        let my = self.cy.iter().copied().fold(0.0, f64::max);
        mx + my
    }

    fn lse_rows(&self, v: &[f64], inv: f64, out: &mut [f64]) {
        let (r, c) = (&self.rows, &self.cols);
        separable_lse(v, (c.nx, c.ny), (r.nx, r.ny), &self.cx, &self.cy, inv, out);
    }

    fn lse_cols(&self, v: &[f64], inv: f64, out: &mut [f64]) {
        let (r, c) = (&self.rows, &self.cols);
        separable_lse(v, (r.nx, r.ny), (c.nx, c.ny), &self.cx_t, &self.cy_t, inv, out);
    }
}

/// Entropic plan between two grid measures, kept as dual potentials.
#[derive(Clone, Debug)]
pub struct GridTransport {
    pub source: MeshSpec,
    pub target: MeshSpec,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub epsilon: f64,
    pub iterations: usize,
    pub violation: f64,
    pub converged: bool,
}

/// Histogram masses of a grid, normalized to one.
fn cell_masses(grid: &DensityGrid) -> Result<Vec<f64>> {
    if grid.values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Invalid("grid measure needs finite nonnegative values".into()));
    }
    let mut h = grid.to_convention(MassConvention::Histogram);
    h.normalize()?;
    Ok(h.values)
}

/// Sinkhorn between the cell measures of two grids (cells at their nodes).
pub fn sinkhorn_grid(mu: &DensityGrid, nu: &DensityGrid, epsilon: f64, opts: &SinkhornOptions) -> Result<GridTransport> {
    let (a, b) = (cell_masses(mu)?, cell_masses(nu)?);
    let kernel = GridKernel::new(mu.mesh, nu.mesh);
    let p = solve(&kernel, &a, &b, epsilon, opts)?;
    Ok(GridTransport {
        source: mu.mesh,
        target: nu.mesh,
        f: p.f,
        g: p.g,
        epsilon,
        iterations: p.iterations,
        violation: p.violation,
        converged: p.converged,
    })
}

impl GridTransport {
    /// Calls `visit(source_node, target_node, mass)` for every plan entry
    /// that survives pruning.
    pub fn for_each_atom(&self, mut visit: impl FnMut([f64; 2], [f64; 2], f64)) {
        let (s, t) = (&self.source, &self.target);
        let inv = 1.0 / self.epsilon;
        let tx = axis(t, true);
        let ty = axis(t, false);
        let gs: Vec<f64> = self.g.iter().map(|g| g * inv).collect();
        let mut e = vec![0.0; t.len()];
        for sj in 0..s.ny {
            for si in 0..s.nx {
                let fi = self.f[sj * s.nx + si];
                if fi == f64::NEG_INFINITY {
                    continue;
                }
                let p = s.node(si, sj);
                let base = fi * inv;
                let mut max = f64::NEG_INFINITY;
                for (dj, y) in ty.iter().enumerate() {
                    let cy = (p[1] - y) * (p[1] - y);
                    let row = &mut e[dj * t.nx..(dj + 1) * t.nx];
                    let grow = &gs[dj * t.nx..(dj + 1) * t.nx];
                    for ((ei, x), g) in row.iter_mut().zip(&tx).zip(grow) {
                        *ei = base + g - ((p[0] - x) * (p[0] - x) + cy) * inv;
                        max = max.max(*ei);
                    }
                }
                let cut = max - PRUNE;
                for (k, &ek) in e.iter().enumerate() {
                    if ek > cut {
                        visit(p, t.node(k % t.nx, k / t.nx), ek.exp());
                    }
                }
            }
        }
    }

    /// `⟨C, π⟩` over the pruned plan.
    pub fn transport_cost(&self) -> f64 {
        let mut total = 0.0;
        self.for_each_atom(|x, y, m| total += m * super::sq_dist(x, y));
        total
    }

    /// Displacement interpolation of the plan at time `t`, splatted on `mesh`
    /// with an isotropic Gaussian of width `splat_sigma`, as a unit-mass
    /// density.
    pub fn interpolate(&self, t: f64, mesh: MeshSpec, splat_sigma: f64) -> Result<DensityGrid> {
        check_time(t)?;
        let mut splat = Splatter::new(mesh, splat_sigma)?;
        self.for_each_atom(|x, y, m| splat.add(lerp(x, y, t), m));
        splat.finish()
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Invalid(format!("interpolation time {t} outside [0, 1]")));
    }
    Ok(())
}

fn lerp(x: [f64; 2], y: [f64; 2], t: f64) -> [f64; 2] {
    [(1.0 - t) * x[0] + t * y[0], (1.0 - t) * x[1] + t * y[1]]
}

/// Accumulates point masses through a truncated Gaussian kernel, normalized
/// per atom over the nodes it reaches so that mass is conserved.
struct Splatter {
    mesh: MeshSpec,
    sigma: f64,
    values: Vec<f64>,
    wx: Vec<f64>,
    wy: Vec<f64>,
}

impl Splatter {
    fn new(mesh: MeshSpec, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Invalid(format!("splat width must be positive, got {sigma}")));
        }
        Ok(Splatter {
            mesh,
            sigma,
            values: vec![0.0; mesh.len()],
            wx: Vec::new(),
            wy: Vec::new(),
        })
    }

    fn range(&self, c: f64, lo: f64, h: f64, n: usize) -> (usize, usize) {
        let r = SPLAT_RADIUS * self.sigma;
        let first = (((c - r - lo) / h - 0.5).ceil().max(0.0) as usize).min(n - 1);
        let last = (((c + r - lo) / h - 0.5).floor().max(0.0) as usize).min(n - 1);
        (first, last.max(first))
    }

    fn add(&mut self, p: [f64; 2], mass: f64) {
        let m = self.mesh;
        let (dx, dy) = (m.dx(), m.dy());
        let (i0, i1) = self.range(p[0], m.domain.x_min, dx, m.nx);
        let (j0, j1) = self.range(p[1], m.domain.y_min, dy, m.ny);
        let k = -0.5 / (self.sigma * self.sigma);
        self.wx.clear();
        self.wx.extend((i0..=i1).map(|i| {
            let d = m.domain.x_min + (i as f64 + 0.5) * dx - p[0];
            (k * d * d).exp()
        }));
        self.wy.clear();
        self.wy.extend((j0..=j1).map(|j| {
            let d = m.domain.y_min + (j as f64 + 0.5) * dy - p[1];
            (k * d * d).exp()
        }));
        let total = self.wx.iter().sum::<f64>() * self.wy.iter().sum::<f64>();
        if !(total > 0.0) {
            // Atom far outside the mesh: give it to the nearest node.
            let i = ((p[0] - m.domain.x_min) / dx).floor().clamp(0.0, (m.nx - 1) as f64) as usize;
            let j = ((p[1] - m.domain.y_min) / dy).floor().clamp(0.0, (m.ny - 1) as f64) as usize;
            self.values[j * m.nx + i] += mass;
            return;
        }
        let scale = mass / total;
        for (jj, wy) in self.wy.iter().enumerate() {
            let row = &mut self.values[(j0 + jj) * m.nx + i0..(j0 + jj) * m.nx + i0 + self.wx.len()];
            for (v, wx) in row.iter_mut().zip(&self.wx) {
                *v += scale * wy * wx;
            }
        }
    }

    fn finish(self) -> Result<DensityGrid> {
        let mut g = DensityGrid::new(self.mesh, self.values, MassConvention::Density)?;
        g.normalize()?;
        Ok(g)
    }
}

/// Displacement interpolation of a dense coupling: each atom `(x_i, y_j, π_ij)`
/// is moved to `(1−t)x_i + t·y_j` and splatted on `mesh`.
pub fn displacement_interpolate(coupling: &Coupling, t: f64, mesh: MeshSpec, splat_sigma: f64) -> Result<DensityGrid> {
    check_time(t)?;
    let mut splat = Splatter::new(mesh, splat_sigma)?;
    let (xs, ys) = (coupling.source.points(), coupling.target.points());
    for ((i, j), &m) in coupling.plan.indexed_iter() {
        if m > 0.0 {
            splat.add(lerp(xs[i], ys[j], t), m);
        }
    }
    splat.finish()
}

/// Entropic estimate of `W₂²` between two grid measures: the linear cost of
/// the Sinkhorn plan. Biased upward by the regularization.
pub fn w2_grid_estimate(mu: &DensityGrid, nu: &DensityGrid, epsilon: f64) -> Result<f64> {
    let plan = sinkhorn_grid(mu, nu, epsilon, &SinkhornOptions::default())?;
    if !plan.converged {
        return Err(Error::Invalid(format!(
            "sinkhorn stopped after {} iterations with marginal violation {:e}",
            plan.iterations, plan.violation
        )));
    }
    Ok(plan.transport_cost())
}
