//! Log-domain Sinkhorn iterations.
//!
//! The plan is `π_ij = exp((f_i + g_j − C_ij)/ε)`. Each sweep sets `f` from
//! `g` and then `g` from `f`, so column marginals are exact after every sweep
//! and the stopping rule only has to watch the rows.

use ndarray::Array2;

use super::{cost_matrix, Coupling, DiscreteMeasure};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SinkhornOptions {
    pub max_iters: usize,
    /// Largest allowed `|row sum − source mass|`.
    pub tol: f64,
    /// Anneal ε geometrically from the largest cost down to the target,
    /// warm-starting each stage from the previous potentials.
    pub scaling: bool,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        SinkhornOptions {
            max_iters: 100_000,
            tol: 1e-9,
            scaling: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SinkhornResult {
    pub coupling: Coupling,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub epsilon: f64,
    /// Linear part `⟨C, π⟩`.
    pub cost: f64,
    /// `⟨C, π⟩ + ε·KL(π ‖ μ⊗ν)`.
    pub entropic_objective: f64,
    pub iterations: usize,
    /// Achieved max row violation.
    pub violation: f64,
    pub converged: bool,
}

/// Row/column log-sum-exp against a cost that never has to be stored in full.
pub(crate) trait LogKernel {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn max_cost(&self) -> f64;
    /// `out_i = LSE_j (v_j − C_ij·inv_eps)`.
    fn lse_rows(&self, v: &[f64], inv_eps: f64, out: &mut [f64]);
    /// `out_j = LSE_i (v_i − C_ij·inv_eps)`.
    fn lse_cols(&self, v: &[f64], inv_eps: f64, out: &mut [f64]);
}

pub(crate) struct Potentials {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub iterations: usize,
    pub violation: f64,
    pub converged: bool,
}

/// Terms more than this far below the maximum are dropped from log-sum-exps.
/// `exp(-50)` times any realistic term count is far below one ulp of the sum.
const LSE_CUTOFF: f64 = 50.0;

/// Log-sum-exp of `xs`; `-inf` when every entry is `-inf`.
#[inline]
pub(crate) fn lse(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    let floor = m - LSE_CUTOFF;
    m + xs.filter(|&x| x > floor).map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub(crate) fn solve<K: LogKernel>(kernel: &K, a: &[f64], b: &[f64], epsilon: f64, opts: &SinkhornOptions) -> Result<Potentials> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Invalid(format!("regularization must be positive, got {epsilon}")));
    }
    if !(opts.tol > 0.0) || opts.max_iters == 0 {
        return Err(Error::Invalid("sinkhorn needs a positive tolerance and iteration budget".into()));
    }
    let (n, m) = (kernel.rows(), kernel.cols());
    let log_a: Vec<f64> = a.iter().map(|v| v.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|v| v.ln()).collect();
    let mut stages = Vec::new();
    if opts.scaling {
        let mut e = kernel.max_cost();
        while e > 2.0 * epsilon {
            stages.push(e);
            e *= 0.5;
        }
    }
    stages.push(epsilon);
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let (mut lr, mut lc) = (vec![0.0; n], vec![0.0; m]);
    let (mut fs, mut gs) = (vec![0.0; n], vec![0.0; m]);
    let mut iterations = 0;
    let mut violation = f64::INFINITY;
    for (k, &eps) in stages.iter().enumerate() {
        let last = k + 1 == stages.len();
        let tol = if last { opts.tol } else { opts.tol.max(1e-4) };
        let inv = 1.0 / eps;
        loop {
            for (s, &v) in gs.iter_mut().zip(&g) {
                *s = v * inv;
            }
            kernel.lse_rows(&gs, inv, &mut lr);
            violation = 0.0;
            for i in 0..n {
                if a[i] > 0.0 {
                    violation = f64::max(violation, (a[i] - (f[i] * inv + lr[i]).exp()).abs());
                }
            }
            if violation.is_nan() {
                return Err(Error::NonFinite("sinkhorn potentials".into()));
            }
            if violation < tol || iterations >= opts.max_iters {
                break;
            }
            for i in 0..n {
                f[i] = eps * (log_a[i] - lr[i]);
                fs[i] = f[i] * inv;
            }
            kernel.lse_cols(&fs, inv, &mut lc);
            for j in 0..m {
                g[j] = eps * (log_b[j] - lc[j]);
            }
            iterations += 1;
        }
        if iterations >= opts.max_iters {
            break;
        }
    }
    Ok(Potentials {
        f,
        g,
        iterations,
        violation,
        converged: violation < opts.tol,
    })
}

struct DenseKernel {
    cost: Array2<f64>,
}

impl LogKernel for DenseKernel {
    fn rows(&self) -> usize {
        self.cost.nrows()
    }

    fn cols(&self) -> usize {
        self.cost.ncols()
    }

    fn max_cost(&self) -> f64 {
        self.cost.iter().copied().fold(0.0, f64::max)
    }

    fn lse_rows(&self, v: &[f64], inv_eps: f64, out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.cost.rows()) {
            *o = lse(row.iter().zip(v).map(|(c, v)| v - c * inv_eps));
        }
    }

    fn lse_cols(&self, v: &[f64], inv_eps: f64, out: &mut [f64]) {
        for (o, col) in out.iter_mut().zip(self.cost.columns()) {
            *o = lse(col.iter().zip(v).map(|(c, v)| v - c * inv_eps));
        }
    }
}

/// Entropic transport between discrete measures. Non-convergence within the
/// budget is reported through `converged` and `violation`, not as an error.
pub fn sinkhorn(mu: &DiscreteMeasure, nu: &DiscreteMeasure, epsilon: f64, opts: &SinkhornOptions) -> Result<SinkhornResult> {
    let kernel = DenseKernel {
        cost: cost_matrix(mu, nu),
    };
    let p = solve(&kernel, mu.masses(), nu.masses(), epsilon, opts)?;
    let c = &kernel.cost;
    let plan = Array2::from_shape_fn(c.dim(), |(i, j)| ((p.f[i] + p.g[j] - c[[i, j]]) / epsilon).exp());
    let cost = (&plan * c).sum();
    let mut kl = 0.0;
    for ((i, j), &pij) in plan.indexed_iter() {
        if pij > 0.0 {
            kl += pij * (pij / (mu.masses()[i] * nu.masses()[j])).ln();
        }
    }
    Ok(SinkhornResult {
        coupling: Coupling::new(mu.clone(), nu.clone(), plan),
        f: p.f,
        g: p.g,
        epsilon,
        cost,
        entropic_objective: cost + epsilon * kl,
        iterations: p.iterations,
        violation: p.violation,
        converged: p.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_masses_give_trivial_coupling() {
        let mu = DiscreteMeasure::new(vec![[1.0, 2.0]], vec![1.0]).unwrap();
        let r = sinkhorn(&mu, &mu, 1e-3, &SinkhornOptions::default()).unwrap();
        assert!(r.converged);
        assert!((r.coupling.plan[[0, 0]] - 1.0).abs() < 1e-12);
        assert!(r.cost.abs() < 1e-15);
    }

    #[test]
    fn symmetric_instance_gives_swap_symmetric_plan() {
        let mu = DiscreteMeasure::new(vec![[0.0, 0.0], [1.0, 0.0]], vec![0.5, 0.5]).unwrap();
        let nu = DiscreteMeasure::new(vec![[0.0, 1.0], [1.0, 1.0]], vec![0.5, 0.5]).unwrap();
        let r = sinkhorn(&mu, &nu, 0.5, &SinkhornOptions::default()).unwrap();
        let p = &r.coupling.plan;
        assert!((p[[0, 0]] - p[[1, 1]]).abs() < 1e-12);
        assert!((p[[0, 1]] - p[[1, 0]]).abs() < 1e-12);
        assert!(p[[0, 0]] > p[[0, 1]]);
    }

    #[test]
    fn marginals_match_on_convergence() {
        let mu = DiscreteMeasure::normalized(vec![[0.0, 0.0], [2.0, 1.0], [0.5, 3.0]], &[1.0, 2.0, 3.0]).unwrap();
        let nu = DiscreteMeasure::normalized(vec![[1.0, 1.0], [4.0, 0.0]], &[3.0, 1.0]).unwrap();
        for scaling in [false, true] {
            let opts = SinkhornOptions {
                scaling,
                ..SinkhornOptions::default()
            };
            let r = sinkhorn(&mu, &nu, 0.05, &opts).unwrap();
            assert!(r.converged);
            assert!(r.coupling.row_error < 3.0 * 1e-9);
            assert!(r.coupling.col_error < 1e-12);
            assert!(r.entropic_objective >= r.cost - 1e-12);
        }
    }

    #[test]
    fn budget_exhaustion_is_flagged() {
        let mu = DiscreteMeasure::normalized(vec![[0.0, 0.0], [3.0, 0.0]], &[1.0, 1.0]).unwrap();
        let nu = DiscreteMeasure::normalized(vec![[0.0, 1.0], [3.0, 2.0]], &[1.0, 3.0]).unwrap();
        let opts = SinkhornOptions {
            max_iters: 1,
            scaling: false,
            ..SinkhornOptions::default()
        };
        let r = sinkhorn(&mu, &nu, 1e-2, &opts).unwrap();
        assert!(!r.converged);
        assert!(r.violation > opts.tol);
        assert!(sinkhorn(&mu, &nu, 0.0, &opts).is_err());
    }
}
