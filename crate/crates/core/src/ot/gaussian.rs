//! Closed-form transport between Gaussians (Bures–Wasserstein geometry).

use crate::data::GaussianMixture2D;
use crate::error::{Error, Result};

type Mat = [[f64; 2]; 2];

/// Smallest eigenvalue accepted where an inverse square root is needed.
const MIN_EIGENVALUE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gaussian2D {
    pub mean: [f64; 2],
    pub cov: Mat,
}

impl Gaussian2D {
    pub fn new(mean: [f64; 2], cov: Mat) -> Result<Self> {
        if mean.iter().chain(cov.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gaussian parameters".into()));
        }
        if cov[0][1] != cov[1][0] {
            return Err(Error::Invalid("covariance is not symmetric".into()));
        }
        let (lo, _) = eig_sym(cov).0;
        if lo <= 0.0 {
            return Err(Error::Invalid(format!("covariance is not positive definite (eigenvalue {lo:e})")));
        }
        Ok(Gaussian2D { mean, cov })
    }

    pub fn density(&self, x: [f64; 2]) -> f64 {
        self.to_mixture().density(x)
    }

    pub fn to_mixture(&self) -> GaussianMixture2D {
        GaussianMixture2D::single(self.mean, self.cov).expect("validated covariance")
    }

    /// The single component of a one-component mixture.
    pub fn from_mixture(g: &GaussianMixture2D) -> Result<Self> {
        match g.components() {
            [c] => Gaussian2D::new(c.mean, c.cov),
            cs => Err(Error::Invalid(format!("expected a single Gaussian, got {} components", cs.len()))),
        }
    }
}

/// Eigenvalues `(min, max)` and the unit eigenvector of the larger one.
fn eig_sym(m: Mat) -> ((f64, f64), [f64; 2]) {
    let (a, b, c) = (m[0][0], m[0][1], m[1][1]);
    let mid = 0.5 * (a + c);
    let rad = (0.5 * (a - c)).hypot(b);
    let theta = 0.5 * (2.0 * b).atan2(a - c);
    ((mid - rad, mid + rad), [theta.cos(), theta.sin()])
}

/// `V diag(h(λ)) Vᵀ` for a symmetric 2×2 matrix.
fn spectral(m: Mat, h: impl Fn(f64) -> f64) -> Mat {
    let ((lo, hi), v) = eig_sym(m);
    let w = [-v[1], v[0]];
    let (hh, hl) = (h(hi), h(lo));
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = hh * v[i] * v[j] + hl * w[i] * w[j];
        }
    }
    out[0][1] = 0.5 * (out[0][1] + out[1][0]);
    out[1][0] = out[0][1];
    out
}

/// Principal square root of a symmetric positive semidefinite matrix, with
/// negative eigenvalues (rounding noise) clamped to zero.
pub fn sqrtm_spd(m: Mat) -> Mat {
    spectral(m, |l| l.max(0.0).sqrt())
}

fn inv_sqrtm(m: Mat) -> Result<Mat> {
    let lo = eig_sym(m).0 .0;
    if lo < MIN_EIGENVALUE {
        return Err(Error::Singular(lo));
    }
    Ok(spectral(m, |l| 1.0 / l.sqrt()))
}

fn mul(a: Mat, b: Mat) -> Mat {
    let mut o = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            o[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    o
}

fn sym(m: Mat) -> Mat {
    let off = 0.5 * (m[0][1] + m[1][0]);
    [[m[0][0], off], [off, m[1][1]]]
}

/// Point at time `t` on the W₂ geodesic from `g0` to `g1`.
pub fn bures_geodesic(g0: &Gaussian2D, g1: &Gaussian2D, t: f64) -> Result<Gaussian2D> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Invalid(format!("geodesic time {t} outside [0, 1]")));
    }
    let r = sqrtm_spd(g0.cov);
    let ri = inv_sqrtm(g0.cov)?;
    let inner = sqrtm_spd(sym(mul(mul(r, g1.cov), r)));
    let map = sym(mul(mul(ri, inner), ri));
    let s = 1.0 - t;
    let a = [[s + t * map[0][0], t * map[0][1]], [t * map[1][0], s + t * map[1][1]]];
    let cov = sym(mul(mul(a, g0.cov), a));
    let mean = [s * g0.mean[0] + t * g1.mean[0], s * g0.mean[1] + t * g1.mean[1]];
    Gaussian2D::new(mean, cov)
}

/// Squared W₂ distance.
pub fn w2_gaussian(g0: &Gaussian2D, g1: &Gaussian2D) -> Result<f64> {
    let lo = eig_sym(g0.cov).0 .0;
    if lo < MIN_EIGENVALUE {
        return Err(Error::Singular(lo));
    }
    let r = sqrtm_spd(g0.cov);
    let inner = sqrtm_spd(sym(mul(mul(r, g1.cov), r)));
    let dm = (g0.mean[0] - g1.mean[0]).powi(2) + (g0.mean[1] - g1.mean[1]).powi(2);
    let tr = g0.cov[0][0] + g0.cov[1][1] + g1.cov[0][0] + g1.cov[1][1] - 2.0 * (inner[0][0] + inner[1][1]);
    Ok(dm + tr.max(0.0))
}
