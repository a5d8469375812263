//! Residuals of the primal–dual optimality system and their adjoints.
//!
//! With density `c` and potential `h`:
//!
//! ```text
//! Φ  = ∂t c + ∇c·∇h + c Δh            (+ ε Δc   when ε > 0)
//! Ψ  = ∂t h + ½ |∇h|²                  (− ε Δh   when ε > 0)
//! Φℓ = ∂xℓ Φ,  Ψℓ = ∂xℓ Ψ              (gradient enhancement)
//! ```
//!
//! The divergence `div(c ∇h)` is expanded by the product rule so that only
//! partials of the individual fields are needed.

use crate::error::{Error, Result};
use crate::tensor::jet::{slot, Jet, Slots};

/// `[xj, xℓ]` second partial slots.
const D2: [[usize; 2]; 2] = [[slot::X1X1, slot::X1X2], [slot::X1X2, slot::X2X2]];
/// `∂xℓ ∂²xj` slots, indexed `[j][ℓ]`.
const LAP3: [[usize; 2]; 2] = [[slot::X1X1X1, slot::X1X1X2], [slot::X1X2X2, slot::X2X2X2]];
const XT: [usize; 2] = [slot::X1T, slot::X2T];
const X: [usize; 2] = [slot::X1, slot::X2];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualOptions {
    /// Entropic regularization strength; zero gives the unregularized system.
    pub epsilon: f64,
    /// Also produce the spatial derivatives of both residuals.
    pub ge: bool,
}

impl Default for ResidualOptions {
    fn default() -> Self {
        ResidualOptions {
            epsilon: 0.0,
            ge: false,
        }
    }
}

impl ResidualOptions {
    /// Derivative order the fields must supply.
    pub fn order(&self) -> usize {
        if self.ge {
            3
        } else {
            2
        }
    }

    /// Slots of the density field the residuals read.
    pub fn density_slots(&self) -> Vec<usize> {
        let mut s = vec![slot::VALUE, slot::X1, slot::X2, slot::T];
        if self.epsilon > 0.0 || self.ge {
            s.extend([slot::X1X1, slot::X2X2]);
        }
        if self.ge {
            s.extend([slot::X1X2, slot::X1T, slot::X2T]);
            if self.epsilon > 0.0 {
                s.extend([slot::X1X1X1, slot::X1X1X2, slot::X1X2X2, slot::X2X2X2]);
            }
        }
        s
    }

    /// Slots of the potential field the residuals read.
    pub fn potential_slots(&self) -> Vec<usize> {
        let mut s = vec![slot::VALUE, slot::X1, slot::X2, slot::T, slot::X1X1, slot::X2X2];
        if self.ge {
            s.extend([
                slot::X1X2,
                slot::X1T,
                slot::X2T,
                slot::X1X1X1,
                slot::X1X1X2,
                slot::X1X2X2,
                slot::X2X2X2,
            ]);
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Residuals {
    pub cty: f64,
    pub hj: f64,
    pub ge_cty: Option<[f64; 2]>,
    pub ge_hj: Option<[f64; 2]>,
}

/// Adjoint seeds for each residual component.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ResidualAdjoint {
    pub cty: f64,
    pub hj: f64,
    pub ge_cty: [f64; 2],
    pub ge_hj: [f64; 2],
}

/// Residuals from slot storage of the density `c` and potential `h`.
pub fn residuals_from_slots(c: &Slots, h: &Slots, opts: ResidualOptions) -> Residuals {
    let eps = opts.epsilon;
    let lap_h = h[slot::X1X1] + h[slot::X2X2];
    let mut cty = c[slot::T] + c[slot::X1] * h[slot::X1] + c[slot::X2] * h[slot::X2] + c[slot::VALUE] * lap_h;
    let mut hj = h[slot::T] + 0.5 * (h[slot::X1] * h[slot::X1] + h[slot::X2] * h[slot::X2]);
    if eps > 0.0 {
        cty += eps * (c[slot::X1X1] + c[slot::X2X2]);
        hj -= eps * lap_h;
    }
    let (ge_cty, ge_hj) = if opts.ge {
        let mut gc = [0.0; 2];
        let mut gh = [0.0; 2];
        for l in 0..2 {
            let lap_h_l = h[LAP3[0][l]] + h[LAP3[1][l]];
            let mut v = c[XT[l]];
            for j in 0..2 {
                v += c[D2[j][l]] * h[X[j]] + c[X[j]] * h[D2[j][l]];
            }
            v += c[X[l]] * lap_h + c[slot::VALUE] * lap_h_l;
            let mut w = h[XT[l]];
            for j in 0..2 {
                w += h[X[j]] * h[D2[j][l]];
            }
            if eps > 0.0 {
                v += eps * (c[LAP3[0][l]] + c[LAP3[1][l]]);
                w -= eps * lap_h_l;
            }
            gc[l] = v;
            gh[l] = w;
        }
        (Some(gc), Some(gh))
    } else {
        (None, None)
    };
    Residuals {
        cty,
        hj,
        ge_cty,
        ge_hj,
    }
}

/// Accumulates into `dc`, `dh` the pullback of `adj` through
/// [`residuals_from_slots`].
pub fn residual_vjp(c: &Slots, h: &Slots, opts: ResidualOptions, adj: &ResidualAdjoint, dc: &mut Slots, dh: &mut Slots) {
    let eps = opts.epsilon;
    let lap_h = h[slot::X1X1] + h[slot::X2X2];

    let a = adj.cty;
    dc[slot::T] += a;
    dc[slot::X1] += a * h[slot::X1];
    dc[slot::X2] += a * h[slot::X2];
    dh[slot::X1] += a * c[slot::X1];
    dh[slot::X2] += a * c[slot::X2];
    dc[slot::VALUE] += a * lap_h;
    dh[slot::X1X1] += a * c[slot::VALUE];
    dh[slot::X2X2] += a * c[slot::VALUE];

    let b = adj.hj;
    dh[slot::T] += b;
    dh[slot::X1] += b * h[slot::X1];
    dh[slot::X2] += b * h[slot::X2];

    if eps > 0.0 {
        dc[slot::X1X1] += eps * a;
        dc[slot::X2X2] += eps * a;
        dh[slot::X1X1] -= eps * b;
        dh[slot::X2X2] -= eps * b;
    }

    if !opts.ge {
        return;
    }
    for l in 0..2 {
        let a = adj.ge_cty[l];
        let lap_h_l = h[LAP3[0][l]] + h[LAP3[1][l]];
        dc[XT[l]] += a;
        for j in 0..2 {
            dc[D2[j][l]] += a * h[X[j]];
            dh[X[j]] += a * c[D2[j][l]];
            dc[X[j]] += a * h[D2[j][l]];
            dh[D2[j][l]] += a * c[X[j]];
        }
        dc[X[l]] += a * lap_h;
        dh[slot::X1X1] += a * c[X[l]];
        dh[slot::X2X2] += a * c[X[l]];
        dc[slot::VALUE] += a * lap_h_l;
        dh[LAP3[0][l]] += a * c[slot::VALUE];
        dh[LAP3[1][l]] += a * c[slot::VALUE];

        let b = adj.ge_hj[l];
        dh[XT[l]] += b;
        for j in 0..2 {
            dh[X[j]] += b * h[D2[j][l]];
            dh[D2[j][l]] += b * h[X[j]];
        }
        if eps > 0.0 {
            dc[LAP3[0][l]] += eps * a;
            dc[LAP3[1][l]] += eps * a;
            dh[LAP3[0][l]] -= eps * b;
            dh[LAP3[1][l]] -= eps * b;
        }
    }
}

/// A pair of differentiable scalar fields: a density and a potential.
pub trait FieldPair {
    /// Jets of `(density, potential)` at `(x, t)` carrying partials up to `order`.
    fn fields(&self, x: [f64; 2], t: f64, order: usize) -> Result<(Jet, Jet)>;
}

/// Residuals of `fields` at one space-time point.
pub fn residuals_at(fields: &dyn FieldPair, x: [f64; 2], t: f64, opts: ResidualOptions) -> Result<Residuals> {
    if !(opts.epsilon >= 0.0 && opts.epsilon.is_finite()) {
        return Err(Error::Invalid(format!("entropic parameter must be >= 0, got {}", opts.epsilon)));
    }
    let (c, h) = fields.fields(x, t, opts.order())?;
    for jet in [&c, &h] {
        if jet.order < opts.order() {
            return Err(Error::UnsupportedOrder {
                requested: opts.order(),
                max: jet.order,
            });
        }
    }
    Ok(residuals_from_slots(&c.to_slots(), &h.to_slots(), opts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_pcg::Pcg64;

    fn random_slots(rng: &mut Pcg64) -> Slots {
        let mut s = Slots::zero();
        for v in s.0.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        s
    }

    fn objective(c: &Slots, h: &Slots, opts: ResidualOptions, adj: &ResidualAdjoint) -> f64 {
        let r = residuals_from_slots(c, h, opts);
        let mut v = adj.cty * r.cty + adj.hj * r.hj;
        if let (Some(gc), Some(gh)) = (r.ge_cty, r.ge_hj) {
            v += adj.ge_cty[0] * gc[0] + adj.ge_cty[1] * gc[1] + adj.ge_hj[0] * gh[0] + adj.ge_hj[1] * gh[1];
        }
        v
    }

    /// The residuals are polynomial in the slots, so central differences are
    /// exact up to rounding.
    #[test]
    fn vjp_matches_central_differences() {
        let mut rng = Pcg64::seed_from_u64(1);
        for (eps, ge) in [(0.0, false), (0.3, false), (0.0, true), (0.2, true)] {
            let opts = ResidualOptions { epsilon: eps, ge };
            let c = random_slots(&mut rng);
            let h = random_slots(&mut rng);
            let adj = ResidualAdjoint {
                cty: 0.7,
                hj: -1.3,
                ge_cty: [0.4, -0.9],
                ge_hj: [1.1, 0.25],
            };
            let mut dc = Slots::zero();
            let mut dh = Slots::zero();
            residual_vjp(&c, &h, opts, &adj, &mut dc, &mut dh);
            for s in 0..crate::tensor::jet::NSLOTS {
                for (which, grad) in [(0, dc[s]), (1, dh[s])] {
                    let step = 1e-3;
                    let (mut cp, mut hp, mut cm, mut hm) = (c, h, c, h);
                    if which == 0 {
                        cp[s] += step;
                        cm[s] -= step;
                    } else {
                        hp[s] += step;
                        hm[s] -= step;
                    }
                    let fd = (objective(&cp, &hp, opts, &adj) - objective(&cm, &hm, opts, &adj)) / (2.0 * step);
                    assert!((fd - grad).abs() < 1e-9, "eps {eps} ge {ge} field {which} slot {s}: {grad} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn declared_slots_cover_everything_read() {
        let mut rng = Pcg64::seed_from_u64(2);
        for (eps, ge) in [(0.0, false), (0.3, false), (0.0, true), (0.2, true)] {
            let opts = ResidualOptions { epsilon: eps, ge };
            let c = random_slots(&mut rng);
            let h = random_slots(&mut rng);
            let mask = |s: &Slots, keep: &[usize]| {
                let mut out = Slots::zero();
                for &k in keep {
                    out[k] = s[k];
                }
                out
            };
            let full = residuals_from_slots(&c, &h, opts);
            let masked = residuals_from_slots(&mask(&c, &opts.density_slots()), &mask(&h, &opts.potential_slots()), opts);
            assert_eq!(full, masked);
        }
    }

    #[test]
    fn zero_epsilon_is_the_base_system() {
        let mut rng = Pcg64::seed_from_u64(3);
        let c = random_slots(&mut rng);
        let h = random_slots(&mut rng);
        let r = residuals_from_slots(&c, &h, ResidualOptions::default());
        let expect = c[slot::T] + c[slot::X1] * h[slot::X1] + c[slot::X2] * h[slot::X2]
            + c[slot::VALUE] * (h[slot::X1X1] + h[slot::X2X2]);
        assert_eq!(r.cty, expect);
        assert!(r.ge_cty.is_none());
    }

    /// `div(c ∇h)` through the product rule equals the divergence of the flux
    /// assembled from its own partials.
    #[test]
    fn product_rule_expansion_matches_flux_divergence() {
        let mut rng = Pcg64::seed_from_u64(4);
        for _ in 0..50 {
            let c = random_slots(&mut rng);
            let h = random_slots(&mut rng);
            let mut c0 = c;
            c0[slot::T] = 0.0;
            let r = residuals_from_slots(&c0, &h, ResidualOptions::default());
            // ∂x1(c h1) + ∂x2(c h2)
            let flux = (c[slot::X1] * h[slot::X1] + c[slot::VALUE] * h[slot::X1X1])
                + (c[slot::X2] * h[slot::X2] + c[slot::VALUE] * h[slot::X2X2]);
            assert!((r.cty - flux).abs() <= 1e-12 * flux.abs().max(1.0));
        }
    }
}
