//! Closed-form solutions of the optimality system, used as residual oracles.

use crate::data::GaussianMixture2D;
use crate::error::{Error, Result};
use crate::operator::residual::FieldPair;
use crate::tensor::jet::{Jet, Slots, NSLOTS, SLOT_INDEX};

/// Rigid translation of a mixture at constant velocity `a`:
/// `μ(x, t) = μ₀(x − t a)`, `u(x, t) = a·x − t|a|²/2`.
///
/// With `a = 0` this is the identity geodesic (μ constant in time, u ≡ 0).
#[derive(Clone, Debug)]
pub struct TranslationField {
    pub initial: GaussianMixture2D,
    pub velocity: [f64; 2],
}

impl TranslationField {
    pub fn new(initial: GaussianMixture2D, velocity: [f64; 2]) -> Self {
        TranslationField { initial, velocity }
    }
}

impl FieldPair for TranslationField {
    fn fields(&self, x: [f64; 2], t: f64, order: usize) -> Result<(Jet, Jet)> {
        if order > 3 {
            return Err(Error::UnsupportedOrder {
                requested: order,
                max: 3,
            });
        }
        let a = self.velocity;
        let y = [x[0] - t * a[0], x[1] - t * a[1]];
        let d = self.initial.spatial_derivatives(y);
        let mut mu = Slots::zero();
        for (s, index) in SLOT_INDEX.iter().enumerate().take(NSLOTS) {
            if index.len() > order {
                continue;
            }
            // Each time index becomes −a·∇; spatial indices pass through.
            let nt = index.iter().filter(|&&v| v == 2).count();
            let mut total = 0.0;
            for choice in 0..(1usize << nt) {
                let mut spatial = [0usize; 3];
                let mut n = 0;
                let mut coef = 1.0;
                let mut bit = 0;
                for &v in index.iter() {
                    let axis = if v == 2 {
                        let j = (choice >> bit) & 1;
                        bit += 1;
                        coef *= -a[j];
                        j
                    } else {
                        v as usize
                    };
                    spatial[n] = axis;
                    n += 1;
                }
                total += coef * d.get(&spatial[..n]);
            }
            mu[s] = total;
        }
        let mut u = Slots::zero();
        u[0] = a[0] * x[0] + a[1] * x[1] - 0.5 * t * (a[0] * a[0] + a[1] * a[1]);
        if order >= 1 {
            u[1] = a[0];
            u[2] = a[1];
            u[3] = -0.5 * (a[0] * a[0] + a[1] * a[1]);
        }
        Ok((Jet::from_slots(&mu, order), Jet::from_slots(&u, order)))
    }
}
