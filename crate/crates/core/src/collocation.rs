//! Space-time collocation points and the per-pair data attached to them.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;

use crate::data::DensityPair;
use crate::error::{Error, Result};
use crate::grid::{Domain, MeshSpec};

/// Sensor values of every training pair, one row per pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairSensors {
    pub mu0: Array2<f64>,
    pub mu1: Array2<f64>,
}

impl PairSensors {
    pub fn from_pairs(pairs: &[DensityPair], sensors: MeshSpec) -> Result<Self> {
        let m = sensors.len();
        let mut mu0 = Array2::zeros((pairs.len(), m));
        let mut mu1 = Array2::zeros((pairs.len(), m));
        for (i, p) in pairs.iter().enumerate() {
            mu0.row_mut(i).assign(&ndarray::Array1::from(p.mu0.sensor_values(sensors)?));
            mu1.row_mut(i).assign(&ndarray::Array1::from(p.mu1.sensor_values(sensors)?));
        }
        Ok(PairSensors { mu0, mu1 })
    }

    pub fn pairs(&self) -> usize {
        self.mu0.nrows()
    }

    pub fn m(&self) -> usize {
        self.mu0.ncols()
    }
}

/// Collocation entries: a pair index, a point `(x1, x2, t)` and the boundary
/// densities of that pair at `x`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CollocationBatch {
    pub pair: Vec<usize>,
    pub points: Vec<[f64; 3]>,
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
}

impl CollocationBatch {
    pub fn len(&self) -> usize {
        self.pair.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pair.is_empty()
    }

    pub fn push(&mut self, pair: usize, point: [f64; 3], mu0: f64, mu1: f64) {
        self.pair.push(pair);
        self.points.push(point);
        self.mu0.push(mu0);
        self.mu1.push(mu1);
    }

    /// Entries at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> CollocationBatch {
        CollocationBatch {
            pair: indices.iter().map(|&i| self.pair[i]).collect(),
            points: indices.iter().map(|&i| self.points[i]).collect(),
            mu0: indices.iter().map(|&i| self.mu0[i]).collect(),
            mu1: indices.iter().map(|&i| self.mu1[i]).collect(),
        }
    }

    pub fn validate(&self, n_pairs: usize) -> Result<()> {
        let n = self.len();
        if self.points.len() != n || self.mu0.len() != n || self.mu1.len() != n {
            return Err(Error::Invalid("collocation batch columns have different lengths".into()));
        }
        if n == 0 {
            return Err(Error::EmptyBatch);
        }
        if let Some(&p) = self.pair.iter().find(|&&p| p >= n_pairs) {
            return Err(Error::Invalid(format!("collocation refers to pair {p} of {n_pairs}")));
        }
        let finite = self.points.iter().all(|p| p.iter().all(|v| v.is_finite()))
            && self.mu0.iter().chain(&self.mu1).all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("collocation batch".into()));
        }
        Ok(())
    }
}

/// Seed for epoch `epoch` derived from `master` (SplitMix64 finalizer over
/// the pair), so every epoch's draws are reproducible in isolation.
pub fn epoch_seed(master: u64, epoch: u64) -> u64 {
    let mut z = master ^ epoch.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws `per_pair` points uniformly from `domain × (0, 1)` for every pair,
/// grouped by pair.
pub fn sample_collocations(pairs: &[DensityPair], per_pair: usize, domain: Domain, seed: u64) -> CollocationBatch {
    let mut rng = Pcg64::seed_from_u64(seed);
    let mut batch = CollocationBatch::default();
    for (i, pair) in pairs.iter().enumerate() {
        for _ in 0..per_pair {
            let x = [
                rng.random_range(domain.x_min..domain.x_max),
                rng.random_range(domain.y_min..domain.y_max),
            ];
            let t = loop {
                let t: f64 = rng.random();
                if t > 0.0 {
                    break t;
                }
            };
            batch.push(i, [x[0], x[1], t], pair.mu0.value(x), pair.mu1.value(x));
        }
    }
    batch
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{BoundaryField, GaussianMixture2D};

    fn pairs(n: usize) -> Vec<DensityPair> {
        let g = GaussianMixture2D::single([2.5, 2.5], [[0.5, 0.0], [0.0, 0.5]]).unwrap();
        vec![
            DensityPair {
                mu0: BoundaryField::Mixture(g.clone()),
                mu1: BoundaryField::Mixture(g),
            };
            n
        ]
    }

    #[test]
    fn samples_lie_in_domain_and_are_seeded() {
        let p = pairs(3);
        let a = sample_collocations(&p, 500, Domain::default(), 11);
        assert_eq!(a.len(), 1500);
        for q in &a.points {
            assert!((0.0..=5.0).contains(&q[0]) && (0.0..=5.0).contains(&q[1]));
            assert!(q[2] > 0.0 && q[2] < 1.0);
        }
        assert_eq!(a, sample_collocations(&p, 500, Domain::default(), 11));
        assert_ne!(a, sample_collocations(&p, 500, Domain::default(), 12));
    }

    #[test]
    fn epoch_seeds_differ() {
        let s: std::collections::HashSet<u64> = (0..1000).map(|e| epoch_seed(42, e)).collect();
        assert_eq!(s.len(), 1000);
        assert_ne!(epoch_seed(1, 0), epoch_seed(2, 0));
    }

    #[test]
    fn empty_and_bad_batches_are_rejected() {
        assert!(matches!(CollocationBatch::default().validate(1), Err(Error::EmptyBatch)));
        let mut b = CollocationBatch::default();
        b.push(2, [0.0; 3], 0.0, 0.0);
        assert!(b.validate(2).is_err());
        assert!(b.validate(3).is_ok());
    }
}
