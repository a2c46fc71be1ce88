use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeDistribution {
    #[default]
    Rademacher,
    Normal,
}

/// `count` random vectors with zero mean and identity covariance; vector `i`
/// depends only on `(seed, i)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProbeSpec {
    pub distribution: ProbeDistribution,
    pub count: usize,
    pub seed: u64,
}

impl ProbeSpec {
    pub fn rademacher(count: usize, seed: u64) -> Self {
        Self {
            distribution: ProbeDistribution::Rademacher,
            count,
            seed,
        }
    }

    pub fn normal(count: usize, seed: u64) -> Self {
        Self {
            distribution: ProbeDistribution::Normal,
            count,
            seed,
        }
    }

    pub fn probe(&self, dim: usize, index: usize) -> Vec<f64> {
        probe(self.distribution, dim, self.seed, index as u64)
    }

    pub fn probes(&self, dim: usize) -> Vec<Vec<f64>> {
        (0..self.count).map(|i| self.probe(dim, i)).collect()
    }
}

pub fn probe(distribution: ProbeDistribution, dim: usize, seed: u64, index: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, index, 0x7072_6f62);
    match distribution {
        ProbeDistribution::Rademacher => (0..dim)
            .map(|_| if r.random::<bool>() { 1.0 } else { -1.0 })
            .collect(),
        ProbeDistribution::Normal => (0..dim).map(|_| StandardNormal.sample(&mut r)).collect(),
    }
}

/// Gaussian vectors rescaled to norm `√dim`: uniform on that sphere, so
/// still identity covariance.
pub fn sphere_probes(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..count)
        .map(|i| {
            let v = probe(ProbeDistribution::Normal, dim, seed, i as u64);
            let s = (dim as f64).sqrt() / v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x * s).collect()
        })
        .collect()
}
