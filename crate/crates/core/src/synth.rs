//! Seeded synthetic instances: two Gaussian classes whose means also shift
//! with group membership, so that the unconstrained classifier is
//! correlated with the protected attribute.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpec {
    pub n: usize,
    pub d: usize,
    /// Distance between class means along the first axis.
    pub label_sep: f64,
    /// Shift of group-1 means along every axis.
    pub group_shift: f64,
    /// Probability of `y = +1` in group 0 and group 1.
    pub positive_rate: (f64, f64),
    pub noise: f64,
}

impl Default for GaussianSpec {
    fn default() -> Self {
        GaussianSpec {
            n: 40,
            d: 2,
            label_sep: 2.0,
            group_shift: 1.0,
            positive_rate: (0.3, 0.7),
            noise: 1.0,
        }
    }
}

/// Draws an instance; rows 0 and 1 are forced into different groups and
/// labels so that every operation has both present.
pub fn two_gaussians(spec: &GaussianSpec, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(spec.n);
    let mut labels = Vec::with_capacity(spec.n);
    let mut groups = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let z: u8 = match i {
            0 => 0,
            1 => 1,
            _ => rng.random_bool(0.5) as u8,
        };
        let rate = if z == 1 {
            spec.positive_rate.1
        } else {
            spec.positive_rate.0
        };
        let y: i8 = match i {
            0 => -1,
            1 => 1,
            _ if rng.random_bool(rate) => 1,
            _ => -1,
        };
        let row: Vec<f64> = (0..spec.d)
            .map(|k| {
                let class = if k == 0 {
                    0.5 * spec.label_sep * f64::from(y)
                } else {
                    0.0
                };
                let e: f64 = rng.sample(StandardNormal);
                class + spec.group_shift * f64::from(z) + spec.noise * e
            })
            .collect();
        rows.push(row);
        labels.push(y);
        groups.push(z);
    }
    Dataset::new(rows, labels, groups)
}

/// Uniform points in `[-1, 1]^d`.
pub fn uniform_cloud(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_given_seed() {
        let spec = GaussianSpec::default();
        assert_eq!(
            two_gaussians(&spec, 7).unwrap(),
            two_gaussians(&spec, 7).unwrap()
        );
        assert_ne!(
            two_gaussians(&spec, 7).unwrap(),
            two_gaussians(&spec, 8).unwrap()
        );
    }

    #[test]
    fn both_groups_and_labels_present() {
        let ds = two_gaussians(
            &GaussianSpec {
                n: 2,
                ..Default::default()
            },
            1,
        )
        .unwrap();
        assert_eq!(ds.groups(), &[0, 1]);
        assert_eq!(ds.labels(), &[-1, 1]);
    }
}
