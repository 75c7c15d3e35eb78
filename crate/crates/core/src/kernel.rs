//! The projection-deflated linear kernel.
//!
//! With `P_u = u u^T / |u|^2`, the deflated kernel is
//! `K~(x_i, x_j) = <(I - P_u) x_i, (I - P_u) x_j>`. The fairness-linear term
//! `<x_i, u>` is kept separately; together they reproduce the raw Gram matrix
//! via `K_ij = K~_ij + <x_i,u><x_j,u> / |u|^2`.

use nalgebra::{DMatrix, DVector};

use crate::dataset::{Dataset, GroupStats};

/// `|u|` below this multiple of `n * max_i |x_i|` is treated as zero.
pub const VACUOUS_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct ProjectedKernel {
    pub u: DVector<f64>,
    /// Zero exactly when the constraint is vacuous.
    pub u_norm_sq: f64,
    pub gram: DMatrix<f64>,
    pub raw_gram: DMatrix<f64>,
    /// `<x_i, u>` for every point.
    pub fair_lin: DVector<f64>,
}

impl ProjectedKernel {
    pub fn n(&self) -> usize {
        self.gram.nrows()
    }

    /// True when `u` vanishes and the fairness constraint cannot bind.
    pub fn is_vacuous(&self) -> bool {
        self.u_norm_sq == 0.0
    }
}

pub fn projected_kernel(ds: &Dataset, stats: &GroupStats) -> ProjectedKernel {
    let x = ds.features();
    let raw_gram = x * x.transpose();
    let scale = (0..ds.n())
        .map(|i| x.row(i).norm())
        .fold(0.0, f64::max)
        .max(1.0);
    let u_norm = stats.u.norm();
    if u_norm <= VACUOUS_REL_TOL * ds.n() as f64 * scale {
        return ProjectedKernel {
            u: stats.u.clone(),
            u_norm_sq: 0.0,
            gram: raw_gram.clone(),
            raw_gram,
            fair_lin: DVector::zeros(ds.n()),
        };
    }
    let u_norm_sq = u_norm * u_norm;
    let fair_lin = x * &stats.u;
    // Rows of the deflated feature matrix are (I - P_u) x_i.
    let deflated = x - (&fair_lin * stats.u.transpose()) / u_norm_sq;
    let mut gram = &deflated * deflated.transpose();
    gram = (&gram + gram.transpose()) * 0.5;
    ProjectedKernel {
        u: stats.u.clone(),
        u_norm_sq,
        gram,
        raw_gram,
        fair_lin,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::group_stats;
    use proptest::prelude::*;

    fn kernel_of(rows: Vec<Vec<f64>>, groups: Vec<u8>) -> (Dataset, ProjectedKernel) {
        let n = rows.len();
        let labels = (0..n).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect();
        let ds = Dataset::new(rows, labels, groups).unwrap();
        let st = group_stats(&ds).unwrap();
        let k = projected_kernel(&ds, &st);
        (ds, k)
    }

    #[test]
    fn mirrored_groups_give_raw_gram() {
        let (_, k) = kernel_of(
            vec![
                vec![1.0, 2.0],
                vec![-1.0, -2.0],
                vec![0.5, -3.0],
                vec![-0.5, 3.0],
            ],
            vec![0, 0, 1, 1],
        );
        assert!(k.is_vacuous());
        assert_eq!(k.gram, k.raw_gram);
        assert!(k.fair_lin.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn point_along_u_has_zero_row() {
        // z = (0, 1, 1): z_bar = 2/3 and u = -2/3 x0 + 1/3 (x1 + x2).
        let (_, k) = kernel_of(
            vec![vec![-1.0, 0.0], vec![1.0, 1.0], vec![1.0, -1.0]],
            vec![0, 1, 1],
        );
        let u = k.u.clone();
        assert!((u[1]).abs() < 1e-15);
        // x0 is parallel to u.
        for j in 0..3 {
            assert!(k.gram[(0, j)].abs() <= 1e-9);
        }
        assert!((k.fair_lin[0].abs() - u.norm()).abs() < 1e-12);
    }

    #[test]
    fn point_equal_to_u_has_fair_lin_norm_sq() {
        let u = DVector::from_vec(vec![1.5, -0.5]);
        let ds = Dataset::new(
            vec![u.iter().copied().collect(), vec![0.0, 1.0]],
            vec![1, -1],
            vec![0, 1],
        )
        .unwrap();
        let st = GroupStats {
            z_bar: 0.5,
            n0: 1,
            n1: 1,
            u,
        };
        let k = projected_kernel(&ds, &st);
        assert!((k.fair_lin[0] - k.u_norm_sq).abs() < 1e-12);
        assert!(k.gram.row(0).iter().all(|v| v.abs() <= 1e-9));
    }

    #[test]
    fn orthogonal_points_keep_raw_gram() {
        let ds = Dataset::new(
            vec![vec![0.0, 1.0], vec![0.0, -2.0], vec![0.0, 3.0]],
            vec![1, -1, 1],
            vec![0, 1, 0],
        )
        .unwrap();
        let st = GroupStats {
            z_bar: 1.0 / 3.0,
            n0: 2,
            n1: 1,
            u: DVector::from_vec(vec![1.0, 0.0]),
        };
        let k = projected_kernel(&ds, &st);
        assert!((&k.gram - &k.raw_gram).abs().max() < 1e-15);
    }

    proptest! {
        #[test]
        fn deflated_gram_is_symmetric_psd_and_decomposes(
            rows in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 3), 4..12),
        ) {
            let n = rows.len();
            let mut groups: Vec<u8> = (0..n).map(|i| (i % 3 == 0) as u8).collect();
            groups[1] = 0;
            let (_, k) = kernel_of(rows, groups);
            prop_assert_eq!(&k.gram, &k.gram.transpose());
            let eig = k.gram.clone().symmetric_eigen();
            let floor = -1e-8 * k.gram.trace().max(0.0) / n as f64;
            prop_assert!(eig.eigenvalues.min() >= floor);
            if !k.is_vacuous() {
                let rebuilt = &k.gram + (&k.fair_lin * k.fair_lin.transpose()) / k.u_norm_sq;
                prop_assert!((rebuilt - &k.raw_gram).abs().max() <= 1e-9 * (1.0 + k.raw_gram.abs().max()));
            }
        }
    }
}
