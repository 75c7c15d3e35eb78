use super::*;
use crate::dataset::standardize;
use crate::synth::{two_gaussians, GaussianSpec};
use proptest::prelude::*;

fn instance(seed: u64, n: usize) -> (Dataset, FairSvm) {
    let spec = GaussianSpec {
        n,
        ..Default::default()
    };
    let ds = standardize(&two_gaussians(&spec, seed).unwrap()).unwrap();
    let svm = FairSvm::new(&ds, 1.0, SolverOptions::default()).unwrap();
    (ds, svm)
}

fn stats(ds: &Dataset) -> GroupStats {
    group_stats(ds).unwrap()
}

#[test]
fn two_points_have_equal_multipliers() {
    for z in [[0u8, 1], [1, 0]] {
        let ds = Dataset::new(
            vec![vec![1.0, 0.5], vec![-0.5, 2.0]],
            vec![1, -1],
            z.to_vec(),
        )
        .unwrap();
        let svm = FairSvm::new(&ds, 1.0, SolverOptions::default()).unwrap();
        for eps in [0.0, 0.1, 10.0] {
            let sol = svm.solve(eps).unwrap();
            assert!((sol.mu[0] - sol.mu[1]).abs() < 1e-12, "{:?}", sol.mu);
        }
    }
}

#[test]
fn large_eps_recovers_standard_svm() {
    let (ds, svm) = instance(3, 30);
    let sol = svm.solve(1e6).unwrap();
    assert_eq!(sol.gamma, 0.0);
    assert_eq!(sol.side, BindingSide::Inactive);
    assert_eq!(sol.mu, svm.unconstrained().mu);
    // Standard dual on the raw kernel, solved independently of the
    // deflated machinery.
    let y: Vec<f64> = (0..ds.n()).map(|i| ds.y(i)).collect();
    let lin = vec![-1.0; ds.n()];
    let qp = BoxQp {
        q: svm.signed_raw_gram(),
        lin: &lin,
        y: &y,
        c: 1.0,
    };
    let plain = qp.solve(1e-10, 10_000_000, 1e-7).unwrap();
    for (a, b) in sol.mu.iter().zip(&plain.mu) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn eps_max_is_unconstrained_cov_gap() {
    let (ds, svm) = instance(5, 30);
    let st = stats(&ds);
    let primal = recover_primal(svm.unconstrained(), &ds, &st).unwrap();
    assert!((primal.cov_gap - svm.eps_max()).abs() < 1e-9);
    assert!(svm.eps_max() > 0.0);
}

#[test]
fn gamma_zero_gives_plain_theta() {
    let (ds, svm) = instance(11, 25);
    let sol = svm.solve(svm.eps_max() * 2.0).unwrap();
    let primal = recover_primal(&sol, &ds, &stats(&ds)).unwrap();
    for k in 0..ds.d() {
        let plain: f64 = (0..ds.n())
            .map(|i| sol.mu[i] * ds.y(i) * ds.features()[(i, k)])
            .sum();
        assert_eq!(primal.theta[k], plain);
    }
}

#[test]
fn support_vectors_sit_on_the_margin() {
    for seed in 0..5 {
        let (ds, svm) = instance(seed, 30);
        for frac in [0.0, 0.3, 0.7] {
            let sol = svm.solve(frac * svm.eps_max()).unwrap();
            let p = recover_primal(&sol, &ds, &stats(&ds)).unwrap();
            for &j in &sol.partition.support {
                let x: Vec<f64> = ds.features().row(j).iter().copied().collect();
                assert!((ds.y(j) * p.decision(&x) - 1.0).abs() <= 1e-5);
            }
        }
    }
}

#[test]
fn separable_four_points() {
    // Two points per class; the closest pair (0,0)/(2,0) defines the margin.
    let ds = Dataset::new(
        vec![
            vec![2.0, 0.0],
            vec![4.0, 1.0],
            vec![0.0, 0.0],
            vec![-2.0, -1.0],
        ],
        vec![1, 1, -1, -1],
        vec![0, 1, 1, 0],
    )
    .unwrap();
    let svm = FairSvm::new(&ds, 1e4, SolverOptions::default()).unwrap();
    let sol = svm.solve(1e3).unwrap();
    let p = recover_primal(&sol, &ds, &stats(&ds)).unwrap();
    assert!(p.xi.iter().all(|&v| v < 1e-9));
    assert_eq!(sol.partition.support, vec![0, 2]);
    assert_eq!(sol.partition.free, vec![1, 3]);
    // Maximum-margin line between (0,0) and (2,0) is x = 1.
    assert!((p.theta[0] - 1.0).abs() < 1e-8 && p.theta[1].abs() < 1e-8);
    assert!((p.b + 1.0).abs() < 1e-8);
    // Brute force over unit normals: no direction has a wider margin.
    let margin = 1.0 / (p.theta[0].hypot(p.theta[1]));
    for k in 0..3600 {
        let a = k as f64 * std::f64::consts::PI / 1800.0;
        let (c, s) = (a.cos(), a.sin());
        let proj: Vec<f64> = (0..4)
            .map(|i| c * ds.features()[(i, 0)] + s * ds.features()[(i, 1)])
            .collect();
        let lo_pos = proj[0].min(proj[1]);
        let hi_neg = proj[2].max(proj[3]);
        assert!((lo_pos - hi_neg) / 2.0 <= margin + 1e-9);
    }
}

#[test]
fn margin_violators_are_error_vectors() {
    let spec = GaussianSpec {
        n: 40,
        label_sep: 1.0,
        ..Default::default()
    };
    let ds = standardize(&two_gaussians(&spec, 21).unwrap()).unwrap();
    let svm = FairSvm::new(&ds, 1.0, SolverOptions::default()).unwrap();
    let sol = svm.solve(0.5 * svm.eps_max()).unwrap();
    let p = recover_primal(&sol, &ds, &stats(&ds)).unwrap();
    let mut violators = 0;
    for j in 0..ds.n() {
        if p.xi[j] > 1e-6 {
            violators += 1;
            assert_eq!(sol.mu[j], 1.0);
            assert!(sol.partition.error.contains(&j));
        }
    }
    assert!(violators > 0);
}

#[test]
fn partition_without_gradient_is_a_state_error() {
    let (_, svm) = instance(2, 20);
    let mut sol = svm.solve(0.0).unwrap();
    sol.gradient.clear();
    assert!(matches!(
        partition(&sol, svm.kernel(), svm.partition_tol()),
        Err(Error::State(_))
    ));
}

#[test]
fn partition_matches_stored() {
    let (_, svm) = instance(2, 20);
    let sol = svm.solve(0.01).unwrap();
    assert_eq!(
        partition(&sol, svm.kernel(), svm.partition_tol()).unwrap(),
        sol.partition
    );
}

#[test]
fn shadow_price_signs() {
    let (_, svm) = instance(4, 30);
    let slack = svm.solve(svm.eps_max() * 1.5).unwrap();
    assert_eq!(shadow_price(&slack, svm.kernel()).unwrap(), 0.0);
    let tight = svm.solve(0.0).unwrap();
    let g = shadow_price(&tight, svm.kernel()).unwrap();
    assert_eq!(g, tight.gamma);
    match tight.side {
        BindingSide::Upper => assert!(g > 0.0),
        BindingSide::Lower => assert!(g < 0.0),
        other => panic!("unexpected side {other:?}"),
    }
    assert!(tight.beta_minus == 0.0 || tight.beta_plus == 0.0);
}

#[test]
fn positive_covariance_binds_upper() {
    // Group 1 concentrated among positives: the plain SVM favours z = 1.
    let (ds, svm) = instance(4, 30);
    let p = recover_primal(svm.unconstrained(), &ds, &stats(&ds)).unwrap();
    let signed_cov: f64 = (0..ds.n())
        .map(|i| {
            let x: Vec<f64> = ds.features().row(i).iter().copied().collect();
            (f64::from(ds.groups()[i]) - stats(&ds).z_bar) * p.decision(&x)
        })
        .sum();
    assert!(signed_cov > 0.0);
    assert_eq!(svm.binding_side(), BindingSide::Upper);
    assert!(svm.solve(0.0).unwrap().gamma > 0.0);
}

#[test]
fn vacuous_constraint_has_undefined_price() {
    let ds = Dataset::new(
        vec![
            vec![1.0, 2.0],
            vec![-1.0, -2.0],
            vec![0.5, -3.0],
            vec![-0.5, 3.0],
        ],
        vec![1, -1, 1, -1],
        vec![0, 0, 1, 1],
    )
    .unwrap();
    let svm = FairSvm::new(&ds, 1.0, SolverOptions::default()).unwrap();
    let sol = svm.solve(0.0).unwrap();
    assert_eq!(sol.side, BindingSide::Vacuous);
    assert_eq!(sol.gamma, 0.0);
    assert!(matches!(
        shadow_price(&sol, svm.kernel()),
        Err(Error::UndefinedPrice)
    ));
}

#[test]
fn shadow_price_matches_finite_difference() {
    // Inside a stable region the price is linear in eps, so the one-sided
    // difference equals the mean of the prices at its two ends; it differs
    // from the price at eps alone by delta/2 times the price's slope.
    let spec = GaussianSpec {
        n: 20,
        group_shift: 2.0,
        ..Default::default()
    };
    let delta = 1e-4;
    for seed in 0..8 {
        let ds = standardize(&two_gaussians(&spec, seed).unwrap()).unwrap();
        let svm = FairSvm::new(&ds, 1.0, SolverOptions::default()).unwrap();
        let mut checked = 0;
        for frac in [0.2, 0.35, 0.5, 0.65, 0.8] {
            let eps = frac * svm.eps_max();
            let at = svm.solve(eps).unwrap();
            let below = svm.solve(eps - delta).unwrap();
            // Only points whose delta-neighbourhood lies in one stable region.
            if at.partition != below.partition {
                continue;
            }
            checked += 1;
            let fd = (below.objective - at.objective) / delta;
            let mean_price = 0.5 * (at.gamma.abs() + below.gamma.abs());
            assert!(
                (mean_price - fd).abs() <= 1e-3,
                "seed {seed} gamma {} fd {fd}",
                at.gamma
            );
            let above = svm.solve(eps + delta).unwrap();
            if above.partition == at.partition {
                let central = (below.objective - above.objective) / (2.0 * delta);
                assert!((at.gamma.abs() - central).abs() <= 1e-3);
            }
        }
        assert!(checked >= 3);
    }
}

#[test]
fn global_bound_examples() {
    let (_, svm) = instance(8, 30);
    let sol0 = svm.solve(0.0).unwrap();
    assert_eq!(global_sensitivity_bound(&sol0, 0.0), sol0.objective);
    for eps in [0.01, 0.05, 0.1] {
        assert!(global_sensitivity_bound(&sol0, eps) <= svm.solve(eps).unwrap().objective + 1e-9);
    }
    let mut flat = sol0.clone();
    flat.gamma = 0.0;
    assert_eq!(
        global_sensitivity_bound(&flat, 0.3),
        global_sensitivity_bound(&flat, 0.0)
    );
}

#[test]
fn rejects_bad_parameters() {
    let (ds, svm) = instance(1, 10);
    assert!(matches!(svm.solve(-1.0), Err(Error::InvalidParameter(_))));
    assert!(matches!(
        FairSvm::new(&ds, 0.0, SolverOptions::default()),
        Err(Error::InvalidParameter(_))
    ));
    let one_label = Dataset::new(vec![vec![1.0], vec![2.0]], vec![1, 1], vec![0, 1]).unwrap();
    assert!(matches!(
        FairSvm::new(&one_label, 1.0, SolverOptions::default()),
        Err(Error::LabelMissing(-1))
    ));
}

#[test]
fn iteration_budget_is_enforced() {
    let (ds, _) = instance(1, 30);
    let opts = SolverOptions {
        max_iter: Some(1),
        ..Default::default()
    };
    assert!(matches!(
        FairSvm::new(&ds, 1.0, opts),
        Err(Error::NonConvergence { .. })
    ));
}

#[test]
fn recovered_theta_matches_stationarity() {
    let (ds, svm) = instance(9, 30);
    let st = stats(&ds);
    let sol = svm.solve(0.3 * svm.eps_max()).unwrap();
    let p = recover_primal(&sol, &ds, &st).unwrap();
    let n = ds.n() as f64;
    for k in 0..ds.d() {
        let expect: f64 = (0..ds.n())
            .map(|i| sol.mu[i] * ds.y(i) * ds.features()[(i, k)])
            .sum::<f64>()
            - sol.gamma / n * st.u[k];
        assert!((p.theta[k] - expect).abs() <= 1e-7);
    }
    assert!((p.objective(1.0) - sol.objective).abs() <= 1e-6 * sol.objective.abs().max(1.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn kkt_and_feasibility(seed in 0u64..10_000, n in 6usize..30, frac in 0.0f64..1.2, c in 0.3f64..3.0) {
        let spec = GaussianSpec { n, ..Default::default() };
        let ds = standardize(&two_gaussians(&spec, seed).unwrap());
        prop_assume!(ds.is_ok());
        let ds = ds.unwrap();
        let svm = FairSvm::new(&ds, c, SolverOptions::default()).unwrap();
        let eps = frac * svm.eps_max();
        let sol = svm.solve(eps).unwrap();
        let tol = svm.partition_tol();
        let eq: f64 = (0..n).map(|i| sol.mu[i] * ds.y(i)).sum();
        prop_assert!(eq.abs() <= 1e-8 * c * n as f64);
        for j in 0..n {
            prop_assert!(sol.mu[j] >= 0.0 && sol.mu[j] <= c);
            let g = sol.gradient[j];
            prop_assert!(sol.mu[j] * g <= tol.mu.max(1e-7 * c) + 1e-7 * c);
            prop_assert!((c - sol.mu[j]) * (-g) <= 1e-7 * c);
        }
        for &j in &sol.partition.support {
            prop_assert!(sol.gradient[j].abs() <= tol.grad);
        }
        prop_assert!(sol.beta_minus == 0.0 || sol.beta_plus == 0.0);
        prop_assert!((sol.beta_minus + sol.beta_plus - eps).abs() == 0.0);
        if !svm.kernel().is_vacuous() {
            let p = recover_primal(&sol, &ds, &group_stats(&ds).unwrap()).unwrap();
            prop_assert!(p.cov_gap <= eps + 1e-6);
        }
    }

    #[test]
    fn loss_is_monotone_in_eps(seed in 0u64..10_000, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (_, svm) = instance(seed, 20);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let p_lo = svm.solve(lo * svm.eps_max()).unwrap().objective;
        let p_hi = svm.solve(hi * svm.eps_max()).unwrap().objective;
        prop_assert!(p_lo >= p_hi - 1e-7);
    }
}
