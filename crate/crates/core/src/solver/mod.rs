//! The fairness-constrained soft-margin SVM at a fixed tolerance.
//!
//! The primal problem is
//!
//! ```text
//! min 1/2 |theta|^2 + C sum_i xi_i
//! s.t. y_i (theta^T x_i + b) >= 1 - xi_i,  xi_i >= 0,
//!      |(1/n) sum_i (z_i - z_bar)(theta^T x_i + b)| <= eps
//! ```
//!
//! Because the centered group weights sum to zero, the fairness constraint
//! reads `|theta^T u| <= n eps`. When it binds on side `sigma`, the dual is a
//! box-and-equality QP over the deflated kernel with linear coefficients
//! `-1 + sigma n eps y_j <x_j,u> / |u|^2`; the binding side is taken from the
//! sign of the unconstrained classifier's covariance.

mod smo;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{group_stats, Dataset, GroupStats};
use crate::error::{Error, Result};
use crate::kernel::{projected_kernel, ProjectedKernel};

pub(crate) use smo::BoxQp;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Stopping threshold on the maximal violating pair.
    pub tol: f64,
    /// Iteration cap; `None` means `max(1_000_000, 2000 n)`.
    pub max_iter: Option<usize>,
    /// Gradient tolerance used by the partition.
    pub grad_tol: f64,
    /// Tolerance on `mu` relative to `C` used by the partition.
    pub mu_rel_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-8,
            max_iter: None,
            grad_tol: 1e-7,
            mu_rel_tol: 1e-7,
        }
    }
}

/// Which linearized fairness constraint is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BindingSide {
    /// `u = 0`; the constraint holds for every classifier.
    Vacuous,
    Inactive,
    /// `theta^T u <= n eps` binds; `gamma > 0`.
    Upper,
    /// `-theta^T u <= n eps` binds; `gamma < 0`.
    Lower,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Membership {
    #[serde(rename = "F")]
    Free,
    #[serde(rename = "S")]
    Support,
    #[serde(rename = "E")]
    Error,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    #[serde(rename = "F")]
    pub free: Vec<usize>,
    #[serde(rename = "S")]
    pub support: Vec<usize>,
    #[serde(rename = "E")]
    pub error: Vec<usize>,
}

impl Partition {
    pub fn from_memberships(m: &[Membership]) -> Partition {
        let mut p = Partition::default();
        for (j, k) in m.iter().enumerate() {
            match k {
                Membership::Free => p.free.push(j),
                Membership::Support => p.support.push(j),
                Membership::Error => p.error.push(j),
            }
        }
        p
    }

    pub fn memberships(&self, n: usize) -> Vec<Membership> {
        let mut m = vec![Membership::Free; n];
        for &j in &self.support {
            m[j] = Membership::Support;
        }
        for &j in &self.error {
            m[j] = Membership::Error;
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionTol {
    pub grad: f64,
    /// Absolute tolerance on `mu`.
    pub mu: f64,
}

impl PartitionTol {
    pub fn new(opts: &SolverOptions, c: f64) -> Self {
        PartitionTol {
            grad: opts.grad_tol,
            mu: opts.mu_rel_tol * c,
        }
    }
}

/// Classifies one point. Points within both tolerances fall into S.
pub fn classify_point(mu: f64, grad: f64, c: f64, tol: PartitionTol) -> Membership {
    if grad > tol.grad && mu <= tol.mu {
        Membership::Free
    } else if grad < -tol.grad && mu >= c - tol.mu {
        Membership::Error
    } else {
        Membership::Support
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    pub mu: Vec<f64>,
    pub b: f64,
    /// Signed fairness multiplier; positive when the upper side binds.
    pub gamma: f64,
    pub beta_minus: f64,
    pub beta_plus: f64,
    pub epsilon: f64,
    #[serde(rename = "C")]
    pub c: f64,
    /// Primal optimal value `p(eps)`.
    pub objective: f64,
    pub partition: Partition,
    /// Lagrangian gradient `y_j f(x_j) - 1` at the solution.
    pub gradient: Vec<f64>,
    pub side: BindingSide,
    /// `sum_i mu_i y_i <x_i, u>`.
    pub fair_term: f64,
    pub iterations: usize,
    pub kkt_violation: f64,
    /// Set when no free variable pins the offset; `b` is then the midpoint.
    #[serde(with = "crate::float_serde::extended_pair_opt")]
    pub offset_interval: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimalSolution {
    pub theta: Vec<f64>,
    pub b: f64,
    pub xi: Vec<f64>,
    pub hinge_loss: f64,
    /// `|(1/n) sum_i (z_i - z_bar)(theta^T x_i + b)|`.
    pub cov_gap: f64,
    #[serde(with = "crate::float_serde::extended_pair_opt")]
    pub offset_interval: Option<(f64, f64)>,
}

impl PrimalSolution {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.theta.iter().zip(x).map(|(t, v)| t * v).sum::<f64>() + self.b
    }

    /// Predicted labels; a zero score counts as `+1`.
    pub fn predictions(&self, ds: &Dataset) -> Vec<i8> {
        (0..ds.n())
            .map(|i| {
                let x: Vec<f64> = ds.features().row(i).iter().copied().collect();
                if self.decision(&x) >= 0.0 {
                    1
                } else {
                    -1
                }
            })
            .collect()
    }

    pub fn objective(&self, c: f64) -> f64 {
        0.5 * self.theta.iter().map(|t| t * t).sum::<f64>() + c * self.hinge_loss
    }

    /// Fails when the offset was not pinned by any margin support vector.
    pub fn require_determinate(&self) -> Result<&Self> {
        match self.offset_interval {
            Some((lo, hi)) => Err(Error::OffsetIndeterminate(format!(
                "no margin support vectors; b lies in [{lo}, {hi}]"
            ))),
            None => Ok(self),
        }
    }
}

fn signed(k: &DMatrix<f64>, y: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(k.nrows(), k.ncols(), |i, j| y[i] * y[j] * k[(i, j)])
}

/// A dataset prepared for repeated solves at varying tolerance: the
/// kernel, signed Gram matrices and the unconstrained solution are built
/// once.
#[derive(Debug, Clone)]
pub struct FairSvm {
    c: f64,
    opts: SolverOptions,
    y: Vec<f64>,
    kern: ProjectedKernel,
    q_tilde: DMatrix<f64>,
    q_raw: DMatrix<f64>,
    unconstrained: DualSolution,
    sigma: f64,
    eps_max: f64,
}

impl FairSvm {
    pub fn new(ds: &Dataset, c: f64, opts: SolverOptions) -> Result<FairSvm> {
        let stats = group_stats(ds)?;
        let kern = projected_kernel(ds, &stats);
        FairSvm::with_kernel(ds, kern, c, opts)
    }

    pub fn with_kernel(
        ds: &Dataset,
        kern: ProjectedKernel,
        c: f64,
        opts: SolverOptions,
    ) -> Result<FairSvm> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "C must be positive and finite, got {c}"
            )));
        }
        if !(opts.tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tolerance must be positive, got {}",
                opts.tol
            )));
        }
        if kern.n() != ds.n() {
            return Err(Error::InvalidParameter(
                "kernel and dataset sizes differ".into(),
            ));
        }
        let (neg, pos) = ds.label_counts();
        if pos == 0 {
            return Err(Error::LabelMissing(1));
        }
        if neg == 0 {
            return Err(Error::LabelMissing(-1));
        }
        let y: Vec<f64> = (0..ds.n()).map(|i| ds.y(i)).collect();
        let q_tilde = signed(&kern.gram, &y);
        let q_raw = signed(&kern.raw_gram, &y);
        let mut svm = FairSvm {
            c,
            opts,
            y,
            kern,
            q_tilde,
            q_raw,
            unconstrained: DualSolution {
                mu: Vec::new(),
                b: 0.0,
                gamma: 0.0,
                beta_minus: 0.0,
                beta_plus: 0.0,
                epsilon: 0.0,
                c,
                objective: 0.0,
                partition: Partition::default(),
                gradient: Vec::new(),
                side: BindingSide::Inactive,
                fair_term: 0.0,
                iterations: 0,
                kkt_violation: 0.0,
                offset_interval: None,
            },
            sigma: 1.0,
            eps_max: 0.0,
        };
        let unc = svm.solve_unconstrained()?;
        let n = svm.n() as f64;
        svm.sigma = if unc.fair_term >= 0.0 { 1.0 } else { -1.0 };
        svm.eps_max = if svm.kern.is_vacuous() {
            0.0
        } else {
            unc.fair_term.abs() / n
        };
        svm.unconstrained = unc;
        Ok(svm)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn options(&self) -> &SolverOptions {
        &self.opts
    }

    pub fn kernel(&self) -> &ProjectedKernel {
        &self.kern
    }

    pub fn labels(&self) -> &[f64] {
        &self.y
    }

    /// Signed deflated Gram matrix `y_i y_j K~_ij`.
    pub fn signed_gram(&self) -> &DMatrix<f64> {
        &self.q_tilde
    }

    pub fn signed_raw_gram(&self) -> &DMatrix<f64> {
        &self.q_raw
    }

    /// `+1` when the unconstrained classifier has nonnegative covariance
    /// with group membership, `-1` otherwise.
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Tolerance at and beyond which the fairness constraint is slack.
    pub fn eps_max(&self) -> f64 {
        self.eps_max
    }

    pub fn unconstrained(&self) -> &DualSolution {
        &self.unconstrained
    }

    pub fn partition_tol(&self) -> PartitionTol {
        PartitionTol::new(&self.opts, self.c)
    }

    pub fn binding_side(&self) -> BindingSide {
        if self.kern.is_vacuous() {
            BindingSide::Vacuous
        } else if self.sigma > 0.0 {
            BindingSide::Upper
        } else {
            BindingSide::Lower
        }
    }

    /// Per-unit-eps change of the linear coefficients on the binding side:
    /// `sigma n y_j <x_j,u> / |u|^2`.
    pub fn eps_direction(&self) -> Vec<f64> {
        if self.kern.is_vacuous() {
            return vec![0.0; self.n()];
        }
        let scale = self.sigma * self.n() as f64 / self.kern.u_norm_sq;
        (0..self.n())
            .map(|j| scale * self.y[j] * self.kern.fair_lin[j])
            .collect()
    }

    /// Linear coefficients of the binding-side dual at `eps`.
    pub fn linear_term(&self, eps: f64) -> Vec<f64> {
        self.eps_direction()
            .into_iter()
            .map(|h| -1.0 + eps * h)
            .collect()
    }

    fn max_iter(&self) -> usize {
        self.opts
            .max_iter
            .unwrap_or_else(|| (2000 * self.n()).max(1_000_000))
    }

    fn fair_term_of(&self, mu: &[f64]) -> f64 {
        mu.iter()
            .enumerate()
            .map(|(i, m)| m * self.y[i] * self.kern.fair_lin[i])
            .sum()
    }

    fn solve_unconstrained(&self) -> Result<DualSolution> {
        let lin = vec![-1.0; self.n()];
        let qp = BoxQp {
            q: &self.q_raw,
            lin: &lin,
            y: &self.y,
            c: self.c,
        };
        let tol = self.partition_tol();
        let sol = qp.solve(self.opts.tol, self.max_iter(), tol.mu)?;
        let objective = -0.5 * dot(&sol.mu, &sol.grad) - 0.5 * dot(&sol.mu, &lin);
        let fair_term = self.fair_term_of(&sol.mu);
        Ok(self.assemble(sol, objective, 0.0, fair_term, BindingSide::Inactive, 0.0))
    }

    fn assemble(
        &self,
        sol: smo::QpSolution,
        objective: f64,
        eps: f64,
        fair_term: f64,
        side: BindingSide,
        gamma: f64,
    ) -> DualSolution {
        let gradient: Vec<f64> = (0..self.n())
            .map(|j| sol.grad[j] + sol.b * self.y[j])
            .collect();
        let tol = self.partition_tol();
        let members: Vec<Membership> = (0..self.n())
            .map(|j| classify_point(sol.mu[j], gradient[j], self.c, tol))
            .collect();
        let (beta_minus, beta_plus) = match side {
            BindingSide::Lower => (eps, 0.0),
            BindingSide::Upper | BindingSide::Vacuous => (0.0, eps),
            BindingSide::Inactive if fair_term < 0.0 => (eps, 0.0),
            BindingSide::Inactive => (0.0, eps),
        };
        DualSolution {
            mu: sol.mu,
            b: sol.b,
            gamma,
            beta_minus,
            beta_plus,
            epsilon: eps,
            c: self.c,
            objective,
            partition: Partition::from_memberships(&members),
            gradient,
            side,
            fair_term,
            iterations: sol.iterations,
            kkt_violation: sol.violation,
            offset_interval: sol.offset_interval,
        }
    }

    /// Solves the dual at tolerance `eps`.
    pub fn solve(&self, eps: f64) -> Result<DualSolution> {
        if !(eps >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "eps must be nonnegative, got {eps}"
            )));
        }
        if self.kern.is_vacuous() || eps >= self.eps_max {
            let mut sol = self.unconstrained.clone();
            sol.epsilon = eps;
            if self.kern.is_vacuous() {
                sol.side = BindingSide::Vacuous;
                (sol.beta_minus, sol.beta_plus) = (0.0, eps);
            } else if sol.fair_term < 0.0 {
                (sol.beta_minus, sol.beta_plus) = (eps, 0.0);
            } else {
                (sol.beta_minus, sol.beta_plus) = (0.0, eps);
            }
            return Ok(sol);
        }
        let lin = self.linear_term(eps);
        let qp = BoxQp {
            q: &self.q_tilde,
            lin: &lin,
            y: &self.y,
            c: self.c,
        };
        let tol = self.partition_tol();
        let sol = qp.solve(self.opts.tol, self.max_iter(), tol.mu)?;
        let n = self.n() as f64;
        let constant = n * n * eps * eps / (2.0 * self.kern.u_norm_sq);
        let dual_value = 0.5 * dot(&sol.mu, &sol.grad) + 0.5 * dot(&sol.mu, &lin) - constant;
        let fair_term = self.fair_term_of(&sol.mu);
        let side = self.binding_side();
        let gamma = price(side, fair_term, eps, self.n(), self.kern.u_norm_sq);
        Ok(self.assemble(sol, -dual_value, eps, fair_term, side, gamma))
    }

    /// Objective `p(eps)` at a dual point, as the negated dual value
    /// `1/2 mu^T Q mu - sum(mu) - (|a| - n eps)_+^2 / (2 |u|^2)` with the raw
    /// kernel. On the binding side with `|a| >= n eps` this coincides with
    /// the deflated form minimized by [`FairSvm::solve`].
    pub fn objective_at(&self, mu: &[f64], eps: f64) -> f64 {
        let q = &self.q_raw;
        let mut quad = 0.0;
        for i in 0..self.n() {
            if mu[i] == 0.0 {
                continue;
            }
            for j in 0..self.n() {
                quad += mu[i] * q[(i, j)] * mu[j];
            }
        }
        let total: f64 = mu.iter().sum();
        let penalty = if self.kern.is_vacuous() {
            0.0
        } else {
            let excess = (self.fair_term_of(mu).abs() - self.n() as f64 * eps).max(0.0);
            excess * excess / (2.0 * self.kern.u_norm_sq)
        };
        -(0.5 * quad - total - penalty)
    }

    /// Shadow price implied by a dual point at `eps`: the excess of the
    /// covariance term over `n eps`, signed like the term, zero when within.
    pub fn gamma_at(&self, mu: &[f64], eps: f64) -> f64 {
        if self.kern.is_vacuous() {
            return 0.0;
        }
        let a = self.fair_term_of(mu);
        let n = self.n() as f64;
        a.signum() * n * (a.abs() - n * eps).max(0.0) / self.kern.u_norm_sq
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `gamma = n (n (beta_minus - beta_plus) + a) / |u|^2` for the active side.
fn price(side: BindingSide, fair_term: f64, eps: f64, n: usize, u_norm_sq: f64) -> f64 {
    let n = n as f64;
    match side {
        BindingSide::Upper => n * (fair_term - n * eps) / u_norm_sq,
        BindingSide::Lower => n * (fair_term + n * eps) / u_norm_sq,
        BindingSide::Inactive | BindingSide::Vacuous => 0.0,
    }
}

/// Solves the dual at `eps` with default options.
pub fn solve_dual(kern: &ProjectedKernel, ds: &Dataset, c: f64, eps: f64) -> Result<DualSolution> {
    FairSvm::with_kernel(ds, kern.clone(), c, SolverOptions::default())?.solve(eps)
}

/// Recovers the separating hyperplane from a dual solution.
///
/// The offset is refit by least squares over the margin support vectors.
/// With no support vectors the dual offset (the midpoint of its feasible
/// interval) is kept and `offset_interval` is set.
pub fn recover_primal(
    sol: &DualSolution,
    ds: &Dataset,
    stats: &GroupStats,
) -> Result<PrimalSolution> {
    let n = ds.n();
    if sol.mu.len() != n {
        return Err(Error::InvalidParameter(format!(
            "solution has {} multipliers for {n} rows",
            sol.mu.len()
        )));
    }
    let x = ds.features();
    let mut theta = vec![0.0; ds.d()];
    for i in 0..n {
        let w = sol.mu[i] * ds.y(i);
        if w != 0.0 {
            for (k, t) in theta.iter_mut().enumerate() {
                *t += w * x[(i, k)];
            }
        }
    }
    for (k, t) in theta.iter_mut().enumerate() {
        *t -= sol.gamma / n as f64 * stats.u[k];
    }
    let score = |i: usize| (0..ds.d()).map(|k| theta[k] * x[(i, k)]).sum::<f64>();
    let support = &sol.partition.support;
    let (b, offset_interval) = if support.is_empty() {
        (sol.b, sol.offset_interval.or(Some((sol.b, sol.b))))
    } else {
        let sum: f64 = support.iter().map(|&j| ds.y(j) - score(j)).sum();
        (sum / support.len() as f64, None)
    };
    let xi: Vec<f64> = (0..n)
        .map(|i| (1.0 - ds.y(i) * (score(i) + b)).max(0.0))
        .collect();
    let hinge_loss = xi.iter().sum();
    let cov: f64 = (0..n)
        .map(|i| (f64::from(ds.groups()[i]) - stats.z_bar) * (score(i) + b))
        .sum::<f64>()
        / n as f64;
    Ok(PrimalSolution {
        theta,
        b,
        xi,
        hinge_loss,
        cov_gap: cov.abs(),
        offset_interval,
    })
}

/// Splits points into free (F), margin support (S) and error (E) sets from
/// the stored Lagrangian gradient.
pub fn partition(
    sol: &DualSolution,
    kern: &ProjectedKernel,
    tol: PartitionTol,
) -> Result<Partition> {
    if sol.gradient.len() != kern.n() || sol.mu.len() != kern.n() {
        return Err(Error::State(
            "gradient is not available for this solution".into(),
        ));
    }
    let members: Vec<Membership> = (0..kern.n())
        .map(|j| classify_point(sol.mu[j], sol.gradient[j], sol.c, tol))
        .collect();
    Ok(Partition::from_memberships(&members))
}

/// Magnitude-signed fairness shadow price recomputed from the multipliers.
pub fn shadow_price(sol: &DualSolution, kern: &ProjectedKernel) -> Result<f64> {
    if kern.is_vacuous() {
        return Err(Error::UndefinedPrice);
    }
    Ok(price(
        sol.side,
        sol.fair_term,
        sol.epsilon,
        kern.n(),
        kern.u_norm_sq,
    ))
}

/// Lower bound `p(0) - eps |gamma(0)|` on `p(eps)`, valid for every `eps`
/// by convexity of `p`.
pub fn global_sensitivity_bound(sol0: &DualSolution, eps: f64) -> f64 {
    sol0.objective - eps * sol0.gamma.abs()
}

#[cfg(test)]
mod tests;
