//! Group welfare, Pareto comparisons and implied welfare weights.
//!
//! A point is positively allocated when it receives the label `+1`. The
//! welfare of group `z` is the fraction of its members positively allocated.
//! Two definitions are provided: a dual-variable heuristic that reads the
//! allocation off `mu` alone, and the exact sign of the decision function.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::solver::PrimalSolution;

/// Learner loss (lower preferred) and the two group welfares (higher
/// preferred).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelfareTriple {
    pub p: f64,
    #[serde(rename = "W0")]
    pub w0: f64,
    #[serde(rename = "W1")]
    pub w1: f64,
}

impl WelfareTriple {
    pub fn new(p: f64, (w0, w1): (f64, f64)) -> Self {
        WelfareTriple { p, w0, w1 }
    }
}

fn group_sizes(groups: &[u8]) -> Result<(f64, f64)> {
    let n1 = groups.iter().filter(|&&z| z == 1).count();
    let n0 = groups.len() - n1;
    if n0 == 0 {
        return Err(Error::GroupMissing(0));
    }
    if n1 == 0 {
        return Err(Error::GroupMissing(1));
    }
    Ok((n0 as f64, n1 as f64))
}

/// Welfare from a per-point allocation indicator.
pub fn welfare_from_allocation(positive: &[bool], groups: &[u8]) -> Result<(f64, f64)> {
    let (n0, n1) = group_sizes(groups)?;
    let (mut c0, mut c1) = (0usize, 0usize);
    for (&h, &z) in positive.iter().zip(groups) {
        if h {
            if z == 1 {
                c1 += 1;
            } else {
                c0 += 1;
            }
        }
    }
    Ok((c0 as f64 / n0, c1 as f64 / n1))
}

/// Allocation read off the dual variables: a point counts as positive when
/// `mu < C` and `y = +1`, or when `mu = C` and `y = -1`. The negative class
/// is encoded `-1` here where a `{0,1}` label reading would write `0`.
pub fn heuristic_allocation(mu: &[f64], labels: &[i8], c: f64) -> Vec<bool> {
    mu.iter()
        .zip(labels)
        .map(|(&m, &y)| (m < c && y == 1) || (m >= c && y == -1))
        .collect()
}

pub fn group_welfare_heuristic(
    mu: &[f64],
    labels: &[i8],
    groups: &[u8],
    c: f64,
) -> Result<(f64, f64)> {
    if mu.len() != labels.len() || mu.len() != groups.len() {
        return Err(Error::InvalidParameter(
            "mu, labels and groups differ in length".into(),
        ));
    }
    welfare_from_allocation(&heuristic_allocation(mu, labels, c), groups)
}

/// Allocation from decision values; a score of exactly zero counts as `+1`.
pub fn sign_allocation(scores: &[f64]) -> Vec<bool> {
    let ties = scores.iter().filter(|&&s| s == 0.0).count();
    if ties > 0 {
        log::info!("{ties} points lie exactly on the hyperplane; counted as positive");
    }
    scores.iter().map(|&s| s >= 0.0).collect()
}

pub fn group_welfare_exact(primal: &PrimalSolution, ds: &Dataset) -> Result<(f64, f64)> {
    let scores = decision_values(primal, ds);
    welfare_from_allocation(&sign_allocation(&scores), ds.groups())
}

fn decision_values(primal: &PrimalSolution, ds: &Dataset) -> Vec<f64> {
    (0..ds.n())
        .map(|i| {
            let x: Vec<f64> = ds.features().row(i).iter().copied().collect();
            primal.decision(&x)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disagreement {
    pub indices: Vec<usize>,
    pub rate: f64,
}

/// Points on which the heuristic and the exact allocation differ.
pub fn welfare_disagreement(
    mu: &[f64],
    c: f64,
    primal: &PrimalSolution,
    ds: &Dataset,
) -> Disagreement {
    let heuristic = heuristic_allocation(mu, ds.labels(), c);
    let exact = sign_allocation(&decision_values(primal, ds));
    let indices: Vec<usize> = (0..ds.n()).filter(|&i| heuristic[i] != exact[i]).collect();
    let rate = indices.len() as f64 / ds.n() as f64;
    Disagreement { indices, rate }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParetoOrdering {
    ADominates,
    BDominates,
    Equal,
    Incomparable,
}

fn weakly_better(a: &WelfareTriple, b: &WelfareTriple) -> bool {
    a.p <= b.p && a.w0 >= b.w0 && a.w1 >= b.w1
}

pub fn pareto_compare(a: &WelfareTriple, b: &WelfareTriple) -> ParetoOrdering {
    match (weakly_better(a, b), weakly_better(b, a)) {
        (true, true) => ParetoOrdering::Equal,
        (true, false) => ParetoOrdering::ADominates,
        (false, true) => ParetoOrdering::BDominates,
        (false, false) => ParetoOrdering::Incomparable,
    }
}

/// Pareto movement across a breakpoint, from the point of view of the
/// smaller-eps (more constrained) side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParetoTag {
    /// The more constrained side is better for everyone.
    Dominates,
    /// The more constrained side is worse for everyone: tightening the
    /// constraint here hurts both groups and the learner.
    Dominated,
    Neutral,
    Mixed,
}

impl ParetoTag {
    pub fn as_str(self) -> &'static str {
        match self {
            ParetoTag::Dominates => "dominates",
            ParetoTag::Dominated => "dominated",
            ParetoTag::Neutral => "neutral",
            ParetoTag::Mixed => "mixed",
        }
    }
}

pub fn pareto_tag(before: &WelfareTriple, after: &WelfareTriple) -> ParetoTag {
    match pareto_compare(before, after) {
        ParetoOrdering::ADominates => ParetoTag::Dominates,
        ParetoOrdering::BDominates => ParetoTag::Dominated,
        ParetoOrdering::Equal => ParetoTag::Neutral,
        ParetoOrdering::Incomparable => ParetoTag::Mixed,
    }
}

/// Per-person welfare weights supporting an allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightProfile {
    pub w: Vec<f64>,
    pub m: Vec<f64>,
    pub k: f64,
    pub budget: f64,
}

/// Weights `w_i = k / m_i` with `k` chosen so that the weights sum to one.
pub fn implied_weights(m: &[f64], budget: f64) -> Result<WeightProfile> {
    if m.is_empty() {
        return Err(Error::InvalidParameter("no marginals given".into()));
    }
    if let Some((index, &value)) = m
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v > 0.0) || !v.is_finite())
    {
        return Err(Error::MonotonicityViolation { index, value });
    }
    let k = 1.0 / m.iter().map(|v| 1.0 / v).sum::<f64>();
    let w = m.iter().map(|v| k / v).collect();
    Ok(WeightProfile {
        w,
        m: m.to_vec(),
        k,
        budget,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    Rawlsian,
    Benthamite,
}

/// Benthamite weights are uniform; Rawlsian weights sit on the worst-off
/// individual and are split equally among tied minimizers.
pub fn reference_weights(kind: ReferenceKind, utilities: &[f64]) -> Vec<f64> {
    let n = utilities.len();
    if n == 0 {
        return Vec::new();
    }
    match kind {
        ReferenceKind::Benthamite => vec![1.0 / n as f64; n],
        ReferenceKind::Rawlsian => {
            let min = utilities.iter().copied().fold(f64::INFINITY, f64::min);
            let ties = utilities.iter().filter(|&&u| u == min).count();
            if ties > 1 {
                log::info!("{ties} individuals share the minimum utility; weight split equally");
            }
            utilities
                .iter()
                .map(|&u| if u == min { 1.0 / ties as f64 } else { 0.0 })
                .collect()
        }
    }
}

/// `u_i(h) = a_i h - beta h^2 / 2`, concave and increasing for
/// `h < a_i / beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticUtility {
    pub a: Vec<f64>,
    pub beta: f64,
}

impl QuadraticUtility {
    pub fn new(a: Vec<f64>, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "beta must be positive, got {beta}"
            )));
        }
        Ok(QuadraticUtility { a, beta })
    }

    /// `a_i = 1 + |x_i|`.
    pub fn from_dataset(ds: &Dataset, beta: f64) -> Result<Self> {
        let a = (0..ds.n())
            .map(|i| 1.0 + ds.features().row(i).norm())
            .collect();
        QuadraticUtility::new(a, beta)
    }

    pub fn utility(&self, i: usize, h: f64) -> f64 {
        self.a[i] * h - 0.5 * self.beta * h * h
    }

    pub fn marginal(&self, i: usize, h: f64) -> f64 {
        self.a[i] - self.beta * h
    }

    /// `u(1) - u(0)`.
    pub fn binary_gain(&self, i: usize) -> f64 {
        self.a[i] - 0.5 * self.beta
    }

    /// Maximizes `sum_i w_i u_i(h_i)` subject to `sum_i h_i = B`. Interior
    /// stationarity gives `w_i (a_i - beta h_i) = lambda` with
    /// `lambda = (sum a - beta B) / sum(1/w)`.
    pub fn continuous_allocation(&self, w: &[f64], budget: f64) -> Result<Vec<f64>> {
        if w.len() != self.a.len() {
            return Err(Error::InvalidParameter(
                "weights and utilities differ in length".into(),
            ));
        }
        if let Some(i) = w.iter().position(|&v| !(v > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "weight {} at index {i} is not positive",
                w[i]
            )));
        }
        let inv: f64 = w.iter().map(|v| 1.0 / v).sum();
        let lambda = (self.a.iter().sum::<f64>() - self.beta * budget) / inv;
        if !(lambda > 0.0) {
            return Err(Error::MonotonicityViolation {
                index: 0,
                value: lambda,
            });
        }
        Ok((0..w.len())
            .map(|i| (self.a[i] - lambda / w[i]) / self.beta)
            .collect())
    }

    pub fn marginals(&self, h: &[f64]) -> Vec<f64> {
        h.iter()
            .enumerate()
            .map(|(i, &v)| self.marginal(i, v))
            .collect()
    }
}

/// Allocates continuously under weights `w`, recovers the implied weights
/// from the resulting marginals and returns the largest coordinate gap.
pub fn weights_roundtrip_check(w: &[f64], utility: &QuadraticUtility, budget: f64) -> Result<f64> {
    let h = utility.continuous_allocation(w, budget)?;
    let recovered = implied_weights(&utility.marginals(&h), budget)?;
    Ok(w.iter()
        .zip(&recovered.w)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// Weights supporting a binary allocation, from the gains `u(1) - u(0)`.
pub fn binary_implied_weights(utility: &QuadraticUtility, budget: usize) -> Result<WeightProfile> {
    let gains: Vec<f64> = (0..utility.a.len())
        .map(|i| utility.binary_gain(i))
        .collect();
    implied_weights(&gains, budget as f64)
}

/// Weighted welfare of a binary allocation relative to allocating nothing.
pub fn binary_welfare(w: &[f64], utility: &QuadraticUtility, allocation: &[bool]) -> f64 {
    allocation
        .iter()
        .enumerate()
        .filter(|(_, &h)| h)
        .map(|(i, _)| w[i] * utility.binary_gain(i))
        .sum()
}

/// Best binary allocation of `budget` units under weights `w`: the points
/// with the largest weighted gains, lowest index first on ties.
pub fn binary_allocation(w: &[f64], utility: &QuadraticUtility, budget: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&i, &j| {
        let (gi, gj) = (w[i] * utility.binary_gain(i), w[j] * utility.binary_gain(j));
        gj.partial_cmp(&gi)
            .unwrap_or(Ordering::Equal)
            .then(i.cmp(&j))
    });
    let mut out = vec![false; w.len()];
    for &i in order.iter().take(budget) {
        out[i] = true;
    }
    out
}
