//! Enumeration of every labeling of a point cloud that a hyperplane can
//! realize, by pivoting and translating the hyperplanes through `d`-subsets.

use std::collections::BTreeMap;

use itertools::Itertools;
use microlp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative determinant tolerance of the general-position certificate.
pub const GENERAL_POSITION_TOL: f64 = 1e-10;
const PERTURB_SCALE: f64 = 1e-7;
const PERTURB_ATTEMPTS: usize = 100;
const SHRINK_BUDGET: usize = 60;

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: DMatrix<f64>,
    /// The unperturbed points, when a perturbation was applied.
    original: Option<DMatrix<f64>>,
    general_position: bool,
}

impl PointCloud {
    pub fn new(points: DMatrix<f64>) -> Result<PointCloud> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(Error::InvalidData("point cloud is empty".into()));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData(
                "point cloud has non-finite coordinates".into(),
            ));
        }
        let general_position = is_general_position(&points);
        Ok(PointCloud {
            points,
            original: None,
            general_position,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<PointCloud> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidData("rows have different lengths".into()));
        }
        PointCloud::new(DMatrix::from_fn(rows.len(), d, |i, k| rows[i][k]))
    }

    pub fn n(&self) -> usize {
        self.points.nrows()
    }

    pub fn d(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    /// The points as given, before any perturbation.
    pub fn original(&self) -> &DMatrix<f64> {
        self.original.as_ref().unwrap_or(&self.points)
    }

    pub fn was_perturbed(&self) -> bool {
        self.original.is_some()
    }

    pub fn general_position(&self) -> bool {
        self.general_position
    }
}

/// Scaled determinant of `x_k - x_0` over a `(d+1)`-subset.
fn relative_volume(points: &DMatrix<f64>, subset: &[usize]) -> f64 {
    let d = points.ncols();
    let base = points.row(subset[0]);
    let m = DMatrix::from_fn(d, d, |r, k| points[(subset[r + 1], k)] - base[k]);
    let norms: f64 = m.row_iter().map(|r| r.norm()).product();
    if norms == 0.0 {
        return 0.0;
    }
    (m.determinant() / norms).abs()
}

/// True when every `(d+1)`-subset is affinely independent.
pub fn is_general_position(points: &DMatrix<f64>) -> bool {
    let (n, d) = points.shape();
    if n <= d {
        // Fewer than d+1 points: only the subsets themselves can fail.
        let base = points.row(0);
        let m = DMatrix::from_fn(n.saturating_sub(1), d, |r, k| points[(r + 1, k)] - base[k]);
        return n <= 1 || m.rank(GENERAL_POSITION_TOL * (1.0 + m.norm())) == n - 1;
    }
    (0..n)
        .combinations(d + 1)
        .all(|s| relative_volume(points, &s) > GENERAL_POSITION_TOL)
}

/// Seeded jitter of relative size 1e-7, redrawn until the certificate
/// holds. A cloud already in general position is returned untouched.
pub fn perturb_degenerate(pc: &PointCloud, seed: u64) -> Result<PointCloud> {
    if pc.general_position {
        return Ok(pc.clone());
    }
    jitter(pc, seed)
}

fn jitter(pc: &PointCloud, seed: u64) -> Result<PointCloud> {
    let original = pc.original().clone();
    let scale = original.amax().max(1.0) * PERTURB_SCALE;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for attempt in 0..PERTURB_ATTEMPTS {
        let jittered = original.map(|v| v + scale * rng.random_range(-1.0..1.0));
        if is_general_position(&jittered) {
            log::debug!(
                "point cloud perturbed into general position after {} draws",
                attempt + 1
            );
            return Ok(PointCloud {
                points: jittered,
                original: Some(original),
                general_position: true,
            });
        }
    }
    Err(Error::Degeneracy(format!(
        "no general-position perturbation found in {PERTURB_ATTEMPTS} attempts"
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelingWitness {
    pub signs: Vec<i8>,
    /// Unit normal.
    pub theta: Vec<f64>,
    pub b: f64,
    /// Smallest signed distance of a point to the hyperplane.
    pub margin: f64,
}

impl LabelingWitness {
    /// Builds the witness for `theta, b`, normalizing to a unit normal.
    fn from_plane(
        points: &DMatrix<f64>,
        theta: &DVector<f64>,
        b: f64,
        signs: Vec<i8>,
    ) -> LabelingWitness {
        let norm = theta.norm();
        let (theta, b) = (theta / norm, b / norm);
        let margin = (0..points.nrows())
            .map(|i| f64::from(signs[i]) * (points.row(i).transpose().dot(&theta) + b))
            .fold(f64::INFINITY, f64::min);
        LabelingWitness {
            signs,
            theta: theta.iter().copied().collect(),
            b,
            margin,
        }
    }

    pub fn negated(&self) -> LabelingWitness {
        LabelingWitness {
            signs: self.signs.iter().map(|s| -s).collect(),
            theta: self.theta.iter().map(|t| -t).collect(),
            b: -self.b,
            margin: self.margin,
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.theta.iter().zip(x).map(|(t, v)| t * v).sum::<f64>() + self.b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperplane {
    pub theta: DVector<f64>,
    pub b: f64,
}

impl Hyperplane {
    pub fn value(&self, points: &DMatrix<f64>, i: usize) -> f64 {
        points.row(i).transpose().dot(&self.theta) + self.b
    }
}

/// The hyperplane through the `d` points of `subset`, with a unit normal, or
/// `None` when they are affinely dependent.
pub fn hyperplane_through(points: &DMatrix<f64>, subset: &[usize]) -> Option<Hyperplane> {
    let d = points.ncols();
    if d == 1 {
        return Some(Hyperplane {
            theta: DVector::from_element(1, 1.0),
            b: -points[(subset[0], 0)],
        });
    }
    // Null vector of the rows [x_k, 1], padded to a square matrix so the
    // decomposition returns the full right basis.
    let m = DMatrix::from_fn(d + 1, d + 1, |r, k| match (r < d, k < d) {
        (true, true) => points[(subset[r], k)],
        (true, false) => 1.0,
        _ => 0.0,
    });
    let svd = m.svd(false, true);
    let v_t = svd.v_t?;
    let (smallest, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    let largest = svd.singular_values.max();
    let second = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != smallest)
        .map(|(_, v)| *v)
        .fold(f64::INFINITY, f64::min);
    if second <= GENERAL_POSITION_TOL * largest {
        return None;
    }
    let null = v_t.row(smallest).transpose();
    let theta = null.rows(0, d).into_owned();
    let norm = theta.norm();
    if norm <= GENERAL_POSITION_TOL * null.norm() {
        return None;
    }
    Some(Hyperplane {
        theta: theta / norm,
        b: null[d] / norm,
    })
}

/// Rotates `plane` about the flat through `pivot` so that `free` moves to
/// `side`, then shifts it so that the pivot points land on the other side.
/// Every other point keeps the side it had on `plane`.
pub fn pivot_translate(
    points: &DMatrix<f64>,
    plane: &Hyperplane,
    pivot: &[usize],
    free: usize,
    side: i8,
) -> Result<LabelingWitness> {
    let n = points.nrows();
    let on_plane = |i: usize| i == free || pivot.contains(&i);
    let values: Vec<f64> = (0..n).map(|i| plane.value(points, i)).collect();
    let gap = (0..n)
        .filter(|&i| !on_plane(i))
        .map(|i| values[i].abs())
        .fold(f64::INFINITY, f64::min);
    if gap == 0.0 {
        return Err(Error::NumericalDegeneracy(
            "a point lies on a subset hyperplane".into(),
        ));
    }
    let side_f = f64::from(side);
    // Direction of rotation: the part of v - p0 orthogonal to the pivot flat.
    let x = |i: usize| points.row(i).transpose();
    let tilt = match pivot.first() {
        None => None,
        Some(&p0) => {
            let mut eta = x(free) - x(p0);
            let mut basis: Vec<DVector<f64>> = Vec::new();
            for &p in &pivot[1..] {
                let mut e = x(p) - x(p0);
                for q in &basis {
                    e -= q * q.dot(&e);
                }
                let norm = e.norm();
                if norm == 0.0 {
                    return Err(Error::NumericalDegeneracy("pivot points coincide".into()));
                }
                basis.push(e / norm);
            }
            for q in &basis {
                eta -= q * q.dot(&eta);
            }
            let norm = eta.norm();
            if norm == 0.0 {
                return Err(Error::NumericalDegeneracy(
                    "free vertex lies on the pivot flat".into(),
                ));
            }
            Some((eta / norm, x(p0)))
        }
    };
    let sign_of = |v: f64| if v > 0.0 { 1i8 } else { -1 };
    let target: Vec<i8> = (0..n)
        .map(|i| match i {
            _ if i == free => side,
            _ if pivot.contains(&i) => -side,
            _ => sign_of(values[i]),
        })
        .collect();
    let mut rho = 0.5 * if gap.is_finite() { gap } else { 1.0 };
    for _ in 0..SHRINK_BUDGET {
        let (theta, b) = match &tilt {
            // Rotation about the flat: add rho * side * eta . (x - p0).
            Some((eta, p0)) => {
                let theta = &plane.theta + eta * (rho * side_f);
                let b = plane.b - rho * side_f * eta.dot(p0);
                let at_free = x(free).dot(&theta) + b;
                (theta, b - 0.5 * at_free)
            }
            None => (plane.theta.clone(), plane.b + side_f * rho),
        };
        let realized = (0..n).all(|i| {
            let v = x(i).dot(&theta) + b;
            v != 0.0 && sign_of(v) == target[i]
        });
        if realized {
            return Ok(LabelingWitness::from_plane(points, &theta, b, target));
        }
        rho *= 0.5;
    }
    Err(Error::NumericalDegeneracy(format!(
        "no pivot angle found for free vertex {free} within {SHRINK_BUDGET} halvings"
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Enumeration {
    /// One witness per labeling, sorted by sign vector.
    pub labelings: Vec<LabelingWitness>,
    /// Pivot-and-translate operations performed.
    pub work: usize,
    /// Affinely dependent subsets that were skipped.
    pub skipped_subsets: usize,
}

impl Enumeration {
    pub fn count(&self) -> usize {
        self.labelings.len()
    }
}

/// Number of labelings of `n` points in general position in `R^d` that a
/// hyperplane can realize: `2 * sum_{k=0}^{d} C(n-1, k)`.
pub fn cover_count(n: usize, d: usize) -> u128 {
    if n == 0 {
        return 1;
    }
    let mut binom: u128 = 1;
    let mut total: u128 = 0;
    for k in 0..=d.min(n - 1) {
        if k > 0 {
            binom = binom * (n - k) as u128 / k as u128;
        }
        total += binom;
    }
    2 * total
}

fn trivial_labelings(points: &DMatrix<f64>) -> [LabelingWitness; 2] {
    let d = points.ncols();
    let mut theta = DVector::zeros(d);
    theta[0] = 1.0;
    let lowest = points.column(0).min();
    let all_positive =
        LabelingWitness::from_plane(points, &theta, 1.0 - lowest, vec![1; points.nrows()]);
    let all_negative = all_positive.negated();
    [all_positive, all_negative]
}

/// Every labeling realizable by a hyperplane, with a witness for each.
///
/// The cloud must be in general position (see [`perturb_degenerate`]).
/// Subsets are processed in parallel on the current rayon pool; the result
/// does not depend on the number of threads.
pub fn enumerate_labelings(pc: &PointCloud) -> Result<Enumeration> {
    let (n, d) = (pc.n(), pc.d());
    if n <= d {
        return Err(Error::InvalidParameter(format!(
            "need more points than dimensions, got n = {n}, d = {d}"
        )));
    }
    let points = &pc.points;
    let subsets: Vec<Vec<usize>> = (0..n).combinations(d).collect();
    let per_subset: Vec<Result<Option<Vec<LabelingWitness>>>> = subsets
        .par_iter()
        .map(|subset| {
            let Some(plane) = hyperplane_through(points, subset) else {
                log::debug!("skipping affinely dependent subset {subset:?}");
                return Ok(None);
            };
            let mut found = Vec::with_capacity(4 * d);
            for (k, &free) in subset.iter().enumerate() {
                let pivot: Vec<usize> = subset
                    .iter()
                    .enumerate()
                    .filter(|&(m, _)| m != k)
                    .map(|(_, &p)| p)
                    .collect();
                for side in [1i8, -1] {
                    let w = pivot_translate(points, &plane, &pivot, free, side)?;
                    found.push(w.negated());
                    found.push(w);
                }
            }
            Ok(Some(found))
        })
        .collect();

    let mut unique: BTreeMap<Vec<i8>, LabelingWitness> = BTreeMap::new();
    let mut work = 0;
    let mut skipped_subsets = 0;
    for w in trivial_labelings(points) {
        unique.entry(w.signs.clone()).or_insert(w);
    }
    for result in per_subset {
        match result? {
            None => skipped_subsets += 1,
            Some(found) => {
                work += found.len() / 2;
                for w in found {
                    unique.entry(w.signs.clone()).or_insert(w);
                }
            }
        }
    }
    if skipped_subsets > 0 {
        log::warn!("{skipped_subsets} affinely dependent subsets skipped");
    }
    Ok(Enumeration {
        labelings: unique.into_values().collect(),
        work,
        skipped_subsets,
    })
}

/// Perturbs into general position if needed and enumerates, re-drawing the
/// perturbation when a pivot cannot be resolved numerically.
pub fn enumerate_with_perturbation(
    pc: &PointCloud,
    seed: u64,
) -> Result<(PointCloud, Enumeration)> {
    let mut cloud = perturb_degenerate(pc, seed)?;
    for attempt in 1..=PERTURB_ATTEMPTS as u64 {
        match enumerate_labelings(&cloud) {
            Ok(e) => return Ok((cloud, e)),
            Err(err @ Error::NumericalDegeneracy(_)) => {
                log::warn!("enumeration failed ({err}); re-perturbing");
                cloud = jitter(pc, seed.wrapping_add(attempt))?;
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::Degeneracy("perturbation budget exhausted".into()))
}

/// Decides strict separability of `signs` by linear feasibility of
/// `s_i (theta . x_i + b) >= 1`; returns a witness when feasible.
pub fn separability_oracle(points: &DMatrix<f64>, signs: &[i8]) -> Option<LabelingWitness> {
    let (n, d) = points.shape();
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let free = (f64::NEG_INFINITY, f64::INFINITY);
    let theta: Vec<_> = (0..d).map(|_| lp.add_var(0.0, free)).collect();
    let b = lp.add_var(0.0, free);
    for i in 0..n {
        let s = f64::from(signs[i]);
        let mut terms: Vec<_> = (0..d).map(|k| (theta[k], s * points[(i, k)])).collect();
        terms.push((b, s));
        lp.add_constraint(terms.as_slice(), ComparisonOp::Ge, 1.0);
    }
    let solution = lp.solve().ok()?.into_solution().ok()?;
    let t = DVector::from_iterator(d, theta.iter().map(|&v| solution.var_value(v)));
    if t.norm() == 0.0 {
        // Only a constant labeling is met by b alone.
        return trivial_labelings(points)
            .into_iter()
            .find(|w| w.signs == signs);
    }
    let w = LabelingWitness::from_plane(points, &t, solution.var_value(b), signs.to_vec());
    (w.margin > 0.0).then_some(w)
}
