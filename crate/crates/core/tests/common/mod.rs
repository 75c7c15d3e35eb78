//! Shared fixtures and an independent reference solver.
//!
//! The reference minimizes the dual with the fairness multiplier eliminated
//! in closed form,
//!
//!   D(mu) = 1/2 mu' K mu - sum(mu) + H_t(a(mu)) / |u|^2,
//!
//! where K is the signed Gram matrix with the direction u projected out,
//! a = sum mu_i y_i <x_i, u>, t = n eps and H_t is the Huber function. It is
//! built from the raw features only and shares no code with the crate's
//! solver: accelerated projected gradient with restarts, then an equality
//! constrained polish on the free set.

#![allow(dead_code)]

use std::path::PathBuf;
use std::time::{Duration, Instant};

use fairpath::synth::{two_gaussians, GaussianSpec};
use fairpath::{load_dataset, standardize, Dataset, Schema};
use nalgebra::{DMatrix, DVector};

pub fn synthetic(seed: u64, n: usize, d: usize) -> Dataset {
    let spec = GaussianSpec {
        n,
        d,
        ..Default::default()
    };
    standardize(&two_gaussians(&spec, seed).unwrap()).unwrap()
}

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

pub fn adult() -> Dataset {
    let schema = Schema::from_file(&data_dir().join("adult.schema")).unwrap();
    let raw = load_dataset(
        std::fs::File::open(data_dir().join("adult_500.csv")).unwrap(),
        &schema,
    )
    .unwrap();
    standardize(&raw).unwrap()
}

pub fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed())
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct Reference {
    pub mu: Vec<f64>,
    /// Primal optimal value, `-min D`.
    pub objective: f64,
    /// `sign(a) n (|a| - n eps)_+ / |u|^2`.
    pub gamma: f64,
    pub residual: f64,
    pub iterations: usize,
}

struct DualProblem {
    n: usize,
    c: f64,
    y: Vec<f64>,
    /// Projected signed Gram matrix.
    k: DMatrix<f64>,
    /// Unprojected signed Gram matrix.
    full: DMatrix<f64>,
    yq: DVector<f64>,
    u2: f64,
    t: f64,
}

impl DualProblem {
    fn new(ds: &Dataset, c: f64, eps: f64) -> DualProblem {
        let (n, d) = (ds.n(), ds.d());
        let x = ds.features();
        let y: Vec<f64> = ds.labels().iter().map(|&v| f64::from(v)).collect();
        let zbar = ds.groups().iter().map(|&z| f64::from(z)).sum::<f64>() / n as f64;
        let mut u = DVector::zeros(d);
        for i in 0..n {
            u += x.row(i).transpose() * (f64::from(ds.groups()[i]) - zbar);
        }
        let u2 = u.norm_squared();
        let q: Vec<f64> = (0..n).map(|i| x.row(i).transpose().dot(&u)).collect();
        let full = DMatrix::from_fn(n, n, |i, j| y[i] * y[j] * x.row(i).dot(&x.row(j)));
        let vacuous = u2 <= 1e-24;
        let k = DMatrix::from_fn(n, n, |i, j| {
            if vacuous {
                full[(i, j)]
            } else {
                full[(i, j)] - y[i] * y[j] * q[i] * q[j] / u2
            }
        });
        let yq = DVector::from_fn(n, |i, _| if vacuous { 0.0 } else { y[i] * q[i] });
        DualProblem {
            n,
            c,
            y,
            k,
            full,
            yq,
            u2: if vacuous { 1.0 } else { u2 },
            t: n as f64 * eps,
        }
    }

    fn huber(&self, a: f64) -> f64 {
        if a.abs() <= self.t {
            0.5 * a * a
        } else {
            self.t * a.abs() - 0.5 * self.t * self.t
        }
    }

    fn value(&self, mu: &DVector<f64>) -> f64 {
        let a = self.yq.dot(mu);
        0.5 * mu.dot(&(&self.k * mu)) - mu.sum() + self.huber(a) / self.u2
    }

    fn gradient(&self, mu: &DVector<f64>) -> DVector<f64> {
        let a = self.yq.dot(mu);
        let h = a.clamp(-self.t, self.t);
        &self.k * mu - DVector::from_element(self.n, 1.0) + &self.yq * (h / self.u2)
    }

    /// Euclidean projection onto the box intersected with `y' mu = 0`.
    fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        let c = self.c;
        let at = |lambda: f64| {
            DVector::from_fn(self.n, |i, _| (v[i] - lambda * self.y[i]).clamp(0.0, c))
        };
        let balance = |m: &DVector<f64>| m.iter().zip(&self.y).map(|(a, b)| a * b).sum::<f64>();
        let span = v.amax() + c + 1.0;
        let (mut lo, mut hi) = (-span, span);
        for _ in 0..120 {
            let mid = 0.5 * (lo + hi);
            if balance(&at(mid)) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        at(0.5 * (lo + hi))
    }

    /// Largest violation over violating pairs plus the equality residual.
    fn residual(&self, mu: &DVector<f64>) -> f64 {
        let g = self.gradient(mu);
        let tol = 1e-12 * self.c;
        let (mut up, mut low) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in 0..self.n {
            let (at_zero, at_cap) = (mu[i] <= tol, mu[i] >= self.c - tol);
            let v = -self.y[i] * g[i];
            let in_up = if self.y[i] > 0.0 { !at_cap } else { !at_zero };
            let in_low = if self.y[i] > 0.0 { !at_zero } else { !at_cap };
            if in_up {
                up = up.max(v);
            }
            if in_low {
                low = low.min(v);
            }
        }
        let eq: f64 = mu.iter().zip(&self.y).map(|(a, b)| a * b).sum();
        (up - low).max(0.0).max(eq.abs())
    }

    fn lipschitz(&self) -> f64 {
        let mut v = DVector::from_element(self.n, 1.0);
        let mut lambda = 0.0;
        for _ in 0..200 {
            let w = &self.full * &v;
            let norm = w.norm();
            if norm == 0.0 {
                return 1.0;
            }
            lambda = norm / v.norm();
            v = w / norm;
        }
        1.05 * lambda + 1e-12
    }

    /// Fixes the bound variables and solves the stationarity conditions on
    /// the rest exactly; returns `None` when the result leaves the box.
    fn polish(&self, mu: &DVector<f64>) -> Option<DVector<f64>> {
        let tol = 1e-9 * self.c;
        let mut out = mu.map(|m| {
            if m <= tol {
                0.0
            } else if m >= self.c - tol {
                self.c
            } else {
                m
            }
        });
        let free: Vec<usize> = (0..self.n)
            .filter(|&i| out[i] > 0.0 && out[i] < self.c)
            .collect();
        if free.is_empty() {
            return Some(out);
        }
        let a = self.yq.dot(&out);
        let (h, lin): (&DMatrix<f64>, DVector<f64>) = if a.abs() > self.t {
            let s = a.signum() * self.t / self.u2;
            (
                &self.k,
                DVector::from_fn(self.n, |i, _| -1.0 + s * self.yq[i]),
            )
        } else {
            (&self.full, DVector::from_element(self.n, -1.0))
        };
        let m = free.len();
        let mut sys = DMatrix::zeros(m + 1, m + 1);
        let mut rhs = DVector::zeros(m + 1);
        for (r, &i) in free.iter().enumerate() {
            for (s, &j) in free.iter().enumerate() {
                sys[(r, s)] = h[(i, j)];
            }
            sys[(r, m)] = self.y[i];
            sys[(m, r)] = self.y[i];
            let fixed: f64 = (0..self.n)
                .filter(|j| !free.contains(j))
                .map(|j| h[(i, j)] * out[j])
                .sum();
            rhs[r] = -lin[i] - fixed;
        }
        rhs[m] = -(0..self.n)
            .filter(|j| !free.contains(j))
            .map(|j| self.y[j] * out[j])
            .sum::<f64>();
        let sol = sys.svd(true, true).solve(&rhs, 1e-13).ok()?;
        for (r, &i) in free.iter().enumerate() {
            let v = sol[r];
            if v < -1e-12 * self.c || v > self.c * (1.0 + 1e-12) {
                return None;
            }
            out[i] = v.clamp(0.0, self.c);
        }
        Some(out)
    }
}

/// Minimizes the dual at `eps` to a KKT residual of about 1e-13 where the
/// problem allows it.
pub fn reference_solve(ds: &Dataset, c: f64, eps: f64) -> Reference {
    let p = DualProblem::new(ds, c, eps);
    let step = 1.0 / p.lipschitz();
    let mut x = DVector::zeros(p.n);
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut iterations = 0;
    let mut best = (p.residual(&x), x.clone());
    let max_iter = 400_000;
    while iterations < max_iter {
        iterations += 1;
        let g = p.gradient(&y);
        let next = p.project(&(&y - &g * step));
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        if g.dot(&(&next - &x)) > 0.0 {
            // Momentum points uphill: restart.
            t = 1.0;
            y = next.clone();
        } else {
            y = &next + (&next - &x) * ((t - 1.0) / t_next);
            t = t_next;
        }
        x = next;
        if iterations % 500 == 0 {
            let r = p.residual(&x);
            if r < best.0 {
                best = (r, x.clone());
            }
            if r < 1e-6 {
                if let Some(polished) = p.polish(&x) {
                    let rp = p.residual(&polished);
                    if rp < best.0 {
                        best = (rp, polished);
                    }
                }
            }
            if best.0 < 1e-12 {
                break;
            }
        }
    }
    let (residual, mu) = best;
    let a = p.yq.dot(&mu);
    let gamma = a.signum() * ds.n() as f64 * (a.abs() - p.t).max(0.0) / p.u2;
    Reference {
        objective: -p.value(&mu),
        gamma: if p.yq.amax() == 0.0 { 0.0 } else { gamma },
        mu: mu.iter().copied().collect(),
        residual,
        iterations,
    }
}

/// The reference dual value at a given `mu`, as a primal objective.
pub fn reference_objective(ds: &Dataset, c: f64, eps: f64, mu: &[f64]) -> f64 {
    let p = DualProblem::new(ds, c, eps);
    -p.value(&DVector::from_column_slice(mu))
}

/// Outcome of comparing a traced path against fresh solves on a grid.
#[derive(Debug, Default)]
pub struct GridReport {
    pub grid_points: usize,
    /// Grid cells across which the fresh partition changes.
    pub transitions: usize,
    pub unmatched_transitions: Vec<f64>,
    pub breakpoints: usize,
    pub unmatched_breakpoints: Vec<f64>,
    /// Breakpoints whose cell shows no net change (an event and its
    /// reversal between two grid points).
    pub cancelled: usize,
    /// The fair classifier vanishes at `eps = 0`, every point of one class
    /// sits on the margin and the grid point there is left out.
    pub degenerate_start: bool,
}

impl GridReport {
    pub fn ok(&self) -> bool {
        self.unmatched_transitions.is_empty() && self.unmatched_breakpoints.is_empty()
    }
}

/// Solves afresh every `step` over `[0, eps_max]` and checks that partition
/// changes and path breakpoints line up to within `tol`.
pub fn grid_compare(
    ds: &Dataset,
    svm: &fairpath::FairSvm,
    path: &fairpath::SolutionPath,
    step: f64,
    tol: f64,
) -> GridReport {
    let eps_max = svm.eps_max();
    let cells = (eps_max / step).ceil() as usize;
    let at_zero = svm.solve(0.0).unwrap();
    let theta = fairpath::recover_primal(&at_zero, ds, &fairpath::group_stats(ds).unwrap())
        .unwrap()
        .theta;
    let degenerate_start = theta.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-9;
    let first = usize::from(degenerate_start);
    let grid: Vec<f64> = (first..=cells)
        .map(|k| (k as f64 * step).min(eps_max))
        .collect();
    let partitions: Vec<_> = grid
        .iter()
        .map(|&e| svm.solve(e).unwrap().partition)
        .collect();
    let changes: Vec<(f64, f64)> = grid
        .windows(2)
        .zip(partitions.windows(2))
        .filter(|(_, p)| p[0] != p[1])
        .map(|(g, _)| (g[0], g[1]))
        .collect();
    let interior: Vec<f64> = path.interior_breakpoints().map(|b| b.eps).collect();
    let mut report = GridReport {
        grid_points: grid.len(),
        transitions: changes.len(),
        breakpoints: interior.len(),
        degenerate_start,
        ..Default::default()
    };
    // The terminal breakpoint counts as an event: the partition at eps_max
    // itself can differ from the one just below.
    let all: Vec<f64> = path.breakpoints.iter().map(|b| b.eps).collect();
    for &(lo, hi) in &changes {
        if !all.iter().any(|&e| e >= lo - tol && e <= hi + tol) {
            report.unmatched_transitions.push(0.5 * (lo + hi));
        }
    }
    for &e in &interior {
        if changes
            .iter()
            .any(|&(lo, hi)| e >= lo - tol && e <= hi + tol)
        {
            continue;
        }
        let cell = ((e / step).floor() as usize).min(cells.saturating_sub(1));
        if cell < first {
            // Inside the excluded first cell: nothing to compare against.
            report.cancelled += 1;
            continue;
        }
        let cell = cell - first;
        if partitions[cell] == partitions[cell + 1] {
            report.cancelled += 1;
        } else {
            report.unmatched_breakpoints.push(e);
        }
    }
    report
}

/// Largest midpoint disagreement between path multipliers and the
/// reference, over segments where the reference converged.
pub fn midpoint_check(ds: &Dataset, c: f64, path: &fairpath::SolutionPath) -> (f64, usize, usize) {
    let (mut worst, mut checked, mut skipped) = (0.0f64, 0, 0);
    for seg in &path.segments {
        if seg.eps_end - seg.eps_start <= 1e-9 * path.eps_max.max(1e-12) {
            continue;
        }
        let mid = seg.midpoint();
        let r = reference_solve(ds, c, mid);
        if r.residual < 1e-9 {
            worst = worst.max(max_abs_diff(&seg.mu_at(mid), &r.mu));
            checked += 1;
        } else {
            skipped += 1;
        }
    }
    (worst, checked, skipped)
}
