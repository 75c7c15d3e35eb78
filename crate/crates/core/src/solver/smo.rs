//! Pairwise coordinate descent for
//! `min 1/2 mu^T Q mu + lin^T mu  s.t.  0 <= mu <= C, y^T mu = 0`
//! with second-order working-set selection, followed by an exact
//! active-set polish on the free variables.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{pivot_on_face, solve_bordered};

const TAU: f64 = 1e-12;

pub(crate) struct BoxQp<'a> {
    pub q: &'a DMatrix<f64>,
    pub lin: &'a [f64],
    pub y: &'a [f64],
    pub c: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct QpSolution {
    pub mu: Vec<f64>,
    /// `Q mu + lin`, without the offset term.
    pub grad: Vec<f64>,
    pub b: f64,
    pub offset_interval: Option<(f64, f64)>,
    pub iterations: usize,
    pub violation: f64,
}

impl<'a> BoxQp<'a> {
    fn n(&self) -> usize {
        self.y.len()
    }

    fn gradient(&self, mu: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut g = self.lin.to_vec();
        for (j, &m) in mu.iter().enumerate() {
            if m != 0.0 {
                for i in 0..n {
                    g[i] += self.q[(i, j)] * m;
                }
            }
        }
        g
    }

    /// Bracket `[lo, hi]` of offsets consistent with the KKT sign conditions
    /// of the bound variables.
    fn offset_bracket(&self, mu: &[f64], grad: &[f64]) -> (f64, f64) {
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for t in 0..self.n() {
            let at_zero = mu[t] <= 0.0;
            let at_cap = mu[t] >= self.c;
            if !(at_zero || at_cap) {
                continue;
            }
            // mu = 0 needs grad + b y >= 0, mu = C needs grad + b y <= 0.
            let bound = -self.y[t] * grad[t];
            match (at_zero, self.y[t] > 0.0) {
                (true, true) | (false, false) => lo = lo.max(bound),
                (true, false) | (false, true) => hi = hi.min(bound),
            }
        }
        (lo, hi)
    }

    /// Largest KKT violation of `(mu, b)`, including the equality residual.
    pub fn violation(&self, mu: &[f64], grad: &[f64], b: f64, tol_mu: f64) -> f64 {
        let mut worst: f64 = 0.0;
        let mut eq = 0.0;
        for t in 0..self.n() {
            let l = grad[t] + b * self.y[t];
            let v = if mu[t] <= tol_mu {
                (-l).max(0.0)
            } else if mu[t] >= self.c - tol_mu {
                l.max(0.0)
            } else {
                l.abs()
            };
            worst = worst.max(v);
            worst = worst.max((-mu[t]).max(mu[t] - self.c).max(0.0));
            eq += self.y[t] * mu[t];
        }
        worst.max(eq.abs())
    }

    fn offset(&self, mu: &[f64], grad: &[f64]) -> (f64, Option<(f64, f64)>) {
        let mut sum = 0.0;
        let mut count = 0usize;
        for t in 0..self.n() {
            if mu[t] > 0.0 && mu[t] < self.c {
                sum += -self.y[t] * grad[t];
                count += 1;
            }
        }
        if count > 0 {
            return (sum / count as f64, None);
        }
        let (lo, hi) = self.offset_bracket(mu, grad);
        let b = match (lo.is_finite(), hi.is_finite()) {
            (true, true) => 0.5 * (lo + hi),
            (true, false) => lo,
            (false, true) => hi,
            (false, false) => 0.0,
        };
        (b, Some((lo, hi)))
    }

    pub fn solve(&self, tol: f64, max_iter: usize, tol_mu: f64) -> Result<QpSolution> {
        let n = self.n();
        let c = self.c;
        let y = self.y;
        let q = self.q;
        let mut mu = vec![0.0; n];
        let mut g = self.lin.to_vec();
        let mut iterations = 0;
        // On low-rank problems pairwise steps can crawl along a flat face;
        // an exact solve on the current free set usually finishes the job.
        let polish_every = (10 * n).max(1000);
        loop {
            // Maximal violating index i over the "up" set.
            let mut gmax = f64::NEG_INFINITY;
            let mut i_sel = usize::MAX;
            for t in 0..n {
                let v = -y[t] * g[t];
                let up = if y[t] > 0.0 { mu[t] < c } else { mu[t] > 0.0 };
                if up && v >= gmax {
                    gmax = v;
                    i_sel = t;
                }
            }
            let mut gmax2 = f64::NEG_INFINITY;
            let mut j_sel = usize::MAX;
            let mut obj_min = f64::INFINITY;
            for t in 0..n {
                let low = if y[t] > 0.0 { mu[t] > 0.0 } else { mu[t] < c };
                if !low {
                    continue;
                }
                let v = -y[t] * g[t];
                gmax2 = gmax2.max(-v);
                if i_sel == usize::MAX {
                    continue;
                }
                let diff = gmax - v;
                if diff > 0.0 {
                    let i = i_sel;
                    let mut quad = q[(i, i)] + q[(t, t)] - 2.0 * y[i] * y[t] * q[(i, t)];
                    if quad <= 0.0 {
                        quad = TAU;
                    }
                    let obj = -(diff * diff) / quad;
                    if obj <= obj_min {
                        obj_min = obj;
                        j_sel = t;
                    }
                }
            }
            let gap = gmax + gmax2;
            if i_sel == usize::MAX || j_sel == usize::MAX || gap < tol {
                break;
            }
            if iterations > 0 && (iterations % polish_every == 0 || iterations >= max_iter) {
                if let Some(done) = self.polish_iterate(&mu, iterations, tol, tol_mu) {
                    return Ok(done);
                }
            }
            if iterations >= max_iter {
                return Err(Error::NonConvergence {
                    iterations,
                    violation: gap,
                });
            }
            iterations += 1;
            let (i, j) = (i_sel, j_sel);
            let (old_i, old_j) = (mu[i], mu[j]);
            if y[i] != y[j] {
                let mut quad = q[(i, i)] + q[(j, j)] + 2.0 * q[(i, j)];
                if quad <= 0.0 {
                    quad = TAU;
                }
                let delta = (-g[i] - g[j]) / quad;
                let diff = mu[i] - mu[j];
                mu[i] += delta;
                mu[j] += delta;
                if diff > 0.0 {
                    if mu[j] < 0.0 {
                        mu[j] = 0.0;
                        mu[i] = diff;
                    }
                } else if mu[i] < 0.0 {
                    mu[i] = 0.0;
                    mu[j] = -diff;
                }
                if diff > 0.0 {
                    if mu[i] > c {
                        mu[i] = c;
                        mu[j] = c - diff;
                    }
                } else if mu[j] > c {
                    mu[j] = c;
                    mu[i] = c + diff;
                }
            } else {
                let mut quad = q[(i, i)] + q[(j, j)] - 2.0 * q[(i, j)];
                if quad <= 0.0 {
                    quad = TAU;
                }
                let delta = (g[i] - g[j]) / quad;
                let sum = mu[i] + mu[j];
                mu[i] -= delta;
                mu[j] += delta;
                if sum > c {
                    if mu[i] > c {
                        mu[i] = c;
                        mu[j] = sum - c;
                    }
                } else if mu[j] < 0.0 {
                    mu[j] = 0.0;
                    mu[i] = sum;
                }
                if sum > c {
                    if mu[j] > c {
                        mu[j] = c;
                        mu[i] = sum - c;
                    }
                } else if mu[i] < 0.0 {
                    mu[i] = 0.0;
                    mu[j] = sum;
                }
            }
            let (di, dj) = (mu[i] - old_i, mu[j] - old_j);
            for t in 0..n {
                g[t] += q[(t, i)] * di + q[(t, j)] * dj;
            }
        }
        Ok(self.finish(mu, iterations, tol, tol_mu))
    }

    fn polish_iterate(
        &self,
        mu: &[f64],
        iterations: usize,
        tol: f64,
        tol_mu: f64,
    ) -> Option<QpSolution> {
        let g = self.gradient(mu);
        let (b, offset_interval) = self.offset(mu, &g);
        let start = QpSolution {
            mu: mu.to_vec(),
            violation: self.violation(mu, &g, b, tol_mu),
            grad: g,
            b,
            offset_interval,
            iterations,
        };
        self.polish(&start, tol, tol_mu)
            .filter(|p| p.violation < tol)
    }

    fn finish(&self, mu: Vec<f64>, iterations: usize, tol: f64, tol_mu: f64) -> QpSolution {
        // Refresh the gradient to shed accumulated drift.
        let g = self.gradient(&mu);
        let (b, offset_interval) = self.offset(&mu, &g);
        let violation = self.violation(&mu, &g, b, tol_mu);
        let mut best = QpSolution {
            mu,
            grad: g,
            b,
            offset_interval,
            iterations,
            violation,
        };
        if let Some(polished) = self.polish(&best, tol, tol_mu) {
            if polished.violation <= best.violation.max(1e-10) {
                best = polished;
            }
        }
        best
    }

    /// Primal active-set refinement from `start`: bound variables are
    /// snapped, the stationarity system is solved exactly on the free set,
    /// and the free set is adjusted until every bound variable has the right
    /// gradient sign (to within `tol`).
    fn polish(&self, start: &QpSolution, tol: f64, tol_mu: f64) -> Option<QpSolution> {
        let n = self.n();
        let c = self.c;
        let mut mu = start.mu.clone();
        let mut free = Vec::new();
        for t in 0..n {
            if mu[t] <= tol_mu {
                mu[t] = 0.0;
            } else if mu[t] >= c - tol_mu {
                mu[t] = c;
            } else {
                free.push(t);
            }
        }
        let mut scratch_b = 0.0;
        for _ in 0..(2 * n + 20) {
            // A degenerate optimal face can hold more free variables than
            // the rank supports; slide to a vertex of the face first.
            while let Some(p) =
                pivot_on_face(self.q, self.y, &free, &mut mu, &mut scratch_b, c, None)
            {
                free.retain(|&t| t != p.leaving);
            }
            let exact = if free.is_empty() {
                None
            } else {
                let mut rhs0 = 0.0;
                let mut rhs: Vec<f64> = free.iter().map(|&s| -self.lin[s]).collect();
                for t in 0..n {
                    if mu[t] == c && !free.contains(&t) {
                        rhs0 -= self.y[t] * c;
                        for (a, &s) in free.iter().enumerate() {
                            rhs[a] -= self.q[(s, t)] * c;
                        }
                    }
                }
                let sol = solve_bordered(self.q, self.y, &free, rhs0, &rhs)?;
                if sol.jittered {
                    log::trace!("polish: jittered on {free:?}");
                    return None;
                }
                Some(sol)
            };
            if let Some(sol) = &exact {
                let mut step = 1.0;
                let mut blocking = None;
                for (a, &s) in free.iter().enumerate() {
                    let (cur, target) = (mu[s], sol.xs[a]);
                    let (t, cap) = if target < 0.0 {
                        (cur / (cur - target), false)
                    } else if target > c {
                        ((c - cur) / (target - cur), true)
                    } else {
                        continue;
                    };
                    if t < step {
                        step = t;
                        blocking = Some((s, cap));
                    }
                }
                for (a, &s) in free.iter().enumerate() {
                    mu[s] = (mu[s] + step * (sol.xs[a] - mu[s])).clamp(0.0, c);
                }
                if let Some((s, cap)) = blocking {
                    mu[s] = if cap { c } else { 0.0 };
                    free.retain(|&t| t != s);
                    continue;
                }
            }
            let g = self.gradient(&mu);
            let (b, offset_interval) = match &exact {
                Some(sol) => (sol.x0, None),
                None => self.offset(&mu, &g),
            };
            let mut worst = tol;
            let mut entering = None;
            for t in 0..n {
                if free.contains(&t) {
                    continue;
                }
                let l = g[t] + b * self.y[t];
                let v = if mu[t] == 0.0 { -l } else { l };
                if v > worst {
                    worst = v;
                    entering = Some(t);
                }
            }
            log::trace!("polish: free {free:?} entering {entering:?} worst {worst:e}");
            match entering {
                Some(t) => free.push(t),
                None => {
                    let violation = self.violation(&mu, &g, b, 0.0);
                    return Some(QpSolution {
                        mu,
                        grad: g,
                        b,
                        offset_interval,
                        iterations: start.iterations,
                        violation,
                    });
                }
            }
        }
        None
    }
}
