//! Small dense helpers shared by the solver and the path engine.

use nalgebra::{DMatrix, DVector};

/// Ratio of smallest to largest pivot below which a bordered system is
/// treated as singular.
const SINGULAR_RCOND: f64 = 1e-13;

/// Solution of a bordered system `[0 y_S^T; y_S Q_SS] [x0; x_S] = [rhs0; rhs_S]`.
#[derive(Debug, Clone)]
pub struct BorderedSolution {
    pub x0: f64,
    pub xs: Vec<f64>,
    pub jittered: bool,
    pub matrix: DMatrix<f64>,
    pub residual: f64,
}

pub fn bordered_matrix(q: &DMatrix<f64>, y: &[f64], s: &[usize], jitter: f64) -> DMatrix<f64> {
    let m = s.len();
    let mut k = DMatrix::zeros(m + 1, m + 1);
    for (a, &i) in s.iter().enumerate() {
        k[(0, a + 1)] = y[i];
        k[(a + 1, 0)] = y[i];
        for (bb, &j) in s.iter().enumerate() {
            k[(a + 1, bb + 1)] = q[(i, j)];
        }
        k[(a + 1, a + 1)] += jitter;
    }
    k
}

fn try_solve(k: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let lu = k.clone().full_piv_lu();
    let u = lu.u();
    let diag = u.diagonal().map(f64::abs);
    let (lo, hi) = (diag.min(), diag.max());
    if !(hi > 0.0) || lo < SINGULAR_RCOND * hi {
        return None;
    }
    lu.solve(rhs)
}

/// Solves the bordered system over index set `s`. If it is numerically
/// singular, `1e-10 * trace(Q_SS) / |S|` is added to the diagonal once.
pub fn solve_bordered(
    q: &DMatrix<f64>,
    y: &[f64],
    s: &[usize],
    rhs0: f64,
    rhs: &[f64],
) -> Option<BorderedSolution> {
    let m = s.len();
    if m == 0 {
        return None;
    }
    let mut b = DVector::zeros(m + 1);
    b[0] = rhs0;
    for a in 0..m {
        b[a + 1] = rhs[a];
    }
    let mut k = bordered_matrix(q, y, s, 0.0);
    let mut jittered = false;
    let x = match try_solve(&k, &b) {
        Some(x) => x,
        None => {
            let trace: f64 = s.iter().map(|&i| q[(i, i)]).sum();
            let mean = trace / m as f64;
            let jitter = 1e-10 * if mean > 0.0 { mean } else { 1.0 };
            k = bordered_matrix(q, y, s, jitter);
            jittered = true;
            try_solve(&k, &b)?
        }
    };
    let residual = (&k * &x - &b).amax();
    Some(BorderedSolution {
        x0: x[0],
        xs: x.iter().skip(1).copied().collect(),
        jittered,
        matrix: k,
        residual,
    })
}

/// Singular-value ratio below which a bordered matrix has a null direction.
const NULL_RCOND: f64 = 1e-10;

/// Unit null direction `(x0, x_S)` of the bordered matrix on `s`, if it is
/// numerically singular.
pub fn bordered_null_direction(
    q: &DMatrix<f64>,
    y: &[f64],
    s: &[usize],
) -> Option<(f64, Vec<f64>)> {
    if s.is_empty() {
        return None;
    }
    let k = bordered_matrix(q, y, s, 0.0);
    let svd = k.svd(false, true);
    let v_t = svd.v_t.as_ref()?;
    let (imin, smin) = svd
        .singular_values
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))?;
    let smax = svd.singular_values.max();
    if !(smax > 0.0) || smin > NULL_RCOND * smax {
        return None;
    }
    let row = v_t.row(imin);
    Some((row[0], row.iter().skip(1).copied().collect()))
}

/// Result of sliding along a flat face of the dual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FacePivot {
    pub leaving: usize,
    pub to_cap: bool,
    pub step: f64,
}

/// Moves `mu` and `b` along the null direction of the bordered system on
/// `s` until one coordinate reaches 0 or `c`, which is snapped there. On a
/// singular system this changes neither the primal weights nor any
/// gradient. `orient = Some((j, up))` fixes the sign so that `mu_j` grows
/// (`up`) or shrinks; otherwise the shorter of the two directions is used.
pub fn pivot_on_face(
    q: &DMatrix<f64>,
    y: &[f64],
    s: &[usize],
    mu: &mut [f64],
    b: &mut f64,
    c: f64,
    orient: Option<(usize, bool)>,
) -> Option<FacePivot> {
    let (d0, mut ds) = bordered_null_direction(q, y, s)?;
    let big = ds.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let tiny = 1e-9 * big;
    let ratio = |dir: &[f64]| -> Option<(f64, usize, bool)> {
        let mut best: Option<(f64, usize, bool)> = None;
        for (a, &i) in s.iter().enumerate() {
            let (t, cap) = if dir[a] > tiny {
                ((c - mu[i]) / dir[a], true)
            } else if dir[a] < -tiny {
                (-mu[i] / dir[a], false)
            } else {
                continue;
            };
            if best.is_none_or(|(bt, _, _)| t < bt) {
                best = Some((t.max(0.0), a, cap));
            }
        }
        best
    };
    let mut sign = 1.0;
    match orient {
        Some((j, up)) => {
            let a = s.iter().position(|&i| i == j)?;
            if ds[a].abs() <= tiny {
                return None;
            }
            if (ds[a] > 0.0) != up {
                sign = -1.0;
            }
        }
        None => {
            let flipped: Vec<f64> = ds.iter().map(|v| -v).collect();
            let fwd = ratio(&ds).map_or(f64::INFINITY, |r| r.0);
            let back = ratio(&flipped).map_or(f64::INFINITY, |r| r.0);
            if back < fwd {
                sign = -1.0;
            }
        }
    }
    for v in &mut ds {
        *v *= sign;
    }
    let (step, a_leave, to_cap) = ratio(&ds)?;
    for (a, &i) in s.iter().enumerate() {
        mu[i] = (mu[i] + step * ds[a]).clamp(0.0, c);
    }
    *b += step * sign * d0;
    let leaving = s[a_leave];
    mu[leaving] = if to_cap { c } else { 0.0 };
    Some(FacePivot {
        leaving,
        to_cap,
        step,
    })
}
