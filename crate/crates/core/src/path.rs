//! The exact solution path of the dual variables as the fairness tolerance
//! grows from zero until the constraint stops binding.
//!
//! On the binding side the dual is a QP whose linear term moves linearly in
//! eps, so with the partition `(F, S, E)` held fixed the multipliers on `S`
//! and the offset move linearly. Their slopes solve the bordered system
//!
//! ```text
//! [ 0    y_S^T ] [ r_0 ]      sigma n    [ 0             ]
//! [ y_S  Q~_SS ] [ r_S ] = - --------- * [ y_j <x_j, u>  ]
//!                             |u|^2
//! ```
//!
//! and the Lagrangian gradient of every other point moves at rate
//! `d_j = sum_{i in S} r_i Q~_ji + r_0 y_j + sigma n y_j <x_j,u> / |u|^2`.
//! A segment ends at the first eps where a free or error point's gradient
//! reaches zero or a support multiplier reaches a bound.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{bordered_null_direction, pivot_on_face, solve_bordered};
use crate::solver::{
    classify_point, BindingSide, DualSolution, FairSvm, Membership, Partition, SolverOptions,
};
use crate::welfare::{
    heuristic_allocation, pareto_tag, sign_allocation, welfare_from_allocation, ParetoTag,
    WelfareTriple,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    #[serde(rename = "F->S")]
    FreeToSupport,
    #[serde(rename = "E->S")]
    ErrorToSupport,
    #[serde(rename = "S->F")]
    SupportToFree,
    #[serde(rename = "S->E")]
    SupportToError,
    /// Never expected; recorded if a repair produces one.
    #[serde(rename = "F->E")]
    FreeToError,
    #[serde(rename = "E->F")]
    ErrorToFree,
    #[serde(rename = "terminal")]
    Terminal,
}

impl EventKind {
    pub fn from_transition(from: Membership, to: Membership) -> Option<EventKind> {
        use Membership::*;
        match (from, to) {
            (Free, Support) => Some(EventKind::FreeToSupport),
            (Error, Support) => Some(EventKind::ErrorToSupport),
            (Support, Free) => Some(EventKind::SupportToFree),
            (Support, Error) => Some(EventKind::SupportToError),
            (Free, Error) => Some(EventKind::FreeToError),
            (Error, Free) => Some(EventKind::ErrorToFree),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::FreeToSupport => "F->S",
            EventKind::ErrorToSupport => "E->S",
            EventKind::SupportToFree => "S->F",
            EventKind::SupportToError => "S->E",
            EventKind::FreeToError => "F->E",
            EventKind::ErrorToFree => "E->F",
            EventKind::Terminal => "terminal",
        }
    }

    /// A jump between the bounds that skips the margin set.
    pub fn is_direct_jump(self) -> bool {
        matches!(self, EventKind::FreeToError | EventKind::ErrorToFree)
    }

    fn target(self) -> Membership {
        match self {
            EventKind::FreeToSupport | EventKind::ErrorToSupport => Membership::Support,
            EventKind::SupportToFree | EventKind::ErrorToFree => Membership::Free,
            EventKind::SupportToError | EventKind::FreeToError => Membership::Error,
            EventKind::Terminal => unreachable!("terminal events move no point"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub index: Option<usize>,
    pub kind: EventKind,
}

/// Path position: multipliers, offset, Lagrangian gradient and partition.
#[derive(Debug, Clone, PartialEq)]
pub struct PathState {
    pub eps: f64,
    pub mu: Vec<f64>,
    pub b: f64,
    /// `y_j f(x_j) - 1`; the negated value is the `g_j` of the stability
    /// thresholds.
    pub gradient: Vec<f64>,
    pub members: Vec<Membership>,
}

impl PathState {
    pub fn from_solution(svm: &FairSvm, sol: &DualSolution) -> PathState {
        let tol = svm.partition_tol();
        let members = (0..svm.n())
            .map(|j| classify_point(sol.mu[j], sol.gradient[j], svm.c(), tol))
            .collect();
        PathState {
            eps: sol.epsilon,
            mu: sol.mu.clone(),
            b: sol.b,
            gradient: sol.gradient.clone(),
            members,
        }
    }

    pub fn support(&self) -> Vec<usize> {
        self.indices(Membership::Support)
    }

    fn indices(&self, kind: Membership) -> Vec<usize> {
        (0..self.members.len())
            .filter(|&j| self.members[j] == kind)
            .collect()
    }
}

/// Slopes of `(b, mu_S)` per unit eps for a fixed partition.
#[derive(Debug, Clone)]
pub struct SlopeSystem {
    pub support: Vec<usize>,
    pub r0: f64,
    pub r_support: Vec<f64>,
    /// Bordered matrix with first row `(0, y_S)`.
    pub matrix: DMatrix<f64>,
    /// `y_j <u, x_j>` for `j` in S.
    pub v: Vec<f64>,
    /// Right-hand side multiplier `-sigma n / |u|^2`.
    pub scale: f64,
    pub residual: f64,
    pub jittered: bool,
}

impl SlopeSystem {
    /// Slopes for every point, zero outside S.
    pub fn dense(&self, n: usize) -> Vec<f64> {
        let mut r = vec![0.0; n];
        for (a, &j) in self.support.iter().enumerate() {
            r[j] = self.r_support[a];
        }
        r
    }
}

pub fn slopes(svm: &FairSvm, support: &[usize]) -> Result<SlopeSystem> {
    if support.is_empty() {
        return Err(Error::PathDegenerate("support set is empty".into()));
    }
    let kern = svm.kernel();
    let y = svm.labels();
    let v: Vec<f64> = support.iter().map(|&j| y[j] * kern.fair_lin[j]).collect();
    let scale = if kern.is_vacuous() {
        0.0
    } else {
        -svm.sigma() * svm.n() as f64 / kern.u_norm_sq
    };
    let rhs: Vec<f64> = v.iter().map(|x| scale * x).collect();
    let sol = solve_bordered(svm.signed_gram(), y, support, 0.0, &rhs).ok_or_else(|| {
        Error::PathDegenerate(format!(
            "bordered system over {} support vectors is singular",
            support.len()
        ))
    })?;
    Ok(SlopeSystem {
        support: support.to_vec(),
        r0: sol.x0,
        r_support: sol.xs,
        matrix: sol.matrix,
        v,
        scale,
        residual: sol.residual,
        jittered: sol.jittered,
    })
}

/// Rate of change of every point's Lagrangian gradient per unit eps,
/// including the explicit dependence of the linear term on eps.
pub fn cross_derivatives(svm: &FairSvm, sys: &SlopeSystem) -> Vec<f64> {
    let q = svm.signed_gram();
    let y = svm.labels();
    let mut d = svm.eps_direction();
    for j in 0..svm.n() {
        let mut acc = sys.r0 * y[j];
        for (a, &i) in sys.support.iter().enumerate() {
            acc += sys.r_support[a] * q[(j, i)];
        }
        d[j] += acc;
    }
    d
}

/// Interval of eps offsets `[lower, upper]` over which the partition is
/// unchanged, with the point and transition that end it on each side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StableRange {
    #[serde(with = "crate::float_serde::extended")]
    pub lower: f64,
    #[serde(with = "crate::float_serde::extended")]
    pub upper: f64,
    pub lower_index: Option<usize>,
    pub upper_index: Option<usize>,
    pub lower_kind: Option<EventKind>,
    pub upper_kind: Option<EventKind>,
    /// Per-point `(m_j, M_j)`.
    #[serde(with = "crate::float_serde::extended_pairs")]
    pub thresholds: Vec<(f64, f64)>,
}

/// Per-point thresholds: for free and error points `g_j / d_j` oriented by
/// the sign of `d_j`, for support points the distance to the bounds
/// `(C - mu_j) / r_j` and `-mu_j / r_j` oriented by the sign of `r_j`.
const SLOPE_FLOOR: f64 = 1e-9;

pub fn stable_range(state: &PathState, c: f64, r: &[f64], d: &[f64]) -> StableRange {
    let n = state.mu.len();
    let mut range = StableRange {
        lower: f64::NEG_INFINITY,
        upper: f64::INFINITY,
        lower_index: None,
        upper_index: None,
        lower_kind: None,
        upper_kind: None,
        thresholds: Vec::with_capacity(n),
    };
    // Rates this small relative to the largest are rounding noise; a copy of
    // a support point, for instance, has a rate of exactly zero.
    let floor = |v: &[f64]| SLOPE_FLOOR * v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let (r_floor, d_floor) = (floor(r), floor(d));
    for j in 0..n {
        let g = -state.gradient[j];
        let (dj, rj) = (
            if d[j].abs() <= d_floor { 0.0 } else { d[j] },
            if r[j].abs() <= r_floor { 0.0 } else { r[j] },
        );
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        let (mut lo_kind, mut hi_kind) = (None, None);
        match state.members[j] {
            Membership::Free => {
                if dj < 0.0 {
                    hi = g / dj;
                    hi_kind = Some(EventKind::FreeToSupport);
                } else if dj > 0.0 {
                    lo = g / dj;
                    lo_kind = Some(EventKind::FreeToSupport);
                }
            }
            Membership::Error => {
                if dj > 0.0 {
                    hi = g / dj;
                    hi_kind = Some(EventKind::ErrorToSupport);
                } else if dj < 0.0 {
                    lo = g / dj;
                    lo_kind = Some(EventKind::ErrorToSupport);
                }
            }
            Membership::Support => {
                let (to_zero, to_cap) = (-state.mu[j] / rj, (c - state.mu[j]) / rj);
                if rj > 0.0 {
                    (lo, hi) = (to_zero, to_cap);
                    (lo_kind, hi_kind) = (
                        Some(EventKind::SupportToFree),
                        Some(EventKind::SupportToError),
                    );
                } else if rj < 0.0 {
                    (lo, hi) = (to_cap, to_zero);
                    (lo_kind, hi_kind) = (
                        Some(EventKind::SupportToError),
                        Some(EventKind::SupportToFree),
                    );
                }
            }
        }
        let (lo, hi) = (lo.min(0.0), hi.max(0.0));
        if hi < range.upper {
            range.upper = hi;
            range.upper_index = Some(j);
            range.upper_kind = hi_kind;
        }
        if lo > range.lower {
            range.lower = lo;
            range.lower_index = Some(j);
            range.lower_kind = lo_kind;
        }
        range.thresholds.push((lo, hi));
    }
    range
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathOptions {
    /// Event budget; `None` means `10 n`.
    pub max_events: Option<usize>,
    /// KKT residual above which a breakpoint is re-solved from scratch.
    pub kkt_tol: f64,
    /// Thresholds this close to the binding one are processed together.
    pub simultaneous_tol: f64,
    /// Compare cross-derivatives with a finite difference of two solves.
    pub cross_check: bool,
}

impl Default for PathOptions {
    fn default() -> Self {
        PathOptions {
            max_events: None,
            kkt_tol: 1e-5,
            simultaneous_tol: 1e-10,
            cross_check: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupWelfare {
    #[serde(rename = "W0")]
    pub w0: f64,
    #[serde(rename = "W1")]
    pub w1: f64,
}

impl From<(f64, f64)> for GroupWelfare {
    fn from((w0, w1): (f64, f64)) -> Self {
        GroupWelfare { w0, w1 }
    }
}

/// One linear piece of the path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub eps_start: f64,
    pub eps_end: f64,
    pub partition: Partition,
    pub mu_start: Vec<f64>,
    pub b_start: f64,
    /// Slopes of `mu`, zero outside S.
    pub r: Vec<f64>,
    pub r0: f64,
    pub d: Vec<f64>,
    /// `g_j`, the negated Lagrangian gradient at the segment start.
    pub g: Vec<f64>,
    pub range: StableRange,
    pub objective_start: f64,
    pub objective_end: f64,
    pub gamma_start: f64,
    pub gamma_end: f64,
    /// Dual-variable welfare, constant over the segment.
    pub welfare: GroupWelfare,
    /// Sign-based welfare at the segment midpoint.
    pub welfare_exact: GroupWelfare,
    /// No margin support vectors: `mu` is constant and `b` is one of many
    /// feasible offsets.
    pub empty_support: bool,
    pub jittered: bool,
}

impl Segment {
    pub fn mu_at(&self, eps: f64) -> Vec<f64> {
        let t = eps - self.eps_start;
        self.mu_start
            .iter()
            .zip(&self.r)
            .map(|(m, r)| m + r * t)
            .collect()
    }

    pub fn b_at(&self, eps: f64) -> f64 {
        self.b_start + self.r0 * (eps - self.eps_start)
    }

    pub fn gradient_at(&self, eps: f64) -> Vec<f64> {
        let t = eps - self.eps_start;
        self.g
            .iter()
            .zip(&self.d)
            .map(|(g, d)| -g + d * t)
            .collect()
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.eps_start + self.eps_end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Breakpoint {
    pub eps: f64,
    pub events: Vec<Event>,
    pub mu: Vec<f64>,
    pub b: f64,
    pub objective: f64,
    pub gamma: f64,
    /// Triples on the smaller-eps and larger-eps side; both use the
    /// objective at the breakpoint.
    pub welfare_before: WelfareTriple,
    pub welfare_after: WelfareTriple,
    pub exact_before: WelfareTriple,
    pub exact_after: WelfareTriple,
    pub tag: ParetoTag,
    pub tag_exact: ParetoTag,
    /// The state after this breakpoint came from a fresh solve.
    pub repaired: bool,
}

impl Breakpoint {
    pub fn is_terminal(&self) -> bool {
        self.events.iter().any(|e| e.kind == EventKind::Terminal)
    }

    pub fn kind(&self) -> EventKind {
        self.events[0].kind
    }

    pub fn index(&self) -> Option<usize> {
        self.events[0].index
    }
}

/// Pareto tag of a breakpoint under the dual-variable welfare.
pub fn classify_event(bp: &Breakpoint) -> ParetoTag {
    pareto_tag(&bp.welfare_before, &bp.welfare_after)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossDerivativeCheck {
    pub eps: f64,
    pub delta: f64,
    pub error_with_term: f64,
    pub error_without_term: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PathDiagnostics {
    pub cold_solves: usize,
    pub repairs: usize,
    pub settle_moves: usize,
    /// Breakpoints where several thresholds coincided.
    pub simultaneous_events: usize,
    /// Slides along flat faces of the dual at a breakpoint.
    pub face_pivots: usize,
    pub nudges: usize,
    pub jittered_segments: usize,
    pub empty_support_segments: usize,
    pub direct_jumps: usize,
    pub max_discontinuity: f64,
    #[serde(with = "crate::float_serde::extended")]
    pub max_kkt_residual: f64,
    pub terminal_mu_gap: f64,
    pub terminal_gamma: f64,
    /// Cross-derivatives include the explicit eps term of the gradient.
    pub explicit_eps_term: bool,
    pub cross_derivative_check: Option<CrossDerivativeCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathStart {
    pub eps: f64,
    pub mu: Vec<f64>,
    pub b: f64,
    pub objective: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionPath {
    #[serde(rename = "C")]
    pub c: f64,
    pub n: usize,
    pub eps_max: f64,
    pub side: BindingSide,
    pub start: PathStart,
    pub segments: Vec<Segment>,
    /// Ordered by eps; the last one is terminal when the path is complete.
    pub breakpoints: Vec<Breakpoint>,
    pub diagnostics: PathDiagnostics,
    pub complete: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelfareStep {
    pub eps_start: f64,
    pub eps_end: f64,
    pub objective_start: f64,
    pub objective_end: f64,
    pub welfare: GroupWelfare,
    pub welfare_exact: GroupWelfare,
}

impl SolutionPath {
    pub fn segment_at(&self, eps: f64) -> Option<&Segment> {
        if self.segments.is_empty() {
            return None;
        }
        let k = self.segments.partition_point(|s| s.eps_end < eps);
        Some(&self.segments[k.min(self.segments.len() - 1)])
    }

    /// Multipliers at `eps`; constant beyond `eps_max`.
    pub fn mu_at(&self, eps: f64) -> Vec<f64> {
        match self.segment_at(eps) {
            Some(seg) => seg.mu_at(eps.clamp(seg.eps_start, seg.eps_end)),
            None => self.start.mu.clone(),
        }
    }

    pub fn interior_breakpoints(&self) -> impl Iterator<Item = &Breakpoint> {
        self.breakpoints.iter().filter(|b| !b.is_terminal())
    }

    pub fn welfare_curve(&self) -> Vec<WelfareStep> {
        self.segments
            .iter()
            .map(|s| WelfareStep {
                eps_start: s.eps_start,
                eps_end: s.eps_end,
                objective_start: s.objective_start,
                objective_end: s.objective_end,
                welfare: s.welfare,
                welfare_exact: s.welfare_exact,
            })
            .collect()
    }
}

/// Linear model of one segment before it is recorded.
struct Plan {
    r: Vec<f64>,
    r0: f64,
    d: Vec<f64>,
    range: StableRange,
    /// `(threshold, index, kind)` for every finite upper threshold.
    candidates: Vec<(f64, usize, EventKind)>,
    empty_support: bool,
    jittered: bool,
}

fn lagrangian_gradient(svm: &FairSvm, mu: &[f64], b: f64, eps: f64) -> Vec<f64> {
    let q = svm.signed_gram();
    let y = svm.labels();
    let mut g = svm.linear_term(eps);
    for (i, &m) in mu.iter().enumerate() {
        if m != 0.0 {
            for (j, gj) in g.iter_mut().enumerate() {
                *gj += q[(j, i)] * m;
            }
        }
    }
    for (j, gj) in g.iter_mut().enumerate() {
        *gj += b * y[j];
    }
    g
}

fn kkt_residual(svm: &FairSvm, state: &PathState) -> f64 {
    let c = svm.c();
    let y = svm.labels();
    let mut worst: f64 = 0.0;
    let mut eq = 0.0;
    for j in 0..svm.n() {
        let l = state.gradient[j];
        let v = match state.members[j] {
            Membership::Support => l.abs().max((-state.mu[j]).max(state.mu[j] - c).max(0.0)),
            Membership::Free => (-l).max(0.0).max(state.mu[j].abs()),
            Membership::Error => l.max(0.0).max((c - state.mu[j]).abs()),
        };
        worst = worst.max(v);
        eq += y[j] * state.mu[j];
    }
    worst.max(eq.abs())
}

fn cold_state(svm: &FairSvm, eps: f64, diag: &mut PathDiagnostics) -> Result<PathState> {
    diag.cold_solves += 1;
    log::debug!("fresh solve at eps = {eps:?}");
    Ok(PathState::from_solution(svm, &svm.solve(eps)?))
}

/// Re-solves the stationarity system on the current partition, removing
/// drift accumulated by linear updates. Returns false if the result leaves
/// the box or the system needs jitter.
fn refine(svm: &FairSvm, state: &mut PathState) -> bool {
    let support = state.support();
    if support.is_empty() {
        state.gradient = lagrangian_gradient(svm, &state.mu, state.b, state.eps);
        return true;
    }
    let c = svm.c();
    let y = svm.labels();
    let q = svm.signed_gram();
    let lin = svm.linear_term(state.eps);
    let mut rhs0 = 0.0;
    let mut rhs: Vec<f64> = support.iter().map(|&s| -lin[s]).collect();
    for j in 0..svm.n() {
        if state.members[j] == Membership::Error {
            rhs0 -= y[j] * c;
            for (a, &s) in support.iter().enumerate() {
                rhs[a] -= q[(s, j)] * c;
            }
        }
    }
    let Some(sol) = solve_bordered(q, y, &support, rhs0, &rhs) else {
        return false;
    };
    let slack = svm.partition_tol().mu;
    if sol.jittered || sol.xs.iter().any(|&v| !(-slack..=c + slack).contains(&v)) {
        return false;
    }
    for (a, &s) in support.iter().enumerate() {
        state.mu[s] = sol.xs[a].clamp(0.0, c);
    }
    for j in 0..svm.n() {
        match state.members[j] {
            Membership::Free => state.mu[j] = 0.0,
            Membership::Error => state.mu[j] = c,
            Membership::Support => {}
        }
    }
    state.b = sol.x0;
    state.gradient = lagrangian_gradient(svm, &state.mu, state.b, state.eps);
    true
}

/// Moves points that sit on a set boundary into the set consistent with
/// the direction of travel: support points at a bound whose slope points
/// outward leave S, bound points with zero gradient moving inward join S.
fn settle(svm: &FairSvm, state: &mut PathState, diag: &mut PathDiagnostics) -> Result<()> {
    let n = svm.n();
    let c = svm.c();
    let tol = svm.partition_tol();
    let q = svm.signed_gram();
    let y = svm.labels();
    let demote = |state: &mut PathState, j: usize, to_cap: bool| {
        state.mu[j] = if to_cap { c } else { 0.0 };
        state.members[j] = if to_cap {
            Membership::Error
        } else {
            Membership::Free
        };
    };
    for _ in 0..(4 * n + 10) {
        let support = state.support();
        if support.is_empty() {
            return Ok(());
        }
        // More support points than the rank allows: drop one already at a
        // bound, or slide along the face until one reaches a bound.
        if bordered_null_direction(q, y, &support).is_some() {
            let at_bound = support
                .iter()
                .copied()
                .find(|&j| state.mu[j] <= tol.mu || state.mu[j] >= c - tol.mu);
            match at_bound {
                Some(j) => demote(state, j, state.mu[j] >= c - tol.mu),
                None => {
                    let p = pivot_on_face(q, y, &support, &mut state.mu, &mut state.b, c, None)
                        .ok_or_else(|| Error::PathDegenerate("no exit from a flat face".into()))?;
                    demote(state, p.leaving, p.to_cap);
                    diag.face_pivots += 1;
                }
            }
            diag.settle_moves += 1;
            continue;
        }
        let sys = slopes(svm, &support)?;
        let r = sys.dense(n);
        let d = cross_derivatives(svm, &sys);
        let rt = SLOPE_FLOOR * (r.iter().fold(0.0f64, |a, v| a.max(v.abs())));
        let dt = SLOPE_FLOOR * (d.iter().fold(0.0f64, |a, v| a.max(v.abs())));
        let mut moved = false;
        for j in 0..n {
            let near_zero_grad = state.gradient[j].abs() <= tol.grad;
            match state.members[j] {
                Membership::Support if state.mu[j] <= tol.mu && r[j] < -rt => {
                    demote(state, j, false)
                }
                Membership::Support if state.mu[j] >= c - tol.mu && r[j] > rt => {
                    demote(state, j, true)
                }
                Membership::Free | Membership::Error
                    if near_zero_grad
                        && ((state.members[j] == Membership::Free && d[j] < -dt)
                            || (state.members[j] == Membership::Error && d[j] > dt)) =>
                {
                    let up = state.members[j] == Membership::Free;
                    state.members[j] = Membership::Support;
                    let grown = state.support();
                    if let Some(p) =
                        pivot_on_face(q, y, &grown, &mut state.mu, &mut state.b, c, Some((j, up)))
                    {
                        demote(state, p.leaving, p.to_cap);
                        diag.face_pivots += 1;
                    }
                }
                _ => continue,
            }
            diag.settle_moves += 1;
            moved = true;
            break;
        }
        if !moved {
            return Ok(());
        }
    }
    Err(Error::PathDegenerate("partition did not settle".into()))
}

/// Settles the partition, falling back to a fresh solve and finally to a
/// fresh solve a hair further along the path.
fn settle_or_repair(
    svm: &FairSvm,
    state: &mut PathState,
    diag: &mut PathDiagnostics,
) -> Result<bool> {
    if settle(svm, state, diag).is_ok() {
        return Ok(false);
    }
    log::warn!(
        "partition at eps = {} did not settle; re-solving",
        state.eps
    );
    diag.repairs += 1;
    *state = cold_state(svm, state.eps, diag)?;
    if settle(svm, state, diag).is_ok() {
        return Ok(true);
    }
    diag.nudges += 1;
    let eps = state.eps + 1e-8 * svm.eps_max().max(1e-300);
    *state = cold_state(svm, eps.min(svm.eps_max()), diag)?;
    settle(svm, state, diag)?;
    Ok(true)
}

fn plan_segment(svm: &FairSvm, state: &PathState) -> Result<Plan> {
    let n = svm.n();
    let support = state.support();
    if support.is_empty() {
        return Ok(plan_empty_support(svm, state));
    }
    let sys = slopes(svm, &support)?;
    let r = sys.dense(n);
    let d = cross_derivatives(svm, &sys);
    let range = stable_range(state, svm.c(), &r, &d);
    let mut candidates = Vec::new();
    for (j, &(_, hi)) in range.thresholds.iter().enumerate() {
        if hi.is_finite() {
            let kind = match state.members[j] {
                Membership::Free => EventKind::FreeToSupport,
                Membership::Error => EventKind::ErrorToSupport,
                Membership::Support if r[j] > 0.0 => EventKind::SupportToError,
                Membership::Support => EventKind::SupportToFree,
            };
            candidates.push((hi, j, kind));
        }
    }
    Ok(Plan {
        r,
        r0: sys.r0,
        d,
        range,
        candidates,
        empty_support: false,
        jittered: sys.jittered,
    })
}

/// With S empty the multipliers are frozen and only the offset can move.
/// Each bound point confines `b` to a half-line whose end moves linearly in
/// eps; the segment ends when the feasible interval collapses, at which
/// point the two points defining it reach zero gradient together.
fn plan_empty_support(svm: &FairSvm, state: &PathState) -> Plan {
    let n = svm.n();
    let y = svm.labels();
    let h = svm.eps_direction();
    // Line j: b = a_j + s_j * t, a lower limit or an upper limit.
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for j in 0..n {
        let grad_no_b = state.gradient[j] - state.b * y[j];
        let (a, s) = (-y[j] * grad_no_b, -y[j] * h[j]);
        let is_lower = match state.members[j] {
            Membership::Free => y[j] > 0.0,
            Membership::Error => y[j] < 0.0,
            Membership::Support => continue,
        };
        if is_lower {
            lower.push((a, s, j));
        } else {
            upper.push((a, s, j));
        }
    }
    let mut collapse = f64::INFINITY;
    let mut pair = None;
    for &(al, sl, k) in &lower {
        for &(au, su, l) in &upper {
            if sl > su {
                let t = ((au - al) / (sl - su)).max(0.0);
                if t < collapse {
                    collapse = t;
                    pair = Some((k, l, al + sl * t));
                }
            }
        }
    }
    let r0 = match pair {
        Some((_, _, b_end)) if collapse > 0.0 => (b_end - state.b) / collapse,
        Some(_) => 0.0,
        None => {
            let max_lower = lower.iter().map(|l| l.1).fold(f64::NEG_INFINITY, f64::max);
            let min_upper = upper.iter().map(|l| l.1).fold(f64::INFINITY, f64::min);
            if max_lower.is_finite() {
                max_lower
            } else if min_upper.is_finite() {
                min_upper
            } else {
                0.0
            }
        }
    };
    let d: Vec<f64> = (0..n).map(|j| h[j] + r0 * y[j]).collect();
    let kind_of = |j: usize| match state.members[j] {
        Membership::Error => EventKind::ErrorToSupport,
        _ => EventKind::FreeToSupport,
    };
    let mut range = StableRange {
        lower: f64::NEG_INFINITY,
        upper: collapse,
        lower_index: None,
        upper_index: pair.map(|p| p.0),
        lower_kind: None,
        upper_kind: pair.map(|p| kind_of(p.0)),
        thresholds: vec![(f64::NEG_INFINITY, f64::INFINITY); n],
    };
    let mut candidates = Vec::new();
    if let Some((k, l, _)) = pair {
        range.thresholds[k].1 = collapse;
        range.thresholds[l].1 = collapse;
        candidates.push((collapse, k, kind_of(k)));
        candidates.push((collapse, l, kind_of(l)));
    }
    Plan {
        r: vec![0.0; n],
        r0,
        d,
        range,
        candidates,
        empty_support: true,
        jittered: false,
    }
}

/// Moves the state by `step` along the plan, applies the transitions that
/// fire there, verifies KKT and settles the new partition.
fn advance(
    svm: &FairSvm,
    state: &PathState,
    plan: &Plan,
    step: f64,
    opts: &PathOptions,
    diag: &mut PathDiagnostics,
) -> Result<(PathState, bool)> {
    let c = svm.c();
    let mut next = state.clone();
    next.eps = state.eps + step;
    for j in 0..svm.n() {
        next.mu[j] += plan.r[j] * step;
    }
    next.b += plan.r0 * step;
    let predicted = next.mu.clone();
    log::trace!(
        "advance from {:?}: members {:?} mu {:?} L {:?} r {:?} r0 {} d {:?} candidates {:?}",
        state.eps,
        state.members,
        state.mu,
        state.gradient,
        plan.r,
        plan.r0,
        plan.d,
        plan.candidates
    );
    let hits: Vec<(usize, EventKind)> = plan
        .candidates
        .iter()
        .filter(|(t, _, _)| *t <= step + opts.simultaneous_tol)
        .map(|&(_, j, k)| (j, k))
        .collect();
    for &(j, kind) in &hits {
        let target = kind.target();
        match target {
            Membership::Free => next.mu[j] = 0.0,
            Membership::Error => next.mu[j] = c,
            Membership::Support => {}
        }
        next.members[j] = target;
    }
    for j in 0..svm.n() {
        next.mu[j] = next.mu[j].clamp(0.0, c);
    }
    // A full support set cannot absorb an entering point: the multipliers
    // slide along the flat face it opens until some point reaches a bound
    // and leaves, all at the same eps.
    let entering: Vec<(usize, bool)> = hits
        .iter()
        .filter(|(_, k)| k.target() == Membership::Support)
        .map(|&(j, k)| (j, k == EventKind::FreeToSupport))
        .collect();
    for round in 0..svm.n() {
        let support = next.support();
        let orient = (round == 0 && entering.len() == 1).then(|| entering[0]);
        let Some(p) = pivot_on_face(
            svm.signed_gram(),
            svm.labels(),
            &support,
            &mut next.mu,
            &mut next.b,
            c,
            orient,
        ) else {
            break;
        };
        next.members[p.leaving] = if p.to_cap {
            Membership::Error
        } else {
            Membership::Free
        };
        diag.face_pivots += 1;
    }
    if !plan.empty_support && hits.len() > 1 {
        diag.simultaneous_events += 1;
    }
    let refined = refine(svm, &mut next);
    let residual = if refined {
        kkt_residual(svm, &next)
    } else {
        f64::INFINITY
    };
    let mut repaired = false;
    if residual > opts.kkt_tol {
        log::warn!(
            "KKT residual {residual:e} after event at eps = {}; re-solving",
            next.eps
        );
        diag.repairs += 1;
        next = cold_state(svm, next.eps, diag)?;
        repaired = true;
    } else {
        diag.max_kkt_residual = diag.max_kkt_residual.max(residual);
    }
    repaired |= settle_or_repair(svm, &mut next, diag)?;
    let jump = predicted
        .iter()
        .zip(&next.mu)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if next.eps == state.eps + step {
        diag.max_discontinuity = diag.max_discontinuity.max(jump);
    }
    Ok((next, repaired))
}

fn membership_events(before: &[Membership], after: &[Membership]) -> Vec<Event> {
    before
        .iter()
        .zip(after)
        .enumerate()
        .filter_map(|(j, (&a, &b))| {
            EventKind::from_transition(a, b).map(|kind| Event {
                index: Some(j),
                kind,
            })
        })
        .collect()
}

struct Tracer<'a> {
    svm: &'a FairSvm,
    ds: &'a Dataset,
    path: SolutionPath,
}

impl<'a> Tracer<'a> {
    fn push_segment(&mut self, state: &PathState, plan: &Plan, step: f64) {
        let partition = Partition::from_memberships(&state.members);
        let contiguous = self.path.segments.last().is_some_and(|last| {
            last.eps_end == state.eps
                && last.partition == partition
                && self
                    .path
                    .breakpoints
                    .last()
                    .is_none_or(|bp| bp.eps < state.eps)
        });
        if contiguous && !plan.empty_support {
            let last = self.path.segments.last_mut().expect("checked above");
            last.eps_end = state.eps + step;
            return;
        }
        if step <= 0.0 && !self.path.segments.is_empty() {
            return;
        }
        if plan.empty_support {
            self.path.diagnostics.empty_support_segments += 1;
        }
        if plan.jittered {
            self.path.diagnostics.jittered_segments += 1;
        }
        self.path.segments.push(Segment {
            eps_start: state.eps,
            eps_end: state.eps + step,
            partition,
            mu_start: state.mu.clone(),
            b_start: state.b,
            r: plan.r.clone(),
            r0: plan.r0,
            d: plan.d.clone(),
            g: state.gradient.iter().map(|v| -v).collect(),
            range: plan.range.clone(),
            objective_start: 0.0,
            objective_end: 0.0,
            gamma_start: 0.0,
            gamma_end: 0.0,
            welfare: GroupWelfare { w0: 0.0, w1: 0.0 },
            welfare_exact: GroupWelfare { w0: 0.0, w1: 0.0 },
            empty_support: plan.empty_support,
            jittered: plan.jittered,
        });
    }

    fn push_breakpoint(&mut self, state: &PathState, events: Vec<Event>, repaired: bool) {
        if let Some(last) = self.path.breakpoints.last_mut() {
            if last.eps == state.eps {
                last.events.extend(events);
                last.mu = state.mu.clone();
                last.b = state.b;
                last.repaired |= repaired;
                return;
            }
        }
        let blank = WelfareTriple {
            p: 0.0,
            w0: 0.0,
            w1: 0.0,
        };
        self.path.breakpoints.push(Breakpoint {
            eps: state.eps,
            events,
            mu: state.mu.clone(),
            b: state.b,
            objective: self.svm.objective_at(&state.mu, state.eps),
            gamma: self.svm.gamma_at(&state.mu, state.eps),
            welfare_before: blank,
            welfare_after: blank,
            exact_before: blank,
            exact_after: blank,
            tag: ParetoTag::Neutral,
            tag_exact: ParetoTag::Neutral,
            repaired,
        });
    }

    fn exact_welfare(&self, gradient: &[f64]) -> Result<GroupWelfare> {
        let y = self.svm.labels();
        let scores: Vec<f64> = gradient
            .iter()
            .zip(y)
            .map(|(l, yj)| yj * (l + 1.0))
            .collect();
        Ok(welfare_from_allocation(&sign_allocation(&scores), self.ds.groups())?.into())
    }

    fn heuristic_welfare(&self, mu: &[f64]) -> Result<GroupWelfare> {
        let alloc = heuristic_allocation(mu, self.ds.labels(), self.svm.c());
        Ok(welfare_from_allocation(&alloc, self.ds.groups())?.into())
    }

    /// Fills in objectives, prices, welfare and Pareto tags.
    fn finalize(&mut self) -> Result<()> {
        let svm = self.svm;
        let mut segments = std::mem::take(&mut self.path.segments);
        for seg in &mut segments {
            let mu_end = seg.mu_at(seg.eps_end);
            seg.objective_start = svm.objective_at(&seg.mu_start, seg.eps_start);
            seg.objective_end = svm.objective_at(&mu_end, seg.eps_end);
            seg.gamma_start = svm.gamma_at(&seg.mu_start, seg.eps_start);
            seg.gamma_end = svm.gamma_at(&mu_end, seg.eps_end);
            let mid = seg.midpoint();
            seg.welfare = self.heuristic_welfare(&seg.mu_at(mid))?;
            seg.welfare_exact = self.exact_welfare(&seg.gradient_at(mid))?;
        }
        self.path.segments = segments;
        let unc = svm.unconstrained();
        let beyond = self.heuristic_welfare(&unc.mu)?;
        let beyond_exact = self.exact_welfare(&unc.gradient)?;
        let segs = &self.path.segments;
        for bp in &mut self.path.breakpoints {
            let k = segs.partition_point(|s| s.eps_end <= bp.eps);
            let before = if k > 0 {
                segs[k - 1].clone()
            } else {
                segs[0].clone()
            };
            let (after, after_exact) = if bp.is_terminal() || k >= segs.len() {
                (beyond, beyond_exact)
            } else {
                (segs[k].welfare, segs[k].welfare_exact)
            };
            let triple = |w: GroupWelfare| WelfareTriple {
                p: bp.objective,
                w0: w.w0,
                w1: w.w1,
            };
            bp.welfare_before = triple(before.welfare);
            bp.exact_before = triple(before.welfare_exact);
            bp.welfare_after = triple(after);
            bp.exact_after = triple(after_exact);
            bp.tag = pareto_tag(&bp.welfare_before, &bp.welfare_after);
            bp.tag_exact = pareto_tag(&bp.exact_before, &bp.exact_after);
        }
        Ok(())
    }

    fn cross_check(&mut self) -> Result<()> {
        let svm = self.svm;
        let Some(seg) = self
            .path
            .segments
            .iter()
            .find(|s| !s.empty_support && s.eps_end - s.eps_start > 1e-6)
        else {
            return Ok(());
        };
        let len = seg.eps_end - seg.eps_start;
        let eps = seg.eps_start + 0.25 * len;
        let delta = (1e-5f64).min(0.25 * len);
        log::debug!("cross-derivative probe at eps = {eps:e}, delta = {delta:e}");
        let a = svm.solve(eps)?;
        let b = svm.solve(eps + delta)?;
        self.path.diagnostics.cold_solves += 2;
        if a.partition != b.partition {
            return Ok(());
        }
        let h = svm.eps_direction();
        let (mut with, mut without) = (0.0f64, 0.0f64);
        for j in 0..svm.n() {
            if seg.partition.support.contains(&j) {
                continue;
            }
            let fd = (b.gradient[j] - a.gradient[j]) / delta;
            with = with.max((fd - seg.d[j]).abs());
            without = without.max((fd - (seg.d[j] - h[j])).abs());
        }
        self.path.diagnostics.cross_derivative_check = Some(CrossDerivativeCheck {
            eps,
            delta,
            error_with_term: with,
            error_without_term: without,
        });
        Ok(())
    }
}

/// Traces the path with default solver and path options.
pub fn trace_path(ds: &Dataset, c: f64) -> Result<SolutionPath> {
    let svm = FairSvm::new(ds, c, SolverOptions::default())?;
    trace_path_with(&svm, ds, &PathOptions::default())
}

pub fn trace_path_with(svm: &FairSvm, ds: &Dataset, opts: &PathOptions) -> Result<SolutionPath> {
    let n = svm.n();
    if ds.n() != n {
        return Err(Error::InvalidParameter(
            "dataset does not match the solver".into(),
        ));
    }
    let eps_max = svm.eps_max();
    let mut diag = PathDiagnostics {
        explicit_eps_term: true,
        ..Default::default()
    };
    let mut state = cold_state(svm, 0.0, &mut diag)?;
    let start = PathStart {
        eps: 0.0,
        mu: state.mu.clone(),
        b: state.b,
        objective: svm.objective_at(&state.mu, 0.0),
        gamma: svm.gamma_at(&state.mu, 0.0),
    };
    let mut tracer = Tracer {
        svm,
        ds,
        path: SolutionPath {
            c: svm.c(),
            n,
            eps_max,
            side: svm.binding_side(),
            start,
            segments: Vec::new(),
            breakpoints: Vec::new(),
            diagnostics: PathDiagnostics::default(),
            complete: false,
        },
    };
    if svm.kernel().is_vacuous() || eps_max <= 0.0 {
        let plan = Plan {
            r: vec![0.0; n],
            r0: 0.0,
            d: vec![0.0; n],
            range: StableRange {
                lower: f64::NEG_INFINITY,
                upper: f64::INFINITY,
                lower_index: None,
                upper_index: None,
                lower_kind: None,
                upper_kind: None,
                thresholds: vec![(f64::NEG_INFINITY, f64::INFINITY); n],
            },
            candidates: Vec::new(),
            empty_support: false,
            jittered: false,
        };
        tracer.path.diagnostics = diag;
        tracer.push_segment(&state, &plan, 0.0);
        tracer.push_breakpoint(
            &state,
            vec![Event {
                index: None,
                kind: EventKind::Terminal,
            }],
            false,
        );
        tracer.path.complete = true;
        tracer.finalize()?;
        return Ok(tracer.path);
    }
    settle_or_repair(svm, &mut state, &mut diag)?;
    let budget = opts.max_events.unwrap_or(10 * n);
    let mut events_seen = 0usize;
    loop {
        let remaining = eps_max - state.eps;
        let plan = match plan_segment(svm, &state) {
            Ok(p) => p,
            Err(Error::PathDegenerate(msg)) => {
                log::warn!("{msg} at eps = {}; re-solving", state.eps);
                diag.repairs += 1;
                state = cold_state(svm, state.eps, &mut diag)?;
                settle_or_repair(svm, &mut state, &mut diag)?;
                plan_segment(svm, &state)?
            }
            Err(e) => return Err(e),
        };
        // The unconstrained solution generically has one more margin point
        // than a binding-side partition; that point arrives exactly at
        // eps_max and is absorbed by the terminal breakpoint.
        let terminal = plan.range.upper >= remaining - 1e-9 * eps_max;
        let step = plan.range.upper.min(remaining).max(0.0);
        tracer.push_segment(&state, &plan, step);
        if terminal {
            let mut last = state.clone();
            last.eps = eps_max;
            for j in 0..n {
                last.mu[j] = (last.mu[j] + plan.r[j] * step).clamp(0.0, svm.c());
            }
            last.b += plan.r0 * step;
            let unc = svm.unconstrained();
            diag.terminal_mu_gap = last
                .mu
                .iter()
                .zip(&unc.mu)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            diag.terminal_gamma = svm.gamma_at(&last.mu, eps_max * (1.0 - f64::EPSILON));
            tracer.push_breakpoint(
                &last,
                vec![Event {
                    index: None,
                    kind: EventKind::Terminal,
                }],
                false,
            );
            tracer.path.complete = true;
            break;
        }
        if events_seen >= budget {
            tracer.path.diagnostics = diag;
            tracer.finalize()?;
            return Err(Error::PathIncomplete {
                events: events_seen,
                eps: state.eps,
                partial: Box::new(tracer.path),
            });
        }
        let (next, repaired) = advance(svm, &state, &plan, step, opts, &mut diag)?;
        let events = membership_events(&state.members, &next.members);
        if !events.is_empty() {
            diag.direct_jumps += events.iter().filter(|e| e.kind.is_direct_jump()).count();
            events_seen += 1;
            log::debug!(
                "eps = {:.6e}: {}",
                next.eps,
                events
                    .iter()
                    .map(|e| format!("{}#{}", e.kind.as_str(), e.index.unwrap_or(0)))
                    .collect::<Vec<_>>()
                    .join(", ")
            );
            tracer.push_breakpoint(&next, events, repaired);
        }
        state = next;
    }
    tracer.path.diagnostics = diag;
    tracer.finalize()?;
    if opts.cross_check {
        tracer.cross_check()?;
    }
    Ok(tracer.path)
}
