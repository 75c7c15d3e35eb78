//! File contracts: solution JSON, path CSV/JSON, weight profiles and
//! labelings. CSV numbers carry 17 significant digits; JSON numbers use the
//! shortest representation that parses back to the same bits.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{group_stats, Dataset};
use crate::error::Result;
use crate::labeling::{Enumeration, LabelingWitness};
use crate::path::{GroupWelfare, SolutionPath};
use crate::solver::{
    recover_primal, BindingSide, DualSolution, FairSvm, Partition, PrimalSolution,
};
use crate::welfare::{group_welfare_exact, group_welfare_heuristic, WeightProfile};

/// Fixed-width scientific notation with 17 significant digits.
pub fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(std::io::BufReader::new(
        File::open(path)?,
    ))?)
}

/// Everything `fit` reports about one solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub mu: Vec<f64>,
    pub b: f64,
    pub gamma: f64,
    pub beta_minus: f64,
    pub beta_plus: f64,
    pub epsilon: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub objective: f64,
    pub partition: Partition,
    pub theta: Vec<f64>,
    pub cov_gap: f64,
    pub xi: Vec<f64>,
    pub eps_max: f64,
    pub side: BindingSide,
    pub kkt_violation: f64,
    pub iterations: usize,
    #[serde(with = "crate::float_serde::extended_pair_opt")]
    pub offset_interval: Option<(f64, f64)>,
    pub welfare: GroupWelfare,
    pub welfare_exact: GroupWelfare,
    pub ids: Vec<String>,
}

impl SolutionRecord {
    pub fn new(
        svm: &FairSvm,
        ds: &Dataset,
        sol: &DualSolution,
        primal: &PrimalSolution,
    ) -> Result<Self> {
        Ok(SolutionRecord {
            mu: sol.mu.clone(),
            b: primal.b,
            gamma: sol.gamma,
            beta_minus: sol.beta_minus,
            beta_plus: sol.beta_plus,
            epsilon: sol.epsilon,
            c: sol.c,
            objective: sol.objective,
            partition: sol.partition.clone(),
            theta: primal.theta.clone(),
            cov_gap: primal.cov_gap,
            xi: primal.xi.clone(),
            eps_max: svm.eps_max(),
            side: sol.side,
            kkt_violation: sol.kkt_violation,
            iterations: sol.iterations,
            offset_interval: primal.offset_interval,
            welfare: group_welfare_heuristic(&sol.mu, ds.labels(), ds.groups(), sol.c)?.into(),
            welfare_exact: group_welfare_exact(primal, ds)?.into(),
            ids: ds.ids().to_vec(),
        })
    }

    pub fn primal(&self) -> PrimalSolution {
        PrimalSolution {
            theta: self.theta.clone(),
            b: self.b,
            xi: self.xi.clone(),
            hinge_loss: self.xi.iter().sum(),
            cov_gap: self.cov_gap,
            offset_interval: self.offset_interval,
        }
    }
}

pub fn write_solution(path: &Path, record: &SolutionRecord) -> Result<()> {
    write_json(path, record)
}

/// Welfare of the unconstrained classifier, the reference for the relative
/// and absolute welfare columns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub heuristic: GroupWelfare,
    pub exact: GroupWelfare,
    pub n0: usize,
    pub n1: usize,
}

impl Baseline {
    pub fn unconstrained(svm: &FairSvm, ds: &Dataset) -> Result<Baseline> {
        let stats = group_stats(ds)?;
        let sol = svm.unconstrained();
        let primal = recover_primal(sol, ds, &stats)?;
        Ok(Baseline {
            heuristic: group_welfare_heuristic(&sol.mu, ds.labels(), ds.groups(), svm.c())?.into(),
            exact: group_welfare_exact(&primal, ds)?.into(),
            n0: stats.n0,
            n1: stats.n1,
        })
    }

    /// Percent change relative to the baseline; empty when the baseline is 0.
    fn relative(value: f64, base: f64) -> String {
        if base == 0.0 {
            String::new()
        } else {
            fmt_num(100.0 * (value - base) / base)
        }
    }

    fn cells(&self, heuristic: GroupWelfare, exact: GroupWelfare) -> Vec<String> {
        let (n0, n1) = (self.n0 as f64, self.n1 as f64);
        vec![
            fmt_num(heuristic.w0),
            fmt_num(heuristic.w1),
            fmt_num(exact.w0),
            fmt_num(exact.w1),
            Self::relative(heuristic.w0, self.heuristic.w0),
            Self::relative(heuristic.w1, self.heuristic.w1),
            Self::relative(exact.w0, self.exact.w0),
            Self::relative(exact.w1, self.exact.w1),
            fmt_num(((heuristic.w0 - self.heuristic.w0) * n0).round()),
            fmt_num(((heuristic.w1 - self.heuristic.w1) * n1).round()),
            fmt_num(((exact.w0 - self.exact.w0) * n0).round()),
            fmt_num(((exact.w1 - self.exact.w1) * n1).round()),
        ]
    }
}

pub const PATH_COLUMNS: [&str; 22] = [
    "epsilon",
    "eps_normalized",
    "objective",
    "gamma",
    "W0",
    "W1",
    "W0_exact",
    "W1_exact",
    "W0_rel_pct",
    "W1_rel_pct",
    "W0_exact_rel_pct",
    "W1_exact_rel_pct",
    "W0_abs",
    "W1_abs",
    "W0_exact_abs",
    "W1_exact_abs",
    "event_kind",
    "event_index",
    "tag",
    "tag_exact",
    "repaired",
    "segment",
];

/// One row per breakpoint, preceded by a `start` row at eps = 0. Welfare
/// columns describe the segment that begins at the row's eps; the terminal
/// row carries the unconstrained welfare. A path that ran out of budget
/// ends with an `incomplete` row.
pub fn write_path_breakpoints(path: &Path, sp: &SolutionPath, baseline: &Baseline) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(PATH_COLUMNS)?;
    let norm = |eps: f64| {
        if sp.eps_max > 0.0 {
            fmt_num(eps / sp.eps_max)
        } else {
            fmt_num(0.0)
        }
    };
    let segment_welfare = |k: usize| -> (GroupWelfare, GroupWelfare) {
        match sp.segments.get(k) {
            Some(s) => (s.welfare, s.welfare_exact),
            None => (baseline.heuristic, baseline.exact),
        }
    };

    let (h, e) = segment_welfare(0);
    let mut row = vec![
        fmt_num(sp.start.eps),
        norm(sp.start.eps),
        fmt_num(sp.start.objective),
        fmt_num(sp.start.gamma),
    ];
    row.extend(baseline.cells(h, e));
    row.extend([
        "start".into(),
        String::new(),
        String::new(),
        String::new(),
        "false".into(),
        "0".into(),
    ]);
    w.write_record(&row)?;

    for bp in &sp.breakpoints {
        // The segment starting here, if any.
        let k = sp
            .segments
            .iter()
            .position(|s| s.eps_start == bp.eps && s.eps_end > bp.eps);
        let (h, e) = match k {
            Some(k) => segment_welfare(k),
            None if bp.is_terminal() => (baseline.heuristic, baseline.exact),
            None => (
                GroupWelfare {
                    w0: bp.welfare_after.w0,
                    w1: bp.welfare_after.w1,
                },
                GroupWelfare {
                    w0: bp.exact_after.w0,
                    w1: bp.exact_after.w1,
                },
            ),
        };
        let kinds: Vec<&str> = bp.events.iter().map(|e| e.kind.as_str()).collect();
        let indices: Vec<String> = bp
            .events
            .iter()
            .filter_map(|e| e.index.map(|i| i.to_string()))
            .collect();
        let mut row = vec![
            fmt_num(bp.eps),
            norm(bp.eps),
            fmt_num(bp.objective),
            fmt_num(bp.gamma),
        ];
        row.extend(baseline.cells(h, e));
        row.extend([
            kinds.join(";"),
            indices.join(";"),
            bp.tag.as_str().to_string(),
            bp.tag_exact.as_str().to_string(),
            bp.repaired.to_string(),
            k.map_or(String::new(), |k| k.to_string()),
        ]);
        w.write_record(&row)?;
    }

    if !sp.complete {
        if let Some(last) = sp.segments.last() {
            let mut row = vec![
                fmt_num(last.eps_end),
                norm(last.eps_end),
                fmt_num(last.objective_end),
                fmt_num(last.gamma_end),
            ];
            row.extend(baseline.cells(last.welfare, last.welfare_exact));
            row.extend([
                "incomplete".into(),
                String::new(),
                String::new(),
                String::new(),
                "false".into(),
                String::new(),
            ]);
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Multiplier snapshots: the start, then one row per breakpoint.
pub fn write_path_mu(path: &Path, sp: &SolutionPath, ids: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["epsilon".to_string()];
    header.extend(ids.iter().cloned());
    w.write_record(&header)?;
    let mut write_row = |eps: f64, mu: &[f64]| -> Result<()> {
        let mut row = vec![fmt_num(eps)];
        row.extend(mu.iter().map(|&m| fmt_num(m)));
        w.write_record(&row)?;
        Ok(())
    };
    write_row(sp.start.eps, &sp.start.mu)?;
    for bp in &sp.breakpoints {
        write_row(bp.eps, &bp.mu)?;
    }
    if !sp.complete {
        if let Some(last) = sp.segments.last() {
            write_row(last.eps_end, &last.mu_at(last.eps_end))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_path_json(path: &Path, sp: &SolutionPath) -> Result<()> {
    write_json(path, sp)
}

/// Header of a weight profile export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsHeader {
    pub k: f64,
    #[serde(rename = "B")]
    pub budget: f64,
    pub utility: UtilityParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityParams {
    pub family: String,
    pub beta: f64,
    /// How the per-point slope `a_i` was derived.
    pub a_rule: String,
    /// `binary` (gains `u(1) - u(0)`) or `continuous`.
    pub variant: String,
}

/// `weights.csv` with columns `id, m_i, w_i` and its JSON header written
/// next to it as `weights.json`.
pub fn write_weights(
    csv_path: &Path,
    ids: &[String],
    profile: &WeightProfile,
    utility: UtilityParams,
) -> Result<()> {
    let mut w = csv::Writer::from_path(csv_path)?;
    w.write_record(["id", "m_i", "w_i"])?;
    for ((id, m), wt) in ids.iter().zip(&profile.m).zip(&profile.w) {
        w.write_record([id.clone(), fmt_num(*m), fmt_num(*wt)])?;
    }
    w.flush()?;
    let header = WeightsHeader {
        k: profile.k,
        budget: profile.budget,
        utility,
    };
    write_json(&csv_path.with_extension("json"), &header)
}

/// Sign vectors, one row per labeling, one column per point id.
pub fn write_labelings(path: &Path, ids: &[String], labelings: &[LabelingWitness]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(ids)?;
    for l in labelings {
        w.write_record(l.signs.iter().map(|s| if *s > 0 { "1" } else { "-1" }))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessFile {
    pub n: usize,
    pub d: usize,
    pub count: usize,
    pub cover_prediction: u128,
    pub perturbed: bool,
    pub work: usize,
    /// In the same order as the rows of `labelings.csv`.
    pub witnesses: Vec<WitnessRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessRecord {
    pub theta: Vec<f64>,
    pub b: f64,
    pub margin: f64,
}

pub fn write_witnesses(
    path: &Path,
    e: &Enumeration,
    n: usize,
    d: usize,
    perturbed: bool,
) -> Result<()> {
    let file = WitnessFile {
        n,
        d,
        count: e.count(),
        cover_prediction: crate::labeling::cover_count(n, d),
        perturbed,
        work: e.work,
        witnesses: e
            .labelings
            .iter()
            .map(|l| WitnessRecord {
                theta: l.theta.clone(),
                b: l.b,
                margin: l.margin,
            })
            .collect(),
    };
    write_json(path, &file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::standardize;
    use crate::path::trace_path;
    use crate::synth::{two_gaussians, GaussianSpec};
    use crate::SolverOptions;

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(fmt_num(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_num(-2.0), "-2.0000000000000000e0");
        for v in [0.1, 1.0 / 3.0, 1e-300, 123456.789, -7.25e17] {
            assert_eq!(fmt_num(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
        assert_eq!(fmt_num(f64::NEG_INFINITY), "-inf");
    }

    #[test]
    fn path_json_round_trips_exactly() {
        let ds = standardize(
            &two_gaussians(
                &GaussianSpec {
                    n: 25,
                    ..Default::default()
                },
                3,
            )
            .unwrap(),
        )
        .unwrap();
        let sp = trace_path(&ds, 1.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("path.json");
        write_path_json(&file, &sp).unwrap();
        let back: SolutionPath = read_json(&file).unwrap();
        assert_eq!(back, sp);
    }

    #[test]
    fn breakpoint_csv_has_one_row_per_breakpoint_plus_start() {
        let ds = standardize(
            &two_gaussians(
                &GaussianSpec {
                    n: 25,
                    ..Default::default()
                },
                5,
            )
            .unwrap(),
        )
        .unwrap();
        let svm = FairSvm::new(&ds, 1.0, SolverOptions::default()).unwrap();
        let sp = crate::path::trace_path_with(&svm, &ds, &Default::default()).unwrap();
        let baseline = Baseline::unconstrained(&svm, &ds).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("b.csv");
        write_path_breakpoints(&file, &sp, &baseline).unwrap();
        let mut r = csv::Reader::from_path(&file).unwrap();
        assert_eq!(
            r.headers().unwrap().iter().collect::<Vec<_>>(),
            PATH_COLUMNS.to_vec()
        );
        let rows: Vec<csv::StringRecord> = r.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), sp.breakpoints.len() + 1);
        let last = rows.last().unwrap();
        assert_eq!(&last[16], "terminal");
        // The terminal row reports the baseline: zero change.
        assert_eq!(last[8].parse::<f64>().unwrap_or(0.0), 0.0);
        assert_eq!(last[12].parse::<f64>().unwrap(), 0.0);
    }

    #[test]
    fn solution_record_round_trips() {
        let ds = standardize(
            &two_gaussians(
                &GaussianSpec {
                    n: 20,
                    ..Default::default()
                },
                1,
            )
            .unwrap(),
        )
        .unwrap();
        let svm = FairSvm::new(&ds, 1.0, SolverOptions::default()).unwrap();
        let sol = svm.solve(0.1 * svm.eps_max()).unwrap();
        let primal = recover_primal(&sol, &ds, &group_stats(&ds).unwrap()).unwrap();
        let rec = SolutionRecord::new(&svm, &ds, &sol, &primal).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("solution.json");
        write_solution(&file, &rec).unwrap();
        let back: SolutionRecord = read_json(&file).unwrap();
        assert_eq!(back, rec);
        assert_eq!(back.primal().theta, primal.theta);
    }
}
