//! Command-line front end: `fit`, `path`, `weights` and `enumerate`.
//!
//! Every flag can also come from a `key = value` file given with
//! `--config`; keys are the long flag names without dashes. Flags on the
//! command line win.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::dataset::{group_stats, load_dataset, load_points, standardize, Dataset, Schema};
use crate::error::{Error, Result};
use crate::export::{
    read_json, write_labelings, write_path_breakpoints, write_path_json, write_path_mu,
    write_solution, write_weights, write_witnesses, Baseline, SolutionRecord, UtilityParams,
};
use crate::labeling::{cover_count, enumerate_with_perturbation, PointCloud};
use crate::path::{trace_path_with, PathOptions, SolutionPath};
use crate::solver::{recover_primal, FairSvm, SolverOptions};
use crate::welfare::{binary_implied_weights, implied_weights, QuadraticUtility};

#[derive(Debug, Parser)]
#[command(
    name = "fairpath",
    version,
    about = "Fairness-constrained SVM paths, welfare and labelings"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve at one tolerance and write solution.json.
    Fit(CommonArgs),
    /// Trace the full path and write path_breakpoints.csv, path_mu.csv, path.json.
    Path(PathArgs),
    /// Implied welfare weights of a fitted classifier, written to weights.csv.
    Weights(WeightsArgs),
    /// Every hyperplane labeling of the points, written to labelings.csv.
    Enumerate(CommonArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// key = value file supplying any of the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Delimited data file (comma or tab) with a header row.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Column roles and encodings.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Box bound of the dual.
    #[arg(long = "C")]
    pub c: Option<f64>,
    /// Fairness tolerance.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Read --eps as a fraction of the data's eps_max.
    #[arg(long)]
    pub eps_max_auto: bool,
    /// Solver stopping tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct PathArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Event budget; defaults to 10 n.
    #[arg(long)]
    pub max_events: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Variant {
    Binary,
    Continuous,
}

#[derive(Debug, Clone, Default, Args)]
pub struct WeightsArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Fitted solution; defaults to <out>/solution.json.
    #[arg(long)]
    pub solution: Option<PathBuf>,
    /// Curvature of the quadratic utility.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long, value_enum)]
    pub variant: Option<Variant>,
}

/// Fully resolved settings of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: PathBuf,
    pub schema: Option<PathBuf>,
    pub c: f64,
    pub eps: Option<f64>,
    pub eps_max_auto: bool,
    pub tol: f64,
    pub seed: u64,
    pub threads: usize,
    pub out: PathBuf,
    pub max_events: Option<usize>,
    pub solution: Option<PathBuf>,
    pub beta: f64,
    pub variant: Variant,
}

fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)?;
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            row: lineno + 1,
            message: format!("expected key = value in {}", path.display()),
        })?;
        let key = k.trim().trim_start_matches("--").replace('_', "-");
        map.insert(key, v.trim().to_string());
    }
    Ok(map)
}

struct Lookup {
    file: BTreeMap<String, String>,
    base: PathBuf,
}

impl Lookup {
    fn get<T: std::str::FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| {
                Error::InvalidParameter(format!("config key {key}: cannot parse {v:?}"))
            }),
        }
    }

    /// Paths in the config file are relative to the file itself.
    fn path(&self, flag: Option<PathBuf>, key: &str) -> Option<PathBuf> {
        flag.or_else(|| self.file.get(key).map(|v| self.base.join(v)))
    }

    fn flag(&self, flag: bool, key: &str) -> Result<bool> {
        if flag {
            return Ok(true);
        }
        match self.file.get(key).map(String::as_str) {
            None | Some("false") | Some("0") | Some("no") => Ok(false),
            Some("true") | Some("1") | Some("yes") | Some("") => Ok(true),
            Some(v) => Err(Error::InvalidParameter(format!(
                "config key {key}: expected a boolean, got {v:?}"
            ))),
        }
    }
}

impl RunConfig {
    pub fn resolve(
        common: &CommonArgs,
        max_events: Option<usize>,
        weights: Option<&WeightsArgs>,
    ) -> Result<RunConfig> {
        let (file, base) = match &common.config {
            Some(p) => (
                parse_config_file(p)?,
                p.parent().map(Path::to_path_buf).unwrap_or_default(),
            ),
            None => (BTreeMap::new(), PathBuf::new()),
        };
        let l = Lookup { file, base };
        let data = l
            .path(common.data.clone(), "data")
            .ok_or_else(|| Error::InvalidParameter("--data is required".into()))?;
        let variant = match weights.and_then(|w| w.variant) {
            Some(v) => v,
            None => match l.file.get("variant").map(String::as_str) {
                None | Some("binary") => Variant::Binary,
                Some("continuous") => Variant::Continuous,
                Some(v) => return Err(Error::InvalidParameter(format!("unknown variant {v:?}"))),
            },
        };
        let cfg = RunConfig {
            data,
            schema: l.path(common.schema.clone(), "schema"),
            c: l.get(common.c, "C")?.unwrap_or(1.0),
            eps: l.get(common.eps, "eps")?,
            eps_max_auto: l.flag(common.eps_max_auto, "eps-max-auto")?,
            tol: l
                .get(common.tol, "tol")?
                .unwrap_or(SolverOptions::default().tol),
            seed: l.get(common.seed, "seed")?.unwrap_or(0),
            threads: l.get(common.threads, "threads")?.unwrap_or(1),
            out: l
                .path(common.out.clone(), "out")
                .unwrap_or_else(|| PathBuf::from(".")),
            max_events: l.get(max_events, "max-events")?,
            solution: l.path(weights.and_then(|w| w.solution.clone()), "solution"),
            beta: l.get(weights.and_then(|w| w.beta), "beta")?.unwrap_or(1.0),
            variant,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "C must be positive, got {}",
                self.c
            )));
        }
        if let Some(e) = self.eps {
            if !(e >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "eps must be nonnegative, got {e}"
                )));
            }
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.threads == 0 {
            return Err(Error::InvalidParameter("threads must be at least 1".into()));
        }
        Ok(())
    }

    fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            tol: self.tol,
            ..Default::default()
        }
    }

    fn schema(&self) -> Result<Schema> {
        match &self.schema {
            Some(p) => Schema::from_file(p),
            None => Err(Error::Schema(
                "--schema is required for this command".into(),
            )),
        }
    }

    fn dataset(&self) -> Result<Dataset> {
        let ds = load_dataset(File::open(&self.data)?, &self.schema()?)?;
        standardize(&ds)
    }

    fn out_dir(&self) -> Result<&Path> {
        std::fs::create_dir_all(&self.out)?;
        Ok(&self.out)
    }

    /// The tolerance in covariance units.
    fn epsilon(&self, svm: &FairSvm) -> Result<f64> {
        let eps = self
            .eps
            .ok_or_else(|| Error::InvalidParameter("--eps is required for fit".into()))?;
        Ok(if self.eps_max_auto {
            eps * svm.eps_max()
        } else {
            eps
        })
    }
}

pub fn cmd_fit(cfg: &RunConfig) -> Result<SolutionRecord> {
    let ds = cfg.dataset()?;
    let svm = FairSvm::new(&ds, cfg.c, cfg.solver_options())?;
    let eps = cfg.epsilon(&svm)?;
    let sol = svm.solve(eps)?;
    let primal = recover_primal(&sol, &ds, &group_stats(&ds)?)?;
    let record = SolutionRecord::new(&svm, &ds, &sol, &primal)?;
    write_solution(&cfg.out_dir()?.join("solution.json"), &record)?;
    println!(
        "eps = {:.6e} (eps_max = {:.6e}), objective = {:.10e}, gamma = {:.6e}, |F|/|S|/|E| = {}/{}/{}",
        eps,
        svm.eps_max(),
        sol.objective,
        sol.gamma,
        sol.partition.free.len(),
        sol.partition.support.len(),
        sol.partition.error.len()
    );
    Ok(record)
}

fn write_path_files(
    dir: &Path,
    sp: &SolutionPath,
    baseline: &Baseline,
    ds: &Dataset,
) -> Result<()> {
    write_path_breakpoints(&dir.join("path_breakpoints.csv"), sp, baseline)?;
    write_path_mu(&dir.join("path_mu.csv"), sp, ds.ids())?;
    write_path_json(&dir.join("path.json"), sp)
}

pub fn cmd_path(cfg: &RunConfig) -> Result<SolutionPath> {
    let ds = cfg.dataset()?;
    let svm = FairSvm::new(&ds, cfg.c, cfg.solver_options())?;
    let baseline = Baseline::unconstrained(&svm, &ds)?;
    let opts = PathOptions {
        max_events: cfg.max_events,
        ..Default::default()
    };
    let dir = cfg.out_dir()?;
    match trace_path_with(&svm, &ds, &opts) {
        Ok(sp) => {
            write_path_files(dir, &sp, &baseline, &ds)?;
            println!(
                "eps_max = {:.6e}, {} breakpoints, objective {:.10e} -> {:.10e}",
                sp.eps_max,
                sp.breakpoints.len(),
                sp.start.objective,
                sp.breakpoints
                    .last()
                    .map_or(sp.start.objective, |b| b.objective)
            );
            Ok(sp)
        }
        Err(Error::PathIncomplete {
            events,
            eps,
            partial,
        }) => {
            write_path_files(dir, &partial, &baseline, &ds)?;
            eprintln!("partial path written (complete = false)");
            Err(Error::PathIncomplete {
                events,
                eps,
                partial,
            })
        }
        Err(e) => Err(e),
    }
}

pub fn cmd_weights(cfg: &RunConfig) -> Result<crate::welfare::WeightProfile> {
    let ds = cfg.dataset()?;
    let solution_path = cfg
        .solution
        .clone()
        .unwrap_or_else(|| cfg.out.join("solution.json"));
    let record: SolutionRecord = read_json(&solution_path)?;
    if record.mu.len() != ds.n() {
        return Err(Error::InvalidData(format!(
            "solution has {} points, data has {}",
            record.mu.len(),
            ds.n()
        )));
    }
    let allocation: Vec<bool> = record
        .primal()
        .predictions(&ds)
        .iter()
        .map(|&p| p > 0)
        .collect();
    let budget = allocation.iter().filter(|&&a| a).count();
    let utility = QuadraticUtility::from_dataset(&ds, cfg.beta)?;
    let (profile, variant) = match cfg.variant {
        Variant::Binary => (binary_implied_weights(&utility, budget)?, "binary"),
        Variant::Continuous => {
            let h: Vec<f64> = allocation
                .iter()
                .map(|&a| if a { 1.0 } else { 0.0 })
                .collect();
            (
                implied_weights(&utility.marginals(&h), budget as f64)?,
                "continuous",
            )
        }
    };
    let params = UtilityParams {
        family: "quadratic".into(),
        beta: cfg.beta,
        a_rule: "1 + |x_i| on standardized features".into(),
        variant: variant.into(),
    };
    write_weights(
        &cfg.out_dir()?.join("weights.csv"),
        ds.ids(),
        &profile,
        params,
    )?;
    println!("B = {budget}, k = {:.10e}", profile.k);
    Ok(profile)
}

pub fn cmd_enumerate(cfg: &RunConfig) -> Result<usize> {
    let (ids, points) = match &cfg.schema {
        Some(p) => load_points(File::open(&cfg.data)?, &Schema::from_file(p)?)?,
        None => {
            // Without a schema every column is a feature.
            let header = csv::ReaderBuilder::new()
                .delimiter(sniff_delimiter(&cfg.data)?)
                .from_path(&cfg.data)?
                .headers()?
                .clone();
            let schema = Schema {
                features: header.iter().map(|h| h.trim().to_string()).collect(),
                ..Default::default()
            };
            load_points(File::open(&cfg.data)?, &schema)?
        }
    };
    let (n, d) = points.shape();
    if n <= d {
        return Err(Error::InvalidParameter(format!(
            "need more points than dimensions, got n = {n}, d = {d}"
        )));
    }
    let cloud = PointCloud::new(points)?;
    let (used, e) = enumerate_with_perturbation(&cloud, cfg.seed)?;
    let dir = cfg.out_dir()?;
    write_labelings(&dir.join("labelings.csv"), &ids, &e.labelings)?;
    write_witnesses(&dir.join("witnesses.json"), &e, n, d, used.was_perturbed())?;
    println!(
        "labelings: {}  cover formula: {}",
        e.count(),
        cover_count(n, d)
    );
    Ok(e.count())
}

fn sniff_delimiter(path: &Path) -> Result<u8> {
    let text = std::fs::read_to_string(path)?;
    Ok(if text.lines().next().unwrap_or("").contains('\t') {
        b'\t'
    } else {
        b','
    })
}

fn dispatch(cli: &Cli) -> Result<()> {
    let cfg = match &cli.command {
        Command::Fit(a) | Command::Enumerate(a) => RunConfig::resolve(a, None, None)?,
        Command::Path(a) => RunConfig::resolve(&a.common, a.max_events, None)?,
        Command::Weights(a) => RunConfig::resolve(&a.common, None, Some(a))?,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::Fit(_) => cmd_fit(&cfg).map(drop),
        Command::Path(_) => cmd_path(&cfg).map(drop),
        Command::Weights(_) => cmd_weights(&cfg).map(drop),
        Command::Enumerate(_) => cmd_enumerate(&cfg).map(drop),
    })
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
