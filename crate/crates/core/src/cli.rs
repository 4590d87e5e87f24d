//! Batch command-line front end.
//!
//! Every command writes one table, as CSV or as a JSON envelope tagged with
//! [`SCHEMA`], to `--out` (atomically) or stdout, and prints a one-line
//! summary on stderr. Column orders are documented under `schemas/`.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::classify::{self, ClassificationVerdict, Verdict};
use crate::dist::{self, DistributionSpec, Family};
use crate::error::{Error, Result};
use crate::exact;
use crate::geom::{self, GeometryReport};
use crate::mc::{self, ProbeMode, TailMethod};
use crate::survival::SurvivalCurve;

pub const SCHEMA: &str = "tstatlab/v1";

pub const EXIT_OK: i32 = 0;
/// A `geometry` run whose checks did not all pass.
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "tstatlab", version, about = "Moments and tails of Student's t-statistic")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    Simulate,
    Moments,
    Classify,
    Concentration,
    Geometry,
    Convergence,
    Neardeg,
    Subgaussian,
}

impl CommandKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CommandKind::Simulate => "simulate",
            CommandKind::Moments => "moments",
            CommandKind::Classify => "classify",
            CommandKind::Concentration => "concentration",
            CommandKind::Geometry => "geometry",
            CommandKind::Convergence => "convergence",
            CommandKind::Neardeg => "neardeg",
            CommandKind::Subgaussian => "subgaussian",
        }
    }

    fn stochastic(self) -> bool {
        matches!(self, CommandKind::Simulate | CommandKind::Convergence | CommandKind::Neardeg | CommandKind::Subgaussian)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-sample t, U* and sums.
    Simulate(Flags),
    /// E|T_n|^r, exactly for finite support or by Monte Carlo.
    Moments(Flags),
    /// Finite / infinite / indeterminate verdicts with evidence.
    Classify(Flags),
    /// q(h) and Q(h) on an h grid with exponent fits.
    Concentration(Flags),
    /// Numerical checks of the near-diagonal bounds on n - u_n.
    Geometry(Flags),
    /// E|T_n|^r along an n grid against the normal limit.
    Convergence(Flags),
    /// P(n - U* < h^2) on an h grid.
    Neardeg(Flags),
    /// Empirical MGF of S/V and the fitted sub-Gaussian constant.
    Subgaussian(Flags),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Exact when the law has finite support and fits the budget, else Monte Carlo.
    Auto,
    Exact,
    Mc,
    /// Monte Carlo survival curve of U* fed to the survival integral.
    Survival,
}

#[derive(Debug, Clone, Args)]
pub struct Flags {
    /// Distribution spec, a JSON object with a "kind" field.
    #[arg(long)]
    pub dist: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    /// "a..b" (inclusive) or a comma list.
    #[arg(long)]
    pub n_grid: Option<String>,
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long)]
    pub r_grid: Option<String>,
    #[arg(long, default_value_t = 100_000)]
    pub count: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, env = "TSTATLAB_THREADS")]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Defaults to json for classify, csv otherwise.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub h_grid: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub t_grid: Option<String>,
    /// geometry: lemma1 | lemma2. neardeg: direct | stratified.
    #[arg(long)]
    pub mode: Option<String>,
    /// Shorthand for `--mode stratified`.
    #[arg(long)]
    pub stratified: bool,
    #[arg(long, default_value_t = 1.0)]
    pub c2: f64,
    #[arg(long, value_enum, default_value_t = Method::Auto)]
    pub method: Method,
}

/// A validated run request.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub command: CommandKind,
    pub dist: Option<DistributionSpec>,
    pub n_grid: Vec<usize>,
    pub r_grid: Vec<f64>,
    pub h_grid: Vec<f64>,
    pub t_grid: Vec<f64>,
    pub count: usize,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub output_path: Option<PathBuf>,
    pub format: Format,
    pub mode: Option<String>,
    pub c2: f64,
    pub method: Method,
}

/// Rendered output and the stderr summary line.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub body: Vec<u8>,
    pub summary: String,
    pub all_checks_passed: bool,
}

/// JSON wrapper around every table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub schema: String,
    pub command: CommandKind,
    pub seed: Option<u64>,
    pub data: T,
}

/// Reads and validates a distribution spec file.
pub fn parse_dist_file(path: &Path) -> Result<DistributionSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidDistribution(format!("cannot read {}: {e}", path.display())))?;
    parse_dist_str(&text)
}

pub fn parse_dist_str(text: &str) -> Result<DistributionSpec> {
    let family: Family = serde_json::from_str(text).map_err(|e| Error::InvalidDistribution(e.to_string()))?;
    DistributionSpec::try_from(family)
}

/// `"2..6"` (inclusive) or `"2,3,5"`.
pub fn parse_usize_grid(text: &str) -> Result<Vec<usize>> {
    let bad = || Error::InvalidArgument(format!("cannot parse integer grid {text:?}"));
    if let Some((a, b)) = text.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().parse().map_err(|_| bad())?;
        if b < a {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

pub fn parse_f64_grid(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::InvalidArgument(format!("cannot parse real grid {text:?}")))
        })
        .collect()
}

fn sorted_nonempty<T: PartialOrd>(name: &str, grid: &[T]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument(format!("{name} grid is empty")));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(format!("{name} grid must be strictly increasing")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_flags(command: CommandKind, f: Flags) -> Result<Self> {
        let dist = f.dist.as_deref().map(parse_dist_file).transpose()?;
        if dist.is_none() && command != CommandKind::Geometry {
            return Err(Error::InvalidArgument(format!("{} needs --dist", command.as_str())));
        }
        let n_grid = match (&f.n_grid, f.n) {
            (Some(g), _) => parse_usize_grid(g)?,
            (None, Some(n)) => vec![n],
            (None, None) => match command {
                CommandKind::Geometry => (2..=geom::MAX_N).collect(),
                CommandKind::Concentration => vec![],
                _ => return Err(Error::InvalidArgument("need --n or --n-grid".into())),
            },
        };
        let r_grid = match (&f.r_grid, f.r) {
            (Some(g), _) => parse_f64_grid(g)?,
            (None, Some(r)) => vec![r],
            (None, None) => vec![],
        };
        let h_grid = match &f.h_grid {
            Some(g) => parse_f64_grid(g)?,
            None if command == CommandKind::Geometry => vec![0.1, 0.3, 0.5, 0.7, 0.9],
            None => dist::default_h_grid().into_iter().rev().collect(),
        };
        let t_grid = match &f.t_grid {
            Some(g) => parse_f64_grid(g)?,
            None => (-8..=8).map(|i| i as f64 * 0.25).collect(),
        };
        let mode = if f.stratified { Some("stratified".to_string()) } else { f.mode };
        let cfg = Self {
            command,
            dist,
            n_grid,
            r_grid,
            h_grid,
            t_grid,
            count: f.count,
            seed: f.seed,
            threads: f.threads,
            output_path: f.out,
            format: f.format.unwrap_or(if command == CommandKind::Classify { Format::Json } else { Format::Csv }),
            mode,
            c2: f.c2,
            method: f.method,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let c = self.command;
        if c != CommandKind::Concentration {
            sorted_nonempty("n", &self.n_grid)?;
        }
        if matches!(c, CommandKind::Moments | CommandKind::Classify | CommandKind::Convergence) {
            sorted_nonempty("r", &self.r_grid)?;
        }
        if c == CommandKind::Convergence && self.r_grid.len() != 1 {
            return Err(Error::InvalidArgument("convergence takes a single --r".into()));
        }
        if matches!(c, CommandKind::Concentration | CommandKind::Geometry | CommandKind::Neardeg) {
            sorted_nonempty("h", &self.h_grid)?;
        }
        if c == CommandKind::Subgaussian {
            sorted_nonempty("t", &self.t_grid)?;
        }
        let needs_seed = c.stochastic() || (c == CommandKind::Moments && self.method != Method::Exact);
        if needs_seed && self.seed.is_none() && !(c == CommandKind::Moments && self.exact_possible()) {
            return Err(Error::InvalidArgument(format!("{} needs --seed", c.as_str())));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidArgument("--threads must be >= 1".into()));
        }
        Ok(())
    }

    fn exact_possible(&self) -> bool {
        self.method == Method::Auto && self.dist.as_ref().is_some_and(|d| d.finite_atoms().is_some())
    }

    fn dist(&self) -> &DistributionSpec {
        self.dist.as_ref().expect("validated")
    }

    fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| Error::InvalidArgument(format!("{} needs --seed", self.command.as_str())))
    }
}

/// Runs a validated config inside a pool capped at `threads`.
pub fn run(config: &ExperimentConfig) -> Result<RunOutput> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = config.threads {
        pool = pool.num_threads(t);
    }
    let pool = pool.build().map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(config))
}

/// Writes `bytes` to `path` through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::BudgetExceeded { .. } => EXIT_BUDGET,
        _ => EXIT_INVALID,
    }
}

/// Parses `args`, runs, writes output; returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    let (kind, flags) = cli.command.split();
    let result = ExperimentConfig::from_flags(kind, flags).and_then(|cfg| {
        let out = run(&cfg)?;
        match &cfg.output_path {
            Some(p) => write_atomic(p, &out.body)?,
            None => std::io::stdout().write_all(&out.body)?,
        }
        Ok(out)
    });
    match result {
        Ok(out) => {
            eprintln!("{}", out.summary);
            if out.all_checks_passed {
                EXIT_OK
            } else {
                EXIT_CHECK_FAILED
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

impl Command {
    pub fn split(self) -> (CommandKind, Flags) {
        match self {
            Command::Simulate(f) => (CommandKind::Simulate, f),
            Command::Moments(f) => (CommandKind::Moments, f),
            Command::Classify(f) => (CommandKind::Classify, f),
            Command::Concentration(f) => (CommandKind::Concentration, f),
            Command::Geometry(f) => (CommandKind::Geometry, f),
            Command::Convergence(f) => (CommandKind::Convergence, f),
            Command::Neardeg(f) => (CommandKind::Neardeg, f),
            Command::Subgaussian(f) => (CommandKind::Subgaussian, f),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateRow {
    pub index: usize,
    pub n: usize,
    pub t: f64,
    pub u_star: f64,
    pub sum: f64,
    pub vnorm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub n: usize,
    pub r: f64,
    pub method: String,
    pub value: f64,
    pub std_error: Option<f64>,
    pub divergence_flag: Option<bool>,
    pub sample_count: Option<usize>,
    pub tail_index: Option<f64>,
    pub tail_ci_low: Option<f64>,
    pub tail_ci_high: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyRow {
    pub n: usize,
    pub r: f64,
    pub verdict: String,
    pub r_star_low: Option<f64>,
    pub r_star_high: Option<f64>,
    pub citations: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationRow {
    pub h: f64,
    pub q: f64,
    pub big_q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryRow {
    pub n: usize,
    pub h: f64,
    pub mode: String,
    pub numeric: f64,
    pub analytic: f64,
    pub gap: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceCsvRow {
    pub n: usize,
    pub r: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub divergence_flag: bool,
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearDegRow {
    pub n: usize,
    pub h: f64,
    pub mode: String,
    pub probability: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub hits: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubGaussianRow {
    pub n: usize,
    pub t: f64,
    pub mgf: f64,
    pub std_error: f64,
    pub c_n: f64,
    pub envelope: f64,
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
    }
    w.into_inner().map_err(|e| Error::InvalidArgument(format!("csv: {e}")))
}

fn to_json<T: Serialize>(cfg: &ExperimentConfig, data: &T) -> Result<Vec<u8>> {
    let env = Envelope { schema: SCHEMA.to_string(), command: cfg.command, seed: cfg.seed, data };
    let mut bytes = serde_json::to_vec_pretty(&env)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn render<T: Serialize, R: Serialize>(cfg: &ExperimentConfig, rows: &[R], data: &T) -> Result<Vec<u8>> {
    match cfg.format {
        Format::Csv => to_csv(rows),
        Format::Json => to_json(cfg, data),
    }
}

fn dispatch(cfg: &ExperimentConfig) -> Result<RunOutput> {
    match cfg.command {
        CommandKind::Simulate => run_simulate(cfg),
        CommandKind::Moments => run_moments(cfg),
        CommandKind::Classify => run_classify(cfg),
        CommandKind::Concentration => run_concentration(cfg),
        CommandKind::Geometry => run_geometry(cfg),
        CommandKind::Convergence => run_convergence(cfg),
        CommandKind::Neardeg => run_neardeg(cfg),
        CommandKind::Subgaussian => run_subgaussian(cfg),
    }
}

fn ok(body: Vec<u8>, summary: String) -> Result<RunOutput> {
    Ok(RunOutput { body, summary, all_checks_passed: true })
}

fn run_simulate(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let seed = cfg.seed()?;
    let mut rows = Vec::new();
    for &n in &cfg.n_grid {
        let sims = mc::simulate_tstat(cfg.dist(), n, cfg.count, seed)?;
        rows.extend(sims.iter().enumerate().map(|(index, s)| SimulateRow {
            index,
            n,
            t: s.t,
            u_star: s.u_star,
            sum: s.sum,
            vnorm: s.vnorm,
        }));
    }
    let zeros = rows.iter().filter(|r| r.t == 0.0).count();
    let summary = format!("simulate: {} samples of {}, {} with t = 0", rows.len(), cfg.dist().label(), zeros);
    ok(render(cfg, &rows, &rows)?, summary)
}

fn run_moments(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let dist = cfg.dist();
    let mut rows = Vec::new();
    for &n in &cfg.n_grid {
        let exact_route = match cfg.method {
            Method::Exact => true,
            Method::Auto => {
                dist.finite_atoms().is_some_and(|a| exact::multiset_count(a.len(), n) <= exact::ENUMERATION_BUDGET)
            }
            _ => false,
        };
        if exact_route {
            for &r in &cfg.r_grid {
                let e = exact::exact_tmoment(dist, n, r)?;
                rows.push(MomentRow {
                    n,
                    r,
                    method: "exact".into(),
                    value: e.value,
                    std_error: None,
                    divergence_flag: None,
                    sample_count: None,
                    tail_index: None,
                    tail_ci_low: None,
                    tail_ci_high: None,
                });
            }
            continue;
        }
        let sims = mc::simulate_tstat(dist, n, cfg.count, cfg.seed()?)?;
        if cfg.method == Method::Survival {
            let u: Vec<f64> = sims.iter().map(|s| s.u_star).collect();
            let curve = SurvivalCurve::from_ustar(n, &u)?;
            for &r in &cfg.r_grid {
                let m = classify::moment_via_survival(&curve, r)?;
                rows.push(MomentRow {
                    n,
                    r,
                    method: "survival".into(),
                    value: m.value,
                    std_error: None,
                    divergence_flag: None,
                    sample_count: Some(sims.len()),
                    tail_index: None,
                    tail_ci_low: None,
                    tail_ci_high: None,
                });
            }
            continue;
        }
        let ts: Vec<f64> = sims.iter().map(|s| s.t).collect();
        let tail = mc::estimate_tail_index(&ts, mc::default_tail_k(ts.len()), TailMethod::Hill).ok();
        for &r in &cfg.r_grid {
            let m = mc::estimate_moment(&sims, r)?;
            rows.push(MomentRow {
                n,
                r,
                method: "mc".into(),
                value: m.value,
                std_error: Some(m.std_error),
                divergence_flag: Some(m.divergence_flag),
                sample_count: Some(m.sample_count),
                tail_index: tail.as_ref().map(|t| t.index),
                tail_ci_low: tail.as_ref().map(|t| t.ci_low),
                tail_ci_high: tail.as_ref().map(|t| t.ci_high),
            });
        }
    }
    let flagged = rows.iter().filter(|r| r.divergence_flag == Some(true)).count();
    let summary = format!("moments: {} rows for {}, {} flagged divergent", rows.len(), dist.label(), flagged);
    ok(render(cfg, &rows, &rows)?, summary)
}

fn verdict_name(v: &Verdict) -> &'static str {
    match v {
        Verdict::Finite => "finite",
        Verdict::Infinite => "infinite",
        Verdict::Indeterminate { .. } => "indeterminate",
    }
}

fn citations(v: &ClassificationVerdict) -> String {
    let mut c: Vec<&str> = v.evidence.iter().map(|e| e.citation.as_str()).collect();
    c.dedup();
    c.join("; ")
}

fn run_classify(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let verdicts = classify::classify_grid(cfg.dist(), &cfg.n_grid, &cfg.r_grid)?;
    let rows: Vec<ClassifyRow> = verdicts
        .iter()
        .map(|v| {
            let (lo, hi) = match v.verdict {
                Verdict::Indeterminate { r_star_low, r_star_high } => (Some(r_star_low), Some(r_star_high)),
                _ => (None, None),
            };
            ClassifyRow {
                n: v.n,
                r: v.r,
                verdict: verdict_name(&v.verdict).into(),
                r_star_low: lo,
                r_star_high: hi,
                citations: citations(v),
            }
        })
        .collect();
    let summary = match verdicts.as_slice() {
        [one] => format!("classify: n={} r={} {} [{}]", one.n, one.r, verdict_name(&one.verdict), citations(one)),
        many => {
            let mut cites: Vec<String> = many.iter().flat_map(|v| v.evidence.iter().map(|e| e.citation.clone())).collect();
            cites.sort();
            cites.dedup();
            format!("classify: {} cells [{}]", many.len(), cites.join("; "))
        }
    };
    ok(render(cfg, &rows, &verdicts)?, summary)
}

fn run_concentration(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let profile = cfg.dist().concentration_profile(&cfg.h_grid)?;
    let rows: Vec<ConcentrationRow> = profile
        .h_grid
        .iter()
        .zip(&profile.q_values)
        .zip(&profile.big_q_values)
        .map(|((&h, &q), &big_q)| ConcentrationRow { h, q, big_q })
        .collect();
    let fit = |f: &Option<dist::LambdaFit>| f.map_or("n/a".to_string(), |f| format!("{:.4}", f.slope));
    let summary = format!(
        "concentration: {} points, lambda(q) = {}, lambda(Q) = {}",
        rows.len(),
        fit(&profile.fit_q),
        fit(&profile.fit_big_q)
    );
    ok(render(cfg, &rows, &profile)?, summary)
}

fn run_geometry(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let reports: Vec<GeometryReport> = match cfg.mode.as_deref().unwrap_or("lemma1") {
        "lemma1" | "lemma1Min" => geom::lemma1_grid(&cfg.n_grid, &cfg.h_grid)?,
        "lemma2" | "lemma2CornerMax" => geom::lemma2_grid(&cfg.n_grid, &cfg.h_grid, cfg.c2)?,
        other => return Err(Error::InvalidArgument(format!("unknown geometry mode {other:?}"))),
    };
    let rows: Vec<GeometryRow> = reports
        .iter()
        .map(|r| GeometryRow {
            n: r.n,
            h: r.h,
            mode: r.mode.as_str().into(),
            numeric: r.numeric_extremum,
            analytic: r.analytic_extremum,
            gap: r.gap,
            pass: r.pass,
        })
        .collect();
    let failed = rows.iter().filter(|r| !r.pass).count();
    let max_gap = rows.iter().map(|r| r.gap).fold(0.0, f64::max);
    let summary = format!("geometry: {} cells, {} failed, max gap {:e}", rows.len(), failed, max_gap);
    Ok(RunOutput { body: render(cfg, &rows, &reports)?, summary, all_checks_passed: failed == 0 })
}

fn run_convergence(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let r = cfg.r_grid[0];
    let report = classify::convergence_experiment(cfg.dist(), r, &cfg.n_grid, cfg.count, cfg.seed()?)?;
    let rows: Vec<ConvergenceCsvRow> = report
        .rows
        .iter()
        .map(|row| ConvergenceCsvRow {
            n: row.n,
            r,
            estimate: row.estimate,
            std_error: row.std_error,
            divergence_flag: row.divergence_flag,
            limit: report.limit,
        })
        .collect();
    let summary = format!(
        "convergence: r={r}, limit {:.6}, max |dev| over top quartile {:.6}",
        report.limit, report.max_abs_dev_top_quartile
    );
    ok(render(cfg, &rows, &report)?, summary)
}

fn run_neardeg(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let mode = match cfg.mode.as_deref().unwrap_or("direct") {
        "direct" => ProbeMode::Direct,
        "stratified" => ProbeMode::Stratified,
        other => return Err(Error::InvalidArgument(format!("unknown probe mode {other:?}"))),
    };
    let seed = cfg.seed()?;
    let mut rows = Vec::new();
    for &n in &cfg.n_grid {
        let points = mc::near_degeneracy_probe(cfg.dist(), n, &cfg.h_grid, cfg.count, seed, mode)?;
        rows.extend(points.into_iter().map(|p| NearDegRow {
            n,
            h: p.h,
            mode: format!("{mode:?}").to_lowercase(),
            probability: p.probability,
            ci_low: p.ci_low,
            ci_high: p.ci_high,
            hits: p.hits,
            count: p.count,
        }));
    }
    let summary = format!("neardeg: {} points, {:?} mode", rows.len(), mode);
    ok(render(cfg, &rows, &rows)?, summary)
}

fn run_subgaussian(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let report = mc::subgaussian_probe(cfg.dist(), &cfg.n_grid, &cfg.t_grid, cfg.count, cfg.seed()?)?;
    let mut rows = Vec::new();
    for (i, &n) in report.n_list.iter().enumerate() {
        for (j, &t) in report.t_grid.iter().enumerate() {
            rows.push(SubGaussianRow {
                n,
                t,
                mgf: report.mgf[i][j],
                std_error: report.std_error[i][j],
                c_n: report.c_per_n[i],
                envelope: 2.0 * (report.c * t * t).exp(),
            });
        }
    }
    let summary = format!("subgaussian: C = {:.6}, envelope holds: {}", report.c, report.envelope_holds);
    ok(render(cfg, &rows, &report)?, summary)
}
