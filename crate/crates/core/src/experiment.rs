//! Experiment configuration and the drivers behind the `masha` command.
//!
//! Configs are TOML. See the README for the full grammar; in short:
//!
//! ```toml
//! [problem]
//! kind = "bilinear"      # bilinear | minty | file
//! d = 100
//! nodes = 16
//! lambda = "paper"       # or a number
//!
//! [run]
//! iterations = 1000
//! repeat_seeds = 3
//!
//! [[algorithm]]
//! name = "masha1"
//! gamma = "theory"       # or a number
//! uplink = "rand:0.3"
//! ```

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::algorithms::{run, AlgoConfig, Algorithm, RunReport, StepSize, Tau, WUpdate, CSV_HEADER};
use crate::compressors::{CompressorKind, CompressorSpec};
use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::metrics::GapOptions;
use crate::problems::{make_bilinear, make_minty_rotation, LambdaMode, VIProblem};
use crate::simnet::Network;
use crate::theory::{self, TheoryInputs};

#[derive(Clone, Debug, PartialEq)]
pub enum ProblemConfig {
    Bilinear {
        d: usize,
        nodes: usize,
        components: usize,
        seed: u64,
        lambda: LambdaMode,
    },
    Minty {
        dim: usize,
        nodes: usize,
        seed: u64,
        monotone_part: f64,
    },
    File {
        path: PathBuf,
    },
}

/// Compression rule before the dimension is known.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CompressorChoice {
    Identity,
    RandFraction(f64),
    TopFraction(f64),
    RandK(usize),
    TopK(usize),
}

impl CompressorChoice {
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "identity" || s == "none" {
            return Ok(Self::Identity);
        }
        let (kind, arg) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("compressor `{s}`: expected identity, rand:F, top:F, randk:K or topk:K")))?;
        let frac = || -> Result<f64> {
            let f: f64 = arg
                .parse()
                .map_err(|_| Error::Config(format!("compressor `{s}`: bad fraction `{arg}`")))?;
            if f > 0.0 && f <= 1.0 {
                Ok(f)
            } else {
                Err(Error::Config(format!("compressor `{s}`: fraction must lie in (0, 1]")))
            }
        };
        let count = || -> Result<usize> {
            arg.parse()
                .map_err(|_| Error::Config(format!("compressor `{s}`: bad count `{arg}`")))
        };
        match kind {
            "rand" => Ok(Self::RandFraction(frac()?)),
            "top" => Ok(Self::TopFraction(frac()?)),
            "randk" => Ok(Self::RandK(count()?)),
            "topk" => Ok(Self::TopK(count()?)),
            _ => Err(Error::Config(format!("unknown compressor kind `{kind}`"))),
        }
    }

    pub fn to_spec(self, dim: usize, float_bits: u32) -> Result<CompressorSpec> {
        let kind = match self {
            Self::Identity => CompressorKind::Identity,
            Self::RandFraction(f) => CompressorKind::RandK(CompressorSpec::k_for_fraction(dim, f)),
            Self::TopFraction(f) => CompressorKind::TopK(CompressorSpec::k_for_fraction(dim, f)),
            Self::RandK(k) => CompressorKind::RandK(k),
            Self::TopK(k) => CompressorKind::TopK(k),
        };
        CompressorSpec::new(kind, dim, float_bits)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlgorithmEntry {
    pub label: String,
    pub algorithm: Algorithm,
    pub step: StepSize,
    pub tau: Tau,
    pub uplink: CompressorChoice,
    pub downlink: CompressorChoice,
    pub participants: Option<usize>,
    pub w_update: WUpdate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub iterations: u64,
    pub metric_every: u64,
    pub repeat_seeds: u64,
    pub seed: u64,
    pub float_bits: u32,
    pub bit_budget: Option<u64>,
    pub diagnostics: bool,
    pub gap: Option<GapOptions>,
    pub ledger: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub run: RunConfig,
    pub algorithms: Vec<AlgorithmEntry>,
    pub sweep_gammas: Vec<f64>,
}

// Raw TOML shapes.

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    problem: RawProblem,
    #[serde(default)]
    run: RawRun,
    #[serde(default, rename = "algorithm")]
    algorithms: Vec<RawAlgorithm>,
    #[serde(default)]
    sweep: RawSweep,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    kind: String,
    d: Option<usize>,
    nodes: Option<usize>,
    #[serde(default = "one")]
    components: usize,
    #[serde(default)]
    seed: u64,
    lambda: Option<NumOrWord>,
    monotone_part: Option<f64>,
    path: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    #[serde(default = "default_iterations")]
    iterations: u64,
    #[serde(default = "one_u64")]
    metric_every: u64,
    #[serde(default = "one_u64")]
    repeat_seeds: u64,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_bits")]
    float_bits: u32,
    bit_budget: Option<u64>,
    #[serde(default)]
    diagnostics: bool,
    gap: Option<RawGap>,
    #[serde(default)]
    ledger: bool,
}

impl Default for RawRun {
    fn default() -> Self {
        Self {
            iterations: default_iterations(),
            metric_every: 1,
            repeat_seeds: 1,
            seed: 0,
            float_bits: default_bits(),
            bit_budget: None,
            diagnostics: false,
            gap: None,
            ledger: false,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGap {
    radius: Option<f64>,
    #[serde(default = "default_restarts")]
    restarts: usize,
    #[serde(default = "default_gap_iters")]
    iters: usize,
    #[serde(default)]
    seed: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAlgorithm {
    name: String,
    label: Option<String>,
    gamma: Option<NumOrWord>,
    #[serde(default = "one_f64")]
    safety: f64,
    tau: Option<NumOrWord>,
    uplink: Option<String>,
    downlink: Option<String>,
    participants: Option<usize>,
    w_update: Option<String>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    #[serde(default)]
    gammas: Vec<f64>,
}

#[derive(Deserialize, Clone)]
#[serde(untagged)]
enum NumOrWord {
    Num(f64),
    Word(String),
}

fn one() -> usize {
    1
}
fn one_u64() -> u64 {
    1
}
fn one_f64() -> f64 {
    1.0
}
fn default_iterations() -> u64 {
    1000
}
fn default_bits() -> u32 {
    64
}
fn default_restarts() -> usize {
    8
}
fn default_gap_iters() -> usize {
    200
}

fn field<T>(v: Option<T>, name: &str) -> Result<T> {
    v.ok_or_else(|| Error::Config(format!("missing field `{name}`")))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_raw(raw)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    fn from_raw(raw: RawConfig) -> Result<Self> {
        let p = raw.problem;
        let problem = match p.kind.as_str() {
            "bilinear" => ProblemConfig::Bilinear {
                d: field(p.d, "problem.d")?,
                nodes: field(p.nodes, "problem.nodes")?,
                components: p.components,
                seed: p.seed,
                lambda: match p.lambda {
                    None => LambdaMode::PaperRule,
                    Some(NumOrWord::Num(l)) => LambdaMode::Explicit(l),
                    Some(NumOrWord::Word(w)) if w == "paper" => LambdaMode::PaperRule,
                    Some(NumOrWord::Word(w)) => {
                        return Err(Error::Config(format!("problem.lambda: expected a number or \"paper\", got `{w}`")))
                    }
                },
            },
            "minty" => ProblemConfig::Minty {
                dim: field(p.d, "problem.d")?,
                nodes: field(p.nodes, "problem.nodes")?,
                seed: p.seed,
                monotone_part: p.monotone_part.unwrap_or(1e-3),
            },
            "file" => ProblemConfig::File {
                path: field(p.path, "problem.path")?,
            },
            other => return Err(Error::Config(format!("problem.kind: unknown kind `{other}`"))),
        };

        let r = raw.run;
        if r.metric_every == 0 {
            return Err(Error::Config("run.metric_every must be >= 1".into()));
        }
        if r.repeat_seeds == 0 {
            return Err(Error::Config("run.repeat_seeds must be >= 1".into()));
        }
        if r.float_bits != 32 && r.float_bits != 64 {
            return Err(Error::Config("run.float_bits must be 32 or 64".into()));
        }
        let run = RunConfig {
            iterations: r.iterations,
            metric_every: r.metric_every,
            repeat_seeds: r.repeat_seeds,
            seed: r.seed,
            float_bits: r.float_bits,
            bit_budget: r.bit_budget,
            diagnostics: r.diagnostics,
            gap: r.gap.map(|g| GapOptions {
                radius: g.radius,
                restarts: g.restarts,
                iters: g.iters,
                seed: g.seed,
            }),
            ledger: r.ledger,
        };

        if raw.algorithms.is_empty() {
            return Err(Error::Config("at least one [[algorithm]] section is required".into()));
        }
        let mut labels = BTreeSet::new();
        let mut algorithms = Vec::new();
        for (i, a) in raw.algorithms.into_iter().enumerate() {
            let at = |msg: String| Error::Config(format!("algorithm[{i}]: {msg}"));
            let algorithm: Algorithm = a.name.parse().map_err(|e: Error| at(e.to_string()))?;
            let step = match a.gamma {
                None => StepSize::Theory { safety: a.safety },
                Some(NumOrWord::Word(w)) if w == "theory" => StepSize::Theory { safety: a.safety },
                Some(NumOrWord::Num(g)) if g > 0.0 => StepSize::Explicit(g),
                Some(NumOrWord::Num(g)) => return Err(at(format!("gamma must be > 0, got {g}"))),
                Some(NumOrWord::Word(w)) => return Err(at(format!("gamma: expected a number or \"theory\", got `{w}`"))),
            };
            let tau = match a.tau {
                None => Tau::Optimal,
                Some(NumOrWord::Word(w)) if w == "optimal" => Tau::Optimal,
                Some(NumOrWord::Num(t)) if t > 0.0 && t < 1.0 => Tau::Explicit(t),
                Some(NumOrWord::Num(t)) => return Err(at(format!("tau must lie in (0, 1), got {t}"))),
                Some(NumOrWord::Word(w)) => return Err(at(format!("tau: expected a number or \"optimal\", got `{w}`"))),
            };
            let parse_c = |s: Option<String>| -> Result<CompressorChoice> {
                s.map_or(Ok(CompressorChoice::Identity), |s| CompressorChoice::parse(&s))
                    .map_err(|e| at(e.to_string()))
            };
            let w_update = match a.w_update {
                None => WUpdate::ZK,
                Some(s) => s.parse().map_err(|e: Error| at(e.to_string()))?,
            };
            let label = a.label.unwrap_or_else(|| algorithm.name().to_string());
            if !labels.insert(label.clone()) {
                return Err(at(format!("duplicate label `{label}`; give each entry a distinct label")));
            }
            if label.is_empty() || !label.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                return Err(at(format!("label `{label}` must be non-empty [A-Za-z0-9_-]")));
            }
            algorithms.push(AlgorithmEntry {
                label,
                algorithm,
                step,
                tau,
                uplink: parse_c(a.uplink)?,
                downlink: parse_c(a.downlink)?,
                participants: a.participants,
                w_update,
            });
        }
        Ok(Self {
            problem,
            run,
            algorithms,
            sweep_gammas: raw.sweep.gammas,
        })
    }

    /// Seeds used for the repeats: `seed, seed + 1, …`.
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.run.repeat_seeds).map(|i| self.run.seed + i).collect()
    }
}

pub fn build_problem(cfg: &ProblemConfig) -> Result<VIProblem> {
    match cfg {
        ProblemConfig::Bilinear {
            d,
            nodes,
            components,
            seed,
            lambda,
        } => make_bilinear(*d, *nodes, *seed, *lambda)?.with_row_block_components(*components),
        ProblemConfig::Minty {
            dim,
            nodes,
            seed,
            monotone_part,
        } => make_minty_rotation(*dim, *nodes, *seed, *monotone_part),
        ProblemConfig::File { path } => VIProblem::load(path),
    }
}

pub fn build_network(problem: &VIProblem, entry: &AlgorithmEntry, seed: u64, float_bits: u32) -> Result<Network> {
    let dim = problem.dim();
    let up = entry.uplink.to_spec(dim, float_bits)?;
    let down = entry.downlink.to_spec(dim, float_bits)?;
    Network::uniform(seed, problem.num_nodes(), up, down)
}

pub fn algo_config(entry: &AlgorithmEntry, run: &RunConfig, seed: u64) -> AlgoConfig {
    let mut c = AlgoConfig::new(entry.algorithm, entry.step, run.iterations, seed);
    c.tau = entry.tau;
    c.participants = entry.participants;
    c.metric_every = run.metric_every;
    c.w_update = entry.w_update;
    c.gap = run.gap.clone();
    c.bit_budget = run.bit_budget;
    c.diagnostics = run.diagnostics;
    c
}

pub fn run_entry(problem: &VIProblem, entry: &AlgorithmEntry, run_cfg: &RunConfig, seed: u64) -> Result<(RunReport, Network)> {
    let mut net = build_network(problem, entry, seed, run_cfg.float_bits)?;
    let report = run(problem, &algo_config(entry, run_cfg, seed), &mut net)?;
    Ok((report, net))
}

/// Column-wise mean over reports at the iterations every report sampled.
pub fn aggregate_csv(reports: &[RunReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    let Some(first) = reports.first() else {
        return out;
    };
    let n = reports.len() as f64;
    let mean_opt = |vals: Vec<Option<f64>>| -> String {
        if vals.iter().all(Option::is_some) {
            (vals.into_iter().flatten().sum::<f64>() / n).to_string()
        } else {
            String::new()
        }
    };
    for s in &first.samples {
        let matched: Vec<_> = reports
            .iter()
            .filter_map(|r| r.samples.iter().find(|x| x.iter == s.iter))
            .collect();
        if matched.len() != reports.len() {
            continue;
        }
        let mean = |f: &dyn Fn(&crate::algorithms::MetricSample) -> f64| matched.iter().map(|x| f(x)).sum::<f64>() / n;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            s.iter,
            mean(&|x| x.cum_bits_up as f64),
            mean(&|x| x.cum_bits_down as f64),
            mean_opt(matched.iter().map(|x| x.dist_sq).collect()),
            mean_opt(matched.iter().map(|x| x.gap_est).collect()),
            mean(&|x| x.op_norm_sq),
            mean(&|x| f64::from(u8::from(x.full_sync))),
        );
    }
    out
}

pub const SUMMARY_HEADER: &str = "label,algorithm,seed,gamma,tau,status,iterations,final_dist_sq,final_op_norm_sq,bits_up_payload,bits_up_index,bits_down_payload,bits_down_index,full_sync_events";

fn summary_row(out: &mut String, label: &str, r: &RunReport) {
    let s = r.last();
    let _ = writeln!(
        out,
        "{label},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        r.algorithm,
        r.seed,
        r.gamma,
        r.tau,
        r.status.label(),
        r.iterations_run,
        s.dist_sq.map(|v| v.to_string()).unwrap_or_default(),
        s.op_norm_sq,
        s.cum_bits_up,
        s.cum_index_bits_up,
        s.cum_bits_down,
        s.cum_index_bits_down,
        r.full_sync_events
    );
}

pub struct RunOutcome {
    pub reports: Vec<(String, Vec<RunReport>)>,
    pub files: Vec<PathBuf>,
}

fn write(out_dir: &Path, name: &str, contents: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    let path = out_dir.join(name);
    std::fs::write(&path, contents)?;
    files.push(path);
    Ok(())
}

/// One CSV per (entry, seed), one aggregate per entry, and `summary.csv`.
/// Diverged runs are kept and flagged in the summary.
pub fn cmd_run(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunOutcome> {
    std::fs::create_dir_all(out_dir)?;
    let problem = build_problem(&cfg.problem)?;
    let mut files = Vec::new();
    let mut summary = format!("{SUMMARY_HEADER}\n");
    let mut all = Vec::new();
    for entry in &cfg.algorithms {
        let mut reports = Vec::new();
        for seed in cfg.seeds() {
            let (report, net) = run_entry(&problem, entry, &cfg.run, seed)?;
            write(out_dir, &format!("{}_seed{seed}.csv", entry.label), &report.to_csv(), &mut files)?;
            if cfg.run.ledger {
                write(out_dir, &format!("{}_seed{seed}_ledger.csv", entry.label), &net.ledger().to_csv(), &mut files)?;
            }
            summary_row(&mut summary, &entry.label, &report);
            reports.push(report);
        }
        write(out_dir, &format!("{}_aggregate.csv", entry.label), &aggregate_csv(&reports), &mut files)?;
        all.push((entry.label.clone(), reports));
    }
    write(out_dir, "summary.csv", &summary, &mut files)?;
    Ok(RunOutcome { reports: all, files })
}

/// Final value used to rank runs: `‖z − z*‖²` when the solution is known,
/// otherwise `‖F(w)‖²`; diverged runs rank last.
pub fn final_metric(r: &RunReport) -> f64 {
    if r.status.is_diverged() {
        return f64::INFINITY;
    }
    let s = r.last();
    let v = s.dist_sq.unwrap_or(s.op_norm_sq);
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub label: String,
    pub gamma: f64,
    pub mean_final: f64,
    pub diverged: usize,
    pub rank: usize,
}

/// Runs every entry at every `γ` of the grid over the configured seeds and
/// ranks by the mean final metric (ties go to the smaller `γ`).
pub fn cmd_sweep(cfg: &ExperimentConfig, gammas: &[f64]) -> Result<Vec<SweepRow>> {
    if gammas.is_empty() {
        return Err(Error::Config("sweep needs a non-empty gamma grid".into()));
    }
    if let Some(g) = gammas.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
        return Err(Error::Config(format!("sweep gamma {g} is not a positive number")));
    }
    let problem = build_problem(&cfg.problem)?;
    let mut rows = Vec::new();
    for entry in &cfg.algorithms {
        let mut entry_rows = Vec::new();
        for &gamma in gammas {
            let e = AlgorithmEntry {
                step: StepSize::Explicit(gamma),
                ..entry.clone()
            };
            let reports = cfg
                .seeds()
                .into_iter()
                .map(|seed| run_entry(&problem, &e, &cfg.run, seed).map(|(r, _)| r))
                .collect::<Result<Vec<_>>>()?;
            let finals: Vec<f64> = reports.iter().map(final_metric).collect();
            entry_rows.push(SweepRow {
                label: entry.label.clone(),
                gamma,
                mean_final: finals.iter().sum::<f64>() / finals.len() as f64,
                diverged: reports.iter().filter(|r| r.status.is_diverged()).count(),
                rank: 0,
            });
        }
        let mut order: Vec<usize> = (0..entry_rows.len()).collect();
        order.sort_by(|&a, &b| {
            entry_rows[a]
                .mean_final
                .total_cmp(&entry_rows[b].mean_final)
                .then(entry_rows[a].gamma.total_cmp(&entry_rows[b].gamma))
        });
        for (rank, i) in order.into_iter().enumerate() {
            entry_rows[i].rank = rank + 1;
        }
        rows.extend(entry_rows);
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("label,gamma,mean_final_metric,diverged_runs,rank\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.label, r.gamma, r.mean_final, r.diverged, r.rank);
    }
    out
}

/// Best `γ` per label.
pub fn sweep_best(rows: &[SweepRow]) -> Vec<&SweepRow> {
    rows.iter().filter(|r| r.rank == 1).collect()
}

/// Human-readable listing of every bound that applies to each entry.
/// Fails if a bound's precondition does not hold (e.g. `τ < 3/4` for the
/// error-feedback family).
pub fn cmd_check_stepsize(cfg: &ExperimentConfig) -> Result<String> {
    let problem = build_problem(&cfg.problem)?;
    let c = problem.constants();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "problem: dim={} nodes={} components={} regime={:?}",
        problem.dim(),
        problem.num_nodes(),
        problem.components(),
        c.regime
    );
    let _ = writeln!(
        out,
        "constants: L={} L_max={} L_tilde={} L_hat={} mu={}",
        c.l_global,
        c.l_max(),
        c.l_tilde,
        c.l_hat,
        c.mu
    );
    for entry in &cfg.algorithms {
        let net = build_network(&problem, entry, cfg.run.seed, cfg.run.float_bits)?;
        let b = entry.participants.unwrap_or(problem.num_nodes());
        let mut inputs = TheoryInputs::new(&problem, net.uplink_specs(), net.downlink_spec(), b)?;
        let start = vec![0.0; problem.dim()];
        inputs.r0 = problem.exact_solution().map(|s| norm(&crate::linalg::sub(&start, s)));
        let tau = match entry.tau {
            Tau::Explicit(t) => t,
            Tau::Optimal => theory::optimal_tau(entry.algorithm, inputs.beta_dev, problem.components(), b, problem.num_nodes()),
        };
        let _ = writeln!(
            out,
            "[{}] algorithm={} tau={} beta_dev={} q_serv={} participants={b}",
            entry.label, entry.algorithm, tau, inputs.beta_dev, inputs.q_serv
        );
        let a = entry.algorithm;
        if a.is_masha() {
            let _ = writeln!(
                out,
                "  C_q={} C_q_tilde={} C_q_b={}",
                theory::cq(&inputs),
                theory::cq_tilde(&inputs),
                theory::cq_b(&inputs)
            );
        }
        match a {
            Algorithm::QsgdGda | Algorithm::EfGda => {
                let _ = writeln!(out, "  no theoretical step size for {a}");
            }
            _ => {
                let gamma = theory::stepsize(a, &inputs, tau, 1.0)?;
                let _ = writeln!(out, "  gamma bound [{a}, {:?}] = {gamma}", c.regime);
                if let StepSize::Theory { safety } = entry.step {
                    let _ = writeln!(out, "  gamma used (safety {safety}) = {}", gamma * safety);
                }
            }
        }
        match theory::iteration_complexity(a, &inputs) {
            Ok(k) => {
                let _ = writeln!(out, "  predicted iterations (eps={}) ~ {:.3e} ({})", inputs.epsilon, k.iterations, k.note);
            }
            Err(e) => {
                let _ = writeln!(out, "  predicted iterations: n/a ({e})");
            }
        }
    }
    Ok(out)
}

/// Settings of the five-method comparison on the bilinear game.
#[derive(Clone, Debug, PartialEq)]
pub struct CompareOptions {
    pub d: usize,
    pub nodes: usize,
    pub problem_seed: u64,
    pub seeds: Vec<u64>,
    pub fraction: f64,
    /// `γ` grid is `2^e / L` for `e` in this range.
    pub grid_exponents: std::ops::RangeInclusive<i32>,
    /// Stop every run at this many transmitted payload bits (up + down).
    pub bit_budget: u64,
    pub metric_every: u64,
    pub float_bits: u32,
}

impl CompareOptions {
    /// `d = 100`, `M = 16`, 30% Rand-k/Top-k, five seeds.
    pub fn figure1() -> Self {
        let d = 100;
        let nodes = 16;
        // 600 uncompressed round trips of the 2d-dimensional operator
        let round_trip = (nodes as u64 + 1) * 2 * d as u64 * 64;
        Self {
            d,
            nodes,
            problem_seed: 0,
            seeds: (0..5).collect(),
            fraction: 0.3,
            grid_exponents: -10..=0,
            bit_budget: 600 * round_trip,
            metric_every: 10,
            float_bits: 64,
        }
    }

    /// The five series: (label, algorithm, uplink).
    pub fn series(&self) -> Vec<(&'static str, Algorithm, CompressorChoice)> {
        let rand = CompressorChoice::RandFraction(self.fraction);
        let top = CompressorChoice::TopFraction(self.fraction);
        vec![
            ("masha1", Algorithm::Masha1, rand),
            ("masha2", Algorithm::Masha2, top),
            ("ceg", Algorithm::Ceg, rand),
            ("qsgd-gda", Algorithm::QsgdGda, rand),
            ("ef-gda", Algorithm::EfGda, top),
        ]
    }
}

#[derive(Clone, Debug)]
pub struct SeriesOutcome {
    pub label: String,
    pub algorithm: Algorithm,
    pub gamma: f64,
    /// `(γ, mean final dist²)` for every grid point.
    pub sweep: Vec<(f64, f64)>,
    /// Runs at the chosen `γ`, one per seed.
    pub reports: Vec<RunReport>,
}

impl SeriesOutcome {
    pub fn median_final_dist_sq(&self) -> f64 {
        median(self.reports.iter().map(final_metric).collect())
    }

    /// Median dist² over seeds at the last sample with at most `bits`
    /// transmitted.
    pub fn median_dist_sq_at_bits(&self, bits: u64) -> f64 {
        median(
            self.reports
                .iter()
                .map(|r| {
                    if r.status.is_diverged() {
                        return f64::INFINITY;
                    }
                    r.samples
                        .iter()
                        .take_while(|s| s.total_bits() <= bits)
                        .last()
                        .and_then(|s| s.dist_sq)
                        .unwrap_or(f64::INFINITY)
                })
                .collect(),
        )
    }
}

pub fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub struct CompareOutcome {
    pub problem: VIProblem,
    pub series: Vec<SeriesOutcome>,
    pub bit_budget: u64,
}

/// Runs the five-method comparison. Every method gets the same `γ` grid
/// anchored at `1/L`, the same seeds and the same bit budget; the `γ` with
/// the lowest seed-mean final dist² wins and its runs are the reported ones.
pub fn cmd_compare(opts: &CompareOptions) -> Result<CompareOutcome> {
    let problem = make_bilinear(opts.d, opts.nodes, opts.problem_seed, LambdaMode::PaperRule)?;
    let z_star = problem
        .exact_solution()
        .ok_or_else(|| Error::Precondition("comparison problem has no exact solution".into()))?;
    let anchor = 1.0 / problem.constants().l_global;
    let blow_up = 1e3 * (1.0 + norm(z_star));
    let mut series = Vec::new();
    for (label, algorithm, uplink) in opts.series() {
        let entry = AlgorithmEntry {
            label: label.to_string(),
            algorithm,
            step: StepSize::Explicit(anchor),
            tau: Tau::Optimal,
            uplink,
            downlink: CompressorChoice::Identity,
            participants: None,
            w_update: WUpdate::ZK,
        };
        let mut best: Option<(f64, f64, Vec<RunReport>)> = None;
        let mut sweep = Vec::new();
        for e in opts.grid_exponents.clone() {
            let gamma = anchor * 2f64.powi(e);
            let mut reports = Vec::with_capacity(opts.seeds.len());
            for &seed in &opts.seeds {
                let mut net = build_network(&problem, &entry, seed, opts.float_bits)?;
                let mut cfg = AlgoConfig::new(algorithm, StepSize::Explicit(gamma), u64::MAX, seed);
                cfg.bit_budget = Some(opts.bit_budget);
                cfg.metric_every = opts.metric_every;
                cfg.divergence_threshold = blow_up;
                reports.push(run(&problem, &cfg, &mut net)?);
            }
            let mean = reports.iter().map(final_metric).sum::<f64>() / reports.len() as f64;
            sweep.push((gamma, mean));
            if best.as_ref().is_none_or(|(_, m, _)| mean < *m) {
                best = Some((gamma, mean, reports));
            }
        }
        let (gamma, _, reports) = best.expect("grid is non-empty");
        series.push(SeriesOutcome {
            label: label.to_string(),
            algorithm,
            gamma,
            sweep,
            reports,
        });
    }
    Ok(CompareOutcome {
        problem,
        series,
        bit_budget: opts.bit_budget,
    })
}

/// Writes per-seed CSVs, a per-Mbyte median curve per series and a summary.
pub fn write_compare(outcome: &CompareOutcome, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();
    let mut summary = String::from("label,algorithm,gamma,median_final_dist_sq,median_final_mbytes\n");
    let points = 50u64;
    for s in &outcome.series {
        for r in &s.reports {
            write(out_dir, &format!("{}_seed{}.csv", s.label, r.seed), &r.to_csv(), &mut files)?;
        }
        write(out_dir, &format!("{}_aggregate.csv", s.label), &aggregate_csv(&s.reports), &mut files)?;
        let mut curve = String::from("mbytes,median_dist_sq\n");
        for i in 1..=points {
            let bits = outcome.bit_budget * i / points;
            let _ = writeln!(curve, "{},{}", bits as f64 / 8e6, s.median_dist_sq_at_bits(bits));
        }
        write(out_dir, &format!("{}_mbytes.csv", s.label), &curve, &mut files)?;
        let final_bits = median(s.reports.iter().map(|r| r.last().total_bits() as f64).collect());
        let _ = writeln!(
            summary,
            "{},{},{},{},{}",
            s.label,
            s.algorithm,
            s.gamma,
            s.median_final_dist_sq(),
            final_bits / 8e6
        );
    }
    let mut sweep = String::from("label,gamma,mean_final_dist_sq\n");
    for s in &outcome.series {
        for (g, m) in &s.sweep {
            let _ = writeln!(sweep, "{},{g},{m}", s.label);
        }
    }
    write(out_dir, "compare_sweep.csv", &sweep, &mut files)?;
    write(out_dir, "compare_summary.csv", &summary, &mut files)?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[problem]
kind = "bilinear"
d = 2
nodes = 2
lambda = 1.0

[run]
iterations = 10

[[algorithm]]
name = "extragradient"
gamma = 0.05
"#;

    #[test]
    fn parses_minimal() {
        let c = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.algorithms.len(), 1);
        assert_eq!(c.algorithms[0].algorithm, Algorithm::ExtraGradient);
        assert_eq!(c.algorithms[0].step, StepSize::Explicit(0.05));
        assert_eq!(c.run.iterations, 10);
        assert_eq!(c.seeds(), vec![0]);
    }

    #[test]
    fn reports_unknown_field_with_location() {
        let bad = MINIMAL.replace("iterations = 10", "iterations = 10\nitterations = 3");
        let e = ExperimentConfig::parse(&bad).unwrap_err().to_string();
        assert!(e.contains("itterations"), "{e}");
        assert!(e.contains("line"), "{e}");
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::parse(&MINIMAL.replace("gamma = 0.05", "gamma = -1.0")).is_err());
        assert!(ExperimentConfig::parse(&MINIMAL.replace("extragradient", "sgd")).is_err());
        assert!(ExperimentConfig::parse(&MINIMAL.replace("kind = \"bilinear\"", "kind = \"cubic\"")).is_err());
        let dup = format!("{MINIMAL}\n[[algorithm]]\nname = \"extragradient\"\n");
        assert!(ExperimentConfig::parse(&dup).unwrap_err().to_string().contains("duplicate"));
    }

    #[test]
    fn compressor_grammar() {
        assert_eq!(CompressorChoice::parse("rand:0.3").unwrap(), CompressorChoice::RandFraction(0.3));
        assert_eq!(CompressorChoice::parse("topk:5").unwrap(), CompressorChoice::TopK(5));
        assert_eq!(CompressorChoice::parse("identity").unwrap(), CompressorChoice::Identity);
        assert!(CompressorChoice::parse("rand:1.5").is_err());
        assert!(CompressorChoice::parse("bits:8").is_err());
        let spec = CompressorChoice::RandFraction(0.3).to_spec(200, 64).unwrap();
        assert_eq!(spec.kind, CompressorKind::RandK(60));
    }

    #[test]
    fn sweep_grid_of_one_returns_it() {
        let c = ExperimentConfig::parse(MINIMAL).unwrap();
        let rows = cmd_sweep(&c, &[0.05]).unwrap();
        assert_eq!(sweep_best(&rows)[0].gamma, 0.05);
        assert!(cmd_sweep(&c, &[]).is_err());
    }

    #[test]
    fn median_values() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
