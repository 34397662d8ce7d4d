use std::fmt::Write as _;

use serde::Serialize;

use super::{step, AlgoConfig, Algorithm, Diagnostics, RunState, StepParams, StepSize, Tau};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, norm};
use crate::metrics;
use crate::problems::VIProblem;
use crate::simnet::Network;
use crate::theory::{self, TheoryInputs};

pub const CSV_HEADER: &str = "iter,cum_bits_up,cum_bits_down,dist_sq,gap_est,op_norm_sq,full_sync";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricSample {
    pub iter: u64,
    /// Uplink payload bits, all devices.
    pub cum_bits_up: u64,
    pub cum_bits_down: u64,
    pub cum_index_bits_up: u64,
    pub cum_index_bits_down: u64,
    /// `‖z − z*‖²`, when the solution is known.
    pub dist_sq: Option<f64>,
    /// `‖w − z*‖²`.
    pub dist_sq_w: Option<f64>,
    /// Restricted gap of the averaged iterate, when requested.
    pub gap_est: Option<f64>,
    /// `‖F(w)‖²`.
    pub op_norm_sq: f64,
    /// Whether the iteration ending here was a full synchronisation.
    pub full_sync: bool,
}

impl MetricSample {
    pub fn total_bits(&self) -> u64 {
        self.cum_bits_up + self.cum_bits_down
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Diverged { iter: u64, reason: String },
}

impl RunStatus {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Completed => "completed",
            Self::Diverged { .. } => "diverged",
        }
    }

    pub fn is_diverged(&self) -> bool {
        matches!(self, Self::Diverged { .. })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub gamma: f64,
    pub tau: f64,
    pub status: RunStatus,
    pub samples: Vec<MetricSample>,
    pub iterations_run: u64,
    pub full_sync_events: u64,
    pub final_z: Vec<f64>,
    pub final_w: Vec<f64>,
    pub averaged_iterate: Vec<f64>,
    pub diagnostics: Diagnostics,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl RunReport {
    pub fn last(&self) -> &MetricSample {
        self.samples.last().expect("a report always holds the initial sample")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.samples.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for s in &self.samples {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                s.iter,
                s.cum_bits_up,
                s.cum_bits_down,
                opt(s.dist_sq),
                opt(s.gap_est),
                s.op_norm_sq,
                u8::from(s.full_sync)
            );
        }
        out
    }
}

/// Resolves `τ` and `γ` for `cfg` on this problem and network.
pub fn resolve_params(problem: &VIProblem, cfg: &AlgoConfig, net: &Network) -> Result<StepParams> {
    let participants = cfg.participants.unwrap_or(problem.num_nodes());
    let inputs = TheoryInputs::new(problem, net.uplink_specs(), net.downlink_spec(), participants)?;
    let tau = match cfg.tau {
        Tau::Explicit(t) => t,
        Tau::Optimal => theory::optimal_tau(
            cfg.algorithm,
            inputs.beta_dev,
            problem.components(),
            participants,
            problem.num_nodes(),
        ),
    };
    let gamma = match cfg.step {
        StepSize::Explicit(g) => g,
        StepSize::Theory { safety } => theory::stepsize(cfg.algorithm, &inputs, tau, safety)?,
    };
    Ok(StepParams {
        gamma,
        tau,
        participants,
        w_update: cfg.w_update,
        diagnostics: cfg.diagnostics,
    })
}

/// Runs `cfg.iterations` iterations (or until the bit budget is spent or the
/// iterate diverges), sampling metrics on the configured schedule. The
/// initial point and the last iterate are always sampled.
pub fn run(problem: &VIProblem, cfg: &AlgoConfig, net: &mut Network) -> Result<RunReport> {
    cfg.validate(problem.num_nodes())?;
    if net.devices() != problem.num_nodes() {
        return Err(Error::DimensionMismatch {
            expected: problem.num_nodes(),
            got: net.devices(),
        });
    }
    for spec in net.uplink_specs().iter().chain([net.downlink_spec()]) {
        check_dim(problem.dim(), spec.dim)?;
    }
    let params = resolve_params(problem, cfg, net)?;
    let start = cfg.start.clone().unwrap_or_else(|| vec![0.0; problem.dim()]);
    let mut state = RunState::init(problem, cfg.algorithm, &start)?;
    let gap_radius = cfg
        .gap
        .as_ref()
        .map(|g| g.radius.unwrap_or_else(|| metrics::default_gap_radius(&start, problem.exact_solution())));

    let sample = |state: &RunState, net: &Network| -> Result<MetricSample> {
        let ledger = net.ledger();
        let z_star = problem.exact_solution();
        let gap_est = match (&cfg.gap, gap_radius) {
            (Some(g), Some(r)) => Some(metrics::gap_estimate(
                problem,
                &state.averaged_iterate(),
                r,
                g.restarts,
                g.iters,
                g.seed,
            )?),
            _ => None,
        };
        Ok(MetricSample {
            iter: state.k,
            cum_bits_up: ledger.total_uplink_payload(),
            cum_bits_down: ledger.downlink_payload_bits,
            cum_index_bits_up: ledger.total_uplink_index(),
            cum_index_bits_down: ledger.downlink_index_bits,
            dist_sq: z_star.map(|s| linalg::dist_sq(state.z(), s)),
            dist_sq_w: z_star.map(|s| linalg::dist_sq(state.w(), s)),
            gap_est,
            op_norm_sq: metrics::op_norm_sq(problem, state.w())?,
            full_sync: state.last_full_sync,
        })
    };

    let mut samples = vec![sample(&state, net)?];
    let mut status = RunStatus::Completed;
    while state.k < cfg.iterations {
        step(cfg.algorithm, &mut state, problem, net, &params)?;
        let z = state.z();
        let size = norm(z);
        let diverged = if !z.iter().all(|x| x.is_finite()) || !size.is_finite() {
            Some("non-finite iterate".to_string())
        } else if size > cfg.divergence_threshold {
            Some(format!("‖z‖ = {size:e} exceeds {:e}", cfg.divergence_threshold))
        } else {
            None
        };
        if let Some(reason) = diverged {
            status = RunStatus::Diverged { iter: state.k, reason };
            samples.push(sample(&state, net)?);
            break;
        }
        let spent = net.ledger().total_uplink_payload() + net.ledger().downlink_payload_bits;
        let out_of_bits = cfg.bit_budget.is_some_and(|b| spent >= b);
        if state.k % cfg.metric_every == 0 || state.k == cfg.iterations || out_of_bits {
            samples.push(sample(&state, net)?);
        }
        if out_of_bits {
            break;
        }
    }

    Ok(RunReport {
        algorithm: cfg.algorithm,
        seed: cfg.seed,
        gamma: params.gamma,
        tau: params.tau,
        status,
        samples,
        iterations_run: state.k,
        full_sync_events: net.ledger().full_sync_events,
        final_z: state.z().to_vec(),
        final_w: state.w().to_vec(),
        averaged_iterate: state.averaged_iterate(),
        diagnostics: state.diagnostics.clone(),
    })
}
