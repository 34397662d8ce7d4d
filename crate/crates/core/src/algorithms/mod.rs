//! Iteration state machines over the simulated network.
//!
//! Every device keeps its own copy of `z`, `w` and `F(w)` and updates it from
//! what it receives, so replication is something the simulation produces
//! rather than assumes. [`RunState::replicated`] audits it.

mod baselines;
mod masha;
mod report;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::metrics::GapOptions;
use crate::problems::VIProblem;
use crate::simnet::Network;

pub use baselines::{ceg_step, ef_gda_step, extragradient_step, qsgd_gda_step};
pub use masha::{masha1_step, masha2_step, pp_masha1_step, pp_masha2_step, vr_masha1_step, vr_masha2_step};
pub use report::{run, MetricSample, RunReport, RunStatus, CSV_HEADER};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    Masha1,
    Masha2,
    VrMasha1,
    VrMasha2,
    PpMasha1,
    PpMasha2,
    ExtraGradient,
    Ceg,
    QsgdGda,
    EfGda,
}

impl Algorithm {
    pub const ALL: [Algorithm; 10] = [
        Self::Masha1,
        Self::Masha2,
        Self::VrMasha1,
        Self::VrMasha2,
        Self::PpMasha1,
        Self::PpMasha2,
        Self::ExtraGradient,
        Self::Ceg,
        Self::QsgdGda,
        Self::EfGda,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Masha1 => "masha1",
            Self::Masha2 => "masha2",
            Self::VrMasha1 => "vr-masha1",
            Self::VrMasha2 => "vr-masha2",
            Self::PpMasha1 => "pp-masha1",
            Self::PpMasha2 => "pp-masha2",
            Self::ExtraGradient => "extragradient",
            Self::Ceg => "ceg",
            Self::QsgdGda => "qsgd-gda",
            Self::EfGda => "ef-gda",
        }
    }

    pub fn is_masha(self) -> bool {
        matches!(
            self,
            Self::Masha1 | Self::Masha2 | Self::VrMasha1 | Self::VrMasha2 | Self::PpMasha1 | Self::PpMasha2
        )
    }

    /// MASHA2 family and EF-GDA carry per-device error vectors.
    pub fn uses_error_feedback(self) -> bool {
        matches!(self, Self::Masha2 | Self::VrMasha2 | Self::PpMasha2 | Self::EfGda)
    }

    pub fn is_variance_reduced(self) -> bool {
        matches!(self, Self::VrMasha1 | Self::VrMasha2)
    }

    pub fn is_partial(self) -> bool {
        matches!(self, Self::PpMasha1 | Self::PpMasha2)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        let alias = match key.as_str() {
            "eg" | "extra-gradient" => "extragradient",
            "qsgd" | "qgd" => "qsgd-gda",
            "ef" => "ef-gda",
            other => other,
        };
        Self::ALL
            .into_iter()
            .find(|a| a.name() == alias)
            .ok_or_else(|| Error::Config(format!("unknown algorithm `{s}`")))
    }
}

/// Which point becomes the new reference on a synchronisation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WUpdate {
    /// `w^{k+1} = z^k`.
    #[default]
    ZK,
    /// `w^{k+1} = z^{k+1}`.
    ZKPlus1,
}

impl FromStr for WUpdate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "z_k" => Ok(Self::ZK),
            "z_k_plus_1" => Ok(Self::ZKPlus1),
            other => Err(Error::Config(format!("w_update must be z_k or z_k_plus_1, got `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum StepSize {
    Explicit(f64),
    Theory { safety: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Tau {
    Explicit(f64),
    Optimal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgoConfig {
    pub algorithm: Algorithm,
    pub step: StepSize,
    pub tau: Tau,
    pub iterations: u64,
    /// Participants per iteration for the partial-participation variants;
    /// `None` means all devices.
    pub participants: Option<usize>,
    pub seed: u64,
    /// Record a metric sample every this many iterations (plus the last).
    pub metric_every: u64,
    pub w_update: WUpdate,
    /// Restricted-gap estimation at each sample; off when `None`.
    pub gap: Option<GapOptions>,
    /// Starting point; zeros when `None`.
    pub start: Option<Vec<f64>>,
    /// Stop once up+down payload bits reach this budget.
    pub bit_budget: Option<u64>,
    /// Audit replication, error conservation and the hat-sequence identity
    /// every iteration.
    pub diagnostics: bool,
    pub divergence_threshold: f64,
}

impl AlgoConfig {
    pub fn new(algorithm: Algorithm, step: StepSize, iterations: u64, seed: u64) -> Self {
        Self {
            algorithm,
            step,
            tau: Tau::Optimal,
            iterations,
            participants: None,
            seed,
            metric_every: 1,
            w_update: WUpdate::ZK,
            gap: None,
            start: None,
            bit_budget: None,
            diagnostics: false,
            divergence_threshold: 1e12,
        }
    }

    pub fn validate(&self, devices: usize) -> Result<()> {
        if let StepSize::Explicit(g) = self.step {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::InvalidParameter(format!("gamma must be > 0, got {g}")));
            }
        }
        if let Tau::Explicit(t) = self.tau {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::InvalidParameter(format!("tau must lie in (0, 1), got {t}")));
            }
        }
        if let Some(b) = self.participants {
            if b == 0 || b > devices {
                return Err(Error::InvalidParameter(format!("participants {b} outside 1..={devices}")));
            }
        }
        if self.metric_every == 0 {
            return Err(Error::InvalidParameter("metric_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// Resolved per-iteration parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepParams {
    pub gamma: f64,
    pub tau: f64,
    pub participants: usize,
    pub w_update: WUpdate,
    pub diagnostics: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeviceState {
    pub z: Vec<f64>,
    pub w: Vec<f64>,
    /// `F(w)` as last received from the server.
    pub fw: Vec<f64>,
    /// `F_m(w)`, computed locally at the last synchronisation.
    pub fw_local: Vec<f64>,
    /// Error-feedback residual `e_m`; empty when unused.
    pub error: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    pub checked_iterations: u64,
    /// Largest relative residual of the hat-sequence identity.
    pub max_hat_residual: f64,
    /// Coordinates where `e' + sent ≠ e + γΔ` bitwise.
    pub conservation_failures: u64,
    /// Iterations after which some device copy differed from device 0.
    pub replication_failures: u64,
}

#[derive(Clone, Debug)]
pub struct RunState {
    pub k: u64,
    pub devices: Vec<DeviceState>,
    /// Server error-feedback residual `e`; empty when unused.
    pub server_error: Vec<f64>,
    /// Component index each device used last (variance-reduced variants).
    pub components: Vec<usize>,
    /// Devices that took part in the last iteration.
    pub participants: Vec<usize>,
    /// Whether the last iteration ended in a full synchronisation.
    pub last_full_sync: bool,
    pub diagnostics: Diagnostics,
    half_sum: Vec<f64>,
    half_count: u64,
}

impl RunState {
    /// `z⁰ = w⁰ = start`, zero errors, `F(w⁰)` known to every device. The
    /// initial exchange of `F(w⁰)` is not charged to the ledger.
    pub fn init(problem: &VIProblem, algorithm: Algorithm, start: &[f64]) -> Result<Self> {
        let d = problem.dim();
        crate::error::check_dim(d, start.len())?;
        let local = (0..problem.num_nodes())
            .map(|m| problem.eval_operator(m, start))
            .collect::<Result<Vec<_>>>()?;
        let fw = linalg::mean_in_order(local.iter().map(Vec::as_slice), d);
        let ef = algorithm.uses_error_feedback();
        let devices = local
            .into_iter()
            .map(|fw_local| DeviceState {
                z: start.to_vec(),
                w: start.to_vec(),
                fw: fw.clone(),
                fw_local,
                error: if ef { vec![0.0; d] } else { Vec::new() },
            })
            .collect();
        let server_ef = ef && algorithm.is_masha();
        Ok(Self {
            k: 0,
            devices,
            server_error: if server_ef { vec![0.0; d] } else { Vec::new() },
            components: vec![0; problem.num_nodes()],
            participants: (0..problem.num_nodes()).collect(),
            last_full_sync: false,
            diagnostics: Diagnostics::default(),
            half_sum: vec![0.0; d],
            half_count: 0,
        })
    }

    pub fn z(&self) -> &[f64] {
        &self.devices[0].z
    }

    pub fn w(&self) -> &[f64] {
        &self.devices[0].w
    }

    pub fn fw(&self) -> &[f64] {
        &self.devices[0].fw
    }

    /// True when every device copy of `z`, `w`, `F(w)` equals device 0's
    /// bitwise.
    pub fn replicated(&self) -> bool {
        let first = &self.devices[0];
        self.devices.iter().all(|d| {
            bitwise_eq(&d.z, &first.z) && bitwise_eq(&d.w, &first.w) && bitwise_eq(&d.fw, &first.fw)
        })
    }

    /// `(1/K) Σ_{k<K} z^{k+1/2}` (the last iterate before any step).
    pub fn averaged_iterate(&self) -> Vec<f64> {
        if self.half_count == 0 {
            return self.z().to_vec();
        }
        let n = self.half_count as f64;
        self.half_sum.iter().map(|s| s / n).collect()
    }

    /// `ẑ = z − e − (1/M) Σ e_m`.
    pub fn hat(&self) -> Vec<f64> {
        hat_of(self.z(), &self.server_error, &self.devices)
    }

    fn record_half(&mut self, half: &[f64]) {
        linalg::axpy(1.0, half, &mut self.half_sum);
        self.half_count += 1;
    }

    fn audit_replication(&mut self) {
        if !self.replicated() {
            self.diagnostics.replication_failures += 1;
        }
    }
}

fn hat_of(point: &[f64], server_error: &[f64], devices: &[DeviceState]) -> Vec<f64> {
    let mut out = point.to_vec();
    if !server_error.is_empty() {
        linalg::axpy(-1.0, server_error, &mut out);
    }
    if devices.iter().all(|d| !d.error.is_empty()) {
        let mean = linalg::mean_in_order(devices.iter().map(|d| d.error.as_slice()), point.len());
        linalg::axpy(-1.0, &mean, &mut out);
    }
    out
}

fn bitwise_eq(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Advances `state` by one iteration of `algorithm`.
pub fn step(
    algorithm: Algorithm,
    state: &mut RunState,
    problem: &VIProblem,
    net: &mut Network,
    params: &StepParams,
) -> Result<()> {
    match algorithm {
        Algorithm::Masha1 => masha1_step(state, problem, net, params),
        Algorithm::Masha2 => masha2_step(state, problem, net, params),
        Algorithm::VrMasha1 => vr_masha1_step(state, problem, net, params),
        Algorithm::VrMasha2 => vr_masha2_step(state, problem, net, params),
        Algorithm::PpMasha1 => pp_masha1_step(state, problem, net, params),
        Algorithm::PpMasha2 => pp_masha2_step(state, problem, net, params),
        Algorithm::ExtraGradient => extragradient_step(state, problem, net, params),
        Algorithm::Ceg => ceg_step(state, problem, net, params),
        Algorithm::QsgdGda => qsgd_gda_step(state, problem, net, params),
        Algorithm::EfGda => ef_gda_step(state, problem, net, params),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert_eq!("EG".parse::<Algorithm>().unwrap(), Algorithm::ExtraGradient);
        assert!("sgd".parse::<Algorithm>().is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = AlgoConfig::new(Algorithm::Masha1, StepSize::Explicit(0.1), 10, 0);
        assert!(c.validate(4).is_ok());
        c.tau = Tau::Explicit(1.0);
        assert!(c.validate(4).is_err());
        c.tau = Tau::Optimal;
        c.participants = Some(5);
        assert!(c.validate(4).is_err());
        c.participants = None;
        c.step = StepSize::Explicit(0.0);
        assert!(c.validate(4).is_err());
    }
}
