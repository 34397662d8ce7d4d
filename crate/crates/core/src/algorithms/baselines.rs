use super::masha::conservation_failures;
use super::{RunState, StepParams};
use crate::compressors::{compress, dense_message, CompressorSpec};
use crate::error::Result;
use crate::linalg;
use crate::problems::VIProblem;
use crate::simnet::Network;

/// Plain extragradient; each half-step is one uncompressed round trip.
pub fn extragradient_step(state: &mut RunState, problem: &VIProblem, net: &mut Network, p: &StepParams) -> Result<()> {
    extragradient_like(state, problem, net, p, false)
}

/// Extragradient where both half-steps use `(1/M) Σ Q_m(F_m(·))` with fresh
/// compression randomness.
pub fn ceg_step(state: &mut RunState, problem: &VIProblem, net: &mut Network, p: &StepParams) -> Result<()> {
    extragradient_like(state, problem, net, p, true)
}

/// `z^{k+1} = z^k − γ (1/M) Σ Q_m(F_m(z^k))`.
pub fn qsgd_gda_step(state: &mut RunState, problem: &VIProblem, net: &mut Network, p: &StepParams) -> Result<()> {
    let points: Vec<Vec<f64>> = state.devices.iter().map(|d| d.z.clone()).collect();
    state.record_half(&points[0]);
    let mean = round_trip(state.k, 0, &points, problem, net, true)?;
    for (dev, g) in state.devices.iter_mut().zip(&mean) {
        linalg::axpy(-p.gamma, g, &mut dev.z);
    }
    finish(state, net, p);
    Ok(())
}

/// Descent-ascent with classical error feedback: device `m` sends
/// `C_m(γ F_m(z^k) + e_m)` and keeps the residual.
pub fn ef_gda_step(state: &mut RunState, problem: &VIProblem, net: &mut Network, p: &StepParams) -> Result<()> {
    let d = problem.dim();
    let k = state.k;
    let z0 = state.devices[0].z.clone();
    state.record_half(&z0);
    let mut received = Vec::with_capacity(state.devices.len());
    for m in 0..state.devices.len() {
        let f = problem.eval_operator(m, &state.devices[m].z)?;
        let spec = *net.uplink_spec(m);
        let dev = &mut state.devices[m];
        let target: Vec<f64> = f.iter().zip(&dev.error).map(|(fi, e)| p.gamma * fi + e).collect();
        let msg = compress(&spec, &target, &mut net.device_rng(m, k, 0))?;
        let sent = msg.decompress()?;
        for i in 0..d {
            dev.error[i] = target[i] - sent[i];
        }
        if p.diagnostics {
            state.diagnostics.conservation_failures += conservation_failures(&dev.error, &sent, &target);
        }
        received.push(net.uplink(m, &msg)?);
    }
    let mean = linalg::mean_in_order(received.iter().map(Vec::as_slice), d);
    let copies = net.broadcast(&dense_message(&mean, net.downlink_spec().float_bits))?;
    for (dev, g) in state.devices.iter_mut().zip(&copies) {
        linalg::axpy(-1.0, g, &mut dev.z);
    }
    finish(state, net, p);
    Ok(())
}

fn extragradient_like(
    state: &mut RunState,
    problem: &VIProblem,
    net: &mut Network,
    p: &StepParams,
    compressed: bool,
) -> Result<()> {
    let k = state.k;
    let points: Vec<Vec<f64>> = state.devices.iter().map(|d| d.z.clone()).collect();
    let first = round_trip(k, 0, &points, problem, net, compressed)?;
    let halves: Vec<Vec<f64>> = points
        .iter()
        .zip(&first)
        .map(|(z, g)| z.iter().zip(g).map(|(a, b)| a - p.gamma * b).collect())
        .collect();
    let second = round_trip(k, 1, &halves, problem, net, compressed)?;
    for (dev, g) in state.devices.iter_mut().zip(&second) {
        linalg::axpy(-p.gamma, g, &mut dev.z);
    }
    state.record_half(&halves[0]);
    finish(state, net, p);
    Ok(())
}

/// Devices send `F_m(points[m])` (compressed or dense), the server
/// broadcasts the dense mean. Returns each device's received copy.
fn round_trip(
    k: u64,
    phase: u64,
    points: &[Vec<f64>],
    problem: &VIProblem,
    net: &mut Network,
    compressed: bool,
) -> Result<Vec<Vec<f64>>> {
    let d = problem.dim();
    let mut received = Vec::with_capacity(points.len());
    for (m, z) in points.iter().enumerate() {
        let f = problem.eval_operator(m, z)?;
        let spec = if compressed {
            *net.uplink_spec(m)
        } else {
            CompressorSpec::identity(d).with_bits(net.uplink_spec(m).float_bits)
        };
        let msg = compress(&spec, &f, &mut net.device_rng(m, k, phase))?;
        received.push(net.uplink(m, &msg)?);
    }
    let mean = linalg::mean_in_order(received.iter().map(Vec::as_slice), d);
    net.broadcast(&dense_message(&mean, net.downlink_spec().float_bits))
}

fn finish(state: &mut RunState, net: &mut Network, p: &StepParams) {
    for dev in &mut state.devices {
        dev.w.clone_from(&dev.z);
    }
    state.last_full_sync = false;
    state.k += 1;
    if p.diagnostics {
        state.diagnostics.checked_iterations += 1;
        state.audit_replication();
    }
    net.end_iteration();
}
