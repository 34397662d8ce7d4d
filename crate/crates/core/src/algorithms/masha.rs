use rand::Rng;

use super::{hat_of, RunState, StepParams, WUpdate};
use crate::compressors::{compress, dense_message};
use crate::error::Result;
use crate::linalg::{self, norm};
use crate::problems::VIProblem;
use crate::simnet::Network;

#[derive(Clone, Copy)]
struct Variant {
    error_feedback: bool,
    variance_reduced: bool,
    partial: bool,
}

/// Compressed differences `Q_m(F_m(z^{k+1/2}) − F_m(w^k))`, compressed
/// average back, reference point refreshed with probability `1 − τ`.
pub fn masha1_step(state: &mut RunState, problem: &VIProblem, net: &mut Network, p: &StepParams) -> Result<()> {
    masha_step(state, problem, net, p, Variant { error_feedback: false, variance_reduced: false, partial: false })
}

/// Error-feedback version: devices send `C_m(γΔ_m + e_m)`, the server
/// `C(mean + e)`. Note `γ` sits inside the compressed quantity.
pub fn masha2_step(state: &mut RunState, problem: &VIProblem, net: &mut Network, p: &StepParams) -> Result<()> {
    masha_step(state, problem, net, p, Variant { error_feedback: true, variance_reduced: false, partial: false })
}

/// Each device uses one uniformly sampled component `F_{m,π_m}`.
pub fn vr_masha1_step(state: &mut RunState, problem: &VIProblem, net: &mut Network, p: &StepParams) -> Result<()> {
    masha_step(state, problem, net, p, Variant { error_feedback: false, variance_reduced: true, partial: false })
}

pub fn vr_masha2_step(state: &mut RunState, problem: &VIProblem, net: &mut Network, p: &StepParams) -> Result<()> {
    masha_step(state, problem, net, p, Variant { error_feedback: true, variance_reduced: true, partial: false })
}

/// Only `b` sampled devices send; the server divides by `b`.
pub fn pp_masha1_step(state: &mut RunState, problem: &VIProblem, net: &mut Network, p: &StepParams) -> Result<()> {
    masha_step(state, problem, net, p, Variant { error_feedback: false, variance_reduced: false, partial: true })
}

/// Non-participants keep their `e_m`.
pub fn pp_masha2_step(state: &mut RunState, problem: &VIProblem, net: &mut Network, p: &StepParams) -> Result<()> {
    masha_step(state, problem, net, p, Variant { error_feedback: true, variance_reduced: false, partial: true })
}

fn masha_step(
    state: &mut RunState,
    problem: &VIProblem,
    net: &mut Network,
    p: &StepParams,
    v: Variant,
) -> Result<()> {
    let d = problem.dim();
    let k = state.k;
    let (gamma, tau) = (p.gamma, p.tau);
    let anchor = 1.0 - tau;

    let halves: Vec<Vec<f64>> = state
        .devices
        .iter()
        .map(|dev| {
            (0..d)
                .map(|i| tau * dev.z[i] + anchor * dev.w[i] - gamma * dev.fw[i])
                .collect()
        })
        .collect();

    let participants = if v.partial {
        net.sample_participants(p.participants)?
    } else {
        (0..state.devices.len()).collect()
    };

    let track_hat = p.diagnostics && v.error_feedback && !v.partial;
    let hat_half = track_hat.then(|| hat_of(&halves[0], &state.server_error, &state.devices));
    let mut deltas = Vec::new();
    let mut received = Vec::with_capacity(participants.len());
    for &m in &participants {
        let zh = &halves[m];
        let delta = if v.variance_reduced {
            let i = net.component_rng(m, k).random_range(0..problem.components());
            state.components[m] = i;
            let w = &state.devices[m].w;
            linalg::sub(&problem.eval_component(m, i, zh)?, &problem.eval_component(m, i, w)?)
        } else {
            let mut f = problem.eval_operator(m, zh)?;
            linalg::axpy(-1.0, &state.devices[m].fw_local, &mut f);
            f
        };
        let spec = *net.uplink_spec(m);
        let mut rng = net.device_rng(m, k, 0);
        let msg = if v.error_feedback {
            let dev = &mut state.devices[m];
            let target: Vec<f64> = delta.iter().zip(&dev.error).map(|(dl, e)| gamma * dl + e).collect();
            let msg = compress(&spec, &target, &mut rng)?;
            let sent = msg.decompress()?;
            for i in 0..d {
                dev.error[i] = target[i] - sent[i];
            }
            if p.diagnostics {
                state.diagnostics.conservation_failures += conservation_failures(&dev.error, &sent, &target);
            }
            msg
        } else {
            compress(&spec, &delta, &mut rng)?
        };
        received.push(net.uplink(m, &msg)?);
        if track_hat {
            deltas.push(delta);
        }
    }

    let mean = linalg::mean_in_order(received.iter().map(Vec::as_slice), d);
    let down = *net.downlink_spec();
    let mut srng = net.server_rng(k, 0);
    let msg = if v.error_feedback {
        let target: Vec<f64> = mean.iter().zip(&state.server_error).map(|(a, e)| a + e).collect();
        let msg = compress(&down, &target, &mut srng)?;
        let sent = msg.decompress()?;
        for i in 0..d {
            state.server_error[i] = target[i] - sent[i];
        }
        if p.diagnostics {
            state.diagnostics.conservation_failures += conservation_failures(&state.server_error, &sent, &target);
        }
        msg
    } else {
        compress(&down, &mean, &mut srng)?
    };
    let copies = net.broadcast(&msg)?;

    let mut previous = Vec::with_capacity(state.devices.len());
    for ((dev, zh), g) in state.devices.iter_mut().zip(&halves).zip(&copies) {
        let next: Vec<f64> = if v.error_feedback {
            zh.iter().zip(g).map(|(a, b)| a - b).collect()
        } else {
            zh.iter().zip(g).map(|(a, b)| a - gamma * b).collect()
        };
        previous.push(std::mem::replace(&mut dev.z, next));
    }
    state.record_half(&halves[0]);
    state.participants = participants;

    if let Some(hat_half) = hat_half {
        let mean_delta = linalg::mean_in_order(deltas.iter().map(Vec::as_slice), d);
        let mut expected = hat_half;
        linalg::axpy(-gamma, &mean_delta, &mut expected);
        let actual = state.hat();
        let err_scale = norm(&state.server_error)
            + state.devices.iter().map(|dv| norm(&dv.error)).sum::<f64>() / state.devices.len() as f64;
        let scale = norm(&halves[0]) + gamma * norm(&mean_delta) + err_scale;
        let residual = linalg::dist_sq(&actual, &expected).sqrt() / scale.max(f64::MIN_POSITIVE);
        state.diagnostics.max_hat_residual = state.diagnostics.max_hat_residual.max(residual);
    }

    state.last_full_sync = net.shared_coin(anchor)?;
    if state.last_full_sync {
        for (dev, old) in state.devices.iter_mut().zip(previous) {
            dev.w = match p.w_update {
                WUpdate::ZK => old,
                WUpdate::ZKPlus1 => dev.z.clone(),
            };
        }
        full_sync(state, problem, net)?;
    }
    state.k += 1;
    if p.diagnostics {
        state.diagnostics.checked_iterations += 1;
        state.audit_replication();
    }
    net.end_iteration();
    Ok(())
}

/// Uncompressed exchange of `F_m(w)` up and `F(w)` down, all devices.
fn full_sync(state: &mut RunState, problem: &VIProblem, net: &mut Network) -> Result<()> {
    let d = problem.dim();
    let mut received = Vec::with_capacity(state.devices.len());
    for (m, dev) in state.devices.iter_mut().enumerate() {
        dev.fw_local = problem.eval_operator(m, &dev.w)?;
        let bits = net.uplink_spec(m).float_bits;
        received.push(net.uplink(m, &dense_message(&dev.fw_local, bits))?);
    }
    let mean = linalg::mean_in_order(received.iter().map(Vec::as_slice), d);
    let copies = net.broadcast(&dense_message(&mean, net.downlink_spec().float_bits))?;
    for (dev, fw) in state.devices.iter_mut().zip(copies) {
        dev.fw = fw;
    }
    net.mark_full_sync();
    Ok(())
}

/// Counts coordinates where `residual + sent` differs from `target`.
pub(super) fn conservation_failures(residual: &[f64], sent: &[f64], target: &[f64]) -> u64 {
    residual
        .iter()
        .zip(sent)
        .zip(target)
        .filter(|((e, s), t)| *e + *s != **t)
        .count() as u64
}
