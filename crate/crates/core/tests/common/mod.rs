#![allow(dead_code)]

use masha::algorithms::{step, Algorithm, RunState, StepParams, WUpdate};
use masha::compressors::{CompressorKind, CompressorSpec};
use masha::linalg::Matrix;
use masha::problems::{AffineOperator, Node, VIProblem};
use masha::simnet::Network;

pub fn spec(kind: CompressorKind, dim: usize) -> CompressorSpec {
    CompressorSpec::new(kind, dim, 64).unwrap()
}

pub fn rand_frac(dim: usize, f: f64) -> CompressorSpec {
    spec(CompressorKind::RandK(CompressorSpec::k_for_fraction(dim, f)), dim)
}

pub fn top_frac(dim: usize, f: f64) -> CompressorSpec {
    spec(CompressorKind::TopK(CompressorSpec::k_for_fraction(dim, f)), dim)
}

pub fn identity_net(p: &VIProblem, seed: u64) -> Network {
    let id = CompressorSpec::identity(p.dim());
    Network::uniform(seed, p.num_nodes(), id, id).unwrap()
}

pub fn net_with(p: &VIProblem, seed: u64, up: CompressorSpec, down: CompressorSpec) -> Network {
    Network::uniform(seed, p.num_nodes(), up, down).unwrap()
}

/// `F(z) = scale · z` on one node.
pub fn scalar_identity(dim: usize, scale: f64) -> VIProblem {
    VIProblem::from_nodes(vec![Node::deterministic(AffineOperator::scaled_identity(dim, scale))], None).unwrap()
}

/// `F(x, y) = (y, −x)`.
pub fn rotation() -> VIProblem {
    let m = Matrix::from_rows(&[vec![0.0, 1.0], vec![-1.0, 0.0]]).unwrap();
    VIProblem::from_nodes(vec![Node::deterministic(AffineOperator::dense(m, vec![0.0, 0.0]).unwrap())], None).unwrap()
}

pub fn params(gamma: f64, tau: f64, participants: usize) -> StepParams {
    StepParams {
        gamma,
        tau,
        participants,
        w_update: WUpdate::ZK,
        diagnostics: true,
    }
}

/// Bit patterns of `(z, w)` after each of `iters` steps.
pub fn trajectory(
    alg: Algorithm,
    problem: &VIProblem,
    net: &mut Network,
    p: &StepParams,
    start: &[f64],
    iters: usize,
) -> (Vec<Vec<u64>>, RunState) {
    let mut state = RunState::init(problem, alg, start).unwrap();
    let mut out = Vec::with_capacity(iters);
    for _ in 0..iters {
        step(alg, &mut state, problem, net, p).unwrap();
        out.push(state.z().iter().chain(state.w()).map(|x| x.to_bits()).collect());
    }
    (out, state)
}

pub fn start_point(dim: usize) -> Vec<f64> {
    (0..dim).map(|i| ((i * 7 + 3) % 11) as f64 / 11.0 - 0.4).collect()
}
