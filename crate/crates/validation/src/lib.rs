//! Acceptance criteria. Each criterion runs a fixed experiment and compares
//! the result with pinned tolerances; `tests/acceptance.rs` runs them in
//! order and prints one verdict line per criterion.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::time::Duration;

use masha::algorithms::{run, step, AlgoConfig, Algorithm, RunState, StepParams, StepSize, Tau, WUpdate};
use masha::compressors::{compress, CompressorKind, CompressorSpec};
use masha::experiment::{self, CompareOptions, ExperimentConfig};
use masha::linalg::{mean_in_order, norm, norm_sq, sub};
use masha::metrics::GapOptions;
use masha::problems::{make_bilinear, make_minty_rotation, BilinearSpec, LambdaMode, VIProblem};
use masha::simnet::Network;
use masha::theory::{self, TheoryInputs};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Result of one criterion: overall verdict plus one line per sub-check.
#[derive(Debug, Default)]
pub struct Outcome {
    pub pass: bool,
    pub lines: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Self {
            pass: true,
            lines: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, msg: impl Display) {
        self.pass &= ok;
        self.lines.push(format!("[{}] {msg}", if ok { "ok" } else { "FAILED" }));
    }

    fn note(&mut self, msg: impl Display) {
        self.lines.push(format!("      {msg}"));
    }
}

pub struct Criterion {
    pub id: &'static str,
    pub title: &'static str,
    pub limit: Duration,
    pub run: fn() -> Outcome,
}

pub fn criteria() -> Vec<Criterion> {
    let secs = Duration::from_secs;
    vec![
        Criterion { id: "AC1", title: "compressor laws", limit: secs(10), run: ac1_compressor_laws },
        Criterion { id: "AC2", title: "exhaustive enumeration oracles", limit: secs(1), run: ac2_enumeration },
        Criterion { id: "AC3", title: "bitwise reduction identities", limit: secs(10), run: ac3_reductions },
        Criterion { id: "AC4", title: "error-feedback identities every iteration", limit: secs(5), run: ac4_masha2_identities },
        Criterion { id: "AC5", title: "linear rate, strongly monotone", limit: secs(30), run: ac5_linear_rate },
        Criterion { id: "AC6", title: "O(1/K) gap, monotone", limit: secs(60), run: ac6_monotone_gap },
        Criterion { id: "AC7", title: "operator-norm decay, Minty instance", limit: secs(60), run: ac7_minty },
        Criterion { id: "AC8", title: "five-method ordering at equal bits", limit: secs(300), run: ac8_ordering },
        Criterion { id: "AC9", title: "compressed extragradient noise floor", limit: secs(120), run: ac9_ceg_floor },
        Criterion { id: "AC10", title: "ledger statistics", limit: secs(60), run: ac10_ledger },
        Criterion { id: "AC11", title: "byte-identical reruns", limit: secs(60), run: ac11_determinism },
    ]
}

fn spec(kind: CompressorKind, dim: usize) -> CompressorSpec {
    CompressorSpec::new(kind, dim, 64).expect("valid compressor")
}

fn rand_frac(dim: usize, f: f64) -> CompressorSpec {
    spec(CompressorKind::RandK(CompressorSpec::k_for_fraction(dim, f)), dim)
}

fn top_frac(dim: usize, f: f64) -> CompressorSpec {
    spec(CompressorKind::TopK(CompressorSpec::k_for_fraction(dim, f)), dim)
}

fn network(p: &VIProblem, seed: u64, up: CompressorSpec, down: CompressorSpec) -> Network {
    Network::uniform(seed, p.num_nodes(), up, down).expect("network")
}

fn rand30(p: &VIProblem, seed: u64) -> Network {
    network(p, seed, rand_frac(p.dim(), 0.3), CompressorSpec::identity(p.dim()))
}

fn start_point(dim: usize) -> Vec<f64> {
    (0..dim).map(|i| ((i * 7 + 3) % 11) as f64 / 11.0 - 0.4).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

// AC1

fn ac1_compressor_laws() -> Outcome {
    let mut out = Outcome::new();
    let (d, k, n) = (10usize, 3usize, 1_000_000usize);
    let q = d as f64 / k as f64;
    let raw: Vec<f64> = (1..=d).map(|i| i as f64).collect();
    let z: Vec<f64> = raw.iter().map(|x| x / norm(&raw)).collect();
    let s = spec(CompressorKind::RandK(k), d);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut sum = vec![0.0; d];
    let mut second = 0.0;
    for _ in 0..n {
        let m = compress(&s, &z, &mut rng).expect("compress");
        for (&i, &v) in m.indices.iter().zip(&m.values) {
            sum[i as usize] += v;
            second += v * v;
        }
    }
    let dev = norm(&sub(&sum.iter().map(|x| x / n as f64).collect::<Vec<_>>(), &z));
    let bound = 5.0 * (q / n as f64).sqrt();
    out.check(dev <= bound, format!("Rand-{k} of d={d}, N={n}: |mean - z| = {dev:.3e} <= 5 sqrt(q/N) = {bound:.3e}"));
    let m2 = second / n as f64;
    let rel = (m2 - q).abs() / q;
    out.check(rel <= 0.01, format!("second moment {m2:.5} vs (d/k)|z|^2 = {q:.5}: relative error {rel:.2e} <= 1e-2"));

    let mut worst = f64::NEG_INFINITY;
    let mut violations = 0;
    for _ in 0..100_000 {
        let d = rng.random_range(1..=64usize);
        let k = rng.random_range(1..=d);
        let z: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c = compress(&spec(CompressorKind::TopK(k), d), &z, &mut rng)
            .expect("compress")
            .decompress()
            .expect("decompress");
        let lhs = norm_sq(&sub(&c, &z));
        let rhs = (1.0 - k as f64 / d as f64) * norm_sq(&z);
        if lhs > rhs * (1.0 + 1e-12) {
            violations += 1;
        }
        if rhs > 0.0 {
            worst = worst.max(lhs / rhs);
        }
    }
    out.check(
        violations == 0,
        format!("Top-k contraction on 1e5 random vectors: {violations} violations (max ratio {worst:.6}, slack 1e-12)"),
    );
    out
}

// AC2

fn ac2_enumeration() -> Outcome {
    let mut out = Outcome::new();
    let base = [0.5, -1.25, 2.0, 3.5];
    let mut worst_mean: f64 = 0.0;
    let mut worst_second: f64 = 0.0;
    let mut all_outcomes = true;
    let mut scaled_exactly = true;
    for d in 1..=4usize {
        let z = &base[..d];
        for k in 1..=d {
            let s = spec(CompressorKind::RandK(k), d);
            let mut outcomes: BTreeMap<Vec<u32>, Vec<f64>> = BTreeMap::new();
            for seed in 0..2000 {
                let m = compress(&s, z, &mut ChaCha8Rng::seed_from_u64(seed)).expect("compress");
                let scale = d as f64 / k as f64;
                scaled_exactly &= m.indices.iter().zip(&m.values).all(|(&i, &v)| v == z[i as usize] * scale);
                outcomes.insert(m.indices.clone(), m.decompress().expect("decompress"));
            }
            let expected_count = binomial(d, k);
            all_outcomes &= outcomes.len() == expected_count;
            let count = outcomes.len() as f64;
            let mut mean = vec![0.0; d];
            let mut second = 0.0;
            for v in outcomes.values() {
                mean.iter_mut().zip(v).for_each(|(a, b)| *a += b / count);
                second += norm_sq(v) / count;
            }
            worst_mean = worst_mean.max(norm(&sub(&mean, z)) / norm(z));
            let law = d as f64 / k as f64 * norm_sq(z);
            worst_second = worst_second.max((second - law).abs() / law);
        }
    }
    out.check(all_outcomes && scaled_exactly, "every C(d,k) support reached for d<=4, retained entries equal z_i d/k exactly");
    out.check(worst_mean <= 1e-14, format!("enumerated E[Q(z)] = z: worst relative error {worst_mean:.1e} <= 1e-14"));
    out.check(
        worst_second <= 1e-14,
        format!("enumerated E|Q(z)|^2 = (d/k)|z|^2: worst relative error {worst_second:.1e} <= 1e-14"),
    );

    // partial participation: M = 4, b = 2
    let p = make_bilinear(2, 4, 7, LambdaMode::Explicit(0.1)).expect("problem");
    let z0 = start_point(p.dim());
    let f0 = p.eval_global(&z0).expect("eval");
    let half: Vec<f64> = z0.iter().zip(&f0).map(|(a, b)| a - b).collect();
    let deltas: Vec<Vec<f64>> = (0..4)
        .map(|m| sub(&p.eval_operator(m, &half).expect("eval"), &p.eval_operator(m, &z0).expect("eval")))
        .collect();
    let id = CompressorSpec::identity(p.dim());
    let mut by_subset = BTreeMap::new();
    let mut worst_step: f64 = 0.0;
    for seed in 0..200 {
        let mut net = network(&p, seed, id, id);
        net.force_coins([false]);
        let mut s = RunState::init(&p, Algorithm::PpMasha1, &z0).expect("init");
        step(Algorithm::PpMasha1, &mut s, &p, &mut net, &params(1.0, 0.5, 2)).expect("step");
        let g: Vec<f64> = half.iter().zip(s.z()).map(|(h, z)| h - z).collect();
        let direct = mean_in_order(s.participants.iter().map(|&m| deltas[m].as_slice()), p.dim());
        worst_step = worst_step.max(norm(&sub(&g, &direct)) / (1.0 + norm(&direct)));
        by_subset.insert(s.participants.clone(), direct);
    }
    let over = mean_in_order(by_subset.values().map(Vec::as_slice), p.dim());
    let full = mean_in_order(deltas.iter().map(Vec::as_slice), p.dim());
    let err = norm(&sub(&over, &full)) / norm(&full);
    out.check(
        by_subset.len() == 6 && worst_step <= 1e-12 && err <= 1e-14,
        format!(
            "PP-MASHA1 M=4, b=2: {} of 6 subsets seen, step matches subset mean to {worst_step:.1e}, mean over subsets = full mean to {err:.1e} (<= 1e-14)",
            by_subset.len()
        ),
    );
    out
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

fn params(gamma: f64, tau: f64, participants: usize) -> StepParams {
    StepParams {
        gamma,
        tau,
        participants,
        w_update: WUpdate::ZK,
        diagnostics: true,
    }
}

// AC3

fn trajectory(alg: Algorithm, p: &VIProblem, mut net: Network, prm: &StepParams, iters: usize) -> Vec<Vec<u64>> {
    let mut s = RunState::init(p, alg, &start_point(p.dim())).expect("init");
    (0..iters)
        .map(|_| {
            step(alg, &mut s, p, &mut net, prm).expect("step");
            s.z().iter().chain(s.w()).map(|x| x.to_bits()).collect()
        })
        .collect()
}

fn ac3_reductions() -> Outcome {
    let mut out = Outcome::new();
    let p = make_bilinear(5, 4, 3, LambdaMode::Explicit(0.1)).expect("problem");
    let d = p.dim();
    let id = CompressorSpec::identity(d);
    let iters = 1000;

    let prm = params(1.0 / 64.0, 0.8, 4);
    let a = trajectory(Algorithm::Masha1, &p, network(&p, 9, id, id), &prm, iters);
    let b = trajectory(Algorithm::Masha2, &p, network(&p, 9, id, id), &prm, iters);
    out.check(a == b, format!("identity compressors: MASHA1 == MASHA2 bitwise over {iters} iterations (gamma = 2^-6)"));

    let prm = params(0.01, 0.75, 4);
    let up_r = rand_frac(d, 0.3);
    let up_t = top_frac(d, 0.3);
    let a = trajectory(Algorithm::Masha1, &p, network(&p, 5, up_r, id), &prm, iters);
    let b = trajectory(Algorithm::VrMasha1, &p, network(&p, 5, up_r, id), &prm, iters);
    let a2 = trajectory(Algorithm::Masha2, &p, network(&p, 5, up_t, id), &prm, iters);
    let b2 = trajectory(Algorithm::VrMasha2, &p, network(&p, 5, up_t, id), &prm, iters);
    out.check(a == b && a2 == b2, "r = 1: VR-MASHA1 == MASHA1 (Rand-30%) and VR-MASHA2 == MASHA2 (Top-30%) bitwise");

    let down_r = rand_frac(d, 0.5);
    let down_t = top_frac(d, 0.5);
    let a = trajectory(Algorithm::Masha1, &p, network(&p, 6, up_r, down_r), &prm, iters);
    let b = trajectory(Algorithm::PpMasha1, &p, network(&p, 6, up_r, down_r), &prm, iters);
    let a2 = trajectory(Algorithm::Masha2, &p, network(&p, 6, up_t, down_t), &prm, iters);
    let b2 = trajectory(Algorithm::PpMasha2, &p, network(&p, 6, up_t, down_t), &prm, iters);
    out.check(a == b && a2 == b2, "b = M: PP-MASHA1 == MASHA1 and PP-MASHA2 == MASHA2 bitwise (bidirectional compression)");

    let prm = params(0.013, 0.5, 4);
    let a = trajectory(Algorithm::ExtraGradient, &p, network(&p, 1, id, id), &prm, iters);
    let b = trajectory(Algorithm::Ceg, &p, network(&p, 1, id, id), &prm, iters);
    out.check(a == b, "identity compressors: CEG == extragradient bitwise");
    out
}

// AC4

fn ac4_masha2_identities() -> Outcome {
    let mut out = Outcome::new();
    let p = make_bilinear(10, 4, 1, LambdaMode::Explicit(0.1)).expect("problem");
    let d = p.dim();
    let mut net = network(&p, 2, top_frac(d, 0.3), top_frac(d, 0.5));
    let mut s = RunState::init(&p, Algorithm::Masha2, &start_point(d)).expect("init");
    let prm = params(0.01, 0.8, 4);
    let mut max_error: f64 = 0.0;
    for _ in 0..1000 {
        step(Algorithm::Masha2, &mut s, &p, &mut net, &prm).expect("step");
        max_error = max_error.max(norm(&s.server_error));
        for dev in &s.devices {
            max_error = max_error.max(norm(&dev.error));
        }
    }
    let dg = &s.diagnostics;
    out.check(dg.checked_iterations == 1000, format!("{} of 1000 iterations audited", dg.checked_iterations));
    out.check(
        dg.conservation_failures == 0,
        format!("e' + sent == e + gamma*Delta exactly: {} coordinate failures", dg.conservation_failures),
    );
    out.check(
        dg.max_hat_residual <= 1e-10,
        format!("hat-sequence identity: max relative residual {:.2e} <= 1e-10", dg.max_hat_residual),
    );
    out.check(max_error > 0.0, format!("error vectors are exercised (max |e| = {max_error:.3e})"));
    out.check(dg.replication_failures == 0, "device copies of z, w, F(w) bitwise equal after every iteration");
    out
}

// AC5

fn ac5_linear_rate() -> Outcome {
    let mut out = Outcome::new();
    let p = make_bilinear(20, 4, 0, LambdaMode::Explicit(0.1)).expect("problem");
    let seeds = 20u64;
    let (iters, every) = (40_000u64, 100u64);
    let mut sums: Vec<f64> = Vec::new();
    let mut gamma = 0.0;
    for seed in 0..seeds {
        let mut cfg = AlgoConfig::new(Algorithm::Masha1, StepSize::Theory { safety: 1.0 }, iters, seed);
        cfg.tau = Tau::Explicit(0.7);
        cfg.metric_every = every;
        let r = run(&p, &cfg, &mut rand30(&p, seed)).expect("run");
        gamma = r.gamma;
        if sums.is_empty() {
            sums = vec![0.0; r.samples.len()];
        }
        for (acc, s) in sums.iter_mut().zip(&r.samples) {
            *acc += s.dist_sq.expect("solution known") + s.dist_sq_w.expect("solution known");
        }
    }
    let phi: Vec<f64> = sums.iter().map(|x| x / seeds as f64).collect();
    let mu = p.constants().mu;
    let target = 1e-8 * phi[0];
    let hit = phi.iter().position(|&v| v <= target);

    // least squares of ln(phi) on k up to the 1e-8 crossing
    let end = hit.unwrap_or(phi.len() - 1).max(2);
    let ks: Vec<f64> = (0..=end).map(|i| (i as u64 * every) as f64).collect();
    let ys: Vec<f64> = phi[..=end].iter().map(|v| v.ln()).collect();
    let (kbar, ybar) = (mean(&ks), mean(&ys));
    let sxx: f64 = ks.iter().map(|k| (k - kbar).powi(2)).sum();
    let slope = ks.iter().zip(&ys).map(|(k, y)| (k - kbar) * (y - ybar)).sum::<f64>() / sxx;
    let resid: f64 = ks.iter().zip(&ys).map(|(k, y)| (y - ybar - slope * (k - kbar)).powi(2)).sum();
    let se_slope = (resid / (ks.len() as f64 - 2.0) / sxx).sqrt();
    let rate = slope.exp();
    let se_rate = rate * se_slope;
    let bound = 1.0 - mu * gamma / 2.0;
    out.note(format!("gamma = {gamma:.4e} (theory), tau = 0.7, mu = {mu}, 20 seeds, Phi_0 = {:.4e}", phi[0]));
    out.check(
        rate <= bound + 3.0 * se_rate,
        format!("fitted rate {rate:.7} (SE {se_rate:.1e}) <= 1 - mu*gamma/2 = {bound:.7} + 3 SE"),
    );

    let net = rand30(&p, 0);
    let mut inputs = TheoryInputs::new(&p, net.uplink_specs(), net.downlink_spec(), 4).expect("inputs");
    inputs.epsilon = 1e-8;
    let predicted = theory::iteration_complexity(Algorithm::Masha1, &inputs).expect("complexity").iterations;
    let reached = hit.map(|i| i as u64 * every);
    out.check(
        reached.is_some_and(|k| (k as f64) <= 10.0 * predicted),
        format!(
            "Phi <= 1e-8 Phi_0 at k = {} vs 10 x predicted K = {:.0}",
            reached.map_or("never".to_string(), |k| k.to_string()),
            10.0 * predicted
        ),
    );
    out
}

// AC6

fn ac6_monotone_gap() -> Outcome {
    let mut out = Outcome::new();
    let p = make_bilinear(10, 4, 0, LambdaMode::Explicit(0.0)).expect("problem");
    let k = 50_000u64;
    let (mut at_k, mut at_2k) = (Vec::new(), Vec::new());
    let mut gamma = 0.0;
    for seed in 0..20 {
        let mut cfg = AlgoConfig::new(Algorithm::Masha1, StepSize::Theory { safety: 1.0 }, 2 * k, seed);
        cfg.metric_every = k;
        cfg.gap = Some(GapOptions { radius: None, restarts: 8, iters: 200, seed });
        let r = run(&p, &cfg, &mut rand30(&p, seed)).expect("run");
        gamma = r.gamma;
        for s in &r.samples {
            if s.iter == k {
                at_k.push(s.gap_est.expect("gap requested"));
            } else if s.iter == 2 * k {
                at_2k.push(s.gap_est.expect("gap requested"));
            }
        }
    }
    let (g1, g2) = (mean(&at_k), mean(&at_2k));
    let ratio = g1 / g2;
    out.note(format!("regime {:?}, gamma = {gamma:.4e} (theory), Rand-30%, 20 seeds", p.regime()));
    out.check(
        at_k.len() == 20 && at_2k.len() == 20 && (1.6..=2.4).contains(&ratio),
        format!("mean gap at K={k}: {g1:.4e}, at 2K: {g2:.4e}; ratio {ratio:.3} in [1.6, 2.4]"),
    );
    out
}

// AC7

fn ac7_minty() -> Outcome {
    let mut out = Outcome::new();
    let p = make_minty_rotation(10, 4, 0, 1e-3).expect("problem");
    let k = 10_000u64;
    let cfg = AlgoConfig::new(Algorithm::Masha1, StepSize::Theory { safety: 1.0 }, 2 * k, 0);
    let r = run(&p, &cfg, &mut rand30(&p, 0)).expect("run");
    let min_below = |limit: u64| {
        r.samples
            .iter()
            .filter(|s| s.iter < limit)
            .map(|s| s.op_norm_sq)
            .fold(f64::INFINITY, f64::min)
    };
    let (m1, m2) = (min_below(k), min_below(2 * k));
    out.note(format!("regime {:?}, gamma = {:.4e} (theory), start |F(w0)|^2 = {:.4e}", p.regime(), r.gamma, r.samples[0].op_norm_sq));
    out.check(
        m1 / m2 >= 1.8,
        format!("min_(k<K) |F(w^k)|^2 = {m1:.4e} at K={k}, {m2:.4e} at 2K: ratio {:.3} >= 1.8", m1 / m2),
    );
    out
}

// AC8

fn ac8_ordering() -> Outcome {
    let mut out = Outcome::new();
    let opts = CompareOptions::figure1();
    let outcome = experiment::cmd_compare(&opts).expect("compare");
    let med: BTreeMap<&str, f64> = outcome
        .series
        .iter()
        .map(|s| (s.label.as_str(), s.median_final_dist_sq()))
        .collect();
    for s in &outcome.series {
        out.note(format!(
            "{:9} gamma {:.3e}  median final dist_sq {:.6e}",
            s.label,
            s.gamma,
            med[s.label.as_str()]
        ));
    }
    out.note(format!(
        "budget {:.2} Mbyte per run, initial dist_sq {:.6e}",
        outcome.bit_budget as f64 / 8e6,
        outcome.series[0].reports[0].samples[0].dist_sq.unwrap_or(f64::NAN)
    ));
    let (m1, m2, ceg, qsgd, ef) = (med["masha1"], med["masha2"], med["ceg"], med["qsgd-gda"], med["ef-gda"]);
    out.check(outcome.series.len() == 5, "five series");
    out.check(m1.max(m2) < ceg, format!("max(MASHA1, MASHA2) = {:.3e} < CEG = {ceg:.6e}", m1.max(m2)));
    out.check(ceg < qsgd.min(ef), format!("CEG = {ceg:.6e} < min(QSGD-GDA, EF-GDA) = {:.6e}", qsgd.min(ef)));
    out.check(m2 <= m1, format!("MASHA2 = {m2:.3e} <= MASHA1 = {m1:.3e}"));
    out
}

// AC9

fn ac9_ceg_floor() -> Outcome {
    let mut out = Outcome::new();
    let mut spec = BilinearSpec::random(5, 4, 0, LambdaMode::Explicit(0.0)).expect("spec");
    let a_max = VIProblem::bilinear(&spec).expect("problem").constants().l_max();
    spec.lambda = 3.0 * a_max;
    let p = VIProblem::bilinear(&spec).expect("problem");
    let z_star = p.exact_solution().expect("solution").to_vec();
    let heterogeneity: f64 = (0..p.num_nodes())
        .map(|m| norm_sq(&p.eval_operator(m, &z_star).expect("eval")))
        .sum();
    let mu = p.constants().mu;
    out.note(format!("d=5, M=4, lambda = 3 max|A_m| = {:.4}, sum_m |F_m(z*)|^2 = {heterogeneity:.4}", spec.lambda));

    let net = rand30(&p, 0);
    let inputs = TheoryInputs::new(&p, net.uplink_specs(), net.downlink_spec(), 4).expect("inputs");
    let g0 = theory::ceg_stepsize(&inputs).expect("step");
    let gammas = [g0, g0 / 4.0, g0 / 16.0];
    let mut floors = Vec::new();
    for &gamma in &gammas {
        let iters = ((40.0 / (mu * gamma / 2.0)) as u64).max(40_000);
        let mut per_seed = Vec::new();
        for seed in 0..5 {
            let mut cfg = AlgoConfig::new(Algorithm::Ceg, StepSize::Explicit(gamma), iters, seed);
            cfg.metric_every = 10;
            let r = run(&p, &cfg, &mut rand30(&p, seed)).expect("run");
            let tail = &r.samples[r.samples.len() / 2..];
            per_seed.push(tail.iter().map(|s| s.dist_sq.expect("solution known")).sum::<f64>() / tail.len() as f64);
        }
        let floor = mean(&per_seed);
        out.note(format!(
            "gamma {gamma:.4e}: {iters} iterations, floor {floor:.4e}, additive term of the bound {:.4e}",
            theory::ceg_noise_term(&inputs, gamma, heterogeneity)
        ));
        floors.push(floor);
    }
    out.check(heterogeneity > 1e-6, "F_m(z*) != 0 on this instance");
    let shrink = [floors[0] / floors[1], floors[1] / floors[2]];
    out.check(
        shrink.iter().all(|&s| s >= 3.0),
        format!("floor shrinks >= 3x per quartering of gamma: {:.2}x, {:.2}x", shrink[0], shrink[1]),
    );
    let normalised: Vec<f64> = floors.iter().zip(&gammas).map(|(f, g)| f / (g * g)).collect();
    let spread = normalised.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        / normalised.iter().copied().fold(f64::INFINITY, f64::min);
    let slope = (floors[0] / floors[2]).ln() / 16f64.ln();
    out.check(
        spread <= 2.0,
        format!("floor proportional to gamma^2 within factor 2: floor/gamma^2 spread {spread:.2} (log-log slope {slope:.2})"),
    );
    let mut cfg = AlgoConfig::new(Algorithm::Masha1, StepSize::Theory { safety: 1.0 }, 40_000, 0);
    cfg.metric_every = 1000;
    let r = run(&p, &cfg, &mut rand30(&p, 0)).expect("run");
    let lowest = floors.iter().copied().fold(f64::INFINITY, f64::min);
    let last = r.last().dist_sq.expect("solution known");
    out.check(last < lowest, format!("MASHA1 (theory gamma) reaches {last:.3e} < lowest CEG floor {lowest:.3e}"));
    out
}

// AC10

fn ac10_ledger() -> Outcome {
    let mut out = Outcome::new();
    let p = make_bilinear(10, 4, 0, LambdaMode::Explicit(0.1)).expect("problem");
    let d = p.dim();
    let k_keep = CompressorSpec::k_for_fraction(d, 0.3) as u64;
    let iters = 100_000u64;
    let tau = 0.7;
    let mut net = rand30(&p, 3);
    let mut cfg = AlgoConfig::new(Algorithm::Masha1, StepSize::Explicit(0.005), iters, 3);
    cfg.tau = Tau::Explicit(tau);
    cfg.metric_every = iters;
    run(&p, &cfg, &mut net).expect("run");
    let ledger = net.ledger();
    let freq = ledger.full_sync_events as f64 / iters as f64;
    let band = 5.0 * (tau * (1.0 - tau) / iters as f64).sqrt();
    out.check(
        (freq - (1.0 - tau)).abs() <= band,
        format!("full-sync frequency {freq:.5} within 1 - tau = {:.1} +/- {band:.5}", 1.0 - tau),
    );
    let per_device = k_keep * 64;
    let bad = ledger
        .history()
        .filter(|h| {
            let sync = if h.full_sync { 4 * d as u64 * 64 } else { 0 };
            h.up_payload != 4 * per_device + sync
        })
        .count();
    out.check(
        bad == 0 && ledger.history().count() as u64 == iters,
        format!("compressed uplink payload = k*b = {k_keep}*64 = {per_device} bits per device in all {iters} iterations ({bad} mismatches)"),
    );
    let per_device_ok = ledger
        .uplink_payload_bits
        .iter()
        .all(|&b| b == iters * per_device + ledger.full_sync_events * d as u64 * 64);
    out.check(per_device_ok, "per-device totals equal k*b*K plus dense synchronisations");
    out
}

// AC11

const DETERMINISM_CONFIG: &str = r#"
[problem]
kind = "bilinear"
d = 6
nodes = 4
seed = 3
lambda = 0.1

[run]
iterations = 300
metric_every = 10
repeat_seeds = 2
seed = 5
ledger = true
gap = { restarts = 8, iters = 50 }

[[algorithm]]
name = "masha1"
uplink = "rand:0.3"
downlink = "rand:0.5"

[[algorithm]]
name = "masha2"
gamma = 0.01
tau = 0.8
uplink = "top:0.3"
downlink = "top:0.5"

[[algorithm]]
name = "pp-masha1"
participants = 2
gamma = 0.01
uplink = "rand:0.3"
"#;

fn read_dir(path: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(path)
        .expect("read dir")
        .map(|e| {
            let e = e.expect("entry");
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).expect("read"))
        })
        .collect()
}

fn ac11_determinism() -> Outcome {
    let mut out = Outcome::new();
    let cfg = ExperimentConfig::parse(DETERMINISM_CONFIG).expect("config");
    let (a, b) = (tempfile::tempdir().expect("tmp"), tempfile::tempdir().expect("tmp"));
    experiment::cmd_run(&cfg, a.path()).expect("run");
    experiment::cmd_run(&cfg, b.path()).expect("run");
    let (fa, fb) = (read_dir(a.path()), read_dir(b.path()));
    let names: BTreeSet<_> = fa.keys().collect();
    out.check(
        fa == fb && names.len() == 3 * 2 * 2 + 3 + 1,
        format!("run: {} files, byte-identical across two executions", names.len()),
    );
    let sweep = |cfg: &ExperimentConfig| experiment::sweep_csv(&experiment::cmd_sweep(cfg, &[0.004, 0.01, 0.03]).expect("sweep"));
    out.check(sweep(&cfg) == sweep(&cfg), "sweep table byte-identical across two executions");
    out
}
