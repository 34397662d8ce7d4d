use masha::algorithms::Algorithm;
use masha::compressors::{CompressorKind, CompressorSpec};
use masha::problems::{Constants, Regime};
use masha::theory::*;
use proptest::prelude::*;

fn inputs(m: usize, l: f64, mu: f64, regime: Regime, q: f64) -> TheoryInputs {
    TheoryInputs {
        constants: Constants {
            l_global: l,
            l_node: vec![l; m],
            l_tilde: l,
            l_component: vec![vec![l]; m],
            l_hat: l,
            mu,
            regime,
        },
        devices: m,
        components: 1,
        participants: m,
        q_dev: vec![q; m],
        q_serv: 1.0,
        beta_dev: q,
        beta_serv: 1.0,
        epsilon: 1e-6,
        r0: Some(1.0),
    }
}

const FAMILY: [Algorithm; 7] = [
    Algorithm::Masha1,
    Algorithm::Masha2,
    Algorithm::VrMasha1,
    Algorithm::VrMasha2,
    Algorithm::PpMasha1,
    Algorithm::PpMasha2,
    Algorithm::Ceg,
];

#[test]
fn optimal_tau_examples() {
    assert!((optimal_tau(Algorithm::Masha1, 10.0 / 3.0, 1, 4, 4) - 0.7).abs() < 1e-15);
    assert_eq!(optimal_tau(Algorithm::VrMasha1, 2.0, 8, 4, 4), 0.875);
    assert_eq!(optimal_tau(Algorithm::PpMasha1, 4.0, 1, 4, 4), 0.75);
    assert_eq!(optimal_tau(Algorithm::Masha2, 2.0, 1, 4, 4), 0.75);
    assert_eq!(optimal_tau(Algorithm::Masha1, 1.0, 1, 4, 4), 0.5);
}

#[test]
fn pp_with_all_devices_uses_the_same_constant() {
    let i = inputs(5, 2.0, 0.1, Regime::StronglyMonotone, 3.0);
    assert!((cq_b(&i) - cq(&i)).abs() < 1e-12);
    assert!((pp_masha1_stepsize(&i, 0.7).unwrap() - masha1_stepsize(&i, 0.7).unwrap()).abs() < 1e-15);
    let g = pp_masha2_stepsize(&i, 0.8).unwrap();
    assert!(g.is_finite() && g > 0.0);
}

#[test]
fn inputs_from_compressors() {
    let problem = masha::problems::make_bilinear(5, 2, 0, masha::problems::LambdaMode::Explicit(0.1)).unwrap();
    let up = CompressorSpec::new(CompressorKind::RandK(3), 10, 64).unwrap();
    let i = TheoryInputs::new(&problem, &[up, up], &CompressorSpec::identity(10), 2).unwrap();
    assert!((i.beta_dev - 10.0 / 3.0).abs() < 1e-15);
    assert_eq!(i.q_serv, 1.0);
    assert!(TheoryInputs::new(&problem, &[up], &CompressorSpec::identity(10), 2).is_err());
    assert!(TheoryInputs::new(&problem, &[up, up], &CompressorSpec::identity(10), 3).is_err());
}

#[test]
fn complexity_grows_by_log_two_when_epsilon_halves() {
    let mut i = inputs(4, 2.0, 0.1, Regime::StronglyMonotone, 10.0 / 3.0);
    let k1 = iteration_complexity(Algorithm::Masha1, &i).unwrap().iterations;
    i.epsilon /= 2.0;
    let k2 = iteration_complexity(Algorithm::Masha1, &i).unwrap().iterations;
    let beta: f64 = 10.0 / 3.0;
    let rate = (beta + beta * beta / 4.0).sqrt() * 20.0;
    assert!(((k2 - k1) - rate * 2f64.ln()).abs() < 1e-9 * k2);
}

proptest! {
    #[test]
    fn step_sizes_positive_and_nonincreasing(
        alg_ix in 0usize..7,
        regime_ix in 0usize..3,
        m in 1usize..20,
        l in 0.1f64..100.0,
        q in 1.0f64..20.0,
        tau in 0.75f64..0.999,
        bump in 1.0f64..4.0,
    ) {
        let alg = FAMILY[alg_ix];
        let regime = [Regime::StronglyMonotone, Regime::Monotone, Regime::NonMonotoneMinty][regime_ix];
        if alg == Algorithm::Ceg && regime != Regime::StronglyMonotone {
            return Ok(());
        }
        let mu = if regime == Regime::StronglyMonotone { l / 10.0 } else { 0.0 };
        let base = inputs(m, l, mu, regime, q);
        let g = stepsize(alg, &base, tau, 1.0).unwrap();
        prop_assert!(g > 0.0 && g.is_finite());
        prop_assert!(stepsize(alg, &base, tau, 0.5).unwrap() <= g);

        let mut more_q = base.clone();
        more_q.q_dev.iter_mut().for_each(|x| *x *= bump);
        more_q.beta_dev *= bump;
        prop_assert!(stepsize(alg, &more_q, tau, 1.0).unwrap() <= g * (1.0 + 1e-12));

        let mut more_l = inputs(m, l * bump, mu, regime, q);
        more_l.constants.mu = mu;
        prop_assert!(stepsize(alg, &more_l, tau, 1.0).unwrap() <= g * (1.0 + 1e-12));

        let mut more_serv = base.clone();
        more_serv.q_serv = bump;
        prop_assert!(stepsize(alg, &more_serv, tau, 1.0).unwrap() <= g * (1.0 + 1e-12));
    }

    #[test]
    fn error_feedback_bounds_refuse_small_tau(tau in 0.01f64..0.7499) {
        let i = inputs(2, 1.0, 0.1, Regime::StronglyMonotone, 2.0);
        for alg in [Algorithm::Masha2, Algorithm::VrMasha2, Algorithm::PpMasha2] {
            let e = stepsize(alg, &i, tau, 1.0).unwrap_err().to_string();
            prop_assert!(e.contains("τ ≥ 3/4 required"));
        }
    }
}
