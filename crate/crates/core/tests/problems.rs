use masha::linalg::{dot, norm, norm_sq, sub};
use masha::problems::{make_bilinear, make_minty_rotation, LambdaMode, Regime, VIProblem};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_point(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect()
}

#[test]
fn global_operator_is_the_node_average() {
    let p = make_bilinear(6, 5, 1, LambdaMode::Explicit(0.2)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..100 {
        let z = random_point(&mut rng, p.dim());
        let f = p.eval_global(&z).unwrap();
        let mean = p.eval_mean(&z).unwrap();
        assert!(norm(&sub(&f, &mean)) <= 1e-12 * (1.0 + norm(&f)));
    }
}

#[test]
fn node_lipschitz_constants_are_certified() {
    let p = make_bilinear(5, 3, 2, LambdaMode::Explicit(0.5)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let (a, b) = (random_point(&mut rng, p.dim()), random_point(&mut rng, p.dim()));
        for m in 0..p.num_nodes() {
            let lhs = norm(&sub(&p.eval_operator(m, &a).unwrap(), &p.eval_operator(m, &b).unwrap()));
            assert!(lhs <= p.constants().l_node[m] * norm(&sub(&a, &b)) * (1.0 + 1e-9));
        }
    }
}

#[test]
fn strong_monotonicity_is_certified() {
    let lambda = 0.3;
    let p = make_bilinear(5, 3, 3, LambdaMode::Explicit(lambda)).unwrap();
    assert_eq!(p.regime(), Regime::StronglyMonotone);
    assert!((p.constants().mu - lambda).abs() < 1e-9);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..500 {
        let (a, b) = (random_point(&mut rng, p.dim()), random_point(&mut rng, p.dim()));
        let df = sub(&p.eval_global(&a).unwrap(), &p.eval_global(&b).unwrap());
        let dz = sub(&a, &b);
        assert!(dot(&df, &dz) >= lambda * norm_sq(&dz) * (1.0 - 1e-9));
    }
}

#[test]
fn zero_lambda_is_monotone() {
    let p = make_bilinear(4, 2, 0, LambdaMode::Explicit(0.0)).unwrap();
    assert_eq!(p.regime(), Regime::Monotone);
    assert_eq!(p.constants().mu, 0.0);
    assert!(p.exact_solution().is_some());
}

#[test]
fn reference_scale_instance() {
    let p = make_bilinear(100, 16, 0, LambdaMode::PaperRule).unwrap();
    assert_eq!(p.dim(), 200);
    assert_eq!(p.regime(), Regime::StronglyMonotone);
    let z = p.exact_solution().unwrap();
    let r = norm(&p.eval_global(z).unwrap());
    assert!(r <= 1e-10 * (1.0 + p.constants().l_global * norm(z)), "{r}");
}

#[test]
fn row_block_components_average_to_the_node_operator() {
    let p = make_bilinear(5, 2, 4, LambdaMode::Explicit(0.1)).unwrap().with_row_block_components(3).unwrap();
    assert_eq!(p.components(), 3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let z = random_point(&mut rng, p.dim());
        for m in 0..2 {
            let mut avg = vec![0.0; p.dim()];
            for i in 0..3 {
                let c = p.eval_component(m, i, &z).unwrap();
                avg.iter_mut().zip(&c).for_each(|(a, b)| *a += b / 3.0);
            }
            let f = p.eval_operator(m, &z).unwrap();
            assert!(norm(&sub(&avg, &f)) <= 1e-12 * (1.0 + norm(&f)));
        }
    }
    assert!(p.eval_component(0, 3, &vec![0.0; p.dim()]).is_err());
    let c = p.constants();
    assert!(c.l_hat >= c.l_tilde * (1.0 - 1e-12));
}

#[test]
fn file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    let p = make_minty_rotation(4, 3, 5, 1e-3).unwrap();
    p.save(&path).unwrap();
    let q = VIProblem::load(&path).unwrap();
    assert_eq!(p.to_json().unwrap(), q.to_json().unwrap());
    assert_eq!(q.regime(), Regime::NonMonotoneMinty);
    assert!(VIProblem::from_json("{\"format\":\"something-else\"}").is_err());
}

#[test]
fn minty_condition_holds_along_random_points() {
    let p = make_minty_rotation(6, 4, 8, 1e-3).unwrap();
    let z_star = p.exact_solution().unwrap().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..500 {
        let z = random_point(&mut rng, p.dim());
        let f = p.eval_global(&z).unwrap();
        assert!(dot(&f, &sub(&z, &z_star)) >= 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn same_seed_same_instance(d in 1usize..6, m in 1usize..5, seed in any::<u64>()) {
        let a = make_bilinear(d, m, seed, LambdaMode::PaperRule).unwrap().to_json().unwrap();
        let b = make_bilinear(d, m, seed, LambdaMode::PaperRule).unwrap().to_json().unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn exact_solution_residual(d in 1usize..7, m in 1usize..4, seed in any::<u64>(), lambda in 0.01f64..2.0) {
        let p = make_bilinear(d, m, seed, LambdaMode::Explicit(lambda)).unwrap();
        let z = p.exact_solution().unwrap();
        let scale = 1.0 + p.constants().l_global * norm(z);
        prop_assert!(norm(&p.eval_global(z).unwrap()) <= 1e-10 * scale);
    }
}
