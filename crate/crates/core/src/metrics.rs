//! Convergence measures: squared distance, restricted gap, operator norm.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, axpy, dot, norm};
use crate::problems::VIProblem;
use crate::rng;

pub fn dist_sq(z: &[f64], z_star: &[f64]) -> Result<f64> {
    check_dim(z_star.len(), z.len())?;
    Ok(linalg::dist_sq(z, z_star))
}

/// `‖F(w)‖²` of the averaged operator.
pub fn op_norm_sq(problem: &VIProblem, w: &[f64]) -> Result<f64> {
    Ok(linalg::norm_sq(&problem.eval_global(w)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapOptions {
    /// Ball radius; `None` means `2·max(‖z⁰‖, ‖z*‖)`.
    pub radius: Option<f64>,
    pub restarts: usize,
    pub iters: usize,
    pub seed: u64,
}

impl Default for GapOptions {
    fn default() -> Self {
        Self {
            radius: None,
            restarts: 8,
            iters: 200,
            seed: 0,
        }
    }
}

/// Lower estimate of `sup_{‖u‖≤R} ⟨F(u), z̄ − u⟩` by multi-start projected
/// gradient ascent. Restart 0 starts at the projection of `z̄`, later ones at
/// seeded uniform points of the ball; `z*` is always evaluated too. Adding
/// restarts never lowers the result.
///
/// For monotone affine `F` the objective is concave and the ascent finds the
/// maximum; otherwise the value is only a lower bound.
pub fn gap_estimate(
    problem: &VIProblem,
    z_bar: &[f64],
    radius: f64,
    restarts: usize,
    iters: usize,
    seed: u64,
) -> Result<f64> {
    let d = problem.dim();
    check_dim(d, z_bar.len())?;
    if !(radius > 0.0) || restarts == 0 {
        return Err(Error::InvalidParameter(format!(
            "gap estimate needs radius > 0 and restarts >= 1 (got {radius}, {restarts})"
        )));
    }
    if let Some(z_star) = problem.exact_solution() {
        if norm(z_star) >= radius {
            return Err(Error::Precondition(format!(
                "gap ball of radius {radius} does not contain the solution"
            )));
        }
    }
    let op = problem.global_operator();
    let phi = |u: &[f64]| -> f64 {
        let f = op.apply(u);
        f.iter().zip(z_bar).zip(u).map(|((fi, zi), ui)| fi * (zi - ui)).sum()
    };
    // ∇φ(u) = Bᵀ(z̄ − u) − F(u)
    let grad = |u: &[f64]| -> Vec<f64> {
        let diff = linalg::sub(z_bar, u);
        let mut g = op.linear_transpose(&diff);
        axpy(-1.0, &op.apply(u), &mut g);
        g
    };
    let curvature = op.symmetric_part_norm();
    let flat = curvature <= 1e-12 * (1.0 + op.lipschitz());

    let mut best = f64::NEG_INFINITY;
    if let Some(z_star) = problem.exact_solution() {
        best = phi(z_star);
    }
    for start in 0..restarts {
        let mut u = if start == 0 {
            z_bar.to_vec()
        } else {
            let mut r = rng::stream(seed, rng::TAG_GAP, start as u64, 0);
            let mut v: Vec<f64> = (0..d).map(|_| r.sample(StandardNormal)).collect();
            let scale = radius * r.random::<f64>().powf(1.0 / d as f64) / norm(&v).max(f64::MIN_POSITIVE);
            v.iter_mut().for_each(|x| *x *= scale);
            v
        };
        project(&mut u, radius);
        best = best.max(phi(&u));
        for _ in 0..iters {
            let g = grad(&u);
            let gn = norm(&g);
            if gn == 0.0 {
                break;
            }
            let step = if flat { 2.0 * radius / gn } else { 1.0 / curvature };
            axpy(step, &g, &mut u);
            project(&mut u, radius);
            best = best.max(phi(&u));
        }
    }
    if !best.is_finite() {
        return Err(Error::NonFinite("gap estimate".into()));
    }
    Ok(best)
}

fn project(u: &mut [f64], radius: f64) {
    let n = norm(u);
    if n > radius {
        let s = radius / n;
        u.iter_mut().for_each(|x| *x *= s);
    }
}

/// Default gap radius `2·max(‖z⁰‖, ‖z*‖)`.
pub fn default_gap_radius(z0: &[f64], z_star: Option<&[f64]>) -> f64 {
    2.0 * norm(z0).max(z_star.map(norm).unwrap_or(0.0))
}

/// `⟨F(u), z̄ − u⟩`, exposed for brute-force checks.
pub fn gap_objective(problem: &VIProblem, z_bar: &[f64], u: &[f64]) -> Result<f64> {
    let f = problem.eval_global(u)?;
    Ok(dot(&f, &linalg::sub(z_bar, u)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::problems::{AffineOperator, BilinearSpec, LambdaMode, Node};

    #[test]
    fn dist_examples() {
        assert_eq!(dist_sq(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(dist_sq(&[1.0, 1.0], &[0.0, 0.0]).unwrap(), 2.0);
        assert_eq!(dist_sq(&[4.0, 5.0], &[3.0, 4.0]).unwrap(), 2.0);
        assert!(dist_sq(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn op_norm_examples() {
        let p = VIProblem::from_nodes(vec![Node::deterministic(AffineOperator::scaled_identity(2, 1.0))], None)
            .unwrap();
        assert_eq!(op_norm_sq(&p, &[3.0, 4.0]).unwrap(), 25.0);
        assert_eq!(op_norm_sq(&p, &[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn gap_at_solution_is_zero() {
        let p = crate::problems::make_bilinear(3, 2, 1, LambdaMode::Explicit(0.2)).unwrap();
        let z = p.exact_solution().unwrap().to_vec();
        let r = 2.0 * norm(&z);
        let g = gap_estimate(&p, &z, r, 8, 200, 0).unwrap();
        assert!(g.abs() <= 1e-8, "{g}");
    }

    #[test]
    fn zero_operator_gap() {
        let p = VIProblem::from_nodes(vec![Node::deterministic(AffineOperator::scaled_identity(2, 0.0))], None)
            .unwrap();
        assert_eq!(gap_estimate(&p, &[0.3, -0.2], 1.0, 8, 50, 0).unwrap(), 0.0);
    }

    #[test]
    fn radius_must_contain_solution() {
        let p = crate::problems::make_bilinear(2, 1, 1, LambdaMode::Explicit(1.0)).unwrap();
        let z = p.exact_solution().unwrap().to_vec();
        assert!(gap_estimate(&p, &z, 0.5 * norm(&z), 8, 10, 0).is_err());
    }

    #[test]
    fn bilinear_toy_matches_grid() {
        // d = 1, λ = 0, A = 1, b = −1/2: the gap objective at z̄ = (1/2, 1/2)
        // is linear in u with gradient along the first axis
        let spec = BilinearSpec {
            a: vec![Matrix::from_rows(&[vec![1.0]]).unwrap()],
            lin_x: vec![vec![0.25]],
            lin_y: vec![vec![-0.5]],
            lambda: 0.0,
        };
        let p = VIProblem::bilinear(&spec).unwrap();
        let z_bar = [0.5, 0.5];
        let r = 2.0;
        let est = gap_estimate(&p, &z_bar, r, 8, 200, 3).unwrap();
        let mut grid_max = f64::NEG_INFINITY;
        for i in 0..1000 {
            let (ring, angle) = (i / 100, i % 100);
            let rad = r * (ring + 1) as f64 / 10.0;
            let t = 2.0 * std::f64::consts::PI * angle as f64 / 100.0;
            let u = [rad * t.cos(), rad * t.sin()];
            grid_max = grid_max.max(gap_objective(&p, &z_bar, &u).unwrap());
        }
        assert!(est >= grid_max - 1e-12);
        assert!(est - grid_max <= 1e-6, "{est} vs {grid_max}");
    }
}
