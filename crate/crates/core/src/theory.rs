//! Step-size bounds, optimal `τ` rules and order-of-magnitude iteration
//! counts for every solver in [`crate::algorithms`].
//!
//! Each bound is transcribed as printed at the theorem that states it;
//! constants that differ between a theorem and its corollary (165 vs 167,
//! 205) are kept apart, never harmonised. Where a bound names `L` it is the
//! Lipschitz constant of the averaged operator `F`; the complexity predictors
//! use `max_m L_m`, which is how those tables define `L`.

use serde::Serialize;

use crate::algorithms::Algorithm;
use crate::compressors::CompressorSpec;
use crate::error::{Error, Result};
use crate::problems::{Constants, Regime, VIProblem};

/// Lower clamp for every `τ` rule.
pub const TAU_MIN: f64 = 0.5;
/// Lower clamp for the error-feedback family, whose analysis requires it.
pub const TAU_MIN_ERROR_FEEDBACK: f64 = 0.75;
pub const TAU_MAX: f64 = 1.0 - 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TheoryInputs {
    pub constants: Constants,
    pub devices: usize,
    pub components: usize,
    pub participants: usize,
    /// Per-device variance parameter (`q_m` or `δ_m`, both `d/k` here).
    pub q_dev: Vec<f64>,
    pub q_serv: f64,
    pub beta_dev: f64,
    pub beta_serv: f64,
    /// Target accuracy for the complexity predictors.
    pub epsilon: f64,
    /// `‖z⁰ − z*‖`, the `R` of the monotone and non-monotone predictors.
    pub r0: Option<f64>,
}

impl TheoryInputs {
    pub fn new(
        problem: &VIProblem,
        uplinks: &[CompressorSpec],
        downlink: &CompressorSpec,
        participants: usize,
    ) -> Result<Self> {
        if uplinks.len() != problem.num_nodes() {
            return Err(Error::DimensionMismatch {
                expected: problem.num_nodes(),
                got: uplinks.len(),
            });
        }
        let inputs = Self {
            constants: problem.constants().clone(),
            devices: problem.num_nodes(),
            components: problem.components(),
            participants,
            q_dev: uplinks.iter().map(CompressorSpec::variance_param).collect(),
            q_serv: downlink.variance_param(),
            beta_dev: uplinks.iter().map(CompressorSpec::expected_density).fold(1.0, f64::max),
            beta_serv: downlink.expected_density(),
            epsilon: 1e-6,
            r0: None,
        };
        inputs.validate()?;
        Ok(inputs)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(what.to_string()));
        if self.devices == 0 || self.q_dev.len() != self.devices {
            return bad("need one variance parameter per device");
        }
        if self.participants == 0 || self.participants > self.devices {
            return bad("participants must lie in 1..=M");
        }
        if self.components == 0 {
            return bad("components must be >= 1");
        }
        if self.q_dev.iter().any(|&q| !(q >= 1.0)) || !(self.q_serv >= 1.0) {
            return bad("variance parameters must be >= 1");
        }
        if !(self.beta_dev >= 1.0) || !(self.beta_serv >= 1.0) {
            return bad("expected densities must be >= 1");
        }
        if !(self.constants.mu >= 0.0) {
            return bad("mu must be >= 0");
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad("epsilon must lie in (0, 1)");
        }
        Ok(())
    }

    fn m(&self) -> f64 {
        self.devices as f64
    }

    fn b(&self) -> f64 {
        self.participants as f64
    }

    fn delta_dev(&self) -> f64 {
        self.q_dev.iter().copied().fold(1.0, f64::max)
    }

    fn delta_serv(&self) -> f64 {
        self.q_serv
    }

    fn q_max(&self) -> f64 {
        self.delta_dev()
    }

    fn mu_checked(&self) -> Result<f64> {
        if self.constants.mu > 0.0 {
            Ok(self.constants.mu)
        } else {
            Err(Error::Precondition(
                "strongly monotone bound needs mu > 0".into(),
            ))
        }
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("tau must lie in (0, 1), got {tau}")))
    }
}

fn check_tau_ef(tau: f64) -> Result<()> {
    check_tau(tau)?;
    if tau >= 0.75 {
        Ok(())
    } else {
        Err(Error::Precondition(format!("τ ≥ 3/4 required, got τ = {tau}")))
    }
}

fn c_generic(q_serv: f64, q_dev: &[f64], l_dev: &[f64], l_tilde: f64, denom: f64, others: f64) -> f64 {
    let s: f64 = q_dev
        .iter()
        .zip(l_dev)
        .map(|(q, l)| q * l * l + others * l_tilde * l_tilde)
        .sum();
    (q_serv / denom * s).sqrt()
}

/// `C_q = sqrt(q_serv/M² · Σ_m (q_m L_m² + (M−1) L̃²))`.
pub fn cq(inp: &TheoryInputs) -> f64 {
    let m = inp.m();
    let c = &inp.constants;
    c_generic(inp.q_serv, &inp.q_dev, &c.l_node, c.l_tilde, m * m, m - 1.0)
}

/// `C̃_q`: as [`cq`] with `L_m` replaced by `sqrt(mean_i L_{m,i}²)`.
pub fn cq_tilde(inp: &TheoryInputs) -> f64 {
    let m = inp.m();
    let c = &inp.constants;
    c_generic(inp.q_serv, &inp.q_dev, &c.l_node_tilde(), c.l_tilde, m * m, m - 1.0)
}

/// `C^b_q = sqrt(q_serv/(bM) · Σ_m (q_m L̃_m² + (b−1) L̃²))`.
pub fn cq_b(inp: &TheoryInputs) -> f64 {
    let c = &inp.constants;
    c_generic(inp.q_serv, &inp.q_dev, &c.l_node_tilde(), c.l_tilde, inp.b() * inp.m(), inp.b() - 1.0)
}

fn unbiased_family(inp: &TheoryInputs, tau: f64, c: f64) -> Result<f64> {
    check_tau(tau)?;
    let s = (1.0 - tau).sqrt();
    Ok(match inp.constants.regime {
        Regime::StronglyMonotone => (s / (2.0 * c)).min((1.0 - tau) / (2.0 * inp.mu_checked()?)),
        Regime::Monotone => s / (2.0 * c + 4.0 * inp.constants.l_tilde),
        Regime::NonMonotoneMinty => s / (2.0 * c),
    })
}

fn error_feedback_family(inp: &TheoryInputs, tau: f64, denominator: f64) -> Result<f64> {
    check_tau_ef(tau)?;
    let second = (1.0 - tau).sqrt() / denominator;
    Ok(match inp.constants.regime {
        Regime::StronglyMonotone => ((1.0 - tau) / (8.0 * inp.mu_checked()?)).min(second),
        Regime::Monotone | Regime::NonMonotoneMinty => second,
    })
}

pub fn masha1_stepsize(inp: &TheoryInputs, tau: f64) -> Result<f64> {
    unbiased_family(inp, tau, cq(inp))
}

/// Requires `τ ≥ 3/4`.
pub fn masha2_stepsize(inp: &TheoryInputs, tau: f64) -> Result<f64> {
    let c = &inp.constants;
    error_feedback_family(inp, tau, 2.0 * c.l_global + 165.0 * inp.delta_serv() * inp.delta_dev() * c.l_tilde)
}

pub fn vr_masha1_stepsize(inp: &TheoryInputs, tau: f64) -> Result<f64> {
    unbiased_family(inp, tau, cq_tilde(inp))
}

pub fn vr_masha2_stepsize(inp: &TheoryInputs, tau: f64) -> Result<f64> {
    let c = &inp.constants;
    error_feedback_family(inp, tau, 2.0 * c.l_global + 165.0 * inp.delta_serv() * inp.delta_dev() * c.l_hat)
}

pub fn pp_masha1_stepsize(inp: &TheoryInputs, tau: f64) -> Result<f64> {
    unbiased_family(inp, tau, cq_b(inp))
}

pub fn pp_masha2_stepsize(inp: &TheoryInputs, tau: f64) -> Result<f64> {
    let ratio = inp.m() / inp.b();
    let (ds, dd) = (inp.delta_serv(), inp.delta_dev());
    let coeff = 30.0 * ds + 10.0 * dd * ratio + 165.0 * dd * ds * ratio.sqrt();
    error_feedback_family(inp, tau, coeff * inp.constants.l_tilde)
}

/// `min[μ/(48 L² (1 + q/M)), 1/(4μ)]`, strongly monotone only.
pub fn ceg_stepsize(inp: &TheoryInputs) -> Result<f64> {
    let mu = inp.mu_checked()?;
    let l = inp.constants.l_max();
    Ok((mu / (48.0 * l * l * (1.0 + inp.q_max() / inp.m()))).min(1.0 / (4.0 * mu)))
}

/// Additive term of the compressed extragradient estimate:
/// `16 q γ² / M² · Σ_m ‖F_m(z*)‖²`.
pub fn ceg_noise_term(inp: &TheoryInputs, gamma: f64, sum_sq_local_at_solution: f64) -> f64 {
    16.0 * inp.q_max() * gamma * gamma / (inp.m() * inp.m()) * sum_sq_local_at_solution
}

/// `1/(2L)` for uncompressed extragradient.
pub fn extragradient_stepsize(inp: &TheoryInputs) -> f64 {
    1.0 / (2.0 * inp.constants.l_global)
}

/// Theory step size for `algorithm` at `τ`, times `safety`.
pub fn stepsize(algorithm: Algorithm, inp: &TheoryInputs, tau: f64, safety: f64) -> Result<f64> {
    if !(safety > 0.0) {
        return Err(Error::InvalidParameter(format!("safety factor must be > 0, got {safety}")));
    }
    let gamma = match algorithm {
        Algorithm::Masha1 => masha1_stepsize(inp, tau)?,
        Algorithm::Masha2 => masha2_stepsize(inp, tau)?,
        Algorithm::VrMasha1 => vr_masha1_stepsize(inp, tau)?,
        Algorithm::VrMasha2 => vr_masha2_stepsize(inp, tau)?,
        Algorithm::PpMasha1 => pp_masha1_stepsize(inp, tau)?,
        Algorithm::PpMasha2 => pp_masha2_stepsize(inp, tau)?,
        Algorithm::Ceg => ceg_stepsize(inp)?,
        Algorithm::ExtraGradient => extragradient_stepsize(inp),
        Algorithm::QsgdGda | Algorithm::EfGda => {
            return Err(Error::Precondition(format!(
                "{} has no theoretical step size; give gamma explicitly",
                algorithm.name()
            )))
        }
    };
    Ok(gamma * safety)
}

/// `1 − 1/β`, `1 − 1/max(β, r)` or `1 − b/(βM)` depending on the family,
/// clamped to `[1/2, 1 − 10⁻⁶]` (`[3/4, ·]` for error feedback).
pub fn optimal_tau(algorithm: Algorithm, beta: f64, r: usize, b: usize, m: usize) -> f64 {
    let raw = if algorithm.is_variance_reduced() {
        1.0 - 1.0 / beta.max(r as f64)
    } else if algorithm.is_partial() {
        1.0 - b as f64 / (beta * m as f64)
    } else {
        1.0 - 1.0 / beta
    };
    let lo = if algorithm.uses_error_feedback() { TAU_MIN_ERROR_FEEDBACK } else { TAU_MIN };
    raw.clamp(lo, TAU_MAX)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Complexity {
    pub iterations: f64,
    pub regime: Regime,
    pub note: &'static str,
}

const PLANNING_NOTE: &str = "order-of-magnitude planning figure, hidden constant 1";

/// Big-O iteration count with unit constant. Strongly monotone rows read
/// `additive + rate · (L/μ) · ln(1/ε)`; monotone rows `rate · L R²/ε`;
/// non-monotone rows `rate² · L² R²/ε²`.
pub fn iteration_complexity(algorithm: Algorithm, inp: &TheoryInputs) -> Result<Complexity> {
    inp.validate()?;
    let c = &inp.constants;
    let l = c.l_max();
    let (beta, q, m, b) = (inp.beta_dev, inp.q_max(), inp.m(), inp.b());
    let r = inp.components as f64;
    let delta = inp.delta_dev() * inp.delta_serv();
    let (additive, rate) = match algorithm {
        // with q_serv = 1 this is the device-only row; with q_serv = q the
        // bidirectional one
        Algorithm::Masha1 => (beta, (inp.q_serv * (beta + q * beta / m)).sqrt()),
        Algorithm::Masha2 => (beta, delta * beta.sqrt()),
        Algorithm::VrMasha1 => (beta + r, beta.max(r).sqrt() * (1.0 + q / m).sqrt()),
        Algorithm::VrMasha2 => (beta + r, beta.max(r).sqrt() * delta),
        Algorithm::PpMasha1 => (beta * m / b, (beta * m / b + q * beta * m / b).sqrt()),
        Algorithm::PpMasha2 => (beta * m / b, delta * (beta * m.powi(3) / b.powi(3)).sqrt()),
        Algorithm::ExtraGradient => (0.0, 1.0),
        Algorithm::Ceg => {
            if c.regime != Regime::StronglyMonotone {
                return Err(Error::Precondition(
                    "compressed extragradient is only analysed in the strongly monotone case".into(),
                ));
            }
            let mu = inp.mu_checked()?;
            let k = (1.0 + q / m) * (l / mu).powi(2) * (1.0 / inp.epsilon).ln();
            return Ok(Complexity {
                iterations: k,
                regime: c.regime,
                note: PLANNING_NOTE,
            });
        }
        Algorithm::QsgdGda | Algorithm::EfGda => {
            return Err(Error::Precondition(format!(
                "no complexity prediction for {}",
                algorithm.name()
            )))
        }
    };
    let iterations = match c.regime {
        Regime::StronglyMonotone => additive + rate * (l / inp.mu_checked()?) * (1.0 / inp.epsilon).ln(),
        Regime::Monotone | Regime::NonMonotoneMinty => {
            let r0 = inp
                .r0
                .ok_or_else(|| Error::Precondition("R0 = ‖z⁰ − z*‖ needed for this regime".into()))?;
            if c.regime == Regime::Monotone {
                rate * l * r0 * r0 / inp.epsilon
            } else {
                rate * rate * l * l * r0 * r0 / (inp.epsilon * inp.epsilon)
            }
        }
    };
    Ok(Complexity {
        iterations,
        regime: c.regime,
        note: PLANNING_NOTE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

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

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * b.abs().max(1.0)
    }

    #[test]
    fn cq_examples() {
        assert!(close(cq(&inputs(1, 3.0, 1.0, Regime::StronglyMonotone, 1.0)), 3.0));
        let q = 4.0;
        assert!(close(cq(&inputs(2, 3.0, 1.0, Regime::StronglyMonotone, q)), 3.0 * ((q + 1.0) / 2.0).sqrt()));
        for m in [1, 3, 16] {
            assert!(close(cq(&inputs(m, 2.5, 1.0, Regime::Monotone, 1.0)), 2.5));
        }
    }

    #[test]
    fn masha1_examples() {
        let sm = inputs(1, 1.0, 1.0, Regime::StronglyMonotone, 1.0);
        assert!(close(masha1_stepsize(&sm, 0.5).unwrap(), 0.25));
        let mono = inputs(1, 1.0, 0.0, Regime::Monotone, 1.0);
        assert!(close(masha1_stepsize(&mono, 0.75).unwrap(), 1.0 / 12.0));
        let nm = inputs(1, 1.0, 0.0, Regime::NonMonotoneMinty, 1.0);
        assert!(close(masha1_stepsize(&nm, 0.75).unwrap(), 0.25));
        let broken = inputs(1, 1.0, 0.0, Regime::StronglyMonotone, 1.0);
        assert!(masha1_stepsize(&broken, 0.5).is_err());
    }

    #[test]
    fn masha2_examples() {
        let sm = inputs(1, 1.0, 1.0, Regime::StronglyMonotone, 1.0);
        assert!(close(masha2_stepsize(&sm, 0.75).unwrap(), 1.0 / 334.0));
        let err = masha2_stepsize(&sm, 0.7).unwrap_err();
        assert!(err.to_string().contains("τ ≥ 3/4 required"));
        let a = masha2_stepsize(&inputs(2, 1.0, 1e-3, Regime::StronglyMonotone, 2.0), 0.8).unwrap();
        let b = masha2_stepsize(&inputs(2, 1.0, 1e-3, Regime::StronglyMonotone, 3.0), 0.8).unwrap();
        assert!(b < a);
    }

    #[test]
    fn reductions() {
        let inp = inputs(4, 2.0, 0.1, Regime::StronglyMonotone, 1.0);
        assert_eq!(vr_masha1_stepsize(&inp, 0.6).unwrap(), masha1_stepsize(&inp, 0.6).unwrap());
        assert!(close(cq_b(&inp), cq(&inp)));
        let g = pp_masha2_stepsize(&inp, 0.8).unwrap();
        assert!(g.is_finite() && g > 0.0);
    }

    #[test]
    fn tau_rules() {
        assert!((optimal_tau(Algorithm::Masha1, 10.0 / 3.0, 1, 4, 4) - 0.7).abs() < 1e-15);
        assert_eq!(optimal_tau(Algorithm::VrMasha1, 2.0, 8, 4, 4), 0.875);
        assert_eq!(optimal_tau(Algorithm::PpMasha1, 4.0, 1, 4, 4), 0.75);
        assert_eq!(optimal_tau(Algorithm::Masha1, 1.0, 1, 1, 1), 0.5);
        assert_eq!(optimal_tau(Algorithm::Masha2, 2.0, 1, 1, 1), 0.75);
        assert_eq!(optimal_tau(Algorithm::Masha1, 1e9, 1, 1, 1), TAU_MAX);
    }

    #[test]
    fn complexity_rows() {
        let q = 10.0 / 3.0;
        let mut inp = inputs(16, 10.0, 0.5, Regime::StronglyMonotone, q);
        let k = iteration_complexity(Algorithm::Masha1, &inp).unwrap().iterations;
        let rate = (q + q * q / 16.0).sqrt();
        assert!(close(k, q + rate * 20.0 * (1e6f64).ln()));

        let halved = {
            let mut h = inp.clone();
            h.epsilon /= 2.0;
            iteration_complexity(Algorithm::Masha1, &h).unwrap().iterations
        };
        assert!(close(halved - k, 2f64.ln() * rate * 20.0));

        inp.devices = 1 << 20;
        inp.participants = inp.devices;
        inp.q_dev = vec![q; inp.devices];
        inp.constants.l_node = vec![10.0; inp.devices];
        let big = iteration_complexity(Algorithm::Masha1, &inp).unwrap().iterations;
        let limit = q + q.sqrt() * 20.0 * (1e6f64).ln();
        assert!((big - limit).abs() / limit < 1e-5);
    }

    #[test]
    fn gda_has_no_theory_step() {
        let inp = inputs(2, 1.0, 0.1, Regime::StronglyMonotone, 1.0);
        assert!(stepsize(Algorithm::QsgdGda, &inp, 0.5, 1.0).is_err());
        assert!(close(stepsize(Algorithm::ExtraGradient, &inp, 0.5, 1.0).unwrap(), 0.5));
    }
}
