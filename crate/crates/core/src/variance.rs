//! Variance of the discounted return and the quantities built on it.
//!
//! For a policy π the immediate variance
//! σ^π(z) = γ² Var_{Y ~ P^π(·|z)}[Q^π(Y)] plays the role of a reward in the
//! recursion 𝕍^π = σ^π + γ² P^π 𝕍^π satisfied by the return variance 𝕍^π.
//! This module solves that recursion exactly, estimates it by Monte Carlo,
//! evaluates the Bernstein deviation terms and audits the resulting error
//! bounds on sampled empirical models.

mod audit;

pub use audit::{
    audit_bernstein_bounds, check_component_sandwich, AuditContext, AuditRecord, AuditReport,
    BoundId, PolicyChoice, SandwichReport, SandwichSide, SANDWICH_SLACK,
};

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::generative::TransitionSampler;
use crate::mdp::{policy_q, solve_policy_system, Mdp, Policy, QFunction, VFunction};
use crate::qvi::{check_discount, check_unit_open, LogBase};

/// γ² Var_{Y ~ P(·|z)}[V(Y)] for every pair z.
pub fn value_immediate_variance(mdp: &Mdp, v: &VFunction) -> Result<Vec<f64>> {
    if v.len() != mdp.num_states() {
        return Err(Error::dimension(mdp.num_states(), v.len()));
    }
    let g2 = mdp.discount() * mdp.discount();
    Ok((0..mdp.num_pairs())
        .map(|z| {
            let row = mdp.row(z);
            let m: f64 = row.iter().zip(v.values()).map(|(p, x)| p * x).sum();
            let var: f64 = row
                .iter()
                .zip(v.values())
                .map(|(p, x)| p * (x - m) * (x - m))
                .sum();
            g2 * var
        })
        .collect())
}

/// σ^π(z) = γ² Σ_y P(y|z) (Q^π(y, π(y)) − (P^π Q^π)(z))².
pub fn immediate_variance(mdp: &Mdp, pi: &Policy, q_pi: &QFunction) -> Result<Vec<f64>> {
    mdp.check_q(q_pi)?;
    mdp.check_policy(pi)?;
    value_immediate_variance(mdp, &q_pi.policy_values(pi))
}

/// 𝕍^π from (I − γ² P^π) 𝕍 = σ^π. Rounding-level negatives are clamped to
/// zero.
pub fn variance_bellman_solve(mdp: &Mdp, pi: &Policy) -> Result<Vec<f64>> {
    let q = policy_q(mdp, pi)?;
    let sigma = immediate_variance(mdp, pi, &q)?;
    let g2 = mdp.discount() * mdp.discount();
    let mut v = solve_policy_system(mdp, pi, &sigma, g2)?;
    v.iter_mut().for_each(|x| *x = x.max(0.0));
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscountPower {
    One,
    Two,
}

/// (I − γᵈ P^π)⁻¹ applied to a nonnegative table.
pub fn occupancy_weighted(
    mdp: &Mdp,
    pi: &Policy,
    table: &[f64],
    power: DiscountPower,
) -> Result<Vec<f64>> {
    if let Some(v) = table.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::invalid(format!(
            "occupancy weighting needs a nonnegative table, found {v}"
        )));
    }
    let factor = match power {
        DiscountPower::One => mdp.discount(),
        DiscountPower::Two => mdp.discount() * mdp.discount(),
    };
    solve_policy_system(mdp, pi, table, factor)
}

/// Sample statistics of truncated discounted returns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReturnStats {
    pub trials: u64,
    pub mean: f64,
    pub variance: f64,
    /// Standard error of `mean`.
    pub mean_std_error: f64,
    /// Large-sample standard error of `variance`, √((m₄ − m₂²)/n).
    pub variance_std_error: f64,
}

/// ⌈log(tol (1−γ)) / log γ⌉: returns truncated after this many steps are
/// within `tol` of the full return.
pub fn truncation_horizon(gamma: f64, tol: f64) -> Result<usize> {
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tolerance must be positive, got {tol}")));
    }
    if gamma == 0.0 {
        return Ok(1);
    }
    check_discount(gamma)?;
    let h = ((tol * (1.0 - gamma)).ln() / gamma.ln()).ceil();
    Ok(h.max(1.0) as usize)
}

/// Rolls out π from pair `z` for `horizon` steps, `trials` times.
pub fn monte_carlo_return_variance<R: Rng + ?Sized>(
    mdp: &Mdp,
    pi: &Policy,
    z: usize,
    horizon: usize,
    trials: u64,
    rng: &mut R,
) -> Result<ReturnStats> {
    if trials < 2 {
        return Err(Error::invalid("Monte Carlo estimate needs at least 2 trials"));
    }
    mdp.check_policy(pi)?;
    if z >= mdp.num_pairs() {
        return Err(Error::invalid(format!("pair {z} out of range")));
    }
    let sampler = TransitionSampler::new(mdp);
    let gamma = mdp.discount();
    let reward = mdp.reward();
    let returns: Vec<f64> = (0..trials)
        .map(|_| {
            let mut pair = z;
            let mut discount = 1.0;
            let mut g = 0.0;
            for _ in 0..horizon {
                g += discount * reward[pair];
                let y = sampler.sample(pair, rng);
                pair = mdp.pair(y, pi.action(y));
                discount *= gamma;
            }
            g
        })
        .collect();
    Ok(summarise_returns(&returns))
}

fn summarise_returns(returns: &[f64]) -> ReturnStats {
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let (mut m2, mut m4) = (0.0, 0.0);
    for g in returns {
        let d2 = (g - mean) * (g - mean);
        m2 += d2;
        m4 += d2 * d2;
    }
    let variance = m2 / (n - 1.0);
    let (m2, m4) = (m2 / n, m4 / n);
    ReturnStats {
        trials: returns.len() as u64,
        mean,
        variance,
        mean_std_error: (variance / n).sqrt(),
        variance_std_error: ((m4 - m2 * m2).max(0.0) / n).sqrt(),
    }
}

/// Variance quantities of one (MDP, policy) pair and the bounds they obey.
#[derive(Debug, Clone, Serialize)]
pub struct VarianceReport {
    pub discount: f64,
    pub horizon: f64,
    /// σ^π.
    pub sigma_pi: Vec<f64>,
    /// 𝕍^π from the variance recursion.
    pub v_total: Vec<f64>,
    /// (I − γP^π)⁻¹ √σ^π.
    pub occ_sqrt_sigma: Vec<f64>,
    /// (I − γ²P^π)⁻¹ σ^π.
    pub occ_sigma: Vec<f64>,
    /// ‖𝕍^π − σ^π − γ² P^π 𝕍^π‖.
    pub recursion_residual: f64,
}

impl VarianceReport {
    pub fn compute(mdp: &Mdp, pi: &Policy) -> Result<Self> {
        let q = policy_q(mdp, pi)?;
        let sigma_pi = immediate_variance(mdp, pi, &q)?;
        let v_total = variance_bellman_solve(mdp, pi)?;
        let sqrt_sigma: Vec<f64> = sigma_pi.iter().map(|s| s.sqrt()).collect();
        let occ_sqrt_sigma = occupancy_weighted(mdp, pi, &sqrt_sigma, DiscountPower::One)?;
        let occ_sigma = occupancy_weighted(mdp, pi, &sigma_pi, DiscountPower::Two)?;

        let g2 = mdp.discount() * mdp.discount();
        let pv = crate::mdp::policy_expectation(mdp, pi, &v_total)?;
        let recursion_residual = (0..mdp.num_pairs())
            .map(|z| (v_total[z] - sigma_pi[z] - g2 * pv[z]).abs())
            .fold(0.0, f64::max);

        Ok(VarianceReport {
            discount: mdp.discount(),
            horizon: mdp.horizon(),
            sigma_pi,
            v_total,
            occ_sqrt_sigma,
            occ_sigma,
            recursion_residual,
        })
    }

    /// max_z ((I − γ²P^π)⁻¹ σ^π)(z).
    pub fn occ_sigma_max(&self) -> f64 {
        self.occ_sigma.iter().copied().fold(0.0, f64::max)
    }

    /// max_z ((I − γP^π)⁻¹ √σ^π)(z).
    pub fn occ_sqrt_sigma_max(&self) -> f64 {
        self.occ_sqrt_sigma.iter().copied().fold(0.0, f64::max)
    }

    /// β².
    pub fn occ_sigma_bound(&self) -> f64 {
        self.horizon * self.horizon
    }

    /// β²/4, the range bound on the variance of a [0, β]-valued return.
    pub fn occ_sigma_sharp_bound(&self) -> f64 {
        self.horizon * self.horizon / 4.0
    }

    /// 2 ln(2) β^1.5.
    pub fn occ_sqrt_sigma_bound(&self) -> f64 {
        2.0 * std::f64::consts::LN_2 * self.horizon.powf(1.5)
    }

    pub fn occ_sigma_holds(&self) -> bool {
        self.occ_sigma_max() <= self.occ_sigma_bound()
    }

    pub fn occ_sigma_sharp_holds(&self) -> bool {
        self.occ_sigma_max() <= self.occ_sigma_sharp_bound() * (1.0 + 1e-12)
    }

    pub fn occ_sqrt_sigma_holds(&self) -> bool {
        self.occ_sqrt_sigma_max() <= self.occ_sqrt_sigma_bound()
    }
}

/// Deviation terms of the Bernstein-based error analysis for N pairs and
/// `n` samples per pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeviationTerms {
    pub b_v: f64,
    pub b_pv: f64,
    pub c_pv: f64,
    pub eps_prime: f64,
    /// The three summands of `eps_prime`, leading √(β³/n) term first.
    pub eps_prime_parts: [f64; 3],
}

/// Evaluates
///
/// ```text
/// b_v  = √(18 γ⁴ β⁴ L(3N/δ) / n) + 4 γ² β⁴ L(3N/δ) / n
/// c_pv = 2 L(2N/δ)
/// b_pv = (6 (γβ)^{4/3} L(6N/δ) / n)^{3/4} + 5 γ β² L(6N/δ) / n
/// ε′   = √(17 β³ L(4N/δ) / n) + (6 (γβ²)^{4/3} L(12N/δ) / n)^{3/4}
///        + 5 γ β³ L(12N/δ) / n
/// ```
///
/// with L the logarithm in `base`.
pub fn deviation_terms(
    num_pairs: usize,
    n: u64,
    delta: f64,
    gamma: f64,
    base: LogBase,
) -> Result<DeviationTerms> {
    if num_pairs == 0 || n == 0 {
        return Err(Error::invalid("deviation terms need N >= 1 and n >= 1"));
    }
    check_unit_open("delta", delta)?;
    let beta = check_discount(gamma)?;
    let big_n = num_pairs as f64;
    let n = n as f64;
    let l = |k: f64| base.log(k * big_n / delta);

    // β⁴ sits both inside and outside the root here, while every other term
    // scales like β³; evaluated exactly as written.
    let b_v = (18.0 * gamma.powi(4) * beta.powi(4) * l(3.0) / n).sqrt()
        + 4.0 * gamma * gamma * beta.powi(4) * l(3.0) / n;
    let c_pv = 2.0 * l(2.0);
    let b_pv = (6.0 * (gamma * beta).powf(4.0 / 3.0) * l(6.0) / n).powf(0.75)
        + 5.0 * gamma * beta * beta * l(6.0) / n;
    let parts = [
        (17.0 * beta.powi(3) * l(4.0) / n).sqrt(),
        (6.0 * (gamma * beta * beta).powf(4.0 / 3.0) * l(12.0) / n).powf(0.75),
        5.0 * gamma * beta.powi(3) * l(12.0) / n,
    ];
    Ok(DeviationTerms {
        b_v,
        b_pv,
        c_pv,
        eps_prime: parts.iter().sum(),
        eps_prime_parts: parts,
    })
}
