//! The three-layer hard MDP family and its lower-bound constants.
//!
//! Layout for parameters (K, L, γ, p):
//!
//! * states `0..K` form S; every action a of state x leads with
//!   probability one to its own Y₁ state `K + x·L + a`;
//! * Y₁ states `K..K+KL` loop on themselves with probability p and
//!   otherwise move to their own Y₂ state (offset KL further on);
//! * Y₂ states are absorbing.
//!
//! Rewards are 1 on Y₁ and 0 elsewhere. Y₁ and Y₂ states have a single
//! logical action; its row is repeated over all L action slots so the
//! uniform-action [`Mdp`] applies. Formulas use the logical pair count
//! N = 3KL, not the padded table size.
//!
//! Closed form: Q*(z) = γ / (1 − γp) for every z in S × A.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generative::{derive_seed, pair_stream};
use crate::mdp::Mdp;
use crate::qvi::{ceil_to_u64, check_discount, check_unit_open, LogBase};
use crate::stats::BinomialRate;

/// Smallest discount for which the family is defined.
pub const GAMMA_MIN: f64 = 0.4;
/// Constant c₁ of the lower-bound budget.
pub const C1: f64 = 8100.0;
/// Constant c₂ of the lower-bound budget.
pub const C2: f64 = 72.0;

const DISTINGUISH_CONFIDENCE: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardFamilyParams {
    pub k: usize,
    pub l: usize,
    pub gamma: f64,
    pub p: f64,
}

impl HardFamilyParams {
    pub fn new(k: usize, l: usize, gamma: f64, p: f64) -> Result<Self> {
        let params = HardFamilyParams { k, l, gamma, p };
        params.validate()?;
        Ok(params)
    }

    /// Parameters with the adversarial self-loop probability (4γ − 1)/(3γ).
    pub fn adversarial(k: usize, l: usize, gamma: f64) -> Result<Self> {
        Self::new(k, l, gamma, adversarial_p(gamma))
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.l == 0 {
            return Err(Error::invalid(format!(
                "K and L must be positive (got K = {}, L = {})",
                self.k, self.l
            )));
        }
        if !(self.gamma >= GAMMA_MIN && self.gamma < 1.0) {
            return Err(Error::invalid(format!(
                "hard-family discount must lie in [{GAMMA_MIN}, 1), got {}",
                self.gamma
            )));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::invalid(format!(
                "self-loop probability must lie in [0, 1], got {}",
                self.p
            )));
        }
        Ok(())
    }

    /// N = 3KL logical state-action pairs.
    pub fn logical_pairs(&self) -> usize {
        3 * self.k * self.l
    }

    pub fn num_states(&self) -> usize {
        self.k + 2 * self.k * self.l
    }

    /// Flat pair index of (x, a) for x in S.
    pub fn s_pair(&self, x: usize, a: usize) -> usize {
        x * self.l + a
    }

    /// All S × A pair indices.
    pub fn s_pairs(&self) -> impl Iterator<Item = usize> {
        0..self.k * self.l
    }

    /// The Y₁ state entered from S-pair `j`.
    pub fn y1_state(&self, j: usize) -> usize {
        self.k + j
    }

    /// The Y₂ state fed by Y₁ state number `j`.
    pub fn y2_state(&self, j: usize) -> usize {
        self.k + self.k * self.l + j
    }
}

/// p = (4γ − 1)/(3γ).
pub fn adversarial_p(gamma: f64) -> f64 {
    (4.0 * gamma - 1.0) / (3.0 * gamma)
}

pub fn build_hard_mdp(params: &HardFamilyParams) -> Result<Mdp> {
    params.validate()?;
    let s = params.num_states();
    let l = params.l;
    let kl = params.k * l;
    let mut transition = vec![0.0; s * l * s];
    let mut reward = vec![0.0; s * l];
    let mut set = |state: usize, action: usize, next: usize, prob: f64| {
        transition[(state * l + action) * s + next] += prob;
    };
    for x in 0..params.k {
        for a in 0..l {
            set(x, a, params.y1_state(params.s_pair(x, a)), 1.0);
        }
    }
    for j in 0..kl {
        let y1 = params.y1_state(j);
        let y2 = params.y2_state(j);
        for a in 0..l {
            set(y1, a, y1, params.p);
            set(y1, a, y2, 1.0 - params.p);
            set(y2, a, y2, 1.0);
            reward[y1 * l + a] = 1.0;
        }
    }
    Mdp::new(s, l, transition, reward, params.gamma)
}

/// γ / (1 − γp).
pub fn closed_form_qstar(gamma: f64, p: f64) -> Result<f64> {
    if !(gamma * p < 1.0) || !(gamma >= 0.0) || !(p >= 0.0) {
        return Err(Error::invalid(format!(
            "closed form needs 0 <= γp < 1 (γ = {gamma}, p = {p})"
        )));
    }
    Ok(gamma / (1.0 - gamma * p))
}

/// Two members of the family whose S-pair values differ by more than 2ε.
#[derive(Debug, Clone, Serialize)]
pub struct HardPair {
    #[serde(skip)]
    pub m0: Mdp,
    #[serde(skip)]
    pub m1: Mdp,
    pub k: usize,
    pub l: usize,
    pub gamma: f64,
    pub p: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub qstar0: f64,
    pub qstar1: f64,
}

/// Largest admissible ε for the adversarial construction:
/// (1 − p) / (4γ² (1 − γp)²).
pub fn admissible_epsilon(gamma: f64, p: f64) -> f64 {
    (1.0 - p) / (4.0 * gamma * gamma * (1.0 - gamma * p).powi(2))
}

/// M₀ with p = (4γ − 1)/(3γ) and M₁ with p + α, α = 2(1 − γp)² ε / γ².
pub fn adversarial_pair(k: usize, l: usize, gamma: f64, epsilon: f64) -> Result<HardPair> {
    let p = adversarial_p(gamma);
    let base = HardFamilyParams::new(k, l, gamma, p)?;
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    let limit = admissible_epsilon(gamma, p);
    if epsilon > limit {
        return Err(Error::invalid(format!(
            "epsilon = {epsilon} violates ε <= (1-p)/(4γ²(1-γp)²) = {limit}"
        )));
    }
    let alpha = 2.0 * (1.0 - gamma * p).powi(2) * epsilon / (gamma * gamma);
    if !(p > 0.0 && p + alpha <= 1.0) {
        return Err(Error::invalid(format!(
            "epsilon = {epsilon} violates 0 < p < p + α <= 1 (p = {p}, α = {alpha})"
        )));
    }
    let qstar0 = closed_form_qstar(gamma, p)?;
    let qstar1 = closed_form_qstar(gamma, p + alpha)?;
    if !(qstar1 - qstar0 > 2.0 * epsilon) {
        return Err(Error::invalid(format!(
            "separation {} does not exceed 2ε = {}",
            qstar1 - qstar0,
            2.0 * epsilon
        )));
    }
    let m0 = build_hard_mdp(&base)?;
    let m1 = build_hard_mdp(&HardFamilyParams { p: p + alpha, ..base })?;
    Ok(HardPair {
        m0,
        m1,
        k,
        l,
        gamma,
        p,
        alpha,
        epsilon,
        qstar0,
        qstar1,
    })
}

/// ξ(ε, δ) = 6β³ / (c₁ ε²) · log(1 / (c₂ δ)), reported as 0 when the
/// logarithm is not positive.
pub fn xi_threshold(epsilon: f64, delta: f64, gamma: f64, base: LogBase) -> Result<f64> {
    let beta = check_discount(gamma)?;
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    check_unit_open("delta", delta)?;
    let value = 6.0 * beta.powi(3) / (C1 * epsilon * epsilon) * base.log(1.0 / (C2 * delta));
    Ok(value.max(0.0))
}

/// T = ⌈β³ N / (c₁ ε²) · log(N / (c₂ δ))⌉.
///
/// The guarantee behind this number only covers ε and δ below unspecified
/// constants; the formula itself is evaluated for any valid inputs.
pub fn lower_bound_budget(
    num_pairs: usize,
    epsilon: f64,
    delta: f64,
    gamma: f64,
    base: LogBase,
) -> Result<u64> {
    let beta = check_discount(gamma)?;
    if num_pairs == 0 || !(epsilon > 0.0) {
        return Err(Error::invalid("lower-bound budget needs N >= 1 and ε > 0"));
    }
    check_unit_open("delta", delta)?;
    let log_term = base.log(num_pairs as f64 / (C2 * delta));
    if !(log_term > 0.0) {
        return Err(Error::invalid(format!(
            "log(N / (c2 δ)) = {log_term} is not positive; need δ < N/{C2}"
        )));
    }
    let value = beta.powi(3) * num_pairs as f64 / (C1 * epsilon * epsilon) * log_term;
    ceil_to_u64(value, "lower-bound budget")
}

/// Failure statistics of the plug-in estimator at one sample size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistinguishRow {
    pub t: u64,
    /// 0 for M₀, 1 for M₁.
    pub model: u8,
    pub failure: BinomialRate,
}

/// For every t, draws t transitions from a Y₁ state of M₀ and of M₁,
/// estimates p̂ = (self-loops)/t and Q̂ = γ/(1 − γp̂), and counts seeds with
/// |Q* − Q̂| > ε. With t = 0 there is no estimate and every seed fails.
///
/// The plug-in estimator only illustrates the difficulty of the pair; it
/// says nothing about other estimators.
pub fn distinguishability_experiment(
    gamma: f64,
    epsilon: f64,
    t_grid: &[u64],
    seeds: u64,
    master_seed: u64,
) -> Result<Vec<DistinguishRow>> {
    if t_grid.is_empty() {
        return Err(Error::invalid("t grid must not be empty"));
    }
    if seeds == 0 {
        return Err(Error::invalid("need at least one seed"));
    }
    let pair = adversarial_pair(1, 1, gamma, epsilon)?;
    let models = [(0u8, pair.p, pair.qstar0), (1u8, pair.p + pair.alpha, pair.qstar1)];
    let mut rows = Vec::with_capacity(t_grid.len() * 2);
    for (ti, &t) in t_grid.iter().enumerate() {
        for &(model, p, qstar) in &models {
            let failures: u64 = (0..seeds)
                .into_par_iter()
                .map(|seed| {
                    if t == 0 {
                        return 1;
                    }
                    let stream = derive_seed(master_seed, &[ti as u64, model as u64, seed]);
                    let mut rng = pair_stream(stream, 0);
                    let loops = (0..t).filter(|_| rng.random::<f64>() < p).count();
                    let p_hat = loops as f64 / t as f64;
                    let q_hat = gamma / (1.0 - gamma * p_hat);
                    u64::from((qstar - q_hat).abs() > epsilon)
                })
                .sum();
            rows.push(DistinguishRow {
                t,
                model,
                failure: BinomialRate::wilson(failures, seeds, DISTINGUISH_CONFIDENCE),
            });
        }
    }
    Ok(rows)
}
