//! Model-based Q-value iteration (QVI).
//!
//! QVI draws `n` next-state samples for every state-action pair, builds the
//! empirical kernel P̂ and then applies the empirical Bellman optimality
//! operator `k` times to an initial table Q₀. Rewards are known, only the
//! kernel is estimated.
//!
//! The PAC budget is T = ⌈c β³ N / ε² · log(c₀ N / δ)⌉ with `c = 68` and
//! `c₀ = 12`, spread as n = ⌈T / N⌉ samples per pair, and
//! k = ⌈log(6β/ε) / log(1/γ)⌉ iterations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generative::{build_empirical_model, SampleBudgetLedger};
use crate::mdp::{apply_bellman_optimality, Mdp, QFunction};

pub const DEFAULT_BUDGET_C: f64 = 68.0;
pub const DEFAULT_BUDGET_C0: f64 = 12.0;

/// Base of the logarithms appearing in the budget and deviation formulas.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogBase {
    #[default]
    Natural,
    Two,
    Ten,
}

impl LogBase {
    pub fn log(self, x: f64) -> f64 {
        match self {
            LogBase::Natural => x.ln(),
            LogBase::Two => x.log2(),
            LogBase::Ten => x.log10(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QviConfig {
    pub epsilon: f64,
    pub delta: f64,
    pub c: f64,
    pub c0: f64,
    pub log_base: LogBase,
}

impl QviConfig {
    /// Configuration with the default constants c = 68, c₀ = 12.
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        let cfg = QviConfig {
            epsilon,
            delta,
            c: DEFAULT_BUDGET_C,
            c0: DEFAULT_BUDGET_C0,
            log_base: LogBase::Natural,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_unit_open("epsilon", self.epsilon)?;
        check_unit_open("delta", self.delta)?;
        if !(self.c > 0.0) || !(self.c0 > 0.0) {
            return Err(Error::invalid(format!(
                "budget constants must be positive (c = {}, c0 = {})",
                self.c, self.c0
            )));
        }
        Ok(())
    }
}

pub(crate) fn check_unit_open(name: &str, value: f64) -> Result<()> {
    if !(value > 0.0 && value < 1.0) {
        return Err(Error::invalid(format!("{name} must lie in (0, 1), got {value}")));
    }
    Ok(())
}

/// Accepts γ ∈ [0, 1) and returns β = 1/(1 − γ).
pub(crate) fn check_discount(gamma: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::invalid(format!("discount must lie in [0, 1), got {gamma}")));
    }
    Ok(1.0 / (1.0 - gamma))
}

/// Total sample budget and the per-pair count derived from it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SampleBudget {
    pub total: u64,
    pub per_pair: u64,
}

/// Converts a nonnegative real to `u64` after taking its ceiling.
pub(crate) fn ceil_to_u64(value: f64, what: &str) -> Result<u64> {
    let c = value.ceil();
    if !c.is_finite() || c >= u64::MAX as f64 {
        return Err(Error::invalid(format!("{what} overflows u64 ({value:e})")));
    }
    Ok(c.max(0.0) as u64)
}

/// T = ⌈c β³ N / ε² · log(c₀ N / δ)⌉ and n = ⌈T / N⌉.
pub fn sample_budget(num_pairs: usize, cfg: &QviConfig, gamma: f64) -> Result<SampleBudget> {
    cfg.validate()?;
    let beta = check_discount(gamma)?;
    if num_pairs == 0 {
        return Err(Error::invalid("sample budget needs N >= 1"));
    }
    let n = num_pairs as f64;
    let log_term = cfg.log_base.log(cfg.c0 * n / cfg.delta);
    if !(log_term > 0.0) {
        return Err(Error::invalid(format!(
            "log(c0 N / delta) = {log_term} is not positive"
        )));
    }
    let raw = cfg.c * beta.powi(3) * n / (cfg.epsilon * cfg.epsilon) * log_term;
    let total = ceil_to_u64(raw, "sample budget")?;
    Ok(SampleBudget {
        total,
        per_pair: total.div_ceil(num_pairs as u64),
    })
}

/// k = ⌈log(6β/ε) / log(1/γ)⌉, never negative, bumped if rounding would
/// break γᵏβ ≤ ε/6. The ratio of logarithms does not depend on the base.
pub fn iteration_count(epsilon: f64, gamma: f64) -> Result<usize> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    let beta = check_discount(gamma)?;
    let raw = (6.0 * beta / epsilon).ln() / (1.0 / gamma).ln();
    let mut k = ceil_to_u64(raw, "iteration count")? as usize;
    while gamma.powi(k as i32) * beta > epsilon / 6.0 {
        k += 1;
    }
    Ok(k)
}

/// Output of one QVI run.
#[derive(Debug, Clone)]
pub struct QviRun {
    /// Q_k = T̂ᵏ Q₀.
    pub q: QFunction,
    /// The empirical model P̂ (true rewards and discount).
    pub empirical: Mdp,
    pub ledger: SampleBudgetLedger,
}

/// Builds P̂ from `n` samples per pair under `seed` and iterates the
/// empirical Bellman operator `k` times from `q0`, which must lie in [0, β].
pub fn run_qvi(mdp: &Mdp, n: u64, k: usize, q0: &QFunction, seed: u64) -> Result<QviRun> {
    let beta = mdp.horizon();
    if let Some(v) = q0
        .values()
        .iter()
        .find(|v| !(**v >= 0.0 && **v <= beta))
    {
        return Err(Error::Precondition(format!(
            "initial Q value {v} lies outside [0, {beta}]"
        )));
    }
    mdp.check_q(q0)?;
    let (empirical, ledger) = build_empirical_model(mdp, n, seed)?;
    let mut q = q0.clone();
    for _ in 0..k {
        q = apply_bellman_optimality(&empirical, &q)?;
    }
    Ok(QviRun {
        q,
        empirical,
        ledger,
    })
}

/// Budget, iteration count and run composed as in the PAC statement.
#[derive(Debug, Clone)]
pub struct QviOutcome {
    pub budget: SampleBudget,
    pub iterations: usize,
    pub run: QviRun,
}

pub fn qvi_end_to_end(mdp: &Mdp, cfg: &QviConfig, seed: u64) -> Result<QviOutcome> {
    let budget = sample_budget(mdp.num_pairs(), cfg, mdp.discount())?;
    let iterations = iteration_count(cfg.epsilon, mdp.discount())?;
    let run = run_qvi(mdp, budget.per_pair, iterations, &QFunction::zeros_like(mdp), seed)?;
    Ok(QviOutcome {
        budget,
        iterations,
        run,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{exact_optimal_q, sup_norm_diff};

    #[test]
    fn budget_scalings_are_exact() {
        let cfg = QviConfig::new(0.1, 0.1).unwrap();
        let lead = |gamma: f64, eps: f64| {
            let beta: f64 = 1.0 / (1.0 - gamma);
            cfg.c * beta.powi(3) * 12.0 / (eps * eps)
        };
        assert_eq!(lead(0.75, 0.1) / lead(0.5, 0.1), 8.0);
        assert_eq!(lead(0.5, 0.05) / lead(0.5, 0.1), 4.0);
        assert!((lead(0.5, 0.1) - 652_800.0).abs() < 1e-6);
    }

    #[test]
    fn budget_per_pair_rounds_up() {
        let cfg = QviConfig::new(0.1, 0.1).unwrap();
        let b = sample_budget(12, &cfg, 0.5).unwrap();
        assert!(b.per_pair * 12 >= b.total);
        assert!((b.per_pair - 1) * 12 < b.total);
    }

    #[test]
    fn budget_rejects_bad_arguments() {
        assert!(QviConfig::new(0.0, 0.1).is_err());
        assert!(QviConfig::new(0.1, 1.0).is_err());
        let cfg = QviConfig::new(0.1, 0.1).unwrap();
        assert!(sample_budget(12, &cfg, 1.0).is_err());
        let mut bad = cfg;
        bad.c = -1.0;
        assert!(sample_budget(12, &bad, 0.5).is_err());
    }

    #[test]
    fn iteration_count_example() {
        let k = iteration_count(0.1, 0.9).unwrap();
        assert_eq!(k, 61);
        assert!(0.9f64.powi(61) * 10.0 <= 1.0 / 60.0);
    }

    #[test]
    fn iteration_count_boundaries() {
        // 6β/ε ≤ 1
        let k = iteration_count(20.0, 0.5).unwrap();
        assert_eq!(k, 0);
        assert!(0.5f64.powi(k as i32) * 2.0 <= 20.0 / 6.0);
        let k = iteration_count(0.5, 0.1).unwrap();
        let beta = 1.0 / 0.9;
        assert!(0.1f64.powi(k as i32) * beta <= 0.5 / 6.0);
        assert!(k <= 2);
        assert!(iteration_count(0.0, 0.5).is_err());
    }

    #[test]
    fn zero_iterations_return_q0() {
        let mdp = Mdp::random(4, 2, 0.9, 1).unwrap();
        let q0 = QFunction::constant(4, 2, 3.0);
        let run = run_qvi(&mdp, 5, 0, &q0, 7).unwrap();
        assert_eq!(run.q, q0);
        assert_eq!(run.ledger.total(), 40);
    }

    #[test]
    fn q0_outside_range_is_rejected() {
        let mdp = Mdp::random(4, 2, 0.5, 1).unwrap();
        let q0 = QFunction::constant(4, 2, 2.5);
        assert!(matches!(run_qvi(&mdp, 5, 1, &q0, 7), Err(Error::Precondition(_))));
        let q0 = QFunction::constant(4, 2, -0.1);
        assert!(matches!(run_qvi(&mdp, 5, 1, &q0, 7), Err(Error::Precondition(_))));
    }

    #[test]
    fn deterministic_mdp_error_decays_geometrically() {
        let rows = (0..6).map(|z| {
            let mut r = vec![0.0; 3];
            r[(z * 2 + 1) % 3] = 1.0;
            r
        });
        let mdp = Mdp::from_rows(3, 2, rows.collect(), vec![0.3, 0.9, 0.1, 0.5, 0.7, 0.2], 0.8)
            .unwrap();
        let qstar = exact_optimal_q(&mdp, 1e-13).unwrap();
        for k in 0..25 {
            let run = run_qvi(&mdp, 3, k, &QFunction::zeros_like(&mdp), 1).unwrap();
            let err = sup_norm_diff(&run.q, &qstar).unwrap();
            assert!(err <= 0.8f64.powi(k as i32) * 5.0 + 1e-12);
        }
    }

    #[test]
    fn end_to_end_on_deterministic_mdp_is_within_epsilon() {
        let rows = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]];
        let mdp = Mdp::from_rows(2, 2, rows, vec![0.1, 0.4, 1.0, 0.0], 0.6).unwrap();
        let cfg = QviConfig::new(0.05, 0.1).unwrap();
        let qstar = exact_optimal_q(&mdp, 1e-12).unwrap();
        for seed in 0..3 {
            let out = qvi_end_to_end(&mdp, &cfg, seed).unwrap();
            assert!(sup_norm_diff(&out.run.q, &qstar).unwrap() <= cfg.epsilon);
            assert_eq!(out.run.ledger.total(), out.budget.per_pair * 4);
        }
    }

    #[test]
    fn log_base_changes_budget() {
        let mut cfg = QviConfig::new(0.2, 0.1).unwrap();
        let nat = sample_budget(4, &cfg, 0.5).unwrap().total;
        cfg.log_base = LogBase::Two;
        let two = sample_budget(4, &cfg, 0.5).unwrap().total;
        let ratio = two as f64 / nat as f64;
        assert!((ratio - std::f64::consts::LOG2_E).abs() < 1e-4);
    }
}
