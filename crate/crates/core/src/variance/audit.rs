//! Numerical audits of the error analysis on sampled empirical models.
//!
//! The component-wise sandwich on Q* − Q̂* is deterministic given P̂ and is
//! checked exactly. The Bernstein-type bounds hold with probability 1 − δ,
//! so they are audited as violation rates over independent seeds.

use rayon::prelude::*;
use serde::Serialize;

use super::{deviation_terms, immediate_variance, value_immediate_variance, DeviationTerms};
use crate::error::{Error, Result};
use crate::generative::{build_empirical_model, derive_seed};
use crate::mdp::{
    exact_optimal_q, greedy_policy, policy_q, solve_policy_system, sup_norm_diff, Mdp, Policy,
    QFunction, VFunction,
};
use crate::qvi::LogBase;
use crate::stats::BinomialRate;

/// Absolute slack allowed when comparing the two sides of the sandwich.
pub const SANDWICH_SLACK: f64 = 1e-9;

const EXACT_TOL: f64 = 1e-12;
const AUDIT_CONFIDENCE: f64 = 0.95;
const MIN_AUDIT_SEEDS: u64 = 50;

/// Policy used inside (I − γ P̂^π)⁻¹.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum PolicyChoice {
    /// π*, greedy for the true Q*.
    TrueOptimal,
    /// π̂*, greedy for the empirical Q̂*.
    EmpiricalOptimal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SandwichSide {
    pub policy: PolicyChoice,
    /// Smallest slack of the inequality over all pairs (negative = violated).
    pub min_margin: f64,
    pub holds: bool,
}

/// Both inequalities of the sandwich, each evaluated for both policies.
#[derive(Debug, Clone, Serialize)]
pub struct SandwichReport {
    /// Q* − Q̂* ≤ γ (I − γP̂^π)⁻¹ (P − P̂) V*.
    pub upper: [SandwichSide; 2],
    /// Q* − Q̂* ≥ γ (I − γP̂^π)⁻¹ (P − P̂) V*.
    pub lower: [SandwichSide; 2],
    pub sup_error: f64,
}

impl SandwichReport {
    pub fn upper_for(&self, policy: PolicyChoice) -> &SandwichSide {
        self.upper.iter().find(|s| s.policy == policy).expect("both choices evaluated")
    }

    pub fn lower_for(&self, policy: PolicyChoice) -> &SandwichSide {
        self.lower.iter().find(|s| s.policy == policy).expect("both choices evaluated")
    }

    /// The combination that follows from the Bellman equations: π* for the
    /// upper bound, π̂* for the lower bound.
    pub fn attribution_holds(&self) -> bool {
        self.upper_for(PolicyChoice::TrueOptimal).holds
            && self.lower_for(PolicyChoice::EmpiricalOptimal).holds
    }

    /// Every (upper policy, lower policy) combination that holds here.
    pub fn holding_combinations(&self) -> Vec<(PolicyChoice, PolicyChoice)> {
        let mut out = Vec::new();
        for u in self.upper.iter().filter(|s| s.holds) {
            for l in self.lower.iter().filter(|s| s.holds) {
                out.push((u.policy, l.policy));
            }
        }
        out
    }
}

/// Identifies one audited inequality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum BoundId {
    SandwichUpper,
    SandwichLower,
    VarianceEvaluated,
    VarianceOptimal,
    DeviationUpper,
    DeviationLower,
    ErrorBound,
}

impl BoundId {
    pub const BERNSTEIN: [BoundId; 5] = [
        BoundId::VarianceEvaluated,
        BoundId::VarianceOptimal,
        BoundId::DeviationUpper,
        BoundId::DeviationLower,
        BoundId::ErrorBound,
    ];

    /// Stable identifier used in CSV output.
    pub fn label(self) -> &'static str {
        match self {
            BoundId::SandwichUpper => "lemma2-eq1",
            BoundId::SandwichLower => "lemma2-eq2",
            BoundId::VarianceEvaluated => "lemma3-eq3",
            BoundId::VarianceOptimal => "lemma3-eq4",
            BoundId::DeviationUpper => "lemma4-eq5",
            BoundId::DeviationLower => "lemma4-eq6",
            BoundId::ErrorBound => "lemma7-eq13",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AuditRecord {
    pub bound: BoundId,
    pub seed: u64,
    pub violated: bool,
    /// Bound minus realised value, minimised over pairs.
    pub margin: f64,
}

/// Quantities of the true model shared by every audited seed.
#[derive(Debug, Clone)]
pub struct AuditContext {
    pub mdp: Mdp,
    pub q_star: QFunction,
    pub v_star: VFunction,
    pub pi_star: Policy,
    /// v*(z) = γ² Var_{P(·|z)} V*.
    pub v_star_variance: Vec<f64>,
    pub n: u64,
    pub delta: f64,
    pub terms: DeviationTerms,
}

impl AuditContext {
    /// `formula_pairs` is the N used in the deviation terms; it may differ
    /// from the table size for padded models.
    pub fn new(mdp: &Mdp, n: u64, delta: f64, formula_pairs: usize, base: LogBase) -> Result<Self> {
        let terms = deviation_terms(formula_pairs, n, delta, mdp.discount(), base)?;
        let q_star = exact_optimal_q(mdp, EXACT_TOL)?;
        let v_star = q_star.state_values();
        let pi_star = greedy_policy(&q_star);
        let v_star_variance = value_immediate_variance(mdp, &v_star)?;
        Ok(AuditContext {
            mdp: mdp.clone(),
            q_star,
            v_star,
            pi_star,
            v_star_variance,
            n,
            delta,
            terms,
        })
    }

    /// γ (P − P̂) V*.
    fn kernel_gap(&self, emp: &Mdp) -> Vec<f64> {
        let gamma = self.mdp.discount();
        let v = self.v_star.values();
        (0..self.mdp.num_pairs())
            .map(|z| {
                let diff: f64 = self
                    .mdp
                    .row(z)
                    .iter()
                    .zip(emp.row(z))
                    .zip(v)
                    .map(|((p, ph), x)| (p - ph) * x)
                    .sum();
                gamma * diff
            })
            .collect()
    }

    pub fn sandwich(&self, emp: &Mdp) -> Result<SandwichReport> {
        check_compatible(&self.mdp, emp)?;
        let gamma = self.mdp.discount();
        let q_hat = exact_optimal_q(emp, EXACT_TOL)?;
        let pi_hat = greedy_policy(&q_hat);
        let gap = self.kernel_gap(emp);
        let err: Vec<f64> = self
            .q_star
            .values()
            .iter()
            .zip(q_hat.values())
            .map(|(a, b)| a - b)
            .collect();

        let side = |policy: PolicyChoice, upper: bool| -> Result<SandwichSide> {
            let pi = match policy {
                PolicyChoice::TrueOptimal => &self.pi_star,
                PolicyChoice::EmpiricalOptimal => &pi_hat,
            };
            let rhs = solve_policy_system(emp, pi, &gap, gamma)?;
            let min_margin = err
                .iter()
                .zip(&rhs)
                .map(|(e, r)| if upper { r - e } else { e - r })
                .fold(f64::INFINITY, f64::min);
            Ok(SandwichSide {
                policy,
                min_margin,
                holds: min_margin >= -SANDWICH_SLACK,
            })
        };
        use PolicyChoice::*;
        Ok(SandwichReport {
            upper: [side(TrueOptimal, true)?, side(EmpiricalOptimal, true)?],
            lower: [side(TrueOptimal, false)?, side(EmpiricalOptimal, false)?],
            sup_error: sup_norm_diff(&self.q_star, &q_hat)?,
        })
    }

    /// Margins of the five probabilistic bounds on one empirical model.
    pub fn bernstein_margins(&self, emp: &Mdp) -> Result<Vec<(BoundId, f64)>> {
        check_compatible(&self.mdp, emp)?;
        let q_hat = exact_optimal_q(emp, EXACT_TOL)?;
        let pi_hat = greedy_policy(&q_hat);
        // σ̂^{π*}: immediate variance of π* evaluated on the empirical model
        let q_hat_pi_star = policy_q(emp, &self.pi_star)?;
        let sigma_hat_pi_star = immediate_variance(emp, &self.pi_star, &q_hat_pi_star)?;
        // σ̂*: immediate variance of Q̂* under π̂*
        let sigma_hat_star = immediate_variance(emp, &pi_hat, &q_hat)?;
        let gap = self.kernel_gap(emp);
        let t = &self.terms;
        let n = self.n as f64;
        let vstar = &self.v_star_variance;

        let min_over = |f: &dyn Fn(usize) -> f64| {
            (0..self.mdp.num_pairs()).map(f).fold(f64::INFINITY, f64::min)
        };
        Ok(vec![
            (
                BoundId::VarianceEvaluated,
                min_over(&|z| sigma_hat_pi_star[z] + t.b_v - vstar[z]),
            ),
            (
                BoundId::VarianceOptimal,
                min_over(&|z| sigma_hat_star[z] + t.b_v - vstar[z]),
            ),
            (
                BoundId::DeviationUpper,
                min_over(&|z| (t.c_pv * sigma_hat_pi_star[z] / n).sqrt() + t.b_pv - gap[z]),
            ),
            (
                BoundId::DeviationLower,
                min_over(&|z| gap[z] + (t.c_pv * sigma_hat_star[z] / n).sqrt() + t.b_pv),
            ),
            (
                BoundId::ErrorBound,
                t.eps_prime - sup_norm_diff(&self.q_star, &q_hat)?,
            ),
        ])
    }
}

fn check_compatible(mdp: &Mdp, emp: &Mdp) -> Result<()> {
    if mdp.num_states() != emp.num_states() || mdp.num_actions() != emp.num_actions() {
        return Err(Error::dimension(
            format!("{}x{} model", mdp.num_states(), mdp.num_actions()),
            format!("{}x{}", emp.num_states(), emp.num_actions()),
        ));
    }
    if mdp.reward() != emp.reward() || mdp.discount() != emp.discount() {
        return Err(Error::Precondition(
            "empirical model must share reward and discount with the true model".into(),
        ));
    }
    Ok(())
}

/// Sandwich check for a (true, empirical) model pair.
pub fn check_component_sandwich(mdp: &Mdp, emp: &Mdp) -> Result<SandwichReport> {
    check_compatible(mdp, emp)?;
    let ctx = AuditContext::new(mdp, 1, 0.5, mdp.num_pairs(), LogBase::Natural)?;
    ctx.sandwich(emp)
}

/// Records and per-bound violation rates of one audit.
#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub n: u64,
    pub delta: f64,
    pub seeds: u64,
    pub terms: DeviationTerms,
    pub records: Vec<AuditRecord>,
}

impl AuditReport {
    pub fn rate(&self, bound: BoundId) -> Option<BinomialRate> {
        let relevant: Vec<_> = self.records.iter().filter(|r| r.bound == bound).collect();
        if relevant.is_empty() {
            return None;
        }
        let hits = relevant.iter().filter(|r| r.violated).count() as u64;
        Some(BinomialRate::wilson(hits, relevant.len() as u64, AUDIT_CONFIDENCE))
    }

    pub fn bounds(&self) -> Vec<BoundId> {
        let mut ids: Vec<BoundId> = self.records.iter().map(|r| r.bound).collect();
        ids.sort();
        ids.dedup();
        ids
    }
}

/// Samples `seeds` empirical models with `n` draws per pair and records, for
/// each seed and bound, whether the bound is violated anywhere. With
/// `include_sandwich` the deterministic sandwich is recorded as well.
pub fn audit_bernstein_bounds(
    ctx: &AuditContext,
    seeds: u64,
    master_seed: u64,
    include_sandwich: bool,
) -> Result<AuditReport> {
    if seeds < MIN_AUDIT_SEEDS {
        return Err(Error::invalid(format!(
            "audits need at least {MIN_AUDIT_SEEDS} seeds, got {seeds}"
        )));
    }
    let per_seed: Vec<Vec<AuditRecord>> = (0..seeds)
        .into_par_iter()
        .map(|seed| -> Result<Vec<AuditRecord>> {
            let (emp, _) = build_empirical_model(&ctx.mdp, ctx.n, derive_seed(master_seed, &[seed]))?;
            let mut margins = Vec::new();
            if include_sandwich {
                let s = ctx.sandwich(&emp)?;
                margins.push((
                    BoundId::SandwichUpper,
                    s.upper_for(PolicyChoice::TrueOptimal).min_margin + SANDWICH_SLACK,
                ));
                margins.push((
                    BoundId::SandwichLower,
                    s.lower_for(PolicyChoice::EmpiricalOptimal).min_margin + SANDWICH_SLACK,
                ));
            }
            margins.extend(ctx.bernstein_margins(&emp)?);
            Ok(margins
                .into_iter()
                .map(|(bound, margin)| AuditRecord {
                    bound,
                    seed,
                    violated: margin < 0.0,
                    margin,
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(AuditReport {
        n: ctx.n,
        delta: ctx.delta,
        seeds,
        terms: ctx.terms,
        records: per_seed.into_iter().flatten().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn deterministic() -> Mdp {
        let rows = vec![
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![0.0, 1.0, 0.0],
            vec![1.0, 0.0, 0.0],
        ];
        Mdp::from_rows(3, 2, rows, vec![0.1, 0.5, 0.9, 0.3, 0.6, 0.2], 0.9).unwrap()
    }

    #[test]
    fn sandwich_is_tight_when_model_is_exact() {
        let mdp = deterministic();
        let report = check_component_sandwich(&mdp, &mdp).unwrap();
        assert!(report.attribution_holds());
        assert_eq!(report.sup_error, 0.0);
        for side in report.upper.iter().chain(&report.lower) {
            assert_eq!(side.min_margin, 0.0);
        }
    }

    #[test]
    fn sandwich_holds_on_sampled_models() {
        for seed in 0..30u64 {
            let mdp = Mdp::random_sparse(6, 2, 0.9, 3, seed).unwrap();
            let (emp, _) = build_empirical_model(&mdp, 100, seed + 1000).unwrap();
            let report = check_component_sandwich(&mdp, &emp).unwrap();
            assert!(report.attribution_holds(), "seed {seed}: {report:?}");
            assert!(report
                .holding_combinations()
                .contains(&(PolicyChoice::TrueOptimal, PolicyChoice::EmpiricalOptimal)));
        }
    }

    #[test]
    fn sandwich_survives_manual_perturbation() {
        let mdp = Mdp::random(5, 2, 0.8, 4).unwrap();
        let mut kernel = mdp.transition().to_vec();
        // move mass within row 3 from its first to its last entry
        let row = &mut kernel[3 * 5..4 * 5];
        let shift = row[0] * 0.9;
        row[0] -= shift;
        row[4] += shift;
        let emp = mdp.with_transition(kernel).unwrap();
        let report = check_component_sandwich(&mdp, &emp).unwrap();
        assert!(report.attribution_holds());
        assert!(report.sup_error > 0.0);
    }

    #[test]
    fn sandwich_rejects_mismatched_models() {
        let mdp = Mdp::random(3, 2, 0.8, 4).unwrap();
        let other = Mdp::random(3, 2, 0.8, 5).unwrap();
        assert!(matches!(check_component_sandwich(&mdp, &other), Err(Error::Precondition(_))));
        let small = Mdp::random(2, 2, 0.8, 4).unwrap();
        assert!(check_component_sandwich(&mdp, &small).is_err());
    }

    #[test]
    fn deterministic_audit_has_no_violations_and_full_margins() {
        let mdp = deterministic();
        let ctx = AuditContext::new(&mdp, 20, 0.1, mdp.num_pairs(), LogBase::Natural).unwrap();
        let report = audit_bernstein_bounds(&ctx, 50, 3, true).unwrap();
        for bound in report.bounds() {
            assert_eq!(report.rate(bound).unwrap().events, 0, "{bound:?}");
        }
        let t = ctx.terms;
        for r in &report.records {
            let expected = match r.bound {
                BoundId::VarianceEvaluated | BoundId::VarianceOptimal => t.b_v,
                BoundId::DeviationUpper | BoundId::DeviationLower => t.b_pv,
                BoundId::ErrorBound => t.eps_prime,
                BoundId::SandwichUpper | BoundId::SandwichLower => SANDWICH_SLACK,
            };
            assert_eq!(r.margin, expected, "{:?}", r.bound);
        }
    }

    #[test]
    fn audit_on_random_mdp_stays_below_delta() {
        let mdp = Mdp::random(5, 2, 0.9, 21).unwrap();
        let ctx = AuditContext::new(&mdp, 500, 0.1, mdp.num_pairs(), LogBase::Natural).unwrap();
        let report = audit_bernstein_bounds(&ctx, 200, 8, false).unwrap();
        for bound in BoundId::BERNSTEIN {
            let rate = report.rate(bound).unwrap();
            assert!(rate.rate <= 0.1, "{bound:?}: {rate:?}");
        }
    }

    #[test]
    fn single_sample_error_bound_is_vacuous_but_holds() {
        let mdp = Mdp::random(4, 2, 0.5, 2).unwrap();
        let ctx = AuditContext::new(&mdp, 1, 0.1, mdp.num_pairs(), LogBase::Natural).unwrap();
        assert!(ctx.terms.eps_prime > mdp.horizon());
        let report = audit_bernstein_bounds(&ctx, 50, 1, false).unwrap();
        assert!(report.rate(BoundId::ErrorBound).unwrap().rate <= 0.1);
    }

    #[test]
    fn too_few_seeds_rejected() {
        let mdp = deterministic();
        let ctx = AuditContext::new(&mdp, 20, 0.1, 6, LogBase::Natural).unwrap();
        assert!(audit_bernstein_bounds(&ctx, 49, 3, false).is_err());
    }
}
