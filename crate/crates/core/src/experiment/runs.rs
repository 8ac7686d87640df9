use rayon::prelude::*;

use super::{opt, CsvWriter, ExperimentConfig, ExperimentOutput};
use crate::error::{Error, Result};
use crate::generative::derive_seed;
use crate::hard::{adversarial_pair, distinguishability_experiment, xi_threshold};
use crate::mdp::{exact_optimal_q, sup_norm_diff, QFunction};
use crate::qvi::{iteration_count, qvi_end_to_end, run_qvi, sample_budget, LogBase, QviConfig};
use crate::stats::{log_log_slope, median, BinomialRate};
use crate::variance::{audit_bernstein_bounds, AuditContext, BoundId};

/// Acceptable log-log slope of median error against n.
pub const SCALING_N_RANGE: (f64, f64) = (-0.6, -0.4);
/// Acceptable log-log slope of median error against β.
pub const SCALING_BETA_RANGE: (f64, f64) = (1.2, 1.8);
/// Confidence level of the failure-rate interval in PAC audits.
pub const PAC_CONFIDENCE: f64 = 0.99;
const DEFAULT_BUDGET_CAP: u64 = 50_000_000;
const EXACT_TOL: f64 = 1e-12;

// Tags separating the seed streams of different experiments.
const TAG_SCALING_N: u64 = 1;
const TAG_SCALING_BETA: u64 = 2;
const TAG_PAC: u64 = 3;
const TAG_BOUND_AUDIT: u64 = 4;
const TAG_LOWER: u64 = 5;

#[derive(Debug, Clone)]
pub struct NScaling {
    pub medians: Vec<(u64, f64)>,
    pub slope: f64,
    pub output: ExperimentOutput,
}

/// Sup error of QVI with a fixed iteration count over a grid of per-pair
/// sample sizes; fits the slope of median error against n on log axes.
pub fn scaling_n(cfg: &ExperimentConfig) -> Result<NScaling> {
    let resolved = cfg.require_mdp()?.resolve()?;
    let mdp = &resolved.mdp;
    let epsilon = cfg.require_epsilon()?;
    let seeds = cfg.require_seeds()?;
    let grid = &cfg.n_grid;
    if grid.len() < 2 || grid.contains(&0) {
        return Err(Error::invalid("n_grid needs at least two positive sizes"));
    }
    let (lo, hi) = (*grid.iter().min().unwrap(), *grid.iter().max().unwrap());
    let decades = (hi as f64 / lo as f64).log10();
    if decades < 1.5 {
        return Err(Error::invalid(format!(
            "n_grid spans {decades:.2} decades; at least 1.5 are required"
        )));
    }
    let k = iteration_count(epsilon, mdp.discount())?;
    let q_star = exact_optimal_q(mdp, EXACT_TOL)?;
    let q0 = QFunction::zeros_like(mdp);

    let jobs: Vec<(usize, u64)> = (0..grid.len())
        .flat_map(|ni| (0..seeds).map(move |s| (ni, s)))
        .collect();
    let errors: Vec<f64> = jobs
        .par_iter()
        .map(|&(ni, s)| {
            let seed = derive_seed(cfg.master_seed, &[TAG_SCALING_N, ni as u64, s]);
            let run = run_qvi(mdp, grid[ni], k, &q0, seed)?;
            sup_norm_diff(&run.q, &q_star)
        })
        .collect::<Result<_>>()?;

    let mut csv = CsvWriter::new(cfg, "record,n,seed,sup_error");
    for (&(ni, s), e) in jobs.iter().zip(&errors) {
        csv.row(&["sample".into(), grid[ni].to_string(), s.to_string(), e.to_string()]);
    }
    let medians: Vec<(u64, f64)> = errors
        .chunks(seeds as usize)
        .zip(grid)
        .map(|(chunk, &n)| (n, median(chunk).expect("non-empty")))
        .collect();
    for (n, m) in &medians {
        csv.row(&["median".into(), n.to_string(), String::new(), m.to_string()]);
    }
    let xs: Vec<f64> = medians.iter().map(|(n, _)| *n as f64).collect();
    let ys: Vec<f64> = medians.iter().map(|(_, m)| *m).collect();
    let slope = log_log_slope(&xs, &ys)?;
    csv.row(&["slope".into(), String::new(), String::new(), slope.to_string()]);
    let pass = (SCALING_N_RANGE.0..=SCALING_N_RANGE.1).contains(&slope);
    Ok(NScaling {
        medians,
        slope,
        output: ExperimentOutput {
            csv: csv.finish(),
            verdict: Some(pass),
            summary: format!("n-slope {slope:.4} (k = {k}, accepted {SCALING_N_RANGE:?})"),
        },
    })
}

#[derive(Debug, Clone)]
pub struct BetaScaling {
    /// (γ, β, median sup error).
    pub medians: Vec<(f64, f64, f64)>,
    pub slope: f64,
    pub output: ExperimentOutput,
}

/// Sup error of QVI at a fixed n across a grid of discounts. Hard-family
/// sources without an explicit p are rebuilt with the adversarial p for
/// each γ. Reference columns show β² and β^1.5 growth anchored at the first
/// grid point.
pub fn scaling_beta(cfg: &ExperimentConfig) -> Result<BetaScaling> {
    let source = cfg.require_mdp()?;
    let epsilon = cfg.require_epsilon()?;
    let seeds = cfg.require_seeds()?;
    let n = match cfg.n_grid.as_slice() {
        [n] if *n > 0 => *n,
        _ => return Err(Error::invalid("scaling-beta needs exactly one positive n in n_grid")),
    };
    let grid = &cfg.gamma_grid;
    if grid.len() < 2 {
        return Err(Error::invalid("gamma_grid needs at least two discounts"));
    }
    let betas: Vec<f64> = grid.iter().map(|g| 1.0 / (1.0 - g)).collect();
    let (bmin, bmax) = betas
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if !(bmax > bmin) {
        return Err(Error::invalid("gamma_grid has zero span; the slope fit is undefined"));
    }
    if bmax / bmin < 4.0 {
        return Err(Error::invalid(format!(
            "gamma_grid spans a β factor of {:.3}; at least 4 is required",
            bmax / bmin
        )));
    }

    let mut instances = Vec::with_capacity(grid.len());
    for &g in grid {
        let mdp = source.resolve_with_discount(Some(g))?.mdp;
        let k = iteration_count(epsilon, g)?;
        let q_star = exact_optimal_q(&mdp, EXACT_TOL)?;
        instances.push((mdp, k, q_star));
    }
    let jobs: Vec<(usize, u64)> = (0..grid.len())
        .flat_map(|gi| (0..seeds).map(move |s| (gi, s)))
        .collect();
    let errors: Vec<f64> = jobs
        .par_iter()
        .map(|&(gi, s)| {
            let (mdp, k, q_star) = &instances[gi];
            let seed = derive_seed(cfg.master_seed, &[TAG_SCALING_BETA, gi as u64, s]);
            let run = run_qvi(mdp, n, *k, &QFunction::zeros_like(mdp), seed)?;
            sup_norm_diff(&run.q, q_star)
        })
        .collect::<Result<_>>()?;

    let mut csv = CsvWriter::new(
        cfg,
        "record,gamma,beta,n,seed,sup_error,beta2_reference,beta1.5_reference",
    );
    for (&(gi, s), e) in jobs.iter().zip(&errors) {
        csv.row(&[
            "sample".into(),
            grid[gi].to_string(),
            betas[gi].to_string(),
            n.to_string(),
            s.to_string(),
            e.to_string(),
            String::new(),
            String::new(),
        ]);
    }
    let medians: Vec<(f64, f64, f64)> = errors
        .chunks(seeds as usize)
        .enumerate()
        .map(|(gi, chunk)| (grid[gi], betas[gi], median(chunk).expect("non-empty")))
        .collect();
    let (b0, m0) = (medians[0].1, medians[0].2);
    for &(g, b, m) in &medians {
        let r = b / b0;
        csv.row(&[
            "median".into(),
            g.to_string(),
            b.to_string(),
            n.to_string(),
            String::new(),
            m.to_string(),
            (m0 * r * r).to_string(),
            (m0 * r.powf(1.5)).to_string(),
        ]);
    }
    let xs: Vec<f64> = medians.iter().map(|m| m.1).collect();
    let ys: Vec<f64> = medians.iter().map(|m| m.2).collect();
    let slope = log_log_slope(&xs, &ys)?;
    csv.row(&[
        "slope".into(),
        String::new(),
        String::new(),
        n.to_string(),
        String::new(),
        slope.to_string(),
        "2".into(),
        "1.5".into(),
    ]);
    let pass = (SCALING_BETA_RANGE.0..=SCALING_BETA_RANGE.1).contains(&slope) && 2.0 - slope >= 0.2;
    Ok(BetaScaling {
        medians,
        slope,
        output: ExperimentOutput {
            csv: csv.finish(),
            verdict: Some(pass),
            summary: format!("beta-slope {slope:.4} (accepted {SCALING_BETA_RANGE:?})"),
        },
    })
}

#[derive(Debug, Clone)]
pub struct PacAudit {
    pub errors: Vec<f64>,
    pub failure: BinomialRate,
    pub output: ExperimentOutput,
}

/// Runs QVI with the full PAC budget for every seed and counts runs whose
/// sup error exceeds ε. The check passes when the interval on the failure
/// rate reaches down to δ.
pub fn pac_audit(cfg: &ExperimentConfig) -> Result<PacAudit> {
    let mdp = cfg.require_mdp()?.resolve()?.mdp;
    let epsilon = cfg.require_epsilon()?;
    let delta = cfg.require_delta()?;
    let seeds = cfg.require_seeds()?;
    let qcfg = QviConfig::new(epsilon, delta)?;
    let budget = sample_budget(mdp.num_pairs(), &qcfg, mdp.discount())?;
    let cap = cfg.budget_cap.unwrap_or(DEFAULT_BUDGET_CAP);
    if budget.total > cap {
        return Err(Error::invalid(format!(
            "sample budget T = {} exceeds the cap of {cap}; use a smaller discount, \
             a larger epsilon or raise budget_cap",
            budget.total
        )));
    }
    let q_star = exact_optimal_q(&mdp, EXACT_TOL)?;
    let errors: Vec<f64> = (0..seeds)
        .into_par_iter()
        .map(|s| {
            let out = qvi_end_to_end(&mdp, &qcfg, derive_seed(cfg.master_seed, &[TAG_PAC, s]))?;
            sup_norm_diff(&out.run.q, &q_star)
        })
        .collect::<Result<_>>()?;

    let mut csv = CsvWriter::new(cfg, "seed,error,epsilon,pass");
    for (s, e) in errors.iter().enumerate() {
        csv.row(&[
            s.to_string(),
            e.to_string(),
            epsilon.to_string(),
            (*e <= epsilon).to_string(),
        ]);
    }
    let failures = errors.iter().filter(|e| **e > epsilon).count() as u64;
    let failure = BinomialRate::wilson(failures, seeds, PAC_CONFIDENCE);
    let pass = failure.consistent_with_at_most(delta);
    csv.comment(&format!(
        "budget_total={} per_pair={} iterations={}",
        budget.total,
        budget.per_pair,
        iteration_count(epsilon, mdp.discount())?
    ));
    csv.comment(&format!(
        "failures={failures} seeds={seeds} rate={} ci_low={} ci_high={} delta={delta} verdict={}",
        failure.rate,
        failure.lower,
        failure.upper,
        if pass { "pass" } else { "fail" }
    ));
    Ok(PacAudit {
        errors,
        failure,
        output: ExperimentOutput {
            csv: csv.finish(),
            verdict: Some(pass),
            summary: format!(
                "{failures}/{seeds} runs above epsilon, rate interval [{:.4}, {:.4}] vs delta {delta}",
                failure.lower, failure.upper
            ),
        },
    })
}

#[derive(Debug, Clone)]
pub struct LemmaAudit {
    /// (n, bound, rate) for every audited bound.
    pub rates: Vec<(u64, BoundId, BinomialRate)>,
    pub output: ExperimentOutput,
}

/// Audits the sandwich and the Bernstein-type bounds at every n of the grid.
/// Passes when the sandwich never breaks and no Bernstein bound is violated
/// more often than δ.
pub fn lemma_audit(cfg: &ExperimentConfig) -> Result<LemmaAudit> {
    let resolved = cfg.require_mdp()?.resolve()?;
    let delta = cfg.require_delta()?;
    let seeds = cfg.require_seeds()?;
    if cfg.n_grid.is_empty() {
        return Err(Error::invalid("lemma-audit needs a non-empty n_grid"));
    }
    let mut csv = CsvWriter::new(cfg, "lemma-id,instance-id,seed,violated,margin");
    let mut rates = Vec::new();
    let mut summary_lines = Vec::new();
    for (ni, &n) in cfg.n_grid.iter().enumerate() {
        let ctx = AuditContext::new(
            &resolved.mdp,
            n,
            delta,
            resolved.formula_pairs,
            LogBase::Natural,
        )?;
        let master = derive_seed(cfg.master_seed, &[TAG_BOUND_AUDIT, ni as u64]);
        let report = audit_bernstein_bounds(&ctx, seeds, master, true)?;
        let instance = format!("n={n}");
        for r in &report.records {
            csv.row(&[
                r.bound.label().into(),
                instance.clone(),
                r.seed.to_string(),
                r.violated.to_string(),
                r.margin.to_string(),
            ]);
        }
        for bound in report.bounds() {
            let rate = report.rate(bound).expect("bound has records");
            summary_lines.push(format!(
                "{} {instance} violations={} seeds={} rate={} ci_low={} ci_high={}",
                bound.label(),
                rate.events,
                rate.trials,
                rate.rate,
                rate.lower,
                rate.upper
            ));
            rates.push((n, bound, rate));
        }
    }
    for line in &summary_lines {
        csv.comment(line);
    }
    let pass = rates.iter().all(|(_, bound, rate)| match bound {
        BoundId::SandwichUpper | BoundId::SandwichLower => rate.events == 0,
        _ => rate.rate <= delta,
    });
    csv.comment(&format!("verdict={}", if pass { "pass" } else { "fail" }));
    let worst = rates
        .iter()
        .map(|(_, _, r)| r.rate)
        .fold(0.0_f64, f64::max);
    Ok(LemmaAudit {
        rates,
        output: ExperimentOutput {
            csv: csv.finish(),
            verdict: Some(pass),
            summary: format!("worst violation rate {worst:.4} vs delta {delta}"),
        },
    })
}

/// Failure frequency of the plug-in estimator on the adversarial pair over
/// a grid of sample sizes t, next to the threshold ξ.
pub fn lower_bound(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let gamma = cfg.gamma.ok_or_else(|| Error::invalid("lower-bound requires field `gamma`"))?;
    let epsilon = cfg.require_epsilon()?;
    let delta = cfg.require_delta()?;
    let seeds = cfg.require_seeds()?;
    let pair = adversarial_pair(1, 1, gamma, epsilon)?;
    let xi = xi_threshold(epsilon, delta, gamma, LogBase::Natural)?;
    let master = derive_seed(cfg.master_seed, &[TAG_LOWER]);
    let rows = distinguishability_experiment(gamma, epsilon, &cfg.t_grid, seeds, master)?;
    let mut csv = CsvWriter::new(cfg, "t,model,failures,seeds,frequency,ci_low,ci_high,xi");
    for r in &rows {
        csv.row(&[
            r.t.to_string(),
            format!("M{}", r.model),
            r.failure.events.to_string(),
            r.failure.trials.to_string(),
            r.failure.rate.to_string(),
            r.failure.lower.to_string(),
            r.failure.upper.to_string(),
            xi.to_string(),
        ]);
    }
    csv.comment(&format!(
        "p={} alpha={} qstar0={} qstar1={} xi={xi}",
        pair.p, pair.alpha, pair.qstar0, pair.qstar1
    ));
    Ok(ExperimentOutput {
        csv: csv.finish(),
        verdict: None,
        summary: format!("{} rows, xi = {}", rows.len(), opt(Some(xi))),
    })
}
