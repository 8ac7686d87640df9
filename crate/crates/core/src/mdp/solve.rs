use nalgebra::{DMatrix, DVector};

use super::{Mdp, Policy, QFunction, ValueTable};
use crate::error::{Error, Result};

/// Above this many states policy systems are solved by fixed-point
/// iteration instead of a dense LU factorisation.
pub const DIRECT_SOLVE_MAX_STATES: usize = 2000;

/// Residual bound asserted on every linear policy solve.
const POLICY_RESIDUAL_TOLERANCE: f64 = 1e-10;

/// Q'(z) = r(z) + γ Σ_y P(y|z) max_a q(y, a), using whatever kernel `mdp`
/// holds (exact or empirical).
pub fn apply_bellman_optimality(mdp: &Mdp, q: &QFunction) -> Result<QFunction> {
    mdp.check_q(q)?;
    let v = q.state_values();
    let gamma = mdp.discount();
    let values = (0..mdp.num_pairs())
        .map(|z| mdp.reward()[z] + gamma * dot(mdp.row(z), v.values()))
        .collect();
    QFunction::from_vec(mdp.num_states(), mdp.num_actions(), values)
}

/// ‖Tq − q‖.
pub fn bellman_residual(mdp: &Mdp, q: &QFunction) -> Result<f64> {
    let next = apply_bellman_optimality(mdp, q)?;
    sup_norm_diff(&next, q)
}

/// Optimal action values to within `tol` in sup norm.
///
/// Runs value iteration from zero until successive iterates differ by at
/// most `tol (1-γ)/γ`. The greedy policy of the last iterate is then
/// evaluated exactly; its values replace the iterate when their Bellman
/// residual certifies a tighter bound.
pub fn exact_optimal_q(mdp: &Mdp, tol: f64) -> Result<QFunction> {
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tolerance must be positive, got {tol}")));
    }
    let gamma = mdp.discount();
    let mut q = QFunction::zeros_like(mdp);
    if gamma == 0.0 {
        return apply_bellman_optimality(mdp, &q);
    }
    let beta = mdp.horizon();
    let threshold = tol * (1.0 - gamma) / gamma;
    // ‖Q_{j+1} − Q_j‖ ≤ 2 γ^j β when Q_0 = 0
    let needed = ((2.0 * beta / threshold).ln() / (1.0 / gamma).ln()).ceil();
    let cap = needed.max(0.0) as usize + 16;

    let mut step = f64::INFINITY;
    for _ in 0..cap {
        let next = apply_bellman_optimality(mdp, &q)?;
        step = sup_norm_diff(&next, &q)?;
        q = next;
        if step <= threshold {
            let bound = gamma / (1.0 - gamma) * step;
            return Ok(polish(mdp, q.clone(), bound).unwrap_or(q));
        }
    }
    // rounding noise can keep the step above a very small threshold
    polish(mdp, q, tol).ok_or(Error::NonConvergence {
        iterations: cap,
        residual: step,
    })
}

/// Exact evaluation of the greedy policy of `q`, returned only if its
/// residual certifies an error below `bound`.
fn polish(mdp: &Mdp, q: QFunction, bound: f64) -> Option<QFunction> {
    if mdp.num_states() > DIRECT_SOLVE_MAX_STATES {
        return None;
    }
    let pi = greedy_policy(&q);
    let q_pi = policy_q(mdp, &pi).ok()?;
    let certificate = bellman_residual(mdp, &q_pi).ok()? * mdp.horizon();
    (certificate <= bound).then_some(q_pi)
}

/// Q^π, the solution of (I − γP^π) Q = r.
pub fn policy_q(mdp: &Mdp, pi: &Policy) -> Result<QFunction> {
    let values = solve_policy_system(mdp, pi, mdp.reward(), mdp.discount())?;
    QFunction::from_vec(mdp.num_states(), mdp.num_actions(), values)
}

/// (P^π g)(z) = Σ_y P(y|z) g(y, π(y)) for a table `g` over pairs.
pub fn policy_expectation(mdp: &Mdp, pi: &Policy, table: &[f64]) -> Result<Vec<f64>> {
    mdp.check_policy(pi)?;
    mdp.check_pair_table(table, "table")?;
    let on_policy = on_policy_slice(mdp, pi, table);
    Ok((0..mdp.num_pairs())
        .map(|z| dot(mdp.row(z), &on_policy))
        .collect())
}

/// Solves (I − f P^π) u = rhs over state-action pairs.
///
/// The pair system reduces to the state system w = rhs_π + f P_π w with
/// w(x) = u(x, π(x)), after which u = rhs + f P w. The state system is
/// solved by LU with iterative refinement up to
/// [`DIRECT_SOLVE_MAX_STATES`] states and by fixed-point iteration beyond.
pub fn solve_policy_system(mdp: &Mdp, pi: &Policy, rhs: &[f64], factor: f64) -> Result<Vec<f64>> {
    mdp.check_policy(pi)?;
    mdp.check_pair_table(rhs, "right-hand side")?;
    if !(0.0..1.0).contains(&factor) {
        return Err(Error::invalid(format!(
            "policy system factor must lie in [0, 1), got {factor}"
        )));
    }
    let s = mdp.num_states();
    let rhs_pi = on_policy_slice(mdp, pi, rhs);
    let w = if s <= DIRECT_SOLVE_MAX_STATES {
        solve_direct(mdp, pi, &rhs_pi, factor)?
    } else {
        solve_fixed_point(mdp, pi, &rhs_pi, factor)?
    };
    let u: Vec<f64> = (0..mdp.num_pairs())
        .map(|z| rhs[z] + factor * dot(mdp.row(z), &w))
        .collect();

    let pu = on_policy_slice(mdp, pi, &u);
    let residual = (0..mdp.num_pairs())
        .map(|z| (u[z] - rhs[z] - factor * dot(mdp.row(z), &pu)).abs())
        .fold(0.0, f64::max);
    if residual > POLICY_RESIDUAL_TOLERANCE {
        return Err(Error::NonConvergence {
            iterations: 0,
            residual,
        });
    }
    Ok(u)
}

fn solve_direct(mdp: &Mdp, pi: &Policy, rhs_pi: &[f64], factor: f64) -> Result<Vec<f64>> {
    let s = mdp.num_states();
    let mut a = DMatrix::<f64>::identity(s, s);
    for x in 0..s {
        let row = mdp.row(mdp.pair(x, pi.action(x)));
        for (y, &p) in row.iter().enumerate() {
            a[(x, y)] -= factor * p;
        }
    }
    let b = DVector::from_column_slice(rhs_pi);
    let lu = a.clone().lu();
    let mut w = lu.solve(&b).ok_or(Error::NonConvergence {
        iterations: 0,
        residual: f64::INFINITY,
    })?;
    for _ in 0..3 {
        let r = &b - &a * &w;
        if r.amax() <= f64::EPSILON * (1.0 + w.amax()) {
            break;
        }
        if let Some(d) = lu.solve(&r) {
            w += d;
        }
    }
    Ok(w.iter().copied().collect())
}

fn solve_fixed_point(mdp: &Mdp, pi: &Policy, rhs_pi: &[f64], factor: f64) -> Result<Vec<f64>> {
    let s = mdp.num_states();
    let scale = rhs_pi.iter().fold(0.0_f64, |m, v| m.max(v.abs())) / (1.0 - factor);
    let target = 1e-13 * (1.0 + scale);
    let cap = if factor == 0.0 {
        2
    } else {
        ((target / (1.0 + scale)).ln() / factor.ln()).ceil() as usize + 64
    };
    let mut w = rhs_pi.to_vec();
    let mut step = f64::INFINITY;
    for _ in 0..cap {
        let next: Vec<f64> = (0..s)
            .map(|x| rhs_pi[x] + factor * dot(mdp.row(mdp.pair(x, pi.action(x))), &w))
            .collect();
        step = next
            .iter()
            .zip(&w)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        w = next;
        if step <= target {
            return Ok(w);
        }
    }
    Err(Error::NonConvergence {
        iterations: cap,
        residual: step,
    })
}

/// π(x) = argmax_a q(x, a), ties to the lowest action index.
pub fn greedy_policy(q: &QFunction) -> Policy {
    let actions = (0..q.num_states())
        .map(|x| {
            let row = q.row(x);
            let mut best = 0;
            for (a, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = a;
                }
            }
            best
        })
        .collect();
    Policy::new(actions, q.num_actions()).expect("argmax is always in range")
}

/// max |a − b| over all entries.
pub fn sup_norm_diff<T: ValueTable>(a: &T, b: &T) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::dimension(
            format!("{:?}", a.shape()),
            format!("{:?}", b.shape()),
        ));
    }
    Ok(a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max))
}

fn on_policy_slice(mdp: &Mdp, pi: &Policy, table: &[f64]) -> Vec<f64> {
    (0..mdp.num_states())
        .map(|x| table[mdp.pair(x, pi.action(x))])
        .collect()
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
