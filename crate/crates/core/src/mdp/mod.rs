//! Finite discounted MDPs with a uniform action count.
//!
//! State-action pairs are flattened row-major: `z = x * num_actions + a`.
//! Transition rows are stored densely, one row of length `num_states` per
//! pair. The same type holds both ground-truth kernels and empirical ones.

mod io;
mod solve;

pub use io::{load_mdp, parse_mdp, MdpFile};
pub use solve::{
    apply_bellman_optimality, bellman_residual, exact_optimal_q, greedy_policy, policy_expectation,
    policy_q, solve_policy_system, sup_norm_diff, DIRECT_SOLVE_MAX_STATES,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Allowed deviation of a transition row sum from one.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    num_states: usize,
    num_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    discount: f64,
}

impl Mdp {
    /// Builds an MDP from a flat `N x num_states` transition table and a
    /// flat reward vector of length `N`, validating every invariant.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        discount: f64,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidMdp(format!(
                "num_states and num_actions must be positive (got {num_states}, {num_actions})"
            )));
        }
        let pairs = num_states * num_actions;
        if reward.len() != pairs {
            return Err(Error::dimension(
                format!("{pairs} rewards"),
                format!("{} rewards", reward.len()),
            ));
        }
        if transition.len() != pairs * num_states {
            return Err(Error::dimension(
                format!("{} transition entries", pairs * num_states),
                format!("{} transition entries", transition.len()),
            ));
        }
        let mdp = Mdp {
            num_states,
            num_actions,
            transition,
            reward,
            discount,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Same as [`Mdp::new`] but with one `Vec` per transition row.
    pub fn from_rows(
        num_states: usize,
        num_actions: usize,
        rows: Vec<Vec<f64>>,
        reward: Vec<f64>,
        discount: f64,
    ) -> Result<Self> {
        for (z, row) in rows.iter().enumerate() {
            if row.len() != num_states {
                return Err(Error::InvalidMdp(format!(
                    "transition row {z} has length {}, expected {num_states}",
                    row.len()
                )));
            }
        }
        if rows.len() != num_states * num_actions {
            return Err(Error::dimension(
                format!("{} transition rows", num_states * num_actions),
                format!("{} transition rows", rows.len()),
            ));
        }
        Self::new(
            num_states,
            num_actions,
            rows.into_iter().flatten().collect(),
            reward,
            discount,
        )
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::InvalidMdp(format!(
                "discount must lie in [0, 1), got {}",
                self.discount
            )));
        }
        if let Some(z) = self.row_violation() {
            let sum: f64 = self.row(z).iter().sum();
            return Err(Error::InvalidMdp(format!(
                "transition row {z} (state {}, action {}) is not a distribution (sum {sum})",
                z / self.num_actions,
                z % self.num_actions
            )));
        }
        if let Some(z) = self.reward_violation() {
            return Err(Error::InvalidMdp(format!(
                "reward {z} (state {}, action {}) = {} is outside [0, 1]",
                z / self.num_actions,
                z % self.num_actions,
                self.reward[z]
            )));
        }
        Ok(())
    }

    /// Index of the first transition row that is not a distribution.
    pub(crate) fn row_violation(&self) -> Option<usize> {
        (0..self.num_pairs()).find(|&z| {
            let row = self.row(z);
            let bad_entry = row
                .iter()
                .any(|&p| !p.is_finite() || !(0.0..=1.0).contains(&p));
            let sum: f64 = row.iter().sum();
            bad_entry || (sum - 1.0).abs() > ROW_SUM_TOLERANCE
        })
    }

    pub(crate) fn reward_violation(&self) -> Option<usize> {
        self.reward
            .iter()
            .position(|&r| !r.is_finite() || !(0.0..=1.0).contains(&r))
    }

    /// Random MDP with uniform rewards and Dirichlet(1) transition rows over
    /// all states.
    pub fn random(num_states: usize, num_actions: usize, discount: f64, seed: u64) -> Result<Self> {
        Self::random_sparse(num_states, num_actions, discount, num_states, seed)
    }

    /// Random MDP whose rows are supported on `branching` distinct successor
    /// states drawn uniformly, with Dirichlet(1) weights on the support.
    pub fn random_sparse(
        num_states: usize,
        num_actions: usize,
        discount: f64,
        branching: usize,
        seed: u64,
    ) -> Result<Self> {
        if branching == 0 || branching > num_states {
            return Err(Error::invalid(format!(
                "branching must be in 1..={num_states}, got {branching}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs = num_states * num_actions;
        let reward: Vec<f64> = (0..pairs).map(|_| rng.random::<f64>()).collect();
        let mut transition = vec![0.0; pairs * num_states];
        let mut states: Vec<usize> = (0..num_states).collect();
        for z in 0..pairs {
            // partial Fisher-Yates picks the support
            for i in 0..branching {
                let j = rng.random_range(i..num_states);
                states.swap(i, j);
            }
            let weights: Vec<f64> = (0..branching)
                .map(|_| -(1.0 - rng.random::<f64>()).ln())
                .collect();
            let total: f64 = weights.iter().sum();
            let row = &mut transition[z * num_states..(z + 1) * num_states];
            for (&y, w) in states[..branching].iter().zip(&weights) {
                row[y] = w / total;
            }
        }
        Self::new(num_states, num_actions, transition, reward, discount)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// N, the number of state-action pairs.
    pub fn num_pairs(&self) -> usize {
        self.num_states * self.num_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// Effective horizon 1/(1-γ), the range bound of every value function.
    pub fn horizon(&self) -> f64 {
        1.0 / (1.0 - self.discount)
    }

    #[inline]
    pub fn pair(&self, state: usize, action: usize) -> usize {
        state * self.num_actions + action
    }

    pub fn reward(&self) -> &[f64] {
        &self.reward
    }

    /// Next-state distribution of pair `z`.
    #[inline]
    pub fn row(&self, z: usize) -> &[f64] {
        &self.transition[z * self.num_states..(z + 1) * self.num_states]
    }

    pub fn transition(&self) -> &[f64] {
        &self.transition
    }

    pub fn is_deterministic(&self) -> bool {
        (0..self.num_pairs()).all(|z| self.row(z).contains(&1.0))
    }

    /// A copy with the transition kernel replaced, keeping reward and discount.
    pub fn with_transition(&self, transition: Vec<f64>) -> Result<Self> {
        Self::new(
            self.num_states,
            self.num_actions,
            transition,
            self.reward.clone(),
            self.discount,
        )
    }

    pub fn with_discount(&self, discount: f64) -> Result<Self> {
        Self::new(
            self.num_states,
            self.num_actions,
            self.transition.clone(),
            self.reward.clone(),
            discount,
        )
    }

    pub(crate) fn check_q(&self, q: &QFunction) -> Result<()> {
        if q.num_states != self.num_states || q.num_actions != self.num_actions {
            return Err(Error::dimension(
                format!("Q table {}x{}", self.num_states, self.num_actions),
                format!("{}x{}", q.num_states, q.num_actions),
            ));
        }
        Ok(())
    }

    pub(crate) fn check_policy(&self, pi: &Policy) -> Result<()> {
        if pi.actions.len() != self.num_states {
            return Err(Error::dimension(
                format!("policy over {} states", self.num_states),
                format!("{} states", pi.actions.len()),
            ));
        }
        if let Some(x) = pi.actions.iter().position(|&a| a >= self.num_actions) {
            return Err(Error::invalid(format!(
                "policy action {} at state {x} exceeds {} actions",
                pi.actions[x], self.num_actions
            )));
        }
        Ok(())
    }

    pub(crate) fn check_pair_table(&self, table: &[f64], what: &str) -> Result<()> {
        if table.len() != self.num_pairs() {
            return Err(Error::dimension(
                format!("{what} of length {}", self.num_pairs()),
                table.len(),
            ));
        }
        Ok(())
    }
}

/// Dense action-value table.
#[derive(Debug, Clone, PartialEq)]
pub struct QFunction {
    num_states: usize,
    num_actions: usize,
    values: Vec<f64>,
}

impl QFunction {
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        Self::constant(num_states, num_actions, 0.0)
    }

    pub fn constant(num_states: usize, num_actions: usize, value: f64) -> Self {
        QFunction {
            num_states,
            num_actions,
            values: vec![value; num_states * num_actions],
        }
    }

    pub fn zeros_like(mdp: &Mdp) -> Self {
        Self::zeros(mdp.num_states(), mdp.num_actions())
    }

    pub fn from_vec(num_states: usize, num_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != num_states * num_actions {
            return Err(Error::dimension(num_states * num_actions, values.len()));
        }
        Ok(QFunction {
            num_states,
            num_actions,
            values,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.values[state * self.num_actions + action]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.values[state * self.num_actions..(state + 1) * self.num_actions]
    }

    /// V(x) = max_a Q(x, a).
    pub fn state_values(&self) -> VFunction {
        VFunction {
            values: (0..self.num_states)
                .map(|x| self.row(x).iter().copied().fold(f64::NEG_INFINITY, f64::max))
                .collect(),
        }
    }

    /// Q(x, π(x)) for every state.
    pub fn policy_values(&self, pi: &Policy) -> VFunction {
        VFunction {
            values: pi
                .actions
                .iter()
                .enumerate()
                .map(|(x, &a)| self.get(x, a))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VFunction {
    values: Vec<f64>,
}

impl VFunction {
    pub fn new(values: Vec<f64>) -> Self {
        VFunction { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Deterministic stationary policy.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Policy {
    actions: Vec<usize>,
}

impl Policy {
    pub fn new(actions: Vec<usize>, num_actions: usize) -> Result<Self> {
        if let Some(x) = actions.iter().position(|&a| a >= num_actions) {
            return Err(Error::invalid(format!(
                "action {} at state {x} exceeds {num_actions} actions",
                actions[x]
            )));
        }
        Ok(Policy { actions })
    }

    pub fn constant(num_states: usize, action: usize) -> Self {
        Policy {
            actions: vec![action; num_states],
        }
    }

    /// Every deterministic policy, in lexicographic order of action tuples.
    pub fn enumerate(num_states: usize, num_actions: usize) -> impl Iterator<Item = Policy> {
        let total = (num_actions as u64).pow(num_states as u32);
        (0..total).map(move |mut code| {
            let mut actions = vec![0; num_states];
            for slot in actions.iter_mut().rev() {
                *slot = (code % num_actions as u64) as usize;
                code /= num_actions as u64;
            }
            Policy { actions }
        })
    }

    /// Uniformly random policy drawn from `rng`.
    pub fn random<R: Rng + ?Sized>(num_states: usize, num_actions: usize, rng: &mut R) -> Self {
        Policy {
            actions: (0..num_states)
                .map(|_| rng.random_range(0..num_actions))
                .collect(),
        }
    }

    pub fn action(&self, state: usize) -> usize {
        self.actions[state]
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }
}

/// Anything that is a flat table of reals with a shape.
pub trait ValueTable {
    fn shape(&self) -> (usize, usize);
    fn as_slice(&self) -> &[f64];
}

impl ValueTable for QFunction {
    fn shape(&self) -> (usize, usize) {
        (self.num_states, self.num_actions)
    }

    fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

impl ValueTable for VFunction {
    fn shape(&self) -> (usize, usize) {
        (self.values.len(), 1)
    }

    fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_rows_and_rewards() {
        let err = Mdp::from_rows(2, 1, vec![vec![0.5, 0.4], vec![1.0, 0.0]], vec![0.0, 0.0], 0.5)
            .unwrap_err();
        assert!(err.to_string().contains("row 0"), "{err}");

        let err = Mdp::from_rows(2, 1, vec![vec![1.0, 0.0], vec![1.0, 0.0]], vec![0.0, 1.5], 0.5)
            .unwrap_err();
        assert!(err.to_string().contains("reward 1"), "{err}");

        let err = Mdp::from_rows(1, 1, vec![vec![1.0]], vec![0.0], 1.0).unwrap_err();
        assert!(err.to_string().contains("discount"), "{err}");

        let err = Mdp::from_rows(2, 1, vec![vec![1.2, -0.2], vec![1.0, 0.0]], vec![0.0, 0.0], 0.5)
            .unwrap_err();
        assert!(matches!(err, Error::InvalidMdp(_)));
    }

    #[test]
    fn random_rows_are_distributions() {
        let mdp = Mdp::random_sparse(7, 3, 0.9, 2, 11).unwrap();
        for z in 0..mdp.num_pairs() {
            let support = mdp.row(z).iter().filter(|&&p| p > 0.0).count();
            assert!(support <= 2);
        }
        assert_eq!(mdp.num_pairs(), 21);
        assert_eq!(Mdp::random(7, 3, 0.9, 11).unwrap(), Mdp::random(7, 3, 0.9, 11).unwrap());
    }

    #[test]
    fn enumerates_all_policies() {
        let all: Vec<_> = Policy::enumerate(3, 2).collect();
        assert_eq!(all.len(), 8);
        assert_eq!(all[0].actions(), &[0, 0, 0]);
        assert_eq!(all[5].actions(), &[1, 0, 1]);
    }

    #[test]
    fn policy_rejects_out_of_range_action() {
        assert!(Policy::new(vec![0, 2], 2).is_err());
    }
}
