//! Generative-model sampling and empirical transition models.
//!
//! Randomness is organised as a tree of 64-bit seeds. [`derive_seed`] maps
//! a master seed and a path of integers to a child seed with SplitMix64
//! finalisation. Sampling for state-action pair `z` under seed `s` draws
//! from a ChaCha8 generator keyed by `s` (via `seed_from_u64`) with its
//! stream id set to `z`. Pair streams are therefore independent of each
//! other and of the order in which pairs are processed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mdp::Mdp;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for `path` under `master`.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |acc, &step| {
        splitmix64(acc ^ splitmix64(step.wrapping_add(GOLDEN_GAMMA)))
    })
}

/// The random stream owned by pair `z` under `seed`.
pub fn pair_stream(seed: u64, z: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(z as u64);
    rng
}

/// One generative-model call: y ~ P(·|z) by inverse CDF over the stored
/// row order, consuming exactly one uniform draw.
pub fn sample_next_state<R: Rng + ?Sized>(mdp: &Mdp, z: usize, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let row = mdp.row(z);
    let mut acc = 0.0;
    for (y, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return y;
        }
    }
    last_support(row)
}

// row sums can fall a few ulps short of one
fn last_support(row: &[f64]) -> usize {
    row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
}

/// Precomputed cumulative rows for repeated sampling from one MDP.
/// Produces exactly the same draws as [`sample_next_state`].
#[derive(Debug, Clone)]
pub struct TransitionSampler {
    num_states: usize,
    cdf: Vec<f64>,
    fallback: Vec<usize>,
}

impl TransitionSampler {
    pub fn new(mdp: &Mdp) -> Self {
        let s = mdp.num_states();
        let mut cdf = Vec::with_capacity(mdp.transition().len());
        let mut fallback = Vec::with_capacity(mdp.num_pairs());
        for z in 0..mdp.num_pairs() {
            let row = mdp.row(z);
            let mut acc = 0.0;
            for &p in row {
                acc += p;
                cdf.push(acc);
            }
            fallback.push(last_support(row));
        }
        debug_assert_eq!(cdf.len(), mdp.num_pairs() * s);
        TransitionSampler {
            num_states: s,
            cdf,
            fallback,
        }
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, z: usize, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let row = &self.cdf[z * self.num_states..(z + 1) * self.num_states];
        row.iter().position(|&c| u < c).unwrap_or(self.fallback[z])
    }
}

/// Calls made to the generative model, per pair and in total.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleBudgetLedger {
    per_pair_counts: Vec<u64>,
    total: u64,
}

impl SampleBudgetLedger {
    pub fn new(num_pairs: usize) -> Self {
        SampleBudgetLedger {
            per_pair_counts: vec![0; num_pairs],
            total: 0,
        }
    }

    pub fn record(&mut self, z: usize, calls: u64) {
        self.per_pair_counts[z] += calls;
        self.total += calls;
    }

    pub fn per_pair_counts(&self) -> &[u64] {
        &self.per_pair_counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }
}

/// Draws `n` next states for every pair and returns the empirical model
/// P̂(y|z) = m(y, z)/n, which shares reward and discount with `mdp`.
pub fn build_empirical_model(mdp: &Mdp, n: u64, seed: u64) -> Result<(Mdp, SampleBudgetLedger)> {
    if n == 0 {
        return Err(Error::invalid("empirical model needs n >= 1 samples per pair"));
    }
    let sampler = TransitionSampler::new(mdp);
    let s = mdp.num_states();
    let counts: Vec<Vec<u64>> = (0..mdp.num_pairs())
        .into_par_iter()
        .map(|z| {
            let mut rng = pair_stream(seed, z);
            let mut m = vec![0u64; s];
            for _ in 0..n {
                m[sampler.sample(z, &mut rng)] += 1;
            }
            m
        })
        .collect();

    let mut ledger = SampleBudgetLedger::new(mdp.num_pairs());
    let denom = n as f64;
    let mut transition = Vec::with_capacity(mdp.transition().len());
    for (z, m) in counts.iter().enumerate() {
        ledger.record(z, m.iter().sum());
        transition.extend(m.iter().map(|&c| c as f64 / denom));
    }
    let empirical = mdp.with_transition(transition)?;
    Ok((empirical, ledger))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform4() -> Mdp {
        Mdp::from_rows(4, 1, vec![vec![0.25; 4]; 4], vec![0.0; 4], 0.5).unwrap()
    }

    #[test]
    fn deterministic_row_always_hits_its_state() {
        let mdp = Mdp::from_rows(3, 1, vec![vec![0.0, 0.0, 1.0]; 3], vec![0.0; 3], 0.5).unwrap();
        let mut rng = pair_stream(1, 0);
        assert!((0..1000).all(|_| sample_next_state(&mdp, 1, &mut rng) == 2));
    }

    #[test]
    fn uniform_row_passes_chi_square() {
        let mdp = uniform4();
        let mut rng = pair_stream(2024, 0);
        let draws = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..draws {
            counts[sample_next_state(&mdp, 0, &mut rng)] += 1;
        }
        let expected = draws as f64 / 4.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 3 degrees of freedom, upper 1e-3 quantile
        assert!(chi2 < 16.266, "chi2 = {chi2}");
        for &c in &counts {
            assert!((c as f64 / draws as f64 - 0.25).abs() <= 0.01);
        }
    }

    #[test]
    fn fixed_seed_gives_identical_sequences() {
        let mdp = Mdp::random(6, 2, 0.9, 3).unwrap();
        let draw = || {
            let mut rng = pair_stream(77, 5);
            (0..200).map(|_| sample_next_state(&mdp, 5, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(), draw());
    }

    #[test]
    fn sampler_matches_row_scan() {
        let mdp = Mdp::random_sparse(9, 2, 0.9, 4, 31).unwrap();
        let sampler = TransitionSampler::new(&mdp);
        for z in 0..mdp.num_pairs() {
            let mut a = pair_stream(5, z);
            let mut b = pair_stream(5, z);
            for _ in 0..500 {
                assert_eq!(sampler.sample(z, &mut a), sample_next_state(&mdp, z, &mut b));
            }
        }
    }

    #[test]
    fn empirical_model_of_deterministic_mdp_is_exact() {
        let mdp = Mdp::from_rows(
            3,
            2,
            vec![
                vec![0.0, 1.0, 0.0],
                vec![1.0, 0.0, 0.0],
                vec![0.0, 0.0, 1.0],
                vec![0.0, 1.0, 0.0],
                vec![1.0, 0.0, 0.0],
                vec![0.0, 0.0, 1.0],
            ],
            vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
            0.9,
        )
        .unwrap();
        let (emp, ledger) = build_empirical_model(&mdp, 13, 4).unwrap();
        assert_eq!(emp, mdp);
        assert_eq!(ledger.total(), 13 * 6);
    }

    #[test]
    fn zero_samples_rejected() {
        assert!(matches!(
            build_empirical_model(&uniform4(), 0, 1),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn empirical_model_is_reproducible_and_lattice_valued() {
        let mdp = Mdp::random(5, 2, 0.8, 9).unwrap();
        let (a, la) = build_empirical_model(&mdp, 37, 123).unwrap();
        let (b, lb) = build_empirical_model(&mdp, 37, 123).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
        assert!(la.per_pair_counts().iter().all(|&c| c == 37));
        for &p in a.transition() {
            let scaled = p * 37.0;
            assert!((scaled - scaled.round()).abs() < 1e-9);
        }
        assert_eq!(a.reward(), mdp.reward());
        let (c, _) = build_empirical_model(&mdp, 37, 124).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn large_n_converges_in_l1() {
        let mdp = Mdp::from_rows(3, 1, vec![vec![0.2, 0.5, 0.3]; 3], vec![0.0; 3], 0.5).unwrap();
        for seed in 0..3 {
            let (emp, _) = build_empirical_model(&mdp, 1_000_000, seed).unwrap();
            let l1: f64 = emp.row(0).iter().zip(mdp.row(0)).map(|(a, b)| (a - b).abs()).sum();
            assert!(l1 <= 0.01, "seed {seed}: {l1}");
        }
    }

    #[test]
    fn empirical_model_is_unbiased() {
        let mdp = Mdp::random(3, 1, 0.5, 8).unwrap();
        let (k, n) = (200u64, 50u64);
        let mut mean = vec![0.0; mdp.transition().len()];
        for seed in 0..k {
            let (emp, _) = build_empirical_model(&mdp, n, derive_seed(99, &[seed])).unwrap();
            for (m, p) in mean.iter_mut().zip(emp.transition()) {
                *m += p / k as f64;
            }
        }
        let worst = mean
            .iter()
            .zip(mdp.transition())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 3.0 * (0.25 / (k * n) as f64).sqrt(), "{worst}");
    }

    #[test]
    fn derived_seeds_differ() {
        let a = derive_seed(1, &[0]);
        assert_ne!(a, derive_seed(1, &[1]));
        assert_ne!(a, derive_seed(2, &[0]));
        assert_ne!(derive_seed(1, &[0, 1]), derive_seed(1, &[1, 0]));
        assert_eq!(a, derive_seed(1, &[0]));
    }
}
