#![allow(dead_code)]

use copkit_core::mdp::{induce_chain, stationary_distribution, InducedChain, Mdp, Policy};
use copkit_core::StateDistribution;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Row of positive probabilities bounded away from zero.
pub fn random_row<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

/// Fully connected MDP with `n` states and `a` actions.
pub fn random_mdp<R: Rng>(n: usize, a: usize, gamma: f64, rng: &mut R) -> Mdp {
    let transition = (0..n)
        .map(|_| (0..a).map(|_| random_row(n, rng)).collect())
        .collect();
    let reward = (0..n)
        .map(|_| (0..a).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    Mdp::new(transition, reward, gamma).unwrap()
}

pub fn random_policy<R: Rng>(n: usize, a: usize, rng: &mut R) -> Policy {
    Policy::new((0..n).map(|_| random_row(a, rng)).collect()).unwrap()
}

/// Fully connected chain with random rewards.
pub fn random_chain<R: Rng>(n: usize, rng: &mut R) -> InducedChain {
    let rows: Vec<f64> = (0..n).flat_map(|_| random_row(n, rng)).collect();
    let p = DMatrix::from_row_slice(n, n, &rows);
    let r = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    InducedChain::new(p, r).unwrap()
}

pub fn random_distribution<R: Rng>(n: usize, rng: &mut R) -> StateDistribution {
    StateDistribution::from_slice(&random_row(n, rng)).unwrap()
}

/// Target chain, `d_mu` (behavior stationary) and `d_pi` of a random
/// MDP with random behavior and target policies.
pub struct Setup {
    pub mdp: Mdp,
    pub behavior: Policy,
    pub target: Policy,
    pub chain: InducedChain,
    pub d_mu: StateDistribution,
    pub d_pi: StateDistribution,
}

pub fn setup(seed: u64, n: usize, a: usize) -> Setup {
    let mut rng = rng(seed);
    let mdp = random_mdp(n, a, 0.9, &mut rng);
    let behavior = random_policy(n, a, &mut rng);
    let target = random_policy(n, a, &mut rng);
    let chain = induce_chain(&mdp, &target).unwrap();
    let d_mu = stationary_distribution(&induce_chain(&mdp, &behavior).unwrap()).unwrap();
    let d_pi = stationary_distribution(&chain).unwrap();
    Setup {
        mdp,
        behavior,
        target,
        chain,
        d_mu,
        d_pi,
    }
}

/// Stationary distribution by brute-force power iteration, independent of
/// the library's solver.
pub fn power_stationary(p: &DMatrix<f64>) -> DVector<f64> {
    let n = p.nrows();
    let mut d = DVector::from_element(n, 1.0 / n as f64);
    for _ in 0..100_000 {
        let next = p.tr_mul(&d);
        if (&next - &d).amax() < 1e-15 {
            return next;
        }
        d = next;
    }
    d
}
