use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use super::TransitionSample;
use crate::error::{Error, Result};
use crate::mdp::{induce_chain, stationary_distribution, Mdp, Policy, StateDistribution};

/// Draws `s ~ d_mu`, `a ~ mu(.|s)`, `s' ~ P(.|s,a)` by inverse CDF over the
/// exact stationary distribution of the behavior chain.
#[derive(Debug, Clone)]
pub struct TransitionSampler {
    mdp: Mdp,
    behavior: Policy,
    target: Policy,
    d_mu: StateDistribution,
    states: WeightedIndex<f64>,
    actions: Vec<WeightedIndex<f64>>,
    next_states: Vec<WeightedIndex<f64>>,
}

fn weighted(weights: impl IntoIterator<Item = f64>, what: &'static str) -> Result<WeightedIndex<f64>> {
    WeightedIndex::new(weights).map_err(|e| Error::InvalidProbability {
        what,
        detail: e.to_string(),
    })
}

impl TransitionSampler {
    pub fn new(mdp: Mdp, behavior: Policy, target: Policy) -> Result<Self> {
        mdp.check_policy(&behavior)?;
        mdp.check_policy(&target)?;
        if mdp.is_terminating() {
            return Err(Error::InvalidValue {
                what: "mdp",
                detail: "stationary sampling needs a non-terminating mdp".into(),
            });
        }
        let d_mu = stationary_distribution(&induce_chain(&mdp, &behavior)?)?;
        let states = weighted(d_mu.probs().iter().copied(), "stationary distribution")?;
        let actions = (0..mdp.n_states())
            .map(|s| weighted(behavior.matrix().row(s).iter().copied(), "behavior policy"))
            .collect::<Result<Vec<_>>>()?;
        let mut next_states = Vec::with_capacity(mdp.n_states() * mdp.n_actions());
        for s in 0..mdp.n_states() {
            for a in 0..mdp.n_actions() {
                next_states.push(weighted(
                    mdp.next_state_probs(s, a).iter().copied(),
                    "transition",
                )?);
            }
        }
        Ok(Self {
            mdp,
            behavior,
            target,
            d_mu,
            states,
            actions,
            next_states,
        })
    }

    pub fn mdp(&self) -> &Mdp {
        &self.mdp
    }

    pub fn behavior(&self) -> &Policy {
        &self.behavior
    }

    pub fn target(&self) -> &Policy {
        &self.target
    }

    pub fn d_mu(&self) -> &StateDistribution {
        &self.d_mu
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> TransitionSample {
        let s = self.states.sample(rng);
        self.sample_from(s, rng)
    }

    /// Draws `a ~ mu(.|s)` and `s' ~ P(.|s,a)` for a given `s`.
    pub fn sample_from<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> TransitionSample {
        let a = self.actions[s].sample(rng);
        let next = self.next_states[s * self.mdp.n_actions() + a].sample(rng);
        TransitionSample {
            state: s,
            action: a,
            next_state: next,
            reward: self.mdp.reward(s, a),
            behavior_prob: self.behavior.prob(s, a),
            target_prob: self.target.prob(s, a),
            is_initial: false,
            terminal: false,
        }
    }
}

pub fn sample_transition<R: Rng + ?Sized>(
    sampler: &TransitionSampler,
    rng: &mut R,
) -> TransitionSample {
    sampler.sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_state_self_loop() {
        let mdp = Mdp::new(vec![vec![vec![1.0]]], vec![vec![0.25]], 0.9).unwrap();
        let sampler =
            TransitionSampler::new(mdp, Policy::uniform(1, 1), Policy::uniform(1, 1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let t = sampler.sample(&mut rng);
            assert_eq!((t.state, t.action, t.next_state), (0, 0, 0));
            assert_eq!(t.reward, 0.25);
            assert_eq!((t.behavior_prob, t.target_prob), (1.0, 1.0));
        }
    }

    #[test]
    fn zero_probability_actions_are_never_drawn() {
        let mdp = Mdp::new(
            vec![
                vec![vec![0.5, 0.5], vec![1.0, 0.0]],
                vec![vec![0.5, 0.5], vec![0.0, 1.0]],
            ],
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            0.9,
        )
        .unwrap();
        let behavior = Policy::new(vec![vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let sampler = TransitionSampler::new(mdp, behavior, Policy::uniform(2, 2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let t = sampler.sample(&mut rng);
            assert_eq!(t.action, 0);
            assert_eq!(t.importance_ratio(), 0.5);
        }
    }
}
