//! Replay structures and the control loop.

mod common;

use common::{rng, setup};
use copkit_core::learning::TransitionSample;
use copkit_core::mdp::{episodic_visitation, ratio_of, EpisodicMdp, Mdp, Policy};
use copkit_core::operators::FeatureMap;
use copkit_core::replay::{
    run_control, ControlConfig, PriorityMode, ReplayBuffer, SumTree, TrainerConfig,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn sum_tree_stays_consistent(seed in any::<u64>(), capacity in 1usize..40) {
        let mut tree = SumTree::new(capacity).unwrap();
        let mut shadow = vec![0.0; capacity];
        let mut r = rng(seed);
        for _ in 0..500 {
            let slot = r.random_range(0..capacity);
            let p = if r.random_bool(0.2) { 0.0 } else { r.random_range(0.0..10.0) };
            tree.set(slot, p).unwrap();
            shadow[slot] = p;
            prop_assert!(tree.is_consistent());
            let total: f64 = shadow.iter().sum();
            prop_assert!((tree.total() - total).abs() <= 1e-9 * total.max(1.0));
            let max = shadow.iter().copied().fold(0.0, f64::max);
            prop_assert_eq!(tree.max(), max);
            if total > 0.0 {
                let u: f64 = r.random();
                let found = tree.find(u * tree.total());
                prop_assert!(shadow[found] > 0.0);
            }
        }
    }

    #[test]
    fn buffer_priorities_are_clipped_and_evicted_in_order(seed in any::<u64>()) {
        let mut r = rng(seed);
        let capacity = 7;
        let mut buffer = ReplayBuffer::new(capacity).unwrap();
        for i in 0..20 {
            let t = TransitionSample::new(i % 3, 0, (i + 1) % 3, 0.0, 1.0, 1.0, false).unwrap();
            let slot = buffer.push(t);
            prop_assert_eq!(slot, i % capacity);
            buffer.set_priority(slot, r.random_range(-2.0..2.0)).unwrap();
            for s in 0..buffer.len() {
                prop_assert!(buffer.priority(s).unwrap() >= 0.0);
            }
            prop_assert!(buffer.tree().is_consistent());
        }
        prop_assert_eq!(buffer.len(), capacity);
    }
}

#[test]
fn sum_tree_ten_thousand_operations() {
    let mut tree = SumTree::new(1000).unwrap();
    let mut r = rng(0);
    for k in 0..10_000 {
        tree.set(r.random_range(0..1000), r.random_range(0.0..5.0)).unwrap();
        if k % 100 == 0 {
            assert!(tree.is_consistent());
        }
    }
    assert!(tree.is_consistent());
}

#[test]
fn ratio_priorities_reweight_to_target_distribution() {
    let s = setup(21, 4, 2);
    let c = ratio_of(&s.d_pi, &s.d_mu).unwrap();
    let gamma = s.mdp.discount();
    let mut r = rng(22);
    let phi = DMatrix::from_fn(4, 2, |_, _| r.random_range(-1.0..1.0));
    let v = &phi * DVector::from_fn(2, |_, _| r.random_range(-1.0..1.0));
    let mut buffer = ReplayBuffer::new(32).unwrap();
    for state in 0..4 {
        for a in 0..2 {
            for next in 0..4 {
                let t = TransitionSample::new(
                    state,
                    a,
                    next,
                    s.mdp.reward(state, a),
                    s.behavior.prob(state, a),
                    s.target.prob(state, a),
                    false,
                )
                .unwrap();
                let slot = buffer.push(t);
                let mass = s.d_mu.get(state) * s.behavior.prob(state, a) * s.mdp.prob(state, a, next);
                buffer.set_priority(slot, mass * c.get(state)).unwrap();
            }
        }
    }
    let mut got = DVector::zeros(2);
    for (slot, q) in buffer.sampling_probabilities().into_iter().enumerate() {
        let t = buffer.get(slot).unwrap();
        let delta = t.reward + gamma * v[t.next_state] - v[t.state];
        got += phi.row(t.state).transpose() * (q * t.importance_ratio() * delta);
    }
    let td = s.chain.expected_reward() + s.chain.transition() * &v * gamma - &v;
    let oracle = phi.transpose() * s.d_pi.probs().component_mul(&td);
    assert!((got - oracle).amax() < 1e-12);
}

/// Four states, start 0, zero rewards so the Q-values stay at zero and the
/// epsilon-greedy target policy stays fixed at "mostly action 0".
fn small_episodic() -> EpisodicMdp {
    let transition = vec![
        vec![vec![0.0, 0.9, 0.1, 0.0], vec![0.0, 0.1, 0.8, 0.0]],
        vec![vec![0.0, 0.0, 0.8, 0.1], vec![0.0, 0.1, 0.0, 0.7]],
        vec![vec![0.0, 0.1, 0.0, 0.8], vec![0.0, 0.5, 0.3, 0.0]],
        vec![vec![0.0, 0.3, 0.2, 0.0], vec![0.0, 0.0, 0.3, 0.4]],
    ];
    let reward = vec![vec![0.0; 2]; 4];
    EpisodicMdp::new(Mdp::with_termination(transition, reward, 0.99).unwrap(), 0).unwrap()
}

/// Solves `c(s0) = 1`, `c = g M c + (1 - g) e` elsewhere with
/// `M = D^{-1} P^T D`.
fn episodic_ratio_oracle(emdp: &EpisodicMdp, target: &Policy, d: &DVector<f64>, g: f64) -> DVector<f64> {
    let p = emdp.induce(target).unwrap().transition;
    let n = emdp.n_states();
    let mut a = DMatrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - g * p[(j, i)] * d[j] / d[i]
    });
    let mut b = DVector::from_element(n, 1.0 - g);
    a.row_mut(0).fill(0.0);
    a[(0, 0)] = 1.0;
    b[0] = 1.0;
    a.lu().solve(&b).unwrap()
}

fn ratio_only_config(steps: u64) -> ControlConfig {
    ControlConfig {
        trainer: TrainerConfig {
            gamma_hat: 0.5,
            value_lr: 1e-3,
            priority: PriorityMode::Uniform,
            capacity: 50_000,
            ..TrainerConfig::default()
        },
        steps,
        train_every: 1,
        learning_starts: 0,
        eval_every: steps,
    }
}

#[test]
fn ratio_head_tracks_exact_episodic_fixed_point() {
    let emdp = small_episodic();
    let behavior = Policy::uniform(4, 2);
    let config = ratio_only_config(50_000);
    let eps = config.trainer.epsilon;
    let target = Policy::new(vec![vec![1.0 - eps / 2.0, eps / 2.0]; 4]).unwrap();
    let run = run_control(
        &emdp,
        &behavior,
        FeatureMap::identity(4),
        FeatureMap::identity(4),
        &config,
        3,
    )
    .unwrap();
    assert_eq!(run.agent.q_matrix(), DMatrix::zeros(4, 2));
    let d = episodic_visitation(&emdp, &behavior).unwrap();
    let oracle = episodic_ratio_oracle(&emdp, &target, &d, config.trainer.gamma_hat);
    let learned = run.agent.ratio_values();
    assert!((learned[0] - 1.0).abs() < 0.05, "c(s0) = {}", learned[0]);
    assert!(
        (&learned - &oracle).amax() < 0.1,
        "learned {learned:?} vs oracle {oracle:?}"
    );
}

#[test]
fn control_runs_are_deterministic() {
    let emdp = small_episodic();
    let behavior = Policy::uniform(4, 2);
    let mut config = ratio_only_config(3_000);
    config.trainer.priority = PriorityMode::Ratio;
    config.eval_every = 500;
    let run = |seed| {
        run_control(
            &emdp,
            &behavior,
            FeatureMap::identity(4),
            FeatureMap::identity(4),
            &config,
            seed,
        )
        .unwrap()
    };
    let (a, b, c) = (run(7), run(7), run(8));
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.checkpoint, b.checkpoint);
    assert_eq!(a.rows.len(), 6);
    assert_ne!(a.checkpoint, c.checkpoint);
    let json = serde_json::to_string(&a.checkpoint).unwrap();
    let mut back: copkit_core::replay::Checkpoint = serde_json::from_str(&json).unwrap();
    assert_eq!(back.ratio_weights, a.checkpoint.ratio_weights);
    assert_eq!(back.target_ratio_weights, a.checkpoint.target_ratio_weights);
    assert_eq!(back.value_weights, a.checkpoint.value_weights);
    assert_eq!(back.buffer, a.checkpoint.buffer);
    // The buffered block is not serialized; the stream position is.
    let mut original = a.checkpoint.rng.clone();
    let from_json: Vec<u64> = (0..8).map(|_| back.rng.random()).collect();
    let expected: Vec<u64> = (0..8).map(|_| original.random()).collect();
    assert_eq!(from_json, expected);
}
