//! Learning rules against enumeration oracles.

mod common;

use common::{random_row, rng, setup};
use copkit_core::learning::{
    discounted_cop_td_step, normalization_grad_estimate, project_weighted_simplex,
    run_tabular_cop_td, LinearRatioModel, StepSchedule, TabularCopTdConfig, TransitionSample,
    TransitionSampler,
};
use copkit_core::mdp::{ratio_of, RatioVector, StateDistribution};
use copkit_core::operators::{discounted_cop_apply, FeatureMap};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

/// Every transition `(s, a, s')` with its probability under
/// `d_mu(s) mu(a|s) P(s'|s, a)`.
fn enumerate(s: &common::Setup) -> Vec<(f64, TransitionSample)> {
    let mut out = Vec::new();
    for state in 0..s.mdp.n_states() {
        for a in 0..s.mdp.n_actions() {
            for next in 0..s.mdp.n_states() {
                let w = s.d_mu.get(state) * s.behavior.prob(state, a) * s.mdp.prob(state, a, next);
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
                out.push((w, t));
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn expected_cop_td_update_is_weighted_operator_residual(
        seed in any::<u64>(),
        n in 2usize..6,
        g in 0.0f64..1.0,
    ) {
        let s = setup(seed, n, 2);
        let mut r = rng(seed ^ 7);
        let c = RatioVector::new(DVector::from_fn(n, |_, _| r.random_range(0.0..3.0))).unwrap();
        let mut expected = DVector::zeros(n);
        for (w, t) in enumerate(&s) {
            let mut next = c.clone();
            discounted_cop_td_step(&mut next, &t, 1.0, g);
            expected += (next.values() - c.values()) * w;
        }
        let y = discounted_cop_apply(&s.chain, &s.d_mu, &c, g).unwrap();
        let oracle = s.d_mu.probs().component_mul(&(y.values() - c.values()));
        prop_assert!((expected - oracle).amax() < 1e-12);
    }

    #[test]
    fn normalization_gradient_is_unbiased_by_enumeration(seed in any::<u64>(), m in 2usize..4) {
        let n = 3;
        let mut r = rng(seed);
        let d = StateDistribution::from_slice(&random_row(n, &mut r)).unwrap();
        let c = RatioVector::new(DVector::from_fn(n, |_, _| r.random_range(0.0..3.0))).unwrap();
        let mut mean = DVector::zeros(n);
        let total = n.pow(m as u32);
        for code in 0..total {
            let states: Vec<usize> = (0..m).map(|i| code / n.pow(i as u32) % n).collect();
            let p: f64 = states.iter().map(|&s| d.get(s)).product();
            mean += normalization_grad_estimate(&c, &states).unwrap() * p;
        }
        let analytic = d.probs() * (d.probs().dot(c.values()) - 1.0);
        prop_assert!((mean - analytic).amax() < 1e-12);
    }

    #[test]
    fn simplex_projection_matches_active_set_enumeration(seed in any::<u64>(), n in 2usize..7) {
        let mut r = rng(seed);
        let d = StateDistribution::from_slice(&random_row(n, &mut r)).unwrap();
        let w0 = DVector::from_fn(n, |_, _| r.random_range(-3.0..3.0));
        let model = LinearRatioModel::new(FeatureMap::identity(n), w0.clone()).unwrap();
        let got = project_weighted_simplex(&model, &d).unwrap();
        let oracle = brute_force_projection(&w0, d.probs());
        prop_assert!((got - oracle).amax() < 1e-8);
    }
}

/// Minimizes `||u - w||` over `{u >= 0, d^T u = 1}` by trying every set of
/// coordinates fixed at zero and keeping the closest feasible candidate.
fn brute_force_projection(w: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
    let n = w.len();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << n) {
        let free: Vec<usize> = (0..n).filter(|i| mask & (1 << i) == 0).collect();
        if free.is_empty() {
            continue;
        }
        let dd: f64 = free.iter().map(|&i| d[i] * d[i]).sum();
        let dw: f64 = free.iter().map(|&i| d[i] * w[i]).sum();
        let lambda = (dw - 1.0) / dd;
        let mut u = DVector::zeros(n);
        for &i in &free {
            u[i] = w[i] - lambda * d[i];
        }
        if u.iter().any(|x| *x < -1e-12) {
            continue;
        }
        let dist = (&u - w).norm();
        if best.as_ref().is_none_or(|(b, _)| dist < *b) {
            best = Some((dist, u));
        }
    }
    best.expect("the simplex is nonempty").1
}

#[test]
fn simplex_projection_beats_random_feasible_points() {
    let mut r = rng(11);
    for _ in 0..1_000 {
        let n = r.random_range(2..7);
        let k = r.random_range(1..=n);
        // Positive features keep every nonnegative weight vector feasible.
        let phi = DMatrix::from_fn(n, k, |_, _| r.random_range(0.1..1.0));
        let d = StateDistribution::from_slice(&random_row(n, &mut r)).unwrap();
        let w0 = DVector::from_fn(k, |_, _| r.random_range(-3.0..3.0));
        let features = FeatureMap::new(phi.clone());
        let Ok(features) = features else { continue };
        let model = LinearRatioModel::new(features, w0.clone()).unwrap();
        let got = project_weighted_simplex(&model, &d).unwrap();
        let a = phi.tr_mul(d.probs());
        assert!((a.dot(&got) - 1.0).abs() < 1e-8);
        assert!((&phi * &got).min() > -1e-8);
        let best = (&got - &w0).norm();
        for _ in 0..5 {
            let q = DVector::from_fn(k, |_, _| r.random_range(0.0..1.0));
            let q = &q / a.dot(&q);
            assert!(best <= (&q - &w0).norm() + 1e-9);
        }
    }
}

#[test]
fn sampler_frequencies_within_three_sigma() {
    let s = setup(5, 4, 2);
    let sampler = TransitionSampler::new(s.mdp.clone(), s.behavior.clone(), s.target.clone()).unwrap();
    assert!((sampler.d_mu().probs() - s.d_mu.probs()).amax() < 1e-12);
    let draws = 200_000;
    let mut counts = vec![0usize; 4 * 2 * 4];
    let mut r = rng(6);
    for _ in 0..draws {
        let t = sampler.sample(&mut r);
        counts[(t.state * 2 + t.action) * 4 + t.next_state] += 1;
        assert_eq!(t.behavior_prob, s.behavior.prob(t.state, t.action));
        assert_eq!(t.target_prob, s.target.prob(t.state, t.action));
    }
    for (idx, (w, _)) in enumerate(&s).iter().enumerate() {
        let expected = draws as f64 * w;
        let sigma = (draws as f64 * w * (1.0 - w)).sqrt();
        assert!(
            (counts[idx] as f64 - expected).abs() <= 3.0 * sigma + 1.0,
            "transition {idx}: {} vs {expected}",
            counts[idx]
        );
    }
}

#[test]
fn tabular_cop_td_is_deterministic_and_converges() {
    let s = setup(3, 4, 2);
    let sampler = TransitionSampler::new(s.mdp.clone(), s.behavior.clone(), s.target.clone()).unwrap();
    let reference = ratio_of(
        &copkit_core::discounted_stationary(&s.chain, &s.d_mu, 0.5).unwrap(),
        &s.d_mu,
    )
    .unwrap();
    let config = TabularCopTdConfig {
        gamma_hat: 0.5,
        steps: 200_000,
        schedule: StepSchedule::RobbinsMonro {
            alpha0: 0.5,
            t0: 1e3,
        },
        renormalize_every: None,
        record_every: 50_000,
    };
    let a = run_tabular_cop_td(&sampler, &reference, &config, &mut rng(1)).unwrap();
    let b = run_tabular_cop_td(&sampler, &reference, &config, &mut rng(1)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.curve.len(), 5);
    let last = a.curve.last().unwrap();
    assert!(last.max_error < 0.05, "{last:?}");
    assert!(last.max_error < a.curve[0].max_error);
}
