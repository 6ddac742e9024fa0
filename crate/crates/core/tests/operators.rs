//! Properties of the exact operators on random chains, checked against
//! independent constructions.

mod common;

use common::{power_stationary, random_chain, random_distribution, rng, setup};
use copkit_core::mdp::{
    check_ergodic, discounted_reset_chain, discounted_stationary, ratio_of,
    stationary_distribution, RatioVector,
};
use copkit_core::operators::{
    approximation_error_bound, concentration, contraction_check, cop_apply, discounted_cop_apply,
    normalized_cop_apply, value_function, weighted_project, FeatureMap, WeightedProjector,
};
use copkit_core::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

fn random_ratio<R: Rng>(n: usize, rng: &mut R) -> RatioVector {
    RatioVector::new(DVector::from_fn(n, |_, _| rng.random_range(-2.0..3.0))).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn stationary_matches_power_iteration(seed in any::<u64>(), n in 2usize..9) {
        let chain = random_chain(n, &mut rng(seed));
        prop_assert!(check_ergodic(&chain));
        let d = stationary_distribution(&chain).unwrap();
        prop_assert!((d.probs().sum() - 1.0).abs() < 1e-12);
        let oracle = power_stationary(chain.transition());
        prop_assert!((d.probs() - oracle).amax() < 1e-10);
    }

    #[test]
    fn cop_operator_fixes_ratio_and_conserves_mass(seed in any::<u64>(), n in 2usize..8) {
        let s = setup(seed, n, 3);
        let ratio = ratio_of(&s.d_pi, &s.d_mu).unwrap();
        let y = cop_apply(&s.chain, &s.d_mu, &ratio).unwrap();
        prop_assert!((y.values() - ratio.values()).amax() < 1e-9);

        let c = random_ratio(n, &mut rng(seed ^ 1));
        let yc = cop_apply(&s.chain, &s.d_mu, &c).unwrap();
        prop_assert!((yc.mass(&s.d_mu) - c.mass(&s.d_mu)).abs() < 1e-12);

        // Every multiple of the ratio is a fixed point of Y.
        let scaled = RatioVector::new(ratio.values() * 3.5).unwrap();
        let y = cop_apply(&s.chain, &s.d_mu, &scaled).unwrap();
        prop_assert!((y.values() - scaled.values()).amax() < 1e-8);
    }

    #[test]
    fn normalized_cop_outputs_unit_mass(seed in any::<u64>(), n in 2usize..8) {
        let s = setup(seed, n, 2);
        let mut r = rng(seed ^ 2);
        let c = RatioVector::new(DVector::from_fn(n, |_, _| r.random_range(0.1..2.0))).unwrap();
        let y = normalized_cop_apply(&s.chain, &s.d_mu, &c).unwrap();
        prop_assert!((y.mass(&s.d_mu) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn discounted_closed_form_matches_reset_chain(
        seed in any::<u64>(),
        n in 2usize..8,
        g in 0.0f64..0.999,
    ) {
        let s = setup(seed, n, 3);
        let closed = discounted_stationary(&s.chain, &s.d_mu, g).unwrap();
        let reset = discounted_reset_chain(&s.chain, &s.d_mu, g).unwrap();
        let oracle = power_stationary(reset.transition());
        prop_assert!((closed.probs() - &oracle).amax() < 1e-10);
        let ratio = ratio_of(&closed, &s.d_mu).unwrap();
        let y = discounted_cop_apply(&s.chain, &s.d_mu, &ratio, g).unwrap();
        prop_assert!((y.values() - ratio.values()).amax() < 1e-9);
    }

    #[test]
    fn discounted_limits(seed in any::<u64>(), n in 2usize..7) {
        let s = setup(seed, n, 2);
        let at_zero = discounted_stationary(&s.chain, &s.d_mu, 0.0).unwrap();
        prop_assert!((at_zero.probs() - s.d_mu.probs()).amax() < 1e-14);
        let near_one = discounted_stationary(&s.chain, &s.d_mu, 1.0 - 1e-7).unwrap();
        prop_assert!((near_one.probs() - s.d_pi.probs()).amax() < 1e-5);
    }

    #[test]
    fn contraction_bound_holds(seed in any::<u64>(), n in 2usize..7, g in 0.05f64..0.99) {
        let s = setup(seed, n, 3);
        for steps in [1, 2, 3] {
            let report = contraction_check(&s.chain, &s.d_mu, g, steps, 20, &mut rng(seed ^ 3));
            prop_assert!(report.is_ok(), "{report:?}");
            let k = concentration(&s.chain, &s.d_mu, &s.d_pi, steps).unwrap();
            prop_assert!(k.k_n <= k.k_bound * (1.0 + 1e-12));
            prop_assert!(k.k_n >= 1.0 - 1e-12);
        }
    }

    #[test]
    fn weighted_projection_is_orthogonal(seed in any::<u64>(), n in 3usize..8, k in 1usize..3) {
        let mut r = rng(seed);
        let phi = DMatrix::from_fn(n, k, |_, _| r.random_range(-1.0..1.0));
        let d = random_distribution(n, &mut r);
        let proj = WeightedProjector::new(FeatureMap::new(phi.clone()).unwrap(), d.clone()).unwrap();
        let x = DVector::from_fn(n, |_, _| r.random_range(-5.0..5.0));
        let px = weighted_project(&proj, &x).unwrap();
        let residual = &x - &px;
        let inner = phi.transpose() * d.probs().component_mul(&residual);
        prop_assert!(inner.amax() < 1e-10);
        let ppx = weighted_project(&proj, &px).unwrap();
        prop_assert!((ppx - &px).amax() < 1e-10);
    }

    #[test]
    fn approximation_bound_never_violated(seed in any::<u64>(), n in 3usize..7) {
        let mut r = rng(seed);
        let chain = random_chain(n, &mut r);
        let d_pi = stationary_distribution(&chain).unwrap();
        let phi = DMatrix::from_fn(n, 2, |_, _| r.random_range(-1.0..1.0));
        let d = random_distribution(n, &mut r);
        let Ok(features) = FeatureMap::new(phi) else { return Ok(()); };
        let Ok(proj) = WeightedProjector::new(features, d) else { return Ok(()); };
        let gamma = 0.9;
        let v = value_function(&chain, gamma).unwrap();
        match approximation_error_bound(&chain, gamma, &proj, &d_pi, &v) {
            Ok(report) => prop_assert!(report.actual <= report.bound * (1.0 + 1e-9) + 1e-12),
            Err(Error::PreconditionViolated { norm, limit }) => prop_assert!(norm >= limit),
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }
}

#[test]
fn on_policy_projection_in_own_norm_satisfies_the_bound() {
    // With d = d_pi the projected Bellman operator is a gamma-contraction,
    // so the precondition always holds.
    for seed in 0..20 {
        let mut r = rng(seed);
        let chain = random_chain(5, &mut r);
        let d_pi = stationary_distribution(&chain).unwrap();
        let phi = DMatrix::from_fn(5, 2, |_, _| r.random_range(-1.0..1.0));
        let proj = WeightedProjector::new(FeatureMap::new(phi).unwrap(), d_pi.clone()).unwrap();
        let v = value_function(&chain, 0.95).unwrap();
        let report = approximation_error_bound(&chain, 0.95, &proj, &d_pi, &v).unwrap();
        assert!(report.operator_norm <= 1.0 + 1e-9);
    }
}
