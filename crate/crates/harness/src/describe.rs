//! Summary statistics of an environment and its policy pair.

use copkit_core::mdp::{
    discounted_stationary, episodic_visitation, induce_chain, ratio_of, stationary_distribution,
};
use copkit_core::operators::concentration;
use serde::Serialize;

use crate::envs::{generate_env, EnvSpec, Environment};
use crate::error::HarnessResult;
use crate::studies::episodic_fixed_point;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationEntry {
    pub n: usize,
    pub k_n: f64,
    pub k_bound: f64,
    pub safe_gamma: f64,
}

/// Distributions of a continuing environment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContinuingDescription {
    pub env: String,
    pub gamma_hat: f64,
    pub d_mu: Vec<f64>,
    pub d_pi: Vec<f64>,
    /// Stationary distribution of the discounted reset chain; absent for
    /// `gamma_hat = 1`, where it coincides with `d_pi`.
    pub d_hat_pi: Option<Vec<f64>>,
    pub ratio: Vec<f64>,
    pub discounted_ratio: Option<Vec<f64>>,
    pub concentration: Vec<ConcentrationEntry>,
}

/// Visitation vectors of an episodic environment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodicDescription {
    pub env: String,
    pub gamma_hat: f64,
    pub start_state: usize,
    /// Expected visits per episode under the behavior policy.
    pub visits_mu: Vec<f64>,
    pub visits_pi: Vec<f64>,
    pub ratio: Vec<f64>,
    /// Fixed point of the episodic COP operator at `gamma_hat`.
    pub episodic_ratio: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Description {
    Continuing(ContinuingDescription),
    Episodic(EpisodicDescription),
}

fn vec_of(v: &nalgebra::DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

pub fn describe(spec: &EnvSpec, seed: u64, gamma_hat: f64) -> HarnessResult<Description> {
    if !(0.0..=1.0).contains(&gamma_hat) {
        return Err(copkit_core::Error::InvalidDiscount(gamma_hat).into());
    }
    let env = generate_env(spec, seed)?;
    let name = spec.name();
    match &env {
        Environment::Continuing {
            mdp,
            behavior,
            target,
        } => {
            let chain = induce_chain(mdp, target)?;
            let d_mu = stationary_distribution(&induce_chain(mdp, behavior)?)?;
            let d_pi = stationary_distribution(&chain)?;
            let d_hat = if gamma_hat < 1.0 {
                Some(discounted_stationary(&chain, &d_mu, gamma_hat)?)
            } else {
                None
            };
            let discounted_ratio = match &d_hat {
                Some(d) => Some(vec_of(ratio_of(d, &d_mu)?.values())),
                None => None,
            };
            let concentration = [1, 2, 4]
                .iter()
                .map(|&n| {
                    let k = concentration(&chain, &d_mu, &d_pi, n)?;
                    Ok(ConcentrationEntry {
                        n,
                        k_n: k.k_n,
                        k_bound: k.k_bound,
                        safe_gamma: k.safe_gamma,
                    })
                })
                .collect::<HarnessResult<_>>()?;
            Ok(Description::Continuing(ContinuingDescription {
                env: name,
                gamma_hat,
                ratio: vec_of(ratio_of(&d_pi, &d_mu)?.values()),
                d_mu: vec_of(d_mu.probs()),
                d_pi: vec_of(d_pi.probs()),
                d_hat_pi: d_hat.map(|d| vec_of(d.probs())),
                discounted_ratio,
                concentration,
            }))
        }
        Environment::Episodic {
            emdp,
            behavior,
            target,
        } => {
            let visits_mu = episodic_visitation(emdp, behavior)?;
            let visits_pi = episodic_visitation(emdp, target)?;
            let fixed = episodic_fixed_point(emdp, target, &visits_mu, gamma_hat)?;
            Ok(Description::Episodic(EpisodicDescription {
                env: name,
                gamma_hat,
                start_state: emdp.start_state(),
                ratio: vec_of(&visits_pi.component_div(&visits_mu)),
                visits_mu: vec_of(&visits_mu),
                visits_pi: vec_of(&visits_pi),
                episodic_ratio: vec_of(&fixed),
            }))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_description_matches_discounted_stationary() {
        let spec = EnvSpec::from_name("chain5").unwrap();
        let Description::Continuing(d) = describe(&spec, 0, 0.9).unwrap() else {
            panic!("chain is continuing");
        };
        let env = generate_env(&spec, 0).unwrap();
        let chain = induce_chain(env.mdp(), env.target()).unwrap();
        let d_mu = stationary_distribution(&induce_chain(env.mdp(), env.behavior()).unwrap())
            .unwrap();
        let expected = discounted_stationary(&chain, &d_mu, 0.9).unwrap();
        let got = d.d_hat_pi.unwrap();
        for (a, b) in got.iter().zip(expected.probs().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(d.concentration.len(), 3);
        assert!(describe(&spec, 0, 1.0).is_ok());
        assert!(describe(&spec, 0, 1.5).is_err());
    }

    #[test]
    fn episodic_description_pins_start_ratio() {
        let spec = EnvSpec::from_name("episodic_chain4").unwrap();
        let Description::Episodic(d) = describe(&spec, 0, 1.0).unwrap() else {
            panic!("episodic chain is episodic");
        };
        assert_eq!(d.ratio[d.start_state], 1.0);
        for (a, b) in d.ratio.iter().zip(&d.episodic_ratio) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
