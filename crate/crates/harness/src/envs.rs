//! Environment suite: small MDPs used by the studies and the acceptance battery.

use copkit_core::mdp::{EpisodicMdp, Mdp, Policy};
use copkit_core::operators::FeatureMap;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, HarnessResult};

/// Declarative description of an environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSpec {
    /// Rows drawn from a flat Dirichlet and mixed with the uniform row.
    RandomErgodic {
        n_states: usize,
        #[serde(default = "default_actions")]
        n_actions: usize,
        #[serde(default = "default_mixing")]
        mixing: f64,
        #[serde(default = "default_gamma")]
        gamma: f64,
    },
    /// Fixed birth-death chain; the target policy leans right.
    Chain {
        #[serde(default = "default_chain_states")]
        n_states: usize,
    },
    /// Sparse-reward gridworld entered through a spawn state.
    Gridworld {
        #[serde(default = "default_grid")]
        width: usize,
        #[serde(default = "default_grid")]
        height: usize,
        #[serde(default = "default_hazard")]
        hazard: f64,
    },
    /// Two states, one feature `phi = [1, 2]`, on which off-policy TD diverges.
    DivergenceExample,
    /// Start state followed by a line of states with per-step termination.
    EpisodicChain {
        n_states: usize,
        #[serde(default = "default_termination")]
        termination: f64,
    },
}

fn default_actions() -> usize {
    3
}
fn default_mixing() -> f64 {
    0.05
}
fn default_gamma() -> f64 {
    0.9
}
fn default_chain_states() -> usize {
    5
}
fn default_grid() -> usize {
    5
}
fn default_hazard() -> f64 {
    0.02
}
fn default_termination() -> f64 {
    0.2
}

/// A generated environment together with its behavior and target policies.
#[derive(Debug, Clone)]
pub enum Environment {
    Continuing {
        mdp: Mdp,
        behavior: Policy,
        target: Policy,
    },
    Episodic {
        emdp: EpisodicMdp,
        behavior: Policy,
        target: Policy,
    },
}

impl Environment {
    pub fn behavior(&self) -> &Policy {
        match self {
            Environment::Continuing { behavior, .. } | Environment::Episodic { behavior, .. } => {
                behavior
            }
        }
    }

    pub fn target(&self) -> &Policy {
        match self {
            Environment::Continuing { target, .. } | Environment::Episodic { target, .. } => {
                target
            }
        }
    }

    pub fn mdp(&self) -> &Mdp {
        match self {
            Environment::Continuing { mdp, .. } => mdp,
            Environment::Episodic { emdp, .. } => emdp.base(),
        }
    }
}

impl EnvSpec {
    pub fn validate(&self) -> HarnessResult<()> {
        let bad = |msg: String| Err(HarnessError::InvalidSpec(msg));
        match *self {
            EnvSpec::RandomErgodic {
                n_states,
                n_actions,
                mixing,
                gamma,
            } => {
                if n_states == 0 || n_actions == 0 {
                    return bad("random_ergodic needs at least one state and action".into());
                }
                if !(mixing > 0.0 && mixing <= 1.0) {
                    return bad(format!("mixing {mixing} must lie in (0, 1]"));
                }
                if !(0.0..1.0).contains(&gamma) {
                    return bad(format!("gamma {gamma} must lie in [0, 1)"));
                }
            }
            EnvSpec::Chain { n_states } => {
                if n_states < 2 {
                    return bad("chain needs at least two states".into());
                }
            }
            EnvSpec::Gridworld {
                width,
                height,
                hazard,
            } => {
                if width * height < 2 {
                    return bad("gridworld needs at least two cells".into());
                }
                if !(hazard > 0.0 && hazard < 1.0) {
                    return bad(format!("hazard {hazard} must lie in (0, 1)"));
                }
            }
            EnvSpec::DivergenceExample => {}
            EnvSpec::EpisodicChain {
                n_states,
                termination,
            } => {
                if n_states < 2 {
                    return bad("episodic_chain needs at least two states".into());
                }
                if !(termination > 0.0 && termination < 1.0) {
                    return bad(format!("termination {termination} must lie in (0, 1)"));
                }
            }
        }
        Ok(())
    }

    /// Short stable name used in file names and CSV columns.
    pub fn name(&self) -> String {
        match *self {
            EnvSpec::RandomErgodic { n_states, .. } => format!("random_ergodic{n_states}"),
            EnvSpec::Chain { n_states } => format!("chain{n_states}"),
            EnvSpec::Gridworld { width, height, .. } => format!("gridworld_sparse{width}x{height}"),
            EnvSpec::DivergenceExample => "divergence_example".into(),
            EnvSpec::EpisodicChain { n_states, .. } => format!("episodic_chain{n_states}"),
        }
    }

    /// Looks up a named environment as printed by [`EnvSpec::name`] with
    /// default parameters, e.g. `chain5`, `random_ergodic10`, `gridworld_sparse`.
    pub fn from_name(name: &str) -> HarnessResult<Self> {
        let number = |prefix: &str| -> Option<usize> { name.strip_prefix(prefix)?.parse().ok() };
        if name == "divergence_example" {
            return Ok(EnvSpec::DivergenceExample);
        }
        if name == "gridworld_sparse" || name == "gridworld" || name == "gridworld_sparse5x5" {
            return Ok(EnvSpec::Gridworld {
                width: 5,
                height: 5,
                hazard: default_hazard(),
            });
        }
        if let Some(n) = number("random_ergodic") {
            return Ok(EnvSpec::RandomErgodic {
                n_states: n,
                n_actions: default_actions(),
                mixing: default_mixing(),
                gamma: default_gamma(),
            });
        }
        if let Some(n) = number("episodic_chain") {
            return Ok(EnvSpec::EpisodicChain {
                n_states: n,
                termination: default_termination(),
            });
        }
        if let Some(n) = number("chain") {
            return Ok(EnvSpec::Chain { n_states: n });
        }
        Err(HarnessError::InvalidSpec(format!("unknown environment {name:?}")))
    }
}

/// Builds the environment described by `spec`; deterministic in `(spec, seed)`.
pub fn generate_env(spec: &EnvSpec, seed: u64) -> HarnessResult<Environment> {
    spec.validate()?;
    let env = match *spec {
        EnvSpec::RandomErgodic {
            n_states,
            n_actions,
            mixing,
            gamma,
        } => random_ergodic(n_states, n_actions, mixing, gamma, seed)?,
        EnvSpec::Chain { n_states } => birth_death_chain(n_states)?,
        EnvSpec::Gridworld {
            width,
            height,
            hazard,
        } => gridworld(width, height, hazard)?,
        EnvSpec::DivergenceExample => divergence_example()?,
        EnvSpec::EpisodicChain {
            n_states,
            termination,
        } => episodic_chain(n_states, termination)?,
    };
    Ok(env)
}

/// Flat Dirichlet sample via normalized unit exponentials.
pub fn flat_dirichlet<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let draws: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|x: f64| x / total).collect()
}

fn mix_uniform(row: Vec<f64>, rate: f64) -> Vec<f64> {
    let n = row.len() as f64;
    row.into_iter().map(|p| (1.0 - rate) * p + rate / n).collect()
}

fn random_ergodic(
    n: usize,
    n_actions: usize,
    mixing: f64,
    gamma: f64,
    seed: u64,
) -> HarnessResult<Environment> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let transition = (0..n)
        .map(|_| {
            (0..n_actions)
                .map(|_| mix_uniform(flat_dirichlet(n, &mut rng), mixing))
                .collect()
        })
        .collect();
    let reward = (0..n)
        .map(|_| (0..n_actions).map(|_| rng.random::<f64>()).collect())
        .collect();
    let mdp = Mdp::new(transition, reward, gamma)?;
    let behavior = Policy::uniform(n, n_actions);
    // Mixing with the uniform policy keeps pi/mu <= 1 + n_actions / 2.
    let target = Policy::new(
        (0..n)
            .map(|_| mix_uniform(flat_dirichlet(n_actions, &mut rng), 0.5))
            .collect(),
    )?;
    Ok(Environment::Continuing {
        mdp,
        behavior,
        target,
    })
}

/// Actions move left/right with probability 0.8, stay with 0.1 and go the
/// other way with 0.1 (boundary moves stay put). Reward 1 in the last state.
fn birth_death_chain(n: usize) -> HarnessResult<Environment> {
    let mut transition = vec![vec![vec![0.0; n]; 2]; n];
    for (s, actions) in transition.iter_mut().enumerate() {
        let left = s.saturating_sub(1);
        let right = (s + 1).min(n - 1);
        actions[0][left] += 0.8;
        actions[0][s] += 0.1;
        actions[0][right] += 0.1;
        actions[1][right] += 0.8;
        actions[1][s] += 0.1;
        actions[1][left] += 0.1;
    }
    let reward = (0..n)
        .map(|s| if s == n - 1 { vec![1.0, 1.0] } else { vec![0.0, 0.0] })
        .collect();
    let mdp = Mdp::new(transition, reward, 0.9)?;
    let behavior = Policy::uniform(n, 2);
    let target = Policy::new(vec![vec![0.35, 0.65]; n])?;
    Ok(Environment::Continuing {
        mdp,
        behavior,
        target,
    })
}

/// Action 0 jumps to state 1 and action 1 to state 0 from either state; all
/// rewards are 0. The target takes action 0 with probability 0.9 and the
/// behavior with probability 0.1.
fn divergence_example() -> HarnessResult<Environment> {
    let jump = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
    let mdp = Mdp::new(vec![jump.clone(), jump], vec![vec![0.0; 2]; 2], 0.99)?;
    let behavior = Policy::new(vec![vec![0.1, 0.9]; 2])?;
    let target = Policy::new(vec![vec![0.9, 0.1]; 2])?;
    Ok(Environment::Continuing {
        mdp,
        behavior,
        target,
    })
}

/// Single feature of the divergence example.
pub fn divergence_features() -> FeatureMap {
    FeatureMap::new(DMatrix::from_column_slice(2, 1, &[1.0, 2.0]))
        .expect("nonzero single feature has full rank")
}

/// State 0 is the start. Action 0 advances, action 1 stays (the start state
/// always advances). Every step terminates with probability `termination`;
/// advancing from the last state terminates with reward 1.
fn episodic_chain(n: usize, termination: f64) -> HarnessResult<Environment> {
    let keep = 1.0 - termination;
    let mut transition = vec![vec![vec![0.0; n]; 2]; n];
    let mut reward = vec![vec![0.0; 2]; n];
    for s in 0..n {
        if s + 1 < n {
            transition[s][0][s + 1] = keep;
        } else {
            reward[s][0] = 1.0;
        }
        if s == 0 {
            transition[s][1][1] = keep;
        } else {
            transition[s][1][s] = keep;
        }
    }
    let emdp = EpisodicMdp::new(Mdp::with_termination(transition, reward, 0.99)?, 0)?;
    let behavior = Policy::uniform(n, 2);
    let target = Policy::new(vec![vec![0.8, 0.2]; n])?;
    Ok(Environment::Episodic {
        emdp,
        behavior,
        target,
    })
}

/// Grid cell `(row, col)` as a state index; state 0 is the spawn state. The
/// goal (last) cell ends the episode on entry and has no state.
pub fn grid_state(width: usize, row: usize, col: usize) -> usize {
    1 + row * width + col
}

/// Sparse-reward gridworld. State 0 is a spawn state that acts like the
/// top-left cell but cannot be re-entered. Actions move up/down/left/right;
/// moves into a wall stay put. Entering the bottom-right goal cell pays 1 and
/// ends the episode; every step also ends it with probability `hazard`.
/// The behavior policy is uniform; the target moves right or down with
/// probability 0.4 each.
fn gridworld(width: usize, height: usize, hazard: f64) -> HarnessResult<Environment> {
    let goal = grid_state(width, height - 1, width - 1);
    let n = goal;
    let keep = 1.0 - hazard;
    let moves: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
    let mut transition = vec![vec![vec![0.0; n]; 4]; n];
    let mut reward = vec![vec![0.0; 4]; n];
    for s in 0..n {
        let (row, col) = if s == 0 {
            (0, 0)
        } else {
            ((s - 1) / width, (s - 1) % width)
        };
        for (a, (dr, dc)) in moves.iter().enumerate() {
            let r = row as isize + dr;
            let c = col as isize + dc;
            let next = if r < 0 || c < 0 || r >= height as isize || c >= width as isize {
                grid_state(width, row, col)
            } else {
                grid_state(width, r as usize, c as usize)
            };
            if next == goal {
                reward[s][a] = 1.0;
            } else {
                transition[s][a][next] = keep;
            }
        }
    }
    let emdp = EpisodicMdp::new(Mdp::with_termination(transition, reward, 0.99)?, 0)?;
    let behavior = Policy::uniform(n, 4);
    let target = Policy::new(vec![vec![0.1, 0.4, 0.1, 0.4]; n])?;
    Ok(Environment::Episodic {
        emdp,
        behavior,
        target,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use copkit_core::mdp::{check_ergodic, induce_chain};

    #[test]
    fn random_ergodic_is_deterministic_and_ergodic() {
        let spec = EnvSpec::from_name("random_ergodic10").unwrap();
        let a = generate_env(&spec, 7).unwrap();
        let b = generate_env(&spec, 7).unwrap();
        assert_eq!(a.mdp(), b.mdp());
        assert_eq!(a.target(), b.target());
        let c = generate_env(&spec, 8).unwrap();
        assert_ne!(a.mdp(), c.mdp());
        for p in [a.behavior(), a.target()] {
            assert!(check_ergodic(&induce_chain(a.mdp(), p).unwrap()));
        }
    }

    #[test]
    fn chain_ignores_seed() {
        let spec = EnvSpec::from_name("chain5").unwrap();
        assert_eq!(
            generate_env(&spec, 1).unwrap().mdp(),
            generate_env(&spec, 2).unwrap().mdp()
        );
    }

    #[test]
    fn gridworld_layout() {
        let env = generate_env(&EnvSpec::from_name("gridworld_sparse").unwrap(), 0).unwrap();
        let mdp = env.mdp();
        assert_eq!(mdp.n_states(), 25);
        // Moving right from the cell left of the goal pays and terminates.
        let left_of_goal = grid_state(5, 4, 3);
        assert_eq!(mdp.reward(left_of_goal, 3), 1.0);
        assert_eq!(mdp.next_state_probs(left_of_goal, 3).iter().sum::<f64>(), 0.0);
        // Spawn moving up bumps into the wall and lands on the top-left cell.
        assert!((mdp.prob(0, 0, grid_state(5, 0, 0)) - 0.98).abs() < 1e-15);
    }

    #[test]
    fn names_round_trip() {
        for name in ["chain5", "random_ergodic10", "divergence_example", "episodic_chain4"] {
            assert_eq!(EnvSpec::from_name(name).unwrap().name(), name);
        }
        assert!(EnvSpec::from_name("nope").is_err());
    }
}
