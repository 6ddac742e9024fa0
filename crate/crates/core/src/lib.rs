//! Tabular laboratory for off-policy evaluation by stationary-distribution
//! ratio correction.
//!
//! The crate is organized bottom-up:
//!
//! - [`mdp`]: MDPs, policies, induced chains, stationary and discounted
//!   stationary distributions, episodic visitation.
//! - [`operators`]: expectation-level operators (Bellman, COP and its
//!   normalized/discounted variants, weighted projections) and the bounds
//!   that accompany them.
//! - [`learning`]: sample-based learning rules for values and ratios,
//!   the weighted-simplex projection and the soft-normalization gradient.
//! - [`replay`]: sum tree, prioritized replay buffer and the agent loop that
//!   uses learned ratios as sampling priorities.

pub mod error;
pub mod learning;
mod linalg;
pub mod mdp;
pub mod operators;
pub mod replay;
pub mod tolerances;

pub use error::{Error, Result};
pub use mdp::{
    check_ergodic, discounted_reset_chain, discounted_stationary, episodic_visitation,
    induce_chain, ratio_of, stationary_distribution, EpisodicChain, EpisodicMdp, InducedChain,
    Mdp, Policy, RatioVector, StateDistribution,
};
