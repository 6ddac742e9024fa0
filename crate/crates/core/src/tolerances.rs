//! Numerical tolerances shared across the crate.

/// Row sums and probability entries checked at construction.
pub const CONSTRUCTION: f64 = 1e-12;
/// Residual accepted from linear solvers and power iteration.
pub const SOLVER_RESIDUAL: f64 = 1e-10;
/// `sum_s d_mu(s) c(s) = 1` check for normalized ratio vectors.
pub const NORMALIZED_MASS: f64 = 1e-8;
/// Above this many states the stationary solver switches to power iteration.
pub const DIRECT_SOLVE_MAX_STATES: usize = 2_000;
/// Iteration cap for the power-iteration fallback.
pub const POWER_ITERATION_MAX_STEPS: usize = 1_000_000;
/// Power iterations used to bound the spectral radius of an episodic chain.
pub const EPISODIC_POWER_ITERATIONS: usize = 200;
/// A chain is episodic only if its spectral radius is below `1 - EPISODIC_MARGIN`.
pub const EPISODIC_MARGIN: f64 = 1e-9;
/// Iteration drivers report divergence once an entry exceeds this magnitude.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;
/// Default residual / magnitude threshold for declaring convergence.
pub const CONVERGENCE_THRESHOLD: f64 = 1e-9;
/// Smallest singular value accepted for a full-rank feature matrix.
pub const FULL_RANK: f64 = 1e-10;
/// Largest condition number accepted for a weighted Gram matrix.
pub const MAX_CONDITION_NUMBER: f64 = 1e12;
/// Normalizers at or below this value are treated as zero mass.
pub const DEGENERATE_MASS: f64 = 1e-300;
/// Slack allowed when checking the simplex projection constraints.
pub const SIMPLEX_FEASIBILITY: f64 = 1e-8;
