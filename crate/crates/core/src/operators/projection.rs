use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::mdp::{check_len, StateDistribution};
use crate::tolerances;

/// Feature matrix `Phi` (`n_states x k`, full column rank).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap(DMatrix<f64>);

impl FeatureMap {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let (n, k) = matrix.shape();
        if k == 0 || k > n {
            return Err(Error::InvalidValue {
                what: "feature map",
                detail: format!("need 1 <= k <= n_states, got k = {k}, n = {n}"),
            });
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue {
                what: "feature map",
                detail: "non-finite entry".into(),
            });
        }
        let smallest = linalg::singular_values(&matrix).min();
        if smallest <= tolerances::FULL_RANK {
            return Err(Error::InvalidValue {
                what: "feature map",
                detail: format!("rank deficient (smallest singular value {smallest:e})"),
            });
        }
        Ok(Self(matrix))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let k = rows.first().map_or(0, Vec::len);
        for row in rows {
            check_len("feature row", k, row.len())?;
        }
        Self::new(DMatrix::from_fn(n, k, |i, j| rows[i][j]))
    }

    /// Tabular (one-hot) features.
    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn n_states(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    /// `phi(s)^T w`.
    pub fn predict(&self, s: usize, weights: &DVector<f64>) -> f64 {
        self.0.row(s).transpose().dot(weights)
    }

    /// `phi(s)` as a column vector.
    pub fn phi(&self, s: usize) -> DVector<f64> {
        self.0.row(s).transpose()
    }
}

/// Projection onto `span(Phi)` in the `d`-weighted norm,
/// `Pi_d = Phi (Phi^T D Phi)^{-1} Phi^T D`.
#[derive(Debug, Clone)]
pub struct WeightedProjector {
    features: FeatureMap,
    weights: StateDistribution,
    /// `(Phi^T D Phi)^{-1} Phi^T D`, maps a vector to its coefficients.
    coefficient_map: DMatrix<f64>,
    matrix: DMatrix<f64>,
}

impl WeightedProjector {
    pub fn new(features: FeatureMap, weights: StateDistribution) -> Result<Self> {
        check_len("projection weights", features.n_states(), weights.len())?;
        let phi = features.matrix();
        let d = DMatrix::from_diagonal(weights.probs());
        let phi_t_d = phi.transpose() * &d;
        let gram = &phi_t_d * phi;
        let sv = linalg::singular_values(&gram);
        let condition = sv.max() / sv.min();
        if !condition.is_finite() || condition >= tolerances::MAX_CONDITION_NUMBER {
            return Err(Error::IllConditioned { condition });
        }
        let gram_inv = gram.try_inverse().ok_or(Error::IllConditioned {
            condition: f64::INFINITY,
        })?;
        let coefficient_map = gram_inv * phi_t_d;
        let matrix = phi * &coefficient_map;
        Ok(Self {
            features,
            weights,
            coefficient_map,
            matrix,
        })
    }

    /// Unweighted (L2) projection.
    pub fn euclidean(features: FeatureMap) -> Result<Self> {
        let n = features.n_states();
        Self::new(features, StateDistribution::uniform(n))
    }

    pub fn features(&self) -> &FeatureMap {
        &self.features
    }

    pub fn weights(&self) -> &StateDistribution {
        &self.weights
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Weights `w` with `Pi_d x = Phi w`.
    pub fn coefficients(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.coefficient_map * x
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x
    }
}

pub fn weighted_project(proj: &WeightedProjector, x: &DVector<f64>) -> Result<DVector<f64>> {
    check_len("projected vector", proj.features.n_states(), x.len())?;
    Ok(proj.apply(x))
}
