//! Linear feature maps `x(s)` over a tabular state space.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::TabularMDP;

/// One feature column per state. Terminal columns are all zero, so any weight
/// vector values a terminal at exactly 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FeatureRepr")]
pub struct FeatureMap {
    dim: usize,
    columns: Vec<Vec<f64>>,
    #[serde(skip_serializing)]
    nonzeros: Vec<Vec<(usize, f64)>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureRepr {
    dim: usize,
    columns: Vec<Vec<f64>>,
}

impl TryFrom<FeatureRepr> for FeatureMap {
    type Error = Error;

    fn try_from(r: FeatureRepr) -> Result<Self> {
        FeatureMap::from_columns(r.dim, r.columns, [])
    }
}

impl FeatureMap {
    /// Builds a map from dense columns, zeroing the columns of `terminals`.
    pub fn from_columns(
        dim: usize,
        mut columns: Vec<Vec<f64>>,
        terminals: impl IntoIterator<Item = usize>,
    ) -> Result<Self> {
        if let Some((s, c)) = columns.iter().enumerate().find(|(_, c)| c.len() != dim) {
            return Err(Error::Shape(format!("feature column {s} has {} entries, expected {dim}", c.len())));
        }
        for t in terminals {
            if let Some(c) = columns.get_mut(t) {
                c.iter_mut().for_each(|x| *x = 0.0);
            }
        }
        if columns.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("non-finite feature value".into()));
        }
        let nonzeros = sparse(&columns);
        Ok(FeatureMap { dim, columns, nonzeros })
    }

    /// One-hot features over the non-terminal states, in ascending id order.
    pub fn tabular(model: &TabularMDP) -> Self {
        let n = model.n_states();
        let mut dim = 0;
        let mut columns = vec![Vec::new(); n];
        let index: Vec<Option<usize>> = (0..n)
            .map(|s| {
                (!model.is_terminal(s)).then(|| {
                    dim += 1;
                    dim - 1
                })
            })
            .collect();
        for (s, col) in columns.iter_mut().enumerate() {
            *col = vec![0.0; dim];
            if let Some(i) = index[s] {
                col[i] = 1.0;
            }
        }
        let nonzeros = sparse(&columns);
        FeatureMap { dim, columns, nonzeros }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_states(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, s: usize) -> &[f64] {
        &self.columns[s]
    }

    pub(crate) fn nonzeros(&self, s: usize) -> &[(usize, f64)] {
        &self.nonzeros[s]
    }

    /// `w^T x(s)`.
    pub fn value(&self, weights: &[f64], s: usize) -> f64 {
        self.nonzeros[s].iter().fold(0.0, |acc, &(i, x)| acc + weights[i] * x)
    }

    pub fn values(&self, weights: &[f64]) -> Vec<f64> {
        (0..self.n_states()).map(|s| self.value(weights, s)).collect()
    }

    /// `d x |states|` matrix whose columns are `x(s)` for the given states.
    pub fn matrix_for(&self, states: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, states.len(), |i, j| self.columns[states[j]][i])
    }

    /// True when the columns for `states` are linearly independent.
    pub fn independent_on(&self, states: &[usize]) -> bool {
        if states.len() > self.dim {
            return false;
        }
        if states.is_empty() {
            return true;
        }
        let x = self.matrix_for(states);
        let gram = x.transpose() * &x;
        gram.rank(1e-10 * gram.norm().max(1.0)) == states.len()
    }

    pub(crate) fn check_states(&self, n_states: usize) -> Result<()> {
        if self.n_states() < n_states {
            return Err(Error::Shape(format!(
                "feature map covers {} states, batch needs {n_states}",
                self.n_states()
            )));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn sparse(columns: &[Vec<f64>]) -> Vec<Vec<(usize, f64)>> {
    columns
        .iter()
        .map(|c| c.iter().copied().enumerate().filter(|(_, x)| *x != 0.0).collect())
        .collect()
}
