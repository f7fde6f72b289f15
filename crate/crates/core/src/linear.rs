//! Ordinary least squares with an intercept.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Ols {
    /// Intercept first, then one slope per predictor.
    pub coef: Vec<f64>,
    rank: usize,
}

impl Ols {
    /// Minimum-norm least-squares fit, so collinear or constant columns are
    /// tolerated.
    pub fn fit(x: &[Vec<f64>], y: &[f64]) -> Result<Self> {
        let n = y.len();
        if x.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: x.len(),
            });
        }
        if n == 0 {
            return Err(Error::Input("least squares on zero rows".into()));
        }
        let p = x[0].len();
        let design = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { x[i][j - 1] });
        let svd = design.svd(true, true);
        let tol = svd.singular_values.max() * (n.max(p + 1) as f64) * f64::EPSILON;
        let rank = svd.rank(tol);
        let beta = svd
            .solve(&DVector::from_column_slice(y), tol)
            .map_err(|e| Error::Input(format!("least squares failed: {e}")))?;
        Ok(Ols {
            coef: beta.iter().copied().collect(),
            rank,
        })
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        self.coef[0] + self.coef[1..].iter().zip(row).map(|(b, x)| b * x).sum::<f64>()
    }

    /// Numerical rank of the design including the intercept column.
    pub fn rank(&self) -> usize {
        self.rank
    }
}
