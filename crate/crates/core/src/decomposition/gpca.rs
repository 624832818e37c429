use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{FactorPair, PrecisionGraph};

/// `Y ≈ U diag(d) Vᵀ` with `UᵀQU = I`, `VᵀRV = I` for `Q = A⁻¹`, `R = B⁻¹`.
#[derive(Debug, Clone, PartialEq)]
pub struct GpcaResult {
    pub u: DMatrix<f64>,
    pub d: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl GpcaResult {
    /// `X = U diag(d)`, `W = V`.
    pub fn factors(&self) -> Result<FactorPair> {
        let x = DMatrix::from_fn(self.u.nrows(), self.u.ncols(), |r, c| self.u[(r, c)] * self.d[c]);
        FactorPair::new(x, self.v.clone())
    }
}

/// Generalized PCA under the row/column metrics `Q = A⁻¹` and `R = B⁻¹`.
///
/// With `M = Q^{1/2} Y R^{1/2}` and its rank-k SVD `Ũ D Ṽᵀ`, returns
/// `U = Q^{-1/2} Ũ`, `V = R^{-1/2} Ṽ`. Since `Q^{1/2} = A^{-1/2}`, only
/// eigen-square-roots of `A` and `B` are needed.
pub fn gpca_postprocess(y: &DMatrix<f64>, a: &PrecisionGraph, b: &PrecisionGraph, k: usize) -> Result<GpcaResult> {
    let (n, p) = y.shape();
    if a.theta().nrows() != n || b.theta().nrows() != p {
        return Err(Error::dims(format!(
            "A is {0}x{0}, B is {1}x{1}, Y is {n}x{p}",
            a.theta().nrows(),
            b.theta().nrows()
        )));
    }
    let a_half = linalg::sqrt_spd(a.theta())?;
    let a_inv_half = linalg::inv_sqrt_spd(a.theta())?;
    let b_half = linalg::sqrt_spd(b.theta())?;
    let b_inv_half = linalg::inv_sqrt_spd(b.theta())?;
    let m = &a_inv_half * y * &b_inv_half;
    let (u, d, v) = linalg::truncated_svd(&m, k)?;
    Ok(GpcaResult { u: a_half * u, d, v: b_half * v })
}
