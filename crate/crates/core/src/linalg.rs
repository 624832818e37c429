//! Small dense linear-algebra helpers shared across the crate.
//!
//! Everything here works on `nalgebra::DMatrix<f64>`; the matrices in this
//! crate are at most a few thousand on a side, so dense factorizations are
//! the right tool.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Population standard deviation over every entry of `m`.
pub fn entry_std(m: &DMatrix<f64>) -> f64 {
    let n = m.len();
    if n == 0 {
        return 0.0;
    }
    let mean = m.iter().sum::<f64>() / n as f64;
    let var = m.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    var.sqrt()
}

/// `(m + mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest absolute asymmetry relative to the largest absolute entry.
pub fn relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax();
    if scale == 0.0 {
        return 0.0;
    }
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst / scale
}

pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    m.is_square() && m.iter().all(|v| v.is_finite()) && m.clone().cholesky().is_some()
}

/// `ln |m|` through a Cholesky factorization.
pub fn log_det_spd(m: &DMatrix<f64>) -> Result<f64> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("log-determinant"))?;
    Ok(2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

/// Symmetric eigendecomposition with eigenvalues in ascending order.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

fn spd_power(m: &DMatrix<f64>, power: f64, what: &'static str) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::dims(format!("{what}: matrix is {}x{}", m.nrows(), m.ncols())));
    }
    if !is_positive_definite(m) {
        return Err(Error::NotPositiveDefinite(what));
    }
    let (values, vectors) = sym_eigen(m);
    if values.iter().any(|&v| v <= 0.0) {
        return Err(Error::NotPositiveDefinite(what));
    }
    let scaled = DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| {
        vectors[(r, c)] * values[c].powf(power)
    });
    Ok(symmetrize(&(scaled * vectors.transpose())))
}

/// Unique symmetric positive-definite square root.
pub fn sqrt_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spd_power(m, 0.5, "matrix square root")
}

/// Symmetric inverse square root `m^{-1/2}`.
pub fn inv_sqrt_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spd_power(m, -0.5, "inverse matrix square root")
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
pub fn inv_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("inverse"))?;
    Ok(symmetrize(&chol.inverse()))
}

/// Rank-`k` SVD `m ≈ U diag(s) Vᵀ` with singular values in non-increasing
/// order. Each left singular vector is signed so its largest-magnitude entry
/// is positive (the matching right vector flips with it).
pub fn truncated_svd(
    m: &DMatrix<f64>,
    k: usize,
) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    let (rows, cols) = m.shape();
    if k == 0 || k > rows.min(cols) {
        return Err(Error::invalid(format!(
            "rank {k} outside 1..={} for a {rows}x{cols} matrix",
            rows.min(cols)
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("svd input"));
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    order.truncate(k);

    let mut u_k = DMatrix::zeros(rows, k);
    let mut v_k = DMatrix::zeros(cols, k);
    let mut s_k = DVector::zeros(k);
    for (c, &idx) in order.iter().enumerate() {
        let col = u.column(idx);
        let pivot = col.iter().copied().fold(0.0f64, |best, x| {
            if x.abs() > best.abs() {
                x
            } else {
                best
            }
        });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        u_k.set_column(c, &(col * sign));
        v_k.set_column(c, &(v_t.row(idx).transpose() * sign));
        s_k[c] = s[idx];
    }
    Ok((u_k, s_k, v_k))
}

/// Orthonormal basis of the numerical column space of `m`.
pub fn orthonormal_basis(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.ncols() == 0 || m.nrows() == 0 {
        return Err(Error::RankDeficient);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let s = &svd.singular_values;
    let smax = s.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 || !smax.is_finite() {
        return Err(Error::RankDeficient);
    }
    let tol = smax * (m.nrows().max(m.ncols()) as f64) * f64::EPSILON;
    let keep: Vec<usize> = (0..s.len()).filter(|&i| s[i] > tol).collect();
    if keep.is_empty() {
        return Err(Error::RankDeficient);
    }
    Ok(DMatrix::from_fn(m.nrows(), keep.len(), |r, c| u[(r, keep[c])]))
}

/// `tr(Xᵀ Q X)` without forming the k×k product.
pub fn quad_trace(q: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
    (q * x).component_mul(x).sum()
}

/// Sum of absolute off-diagonal entries.
pub fn l1_off_diagonal(m: &DMatrix<f64>) -> f64 {
    let mut total = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if i != j {
                total += m[(i, j)].abs();
            }
        }
    }
    total
}
