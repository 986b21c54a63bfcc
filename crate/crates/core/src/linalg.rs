//! Small dense linear-algebra helpers shared by the estimators.
//!
//! Everything here works on `nalgebra::DMatrix<f64>` and enforces the
//! reproducibility conventions used throughout the crate: eigenpairs are
//! ordered by descending eigenvalue with a deterministic tie-break, and every
//! basis vector is sign-normalized so that its entry of largest magnitude is
//! positive.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative ridge used when a covariance matrix is close to singular.
pub const RIDGE_RELATIVE: f64 = 1e-6;
/// Absolute ridge used when the covariance trace is zero.
pub const RIDGE_ABSOLUTE: f64 = 1e-10;

/// Flip `v` so that its entry of largest magnitude is positive.
///
/// Ties in magnitude resolve to the lowest index.
pub fn sign_normalize(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|x| *x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Sign-normalize every column of `m` in place.
pub fn sign_normalize_columns(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        sign_normalize(col.as_mut_slice());
    }
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match y.total_cmp(x) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    Ordering::Equal
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues in descending
/// order and sign-normalized eigenvectors in the columns of `vectors`.
#[derive(Debug, Clone)]
pub struct SortedEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

/// Symmetric eigen-decomposition, sorted by descending eigenvalue.
///
/// Eigenvalues closer than `1e-10` relative to the spectral radius are treated
/// as tied; tied eigenvectors are ordered by lexicographic comparison of their
/// sign-normalized entries (largest first).
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> SortedEigen {
    let n = m.nrows();
    let sym = symmetrized(m);
    let eig = sym.symmetric_eigen();
    let mut pairs: Vec<(f64, Vec<f64>)> = (0..n)
        .map(|j| {
            let mut v: Vec<f64> = eig.eigenvectors.column(j).iter().copied().collect();
            sign_normalize(&mut v);
            (eig.eigenvalues[j], v)
        })
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));

    let scale = pairs.iter().map(|p| p.0.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let tol = 1e-10 * scale;
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && (pairs[end - 1].0 - pairs[end].0).abs() <= tol {
            end += 1;
        }
        if end - start > 1 {
            pairs[start..end].sort_by(|a, b| lexicographic(&a.1, &b.1));
        }
        start = end;
    }

    let values = DVector::from_iterator(n, pairs.iter().map(|p| p.0));
    let mut vectors = DMatrix::zeros(n, n);
    for (j, (_, v)) in pairs.iter().enumerate() {
        vectors.column_mut(j).copy_from_slice(v);
    }
    SortedEigen { values, vectors }
}

pub fn symmetrized(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Orthonormal basis of the column span of `a` (thin Householder QR).
///
/// Fails when the columns are numerically dependent.
pub fn orthonormalize(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (p, d) = a.shape();
    if d > p {
        return Err(Error::DimensionMismatch(format!(
            "cannot orthonormalize {d} columns in dimension {p}"
        )));
    }
    let scale = a.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
    let qr = a.clone().qr();
    let r = qr.r();
    for i in 0..d {
        if r[(i, i)].abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidArgument(format!(
                "columns are linearly dependent (rank < {d})"
            )));
        }
    }
    let mut q = qr.q().columns(0, d).into_owned();
    sign_normalize_columns(&mut q);
    Ok(q)
}

/// Extend a `p x q` matrix with orthonormal columns to a `p x p` orthonormal
/// matrix whose first `q` columns are the input.
///
/// Completion vectors come from Gram-Schmidt over the standard basis, always
/// taking the candidate with the largest residual, so the result is
/// deterministic.
pub fn complete_basis(u: &DMatrix<f64>) -> DMatrix<f64> {
    let (p, q) = u.shape();
    let mut cols: Vec<DVector<f64>> = u.column_iter().map(|c| c.into_owned()).collect();
    let mut used = vec![false; p];
    while cols.len() < p {
        let mut best: Option<(usize, DVector<f64>, f64)> = None;
        for (i, taken) in used.iter().enumerate() {
            if *taken {
                continue;
            }
            let mut v = DVector::zeros(p);
            v[i] = 1.0;
            // two passes of modified Gram-Schmidt
            for _ in 0..2 {
                for c in &cols {
                    let proj = c.dot(&v);
                    v.axpy(-proj, c, 1.0);
                }
            }
            let norm = v.norm();
            if best.as_ref().is_none_or(|b| norm > b.2 + 1e-12) {
                best = Some((i, v, norm));
            }
        }
        let (i, v, norm) = best.expect("fewer than p columns implies a free direction");
        used[i] = true;
        cols.push(v / norm);
    }
    let mut out = DMatrix::zeros(p, p);
    for (j, c) in cols.iter().enumerate() {
        out.set_column(j, c);
    }
    debug_assert_eq!(out.ncols(), p.max(q));
    out
}

/// Ridge size for a `p x p` covariance with the given trace.
pub fn ridge_size(trace: f64, p: usize) -> f64 {
    (RIDGE_RELATIVE * trace / p as f64).max(RIDGE_ABSOLUTE)
}

/// Symmetrize `sigma` and add `eps * I` when its smallest eigenvalue is below
/// the ridge size. Returns the ridge that was added (0 when none).
pub fn apply_ridge(sigma: &mut DMatrix<f64>) -> f64 {
    let p = sigma.nrows();
    *sigma = symmetrized(sigma);
    let eps = ridge_size(sigma.trace(), p);
    let min_eig = sigma
        .clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if min_eig < eps {
        for i in 0..p {
            sigma[(i, i)] += eps;
        }
        eps
    } else {
        0.0
    }
}

/// The two square-root factors of an SPD matrix `S = V D V^t`:
/// `sqrt = D^{1/2} V^t` (so that `S = sqrt^t sqrt`) and
/// `inv_sqrt = V D^{-1/2}` (so that `sqrt * inv_sqrt = I`).
#[derive(Debug, Clone)]
pub struct SqrtFactors {
    pub sqrt: DMatrix<f64>,
    pub inv_sqrt: DMatrix<f64>,
}

pub fn sqrt_factors(s: &DMatrix<f64>, what: &'static str) -> Result<SqrtFactors> {
    let eig = sym_eigen_desc(s);
    let p = s.nrows();
    let max = eig.values.iter().copied().fold(0.0, f64::max);
    if eig.values.iter().any(|&l| l <= 1e-14 * max || l <= 0.0) {
        return Err(Error::NotPositiveDefinite(what));
    }
    let mut sqrt = eig.vectors.transpose();
    let mut inv_sqrt = eig.vectors.clone();
    for i in 0..p {
        let l = eig.values[i].sqrt();
        sqrt.row_mut(i).scale_mut(l);
        inv_sqrt.column_mut(i).scale_mut(1.0 / l);
    }
    Ok(SqrtFactors { sqrt, inv_sqrt })
}

/// `sum_r w_r (x_r - center)(x_r - center)^t` over the rows of `points`.
pub fn weighted_scatter(points: &DMatrix<f64>, weights: &[f64], center: &DVector<f64>) -> DMatrix<f64> {
    let p = points.ncols();
    let mut centered = DMatrix::zeros(points.nrows(), p);
    for (r, w) in weights.iter().enumerate() {
        let s = w.sqrt();
        for j in 0..p {
            centered[(r, j)] = s * (points[(r, j)] - center[j]);
        }
    }
    centered.transpose() * centered
}

/// Weighted mean of the rows of `points`.
pub fn weighted_mean(points: &DMatrix<f64>, weights: &[f64]) -> DVector<f64> {
    let total: f64 = weights.iter().sum();
    let mut mean = DVector::zeros(points.ncols());
    for (r, w) in weights.iter().enumerate() {
        mean.axpy(*w / total, &points.row(r).transpose(), 1.0);
    }
    mean
}

/// Numerically stable `log(sum(exp(xs)))`; `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}
