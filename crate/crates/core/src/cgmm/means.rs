//! Closed-form conditional maximization of the component means for a fixed
//! covariance under the subspace constraint.
//!
//! Whitening by `Sigma^{-1/2}` turns the weighted Mahalanobis objective into a
//! Euclidean one, and a rotation aligned with the whitened null basis makes
//! the constraint coordinate-wise: the first `q` rotated coordinates are shared
//! (pooled), the rest are free.

use nalgebra::{DMatrix, DVector};

use super::ConstraintFlavor;
use crate::error::{Error, Result};
use crate::linalg::{complete_basis, sqrt_factors};
use crate::mixture::ComponentStats;
use crate::subspace::Subspace;

/// Whitened, rotated coordinates for one covariance and null basis.
struct Rotation {
    /// `U^t (Sigma^{-1/2})^t`
    forward: DMatrix<f64>,
    /// `(Sigma^{1/2})^t U`
    back: DMatrix<f64>,
    q: usize,
}

impl Rotation {
    fn new(sigma: &DMatrix<f64>, null: &DMatrix<f64>) -> Result<Self> {
        let f = sqrt_factors(sigma, "covariance in the mean update")?;
        let q = null.ncols();
        let b = &f.sqrt * null;
        let svd = b.svd(true, false);
        let s_max = svd.singular_values.max();
        if svd.singular_values.iter().any(|&s| s <= 1e-12 * s_max) {
            return Err(Error::Degenerate("whitened null basis lost rank".into()));
        }
        let u_b = svd.u.expect("requested U").columns(0, q).into_owned();
        let u_hat = complete_basis(&u_b);
        Ok(Self {
            forward: u_hat.transpose() * f.inv_sqrt.transpose(),
            back: f.sqrt.transpose() * u_hat,
            q,
        })
    }
}

/// Means maximizing the expected complete log-likelihood given `sigma`.
///
/// `Shared` pools the constrained coordinates over every component of every
/// class; `PerClass` pools them within each class. With `q = 0` this returns
/// the weighted component means unchanged.
pub fn solve_constrained_means(
    stats: &ComponentStats,
    sigma: &DMatrix<f64>,
    subspace: &Subspace,
    flavor: ConstraintFlavor,
) -> Result<Vec<Vec<DVector<f64>>>> {
    if subspace.p() != sigma.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "subspace lives in R^{}, covariance is {}x{}",
            subspace.p(),
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    if subspace.q() == 0 {
        return Ok(stats.means.clone());
    }
    let rot = Rotation::new(sigma, subspace.null())?;
    let breve: Vec<Vec<DVector<f64>>> = stats
        .means
        .iter()
        .map(|class| class.iter().map(|m| &rot.forward * m).collect())
        .collect();

    let pool = |classes: &mut dyn Iterator<Item = usize>| {
        let mut acc = DVector::zeros(rot.q);
        let mut total = 0.0;
        for k in classes {
            for (l, x) in stats.totals[k].iter().zip(&breve[k]) {
                acc.axpy(*l, &x.rows(0, rot.q), 1.0);
                total += l;
            }
        }
        acc / total
    };
    let k = stats.means.len();
    let pooled: Vec<DVector<f64>> = match flavor {
        ConstraintFlavor::Shared => vec![pool(&mut (0..k)); k],
        ConstraintFlavor::PerClass => (0..k).map(|c| pool(&mut std::iter::once(c))).collect(),
    };

    Ok(breve
        .into_iter()
        .zip(&pooled)
        .map(|(class, shared)| {
            class
                .into_iter()
                .map(|mut x| {
                    x.rows_mut(0, rot.q).copy_from(shared);
                    &rot.back * x
                })
                .collect()
        })
        .collect())
}

/// Largest violation of the constraint: the spread of `v_j^t mu_kr` over the
/// components that must share it.
pub fn constraint_residual(means: &[Vec<DVector<f64>>], subspace: &Subspace, flavor: ConstraintFlavor) -> f64 {
    if subspace.q() == 0 {
        return 0.0;
    }
    let proj: Vec<Vec<DVector<f64>>> = means
        .iter()
        .map(|class| class.iter().map(|m| subspace.null().tr_mul(m)).collect())
        .collect();
    let spread = |group: Vec<&DVector<f64>>| {
        let mut worst: f64 = 0.0;
        for j in 0..subspace.q() {
            let vals = group.iter().map(|v| v[j]);
            let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            worst = worst.max(hi - lo);
        }
        worst
    };
    match flavor {
        ConstraintFlavor::Shared => spread(proj.iter().flatten().collect()),
        ConstraintFlavor::PerClass => proj.iter().map(|c| spread(c.iter().collect())).fold(0.0, f64::max),
    }
}
