//! Constrained subspaces: weighted PCA over modes and class means, subspace
//! closeness, and the discriminant subspace implied by a shared covariance.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::ClassStats;
use crate::error::{Error, Result};
use crate::linalg::{self, complete_basis, orthonormalize, sym_eigen_desc};
use crate::modes::ModeSet;
use crate::serde_util;

/// Default share (percent) of weight given to class means by [`mpca_mean`].
pub const DEFAULT_GAMMA: f64 = 60.0;

/// Where a subspace came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Provenance {
    /// Weighted PCA over the modes found at bandwidth `sigma`.
    Mpca { sigma: f64 },
    /// Weighted PCA over modes and class means, `gamma` percent on the means.
    MpcaMean { sigma: f64, gamma: f64 },
    /// Weighted PCA over class means only.
    ClassMeans,
    /// Supplied by the caller.
    User,
    /// The whole space; no constraint.
    Full,
}

/// An orthonormal split of `R^p` into a `d`-dimensional constrained subspace
/// (where component means live, up to translation) and its `q = p - d`
/// dimensional null complement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subspace {
    #[serde(with = "serde_util::rows")]
    constrained: DMatrix<f64>,
    #[serde(with = "serde_util::rows")]
    null: DMatrix<f64>,
    provenance: Provenance,
    /// The source scatter had rank below `d`; trailing basis vectors were
    /// completed from its null space.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    rank_deficient: bool,
}

impl Subspace {
    /// Constrained basis spanning the columns of `basis` (orthonormalized);
    /// the null basis is its deterministic orthonormal complement.
    pub fn from_basis(basis: &DMatrix<f64>, provenance: Provenance) -> Result<Self> {
        let q_c = orthonormalize(basis)?;
        let d = q_c.ncols();
        let full = complete_basis(&q_c);
        let null = full.columns(d, full.ncols() - d).into_owned();
        Ok(Self {
            constrained: q_c,
            null,
            provenance,
            rank_deficient: false,
        })
    }

    /// The unconstrained case: `d = p`, empty null basis.
    pub fn full(p: usize) -> Self {
        Self {
            constrained: DMatrix::identity(p, p),
            null: DMatrix::zeros(p, 0),
            provenance: Provenance::Full,
            rank_deficient: false,
        }
    }

    /// Build from explicit constrained and null bases, checking that together
    /// they form an orthonormal basis of `R^p`.
    pub fn from_parts(constrained: DMatrix<f64>, null: DMatrix<f64>, provenance: Provenance) -> Result<Self> {
        let s = Self {
            constrained,
            null,
            provenance,
            rank_deficient: false,
        };
        s.check_orthonormal(1e-10)?;
        Ok(s)
    }

    pub fn constrained(&self) -> &DMatrix<f64> {
        &self.constrained
    }

    pub fn null(&self) -> &DMatrix<f64> {
        &self.null
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn is_rank_deficient(&self) -> bool {
        self.rank_deficient
    }

    pub fn p(&self) -> usize {
        self.constrained.nrows()
    }

    pub fn d(&self) -> usize {
        self.constrained.ncols()
    }

    pub fn q(&self) -> usize {
        self.null.ncols()
    }

    /// Verify the orthonormality invariants within `tol`.
    pub fn check_orthonormal(&self, tol: f64) -> Result<()> {
        let p = self.constrained.nrows();
        if self.null.nrows() != p || self.d() + self.q() != p {
            return Err(Error::DimensionMismatch(format!(
                "bases of shape {:?} and {:?} do not split R^{p}",
                self.constrained.shape(),
                self.null.shape()
            )));
        }
        let dc = (self.constrained.transpose() * &self.constrained - DMatrix::identity(self.d(), self.d())).amax();
        let dn = (self.null.transpose() * &self.null - DMatrix::identity(self.q(), self.q())).amax();
        let cross = if self.q() > 0 { (self.null.transpose() * &self.constrained).amax() } else { 0.0 };
        if dc.max(dn).max(cross) > tol {
            return Err(Error::InvalidArgument(format!(
                "subspace bases are not orthonormal (deviation {:.3e})",
                dc.max(dn).max(cross)
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let sub: Self = serde_json::from_str(s)?;
        sub.check_orthonormal(1e-8)?;
        Ok(sub)
    }
}

/// Points with probability weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedPointSet {
    points: DMatrix<f64>,
    weights: Vec<f64>,
}

impl WeightedPointSet {
    pub fn new(points: DMatrix<f64>, weights: Vec<f64>) -> Result<Self> {
        if points.nrows() != weights.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} points but {} weights",
                points.nrows(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidArgument("weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self { points, weights })
    }

    /// Equal weights `1/m`.
    pub fn uniform(points: DMatrix<f64>) -> Result<Self> {
        let m = points.nrows();
        Self::new(points, vec![1.0 / m as f64; m])
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `sum_r w_r (x_r - mu)(x_r - mu)^t` around the weighted mean.
    pub fn scatter(&self) -> DMatrix<f64> {
        let mean = linalg::weighted_mean(&self.points, &self.weights);
        linalg::weighted_scatter(&self.points, &self.weights, &mean)
    }
}

/// Split `R^p` by the eigenvectors of a scatter matrix: the top `d` span the
/// constrained subspace, the rest the null subspace.
fn subspace_from_scatter(scatter: &DMatrix<f64>, d: usize, provenance: Provenance) -> Subspace {
    let p = scatter.nrows();
    let eig = sym_eigen_desc(scatter);
    let top = eig.values[0].max(0.0);
    let rank = eig.values.iter().filter(|&&l| l > 1e-12 * top && l > 0.0).count();
    let rank_deficient = rank < d;
    if rank_deficient {
        log::warn!("scatter has rank {rank} < d = {d}; completing the basis from its null space");
    }
    Subspace {
        constrained: eig.vectors.columns(0, d).into_owned(),
        null: eig.vectors.columns(d, p - d).into_owned(),
        provenance,
        rank_deficient,
    }
}

fn check_dims(d: usize, p: usize) -> Result<()> {
    if d == 0 || d >= p {
        return Err(Error::InvalidArgument(format!("subspace dimension must satisfy 1 <= d < p = {p}, got {d}")));
    }
    Ok(())
}

/// Weighted PCA: the leading `d` eigenvectors of the weighted scatter span the
/// constrained subspace.
pub fn weighted_pca(ps: &WeightedPointSet, d: usize) -> Result<Subspace> {
    check_dims(d, ps.points.ncols())?;
    if ps.points.nrows() < 2 {
        return Err(Error::InvalidArgument("weighted PCA needs at least two points".into()));
    }
    Ok(subspace_from_scatter(&ps.scatter(), d, Provenance::User))
}

/// Modal PCA: weighted PCA over a bandwidth level's modes, each weighted by
/// the fraction of observations that climbed to it.
///
/// Levels with fewer than three modes yield [`Error::TooFewModes`].
pub fn mpca(modes: &ModeSet, d: usize) -> Result<Subspace> {
    if modes.is_skippable() {
        return Err(Error::TooFewModes { found: modes.len() });
    }
    let ps = WeightedPointSet::new(modes.modes.clone(), modes.weights.clone())?;
    let mut s = weighted_pca(&ps, d)?;
    s.provenance = Provenance::Mpca { sigma: modes.sigma };
    Ok(s)
}

/// Modal PCA augmented with class means.
///
/// When `d < K` only the class means (weighted by class priors) are used and
/// `modes` is ignored. Otherwise the scatter is the sum of the class-mean
/// scatter with weights `gamma * a_k / 100` and the mode scatter with weights
/// `(100 - gamma) * w_r / 100`, each taken about its own weighted center.
pub fn mpca_mean(modes: Option<&ModeSet>, cs: &ClassStats, d: usize, gamma: f64) -> Result<Subspace> {
    let k = cs.means.len();
    let p = cs.overall_mean.len();
    check_dims(d, p)?;
    if !(0.0..=100.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!("gamma must be a percentage, got {gamma}")));
    }
    let class_means = WeightedPointSet::new(cs.means_matrix(), cs.priors.clone())?;
    if d < k {
        if k < 2 {
            return Err(Error::InvalidArgument("class-mean subspace needs at least two classes".into()));
        }
        return Ok(subspace_from_scatter(&class_means.scatter(), d, Provenance::ClassMeans));
    }
    let modes = modes.ok_or_else(|| Error::InvalidArgument(format!("d = {d} >= K = {k} requires modes")))?;
    let mode_set = WeightedPointSet::new(modes.modes.clone(), modes.weights.clone())?;
    if mode_set.points.ncols() != p {
        return Err(Error::DimensionMismatch(format!(
            "modes live in R^{}, class means in R^{p}",
            mode_set.points.ncols()
        )));
    }
    let scatter = class_means.scatter() * (gamma / 100.0) + mode_set.scatter() * ((100.0 - gamma) / 100.0);
    Ok(subspace_from_scatter(
        &scatter,
        d,
        Provenance::MpcaMean {
            sigma: modes.sigma,
            gamma,
        },
    ))
}

/// `sum_ij (a_i . b_j)^2` for two matrices of orthonormal columns.
pub fn basis_closeness(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch(format!(
            "closeness needs equal shapes, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok((a.transpose() * b).norm_squared())
}

/// Closeness of two constrained subspaces, in `[0, d]`; `d` means identical
/// spans and 0 means orthogonal.
pub fn closeness(s1: &Subspace, s2: &Subspace) -> Result<f64> {
    basis_closeness(&s1.constrained, &s2.constrained)
}

/// Orthonormal basis of `span{Sigma^{-1} v : v in constrained basis}`, the
/// only directions that matter for classification or clustering under a
/// shared covariance.
pub fn discriminant_subspace(s: &Subspace, sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if sigma.shape() != (s.p(), s.p()) {
        return Err(Error::DimensionMismatch(format!(
            "covariance is {:?}, subspace lives in R^{}",
            sigma.shape(),
            s.p()
        )));
    }
    let chol = linalg::symmetrized(sigma)
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("discriminant subspace covariance"))?;
    orthonormalize(&chol.solve(&s.constrained))
}
