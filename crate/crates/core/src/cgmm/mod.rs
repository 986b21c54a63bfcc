//! Gaussian mixtures whose component means are constrained to a subspace,
//! fitted by generalized EM with conditional maximization of the means and the
//! shared covariance.

mod init;
mod means;

pub use init::{class_priors, em_from, fit_unconstrained, kmeans_start, UnconstrainedFit};
pub use means::{constraint_residual, solve_constrained_means};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::orthonormalize;
use crate::mixture::{covariance_given_means, m_step_priors, ComponentStats, CovFlavor, Mixture};
use crate::subspace::{discriminant_subspace, Subspace};

pub const SCHEMA_VERSION: u32 = 1;

/// How the null-space projections of the means are tied together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintFlavor {
    /// One common projection for every component of every class.
    #[default]
    Shared,
    /// One projection per class: parallel, class-shifted subspaces.
    PerClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub flavor: ConstraintFlavor,
    pub cov: CovFlavor,
    /// Mean/covariance alternations per outer iteration.
    pub inner_cm: usize,
    /// Stop once the relative log-likelihood gain falls below this.
    pub tol: f64,
    pub max_outer: usize,
    /// Empty-component re-seeds allowed in the unconstrained fit.
    pub max_reseeds: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            flavor: ConstraintFlavor::Shared,
            cov: CovFlavor::Full,
            inner_cm: 3,
            tol: 1e-6,
            max_outer: 500,
            max_reseeds: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedGmm {
    pub mixture: Mixture,
    pub subspace: Subspace,
    pub flavor: ConstraintFlavor,
    pub cov: CovFlavor,
    /// Training log-likelihood after each outer iteration.
    pub trace: Vec<f64>,
    pub converged: bool,
    pub seed: u64,
}

impl ConstrainedGmm {
    pub fn log_likelihood(&self) -> f64 {
        self.trace.last().copied().unwrap_or(f64::NEG_INFINITY)
    }

    pub fn constraint_residual(&self) -> f64 {
        constraint_residual(&self.mixture.means, &self.subspace, self.flavor)
    }

    /// Nominal dimension of the discriminant subspace: `d`, or `d + K - 1`
    /// when each class has its own shift.
    pub fn discriminant_dim(&self) -> usize {
        match self.flavor {
            ConstraintFlavor::Shared => self.subspace.d(),
            ConstraintFlavor::PerClass => (self.subspace.d() + self.mixture.k() - 1).min(self.subspace.p()),
        }
    }

    /// Orthonormal basis of the directions that carry all the class and
    /// component information, `orth(Sigma^{-1} V)`. Under per-class constraints
    /// the between-class shifts `Sigma^{-1}(mu_k1 - mu_11)` are added.
    pub fn discriminant_basis(&self) -> Result<DMatrix<f64>> {
        let base = discriminant_subspace(&self.subspace, &self.mixture.covariance)?;
        if self.flavor == ConstraintFlavor::Shared || self.mixture.k() == 1 {
            return Ok(base);
        }
        let chol = crate::linalg::symmetrized(&self.mixture.covariance)
            .cholesky()
            .ok_or(Error::NotPositiveDefinite("discriminant covariance"))?;
        let mut cols: Vec<_> = base.column_iter().map(|c| c.into_owned()).collect();
        let first = &self.mixture.means[0][0];
        for class in &self.mixture.means[1..] {
            let shift = chol.solve(&(&class[0] - first));
            let mut v = shift.clone();
            for c in &cols {
                v.axpy(-c.dot(&shift), c, 1.0);
            }
            if v.norm() > 1e-10 * shift.norm().max(f64::MIN_POSITIVE) {
                cols.push(v.normalize());
            }
        }
        orthonormalize(&DMatrix::from_columns(&cols))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelDocument::from_gmm(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        ModelDocument::from_json(s)?.into_gmm()
    }
}

/// Fit a constrained mixture, starting from an unconstrained one with the
/// same component counts.
pub fn gem_fit(ds: &LabeledDataset, subspace: &Subspace, r_k: &[usize], opts: &FitOptions, seed: u64) -> Result<ConstrainedGmm> {
    let init = fit_unconstrained(ds, r_k, opts, seed)?;
    gem_fit_from(ds, &init.mixture, subspace, opts, seed)
}

/// Generalized EM from a given starting mixture. Each outer iteration runs
/// an E-step, the prior update and `inner_cm` alternations of the mean and
/// covariance updates. Errors if the likelihood drops by more than
/// `1e-8 * n`.
pub fn gem_fit_from(ds: &LabeledDataset, init: &Mixture, subspace: &Subspace, opts: &FitOptions, seed: u64) -> Result<ConstrainedGmm> {
    init.validate()?;
    if subspace.p() != ds.p() {
        return Err(Error::DimensionMismatch(format!(
            "subspace lives in R^{}, data in R^{}",
            subspace.p(),
            ds.p()
        )));
    }
    let slack = 1e-8 * ds.n() as f64;
    let mut model = init.clone();
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut resp = model.e_step(ds)?;
    loop {
        let stats = ComponentStats::from_responsibilities(ds.x(), &resp, &model.means);
        model.weights = m_step_priors(&resp)?;
        for _ in 0..opts.inner_cm.max(1) {
            model.means = solve_constrained_means(&stats, &model.covariance, subspace, opts.flavor)?;
            model.covariance = covariance_given_means(&stats, &model.means, opts.cov);
        }

        resp = model.e_step(ds)?;
        let ll = resp.log_likelihood;
        if let Some(&prev) = trace.last() {
            if ll < prev - slack {
                return Err(Error::LikelihoodDecrease {
                    iteration: trace.len(),
                    before: prev,
                    after: ll,
                });
            }
            trace.push(ll);
            if ll - prev <= opts.tol * prev.abs() {
                converged = true;
                break;
            }
        } else {
            trace.push(ll);
        }
        if trace.len() >= opts.max_outer {
            break;
        }
    }
    if !converged {
        log::warn!("constrained fit stopped after {} iterations without converging", trace.len());
    }
    Ok(ConstrainedGmm {
        mixture: model,
        subspace: subspace.clone(),
        flavor: opts.flavor,
        cov: opts.cov,
        trace,
        converged,
        seed,
    })
}

/// Persistent form of a fitted model, shared by the constrained mixtures and
/// the reduced-rank baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub schema: u32,
    /// `"GMM-SHARED"`, `"GMM-PER-CLASS"` or `"MDA-RR"`.
    pub flavor: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub r_k: Vec<usize>,
    #[serde(flatten)]
    pub mixture: Mixture,
    pub cov_flavor: CovFlavor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subspace: Option<Subspace>,
    /// Rank of the mean restriction (reduced-rank models only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    /// Discriminant basis rows (reduced-rank models only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disc_basis: Option<Vec<Vec<f64>>>,
    pub trace: Vec<f64>,
    pub converged: bool,
    pub seed: u64,
}

impl ModelDocument {
    fn from_gmm(m: &ConstrainedGmm) -> Self {
        Self {
            schema: SCHEMA_VERSION,
            flavor: match m.flavor {
                ConstraintFlavor::Shared => "GMM-SHARED",
                ConstraintFlavor::PerClass => "GMM-PER-CLASS",
            }
            .into(),
            k: m.mixture.k(),
            r_k: m.mixture.components(),
            mixture: m.mixture.clone(),
            cov_flavor: m.cov,
            subspace: Some(m.subspace.clone()),
            rank: None,
            disc_basis: None,
            trace: m.trace.clone(),
            converged: m.converged,
            seed: m.seed,
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: Self = serde_json::from_str(s)?;
        if doc.schema != SCHEMA_VERSION {
            return Err(Error::InvalidArgument(format!("unsupported model schema {}", doc.schema)));
        }
        doc.mixture.validate()?;
        if doc.k != doc.mixture.k() || doc.r_k != doc.mixture.components() {
            return Err(Error::InvalidArgument("model header disagrees with its parameters".into()));
        }
        Ok(doc)
    }

    fn into_gmm(self) -> Result<ConstrainedGmm> {
        let flavor = match self.flavor.as_str() {
            "GMM-SHARED" => ConstraintFlavor::Shared,
            "GMM-PER-CLASS" => ConstraintFlavor::PerClass,
            other => return Err(Error::InvalidArgument(format!("not a constrained mixture: {other}"))),
        };
        let subspace = self
            .subspace
            .ok_or_else(|| Error::InvalidArgument("constrained model without a subspace".into()))?;
        Ok(ConstrainedGmm {
            mixture: self.mixture,
            subspace,
            flavor,
            cov: self.cov_flavor,
            trace: self.trace,
            converged: self.converged,
            seed: self.seed,
        })
    }
}
