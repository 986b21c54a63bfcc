//! Reduced-rank mixture discriminant analysis: EM for a shared-covariance
//! mixture whose centered component means have rank at most `L`, with a
//! weighted LDA in every M-step.

use nalgebra::{DMatrix, DVector};

use crate::cgmm::{fit_unconstrained, FitOptions, ModelDocument, SCHEMA_VERSION};
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::{self, orthonormalize, sqrt_factors, sym_eigen_desc};
use crate::serde_util;
use crate::mixture::{m_step_priors, ComponentStats, CovFlavor, Mixture};

#[derive(Debug, Clone, PartialEq)]
pub struct RrMdaModel {
    pub mixture: Mixture,
    /// `L`, the rank of the mean restriction.
    pub rank: usize,
    /// Orthonormal `p x L` basis of the discriminant subspace.
    pub disc_basis: DMatrix<f64>,
    pub cov: CovFlavor,
    pub trace: Vec<f64>,
    pub converged: bool,
    pub seed: u64,
}

impl RrMdaModel {
    pub fn log_likelihood(&self) -> f64 {
        self.trace.last().copied().unwrap_or(f64::NEG_INFINITY)
    }

    pub fn classify(&self, x: &DMatrix<f64>) -> Result<(Vec<usize>, DMatrix<f64>)> {
        self.mixture.classify(x)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ModelDocument {
            schema: SCHEMA_VERSION,
            flavor: "MDA-RR".into(),
            k: self.mixture.k(),
            r_k: self.mixture.components(),
            mixture: self.mixture.clone(),
            cov_flavor: self.cov,
            subspace: None,
            rank: Some(self.rank),
            disc_basis: Some(serde_util::matrix_to_rows(&self.disc_basis)),
            trace: self.trace.clone(),
            converged: self.converged,
            seed: self.seed,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc = ModelDocument::from_json(s)?;
        if doc.flavor != "MDA-RR" {
            return Err(Error::InvalidArgument(format!("not a reduced-rank model: {}", doc.flavor)));
        }
        let rank = doc.rank.ok_or_else(|| Error::InvalidArgument("reduced-rank model without a rank".into()))?;
        let disc_basis = doc
            .disc_basis
            .as_deref()
            .and_then(|rows| serde_util::rows_to_matrix(rows, rank))
            .filter(|b| b.nrows() == doc.mixture.p())
            .ok_or_else(|| Error::InvalidArgument("reduced-rank model without a discriminant basis".into()))?;
        Ok(Self {
            mixture: doc.mixture,
            rank,
            disc_basis,
            cov: doc.cov_flavor,
            trace: doc.trace,
            converged: doc.converged,
            seed: doc.seed,
        })
    }
}

/// Result of one rank-restricted M-step.
#[derive(Debug, Clone)]
pub struct RankStep {
    pub means: Vec<Vec<DVector<f64>>>,
    pub covariance: DMatrix<f64>,
    /// Leading `L` columns of `W^{-1/2} V*` (not orthonormal).
    pub directions: DMatrix<f64>,
}

/// Weighted rank-`L` LDA on the component statistics.
pub fn rank_m_step(stats: &ComponentStats, rank: usize, cov: CovFlavor) -> Result<RankStep> {
    let n = stats.n();
    let p = stats.within.nrows();
    let mut overall = DVector::zeros(p);
    for (l, m) in stats.totals.iter().flatten().zip(stats.means.iter().flatten()) {
        overall.axpy(*l / n, m, 1.0);
    }
    let mut w = &stats.within / n;
    if cov == CovFlavor::Diagonal {
        w = DMatrix::from_diagonal(&w.diagonal());
    }
    linalg::apply_ridge(&mut w);
    let mut b = DMatrix::zeros(p, p);
    for (l, m) in stats.totals.iter().flatten().zip(stats.means.iter().flatten()) {
        let d = m - &overall;
        b.ger(*l / n, &d, &d, 1.0);
    }
    let f = sqrt_factors(&w, "within-component covariance")?;
    let b_star = f.inv_sqrt.transpose() * &b * &f.inv_sqrt;
    let eig = sym_eigen_desc(&linalg::symmetrized(&b_star));
    let directions = &f.inv_sqrt * eig.vectors.columns(0, rank);
    let proj = &w * &directions * directions.transpose();

    let means: Vec<Vec<DVector<f64>>> = stats
        .means
        .iter()
        .map(|class| class.iter().map(|m| &proj * (m - &overall) + &overall).collect())
        .collect();
    let mut covariance = w;
    for ((l, m), fitted) in stats.totals.iter().flatten().zip(stats.means.iter().flatten()).zip(means.iter().flatten()) {
        let d = m - fitted;
        covariance.ger(*l / n, &d, &d, 1.0);
    }
    if cov == CovFlavor::Diagonal {
        covariance = DMatrix::from_diagonal(&covariance.diagonal());
    }
    linalg::apply_ridge(&mut covariance);
    Ok(RankStep {
        means,
        covariance,
        directions,
    })
}

/// Fit from an unconstrained start with the same component counts.
pub fn fit_rr_mda(ds: &LabeledDataset, r_k: &[usize], rank: usize, opts: &FitOptions, seed: u64) -> Result<RrMdaModel> {
    let init = fit_unconstrained(ds, r_k, opts, seed)?;
    fit_rr_mda_from(ds, &init.mixture, rank, opts, seed)
}

pub fn fit_rr_mda_from(ds: &LabeledDataset, init: &Mixture, rank: usize, opts: &FitOptions, seed: u64) -> Result<RrMdaModel> {
    init.validate()?;
    let r = init.total_components();
    if rank == 0 || rank > ds.p().min(r.saturating_sub(1)) {
        return Err(Error::InvalidArgument(format!(
            "rank {rank} outside 1..={} for {r} components in R^{}",
            ds.p().min(r.saturating_sub(1)),
            ds.p()
        )));
    }
    let slack = 1e-8 * ds.n() as f64;
    let mut model = init.clone();
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut directions;
    let mut resp = model.e_step(ds)?;
    loop {
        let stats = ComponentStats::from_responsibilities(ds.x(), &resp, &model.means);
        model.weights = m_step_priors(&resp)?;
        let step = rank_m_step(&stats, rank, opts.cov)?;
        model.means = step.means;
        model.covariance = step.covariance;
        directions = step.directions;

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
    Ok(RrMdaModel {
        mixture: model,
        rank,
        disc_basis: orthonormalize(&directions)?,
        cov: opts.cov,
        trace,
        converged,
        seed,
    })
}
