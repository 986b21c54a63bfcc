//! Gaussian mixtures with one covariance shared by every component of every
//! class, plus the E-step, likelihood and decision rules common to all the
//! estimators in this crate.
//!
//! A classification model has `K >= 2` classes, each modeled by its own set of
//! components. A clustering model is the one-class case `K = 1`.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::{self, log_sum_exp};
use crate::modes::ModalDensity;
use crate::serde_util;

/// Responsibilities are floored here before normalizing.
pub const RESPONSIBILITY_FLOOR: f64 = 1e-300;
/// Components with less total responsibility than this are treated as empty.
pub const EMPTY_COMPONENT: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovFlavor {
    #[default]
    Full,
    Diagonal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mixture {
    /// `a_k`, one per class.
    pub class_priors: Vec<f64>,
    /// `pi_kr`, component weights within each class.
    pub weights: Vec<Vec<f64>>,
    /// `mu_kr`.
    #[serde(with = "nested_vectors")]
    pub means: Vec<Vec<DVector<f64>>>,
    #[serde(with = "serde_util::rows")]
    pub covariance: DMatrix<f64>,
}

mod nested_vectors {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[Vec<DVector<f64>>], s: S) -> Result<S::Ok, S::Error> {
        v.iter()
            .map(|class| class.iter().map(|m| m.as_slice()).collect::<Vec<_>>())
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<DVector<f64>>>, D::Error> {
        Ok(Vec::<Vec<Vec<f64>>>::deserialize(d)?
            .into_iter()
            .map(|class| class.into_iter().map(DVector::from_vec).collect())
            .collect())
    }
}

impl Mixture {
    pub fn k(&self) -> usize {
        self.class_priors.len()
    }

    pub fn p(&self) -> usize {
        self.covariance.nrows()
    }

    /// Components per class.
    pub fn components(&self) -> Vec<usize> {
        self.weights.iter().map(Vec::len).collect()
    }

    pub fn total_components(&self) -> usize {
        self.weights.iter().map(Vec::len).sum()
    }

    /// Check priors, shapes and covariance symmetry.
    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if k == 0 || self.weights.len() != k || self.means.len() != k {
            return Err(Error::InvalidArgument("inconsistent class counts in mixture".into()));
        }
        let p = self.p();
        if self.covariance.ncols() != p {
            return Err(Error::DimensionMismatch("covariance is not square".into()));
        }
        let sum_a: f64 = self.class_priors.iter().sum();
        if (sum_a - 1.0).abs() > 1e-10 || self.class_priors.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::InvalidArgument(format!("class priors sum to {sum_a}")));
        }
        for (w, m) in self.weights.iter().zip(&self.means) {
            if w.is_empty() || w.len() != m.len() {
                return Err(Error::InvalidArgument("class without components".into()));
            }
            let s: f64 = w.iter().sum();
            if (s - 1.0).abs() > 1e-10 || w.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(Error::InvalidArgument(format!("component priors sum to {s}")));
            }
            if m.iter().any(|mu| mu.len() != p) {
                return Err(Error::DimensionMismatch("component mean has wrong dimension".into()));
            }
        }
        if (&self.covariance - self.covariance.transpose()).amax() > 1e-10 * self.covariance.amax().max(1.0) {
            return Err(Error::InvalidArgument("covariance is not symmetric".into()));
        }
        Ok(())
    }

    fn evaluator(&self) -> Result<Evaluator<'_>> {
        Evaluator::new(self)
    }

    /// Per-point log densities `log(a_k f_k(x))` for every class, as an
    /// `n x K` matrix.
    pub fn class_log_joint(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let ev = self.evaluator()?;
        let z = ev.whiten_rows(x)?;
        let n = x.nrows();
        let mut out = DMatrix::zeros(n, self.k());
        for i in 0..n {
            let zi = z.column(i);
            for k in 0..self.k() {
                let terms = ev.component_terms(&zi, k);
                out[(i, k)] = self.class_priors[k].ln() + log_sum_exp(&terms);
            }
        }
        Ok(out)
    }

    /// Sum of log densities: joint `log(a_y f_y(x))` for labeled data,
    /// marginal `log sum_k a_k f_k(x)` for unlabeled data.
    pub fn log_likelihood(&self, ds: &LabeledDataset) -> Result<f64> {
        let joint = self.class_log_joint(ds.x())?;
        Ok(match ds.labels() {
            Some(labels) => {
                self.check_classes(ds)?;
                labels.iter().enumerate().map(|(i, &k)| joint[(i, k)]).sum()
            }
            None => joint
                .row_iter()
                .map(|r| log_sum_exp(&r.iter().copied().collect::<Vec<_>>()))
                .sum(),
        })
    }

    fn check_classes(&self, ds: &LabeledDataset) -> Result<()> {
        let expected = if ds.is_labeled() { ds.k() } else { 1 };
        if self.k() != expected {
            return Err(Error::DimensionMismatch(format!(
                "model has {} classes, data has {expected}",
                self.k()
            )));
        }
        if ds.p() != self.p() {
            return Err(Error::DimensionMismatch(format!("model is {}-dimensional, data {}", self.p(), ds.p())));
        }
        Ok(())
    }

    /// Bayes rule `argmax_k a_k f_k(x)` with ties to the lowest class index.
    /// Returns labels and the `n x K` class posteriors.
    pub fn classify(&self, x: &DMatrix<f64>) -> Result<(Vec<usize>, DMatrix<f64>)> {
        let joint = self.class_log_joint(x)?;
        let mut post = joint.clone();
        let labels = (0..x.nrows())
            .map(|i| {
                let row: Vec<f64> = joint.row(i).iter().copied().collect();
                let lse = log_sum_exp(&row);
                for (k, v) in row.iter().enumerate() {
                    post[(i, k)] = (v - lse).exp();
                }
                argmax(&row)
            })
            .collect();
        Ok((labels, post))
    }

    /// Most probable component for each row under a one-class model, ties to
    /// the lowest index.
    pub fn cluster(&self, x: &DMatrix<f64>) -> Result<Vec<usize>> {
        if self.k() != 1 {
            return Err(Error::InvalidArgument(format!(
                "clustering needs a one-class model, got {} classes",
                self.k()
            )));
        }
        let ev = self.evaluator()?;
        let z = ev.whiten_rows(x)?;
        Ok((0..x.nrows()).map(|i| argmax(&ev.component_terms(&z.column(i), 0))).collect())
    }

    /// Posterior component probabilities within each observation's class.
    pub fn e_step(&self, ds: &LabeledDataset) -> Result<Responsibilities> {
        self.check_classes(ds)?;
        let ev = self.evaluator()?;
        let z = ev.whiten_rows(ds.x())?;
        let groups = ds.groups();
        let mut log_likelihood = 0.0;
        let mut q = Vec::with_capacity(groups.len());
        for (k, rows) in groups.iter().enumerate() {
            let r_k = self.weights[k].len();
            let mut qk = DMatrix::zeros(rows.len(), r_k);
            for (a, &i) in rows.iter().enumerate() {
                let terms = ev.component_terms(&z.column(i), k);
                let lse = log_sum_exp(&terms);
                log_likelihood += self.class_priors[k].ln() + lse;
                let mut total = 0.0;
                for (r, t) in terms.iter().enumerate() {
                    let v = (t - lse).exp().max(RESPONSIBILITY_FLOOR);
                    qk[(a, r)] = v;
                    total += v;
                }
                qk.row_mut(a).scale_mut(1.0 / total);
            }
            q.push(qk);
        }
        Ok(Responsibilities {
            groups,
            q,
            log_likelihood,
        })
    }

    /// Flatten into one mixture over all components with weights `a_k pi_kr`.
    pub fn flattened(&self) -> Result<SharedCovMixture> {
        let mut weights = Vec::new();
        let mut means = Vec::new();
        for k in 0..self.k() {
            for (w, m) in self.weights[k].iter().zip(&self.means[k]) {
                weights.push(self.class_priors[k] * w);
                means.push(m.clone());
            }
        }
        SharedCovMixture::new(weights, means, &self.covariance)
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

struct Evaluator<'a> {
    mixture: &'a Mixture,
    chol: Cholesky<f64, Dyn>,
    log_norm: f64,
    /// `L^{-1} mu_kr` where `Sigma = L L^t`.
    whitened_means: Vec<Vec<DVector<f64>>>,
}

impl<'a> Evaluator<'a> {
    fn new(mixture: &'a Mixture) -> Result<Self> {
        let p = mixture.p();
        let chol = linalg::symmetrized(&mixture.covariance)
            .cholesky()
            .ok_or(Error::NotPositiveDefinite("mixture covariance"))?;
        let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let log_norm = -0.5 * (p as f64 * (2.0 * PI).ln() + log_det);
        let l = chol.l();
        let whitened_means = mixture
            .means
            .iter()
            .map(|class| {
                class
                    .iter()
                    .map(|m| l.solve_lower_triangular(m).expect("cholesky factor is invertible"))
                    .collect()
            })
            .collect();
        Ok(Self {
            mixture,
            chol,
            log_norm,
            whitened_means,
        })
    }

    /// `p x n` matrix of whitened observations.
    fn whiten_rows(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.mixture.p() {
            return Err(Error::DimensionMismatch(format!(
                "data has {} columns, model {}",
                x.ncols(),
                self.mixture.p()
            )));
        }
        Ok(self
            .chol
            .l()
            .solve_lower_triangular(&x.transpose())
            .expect("cholesky factor is invertible"))
    }

    /// `log pi_kr + log phi(x | mu_kr, Sigma)` for each component of class `k`.
    fn component_terms(&self, z: &nalgebra::DVectorView<'_, f64>, k: usize) -> Vec<f64> {
        self.mixture.weights[k]
            .iter()
            .zip(&self.whitened_means[k])
            .map(|(w, m)| {
                let d2: f64 = z.iter().zip(m.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                w.ln() + self.log_norm - 0.5 * d2
            })
            .collect()
    }
}

/// Posterior component weights from an E-step.
#[derive(Debug, Clone)]
pub struct Responsibilities {
    /// Row indices of each class (all rows for one-class data).
    pub groups: Vec<Vec<usize>>,
    /// `n_k x R_k` posterior weights per class; rows sum to one.
    pub q: Vec<DMatrix<f64>>,
    /// Log-likelihood of the model that produced these responsibilities.
    pub log_likelihood: f64,
}

impl Responsibilities {
    /// `l_kr = sum_i q_ikr`.
    pub fn totals(&self) -> Vec<Vec<f64>> {
        self.q.iter().map(|qk| qk.row_sum().iter().copied().collect()).collect()
    }

    pub fn n(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }
}

/// Sufficient statistics of one E-step: per-component weights and weighted
/// means, and the pooled within-component scatter about those means.
#[derive(Debug, Clone)]
pub struct ComponentStats {
    /// `l_kr`.
    pub totals: Vec<Vec<f64>>,
    /// `xbar_kr`, the responsibility-weighted component means.
    pub means: Vec<Vec<DVector<f64>>>,
    /// `sum_kr sum_i q_ikr (x_i - xbar_kr)(x_i - xbar_kr)^t`.
    pub within: DMatrix<f64>,
}

impl ComponentStats {
    /// Accumulate statistics. Components whose total responsibility is below
    /// [`EMPTY_COMPONENT`] keep `fallback` as their weighted mean.
    pub fn from_responsibilities(x: &DMatrix<f64>, resp: &Responsibilities, fallback: &[Vec<DVector<f64>>]) -> Self {
        let p = x.ncols();
        let totals = resp.totals();
        let mut within = DMatrix::zeros(p, p);
        let mut means = Vec::with_capacity(resp.groups.len());
        for (k, rows) in resp.groups.iter().enumerate() {
            let xk = x.select_rows(rows);
            let qk = &resp.q[k];
            let mut class_means = Vec::with_capacity(qk.ncols());
            for r in 0..qk.ncols() {
                let l = totals[k][r];
                let w: Vec<f64> = qk.column(r).iter().copied().collect();
                let mean = if l < EMPTY_COMPONENT {
                    fallback[k][r].clone()
                } else {
                    linalg::weighted_mean(&xk, &w)
                };
                within += linalg::weighted_scatter(&xk, &w, &mean);
                class_means.push(mean);
            }
            means.push(class_means);
        }
        Self { totals, means, within }
    }

    /// Total weight, equal to the number of observations.
    pub fn n(&self) -> f64 {
        self.totals.iter().flatten().sum()
    }
}

/// `pi_kr = l_kr / n_k`.
pub fn m_step_priors(resp: &Responsibilities) -> Result<Vec<Vec<f64>>> {
    resp.totals()
        .into_iter()
        .zip(&resp.groups)
        .map(|(l, rows)| {
            if rows.is_empty() {
                return Err(Error::InvalidArgument("class with no observations".into()));
            }
            let nk: f64 = l.iter().sum();
            Ok(l.iter().map(|v| v / nk).collect())
        })
        .collect()
}

/// Shared covariance given component means:
/// `sum_kr sum_i q_ikr (x_i - mu_kr)(x_i - mu_kr)^t / n`, optionally reduced to
/// its diagonal, with the ridge floor applied.
pub fn covariance_given_means(stats: &ComponentStats, means: &[Vec<DVector<f64>>], flavor: CovFlavor) -> DMatrix<f64> {
    let mut s = stats.within.clone();
    for (k, class) in means.iter().enumerate() {
        for (r, mu) in class.iter().enumerate() {
            let diff = &stats.means[k][r] - mu;
            s.ger(stats.totals[k][r], &diff, &diff, 1.0);
        }
    }
    s /= stats.n();
    if flavor == CovFlavor::Diagonal {
        s = DMatrix::from_diagonal(&s.diagonal());
    }
    linalg::apply_ridge(&mut s);
    s
}

/// Covariance M-step from responsibilities and fixed means.
pub fn m_step_covariance(ds: &LabeledDataset, resp: &Responsibilities, means: &[Vec<DVector<f64>>], flavor: CovFlavor) -> DMatrix<f64> {
    let stats = ComponentStats::from_responsibilities(ds.x(), resp, means);
    covariance_given_means(&stats, means, flavor)
}

/// A flat Gaussian mixture with shared covariance, for modal EM.
#[derive(Debug, Clone)]
pub struct SharedCovMixture {
    log_weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    chol: Cholesky<f64, Dyn>,
    log_norm: f64,
}

impl SharedCovMixture {
    pub fn new(weights: Vec<f64>, means: Vec<DVector<f64>>, covariance: &DMatrix<f64>) -> Result<Self> {
        if weights.len() != means.len() || weights.is_empty() {
            return Err(Error::DimensionMismatch("weights and means differ in length".into()));
        }
        let p = covariance.nrows();
        let chol = linalg::symmetrized(covariance)
            .cholesky()
            .ok_or(Error::NotPositiveDefinite("mixture covariance"))?;
        let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(Self {
            log_weights: weights.iter().map(|w| w.ln()).collect(),
            means,
            chol,
            log_norm: -0.5 * (p as f64 * (2.0 * PI).ln() + log_det),
        })
    }

    pub fn means(&self) -> &[DVector<f64>] {
        &self.means
    }

    fn terms(&self, x: &DVector<f64>) -> Vec<f64> {
        self.means
            .iter()
            .zip(&self.log_weights)
            .map(|(m, lw)| {
                let diff = x - m;
                let z = self.chol.l().solve_lower_triangular(&diff).expect("invertible factor");
                lw + self.log_norm - 0.5 * z.norm_squared()
            })
            .collect()
    }
}

impl ModalDensity for SharedCovMixture {
    fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    fn log_density(&self, x: &DVector<f64>) -> f64 {
        log_sum_exp(&self.terms(x))
    }

    fn modal_step(&self, x: &DVector<f64>) -> DVector<f64> {
        let t = self.terms(x);
        let lse = log_sum_exp(&t);
        let mut next = DVector::zeros(self.dim());
        for (m, v) in self.means.iter().zip(&t) {
            next.axpy((v - lse).exp(), m, 1.0);
        }
        next
    }
}
