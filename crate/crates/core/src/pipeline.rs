//! Experiment orchestration: bandwidth ladder, one candidate subspace per
//! level, constrained fits, selection by training likelihood, evaluation,
//! reports and cross-validation.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cgmm::{fit_unconstrained, gem_fit_from, ConstrainedGmm, ConstraintFlavor, FitOptions, ModelDocument};
use crate::dataset::{center_by_class, class_stats, fold_split, sigma_hat, split_folds, LabeledDataset};
use crate::error::{Error, Result};
use crate::evaluate::{classification_error, clustering_error, EvalResult};
use crate::mda_rr::{fit_rr_mda_from, RrMdaModel};
use crate::mixture::{CovFlavor, Mixture};
use crate::modes::{hmac_ladder, same_clustering, LadderOptions, ModeSet};
use crate::subspace::{closeness, mpca, mpca_mean, Subspace, DEFAULT_GAMMA};

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "GMM-MPCA")]
    GmmMpca,
    #[serde(rename = "GMM-MPCA-MEAN")]
    GmmMpcaMean,
    #[serde(rename = "GMM-MPCA-SEP")]
    GmmMpcaSep,
    #[serde(rename = "MDA-RR")]
    MdaRr,
    #[serde(rename = "MDA-DR-MPCA")]
    MdaDrMpca,
    #[serde(rename = "MDA-DR-MPCA-MEAN")]
    MdaDrMpcaMean,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::GmmMpca,
        Method::GmmMpcaMean,
        Method::GmmMpcaSep,
        Method::MdaRr,
        Method::MdaDrMpca,
        Method::MdaDrMpcaMean,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::GmmMpca => "GMM-MPCA",
            Method::GmmMpcaMean => "GMM-MPCA-MEAN",
            Method::GmmMpcaSep => "GMM-MPCA-SEP",
            Method::MdaRr => "MDA-RR",
            Method::MdaDrMpca => "MDA-DR-MPCA",
            Method::MdaDrMpcaMean => "MDA-DR-MPCA-MEAN",
        }
    }

    fn uses_class_means(self) -> bool {
        matches!(self, Method::GmmMpcaMean | Method::MdaDrMpcaMean)
    }

    fn projects(self) -> bool {
        matches!(self, Method::MdaDrMpca | Method::MdaDrMpcaMean)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let names: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::InvalidArgument(format!("unknown method {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    #[default]
    Classify,
    Cluster,
}

/// Bandwidths `lo * sigma_hat ..= hi * sigma_hat`, `count` equally spaced
/// values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthGrid {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl Default for BandwidthGrid {
    fn default() -> Self {
        Self {
            lo: 0.1,
            hi: 2.0,
            count: 20,
        }
    }
}

impl BandwidthGrid {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 || !(self.lo > 0.0) || (self.count > 1 && !(self.lo < self.hi)) {
            return Err(Error::InvalidArgument(format!(
                "bandwidth grid needs 0 < lo < hi and count >= 1, got lo={} hi={} count={}",
                self.lo, self.hi, self.count
            )));
        }
        Ok(())
    }

    pub fn sigmas(&self, sigma_hat: f64) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.lo * sigma_hat];
        }
        let step = (self.hi - self.lo) / (self.count - 1) as f64;
        (0..self.count).map(|i| (self.lo + step * i as f64) * sigma_hat).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub method: Method,
    pub task: Task,
    /// Subspace dimension (`d'` for GMM-MPCA-SEP, rank `L` for MDA-RR).
    pub d: usize,
    /// Components per class (per cluster model when clustering).
    pub components: usize,
    pub grid: BandwidthGrid,
    /// Percent of weight on class means for the MPCA-MEAN methods.
    pub gamma: f64,
    /// Cross-validation folds; 0 or 1 disables cross-validation.
    pub folds: usize,
    pub seed: u64,
    pub fit: FitOptions,
    pub ladder: LadderOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: Method::GmmMpca,
            task: Task::Classify,
            d: 2,
            components: 3,
            grid: BandwidthGrid::default(),
            gamma: DEFAULT_GAMMA,
            folds: 0,
            seed: 0,
            fit: FitOptions::default(),
            ladder: LadderOptions::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.d == 0 {
            return Err(Error::InvalidArgument("d must be at least 1".into()));
        }
        if self.components == 0 {
            return Err(Error::InvalidArgument("need at least one component per class".into()));
        }
        if !(0.0..=100.0).contains(&self.gamma) {
            return Err(Error::InvalidArgument(format!("gamma must be a percentage, got {}", self.gamma)));
        }
        if self.task == Task::Cluster && (self.method == Method::GmmMpcaSep || self.method.uses_class_means() || self.method.projects()) {
            return Err(Error::InvalidArgument(format!(
                "{} needs class labels; clustering supports GMM-MPCA and MDA-RR",
                self.method
            )));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkipReason {
    /// Fewer than three modes.
    TooFewModes,
    /// Same partition of the observations as the preceding level.
    SameClustering,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    /// 1-based position in the ladder.
    pub level: usize,
    pub sigma: Option<f64>,
    pub modes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<SkipReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_likelihood: Option<f64>,
    /// Error of this level's model on the evaluation data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_error: Option<f64>,
    /// Mean closeness between this level's subspace and those of all earlier
    /// fitted levels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closeness: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub schema: u32,
    pub method: Method,
    pub task: Task,
    pub d: usize,
    pub discriminant_dim: usize,
    pub components: Vec<usize>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_hat: Option<f64>,
    pub skip_rule: String,
    pub levels: Vec<LevelReport>,
    /// Index into `levels` of the selected candidate.
    pub selected: usize,
    pub log_likelihood: f64,
    /// Evaluation on the test set (classification) or the training set
    /// (clustering, or classification without a test set).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluation: Option<EvalResult>,
    pub evaluated_on: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_path: Option<String>,
}

impl FitReport {
    pub fn error_rate(&self) -> Option<f64> {
        self.evaluation.as_ref().map(|e| e.error_rate)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(s)?;
        if r.schema != REPORT_SCHEMA {
            return Err(Error::InvalidArgument(format!("unsupported report schema {}", r.schema)));
        }
        Ok(r)
    }
}

/// The model picked by a run.
#[derive(Debug, Clone)]
pub enum FittedModel {
    Constrained(ConstrainedGmm),
    ReducedRank(RrMdaModel),
    /// A standard mixture fitted on data projected onto `subspace`'s
    /// constrained coordinates.
    Projected { subspace: Subspace, mixture: Mixture },
}

impl FittedModel {
    /// Orthonormal basis (in the original coordinates) of the model's
    /// discriminant subspace.
    pub fn discriminant_basis(&self) -> Result<DMatrix<f64>> {
        match self {
            FittedModel::Constrained(m) => m.discriminant_basis(),
            FittedModel::ReducedRank(m) => Ok(m.disc_basis.clone()),
            FittedModel::Projected { subspace, .. } => Ok(subspace.constrained().clone()),
        }
    }

    /// Labels for new data: classes for classification models, components
    /// for one-class models.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<usize>> {
        let (mixture, x) = match self {
            FittedModel::Constrained(m) => (&m.mixture, x.clone()),
            FittedModel::ReducedRank(m) => (&m.mixture, x.clone()),
            FittedModel::Projected { subspace, mixture } => (mixture, x * subspace.constrained()),
        };
        if mixture.k() == 1 {
            mixture.cluster(&x)
        } else {
            Ok(mixture.classify(&x)?.0)
        }
    }

    pub fn to_json(&self) -> Result<String> {
        match self {
            FittedModel::Constrained(m) => m.to_json(),
            FittedModel::ReducedRank(m) => m.to_json(),
            FittedModel::Projected { subspace, mixture } => {
                let doc = ModelDocument {
                    schema: crate::cgmm::SCHEMA_VERSION,
                    flavor: "MDA-PROJECTED".into(),
                    k: mixture.k(),
                    r_k: mixture.components(),
                    mixture: mixture.clone(),
                    cov_flavor: CovFlavor::Full,
                    subspace: Some(subspace.clone()),
                    rank: None,
                    disc_basis: None,
                    trace: Vec::new(),
                    converged: true,
                    seed: 0,
                };
                Ok(serde_json::to_string_pretty(&doc)?)
            }
        }
    }

    /// Load any model written by [`FittedModel::to_json`].
    pub fn from_json(s: &str) -> Result<Self> {
        let doc = ModelDocument::from_json(s)?;
        match doc.flavor.as_str() {
            "MDA-RR" => Ok(FittedModel::ReducedRank(RrMdaModel::from_json(s)?)),
            "MDA-PROJECTED" => Ok(FittedModel::Projected {
                subspace: doc
                    .subspace
                    .ok_or_else(|| Error::InvalidArgument("projected model without a subspace".into()))?,
                mixture: doc.mixture,
            }),
            _ => Ok(FittedModel::Constrained(ConstrainedGmm::from_json(s)?)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: FitReport,
    pub model: FittedModel,
}

struct Candidate {
    level: usize,
    subspace: Subspace,
}

/// Run one method end to end. Classification evaluates on `test` when given
/// (else on `train`); clustering fits on `train` without its labels and, if
/// `train` is labeled, scores the clusters against them.
pub fn run_method(config: &ExperimentConfig, train: &LabeledDataset, test: Option<&LabeledDataset>) -> Result<RunOutcome> {
    config.validate()?;
    let fit_data = match config.task {
        Task::Classify => {
            if !train.is_labeled() {
                return Err(Error::Unlabeled("classification"));
            }
            train.clone()
        }
        Task::Cluster => train.without_labels(),
    };
    let r_k = vec![config.components; fit_data.groups().len()];
    let init = fit_unconstrained(&fit_data, &r_k, &config.fit, config.seed)?;

    let (eval_x, eval_truth, evaluated_on) = match (config.task, test) {
        (Task::Classify, Some(t)) => (t.x().clone(), t.labels().map(<[usize]>::to_vec), "test"),
        _ => (train.x().clone(), train.labels().map(<[usize]>::to_vec), "train"),
    };
    let score = |pred: &[usize]| -> Result<Option<EvalResult>> {
        let Some(truth) = &eval_truth else { return Ok(None) };
        let k = train.k();
        match config.task {
            Task::Classify => classification_error(truth, pred, k).map(Some),
            Task::Cluster => clustering_error(truth, pred, k).map(Some),
        }
    };

    if config.method == Method::MdaRr {
        let model = fit_rr_mda_from(&fit_data, &init.mixture, config.d, &config.fit, config.seed)?;
        let fitted = FittedModel::ReducedRank(model);
        let evaluation = score(&fitted.predict(&eval_x)?)?;
        let ll = match &fitted {
            FittedModel::ReducedRank(m) => m.log_likelihood(),
            _ => unreachable!(),
        };
        let report = FitReport {
            schema: REPORT_SCHEMA,
            method: config.method,
            task: config.task,
            d: config.d,
            discriminant_dim: config.d,
            components: r_k,
            seed: config.seed,
            sigma_hat: None,
            skip_rule: String::new(),
            levels: vec![LevelReport {
                level: 1,
                sigma: None,
                modes: None,
                skipped: None,
                log_likelihood: Some(ll),
                test_error: evaluation.as_ref().map(|e| e.error_rate),
                closeness: None,
            }],
            selected: 0,
            log_likelihood: ll,
            evaluation,
            evaluated_on: evaluated_on.into(),
            model_path: None,
        };
        return Ok(RunOutcome { report, model: fitted });
    }

    // candidate subspaces
    let separate = config.method == Method::GmmMpcaSep;
    let ladder_data = if separate { center_by_class(&fit_data)? } else { fit_data.clone() };
    let s_hat = sigma_hat(ladder_data.x());
    let stats = if config.method.uses_class_means() { Some(class_stats(&fit_data)?) } else { None };
    let mut levels = Vec::new();
    let mut candidates = Vec::new();
    let fixed_means = stats.as_ref().is_some_and(|cs| config.d < cs.means.len());
    if fixed_means {
        let cs = stats.as_ref().expect("checked above");
        candidates.push(Candidate {
            level: 0,
            subspace: mpca_mean(None, cs, config.d, config.gamma)?,
        });
        levels.push(LevelReport {
            level: 1,
            sigma: None,
            modes: None,
            skipped: None,
            log_likelihood: None,
            test_error: None,
            closeness: None,
        });
    } else {
        let ladder = hmac_ladder(ladder_data.x(), &config.grid.sigmas(s_hat), &config.ladder)?;
        let mut previous: Option<&ModeSet> = None;
        for (l, ms) in ladder.levels.iter().enumerate() {
            let skipped = if ms.is_skippable() {
                Some(SkipReason::TooFewModes)
            } else if previous.is_some_and(|p| same_clustering(&p.assignment, &ms.assignment)) {
                Some(SkipReason::SameClustering)
            } else {
                None
            };
            previous = Some(ms);
            if skipped.is_none() {
                let subspace = match &stats {
                    Some(cs) => mpca_mean(Some(ms), cs, config.d, config.gamma)?,
                    None => mpca(ms, config.d)?,
                };
                candidates.push(Candidate { level: l, subspace });
            }
            levels.push(LevelReport {
                level: l + 1,
                sigma: Some(ms.sigma),
                modes: Some(ms.len()),
                skipped,
                log_likelihood: None,
                test_error: None,
                closeness: None,
            });
        }
        if candidates.is_empty() {
            return Err(Error::AllLevelsSkipped);
        }
    }

    let mut opts = config.fit;
    opts.flavor = if separate { ConstraintFlavor::PerClass } else { ConstraintFlavor::Shared };
    let fits: Vec<ConstrainedGmm> = candidates
        .par_iter()
        .map(|c| gem_fit_from(&fit_data, &init.mixture, &c.subspace, &opts, config.seed))
        .collect::<Result<_>>()?;

    // a level's model, as evaluated
    let level_model = |fit: &ConstrainedGmm| -> Result<FittedModel> {
        if config.method.projects() {
            let projected = fit_data.project(fit.subspace.constrained())?;
            let mda = fit_unconstrained(&projected, &r_k, &config.fit, config.seed)?;
            Ok(FittedModel::Projected {
                subspace: fit.subspace.clone(),
                mixture: mda.mixture,
            })
        } else {
            Ok(FittedModel::Constrained(fit.clone()))
        }
    };
    let level_models: Vec<FittedModel> = fits.par_iter().map(level_model).collect::<Result<_>>()?;
    let level_errors: Vec<Option<EvalResult>> = level_models
        .par_iter()
        .map(|m| score(&m.predict(&eval_x)?))
        .collect::<Result<_>>()?;

    let mut best = 0;
    for (i, f) in fits.iter().enumerate() {
        // strictly greater keeps ties at the smaller bandwidth
        if f.log_likelihood() > fits[best].log_likelihood() {
            best = i;
        }
    }
    let slot = |c: &Candidate| if fixed_means { 0 } else { c.level };
    for (i, (c, f)) in candidates.iter().zip(&fits).enumerate() {
        let lr = &mut levels[slot(c)];
        lr.log_likelihood = Some(f.log_likelihood());
        lr.test_error = level_errors[i].as_ref().map(|e| e.error_rate);
        if i > 0 {
            let total: f64 = candidates[..i]
                .iter()
                .map(|prev| closeness(&prev.subspace, &c.subspace))
                .sum::<Result<f64>>()?;
            lr.closeness = Some(total / i as f64);
        }
    }

    let chosen = &fits[best];
    let report = FitReport {
        schema: REPORT_SCHEMA,
        method: config.method,
        task: config.task,
        d: config.d,
        discriminant_dim: chosen.discriminant_dim(),
        components: r_k,
        seed: config.seed,
        sigma_hat: (!fixed_means).then_some(s_hat),
        skip_rule: "levels with fewer than 3 modes, or with the same partition of the observations as the preceding level, are skipped".into(),
        levels,
        selected: slot(&candidates[best]),
        log_likelihood: chosen.log_likelihood(),
        evaluation: level_errors[best].clone(),
        evaluated_on: evaluated_on.into(),
        model_path: None,
    };
    Ok(RunOutcome {
        report,
        model: level_models.into_iter().nth(best).expect("best indexes a fit"),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub schema: u32,
    pub method: Method,
    pub folds: usize,
    pub seed: u64,
    pub per_fold: Vec<f64>,
    pub mean_error: f64,
    pub fold_reports: Vec<FitReport>,
}

/// Stratified `config.folds`-fold cross-validation of a classification
/// method.
pub fn cross_validate(config: &ExperimentConfig, ds: &LabeledDataset) -> Result<CvReport> {
    if config.task != Task::Classify {
        return Err(Error::InvalidArgument("cross-validation applies to classification".into()));
    }
    let assignment = split_folds(ds, config.folds, config.seed)?;
    let fold_reports: Vec<FitReport> = (0..config.folds)
        .map(|f| {
            let (train, test) = fold_split(ds, &assignment, f)?;
            Ok(run_method(config, &train, Some(&test))?.report)
        })
        .collect::<Result<_>>()?;
    let per_fold: Vec<f64> = fold_reports.iter().map(|r| r.error_rate().unwrap_or(f64::NAN)).collect();
    let mean_error = per_fold.iter().sum::<f64>() / per_fold.len() as f64;
    Ok(CvReport {
        schema: REPORT_SCHEMA,
        method: config.method,
        folds: config.folds,
        seed: config.seed,
        per_fold,
        mean_error,
        fold_reports,
    })
}

pub fn emit_report<T: Serialize>(report: &T, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, report)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// One CSV row per fitted level: `level,sigma,loglik,test_error,closeness`.
/// Missing values are left empty.
pub fn emit_plotdata(report: &FitReport, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["level", "sigma", "loglik", "test_error", "closeness"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for l in report.levels.iter().filter(|l| l.log_likelihood.is_some()) {
        w.write_record([l.level.to_string(), opt(l.sigma), opt(l.log_likelihood), opt(l.test_error), opt(l.closeness)])?;
    }
    w.flush()?;
    Ok(())
}
