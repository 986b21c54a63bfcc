//! Unconstrained shared-covariance mixtures, fitted by plain EM from a
//! k-means++ start. These are the starting points of the constrained fits.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::FitOptions;
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::mixture::{covariance_given_means, m_step_priors, ComponentStats, Mixture, EMPTY_COMPONENT};

const LLOYD_ITERATIONS: usize = 20;

#[derive(Debug, Clone)]
pub struct UnconstrainedFit {
    pub mixture: Mixture,
    pub trace: Vec<f64>,
    pub converged: bool,
    /// Number of empty components re-seeded along the way.
    pub reseeds: usize,
}

/// Class priors `n_k / n`, or `[1]` for unlabeled data.
pub fn class_priors(ds: &LabeledDataset) -> Vec<f64> {
    let n = ds.n() as f64;
    ds.groups().iter().map(|g| g.len() as f64 / n).collect()
}

fn squared_distance(x: &DMatrix<f64>, i: usize, c: &DVector<f64>) -> f64 {
    x.row(i).iter().zip(c.iter()).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// k-means++ seeding followed by a few Lloyd iterations on one class.
/// Returns the centers and the hard assignment.
fn kmeans(x: &DMatrix<f64>, r: usize, rng: &mut ChaCha8Rng) -> (Vec<DVector<f64>>, Vec<usize>) {
    let n = x.nrows();
    let row = |i: usize| x.row(i).transpose();
    let mut centers = vec![row(rng.random_range(0..n))];
    let mut d2: Vec<f64> = (0..n).map(|i| squared_distance(x, i, &centers[0])).collect();
    while centers.len() < r {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if u < *w {
                    chosen = i;
                    break;
                }
                u -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = row(pick);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(squared_distance(x, i, &c));
        }
        centers.push(c);
    }

    let mut assign = vec![0; n];
    for _ in 0..LLOYD_ITERATIONS {
        let mut changed = false;
        for (i, a) in assign.iter_mut().enumerate() {
            let best = (0..r)
                .min_by(|&s, &t| squared_distance(x, i, &centers[s]).total_cmp(&squared_distance(x, i, &centers[t])))
                .unwrap_or(0);
            changed |= *a != best;
            *a = best;
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&i| assign[i] == c).collect();
            if !members.is_empty() {
                *center = members.iter().map(|&i| row(i)).sum::<DVector<f64>>() / members.len() as f64;
            }
        }
        if !changed {
            break;
        }
    }
    (centers, assign)
}

/// Hard-assignment starting mixture: per-class k-means++ and Lloyd, cluster
/// fractions as priors, pooled within-cluster scatter as covariance.
pub fn kmeans_start(ds: &LabeledDataset, r_k: &[usize], opts: &FitOptions, seed: u64) -> Result<Mixture> {
    let groups = ds.groups();
    if r_k.len() != groups.len() {
        return Err(Error::InvalidArgument(format!(
            "{} component counts given for {} classes",
            r_k.len(),
            groups.len()
        )));
    }
    let p = ds.p();
    let mut weights = Vec::new();
    let mut means = Vec::new();
    let mut scatter = DMatrix::zeros(p, p);
    for (k, (rows, &r)) in groups.iter().zip(r_k).enumerate() {
        if r == 0 || rows.len() < r {
            return Err(Error::InvalidArgument(format!(
                "class {k} has {} observations for {r} components",
                rows.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let xk = ds.x().select_rows(rows);
        let (centers, assign) = kmeans(&xk, r, &mut rng);
        let mut counts = vec![0usize; r];
        for (i, &a) in assign.iter().enumerate() {
            counts[a] += 1;
            let d = xk.row(i).transpose() - &centers[a];
            scatter.ger(1.0, &d, &d, 1.0);
        }
        // an empty k-means cluster still gets a small share
        let floor = 1.0 / rows.len() as f64;
        let raw: Vec<f64> = counts.iter().map(|&c| (c as f64 / rows.len() as f64).max(floor)).collect();
        let t: f64 = raw.iter().sum();
        weights.push(raw.iter().map(|w| w / t).collect());
        means.push(centers);
    }
    let mut covariance = scatter / ds.n() as f64;
    if opts.cov == crate::mixture::CovFlavor::Diagonal {
        covariance = DMatrix::from_diagonal(&covariance.diagonal());
    }
    linalg::apply_ridge(&mut covariance);
    Ok(Mixture {
        class_priors: class_priors(ds),
        weights,
        means,
        covariance,
    })
}

/// Standard EM for a shared-covariance mixture with `r_k[k]` components in
/// class `k`, started from [`kmeans_start`]. Deterministic given `seed`.
pub fn fit_unconstrained(ds: &LabeledDataset, r_k: &[usize], opts: &FitOptions, seed: u64) -> Result<UnconstrainedFit> {
    let start = kmeans_start(ds, r_k, opts, seed)?;
    em_from(ds, start, opts)
}

/// Plain EM from `start`. An empty component is moved onto the observation
/// of its class with the lowest class density and the fit restarts from
/// there, at most `opts.max_reseeds` times.
pub fn em_from(ds: &LabeledDataset, start: Mixture, opts: &FitOptions) -> Result<UnconstrainedFit> {
    start.validate()?;
    let slack = 1e-8 * ds.n() as f64;
    let mut model = start;
    let mut trace: Vec<f64> = Vec::new();
    let mut reseeds = 0;
    let mut converged = false;
    let mut resp = model.e_step(ds)?;
    loop {
        let stats = ComponentStats::from_responsibilities(ds.x(), &resp, &model.means);
        if let Some((k, r)) = first_empty(&stats) {
            reseeds += 1;
            if reseeds > opts.max_reseeds {
                return Err(Error::Degenerate(format!(
                    "component {r} of class {k} emptied after {} re-seeds",
                    opts.max_reseeds
                )));
            }
            reseed(ds, &mut model, &resp, k, r)?;
            trace.clear();
            resp = model.e_step(ds)?;
            continue;
        }
        model.weights = m_step_priors(&resp)?;
        model.covariance = covariance_given_means(&stats, &stats.means, opts.cov);
        model.means = stats.means;

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
    Ok(UnconstrainedFit {
        mixture: model,
        trace,
        converged,
        reseeds,
    })
}

fn first_empty(stats: &ComponentStats) -> Option<(usize, usize)> {
    stats.totals.iter().enumerate().find_map(|(k, l)| l.iter().position(|&v| v < EMPTY_COMPONENT).map(|r| (k, r)))
}

fn reseed(ds: &LabeledDataset, model: &mut Mixture, resp: &crate::mixture::Responsibilities, k: usize, r: usize) -> Result<()> {
    let rows = &resp.groups[k];
    let joint = model.class_log_joint(&ds.x().select_rows(rows))?;
    let worst = (0..rows.len())
        .min_by(|&a, &b| joint[(a, k)].total_cmp(&joint[(b, k)]))
        .expect("class is not empty");
    model.means[k][r] = ds.row(rows[worst]);
    let nk = rows.len() as f64;
    let w = &mut model.weights[k];
    w[r] = w[r].max(1.0 / nk);
    let t: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= t);
    Ok(())
}
