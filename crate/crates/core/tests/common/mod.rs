//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use subgauss::dataset::LabeledDataset;
use subgauss::mixture::Mixture;
use subgauss::subspace::{Provenance, Subspace};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn random_matrix(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| normal(rng))
}

/// `A A^t / p + I/2`, well conditioned but far from diagonal.
pub fn random_spd(p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = random_matrix(p, p, rng);
    &a * a.transpose() / p as f64 + DMatrix::identity(p, p) * 0.5
}

pub fn random_subspace(p: usize, d: usize, rng: &mut ChaCha8Rng) -> Subspace {
    Subspace::from_basis(&random_matrix(p, d, rng), Provenance::User).unwrap()
}

/// Minimizer of `sum_m l_m (xbar_m - mu_m)^t Sigma^{-1} (xbar_m - mu_m)`
/// subject to `V^t mu_m = c_g` for the group `g` of each component, from the
/// stationarity conditions of the Lagrangian solved as one linear system.
///
/// Unknowns are ordered `mu_1..mu_M, lambda_1..lambda_M, c_1..c_G`.
pub fn kkt_means(
    xbar: &[DVector<f64>],
    l: &[f64],
    group: &[usize],
    sigma: &DMatrix<f64>,
    null: &DMatrix<f64>,
) -> Vec<DVector<f64>> {
    let m = xbar.len();
    let p = sigma.nrows();
    let q = null.ncols();
    let g = group.iter().max().unwrap() + 1;
    let size = m * p + m * q + g * q;
    let inv = sigma.clone().try_inverse().unwrap();
    let mut a = DMatrix::zeros(size, size);
    let mut b = DVector::zeros(size);
    let mu = |i: usize| i * p;
    let lam = |i: usize| m * p + i * q;
    let cc = |j: usize| m * p + m * q + j * q;
    let mut row = 0;
    for i in 0..m {
        // l_i Sigma^{-1} mu_i + V lambda_i = l_i Sigma^{-1} xbar_i
        a.view_mut((row, mu(i)), (p, p)).copy_from(&(&inv * l[i]));
        a.view_mut((row, lam(i)), (p, q)).copy_from(null);
        b.rows_mut(row, p).copy_from(&(&inv * &xbar[i] * l[i]));
        row += p;
    }
    for i in 0..m {
        // V^t mu_i - c_g = 0
        a.view_mut((row, mu(i)), (q, p)).copy_from(&null.transpose());
        a.view_mut((row, cc(group[i])), (q, q)).copy_from(&(-DMatrix::identity(q, q)));
        row += q;
    }
    for j in 0..g {
        // d/dc_j: -sum_{i in group j} lambda_i = 0
        for i in (0..m).filter(|&i| group[i] == j) {
            a.view_mut((row, lam(i)), (q, q)).copy_from(&DMatrix::identity(q, q));
        }
        row += q;
    }
    assert_eq!(row, size);
    let sol = a.full_piv_lu().solve(&b).expect("KKT system is nonsingular");
    (0..m).map(|i| sol.rows(mu(i), p).into_owned()).collect()
}

/// All permutations of `0..k`.
pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, left: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left.is_empty() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..left.len() {
            let v = left.remove(i);
            prefix.push(v);
            go(prefix, left, out);
            prefix.pop();
            left.insert(i, v);
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut (0..k).collect(), &mut out);
    out
}

/// Lowest error over every relabeling of predicted clusters `0..k`.
pub fn brute_force_clustering_error(truth: &[usize], pred: &[usize], k: usize) -> f64 {
    permutations(k)
        .iter()
        .map(|perm| {
            let wrong = truth.iter().zip(pred).filter(|(t, p)| perm[**p] != **t).count();
            wrong as f64 / truth.len() as f64
        })
        .fold(f64::INFINITY, f64::min)
}

/// A shared-covariance mixture whose means are `offset_k + V_c * coords`; one
/// offset for all classes unless `per_class`.
pub fn constrained_mixture(
    subspace: &Subspace,
    k: usize,
    r: usize,
    sigma: DMatrix<f64>,
    spread: f64,
    per_class: bool,
    rng: &mut ChaCha8Rng,
) -> Mixture {
    let p = subspace.p();
    let d = subspace.d();
    let shared = DVector::from_fn(p, |_, _| normal(rng));
    let means = (0..k)
        .map(|_| {
            let offset = if per_class { DVector::from_fn(p, |_, _| 2.0 * normal(rng)) } else { shared.clone() };
            (0..r)
                .map(|_| &offset + subspace.constrained() * DVector::from_fn(d, |_, _| spread * normal(rng)))
                .collect()
        })
        .collect();
    let norm = |v: Vec<f64>| {
        let t: f64 = v.iter().sum();
        v.into_iter().map(|x| x / t).collect::<Vec<_>>()
    };
    Mixture {
        class_priors: norm((0..k).map(|_| rng.random_range(0.5..1.5)).collect()),
        weights: (0..k).map(|_| norm((0..r).map(|_| rng.random_range(0.5..1.5)).collect())).collect(),
        means,
        covariance: sigma,
    }
}

/// Draw `n` labeled observations from a mixture (labels only if `k > 1`).
pub fn sample(m: &Mixture, n: usize, rng: &mut ChaCha8Rng) -> LabeledDataset {
    let p = m.p();
    let l = m.covariance.clone().cholesky().unwrap().l();
    let pick = |w: &[f64], rng: &mut ChaCha8Rng| {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, x) in w.iter().enumerate() {
            acc += x;
            if u < acc {
                return i;
            }
        }
        w.len() - 1
    };
    let mut x = DMatrix::zeros(n, p);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        // every class is represented
        let k = if i < m.k() { i } else { pick(&m.class_priors, rng) };
        let r = pick(&m.weights[k], rng);
        let z = DVector::from_fn(p, |_, _| normal(rng));
        let xi = &m.means[k][r] + &l * z;
        x.set_row(i, &xi.transpose());
        labels.push(k);
    }
    if m.k() > 1 {
        LabeledDataset::new(x, Some(labels)).unwrap()
    } else {
        LabeledDataset::unlabeled(x).unwrap()
    }
}

/// Bayes labels computed from scratch in the coordinates `D^t x`, with means
/// `D^t mu` and covariance `D^t Sigma D`.
pub fn projected_bayes(m: &Mixture, d: &DMatrix<f64>, x: &DMatrix<f64>) -> Vec<usize> {
    let s = d.transpose() * &m.covariance * d;
    let inv = s.clone().try_inverse().unwrap();
    let means: Vec<Vec<DVector<f64>>> = m.means.iter().map(|c| c.iter().map(|mu| d.tr_mul(mu)).collect()).collect();
    (0..x.nrows())
        .map(|i| {
            let z = d.tr_mul(&x.row(i).transpose());
            let scores: Vec<f64> = (0..m.k())
                .map(|k| {
                    let terms: Vec<f64> = m.weights[k]
                        .iter()
                        .zip(&means[k])
                        .map(|(w, mu)| {
                            let diff = &z - mu;
                            w.ln() - 0.5 * (diff.transpose() * &inv * &diff)[(0, 0)]
                        })
                        .collect();
                    let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    m.class_priors[k].ln() + top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln()
                })
                .collect();
            let mut best = 0;
            for (k, s) in scores.iter().enumerate() {
                if *s > scores[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}
