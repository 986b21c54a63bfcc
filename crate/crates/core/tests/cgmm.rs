mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use subgauss::cgmm::{
    constraint_residual, em_from, fit_unconstrained, gem_fit, gem_fit_from, kmeans_start, solve_constrained_means, ConstrainedGmm,
    ConstraintFlavor, FitOptions,
};
use subgauss::dataset::LabeledDataset;
use subgauss::mixture::{ComponentStats, CovFlavor};
use subgauss::subspace::{Provenance, Subspace};

fn stats(means: Vec<Vec<DVector<f64>>>, totals: Vec<Vec<f64>>) -> ComponentStats {
    let p = means[0][0].len();
    ComponentStats {
        totals,
        means,
        within: DMatrix::zeros(p, p),
    }
}

fn random_stats(k: usize, r: usize, p: usize, rng: &mut rand_chacha::ChaCha8Rng) -> ComponentStats {
    stats(
        (0..k)
            .map(|_| (0..r).map(|_| DVector::from_fn(p, |_, _| 3.0 * common::normal(rng))).collect())
            .collect(),
        (0..k).map(|_| (0..r).map(|_| rng.random_range(1.0..40.0)).collect()).collect(),
    )
}

fn null_only(p: usize) -> Subspace {
    Subspace::from_parts(DMatrix::zeros(p, 0), DMatrix::identity(p, p), Provenance::User).unwrap()
}

fn assert_monotone(trace: &[f64], n: usize) {
    for w in trace.windows(2) {
        assert!(w[1] >= w[0] - 1e-8 * n as f64, "likelihood fell from {} to {}", w[0], w[1]);
    }
}

#[test]
fn fully_constrained_means_collapse_to_global_mean() {
    let mut rng = common::rng(1);
    let s = random_stats(2, 3, 3, &mut rng);
    let sigma = common::random_spd(3, &mut rng);
    let n: f64 = s.totals.iter().flatten().sum();
    let mut global = DVector::zeros(3);
    for (l, m) in s.totals.iter().flatten().zip(s.means.iter().flatten()) {
        global.axpy(l / n, m, 1.0);
    }
    let out = solve_constrained_means(&s, &sigma, &null_only(3), ConstraintFlavor::Shared).unwrap();
    for m in out.iter().flatten() {
        assert!((m - &global).amax() < 1e-10);
    }

    let per = solve_constrained_means(&s, &sigma, &null_only(3), ConstraintFlavor::PerClass).unwrap();
    for (k, class) in per.iter().enumerate() {
        let nk: f64 = s.totals[k].iter().sum();
        let mut mean = DVector::zeros(3);
        for (l, m) in s.totals[k].iter().zip(&s.means[k]) {
            mean.axpy(l / nk, m, 1.0);
        }
        for m in class {
            assert!((m - &mean).amax() < 1e-10);
        }
    }
}

#[test]
fn identity_covariance_replaces_null_coordinates_by_pooled_values() {
    let mut rng = common::rng(2);
    let sub = common::random_subspace(5, 2, &mut rng);
    let s = random_stats(3, 2, 5, &mut rng);
    let out = solve_constrained_means(&s, &DMatrix::identity(5, 5), &sub, ConstraintFlavor::Shared).unwrap();
    let n: f64 = s.totals.iter().flatten().sum();
    let mut pooled = DVector::zeros(3);
    for (l, m) in s.totals.iter().flatten().zip(s.means.iter().flatten()) {
        pooled.axpy(l / n, &sub.null().tr_mul(m), 1.0);
    }
    for (got, xbar) in out.iter().flatten().zip(s.means.iter().flatten()) {
        assert!((sub.null().tr_mul(got) - &pooled).amax() < 1e-10);
        assert!((sub.constrained().tr_mul(got) - sub.constrained().tr_mul(xbar)).amax() < 1e-10);
    }
    assert!(constraint_residual(&out, &sub, ConstraintFlavor::Shared) < 1e-10);
}

#[test]
fn per_class_with_one_class_matches_shared() {
    let mut rng = common::rng(3);
    let sub = common::random_subspace(4, 2, &mut rng);
    let s = random_stats(1, 3, 4, &mut rng);
    let sigma = common::random_spd(4, &mut rng);
    let a = solve_constrained_means(&s, &sigma, &sub, ConstraintFlavor::Shared).unwrap();
    let b = solve_constrained_means(&s, &sigma, &sub, ConstraintFlavor::PerClass).unwrap();
    for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
        assert!((x - y).amax() < 1e-12);
    }
}

#[test]
fn unconstrained_subspace_returns_weighted_means() {
    let mut rng = common::rng(4);
    let s = random_stats(2, 2, 3, &mut rng);
    let out = solve_constrained_means(&s, &common::random_spd(3, &mut rng), &Subspace::full(3), ConstraintFlavor::Shared).unwrap();
    assert_eq!(out, s.means);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]
    #[test]
    fn mean_solver_matches_kkt_oracle(seed in 0u64..10_000, per_class in any::<bool>()) {
        let mut rng = common::rng(seed);
        let p = rng.random_range(2..=6);
        let q = rng.random_range(1..p);
        let k = rng.random_range(1..=3);
        let r = rng.random_range(1..=4);
        let sub = common::random_subspace(p, p - q, &mut rng);
        let sigma = common::random_spd(p, &mut rng);
        let s = random_stats(k, r, p, &mut rng);
        let flavor = if per_class { ConstraintFlavor::PerClass } else { ConstraintFlavor::Shared };
        let group: Vec<usize> = (0..k).flat_map(|c| std::iter::repeat_n(if per_class { c } else { 0 }, r)).collect();
        let xbar: Vec<DVector<f64>> = s.means.iter().flatten().cloned().collect();
        let l: Vec<f64> = s.totals.iter().flatten().copied().collect();
        let oracle = common::kkt_means(&xbar, &l, &group, &sigma, sub.null());
        let got = solve_constrained_means(&s, &sigma, &sub, flavor).unwrap();
        for (a, b) in got.iter().flatten().zip(&oracle) {
            prop_assert!((a - b).amax() < 1e-6);
        }
    }
}

#[test]
fn single_component_fit_is_class_means_and_pooled_scatter() {
    let mut rng = common::rng(5);
    let sub = common::random_subspace(3, 2, &mut rng);
    let truth = common::constrained_mixture(&sub, 3, 1, common::random_spd(3, &mut rng), 3.0, false, &mut rng);
    let ds = common::sample(&truth, 150, &mut rng);
    let fit = fit_unconstrained(&ds, &[1, 1, 1], &FitOptions::default(), 0).unwrap();
    let mut pooled = DMatrix::zeros(3, 3);
    for (k, rows) in ds.groups().iter().enumerate() {
        let mean = rows.iter().map(|&i| ds.row(i)).sum::<DVector<f64>>() / rows.len() as f64;
        assert!((&fit.mixture.means[k][0] - &mean).amax() < 1e-10);
        for &i in rows {
            let d = ds.row(i) - &mean;
            pooled += &d * d.transpose();
        }
    }
    pooled /= ds.n() as f64;
    assert!((&fit.mixture.covariance - pooled).amax() < 1e-10);
}

#[test]
fn two_blobs_are_recovered() {
    let mut rng = common::rng(6);
    let centers = [DVector::from_vec(vec![-5.0, 0.0]), DVector::from_vec(vec![5.0, 1.0])];
    let x = DMatrix::from_fn(400, 2, |i, j| centers[i % 2][j] + 0.5 * common::normal(&mut rng));
    let ds = LabeledDataset::unlabeled(x).unwrap();
    let fit = fit_unconstrained(&ds, &[2], &FitOptions::default(), 1).unwrap();
    for c in &centers {
        let nearest = fit.mixture.means[0].iter().map(|m| (m - c).amax()).fold(f64::INFINITY, f64::min);
        assert!(nearest < 0.1, "center {c} missed by {nearest}");
    }
    assert_monotone(&fit.trace, ds.n());
}

#[test]
fn fits_are_deterministic_given_seed() {
    let mut rng = common::rng(7);
    let sub = common::random_subspace(4, 2, &mut rng);
    let truth = common::constrained_mixture(&sub, 2, 3, common::random_spd(4, &mut rng), 2.0, false, &mut rng);
    let ds = common::sample(&truth, 200, &mut rng);
    let a = gem_fit(&ds, &sub, &[3, 3], &FitOptions::default(), 9).unwrap();
    let b = gem_fit(&ds, &sub, &[3, 3], &FitOptions::default(), 9).unwrap();
    assert_eq!(a, b);
    assert_eq!(kmeans_start(&ds, &[3, 3], &FitOptions::default(), 9).unwrap(), kmeans_start(&ds, &[3, 3], &FitOptions::default(), 9).unwrap());
}

#[test]
fn fitted_likelihood_dominates_generating_parameters() {
    let mut rng = common::rng(8);
    for trial in 0..4 {
        let sub = common::random_subspace(5, 2, &mut rng);
        let truth = common::constrained_mixture(&sub, 2, 2, common::random_spd(5, &mut rng), 3.0, false, &mut rng);
        let ds = common::sample(&truth, 400, &mut rng);
        let fit = gem_fit_from(&ds, &truth, &sub, &FitOptions::default(), trial).unwrap();
        let generating = truth.log_likelihood(&ds).unwrap();
        assert!(fit.log_likelihood() >= generating - 1e-6 * ds.n() as f64);
        assert_monotone(&fit.trace, ds.n());
    }
}

#[test]
fn vacuous_constraint_reproduces_plain_em() {
    let mut rng = common::rng(9);
    let sub = common::random_subspace(4, 2, &mut rng);
    let truth = common::constrained_mixture(&sub, 2, 2, common::random_spd(4, &mut rng), 2.0, false, &mut rng);
    let ds = common::sample(&truth, 300, &mut rng);
    let opts = FitOptions::default();
    let start = kmeans_start(&ds, &[2, 2], &opts, 3).unwrap();
    let plain = em_from(&ds, start.clone(), &opts).unwrap();
    let gem = gem_fit_from(&ds, &start, &Subspace::full(4), &opts, 3).unwrap();
    assert_eq!(plain.reseeds, 0);
    assert_eq!(plain.trace.len(), gem.trace.len());
    for (a, b) in plain.trace.iter().zip(&gem.trace) {
        assert!((a - b).abs() <= 1e-8 * a.abs().max(1.0));
    }
}

#[test]
fn constraints_hold_for_every_flavor() {
    let mut rng = common::rng(10);
    for per_class in [false, true] {
        for cov in [CovFlavor::Full, CovFlavor::Diagonal] {
            let sub = common::random_subspace(6, 2, &mut rng);
            let truth = common::constrained_mixture(&sub, 3, 2, common::random_spd(6, &mut rng), 2.0, per_class, &mut rng);
            let ds = common::sample(&truth, 300, &mut rng);
            let flavor = if per_class { ConstraintFlavor::PerClass } else { ConstraintFlavor::Shared };
            let opts = FitOptions { flavor, cov, ..Default::default() };
            let fit = gem_fit(&ds, &sub, &[2, 2, 2], &opts, 1).unwrap();
            assert!(fit.constraint_residual() <= 1e-6);
            assert_monotone(&fit.trace, ds.n());
            fit.mixture.validate().unwrap();
            if cov == CovFlavor::Diagonal {
                let c = &fit.mixture.covariance;
                assert!((0..6).all(|i| (0..6).all(|j| i == j || c[(i, j)] == 0.0)));
            }
        }
    }
}

#[test]
fn per_class_discriminant_projection_preserves_labels() {
    let mut rng = common::rng(11);
    let sub = common::random_subspace(6, 2, &mut rng);
    let truth = common::constrained_mixture(&sub, 3, 2, common::random_spd(6, &mut rng), 2.0, true, &mut rng);
    let ds = common::sample(&truth, 300, &mut rng);
    let opts = FitOptions {
        flavor: ConstraintFlavor::PerClass,
        ..Default::default()
    };
    let fit = gem_fit(&ds, &sub, &[2, 2, 2], &opts, 2).unwrap();
    assert_eq!(fit.discriminant_dim(), 4);
    let d = fit.discriminant_basis().unwrap();
    assert_eq!(d.ncols(), 4);
    let full = fit.mixture.classify(ds.x()).unwrap().0;
    assert_eq!(full, common::projected_bayes(&fit.mixture, &d, ds.x()));
}

#[test]
fn model_json_round_trip_is_exact() {
    let mut rng = common::rng(12);
    let sub = common::random_subspace(4, 2, &mut rng);
    let truth = common::constrained_mixture(&sub, 2, 2, common::random_spd(4, &mut rng), 2.0, false, &mut rng);
    let ds = common::sample(&truth, 200, &mut rng);
    let fit = gem_fit(&ds, &sub, &[2, 2], &FitOptions::default(), 5).unwrap();
    let json = fit.to_json().unwrap();
    assert!(json.contains("\"schema\": 1"));
    assert_eq!(ConstrainedGmm::from_json(&json).unwrap(), fit);
    assert!(ConstrainedGmm::from_json(&json.replace("\"schema\": 1", "\"schema\": 7")).is_err());
}

#[test]
fn too_few_observations_for_components_is_rejected() {
    let ds = LabeledDataset::unlabeled(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 3.0])).unwrap();
    assert!(fit_unconstrained(&ds, &[3], &FitOptions::default(), 0).is_err());
    assert!(fit_unconstrained(&ds, &[1, 1], &FitOptions::default(), 0).is_err());
}
