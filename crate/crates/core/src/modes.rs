//! Gaussian kernel density, modal-EM hill climbing and the hierarchical mode
//! association (HMAC) bandwidth ladder.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::log_sum_exp;
use crate::serde_util;

/// A density that modal EM can climb: a Gaussian mixture whose components
/// share one covariance, so the maximization step is a posterior-weighted
/// average of the component means.
pub trait ModalDensity: Sync {
    fn dim(&self) -> usize;

    fn log_density(&self, x: &DVector<f64>) -> f64;

    /// One modal-EM iteration from `x`.
    fn modal_step(&self, x: &DVector<f64>) -> DVector<f64>;
}

/// Equal-weight Gaussian kernels with spherical bandwidth `sigma` centered at
/// every observation.
#[derive(Debug, Clone)]
pub struct KernelDensity {
    /// `p x n`, one kernel center per column.
    centers: DMatrix<f64>,
    sigma: f64,
}

impl KernelDensity {
    /// `data` holds one observation per row.
    pub fn new(data: &DMatrix<f64>, sigma: f64) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::InvalidArgument("kernel density needs at least one center".into()));
        }
        check_bandwidth(sigma)?;
        Ok(Self {
            centers: data.transpose(),
            sigma,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn set_sigma(&mut self, sigma: f64) -> Result<()> {
        check_bandwidth(sigma)?;
        self.sigma = sigma;
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.centers.ncols()
    }

    /// `-|x - c_i|^2 / (2 sigma^2)` for every center.
    fn exponents(&self, x: &DVector<f64>) -> Vec<f64> {
        let scale = -0.5 / (self.sigma * self.sigma);
        self.centers
            .column_iter()
            .map(|c| {
                let d2: f64 = c.iter().zip(x.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                scale * d2
            })
            .collect()
    }
}

fn check_bandwidth(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("bandwidth must be positive, got {sigma}")))
    }
}

impl ModalDensity for KernelDensity {
    fn dim(&self) -> usize {
        self.centers.nrows()
    }

    fn log_density(&self, x: &DVector<f64>) -> f64 {
        let p = self.dim() as f64;
        let norm = -(self.n() as f64).ln() - 0.5 * p * (2.0 * PI * self.sigma * self.sigma).ln();
        norm + log_sum_exp(&self.exponents(x))
    }

    fn modal_step(&self, x: &DVector<f64>) -> DVector<f64> {
        let e = self.exponents(x);
        let max = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = e.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = w.iter().sum();
        let mut next = DVector::zeros(self.dim());
        for (c, wi) in self.centers.column_iter().zip(&w) {
            next.axpy(wi / total, &c, 1.0);
        }
        next
    }
}

/// Log of the kernel density estimate at `x`.
pub fn kde_log_density(kd: &KernelDensity, x: &DVector<f64>) -> f64 {
    kd.log_density(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AscentOptions {
    /// Stop once an iteration moves less than this (Euclidean).
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for AscentOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Ascent {
    pub point: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Run modal EM from `start`, returning wherever the iteration stopped.
pub fn ascend<D: ModalDensity + ?Sized>(density: &D, start: &DVector<f64>, opts: &AscentOptions) -> Ascent {
    let mut x = start.clone();
    for it in 1..=opts.max_iter {
        let next = density.modal_step(&x);
        let step = (&next - &x).norm();
        x = next;
        if step < opts.tol {
            return Ascent {
                point: x,
                iterations: it,
                converged: true,
            };
        }
    }
    Ascent {
        point: x,
        iterations: opts.max_iter,
        converged: false,
    }
}

/// Climb from `start` to a mode of `density`. Hitting the iteration cap is an
/// error.
pub fn modal_em_ascend<D: ModalDensity + ?Sized>(density: &D, start: &DVector<f64>, opts: &AscentOptions) -> Result<DVector<f64>> {
    let a = ascend(density, start, opts);
    if a.converged {
        Ok(a.point)
    } else {
        Err(Error::NoConvergence {
            what: "modal EM",
            iterations: a.iterations,
        })
    }
}

/// Modes found at one bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSet {
    pub sigma: f64,
    /// `m x p`, one mode per row.
    #[serde(with = "serde_util::rows")]
    pub modes: DMatrix<f64>,
    /// Fraction of observations that ascend to each mode.
    pub weights: Vec<f64>,
    /// Mode index for every observation.
    pub assignment: Vec<usize>,
    /// Ascents that hit the iteration cap (their last iterate was used).
    #[serde(default)]
    pub unconverged: usize,
}

impl ModeSet {
    pub fn len(&self) -> usize {
        self.modes.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Levels with fewer than three modes carry too little structure for a
    /// weighted PCA and are skipped by subspace sweeps.
    pub fn is_skippable(&self) -> bool {
        self.len() < 3
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeLadder {
    pub levels: Vec<ModeSet>,
}

impl ModeLadder {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LadderOptions {
    pub ascent: AscentOptions,
    /// Converged points closer than `merge_factor * sigma` share a mode.
    pub merge_factor: f64,
}

impl Default for LadderOptions {
    fn default() -> Self {
        Self {
            ascent: AscentOptions::default(),
            merge_factor: 1e-4,
        }
    }
}

/// Hierarchical mode association over increasing bandwidths.
///
/// Level `l` climbs the kernel density of `data` at `sigmas[l]` starting from
/// the modes of level `l - 1` (the raw observations for the first level) and
/// merges climbers that land together. Observations inherit the mode of the
/// representative they were attached to at the previous level.
pub fn hmac_ladder(data: &DMatrix<f64>, sigmas: &[f64], opts: &LadderOptions) -> Result<ModeLadder> {
    if sigmas.is_empty() {
        return Err(Error::InvalidArgument("bandwidth list is empty".into()));
    }
    for w in sigmas.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::InvalidArgument("bandwidths must be strictly increasing".into()));
        }
    }
    let n = data.nrows();
    let mut kd = KernelDensity::new(data, sigmas[0])?;
    let mut reps: Vec<DVector<f64>> = (0..n).map(|i| data.row(i).transpose()).collect();
    let mut assignment: Vec<usize> = (0..n).collect();
    let mut levels = Vec::with_capacity(sigmas.len());

    for &sigma in sigmas {
        kd.set_sigma(sigma)?;
        let ascents: Vec<Ascent> = reps.par_iter().map(|r| ascend(&kd, r, &opts.ascent)).collect();
        let unconverged = ascents.iter().filter(|a| !a.converged).count();
        if unconverged > 0 {
            log::warn!("{unconverged} ascents at sigma={sigma} hit the iteration cap");
        }

        let merge_tol = opts.merge_factor * sigma;
        let mut modes: Vec<DVector<f64>> = Vec::new();
        let rep_to_mode: Vec<usize> = ascents
            .iter()
            .map(|a| match modes.iter().position(|m| (m - &a.point).norm() < merge_tol) {
                Some(idx) => idx,
                None => {
                    modes.push(a.point.clone());
                    modes.len() - 1
                }
            })
            .collect();

        for a in assignment.iter_mut() {
            *a = rep_to_mode[*a];
        }
        let mut counts = vec![0usize; modes.len()];
        for &a in &assignment {
            counts[a] += 1;
        }
        let mode_matrix = DMatrix::from_rows(&modes.iter().map(|m| m.transpose()).collect::<Vec<_>>());
        levels.push(ModeSet {
            sigma,
            modes: mode_matrix,
            weights: counts.iter().map(|&c| c as f64 / n as f64).collect(),
            assignment: assignment.clone(),
            unconverged,
        });
        reps = modes;
    }
    Ok(ModeLadder { levels })
}

/// True when two labelings induce the same partition of the observations.
pub fn same_clustering(a: &[usize], b: &[usize]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut fwd: HashMap<usize, usize> = HashMap::new();
    let mut bwd: HashMap<usize, usize> = HashMap::new();
    a.iter().zip(b).all(|(&x, &y)| *fwd.entry(x).or_insert(y) == y && *bwd.entry(y).or_insert(x) == x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn single_kernel_mode_is_its_center() {
        let c = DMatrix::from_row_slice(1, 2, &[1.5, -2.0]);
        let kd = KernelDensity::new(&c, 0.7).unwrap();
        let m = modal_em_ascend(&kd, &col(&[10.0, 3.0]), &AscentOptions::default()).unwrap();
        assert!((m - col(&[1.5, -2.0])).norm() < 1e-12);
    }

    #[test]
    fn two_kernels_merge_at_large_bandwidth() {
        let c = DMatrix::from_row_slice(2, 1, &[-1.0, 1.0]);
        let kd = KernelDensity::new(&c, 2.0).unwrap();
        let m = modal_em_ascend(&kd, &col(&[0.3]), &AscentOptions::default()).unwrap();
        // brute-force grid maximum of the density
        let (mut best, mut arg) = (f64::NEG_INFINITY, 0.0);
        for i in 0..=400_000 {
            let x = -2.0 + 4.0 * i as f64 / 400_000.0;
            let v = kd.log_density(&col(&[x]));
            if v > best {
                best = v;
                arg = x;
            }
        }
        assert!((m[0] - arg).abs() < 1e-6, "{} vs {}", m[0], arg);
        assert!(m[0].abs() < 1e-6);
    }

    #[test]
    fn start_at_mode_stays() {
        let c = DMatrix::from_row_slice(3, 1, &[-1.0, 0.0, 1.0]);
        let kd = KernelDensity::new(&c, 1.0).unwrap();
        let a = ascend(&kd, &col(&[0.0]), &AscentOptions::default());
        assert!(a.converged);
        assert_eq!(a.iterations, 1);
        assert!(a.point[0].abs() < 1e-12);
    }

    #[test]
    fn peak_value_of_single_kernel() {
        let c = DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 2.0]);
        let sigma: f64 = 0.5;
        let kd = KernelDensity::new(&c, sigma).unwrap();
        let expect = -1.5 * (2.0 * PI * sigma * sigma).ln();
        assert!((kde_log_density(&kd, &col(&[0.0, 1.0, 2.0])) - expect).abs() < 1e-12);
    }

    #[test]
    fn symmetric_centers_give_symmetric_density() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -1.0, -2.0]);
        let kd = KernelDensity::new(&c, 0.8).unwrap();
        let a = kd.log_density(&col(&[1.0, 2.0]));
        let b = kd.log_density(&col(&[-1.0, -2.0]));
        assert_eq!(a, b);
    }

    #[test]
    fn log_density_matches_naive_sum() {
        let c = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 0.5, -0.3, 2.0, 0.7, -1.1]);
        let sigma: f64 = 0.9;
        let kd = KernelDensity::new(&c, sigma).unwrap();
        for x in [[0.1, 0.2], [2.0, -1.0], [-3.0, 4.0]] {
            let naive: f64 = (0..4)
                .map(|i| {
                    let d2 = (x[0] - c[(i, 0)]).powi(2) + (x[1] - c[(i, 1)]).powi(2);
                    0.25 * (-d2 / (2.0 * sigma * sigma)).exp() / (2.0 * PI * sigma * sigma)
                })
                .sum();
            let v = kd.log_density(&col(&x));
            assert!(((v - naive.ln()) / naive.ln()).abs() < 1e-10);
        }
    }

    #[test]
    fn log_density_survives_far_points() {
        let c = DMatrix::from_row_slice(1, 1, &[0.0]);
        let kd = KernelDensity::new(&c, 1.0).unwrap();
        // exponent -1250, naive exp underflows
        let v = kd.log_density(&col(&[50.0]));
        assert!((v - (-1250.0 - 0.5 * (2.0 * PI).ln())).abs() < 1e-9);
    }

    #[test]
    fn ascent_is_monotone() {
        let c = DMatrix::from_row_slice(6, 2, &[0.0, 0.0, 0.3, 0.1, 2.0, 2.0, 2.2, 1.9, -1.0, 3.0, 0.5, 0.4]);
        let kd = KernelDensity::new(&c, 0.6).unwrap();
        for start in [[3.0, -1.0], [-2.0, 4.0], [1.0, 1.0]] {
            let mut x = col(&start);
            let mut prev = kd.log_density(&x);
            for _ in 0..200 {
                x = kd.modal_step(&x);
                let cur = kd.log_density(&x);
                assert!(cur >= prev - 1e-12);
                prev = cur;
            }
        }
    }

    fn two_blobs() -> DMatrix<f64> {
        let mut rows = Vec::new();
        for i in 0..6 {
            rows.extend_from_slice(&[0.01 * i as f64, 0.0]);
        }
        for i in 0..4 {
            rows.extend_from_slice(&[10.0 + 0.01 * i as f64, 5.0]);
        }
        DMatrix::from_row_slice(10, 2, &rows)
    }

    #[test]
    fn ladder_finds_two_clusters() {
        let data = two_blobs();
        let ladder = hmac_ladder(&data, &[0.5], &LadderOptions::default()).unwrap();
        let level = &ladder.levels[0];
        // exhaustive check: ascend every point individually and merge
        let kd = KernelDensity::new(&data, 0.5).unwrap();
        let ends: Vec<DVector<f64>> = (0..10)
            .map(|i| modal_em_ascend(&kd, &data.row(i).transpose(), &AscentOptions::default()).unwrap())
            .collect();
        for i in 0..10 {
            for j in 0..10 {
                let together = (&ends[i] - &ends[j]).norm() < 1e-4 * 0.5;
                assert_eq!(together, level.assignment[i] == level.assignment[j]);
            }
        }
        assert_eq!(level.len(), 2);
        assert_eq!(level.weights, vec![0.6, 0.4]);
    }

    #[test]
    fn huge_bandwidth_gives_one_mode() {
        let data = two_blobs();
        let ladder = hmac_ladder(&data, &[0.5, 1000.0], &LadderOptions::default()).unwrap();
        let top = ladder.levels.last().unwrap();
        assert_eq!(top.len(), 1);
        assert_eq!(top.weights, vec![1.0]);
    }

    #[test]
    fn duplicates_share_assignment() {
        let data = DMatrix::from_row_slice(5, 1, &[0.0, 1.0, 1.0, 5.0, 9.0]);
        let ladder = hmac_ladder(&data, &[0.1, 0.5, 2.0], &LadderOptions::default()).unwrap();
        for level in &ladder.levels {
            assert_eq!(level.assignment[1], level.assignment[2]);
        }
    }

    #[test]
    fn ladder_rejects_bad_sigmas() {
        let data = two_blobs();
        assert!(hmac_ladder(&data, &[], &LadderOptions::default()).is_err());
        assert!(hmac_ladder(&data, &[1.0, 1.0], &LadderOptions::default()).is_err());
        assert!(hmac_ladder(&data, &[-1.0], &LadderOptions::default()).is_err());
    }

    #[test]
    fn ladder_json_round_trip() {
        let ladder = hmac_ladder(&two_blobs(), &[0.5, 3.0], &LadderOptions::default()).unwrap();
        let back = ModeLadder::from_json(&ladder.to_json().unwrap()).unwrap();
        assert_eq!(back, ladder);
    }

    #[test]
    fn clustering_equality() {
        assert!(same_clustering(&[0, 0, 1], &[4, 4, 2]));
        assert!(!same_clustering(&[0, 0, 1], &[0, 1, 1]));
        assert!(!same_clustering(&[0, 1, 2], &[0, 0, 1]));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]
            #[test]
            fn ladder_coarsens_and_conserves_weight(vals in prop::collection::vec(-5.0f64..5.0, 40)) {
                let data = DMatrix::from_row_slice(20, 2, &vals);
                let ladder = hmac_ladder(&data, &[0.05, 0.3, 0.8, 2.0, 6.0], &LadderOptions::default()).unwrap();
                for w in ladder.levels.windows(2) {
                    prop_assert!(w[0].len() >= w[1].len());
                }
                for level in &ladder.levels {
                    prop_assert!((level.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    for (r, w) in level.weights.iter().enumerate() {
                        let frac = level.assignment.iter().filter(|&&a| a == r).count() as f64 / 20.0;
                        prop_assert!((w - frac).abs() < 1e-15);
                    }
                    let tol = 1e-4 * level.sigma;
                    for i in 0..level.len() {
                        for j in 0..i {
                            prop_assert!((level.modes.row(i) - level.modes.row(j)).norm() >= tol);
                        }
                    }
                }
            }
        }
    }
}
