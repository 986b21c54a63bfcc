//! Data generators: the three-class waveform benchmark and samples from a
//! mixture whose cluster means lie in a known low-dimensional subspace.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::subspace::{Provenance, Subspace};

pub const WAVEFORM_DIM: usize = 21;

/// Triangular base waves `h1(i) = max(6 - |i - 11|, 0)`, `h2(i) = h1(i - 4)`,
/// `h3(i) = h1(i + 4)` for `i = 1..21`.
pub fn base_waves() -> [DVector<f64>; 3] {
    let h = |shift: f64| DVector::from_fn(WAVEFORM_DIM, |i, _| (6.0 - ((i + 1) as f64 - 11.0 - shift).abs()).max(0.0));
    [h(0.0), h(4.0), h(-4.0)]
}

/// Pairs of base waves mixed by each class.
const WAVE_PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

/// `n` waveform observations with labels cycling through the three classes,
/// so class sizes differ by at most one.
pub fn gen_waveform(n: usize, seed: u64) -> Result<LabeledDataset> {
    gen_waveform_with(n, seed, true)
}

/// As [`gen_waveform`]; with `noise = false` every row is an exact convex
/// combination of two base waves.
pub fn gen_waveform_with(n: usize, seed: u64, noise: bool) -> Result<LabeledDataset> {
    if n < 3 {
        return Err(Error::InvalidArgument(format!("waveform needs n >= 3, got {n}")));
    }
    let h = base_waves();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::zeros(n, WAVEFORM_DIM);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 3;
        let (a, b) = WAVE_PAIRS[class];
        let u: f64 = rng.random();
        for j in 0..WAVEFORM_DIM {
            let e: f64 = if noise { rng.sample(StandardNormal) } else { 0.0 };
            x[(i, j)] = u * h[a][j] + (1.0 - u) * h[b][j] + e;
        }
        labels.push(class);
    }
    LabeledDataset::with_classes(x, Some(labels), vec!["1".into(), "2".into(), "3".into()])
}

/// Analytic class means of the waveform generator.
pub fn waveform_class_means() -> Vec<DVector<f64>> {
    let h = base_waves();
    WAVE_PAIRS.iter().map(|&(a, b)| (&h[a] + &h[b]) * 0.5).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticOptions {
    pub p: usize,
    /// Radius of the unscaled cluster-mean configuration.
    pub radius: f64,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        Self { p: 19, radius: 24.0 }
    }
}

/// Unscaled cluster means in `dim` coordinates: a jittered regular polygon in
/// the first two coordinates, Gaussian spread in any others.
fn base_configuration(dim: usize, k: usize, radius: f64, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let mut pts: Vec<DVector<f64>> = (0..k)
        .map(|c| {
            let angle = 2.0 * PI * c as f64 / k as f64 + rng.random_range(-0.25..0.25);
            let r = radius * rng.random_range(0.8..1.2);
            DVector::from_fn(dim, |j, _| match j {
                0 => r * angle.cos(),
                1 => r * angle.sin(),
                _ => radius / 2.0 * rng.sample::<f64, _>(StandardNormal),
            })
        })
        .collect();
    let center = pts.iter().sum::<DVector<f64>>() / k as f64;
    pts.iter_mut().for_each(|p| *p -= &center);
    pts
}

/// `k` spherical unit-variance Gaussian clusters of `n_per` points each, whose
/// means lie in a random `dim`-dimensional subspace of `R^p` (up to a common
/// offset) and are multiplied by `scale`. Returns the labeled sample and the
/// generating subspace. The mean configuration depends only on `seed`, so
/// different scales with the same seed share it.
pub fn gen_constrained_synthetic(
    dim: usize,
    k: usize,
    scale: f64,
    n_per: usize,
    seed: u64,
    opts: &SyntheticOptions,
) -> Result<(LabeledDataset, Subspace)> {
    let p = opts.p;
    if dim == 0 || dim >= p || k < 2 || n_per == 0 || !(scale > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "invalid synthetic design: dim={dim}, p={p}, k={k}, n_per={n_per}, scale={scale}"
        )));
    }
    let (truth, means) = design(dim, k, scale, seed, opts)?;

    let mut sampler = ChaCha8Rng::seed_from_u64(seed);
    sampler.set_stream(1);
    let n = k * n_per;
    let mut x = DMatrix::zeros(n, p);
    let mut labels = Vec::with_capacity(n);
    for (c, mu) in means.iter().enumerate() {
        for i in 0..n_per {
            let row = c * n_per + i;
            for j in 0..p {
                x[(row, j)] = mu[j] + sampler.sample::<f64, _>(StandardNormal);
            }
            labels.push(c);
        }
    }
    let names = (1..=k).map(|c| c.to_string()).collect();
    Ok((LabeledDataset::with_classes(x, Some(labels), names)?, truth))
}

/// The cluster means used by [`gen_constrained_synthetic`] for the same
/// arguments.
pub fn synthetic_means(dim: usize, k: usize, scale: f64, seed: u64, opts: &SyntheticOptions) -> Result<Vec<DVector<f64>>> {
    Ok(design(dim, k, scale, seed, opts)?.1)
}

fn design(dim: usize, k: usize, scale: f64, seed: u64, opts: &SyntheticOptions) -> Result<(Subspace, Vec<DVector<f64>>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = DMatrix::from_fn(opts.p, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let truth = Subspace::from_basis(&raw, Provenance::User)?;
    let offset = DVector::from_fn(opts.p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let means = base_configuration(dim, k, opts.radius, &mut rng)
        .iter()
        .map(|c| truth.constrained() * c * scale + &offset)
        .collect();
    Ok((truth, means))
}
