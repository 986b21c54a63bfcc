//! Error rates for classification and for clustering, where predicted
//! clusters are matched to true labels by an optimal assignment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub error_rate: f64,
    /// `confusion[t][p]` counts observations with true label `t` and
    /// predicted label `p`.
    pub confusion: Vec<Vec<usize>>,
    /// For clustering: the true label each predicted cluster maps to, `None`
    /// for clusters left unmatched.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matching: Option<Vec<Option<usize>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_fold: Option<Vec<f64>>,
}

fn confusion(truth: &[usize], predicted: &[usize], k: usize, width: usize) -> Result<Vec<Vec<usize>>> {
    if truth.len() != predicted.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} true labels but {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::InvalidArgument("no labels to evaluate".into()));
    }
    let mut c = vec![vec![0; width]; k];
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= k || p >= width {
            return Err(Error::InvalidArgument(format!("label pair ({t}, {p}) out of range")));
        }
        c[t][p] += 1;
    }
    Ok(c)
}

/// Fraction of predictions that differ from the truth; labels in `0..k`.
pub fn classification_error(truth: &[usize], predicted: &[usize], k: usize) -> Result<EvalResult> {
    let c = confusion(truth, predicted, k, k)?;
    let hits: usize = (0..k).map(|i| c[i][i]).sum();
    Ok(EvalResult {
        error_rate: 1.0 - hits as f64 / truth.len() as f64,
        confusion: c,
        matching: None,
        per_fold: None,
    })
}

/// Error after relabeling predicted clusters by the one-to-one matching that
/// maximizes agreement. Predicted labels may use any indices; clusters beyond
/// the number of true classes are unmatched.
pub fn clustering_error(truth: &[usize], predicted: &[usize], k: usize) -> Result<EvalResult> {
    let width = predicted.iter().copied().max().map_or(0, |m| m + 1).max(k);
    let c = confusion(truth, predicted, k, width)?;
    // square profit matrix over predicted clusters, padded with empty truths
    let profit: Vec<Vec<f64>> = (0..width)
        .map(|p| (0..width).map(|t| if t < k { c[t][p] as f64 } else { 0.0 }).collect())
        .collect();
    let assign = max_weight_assignment(&profit);
    let hits: usize = assign.iter().enumerate().filter(|&(_, &t)| t < k).map(|(p, &t)| c[t][p]).sum();
    let used = predicted.iter().copied().max().map_or(0, |m| m + 1);
    Ok(EvalResult {
        error_rate: 1.0 - hits as f64 / truth.len() as f64,
        confusion: c,
        matching: Some(assign[..used].iter().map(|&t| (t < k).then_some(t)).collect()),
        per_fold: None,
    })
}

/// Hungarian algorithm on a square matrix: the column assigned to each row so
/// that the total weight is maximal. `O(m^3)`.
pub fn max_weight_assignment(weight: &[Vec<f64>]) -> Vec<usize> {
    let m = weight.len();
    if m == 0 {
        return Vec::new();
    }
    let max = weight.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let cost = |i: usize, j: usize| max - weight[i][j];
    // potentials and matching over 1-based indices; column 0 is a sentinel
    let mut u = vec![0.0; m + 1];
    let mut v = vec![0.0; m + 1];
    let mut row_of = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=m {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of = vec![0; m];
    for j in 1..=m {
        col_of[row_of[j] - 1] = j - 1;
    }
    col_of
}
