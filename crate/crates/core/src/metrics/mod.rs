//! Reconstruction metrics, divergences, inversion success and bit accounting.

pub mod ops;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SncError};
use crate::world::{vectorize, WorldTuple};

pub use ops::{NoTally, OpCount, OpTally};

const NORM_TOL: f64 = 1e-6;
/// Histogram bin width for continuous coordinates.
pub const HIST_BIN_WIDTH: f64 = 0.05;

fn same_dims(a: &WorldTuple, b: &WorldTuple) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(SncError::DimMismatch {
            expected: b.dims().vec_len(),
            actual: a.dims().vec_len(),
        });
    }
    Ok(())
}

pub fn rmse_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(SncError::DimMismatch {
            expected: b.len(),
            actual: a.len(),
        });
    }
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((ss / a.len() as f64).sqrt())
}

/// RMSE over the whole vectorized tuple.
pub fn rmse(t_hat: &WorldTuple, t_true: &WorldTuple) -> Result<f64> {
    same_dims(t_hat, t_true)?;
    rmse_slices(&vectorize(t_hat), &vectorize(t_true))
}

/// RMSE over the concatenated priors `(y, z)` only.
pub fn prior_rmse(t_hat: &WorldTuple, t_true: &WorldTuple) -> Result<f64> {
    same_dims(t_hat, t_true)?;
    let cat = |t: &WorldTuple| -> Vec<f64> {
        t.action_prior
            .probs()
            .iter()
            .chain(t.concept_prior.probs())
            .copied()
            .collect()
    };
    rmse_slices(&cat(t_hat), &cat(t_true))
}

fn check_normalized(p: &[f64]) -> Result<()> {
    let s: f64 = p.iter().sum();
    if p.iter().any(|v| !(*v >= 0.0)) || (s - 1.0).abs() > NORM_TOL {
        return Err(SncError::NotNormalized(s));
    }
    Ok(())
}

fn kl2(p: &[f64], m: &[f64]) -> f64 {
    p.iter()
        .zip(m)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, mi)| pi * (pi / mi).log2())
        .sum()
}

/// Jensen-Shannon divergence in bits.
pub fn js_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(SncError::DimMismatch {
            expected: p.len(),
            actual: q.len(),
        });
    }
    check_normalized(p)?;
    check_normalized(q)?;
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    Ok((0.5 * kl2(p, &m) + 0.5 * kl2(q, &m)).clamp(0.0, 1.0))
}

/// JS divergence between two Bernoulli laws given by `P(1)`. Inputs are
/// clamped to `[0, 1]` first, so summation round-off (`1 + 2⁻⁵²`) is harmless;
/// NaN gives the maximum 1.
pub fn bernoulli_js(p1: f64, q1: f64) -> f64 {
    if p1.is_nan() || q1.is_nan() {
        return 1.0;
    }
    let (p1, q1) = (p1.clamp(0.0, 1.0), q1.clamp(0.0, 1.0));
    js_divergence(&[1.0 - p1, p1], &[1.0 - q1, q1]).unwrap_or(1.0)
}

/// Normalized histogram of values in `[0, 1]` with bins of width `width`.
pub fn unit_histogram(values: &[f64], width: f64) -> Vec<f64> {
    let bins = (1.0 / width).round().max(1.0) as usize;
    let mut h = vec![0.0; bins];
    if values.is_empty() {
        return h;
    }
    for &v in values {
        let i = ((v / width).floor().max(0.0) as usize).min(bins - 1);
        h[i] += 1.0;
    }
    let n = values.len() as f64;
    h.iter_mut().for_each(|v| *v /= n);
    h
}

/// Posterior targets for every coordinate, used to score a chain.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EntryTargets {
    /// `P(x = 1)` per context entry, column-major.
    pub x_one: Vec<f64>,
    /// Optional histograms (see [`unit_histogram`]) per prior coordinate,
    /// `y` first then `z`.
    pub prior_hists: Option<Vec<Vec<f64>>>,
}

/// Mean JS divergence between each entry's empirical marginal over `samples`
/// and its target. Prior coordinates are included when targets carry them.
pub fn entrywise_posterior_distance(samples: &[WorldTuple], targets: &EntryTargets) -> Result<f64> {
    let first = samples.first().ok_or(SncError::EmptyTrace)?;
    let d = first.dims();
    if targets.x_one.len() != d.entries() {
        return Err(SncError::DimMismatch {
            expected: d.entries(),
            actual: targets.x_one.len(),
        });
    }
    let n = samples.len() as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, &q1) in targets.x_one.iter().enumerate() {
        let ones = samples
            .iter()
            .filter(|t| t.context.as_col_major()[i] == 1)
            .count() as f64;
        total += bernoulli_js(ones / n, q1);
        count += 1;
    }
    if let Some(hists) = &targets.prior_hists {
        let na = d.num_actions;
        if hists.len() != na + d.num_concepts {
            return Err(SncError::DimMismatch {
                expected: na + d.num_concepts,
                actual: hists.len(),
            });
        }
        for (k, target) in hists.iter().enumerate() {
            let vals: Vec<f64> = samples
                .iter()
                .map(|t| {
                    if k < na {
                        t.action_prior.probs()[k]
                    } else {
                        t.concept_prior.probs()[k - na]
                    }
                })
                .collect();
            total += js_divergence(&unit_histogram(&vals, HIST_BIN_WIDTH), target)?;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InversionCriteria {
    pub require_exact_pattern: bool,
    pub prior_rmse_tol: f64,
}

impl Default for InversionCriteria {
    fn default() -> Self {
        InversionCriteria {
            require_exact_pattern: true,
            prior_rmse_tol: 0.05,
        }
    }
}

pub fn inversion_success(
    t_hat: &WorldTuple,
    t_true: &WorldTuple,
    criteria: &InversionCriteria,
) -> bool {
    if t_hat.dims() != t_true.dims() {
        return false;
    }
    if criteria.require_exact_pattern && t_hat.context != t_true.context {
        return false;
    }
    prior_rmse(t_hat, t_true).is_ok_and(|e| e < criteria.prior_rmse_tol)
}

/// Shannon entropy in bits.
pub fn entropy_bits(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|v| **v > 0.0)
        .map(|v| v * v.log2())
        .sum::<f64>()
}

/// Binary Huffman codeword lengths. Ties go to the subtree holding the lowest
/// symbol id.
pub fn huffman_lengths(weights: &[f64]) -> Vec<usize> {
    let n = weights.len();
    if n <= 1 {
        return vec![1; n];
    }
    // (weight, lowest id, member symbols)
    let mut nodes: Vec<(f64, usize, Vec<usize>)> = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| (w, i, vec![i]))
        .collect();
    let mut lengths = vec![0usize; n];
    while nodes.len() > 1 {
        nodes.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let (w1, id1, m1) = nodes.remove(0);
        let (w2, id2, m2) = nodes.remove(0);
        for &s in m1.iter().chain(&m2) {
            lengths[s] += 1;
        }
        let mut members = m1;
        members.extend(m2);
        nodes.push((w1 + w2, id1.min(id2), members));
    }
    lengths
}

/// Expected Huffman codeword length under `p`.
pub fn huffman_expected_length(p: &[f64]) -> f64 {
    huffman_lengths(p)
        .iter()
        .zip(p)
        .map(|(l, w)| *l as f64 * w)
        .sum()
}

/// Expected bits per round when each round sends `symbols_per_round`
/// Huffman-coded concepts.
pub fn expected_bits(z: &[f64], symbols_per_round: f64) -> Result<f64> {
    check_normalized(z)?;
    Ok(huffman_expected_length(z) * symbols_per_round)
}
