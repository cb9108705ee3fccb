//! Brute-force posteriors for small instances.

use super::likelihood::{log_likelihood_icr, log_likelihood_ilcr, LikelihoodSpec};
use super::prior::{log_prior, PriorConfig};
use crate::error::{Result, SncError};
use crate::game::EmpiricalDecoder;
use crate::world::{
    is_valid_context, vectorize, Context, PriorRole, SimplexVector, WorldDims, WorldTuple,
};

/// Largest context enumerated by [`enumerate_x_marginals`].
pub const MAX_MARGINAL_ENTRIES: usize = 16;
/// Largest context enumerated by [`map_oracle`].
pub const MAX_MAP_ENTRIES: usize = 12;

pub fn log_likelihood(
    t: &WorldTuple,
    r_bar: &EmpiricalDecoder,
    sigma: f64,
    spec: LikelihoodSpec<'_>,
) -> Result<f64> {
    match spec {
        LikelihoodSpec::Icr(cfg) => log_likelihood_icr(t, r_bar, sigma, &cfg),
        LikelihoodSpec::Ilcr(m) => {
            if !is_valid_context(&t.context) {
                return Ok(f64::NEG_INFINITY);
            }
            log_likelihood_ilcr(&vectorize(t), r_bar.as_col_major(), m, sigma)
        }
    }
}

/// Unnormalized log posterior.
pub fn log_posterior(
    t: &WorldTuple,
    r_bar: &EmpiricalDecoder,
    sigma: f64,
    spec: LikelihoodSpec<'_>,
    priors: &PriorConfig,
) -> Result<f64> {
    let ll = log_likelihood(t, r_bar, sigma, spec)?;
    if ll == f64::NEG_INFINITY {
        return Ok(ll);
    }
    Ok(ll + log_prior(t, priors))
}

fn normalize_logs(logs: &[f64]) -> Vec<f64> {
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return vec![0.0; logs.len()];
    }
    let w: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// `P(x_{c,a} = 1 | r̄, rest of t)`.
pub fn enumerate_entry_posterior(
    r_bar: &EmpiricalDecoder,
    t_rest: &WorldTuple,
    pos: (usize, usize),
    sigma: f64,
    spec: LikelihoodSpec<'_>,
    priors: &PriorConfig,
) -> Result<f64> {
    let mut t = t_rest.clone();
    let mut logs = [0.0; 2];
    for v in 0..2u8 {
        t.context.set(pos.0, pos.1, v);
        logs[v as usize] = log_posterior(&t, r_bar, sigma, spec, priors)?;
    }
    if logs.iter().all(|l| *l == f64::NEG_INFINITY) {
        return Err(SncError::DegenerateDistribution(format!(
            "both values of entry {pos:?} give zero posterior"
        )));
    }
    Ok(normalize_logs(&logs)[1])
}

/// Every binary context of `dims` that is valid, in bitmask order.
pub fn valid_contexts(dims: WorldDims) -> Result<Vec<Context>> {
    let n = dims.entries();
    if n > 24 {
        return Err(SncError::TooLarge(format!("{n} context entries")));
    }
    let mut out = Vec::new();
    for mask in 0u64..(1u64 << n) {
        let e = (0..n).map(|i| ((mask >> i) & 1) as u8).collect();
        let x = Context::from_col_major(dims, e)?;
        if is_valid_context(&x) {
            out.push(x);
        }
    }
    Ok(out)
}

/// Joint posterior over contexts with `y`, `z` held fixed.
#[derive(Clone, Debug)]
pub struct ContextPosterior {
    pub contexts: Vec<Context>,
    pub probs: Vec<f64>,
}

impl ContextPosterior {
    /// `P(x_{c,a} = 1)` column-major.
    pub fn marginals(&self) -> Vec<f64> {
        let n = self
            .contexts
            .first()
            .map(|x| x.dims().entries())
            .unwrap_or(0);
        let mut m = vec![0.0; n];
        for (x, p) in self.contexts.iter().zip(&self.probs) {
            for (acc, &v) in m.iter_mut().zip(x.as_col_major()) {
                *acc += p * v as f64;
            }
        }
        m.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        m
    }

    pub fn mode(&self) -> &Context {
        let i = self
            .probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .expect("non-empty");
        &self.contexts[i]
    }
}

pub fn enumerate_context_posterior(
    r_bar: &EmpiricalDecoder,
    y: &SimplexVector,
    z: &SimplexVector,
    sigma: f64,
    spec: LikelihoodSpec<'_>,
    priors: &PriorConfig,
) -> Result<ContextPosterior> {
    let n = r_bar.dims.entries();
    if n > MAX_MARGINAL_ENTRIES {
        return Err(SncError::TooLarge(format!(
            "{n} context entries (limit {MAX_MARGINAL_ENTRIES})"
        )));
    }
    let contexts = valid_contexts(r_bar.dims)?;
    let mut logs = Vec::with_capacity(contexts.len());
    for x in &contexts {
        let t = WorldTuple::new(x.clone(), y.clone(), z.clone())?;
        logs.push(log_posterior(&t, r_bar, sigma, spec, priors)?);
    }
    Ok(ContextPosterior {
        probs: normalize_logs(&logs),
        contexts,
    })
}

/// Per-entry marginals `P(x_{c,a} = 1)` of the joint context posterior.
pub fn enumerate_x_marginals(
    r_bar: &EmpiricalDecoder,
    y: &SimplexVector,
    z: &SimplexVector,
    sigma: f64,
    spec: LikelihoodSpec<'_>,
    priors: &PriorConfig,
) -> Result<Vec<f64>> {
    Ok(enumerate_context_posterior(r_bar, y, z, sigma, spec, priors)?.marginals())
}

/// Interior grid points of the simplex: every coordinate a positive multiple
/// of `step`.
pub fn simplex_grid(dim: usize, step: f64) -> Result<Vec<Vec<f64>>> {
    let m = (1.0 / step).round() as usize;
    if !(step > 0.0) || ((m as f64) * step - 1.0).abs() > 1e-9 || m < dim {
        return Err(SncError::Config(format!(
            "grid step {step} must divide 1 into at least {dim} parts"
        )));
    }
    let mut out = Vec::new();
    let mut cur = vec![0usize; dim];
    fn rec(i: usize, left: usize, cur: &mut Vec<usize>, m: usize, out: &mut Vec<Vec<f64>>) {
        let dim = cur.len();
        if i == dim - 1 {
            cur[i] = left;
            out.push(cur.iter().map(|&k| k as f64 / m as f64).collect());
            return;
        }
        for k in 1..=left - (dim - 1 - i) {
            cur[i] = k;
            rec(i + 1, left - k, cur, m, out);
        }
    }
    rec(0, m, &mut cur, m, &mut out);
    Ok(out)
}

/// Posterior mean of `y` by quadrature over [`simplex_grid`] with `X`, `z` fixed.
pub fn grid_posterior_mean_y(
    r_bar: &EmpiricalDecoder,
    x: &Context,
    z: &SimplexVector,
    sigma: f64,
    spec: LikelihoodSpec<'_>,
    priors: &PriorConfig,
    step: f64,
) -> Result<Vec<f64>> {
    let grid = simplex_grid(r_bar.dims.num_actions, step)?;
    let mut logs = Vec::with_capacity(grid.len());
    for y in &grid {
        let t = WorldTuple::new(
            x.clone(),
            SimplexVector::new_unchecked(y.clone(), PriorRole::Action),
            z.clone(),
        )?;
        logs.push(log_posterior(&t, r_bar, sigma, spec, priors)?);
    }
    let w = normalize_logs(&logs);
    let mut mean = vec![0.0; r_bar.dims.num_actions];
    for (y, p) in grid.iter().zip(&w) {
        for (m, v) in mean.iter_mut().zip(y) {
            *m += p * v;
        }
    }
    Ok(mean)
}

/// Maximizer of the posterior over every valid context and a simplex grid
/// for `y`, `z`. With `sigma == 0` the squared residual is minimized and the
/// prior only breaks ties.
pub fn map_oracle(
    r_bar: &EmpiricalDecoder,
    sigma: f64,
    spec: LikelihoodSpec<'_>,
    priors: &PriorConfig,
    grid_step: f64,
) -> Result<WorldTuple> {
    let d = r_bar.dims;
    if d.entries() > MAX_MAP_ENTRIES {
        return Err(SncError::TooLarge(format!(
            "{} context entries (limit {MAX_MAP_ENTRIES})",
            d.entries()
        )));
    }
    let ys = simplex_grid(d.num_actions, grid_step)?;
    let zs = simplex_grid(d.num_concepts, grid_step)?;
    // with sigma = 0 use a unit scale for the residual and compare it first
    let s = if sigma == 0.0 { 1.0 } else { sigma };
    let mut best: Option<((f64, f64), WorldTuple)> = None;
    for x in valid_contexts(d)? {
        for y in &ys {
            for z in &zs {
                let t = WorldTuple::new(
                    x.clone(),
                    SimplexVector::new_unchecked(y.clone(), PriorRole::Action),
                    SimplexVector::new_unchecked(z.clone(), PriorRole::Concept),
                )?;
                let ll = log_likelihood(&t, r_bar, s, spec)?;
                if ll == f64::NEG_INFINITY {
                    continue;
                }
                let lp = log_prior(&t, priors);
                let score = if sigma == 0.0 {
                    (ll, lp)
                } else {
                    (ll + lp, 0.0)
                };
                if best.as_ref().is_none_or(|(b, _)| score > *b) {
                    best = Some((score, t));
                }
            }
        }
    }
    best.map(|(_, t)| t).ok_or_else(|| {
        SncError::DegenerateDistribution("posterior is zero on the whole grid".into())
    })
}
