use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SncError};
use crate::game::EmpiricalDecoder;
use crate::lcr::LinearModel;
use crate::metrics::ops::{self, NoTally, OpCount, OpTally};
use crate::reasoning::{contextual_reasoning_parts, run_recursion, ReasoningConfig, Workspace};
use crate::world::{vectorize, Context, WorldDims, WorldTuple};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodKind {
    /// Decoder computed by the full recursion.
    Icr,
    /// Decoder computed by the linear model.
    Ilcr,
}

/// A likelihood together with what it needs to evaluate.
#[derive(Clone, Copy, Debug)]
pub enum LikelihoodSpec<'a> {
    Icr(ReasoningConfig),
    Ilcr(&'a LinearModel),
}

impl LikelihoodSpec<'_> {
    pub fn kind(&self) -> LikelihoodKind {
        match self {
            LikelihoodSpec::Icr(_) => LikelihoodKind::Icr,
            LikelihoodSpec::Ilcr(_) => LikelihoodKind::Ilcr,
        }
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(SncError::Config(format!("sigma must be > 0, got {sigma}")));
    }
    Ok(())
}

/// `-‖a - b‖² / (2σ²)`.
pub fn residual_loglik<T: OpTally>(a: &[f64], b: &[f64], two_sigma2: f64, tally: &mut T) -> f64 {
    let mut ss = 0.0;
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        let d = x - y;
        tally.add();
        let sq = d * d;
        tally.mul();
        if i == 0 {
            ss = sq;
        } else {
            ss += sq;
            tally.add();
        }
    }
    tally.div();
    -ss / two_sigma2
}

/// `-‖e‖² / (2σ²)` for an already formed residual.
fn norm_loglik<T: OpTally>(e: &[f64], two_sigma2: f64, tally: &mut T) -> f64 {
    let mut ss = 0.0;
    for (i, v) in e.iter().enumerate() {
        let sq = v * v;
        tally.mul();
        if i == 0 {
            ss = sq;
        } else {
            ss += sq;
            tally.add();
        }
    }
    tally.div();
    -ss / two_sigma2
}

/// Log-likelihood of the observed decoder under the full recursion, constant
/// dropped. Invalid contexts and degenerate recursions give `-inf`.
pub fn log_likelihood_icr(
    t: &WorldTuple,
    r_bar: &EmpiricalDecoder,
    sigma: f64,
    cfg: &ReasoningConfig,
) -> Result<f64> {
    check_sigma(sigma)?;
    if t.dims() != r_bar.dims {
        return Err(SncError::DimMismatch {
            expected: r_bar.dims.entries(),
            actual: t.dims().entries(),
        });
    }
    if !crate::world::is_valid_context(&t.context) {
        return Ok(f64::NEG_INFINITY);
    }
    match contextual_reasoning_parts(
        &t.context,
        t.action_prior.probs(),
        t.concept_prior.probs(),
        cfg,
    ) {
        Ok(res) => Ok(residual_loglik(
            r_bar.as_col_major(),
            res.decoder.as_col_major(),
            2.0 * sigma * sigma,
            &mut NoTally,
        )),
        Err(SncError::DegenerateColumn(_)) | Err(SncError::InvalidContext(_)) => {
            Ok(f64::NEG_INFINITY)
        }
        Err(e) => Err(e),
    }
}

/// `-‖r̄ - Φt‖² / (2σ²)`, constant dropped.
pub fn log_likelihood_ilcr(
    t_vec: &[f64],
    r_bar_vec: &[f64],
    model: &LinearModel,
    sigma: f64,
) -> Result<f64> {
    check_sigma(sigma)?;
    if r_bar_vec.len() != model.phi().nrows() {
        return Err(SncError::DimMismatch {
            expected: model.phi().nrows(),
            actual: r_bar_vec.len(),
        });
    }
    let pred = model.apply_vec(t_vec)?;
    Ok(residual_loglik(
        r_bar_vec,
        &pred,
        2.0 * sigma * sigma,
        &mut NoTally,
    ))
}

/// Residual `r̄ - Φt'` after coordinates of `t` change by `deltas`
/// (`(index, new - old)` pairs), starting from the residual of `t`.
pub fn incremental_residual<T: OpTally>(
    model: &LinearModel,
    resid: &[f64],
    changes: &[(usize, f64, f64)],
    out: &mut [f64],
    tally: &mut T,
) {
    let phi = model.phi();
    let n = phi.nrows();
    let data = phi.as_slice();
    out.copy_from_slice(resid);
    for &(k, old, new) in changes {
        let delta = new - old;
        tally.add();
        let col = &data[k * n..(k + 1) * n];
        for (o, p) in out.iter_mut().zip(col) {
            *o -= delta * p;
            tally.mul();
            tally.add();
        }
    }
}

/// Which coordinates of the current state a candidate changes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Change {
    Entry(usize, usize),
    ActionPrior,
    ConceptPrior,
}

/// Cached likelihood evaluation for a chain: the current state's value is
/// kept, the linear path updates its residual incrementally, and the
/// recursion path optionally memoizes contexts while the priors are fixed.
pub(crate) struct Evaluator<'a> {
    spec: LikelihoodSpec<'a>,
    dims: WorldDims,
    r_bar: Vec<f64>,
    two_sigma2: f64,
    ws: Workspace,
    memo: Option<HashMap<u64, f64>>,
    t_cur: Vec<f64>,
    resid_cur: Vec<f64>,
    resid_cand: Vec<f64>,
    changes: Vec<(usize, f64, f64)>,
    pub ops: OpCount,
    pub evaluations: u64,
    pub memo_hits: u64,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        spec: LikelihoodSpec<'a>,
        r_bar: &EmpiricalDecoder,
        sigma: f64,
        memoize: bool,
    ) -> Result<Self> {
        check_sigma(sigma)?;
        let dims = r_bar.dims;
        if let LikelihoodSpec::Ilcr(m) = spec {
            if m.dims() != dims {
                return Err(SncError::DimMismatch {
                    expected: dims.vec_len(),
                    actual: m.dims().vec_len(),
                });
            }
        }
        let n = dims.entries();
        Ok(Evaluator {
            spec,
            dims,
            r_bar: r_bar.as_col_major().to_vec(),
            two_sigma2: 2.0 * sigma * sigma,
            ws: Workspace::new(dims),
            memo: (memoize && matches!(spec, LikelihoodSpec::Icr(_)) && n <= 64).then(HashMap::new),
            t_cur: Vec::new(),
            resid_cur: vec![0.0; n],
            resid_cand: vec![0.0; n],
            changes: Vec::new(),
            ops: OpCount::ZERO,
            evaluations: 0,
            memo_hits: 0,
        })
    }

    fn icr_eval(
        &mut self,
        x: &Context,
        y: &[f64],
        z: &[f64],
        cfg: ReasoningConfig,
        use_memo: bool,
    ) -> Result<f64> {
        let key = if use_memo { x.bitmask() } else { None };
        if let (Some(k), Some(memo)) = (key, self.memo.as_ref()) {
            if let Some(&v) = memo.get(&k) {
                self.memo_hits += 1;
                return Ok(v);
            }
        }
        self.evaluations += 1;
        let ll = match run_recursion(x, y, z, &cfg, &mut self.ws, &mut NoTally) {
            Ok(stats) => {
                self.ops += ops::icr_loglik_ops(self.dims, stats.iterations);
                residual_loglik(
                    &self.r_bar,
                    self.ws.decoder(),
                    self.two_sigma2,
                    &mut NoTally,
                )
            }
            Err(SncError::DegenerateColumn(_)) | Err(SncError::InvalidContext(_)) => {
                f64::NEG_INFINITY
            }
            Err(e) => return Err(e),
        };
        if let (Some(k), Some(memo)) = (key, self.memo.as_mut()) {
            memo.insert(k, ll);
        }
        Ok(ll)
    }

    /// Full evaluation at `t`, which becomes the current state.
    pub fn reset(&mut self, t: &WorldTuple) -> Result<f64> {
        match self.spec {
            LikelihoodSpec::Icr(cfg) => {
                if let Some(m) = self.memo.as_mut() {
                    m.clear();
                }
                self.icr_eval(
                    &t.context,
                    t.action_prior.probs(),
                    t.concept_prior.probs(),
                    cfg,
                    true,
                )
            }
            LikelihoodSpec::Ilcr(model) => {
                self.evaluations += 1;
                self.t_cur = vectorize(t);
                let pred = model.apply_vec(&self.t_cur)?;
                for (e, (r, p)) in self.resid_cur.iter_mut().zip(self.r_bar.iter().zip(&pred)) {
                    *e = r - p;
                }
                self.ops += ops::full_linear_loglik_ops(model.phi().nrows(), model.phi().ncols());
                Ok(norm_loglik(&self.resid_cur, self.two_sigma2, &mut NoTally))
            }
        }
    }

    /// Log-likelihood of `cand`, which differs from the current state in `change`.
    pub fn candidate(&mut self, cand: &WorldTuple, change: Change) -> Result<f64> {
        match self.spec {
            LikelihoodSpec::Icr(cfg) => {
                let memo = matches!(change, Change::Entry(..));
                self.icr_eval(
                    &cand.context,
                    cand.action_prior.probs(),
                    cand.concept_prior.probs(),
                    cfg,
                    memo,
                )
            }
            LikelihoodSpec::Ilcr(model) => {
                self.evaluations += 1;
                let d = self.dims;
                let n = d.entries();
                self.changes.clear();
                match change {
                    Change::Entry(c, a) => {
                        let k = d.idx(c, a);
                        self.changes
                            .push((k, self.t_cur[k], cand.context.get(c, a) as f64));
                    }
                    Change::ActionPrior => {
                        for (i, &v) in cand.action_prior.probs().iter().enumerate() {
                            self.changes.push((n + i, self.t_cur[n + i], v));
                        }
                    }
                    Change::ConceptPrior => {
                        let off = n + d.num_actions;
                        for (i, &v) in cand.concept_prior.probs().iter().enumerate() {
                            self.changes.push((off + i, self.t_cur[off + i], v));
                        }
                    }
                }
                incremental_residual(
                    model,
                    &self.resid_cur,
                    &self.changes,
                    &mut self.resid_cand,
                    &mut NoTally,
                );
                self.ops += ops::incremental_loglik_ops(n, self.changes.len());
                Ok(norm_loglik(&self.resid_cand, self.two_sigma2, &mut NoTally))
            }
        }
    }

    /// The last candidate becomes the current state.
    pub fn commit(&mut self, change: Change) {
        match self.spec {
            LikelihoodSpec::Icr(_) => {
                if !matches!(change, Change::Entry(..)) {
                    if let Some(m) = self.memo.as_mut() {
                        m.clear();
                    }
                }
            }
            LikelihoodSpec::Ilcr(_) => {
                std::mem::swap(&mut self.resid_cur, &mut self.resid_cand);
                for &(k, _, new) in &self.changes {
                    self.t_cur[k] = new;
                }
            }
        }
    }
}
