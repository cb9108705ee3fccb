//! Two-stage Metropolis-Hastings: stage 1 flips context entries one at a
//! time, stage 2 proposes whole prior vectors.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::likelihood::{Change, Evaluator, LikelihoodSpec};
use super::oracle::log_posterior;
use super::prior::{log_dirichlet, log_simplex_prior, log_x_entry, PriorConfig};
use crate::error::{Result, SncError};
use crate::game::EmpiricalDecoder;
use crate::metrics::OpCount;
use crate::rng::{seeded, SeededRng};
use crate::world::{
    is_valid_context, sample_context, sample_dirichlet, Context, PriorRole, SimplexVector,
    WorldGenConfig, WorldTuple,
};

/// Accept with probability `min(1, exp(log_target_ratio + log_proposal_correction))`.
pub fn mh_accept<R: Rng + ?Sized>(
    log_target_ratio: f64,
    log_proposal_correction: f64,
    rng: &mut R,
) -> bool {
    let a = log_target_ratio + log_proposal_correction;
    if a.is_nan() || a == f64::NEG_INFINITY {
        return false;
    }
    if a >= 0.0 {
        return true;
    }
    rng.random::<f64>() < a.exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SimplexProposal {
    /// Fresh draw from Dirichlet(δ·1), independent of the current state.
    IndependentDirichlet { delta: f64 },
    /// Dirichlet(κ·current + 0.1), centred near the current state.
    LocalDirichlet { kappa: f64 },
}

const LOCAL_FLOOR: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalConfig {
    pub simplex: SimplexProposal,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        ProposalConfig {
            simplex: SimplexProposal::IndependentDirichlet { delta: 1.0 },
        }
    }
}

impl ProposalConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = match self.simplex {
            SimplexProposal::IndependentDirichlet { delta } => delta > 0.0,
            SimplexProposal::LocalDirichlet { kappa } => kappa > 0.0,
        };
        if !ok {
            return Err(SncError::Config(
                "simplex proposal parameter must be > 0".into(),
            ));
        }
        Ok(())
    }

    fn alpha(&self, around: &[f64]) -> Vec<f64> {
        match self.simplex {
            SimplexProposal::IndependentDirichlet { delta } => vec![delta; around.len()],
            SimplexProposal::LocalDirichlet { kappa } => {
                around.iter().map(|v| kappa * v + LOCAL_FLOOR).collect()
            }
        }
    }

    /// `log q(current | proposed) - log q(proposed | current)`.
    fn log_correction(&self, current: &[f64], proposed: &[f64]) -> f64 {
        match self.simplex {
            SimplexProposal::IndependentDirichlet { delta } => {
                if delta == 1.0 {
                    0.0
                } else {
                    (delta - 1.0)
                        * (current.iter().map(|v| v.ln()).sum::<f64>()
                            - proposed.iter().map(|v| v.ln()).sum::<f64>())
                }
            }
            SimplexProposal::LocalDirichlet { .. } => {
                log_dirichlet(current, &self.alpha(proposed))
                    - log_dirichlet(proposed, &self.alpha(current))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Outer iterations; one state is recorded per iteration.
    pub k: usize,
    pub k1: usize,
    pub k2: usize,
    /// Recorded states discarded before estimation; 20% of `k` when unset.
    pub burn_in: Option<usize>,
    pub sigma: f64,
    pub seed: u64,
    /// Skip stage 2 and keep the priors at their initial values.
    #[serde(default)]
    pub freeze_priors: bool,
    /// Reuse recursion results for contexts already seen under the current
    /// priors.
    #[serde(default = "default_true")]
    pub memoize: bool,
    /// Temper the likelihood during burn-in, starting at this temperature
    /// and cooling geometrically to 1 at the end of burn-in. Recorded
    /// post-burn-in states always use the untempered target.
    #[serde(default)]
    pub anneal_from: Option<f64>,
}

fn default_true() -> bool {
    true
}

impl SamplerConfig {
    pub fn new(k: usize, k1: usize, k2: usize, sigma: f64, seed: u64) -> Self {
        SamplerConfig {
            k,
            k1,
            k2,
            burn_in: None,
            sigma,
            seed,
            freeze_priors: false,
            memoize: true,
            anneal_from: None,
        }
    }

    /// Inverse temperature applied to likelihood ratios at outer iteration `it`.
    pub fn beta_at(&self, it: usize) -> f64 {
        let burn = self.burn_in_len();
        match self.anneal_from {
            Some(t0) if it < burn => t0.powf(-(1.0 - it as f64 / burn as f64)),
            _ => 1.0,
        }
    }

    pub fn burn_in_len(&self) -> usize {
        self.burn_in.unwrap_or(self.k / 5)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k1 == 0 || self.k2 == 0 {
            return Err(SncError::Config("K, K1 and K2 must be >= 1".into()));
        }
        if let Some(t0) = self.anneal_from {
            if !(t0 >= 1.0 && t0.is_finite()) {
                return Err(SncError::Config(format!(
                    "anneal_from must be a finite temperature >= 1, got {t0}"
                )));
            }
        }
        if self.burn_in_len() >= self.k {
            return Err(SncError::Config(format!(
                "burn-in {} leaves no recorded states out of {}",
                self.burn_in_len(),
                self.k
            )));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(SncError::Config(format!(
                "sigma must be > 0, got {}",
                self.sigma
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub enum Init {
    Given(WorldTuple),
    /// Context drawn Bernoulli(1/2) until valid, priors drawn uniformly.
    Random,
    /// Priors drawn uniformly, then the context chosen by
    /// [`initial_context`] with [`INIT_CANDIDATES`] random candidates.
    FromObservation,
}

/// Random candidates scored by [`Init::FromObservation`].
pub const INIT_CANDIDATES: usize = 8;

/// Starting context: the support read off the observation and `extra` random
/// valid draws, whichever has the highest log posterior given `y` and `z`.
/// Single flips cannot always connect two valid contexts, so the start decides
/// which part of the support a chain can reach.
#[allow(clippy::too_many_arguments)]
pub fn initial_context<R: Rng + ?Sized>(
    r_bar: &EmpiricalDecoder,
    y: &SimplexVector,
    z: &SimplexVector,
    sigma: f64,
    spec: LikelihoodSpec<'_>,
    priors: &PriorConfig,
    extra: usize,
    rng: &mut R,
) -> Result<Context> {
    let d = r_bar.dims;
    let mut wc = WorldGenConfig::new(d, 0.5);
    wc.require_full_rank = false;
    let mut candidates: Vec<Context> = observation_context(r_bar).into_iter().collect();
    for _ in 0..extra.max(usize::from(candidates.is_empty())) {
        candidates.push(sample_context(&wc, rng)?);
    }
    let mut best: Option<(f64, Context)> = None;
    for x in candidates {
        let t = WorldTuple::new(x, y.clone(), z.clone())?;
        let lp = log_posterior(&t, r_bar, sigma, spec, priors)?;
        if best.as_ref().is_none_or(|(b, _)| lp > *b) {
            best = Some((lp, t.context));
        }
    }
    Ok(best.expect("at least one candidate").1)
}

/// Mark `(c, a)` relevant when `r̄[c,a]` is at least half of row `c`'s
/// largest entry; an empty column gets its largest entry. `None` when the
/// pattern still has duplicate columns.
pub fn observation_context(r_bar: &EmpiricalDecoder) -> Option<Context> {
    let d = r_bar.dims;
    let mut x = Context::zeros(d);
    for c in 0..d.num_concepts {
        let m = (0..d.num_actions)
            .map(|a| r_bar.get(c, a))
            .fold(f64::NEG_INFINITY, f64::max);
        for a in 0..d.num_actions {
            if r_bar.get(c, a) >= 0.5 * m {
                x.set(c, a, 1);
            }
        }
    }
    for a in 0..d.num_actions {
        if x.column(a).iter().all(|&v| v == 0) {
            let best = (0..d.num_concepts)
                .max_by(|&i, &j| r_bar.get(i, a).total_cmp(&r_bar.get(j, a)))
                .unwrap_or(0);
            x.set(best, a, 1);
        }
    }
    is_valid_context(&x).then_some(x)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    X,
    Y,
    Z,
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Block::X => "x",
            Block::Y => "y",
            Block::Z => "z",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub iter: usize,
    pub stage: u8,
    pub block: Block,
    pub accepted: bool,
    /// Log-likelihood of the chain state after the decision.
    pub log_likelihood: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockStats {
    pub proposed: u64,
    pub accepted: u64,
}

impl BlockStats {
    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += accepted as u64;
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptStats {
    pub x: BlockStats,
    pub y: BlockStats,
    pub z: BlockStats,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainTrace {
    pub states: Vec<WorldTuple>,
    pub log_likelihoods: Vec<f64>,
    pub accept: AcceptStats,
    pub op_count: OpCount,
    pub events: Vec<TraceEvent>,
    pub burn_in: usize,
    /// Likelihood evaluations that did arithmetic.
    pub evaluations: u64,
    pub memo_hits: u64,
}

impl ChainTrace {
    pub fn post_burn_in(&self) -> &[WorldTuple] {
        &self.states[self.burn_in.min(self.states.len())..]
    }
}

/// A chain positioned at its current state.
pub struct Sampler<'a> {
    eval: Evaluator<'a>,
    priors: PriorConfig,
    proposals: ProposalConfig,
    state: WorldTuple,
    ll: f64,
    rng: SeededRng,
    pub accept: AcceptStats,
    events: Vec<TraceEvent>,
    iter: usize,
    /// Inverse temperature on likelihood ratios.
    beta: f64,
}

impl<'a> Sampler<'a> {
    pub fn new(
        r_bar: &EmpiricalDecoder,
        spec: LikelihoodSpec<'a>,
        priors: &PriorConfig,
        proposals: &ProposalConfig,
        sigma: f64,
        memoize: bool,
        init: Init,
        seed: u64,
    ) -> Result<Self> {
        priors.validate()?;
        proposals.validate()?;
        let mut rng = seeded(seed);
        let d = r_bar.dims;
        let state = match init {
            Init::Given(t) => {
                if t.dims() != d {
                    return Err(SncError::DimMismatch {
                        expected: d.vec_len(),
                        actual: t.dims().vec_len(),
                    });
                }
                if !is_valid_context(&t.context) {
                    return Err(SncError::InvalidContext(crate::world::validate_context(
                        &t.context,
                    )));
                }
                t
            }
            Init::Random => {
                let mut wc = WorldGenConfig::new(d, 0.5);
                wc.require_full_rank = false;
                let x = sample_context(&wc, &mut rng)?;
                let y = sample_dirichlet(&vec![1.0; d.num_actions], &mut rng);
                let z = sample_dirichlet(&vec![1.0; d.num_concepts], &mut rng);
                WorldTuple::new(
                    x,
                    SimplexVector::new_unchecked(y, PriorRole::Action),
                    SimplexVector::new_unchecked(z, PriorRole::Concept),
                )?
            }
            Init::FromObservation => {
                let y = SimplexVector::new_unchecked(
                    sample_dirichlet(&vec![1.0; d.num_actions], &mut rng),
                    PriorRole::Action,
                );
                let z = SimplexVector::new_unchecked(
                    sample_dirichlet(&vec![1.0; d.num_concepts], &mut rng),
                    PriorRole::Concept,
                );
                let x = initial_context(
                    r_bar,
                    &y,
                    &z,
                    sigma,
                    spec,
                    priors,
                    INIT_CANDIDATES,
                    &mut rng,
                )?;
                WorldTuple::new(x, y, z)?
            }
        };
        let mut eval = Evaluator::new(spec, r_bar, sigma, memoize)?;
        let ll = eval.reset(&state)?;
        Ok(Sampler {
            eval,
            priors: *priors,
            proposals: *proposals,
            state,
            ll,
            rng,
            accept: AcceptStats::default(),
            events: Vec::new(),
            iter: 0,
            beta: 1.0,
        })
    }

    pub fn state(&self) -> &WorldTuple {
        &self.state
    }

    pub fn log_likelihood(&self) -> f64 {
        self.ll
    }

    pub fn op_count(&self) -> OpCount {
        self.eval.ops
    }

    /// One pass over every context entry in row-major order.
    pub fn stage1_sweep(&mut self) -> Result<()> {
        let d = self.state.dims();
        for c in 0..d.num_concepts {
            for a in 0..d.num_actions {
                let old = self.state.context.get(c, a);
                self.state.context.flip(c, a);
                let accepted = if is_valid_context(&self.state.context) {
                    let ll = self.eval.candidate(&self.state, Change::Entry(c, a))?;
                    let prior_ratio = log_x_entry(self.priors.x_prior, 1 - old)
                        - log_x_entry(self.priors.x_prior, old);
                    let ok =
                        mh_accept(self.beta * (ll - self.ll) + prior_ratio, 0.0, &mut self.rng);
                    if ok {
                        self.ll = ll;
                        self.eval.commit(Change::Entry(c, a));
                    }
                    ok
                } else {
                    false
                };
                if !accepted {
                    self.state.context.set(c, a, old);
                }
                self.accept.x.record(accepted);
                self.events.push(TraceEvent {
                    iter: self.iter,
                    stage: 1,
                    block: Block::X,
                    accepted,
                    log_likelihood: self.ll,
                });
            }
        }
        Ok(())
    }

    fn propose_simplex(&mut self, block: Block) -> Result<()> {
        let (current, prior, role, change) = match block {
            Block::Y => (
                self.state.action_prior.probs().to_vec(),
                self.priors.y_prior,
                PriorRole::Action,
                Change::ActionPrior,
            ),
            _ => (
                self.state.concept_prior.probs().to_vec(),
                self.priors.z_prior,
                PriorRole::Concept,
                Change::ConceptPrior,
            ),
        };
        let proposed = sample_dirichlet(&self.proposals.alpha(&current), &mut self.rng);
        let correction = self.proposals.log_correction(&current, &proposed);
        let prior_ratio = log_simplex_prior(&proposed, prior) - log_simplex_prior(&current, prior);
        let mut cand = self.state.clone();
        let v = SimplexVector::new_unchecked(proposed, role);
        match block {
            Block::Y => cand.action_prior = v,
            _ => cand.concept_prior = v,
        }
        let ll = self.eval.candidate(&cand, change)?;
        let accepted = mh_accept(
            self.beta * (ll - self.ll) + prior_ratio,
            correction,
            &mut self.rng,
        );
        if accepted {
            self.ll = ll;
            self.state = cand;
            self.eval.commit(change);
        }
        match block {
            Block::Y => self.accept.y.record(accepted),
            _ => self.accept.z.record(accepted),
        }
        self.events.push(TraceEvent {
            iter: self.iter,
            stage: 2,
            block,
            accepted,
            log_likelihood: self.ll,
        });
        Ok(())
    }

    /// One proposal for `y`, then one for `z`.
    pub fn stage2_sweep(&mut self) -> Result<()> {
        self.propose_simplex(Block::Y)?;
        self.propose_simplex(Block::Z)
    }

    /// Recompute the current likelihood from scratch (drops accumulated
    /// rounding in incremental residuals).
    pub fn refresh(&mut self) -> Result<()> {
        self.ll = self.eval.reset(&self.state)?;
        Ok(())
    }
}

/// Run `K` outer iterations of (stage 1 x `K1`, stage 2 x `K2`).
pub fn tmh_run(
    r_bar: &EmpiricalDecoder,
    spec: LikelihoodSpec<'_>,
    priors: &PriorConfig,
    proposals: &ProposalConfig,
    cfg: &SamplerConfig,
    init: Init,
) -> Result<ChainTrace> {
    cfg.validate()?;
    let mut s = Sampler::new(
        r_bar,
        spec,
        priors,
        proposals,
        cfg.sigma,
        cfg.memoize,
        init,
        cfg.seed,
    )?;
    let mut states = Vec::with_capacity(cfg.k);
    let mut lls = Vec::with_capacity(cfg.k);
    for it in 0..cfg.k {
        s.iter = it;
        s.beta = cfg.beta_at(it);
        for _ in 0..cfg.k1 {
            s.stage1_sweep()?;
        }
        if !cfg.freeze_priors {
            for _ in 0..cfg.k2 {
                s.stage2_sweep()?;
            }
        }
        if matches!(spec, LikelihoodSpec::Ilcr(_)) {
            s.refresh()?;
        }
        states.push(s.state.clone());
        lls.push(s.ll);
    }
    Ok(ChainTrace {
        states,
        log_likelihoods: lls,
        accept: s.accept,
        op_count: s.eval.ops,
        events: std::mem::take(&mut s.events),
        burn_in: cfg.burn_in_len(),
        evaluations: s.eval.evaluations,
        memo_hits: s.eval.memo_hits,
    })
}
