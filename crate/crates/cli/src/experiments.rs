//! Preset experiments. Each preset turns an [`ExperimentConfig`] into metric
//! rows; replications run on the rayon pool and are collected in task order,
//! so outputs do not depend on scheduling.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context as _, Result};
use rayon::prelude::*;
use serde::Serialize;
use snc_core::game::{
    min_symbols_for_effectiveness, synth_empirical_decoder, EmpiricalDecoder, NoiseModel,
};
use snc_core::inference::{
    enumerate_x_marginals, initial_context, map_oracle, point_estimate, tmh_run, ChainTrace, Init,
    LikelihoodSpec, PointRule, PriorConfig, SamplerConfig, SimplexPrior, XPrior, INIT_CANDIDATES,
};
use snc_core::lcr::{
    gen_training_set, gradient_gate, lcr_apply, lcr_coders, rip_stats_on_worlds, train_lcr,
    LearningCurve, LinearModel,
};
use snc_core::metrics::ops::{
    contextual_reasoning_ops, full_linear_loglik_ops, icr_loglik_ops, incremental_loglik_ops,
    matvec_ops,
};
use snc_core::metrics::{
    bernoulli_js, entropy_bits, expected_bits, huffman_expected_length, inversion_success,
    prior_rmse, rmse,
};
use snc_core::reasoning::Orientation;
use snc_core::world::is_valid_context;
use snc_core::{
    contextual_reasoning, derive_seed, effectiveness, make_world, naive_decoder, naive_encoder,
    seeded, Coder, SncError, WorldDims, WorldGenConfig, WorldTuple,
};

use crate::config::{ChainStart, ExperimentConfig, Preset, FORMAT_VERSION};
use crate::output::{curves_csv, metrics_csv, write_file, CurveRow, MetricRow};

const TAG_WORLD: u64 = 1;
const TAG_DATA: u64 = 2;
const TAG_TRAIN: u64 = 3;
const TAG_NOISE: u64 = 4;
const TAG_CHAIN: u64 = 5;
const TAG_GAME: u64 = 6;
const TAG_PROBE: u64 = 7;

/// fig4 measures whole-chain op totals on a few short chains.
pub const FIG4_CHAIN_K: usize = 10;
pub const FIG4_CHAIN_WORLDS: usize = 5;
/// Held-out worlds used as RIP probes in fig5b.
pub const RIP_PROBES: usize = 200;

#[derive(Clone, Debug, Default)]
pub struct ExperimentOutput {
    pub metrics: Vec<MetricRow>,
    pub curves: Vec<CurveRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryGroup {
    pub method: String,
    pub dims: usize,
    pub s: f64,
    pub metric: String,
    pub step: Option<usize>,
    pub n: usize,
    pub mean: f64,
}

impl ExperimentOutput {
    /// Mean of every (method, dims, s, metric, step) group, in first-seen order.
    pub fn summary(&self) -> Vec<SummaryGroup> {
        let mut order: Vec<(String, usize, u64, String, Option<usize>)> = Vec::new();
        let mut acc: BTreeMap<(String, usize, u64, String, Option<usize>), (usize, f64)> =
            BTreeMap::new();
        for r in &self.metrics {
            let key = (
                r.method.clone(),
                r.dims,
                r.s.to_bits(),
                r.metric.clone(),
                r.step,
            );
            let e = acc.entry(key.clone()).or_insert_with(|| {
                order.push(key);
                (0, 0.0)
            });
            e.0 += 1;
            e.1 += r.value;
        }
        order
            .into_iter()
            .map(|k| {
                let (n, sum) = acc[&k];
                SummaryGroup {
                    method: k.0,
                    dims: k.1,
                    s: f64::from_bits(k.2),
                    metric: k.3,
                    step: k.4,
                    n,
                    mean: sum / n as f64,
                }
            })
            .collect()
    }

    /// Values of `metric` for `method` at `dims`, in replication order.
    pub fn values(&self, method: &str, dims: usize, metric: &str, step: Option<usize>) -> Vec<f64> {
        self.metrics
            .iter()
            .filter(|r| {
                r.method == method && r.dims == dims && r.metric == metric && r.step == step
            })
            .map(|r| r.value)
            .collect()
    }

    pub fn mean(
        &self,
        method: &str,
        dims: usize,
        metric: &str,
        step: Option<usize>,
    ) -> Option<f64> {
        let v = self.values(method, dims, metric, step);
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Probes of the finite-difference gradient check run before any training.
pub const GATE_PROBES: usize = 20;

/// Check the analytic loss gradients on 3x3 worlds before training anything.
pub fn check_gradients_before_training(
    reasoning: &snc_core::ReasoningConfig,
    seed: u64,
) -> Result<()> {
    gradient_gate(dims_of(3)?, reasoning, GATE_PROBES, seed).context("gradient gate")?;
    Ok(())
}

pub fn run_preset(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    if matches!(
        cfg.preset,
        Preset::Fig5a | Preset::Fig5b | Preset::Fig6 | Preset::Fig7
    ) {
        check_gradients_before_training(&cfg.reasoning, derive_seed(cfg.seed, &[TAG_TRAIN]))?;
    }
    match cfg.preset {
        Preset::Fig3 => fig3(cfg),
        Preset::Fig4 => fig4(cfg),
        Preset::Fig5a => fig5a(cfg),
        Preset::Fig5b => fig5b(cfg),
        Preset::Fig6 => fig6(cfg),
        Preset::Fig7 => fig7(cfg),
    }
}

/// Write `metrics.csv`, `curves.csv` (when present), `summary.json` and the
/// manifest (the resolved config) into `dir`.
pub fn write_outputs(cfg: &ExperimentConfig, out: &ExperimentOutput, dir: &Path) -> Result<()> {
    write_file(&dir.join("manifest.json"), &cfg.to_json()?)?;
    write_file(&dir.join("metrics.csv"), &metrics_csv(&out.metrics)?)?;
    if !out.curves.is_empty() {
        write_file(&dir.join("curves.csv"), &curves_csv(&out.curves)?)?;
    }
    let summary = serde_json::json!({
        "format_version": FORMAT_VERSION,
        "preset": cfg.preset,
        "groups": out.summary(),
    });
    write_file(
        &dir.join("summary.json"),
        &serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// shared pieces

fn dims_of(n: usize) -> Result<WorldDims> {
    Ok(WorldDims::square(n)?)
}

fn world_seed(cfg: &ExperimentConfig, dim: usize, rep: usize) -> u64 {
    derive_seed(cfg.seed, &[TAG_WORLD, dim as u64, rep as u64])
}

fn gen_world(dim: usize, s: f64, seed: u64) -> Result<WorldTuple> {
    let wc = WorldGenConfig::new(dims_of(dim)?, s);
    Ok(make_world(&wc, &mut seeded(seed))?)
}

/// Training objective: misfit plus effectiveness (L1), or with the RIP
/// penalty added (L2).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Loss {
    L1,
    L2,
}

impl Loss {
    fn tag(self) -> u64 {
        match self {
            Loss::L1 => 1,
            Loss::L2 => 2,
        }
    }
}

/// Train one linear model for square worlds of size `dim` at sparsity `s`.
/// `rep` selects an independent dataset and initialization.
pub fn train_model(
    cfg: &ExperimentConfig,
    dim: usize,
    s: f64,
    loss: Loss,
    rep: u64,
) -> Result<(LinearModel, LearningCurve)> {
    let d = dims_of(dim)?;
    let key = [dim as u64, s.to_bits(), rep];
    let mut rng = seeded(derive_seed(cfg.seed, &[TAG_DATA, key[0], key[1], key[2]]));
    let data = gen_training_set(
        &WorldGenConfig::new(d, s),
        &cfg.reasoning,
        cfg.train_size,
        &mut rng,
    )?;
    let mut tc = match loss {
        Loss::L1 => cfg.train.without_rip(),
        Loss::L2 => cfg.train.clone(),
    };
    tc.seed = derive_seed(cfg.seed, &[TAG_TRAIN, key[0], key[1], key[2], loss.tag()]);
    Ok(train_lcr(&data, d, &tc)?)
}

/// Models for every swept size, trained in parallel.
fn models_for(cfg: &ExperimentConfig, loss: Loss) -> Result<BTreeMap<usize, LinearModel>> {
    cfg.dims
        .par_iter()
        .map(|&n| Ok((n, train_model(cfg, n, cfg.sparsity, loss, 0)?.0)))
        .collect()
}

/// `R*(t) + N`, together with the converged coders.
fn observe_cr(
    cfg: &ExperimentConfig,
    t: &WorldTuple,
    seed: u64,
) -> Result<(EmpiricalDecoder, Coder, Coder)> {
    let res = contextual_reasoning(t, &cfg.reasoning)?;
    let rb = synth_empirical_decoder(&res.decoder, NoiseModel::new(cfg.sigma)?, &mut seeded(seed))?;
    Ok((rb, res.encoder, res.decoder))
}

/// `Φ vec(t) + N`.
fn observe_lcr(
    cfg: &ExperimentConfig,
    t: &WorldTuple,
    model: &LinearModel,
    seed: u64,
) -> Result<EmpiricalDecoder> {
    let mean = Coder::from_col_major(t.dims(), lcr_apply(model, t)?, Orientation::RowStochastic)?;
    Ok(synth_empirical_decoder(
        &mean,
        NoiseModel::new(cfg.sigma)?,
        &mut seeded(seed),
    )?)
}

/// Priors matching the world generator: Bernoulli(s) entries, Dirichlet(1) vectors.
fn known_priors(s: f64) -> PriorConfig {
    PriorConfig {
        x_prior: XPrior::Bernoulli { s },
        y_prior: SimplexPrior::Dirichlet { delta: 1.0 },
        z_prior: SimplexPrior::Dirichlet { delta: 1.0 },
    }
}

struct Chain<'a> {
    cfg: &'a ExperimentConfig,
    k: usize,
    k1: usize,
    k2: usize,
    burn_in: Option<usize>,
    freeze_priors: bool,
    anneal_from: Option<f64>,
    priors: PriorConfig,
}

impl<'a> Chain<'a> {
    fn standard(cfg: &'a ExperimentConfig) -> Self {
        Chain {
            cfg,
            k: cfg.chain.k,
            k1: cfg.chain.k1,
            k2: cfg.chain.k2,
            burn_in: cfg.chain.burn_in,
            freeze_priors: false,
            anneal_from: None,
            priors: cfg.priors,
        }
    }

    fn start(&self) -> Init {
        match self.cfg.chain.start {
            ChainStart::Random => Init::Random,
            ChainStart::Observation => Init::FromObservation,
        }
    }

    fn run(
        &self,
        rb: &EmpiricalDecoder,
        spec: LikelihoodSpec<'_>,
        init: Init,
        seed: u64,
    ) -> Result<ChainTrace> {
        let sc = SamplerConfig {
            k: self.k,
            k1: self.k1,
            k2: self.k2,
            burn_in: self.burn_in,
            sigma: self.cfg.sigma,
            seed,
            freeze_priors: self.freeze_priors,
            memoize: self.cfg.chain.memoize,
            anneal_from: self.anneal_from,
        };
        Ok(tmh_run(
            rb,
            spec,
            &self.priors,
            &self.cfg.proposals,
            &sc,
            init,
        )?)
    }
}

/// Point estimate of the first `k` states with the default 20% burn-in.
fn estimate_at(trace: &ChainTrace, k: usize, rule: PointRule) -> Result<WorldTuple> {
    let k = k.min(trace.states.len());
    let start = trace.burn_in.min(k / 5);
    Ok(point_estimate(&trace.states[start..k], rule)?)
}

fn estimate(trace: &ChainTrace, rule: PointRule) -> Result<WorldTuple> {
    Ok(point_estimate(trace.post_burn_in(), rule)?)
}

/// An estimate whose context can be reasoned with: the configured rule, or
/// the modal visited context when rounding produced an invalid one.
fn usable_estimate(trace: &ChainTrace, rule: PointRule) -> Result<WorldTuple> {
    let e = estimate(trace, rule)?;
    if is_valid_context(&e.context) {
        return Ok(e);
    }
    estimate(trace, PointRule::MarginalMode)
}

struct Rows<'a> {
    cfg: &'a ExperimentConfig,
    dims: usize,
    s: f64,
    world_seed: Option<u64>,
    out: Vec<MetricRow>,
}

impl<'a> Rows<'a> {
    fn new(cfg: &'a ExperimentConfig, dims: usize, world_seed: Option<u64>) -> Self {
        Rows {
            cfg,
            dims,
            s: cfg.sparsity,
            world_seed,
            out: Vec::new(),
        }
    }

    fn push(&mut self, method: &str, metric: &str, step: Option<usize>, value: f64) {
        self.out.push(MetricRow {
            experiment: self.cfg.preset.name().to_string(),
            world_seed: self.world_seed,
            method: method.to_string(),
            dims: self.dims,
            s: self.s,
            sigma: self.cfg.sigma,
            metric: metric.to_string(),
            step,
            value,
        });
    }
}

/// Run `f` for every (size, replication) pair in parallel and concatenate
/// the rows in task order.
fn per_world<F>(cfg: &ExperimentConfig, f: F) -> Result<Vec<MetricRow>>
where
    F: Fn(usize, usize, u64) -> Result<Vec<MetricRow>> + Sync,
{
    let tasks: Vec<(usize, usize)> = cfg
        .dims
        .iter()
        .flat_map(|&n| (0..cfg.replications).map(move |r| (n, r)))
        .collect();
    let parts: Vec<Vec<MetricRow>> = tasks
        .par_iter()
        .map(|&(n, r)| {
            let ws = world_seed(cfg, n, r);
            f(n, r, ws).with_context(|| {
                format!("{} dims {n} replication {r} (world seed {ws})", cfg.preset)
            })
        })
        .collect::<Result<_>>()?;
    Ok(parts.into_iter().flatten().collect())
}

fn sub_seed(ws: u64, tag: u64, arm: u64) -> u64 {
    derive_seed(ws, &[tag, arm])
}

// ---------------------------------------------------------------------------
// fig3: sampler exactness against enumeration, and reconstruction error vs K

/// Largest context on which fig3 runs the exactness comparison.
pub const FIG3_EXACT_MAX_ENTRIES: usize = 16;
/// Largest context on which fig3 runs the MAP grid search.
pub const FIG3_MAP_MAX_ENTRIES: usize = 4;

fn fig3(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let needs_model = ["ilcr", "ilcr_known", "exact_ilcr"]
        .iter()
        .any(|m| cfg.wants(m));
    let models = if needs_model {
        models_for(cfg, Loss::L2)?
    } else {
        BTreeMap::new()
    };
    let metrics = per_world(cfg, |n, _, ws| {
        let t = gen_world(n, cfg.sparsity, ws)?;
        let d = t.dims();
        let mut rows = Rows::new(cfg, n, Some(ws));
        let (rb_cr, _, _) = observe_cr(cfg, &t, sub_seed(ws, TAG_NOISE, 0))?;
        let model = models.get(&n);
        let rb_lcr = match model {
            Some(m) => Some(observe_lcr(cfg, &t, m, sub_seed(ws, TAG_NOISE, 1))?),
            None => None,
        };

        if d.entries() <= FIG3_EXACT_MAX_ENTRIES {
            // priors held at truth
            let burn = cfg.exact_states / 4;
            let exact = Chain {
                k: cfg.exact_states + burn,
                k1: 1,
                k2: 1,
                burn_in: Some(burn),
                freeze_priors: true,
                anneal_from: cfg.exact_anneal_from,
                ..Chain::standard(cfg)
            };
            let arms: [(&str, Option<(&EmpiricalDecoder, LikelihoodSpec<'_>)>); 2] = [
                (
                    "exact_icr",
                    Some((&rb_cr, LikelihoodSpec::Icr(cfg.reasoning))),
                ),
                (
                    "exact_ilcr",
                    rb_lcr
                        .as_ref()
                        .zip(model)
                        .map(|(rb, m)| (rb, LikelihoodSpec::Ilcr(m))),
                ),
            ];
            for (i, (name, arm)) in arms.into_iter().enumerate() {
                let Some((rb, spec)) = arm else { continue };
                if !cfg.wants(name) {
                    continue;
                }
                let seed = sub_seed(ws, TAG_CHAIN, 100 + i as u64);
                let x0 = initial_context(
                    rb,
                    &t.action_prior,
                    &t.concept_prior,
                    cfg.sigma,
                    spec,
                    &cfg.priors,
                    INIT_CANDIDATES,
                    &mut seeded(seed),
                )?;
                let init = WorldTuple::new(x0, t.action_prior.clone(), t.concept_prior.clone())?;
                let trace = exact.run(rb, spec, Init::Given(init), seed)?;
                let oracle = enumerate_x_marginals(
                    rb,
                    &t.action_prior,
                    &t.concept_prior,
                    cfg.sigma,
                    spec,
                    &cfg.priors,
                )?;
                let post = trace.post_burn_in();
                let mut total = 0.0;
                for (e, q) in oracle.iter().enumerate() {
                    let p = post
                        .iter()
                        .filter(|s| s.context.as_col_major()[e] == 1)
                        .count() as f64
                        / post.len() as f64;
                    let js = bernoulli_js(p, *q);
                    total += js;
                    rows.push(name, "js_entry", Some(e), js);
                }
                rows.push(name, "js_mean", None, total / oracle.len() as f64);
                rows.push(name, "accept_x", None, trace.accept.x.rate());
            }
        }

        let rb_lcr_ref = rb_lcr.as_ref();
        let arms: [(
            &str,
            Option<(&EmpiricalDecoder, LikelihoodSpec<'_>)>,
            PriorConfig,
        ); 4] = [
            (
                "icr",
                Some((&rb_cr, LikelihoodSpec::Icr(cfg.reasoning))),
                cfg.priors,
            ),
            (
                "icr_known",
                Some((&rb_cr, LikelihoodSpec::Icr(cfg.reasoning))),
                known_priors(cfg.sparsity),
            ),
            (
                "ilcr",
                rb_lcr_ref
                    .zip(model)
                    .map(|(rb, m)| (rb, LikelihoodSpec::Ilcr(m))),
                cfg.priors,
            ),
            (
                "ilcr_known",
                rb_lcr_ref
                    .zip(model)
                    .map(|(rb, m)| (rb, LikelihoodSpec::Ilcr(m))),
                known_priors(cfg.sparsity),
            ),
        ];
        for (i, (name, arm, priors)) in arms.into_iter().enumerate() {
            let Some((rb, spec)) = arm else { continue };
            if !cfg.wants(name) {
                continue;
            }
            let chain = Chain {
                priors,
                ..Chain::standard(cfg)
            };
            let trace = chain.run(rb, spec, chain.start(), sub_seed(ws, TAG_CHAIN, i as u64))?;
            for &k in &cfg.k_checkpoints {
                let e = estimate_at(&trace, k, cfg.point_rule)?;
                rows.push(name, "rmse", Some(k), rmse(&e, &t)?);
            }
            rows.push(
                name,
                "ops",
                Some(cfg.chain.k),
                trace.op_count.total() as f64,
            );
        }

        if cfg.wants("map") && d.entries() <= FIG3_MAP_MAX_ENTRIES {
            let m = map_oracle(
                &rb_cr,
                cfg.sigma,
                LikelihoodSpec::Icr(cfg.reasoning),
                &known_priors(cfg.sparsity),
                cfg.map_grid_step,
            )?;
            rows.push("map", "rmse", None, rmse(&m, &t)?);
        }
        Ok(rows.out)
    })?;
    Ok(ExperimentOutput {
        metrics,
        curves: Vec::new(),
    })
}

// ---------------------------------------------------------------------------
// fig4: arithmetic cost

/// Operation counts for one world size, all derived from the analytic
/// formulas and the mean iteration count over `worlds` seeded worlds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CostProfile {
    pub dims: usize,
    pub mean_iterations: f64,
    /// One recursion-based likelihood evaluation.
    pub icr_eval: f64,
    /// One single-entry incremental linear likelihood evaluation.
    pub ilcr_eval: f64,
    /// One linear likelihood evaluation from scratch.
    pub ilcr_full_eval: f64,
    /// One full recursion.
    pub cr_apply: f64,
    /// One application of the linear map.
    pub lcr_apply: f64,
}

impl CostProfile {
    pub fn eval_ratio(&self) -> f64 {
        self.icr_eval / self.ilcr_eval
    }
}

pub fn cost_profile(cfg: &ExperimentConfig, n: usize) -> Result<CostProfile> {
    let d = dims_of(n)?;
    let iters: Vec<usize> = (0..cfg.iteration_worlds)
        .into_par_iter()
        .map(|r| {
            let t = gen_world(n, cfg.sparsity, world_seed(cfg, n, r))?;
            Ok(contextual_reasoning(&t, &cfg.reasoning)?.iterations)
        })
        .collect::<Result<_>>()?;
    let k = iters.len() as f64;
    let mean = |f: &dyn Fn(usize) -> u64| iters.iter().map(|&i| f(i) as f64).sum::<f64>() / k;
    let n_out = LinearModel::n_out(d);
    let n_in = LinearModel::n_in(d);
    Ok(CostProfile {
        dims: n,
        mean_iterations: iters.iter().sum::<usize>() as f64 / k,
        icr_eval: mean(&|i| icr_loglik_ops(d, i).total()),
        ilcr_eval: incremental_loglik_ops(n_out, 1).total() as f64,
        ilcr_full_eval: full_linear_loglik_ops(n_out, n_in).total() as f64,
        cr_apply: mean(&|i| contextual_reasoning_ops(d, i).total()),
        lcr_apply: matvec_ops(n_out, n_in).total() as f64,
    })
}

fn fig4(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let mut metrics = Vec::new();
    for &n in &cfg.dims {
        let p = cost_profile(cfg, n)?;
        let mut rows = Rows::new(cfg, n, None);
        rows.push("cr", "mean_iterations", None, p.mean_iterations);
        rows.push("icr", "eval_ops", None, p.icr_eval);
        rows.push("ilcr", "eval_ops", None, p.ilcr_eval);
        rows.push("ilcr", "full_eval_ops", None, p.ilcr_full_eval);
        rows.push("icr/ilcr", "eval_ratio", None, p.eval_ratio());
        rows.push("cr", "apply_ops", None, p.cr_apply);
        rows.push("lcr", "apply_ops", None, p.lcr_apply);
        metrics.extend(rows.out);

        // whole-chain totals on a few short chains; the op counts do not
        // depend on the weights, so an untrained map is enough
        let d = dims_of(n)?;
        let model = LinearModel::random(
            d,
            None,
            &mut seeded(derive_seed(cfg.seed, &[TAG_TRAIN, n as u64])),
        )?;
        let chain = Chain {
            k: FIG4_CHAIN_K,
            burn_in: Some(0),
            ..Chain::standard(cfg)
        };
        let reps = cfg.replications.min(FIG4_CHAIN_WORLDS);
        let parts: Vec<Vec<MetricRow>> = (0..reps)
            .into_par_iter()
            .map(|r| {
                let ws = world_seed(cfg, n, r);
                let t = gen_world(n, cfg.sparsity, ws)?;
                let (rb, _, _) = observe_cr(cfg, &t, sub_seed(ws, TAG_NOISE, 0))?;
                let mut rows = Rows::new(cfg, n, Some(ws));
                for (name, spec) in [
                    ("icr", LikelihoodSpec::Icr(cfg.reasoning)),
                    ("ilcr", LikelihoodSpec::Ilcr(&model)),
                ] {
                    let tr = chain.run(&rb, spec, chain.start(), sub_seed(ws, TAG_CHAIN, 0))?;
                    rows.push(
                        name,
                        "chain_ops",
                        Some(FIG4_CHAIN_K),
                        tr.op_count.total() as f64,
                    );
                    rows.push(
                        name,
                        "chain_evaluations",
                        Some(FIG4_CHAIN_K),
                        tr.evaluations as f64,
                    );
                }
                Ok(rows.out)
            })
            .collect::<Result<_>>()?;
        metrics.extend(parts.into_iter().flatten());
    }
    Ok(ExperimentOutput {
        metrics,
        curves: Vec::new(),
    })
}

// ---------------------------------------------------------------------------
// fig5a: learning curves across sparsity

fn fig5a(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let mut tasks = Vec::new();
    for &n in &cfg.dims {
        for &s in &cfg.sparsity_sweep {
            for r in 0..cfg.replications {
                for loss in [Loss::L2, Loss::L1] {
                    let name = if loss == Loss::L2 { "l2" } else { "l1" };
                    if (cfg.methods.is_empty() && loss == Loss::L2)
                        || cfg.methods.iter().any(|m| m == name)
                    {
                        tasks.push((n, s, r, loss, name));
                    }
                }
            }
        }
    }
    let parts: Vec<(Vec<MetricRow>, Vec<CurveRow>)> = tasks
        .par_iter()
        .map(|&(n, s, r, loss, name)| {
            let (_, curve) = train_model(cfg, n, s, loss, r as u64)?;
            let seed = derive_seed(
                cfg.seed,
                &[TAG_TRAIN, n as u64, s.to_bits(), r as u64, loss.tag()],
            );
            let curves: Vec<CurveRow> = curve
                .epochs
                .iter()
                .map(|e| CurveRow {
                    experiment: cfg.preset.name().into(),
                    seed,
                    method: name.into(),
                    dims: n,
                    s,
                    epoch: e.epoch,
                    l_mis: e.l_mis,
                    l_eff: e.l_eff,
                    l_rip: e.l_rip,
                    total: e.total,
                })
                .collect();
            let last = curve.last().context("empty learning curve")?;
            let mut rows = Rows::new(cfg, n, Some(seed));
            rows.s = s;
            rows.push(name, "final_l_mis", None, last.l_mis);
            rows.push(name, "final_total", None, last.total);
            Ok((rows.out, curves))
        })
        .collect::<Result<_>>()?;
    let mut out = ExperimentOutput::default();
    for (m, c) in parts {
        out.metrics.extend(m);
        out.curves.extend(c);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// fig5b: inversion success

fn fig5b(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let l1 = if cfg.wants("ilcr_l1") {
        models_for(cfg, Loss::L1)?
    } else {
        BTreeMap::new()
    };
    let l2 = if cfg.wants("ilcr_l2") {
        models_for(cfg, Loss::L2)?
    } else {
        BTreeMap::new()
    };
    let mut metrics = Vec::new();
    for &n in &cfg.dims {
        let probes: Vec<WorldTuple> = (0..RIP_PROBES)
            .map(|i| {
                gen_world(
                    n,
                    cfg.sparsity,
                    derive_seed(cfg.seed, &[TAG_PROBE, n as u64, i as u64]),
                )
            })
            .collect::<Result<_>>()?;
        let mut rows = Rows::new(cfg, n, None);
        for (name, models) in [("ilcr_l1", &l1), ("ilcr_l2", &l2)] {
            if let Some(m) = models.get(&n) {
                let st = rip_stats_on_worlds(m, &probes)?;
                rows.push(name, "rip_delta_hat", None, st.delta_hat);
                let mean_dev =
                    st.ratios.iter().map(|r| (r - 1.0).abs()).sum::<f64>() / st.ratios.len() as f64;
                rows.push(name, "rip_mean_deviation", None, mean_dev);
            }
        }
        metrics.extend(rows.out);
    }
    metrics.extend(per_world(cfg, |n, _, ws| {
        let t = gen_world(n, cfg.sparsity, ws)?;
        let mut rows = Rows::new(cfg, n, Some(ws));
        let chain = Chain::standard(cfg);
        let score = |rows: &mut Rows, name: &str, trace: &ChainTrace| -> Result<()> {
            let e = estimate(trace, cfg.point_rule)?;
            rows.push(
                name,
                "success",
                None,
                f64::from(u8::from(inversion_success(&e, &t, &cfg.criteria))),
            );
            rows.push(name, "rmse", None, rmse(&e, &t)?);
            rows.push(name, "prior_rmse", None, prior_rmse(&e, &t)?);
            rows.push(
                name,
                "accept_prior",
                None,
                (trace.accept.y.rate() + trace.accept.z.rate()) / 2.0,
            );
            rows.push(
                name,
                "x_exact",
                None,
                f64::from(u8::from(e.context == t.context)),
            );
            Ok(())
        };
        if cfg.wants("icr") {
            let (rb, _, _) = observe_cr(cfg, &t, sub_seed(ws, TAG_NOISE, 0))?;
            let tr = chain.run(
                &rb,
                LikelihoodSpec::Icr(cfg.reasoning),
                chain.start(),
                sub_seed(ws, TAG_CHAIN, 0),
            )?;
            score(&mut rows, "icr", &tr)?;
        }
        for (i, (name, models)) in [("ilcr_l1", &l1), ("ilcr_l2", &l2)].into_iter().enumerate() {
            let Some(m) = models.get(&n) else { continue };
            let rb = observe_lcr(cfg, &t, m, sub_seed(ws, TAG_NOISE, 1 + i as u64))?;
            let tr = chain.run(
                &rb,
                LikelihoodSpec::Ilcr(m),
                chain.start(),
                sub_seed(ws, TAG_CHAIN, 1 + i as u64),
            )?;
            score(&mut rows, name, &tr)?;
        }
        Ok(rows.out)
    })?);
    Ok(ExperimentOutput {
        metrics,
        curves: Vec::new(),
    })
}

// ---------------------------------------------------------------------------
// fig6 / fig7: communication with an inferred context

/// Coders Carol can build from her estimate.
struct Estimates {
    icr: Option<WorldTuple>,
    ilcr: Option<WorldTuple>,
}

fn infer_contexts(
    cfg: &ExperimentConfig,
    t: &WorldTuple,
    model: Option<&LinearModel>,
    ws: u64,
    want_icr: bool,
    want_ilcr: bool,
) -> Result<Estimates> {
    let chain = Chain::standard(cfg);
    let icr = if want_icr {
        let (rb, _, _) = observe_cr(cfg, t, sub_seed(ws, TAG_NOISE, 0))?;
        let tr = chain.run(
            &rb,
            LikelihoodSpec::Icr(cfg.reasoning),
            chain.start(),
            sub_seed(ws, TAG_CHAIN, 0),
        )?;
        Some(usable_estimate(&tr, cfg.point_rule)?)
    } else {
        None
    };
    let ilcr = match (want_ilcr, model) {
        (true, Some(m)) => {
            let rb = observe_lcr(cfg, t, m, sub_seed(ws, TAG_NOISE, 1))?;
            let tr = chain.run(
                &rb,
                LikelihoodSpec::Ilcr(m),
                chain.start(),
                sub_seed(ws, TAG_CHAIN, 1),
            )?;
            Some(usable_estimate(&tr, cfg.point_rule)?)
        }
        _ => None,
    };
    Ok(Estimates { icr, ilcr })
}

/// Carol's recursion-based decoder for her estimate; a degenerate recursion
/// leaves her with a decoder that never acts (effectiveness 0).
fn carol_cr_decoder(cfg: &ExperimentConfig, est: &WorldTuple) -> Result<Coder> {
    match contextual_reasoning(est, &cfg.reasoning) {
        Ok(r) => Ok(r.decoder),
        Err(SncError::DegenerateColumn(_)) | Err(SncError::InvalidContext(_)) => {
            let d = est.dims();
            Ok(Coder::from_col_major(
                d,
                vec![0.0; d.entries()],
                Orientation::RowStochastic,
            )?)
        }
        Err(e) => Err(e.into()),
    }
}

fn fig6(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let need_model = ["ab_lcr", "ac_ilcr", "ac_ilcr_cr"]
        .iter()
        .any(|m| cfg.wants(m));
    let models = if need_model {
        models_for(cfg, Loss::L2)?
    } else {
        BTreeMap::new()
    };
    let metrics = per_world(cfg, |n, _, ws| {
        let t = gen_world(n, cfg.sparsity, ws)?;
        let y = t.action_prior.probs();
        let model = models.get(&n);
        let mut rows = Rows::new(cfg, n, Some(ws));
        let cr = contextual_reasoning(&t, &cfg.reasoning)?;
        if cfg.wants("ab_naive") {
            let v = effectiveness(&naive_encoder(&t.context)?, &naive_decoder(&t.context), y)?;
            rows.push("ab_naive", "effectiveness", None, v);
        }
        if cfg.wants("ab_cr") {
            rows.push(
                "ab_cr",
                "effectiveness",
                None,
                effectiveness(&cr.encoder, &cr.decoder, y)?,
            );
        }
        let lcr = match model {
            Some(m) => Some(lcr_coders(m, &t, cfg.train.weights.theta_s)?),
            None => None,
        };
        if let (true, Some((s, r))) = (cfg.wants("ab_lcr"), lcr.as_ref()) {
            rows.push("ab_lcr", "effectiveness", None, effectiveness(s, r, y)?);
        }
        let want_ilcr = cfg.wants("ac_ilcr") || cfg.wants("ac_ilcr_cr");
        let est = infer_contexts(cfg, &t, model, ws, cfg.wants("ac_icr"), want_ilcr)?;
        if let Some(e) = &est.icr {
            let r_hat = carol_cr_decoder(cfg, e)?;
            rows.push(
                "ac_icr",
                "effectiveness",
                None,
                effectiveness(&cr.encoder, &r_hat, y)?,
            );
            rows.push("ac_icr", "rmse", None, rmse(e, &t)?);
        }
        // Carol with the iLCR estimate, playing in the linearized world with
        // Alice's linearized encoder, or reasoning on her estimate with CR
        if let (Some(e), Some(m), Some((s, _)), true) =
            (&est.ilcr, model, lcr.as_ref(), cfg.wants("ac_ilcr"))
        {
            let (_, r_hat) = lcr_coders(m, e, cfg.train.weights.theta_s)?;
            rows.push(
                "ac_ilcr",
                "effectiveness",
                None,
                effectiveness(s, &r_hat, y)?,
            );
            rows.push("ac_ilcr", "rmse", None, rmse(e, &t)?);
        }
        if let (Some(e), true) = (&est.ilcr, cfg.wants("ac_ilcr_cr")) {
            let r_hat = carol_cr_decoder(cfg, e)?;
            rows.push(
                "ac_ilcr_cr",
                "effectiveness",
                None,
                effectiveness(&cr.encoder, &r_hat, y)?,
            );
        }
        Ok(rows.out)
    })?;
    Ok(ExperimentOutput {
        metrics,
        curves: Vec::new(),
    })
}

fn fig7(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let want_ilcr = cfg.wants("rational_ilcr") || cfg.wants("lcr_ilcr");
    let models = if want_ilcr {
        models_for(cfg, Loss::L2)?
    } else {
        BTreeMap::new()
    };
    let metrics = per_world(cfg, |n, _, ws| {
        let t = gen_world(n, cfg.sparsity, ws)?;
        let y = t.action_prior.probs();
        let z = t.concept_prior.probs();
        let model = models.get(&n);
        let mut rows = Rows::new(cfg, n, Some(ws));
        rows.push("source", "entropy_bits", None, entropy_bits(z));
        rows.push("source", "huffman_length", None, huffman_expected_length(z));
        let cr = contextual_reasoning(&t, &cfg.reasoning)?;
        let search = cfg.symbol_search;
        let record = |rows: &mut Rows, name: &str, s: &Coder, r: &Coder, arm: u64| -> Result<()> {
            let mut rng = seeded(sub_seed(ws, TAG_GAME, arm));
            // not reaching the threshold within the budget counts as one
            // symbol beyond it
            let l = match min_symbols_for_effectiveness(s, r, y, &search, &mut rng) {
                Ok(l) => l,
                Err(SncError::NotReached(max)) => max + 1,
                Err(e) => return Err(e.into()),
            };
            rows.push(name, "symbols", None, l as f64);
            rows.push(name, "bits", None, expected_bits(z, l as f64)?);
            Ok(())
        };
        if cfg.wants("naive") {
            record(
                &mut rows,
                "naive",
                &naive_encoder(&t.context)?,
                &naive_decoder(&t.context),
                0,
            )?;
        }
        if cfg.wants("rational") {
            record(&mut rows, "rational", &cr.encoder, &cr.decoder, 1)?;
        }
        let est = infer_contexts(cfg, &t, model, ws, cfg.wants("rational_icr"), want_ilcr)?;
        if let Some(e) = &est.icr {
            let r_hat = carol_cr_decoder(cfg, e)?;
            record(&mut rows, "rational_icr", &cr.encoder, &r_hat, 2)?;
        }
        if let (Some(e), true) = (&est.ilcr, cfg.wants("rational_ilcr")) {
            let r_hat = carol_cr_decoder(cfg, e)?;
            record(&mut rows, "rational_ilcr", &cr.encoder, &r_hat, 3)?;
        }
        if let (Some(e), Some(m), true) = (&est.ilcr, model, cfg.wants("lcr_ilcr")) {
            let (s, _) = lcr_coders(m, &t, cfg.train.weights.theta_s)?;
            let (_, r_hat) = lcr_coders(m, e, cfg.train.weights.theta_s)?;
            record(&mut rows, "lcr_ilcr", &s, &r_hat, 4)?;
        }
        Ok(rows.out)
    })?;
    Ok(ExperimentOutput {
        metrics,
        curves: Vec::new(),
    })
}
