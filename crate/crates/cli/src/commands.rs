//! Subcommands of the `snc` binary.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use snc_core::game::{
    collect_samples, empirical_decoder_from_samples, play_round, synth_empirical_decoder,
    EmpiricalDecoder, NoiseModel, NormalizationMode,
};
use snc_core::inference::{
    estimate_from_trace, tmh_run, Init, LikelihoodSpec, PointRule, PriorConfig, ProposalConfig,
    SamplerConfig, SimplexPrior, XPrior,
};
use snc_core::lcr::{gen_training_set, lcr_coders, train_lcr, LinearModel, ModelFile, TrainConfig};
use snc_core::metrics::{inversion_success, prior_rmse, rmse, InversionCriteria};
use snc_core::reasoning::CoderFile;
use snc_core::world::WorldFile;
use snc_core::{
    contextual_reasoning, effectiveness, make_world, naive_decoder, naive_encoder, seeded, Coder,
    ReasoningConfig, WorldDims, WorldGenConfig, WorldTuple,
};

use crate::config::{ExperimentConfig, Preset, FORMAT_VERSION};
use crate::experiments::{run_preset, write_outputs};
use crate::output::{
    emit, games_csv, learning_curve_csv, read_samples_csv, samples_csv, trace_csv, write_file,
};
use crate::ConfigError;

#[derive(Parser, Debug)]
#[command(
    name = "snc",
    version,
    about = "Contextual reasoning, its inversion and linearization"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample a random world and write it as JSON.
    GenWorld(GenWorldArgs),
    /// Run the recursion on a world and report the converged coders.
    Reason(ReasonArgs),
    /// Play single-symbol games and write game and sample logs.
    Simulate(SimulateArgs),
    /// Infer a world from an empirical decoder with the recursion likelihood.
    Icr(InferArgs),
    /// Infer a world with the linearized likelihood (needs --model).
    Ilcr(InferArgs),
    /// Train a linear map on sampled worlds.
    TrainLcr(TrainArgs),
    /// Compare an estimated world against the truth.
    Evaluate(EvaluateArgs),
    /// Run a preset experiment.
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug)]
pub struct GenWorldArgs {
    #[arg(long)]
    pub concepts: usize,
    #[arg(long)]
    pub actions: usize,
    #[arg(long, default_value_t = 0.3)]
    pub sparsity: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct WorldSource {
    /// World JSON file.
    #[arg(long, conflicts_with = "rabbit")]
    pub world: Option<PathBuf>,
    /// Use the built-in 3x3 example world.
    #[arg(long)]
    pub rabbit: bool,
}

impl WorldSource {
    fn load(&self) -> Result<WorldTuple> {
        match (&self.world, self.rabbit) {
            (_, true) => Ok(WorldTuple::rabbit()),
            (Some(p), false) => load_world(p),
            (None, false) => Err(ConfigError("pass --world FILE or --rabbit".into()).into()),
        }
    }
}

#[derive(Args, Debug)]
pub struct ReasonArgs {
    #[command(flatten)]
    pub source: WorldSource,
    #[arg(long, default_value_t = 1.1)]
    pub theta: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum CoderKind {
    Naive,
    Rational,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub source: WorldSource,
    #[arg(long, value_enum, default_value_t = CoderKind::Rational)]
    pub coders: CoderKind,
    #[arg(long, default_value_t = 1.1)]
    pub theta: f64,
    #[arg(long, default_value_t = 1000)]
    pub rounds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Game log CSV (target, action_taken, success, symbols).
    #[arg(long)]
    pub games: Option<PathBuf>,
    /// Sample CSV (concept_id, action_id) for the inference commands.
    #[arg(long)]
    pub samples: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    /// Observed (concept_id, action_id) pairs.
    #[arg(long, group = "obs")]
    pub samples: Option<PathBuf>,
    /// Observed decoder matrix as coder JSON.
    #[arg(long, group = "obs")]
    pub decoder: Option<PathBuf>,
    /// Synthesize the observation from this world (R* + noise, or Φt + noise
    /// for ilcr).
    #[arg(long, group = "obs")]
    pub synth_from: Option<PathBuf>,
    /// Concepts, required with --samples.
    #[arg(long)]
    pub concepts: Option<usize>,
    /// Actions, required with --samples.
    #[arg(long)]
    pub actions: Option<usize>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long = "K", default_value_t = 100)]
    pub k: usize,
    #[arg(long = "K1", default_value_t = 10)]
    pub k1: usize,
    #[arg(long = "K2", default_value_t = 10)]
    pub k2: usize,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    pub sigma: f64,
    #[arg(long, default_value_t = 1.1)]
    pub theta: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Bernoulli(s) prior on context entries; uniform when omitted.
    #[arg(long)]
    pub x_prior_s: Option<f64>,
    #[arg(long, value_enum, default_value_t = RuleArg::MeanRound)]
    pub point_rule: RuleArg,
    /// Start from a uniform random state instead of the best of the
    /// observation's support and a few random contexts.
    #[arg(long)]
    pub random_start: bool,
    /// Per-proposal trace CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Estimated world JSON; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Every recorded state as a JSON array of worlds.
    #[arg(long)]
    pub states: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum RuleArg {
    Last,
    MeanRound,
    Mode,
}

impl From<RuleArg> for PointRule {
    fn from(r: RuleArg) -> Self {
        match r {
            RuleArg::Last => PointRule::LastState,
            RuleArg::MeanRound => PointRule::PosteriorMeanThenRound,
            RuleArg::Mode => PointRule::MarginalMode,
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub concepts: usize,
    #[arg(long)]
    pub actions: usize,
    #[arg(long, default_value_t = 0.3)]
    pub sparsity: f64,
    #[arg(long, default_value_t = 2000)]
    pub size: usize,
    #[arg(long, default_value_t = 1.1)]
    pub theta: f64,
    /// TrainConfig JSON; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Drop the RIP penalty (plain misfit plus effectiveness loss).
    #[arg(long)]
    pub no_rip: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Raw little-endian f64 parameter blob.
    #[arg(long)]
    pub blob: Option<PathBuf>,
    #[arg(long)]
    pub curve: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub estimate: PathBuf,
    #[arg(long, default_value = "estimate")]
    pub method: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    #[arg(value_parser = parse_preset)]
    pub preset: Preset,
    /// ExperimentConfig JSON; the flags below take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
}

fn parse_preset(s: &str) -> std::result::Result<Preset, String> {
    s.parse().map_err(|e: anyhow::Error| e.to_string())
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn load_world(path: &Path) -> Result<WorldTuple> {
    let wf = WorldFile::from_json(&read(path)?)
        .with_context(|| format!("parsing {}", path.display()))?;
    Ok(wf.to_world()?)
}

fn load_model(path: &Path) -> Result<LinearModel> {
    let mf = ModelFile::from_json(&read(path)?)
        .with_context(|| format!("parsing {}", path.display()))?;
    Ok(mf.to_model()?)
}

fn reasoning(theta: f64) -> Result<ReasoningConfig> {
    let c = ReasoningConfig::with_theta(theta);
    c.validate()?;
    Ok(c)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenWorld(a) => gen_world(a),
        Command::Reason(a) => reason(a),
        Command::Simulate(a) => simulate(a),
        Command::Icr(a) => infer(a, false),
        Command::Ilcr(a) => infer(a, true),
        Command::TrainLcr(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Experiment(a) => experiment(a),
    }
}

fn gen_world(a: GenWorldArgs) -> Result<()> {
    let cfg = WorldGenConfig::new(WorldDims::new(a.concepts, a.actions)?, a.sparsity);
    cfg.validate()?;
    let t = make_world(&cfg, &mut seeded(a.seed))?;
    emit(
        a.out.as_deref(),
        &WorldFile::from_world(&t, Some(a.seed)).to_json()?,
    )
}

#[derive(Serialize)]
struct ReasonReport {
    format_version: u32,
    theta: f64,
    iterations: usize,
    converged: bool,
    encoder: CoderFile,
    decoder: CoderFile,
    /// Most likely action for each concept under the converged decoder.
    decode: Vec<usize>,
    effectiveness: f64,
    naive_effectiveness: f64,
}

fn reason(a: ReasonArgs) -> Result<()> {
    let t = a.source.load()?;
    let r = contextual_reasoning(&t, &reasoning(a.theta)?)?;
    let y = t.action_prior.probs();
    let report = ReasonReport {
        format_version: FORMAT_VERSION,
        theta: a.theta,
        iterations: r.iterations,
        converged: r.converged,
        decode: (0..t.dims().num_concepts)
            .map(|c| r.decoder.argmax_in_row(c))
            .collect(),
        effectiveness: effectiveness(&r.encoder, &r.decoder, y)?,
        naive_effectiveness: effectiveness(
            &naive_encoder(&t.context)?,
            &naive_decoder(&t.context),
            y,
        )?,
        encoder: r.encoder.to_file(),
        decoder: r.decoder.to_file(),
    };
    emit(a.out.as_deref(), &serde_json::to_string_pretty(&report)?)
}

fn coders(t: &WorldTuple, kind: CoderKind, theta: f64) -> Result<(Coder, Coder)> {
    Ok(match kind {
        CoderKind::Naive => (naive_encoder(&t.context)?, naive_decoder(&t.context)),
        CoderKind::Rational => {
            let r = contextual_reasoning(t, &reasoning(theta)?)?;
            (r.encoder, r.decoder)
        }
    })
}

fn simulate(a: SimulateArgs) -> Result<()> {
    if a.rounds == 0 {
        bail!(ConfigError("rounds: must be >= 1".into()));
    }
    let t = a.source.load()?;
    let (s, r) = coders(&t, a.coders, a.theta)?;
    let y = t.action_prior.probs();
    let mut rng = seeded(a.seed);
    let games = (0..a.rounds)
        .map(|_| play_round(&s, &r, y, &mut rng))
        .collect::<snc_core::Result<Vec<_>>>()?;
    if let Some(p) = &a.games {
        write_file(p, &games_csv(&games)?)?;
    }
    let samples = collect_samples(&s, &r, y, a.rounds, &mut seeded(a.seed.wrapping_add(1)))?;
    match &a.samples {
        Some(p) => write_file(p, &samples_csv(&samples)?)?,
        None if a.games.is_none() => emit(None, &samples_csv(&samples)?)?,
        None => {}
    }
    let wins = games.iter().filter(|g| g.success).count();
    eprintln!(
        "{} rounds, success rate {:.4}",
        a.rounds,
        wins as f64 / a.rounds as f64
    );
    Ok(())
}

fn observation(
    a: &InferArgs,
    reasoning_cfg: &ReasoningConfig,
    model: Option<&LinearModel>,
) -> Result<EmpiricalDecoder> {
    if let Some(p) = &a.samples {
        let (Some(c), Some(n)) = (a.concepts, a.actions) else {
            bail!(ConfigError(
                "--samples needs --concepts and --actions".into()
            ));
        };
        let s = read_samples_csv(&read(p)?)?;
        return Ok(empirical_decoder_from_samples(
            &s,
            WorldDims::new(c, n)?,
            NormalizationMode::RowConditional,
        )?);
    }
    if let Some(p) = &a.decoder {
        let cf: CoderFile =
            serde_json::from_str(&read(p)?).with_context(|| format!("parsing {}", p.display()))?;
        return Ok(EmpiricalDecoder::noiseless(&cf.to_coder()?));
    }
    if let Some(p) = &a.synth_from {
        let t = load_world(p)?;
        let mean = match model {
            Some(m) => lcr_coders(m, &t, reasoning_cfg.theta_s)?.1,
            None => contextual_reasoning(&t, reasoning_cfg)?.decoder,
        };
        return Ok(synth_empirical_decoder(
            &mean,
            NoiseModel::new(a.sigma)?,
            &mut seeded(a.seed.wrapping_add(1)),
        )?);
    }
    bail!(ConfigError(
        "pass one of --samples, --decoder or --synth-from".into()
    ))
}

fn infer(a: InferArgs, linear: bool) -> Result<()> {
    let rc = reasoning(a.theta)?;
    let model = match (&a.model, linear) {
        (Some(p), true) => Some(load_model(p)?),
        (None, true) => bail!(ConfigError("ilcr needs --model".into())),
        _ => None,
    };
    let rb = observation(&a, &rc, model.as_ref())?;
    let spec = match &model {
        Some(m) => LikelihoodSpec::Ilcr(m),
        None => LikelihoodSpec::Icr(rc),
    };
    let priors = PriorConfig {
        x_prior: a
            .x_prior_s
            .map_or(XPrior::Uniform01, |s| XPrior::Bernoulli { s }),
        y_prior: SimplexPrior::Dirichlet { delta: 1.0 },
        z_prior: SimplexPrior::Dirichlet { delta: 1.0 },
    };
    priors.validate()?;
    let mut sc = SamplerConfig::new(a.k, a.k1, a.k2, a.sigma, a.seed);
    sc.burn_in = a.burn_in;
    sc.validate()?;
    let init = if a.random_start {
        Init::Random
    } else {
        Init::FromObservation
    };
    let trace = tmh_run(&rb, spec, &priors, &ProposalConfig::default(), &sc, init)?;
    if let Some(p) = &a.trace {
        write_file(p, &trace_csv(&trace.events)?)?;
    }
    if let Some(p) = &a.states {
        let files: Vec<WorldFile> = trace
            .states
            .iter()
            .map(|t| WorldFile::from_world(t, None))
            .collect();
        write_file(p, &serde_json::to_string(&files)?)?;
    }
    let est = estimate_from_trace(&trace, a.point_rule.into())?;
    eprintln!(
        "acceptance x {:.3} y {:.3} z {:.3}, {} likelihood evaluations",
        trace.accept.x.rate(),
        trace.accept.y.rate(),
        trace.accept.z.rate(),
        trace.evaluations
    );
    emit(
        a.out.as_deref(),
        &WorldFile::from_world(&est, None).to_json()?,
    )
}

fn train(a: TrainArgs) -> Result<()> {
    let d = WorldDims::new(a.concepts, a.actions)?;
    let mut tc = match &a.config {
        Some(p) => serde_json::from_str::<TrainConfig>(&read(p)?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => TrainConfig::default(),
    };
    if let Some(e) = a.epochs {
        tc.epochs = e;
    }
    if a.no_rip {
        tc = tc.without_rip();
    }
    tc.seed = a.seed;
    tc.validate()?;
    let wc = WorldGenConfig::new(d, a.sparsity);
    wc.validate()?;
    let data = gen_training_set(
        &wc,
        &reasoning(a.theta)?,
        a.size,
        &mut seeded(a.seed.wrapping_add(1)),
    )?;
    crate::experiments::check_gradients_before_training(&reasoning(a.theta)?, a.seed)?;
    let (model, curve) = train_lcr(&data, d, &tc)?;
    let mut mf = model.to_file();
    mf.metadata = Some(serde_json::json!({
        "sparsity": a.sparsity,
        "train_size": a.size,
        "theta": a.theta,
        "train": tc,
    }));
    write_file(&a.out, &mf.to_json()?)?;
    if let Some(p) = &a.blob {
        fs::write(p, model.to_blob()).with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = &a.curve {
        write_file(p, &learning_curve_csv(&curve)?)?;
    }
    if let Some(last) = curve.last() {
        eprintln!("final l_mis {:.6} total {:.6}", last.l_mis, last.total);
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let t = load_world(&a.truth)?;
    let e = load_world(&a.estimate)?;
    let crit = InversionCriteria::default();
    #[derive(Serialize)]
    struct Row<'a> {
        method: &'a str,
        dims: String,
        rmse: f64,
        prior_rmse: f64,
        x_exact: bool,
        success: bool,
    }
    let row = Row {
        method: &a.method,
        dims: t.dims().to_string(),
        rmse: rmse(&e, &t)?,
        prior_rmse: prior_rmse(&e, &t)?,
        x_exact: e.context == t.context,
        success: inversion_success(&e, &t, &crit),
    };
    let text = crate::output::csv_string(
        &[row],
        &["method", "dims", "rmse", "prior_rmse", "x_exact", "success"],
    )?;
    emit(a.out.as_deref(), &text)
}

fn experiment(a: ExperimentArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::from_json(&read(p)?)?,
        None => ExperimentConfig::preset(a.preset),
    };
    if cfg.preset != a.preset {
        bail!(ConfigError(format!(
            "preset: config file is for {}, command asked for {}",
            cfg.preset, a.preset
        )));
    }
    if let Some(d) = a.dims {
        cfg.dims = d;
    }
    if let Some(r) = a.replications {
        cfg.replications = r;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(m) = a.methods {
        cfg.methods = m;
    }
    cfg.validate()?;
    let out = run_preset(&cfg)?;
    write_outputs(&cfg, &out, &a.out)?;
    eprintln!(
        "{}: {} metric rows written to {}",
        cfg.preset,
        out.metrics.len(),
        a.out.display()
    );
    Ok(())
}
