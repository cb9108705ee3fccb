use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::{objective, LossParts, LossWeights, TrainingPair};
use super::model::{LinearModel, Params};
use crate::error::{Result, SncError};
use crate::reasoning::{contextual_reasoning, ReasoningConfig};
use crate::rng::seeded;
use crate::world::{make_world, vectorize, WorldDims, WorldGenConfig};

/// `n` independent worlds paired with their converged decoders.
pub fn gen_training_set<R: Rng + ?Sized>(
    world_cfg: &WorldGenConfig,
    reasoning_cfg: &ReasoningConfig,
    n: usize,
    rng: &mut R,
) -> Result<Vec<TrainingPair>> {
    if n == 0 {
        return Err(SncError::Config("dataset size must be >= 1".into()));
    }
    world_cfg.validate()?;
    (0..n)
        .map(|_| {
            let t = make_world(world_cfg, rng)?;
            let res = contextual_reasoning(&t, reasoning_cfg)?;
            Ok(TrainingPair {
                t: DVector::from_vec(vectorize(&t)),
                r: DVector::from_column_slice(res.decoder.as_col_major()),
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Optimizer {
    PlainSgd,
    MomentumSgd { momentum: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weights: LossWeights,
    /// Two-layer factorization `W2 W1`; `false` trains `Φ` directly.
    pub factored: bool,
    /// Defaults to `n_out` when unset.
    pub hidden_width: Option<usize>,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 32,
            learning_rate: 0.01,
            weights: LossWeights::default(),
            factored: true,
            hidden_width: None,
            optimizer: Optimizer::MomentumSgd { momentum: 0.9 },
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(SncError::Config(
                "epochs and batch_size must be >= 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(SncError::Config("learning_rate must be > 0".into()));
        }
        if let Optimizer::MomentumSgd { momentum } = self.optimizer {
            if !(0.0..1.0).contains(&momentum) {
                return Err(SncError::Config("momentum must lie in [0, 1)".into()));
            }
        }
        if self.hidden_width == Some(0) {
            return Err(SncError::Config("hidden_width must be >= 1".into()));
        }
        Ok(())
    }

    /// The same config without the RIP term.
    pub fn without_rip(&self) -> Self {
        let mut c = self.clone();
        c.weights.lambda_rip = 0.0;
        c
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub l_mis: f64,
    pub l_eff: f64,
    pub l_rip: f64,
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub epochs: Vec<EpochLoss>,
}

impl LearningCurve {
    pub fn last(&self) -> Option<&EpochLoss> {
        self.epochs.last()
    }
}

fn infer_dims(data: &[TrainingPair]) -> Result<WorldDims> {
    let first = data
        .first()
        .ok_or_else(|| SncError::Config("empty dataset".into()))?;
    let n_out = first.r.len();
    let extra = first.t.len() - n_out;
    // n_in - n_out = C + A and n_out = C A; C is the larger root
    let disc = (extra * extra) as f64 - 4.0 * n_out as f64;
    if disc < 0.0 {
        return Err(SncError::Parse(
            "training pair lengths do not match any dims".into(),
        ));
    }
    let c = ((extra as f64 + disc.sqrt()) / 2.0).round() as usize;
    let a = extra.saturating_sub(c);
    let d = WorldDims::new(c, a)?;
    if d.entries() != n_out {
        return Err(SncError::Parse(
            "training pair lengths do not match any dims".into(),
        ));
    }
    Ok(d)
}

/// Minibatch gradient descent on the weighted objective.
pub fn train_lcr(
    data: &[TrainingPair],
    dims: WorldDims,
    cfg: &TrainConfig,
) -> Result<(LinearModel, LearningCurve)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(SncError::Config("empty dataset".into()));
    }
    let n_out = LinearModel::n_out(dims);
    let n_in = LinearModel::n_in(dims);
    if data.iter().any(|p| p.t.len() != n_in || p.r.len() != n_out) {
        return Err(SncError::DimMismatch {
            expected: n_in,
            actual: data[0].t.len(),
        });
    }
    let mut rng = seeded(cfg.seed);
    let hidden = cfg.factored.then(|| cfg.hidden_width.unwrap_or(n_out));
    let mut model = LinearModel::random(dims, hidden, &mut rng)?;
    let (momentum, lr) = match cfg.optimizer {
        Optimizer::PlainSgd => (0.0, cfg.learning_rate),
        Optimizer::MomentumSgd { momentum } => (momentum, cfg.learning_rate),
    };
    let (mut v1, mut v2) = match model.params() {
        Params::Factored { w1, w2 } => (
            DMatrix::zeros(w1.nrows(), w1.ncols()),
            DMatrix::zeros(w2.nrows(), w2.ncols()),
        ),
        Params::Direct { phi } => (
            DMatrix::zeros(phi.nrows(), phi.ncols()),
            DMatrix::zeros(0, 0),
        ),
    };
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    let mut curve = LearningCurve::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut acc = LossParts::default();
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data[i].clone()));
            let (parts, g) = objective(model.phi(), &batch, dims, &cfg.weights)?;
            if !parts.total.is_finite() || g.iter().any(|v| !v.is_finite()) {
                return Err(SncError::NonFiniteLoss {
                    epoch,
                    batch: b,
                    detail: format!("mis={} eff={} rip={}", parts.mis, parts.eff, parts.rip),
                });
            }
            acc.mis += parts.mis;
            acc.eff += parts.eff;
            acc.rip += parts.rip;
            acc.total += parts.total;
            batches += 1;
            model.params_mut_and_sync(|p| match p {
                Params::Factored { w1, w2 } => {
                    let g2 = &g * w1.transpose();
                    let g1 = w2.transpose() * &g;
                    v2 *= momentum;
                    v2 -= g2 * lr;
                    v1 *= momentum;
                    v1 -= g1 * lr;
                    *w2 += &v2;
                    *w1 += &v1;
                }
                Params::Direct { phi } => {
                    v1 *= momentum;
                    v1 -= &g * lr;
                    *phi += &v1;
                }
            });
        }
        let k = batches as f64;
        curve.epochs.push(EpochLoss {
            epoch: epoch + 1,
            l_mis: acc.mis / k,
            l_eff: acc.eff / k,
            l_rip: acc.rip / k,
            total: acc.total / k,
        });
    }
    Ok((model, curve))
}

/// Dataset-wide loss parts of a fixed model.
pub fn evaluate_losses(
    model: &LinearModel,
    data: &[TrainingPair],
    weights: &LossWeights,
) -> Result<LossParts> {
    Ok(objective(model.phi(), data, model.dims(), weights)?.0)
}

/// Dims implied by a dataset's vector lengths.
pub fn dataset_dims(data: &[TrainingPair]) -> Result<WorldDims> {
    infer_dims(data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RipStats {
    pub ratios: Vec<f64>,
    pub delta_hat: f64,
    /// `δ̂ < 1/3`.
    pub holds: bool,
}

/// `‖Φt‖²/‖t‖²` over the probes and the largest deviation from 1.
pub fn quasi_rip_stats(phi: &DMatrix<f64>, probes: &[DVector<f64>]) -> Result<RipStats> {
    let mut ratios = Vec::with_capacity(probes.len());
    for t in probes {
        let tt = t.norm_squared();
        if tt == 0.0 {
            return Err(SncError::ZeroVector);
        }
        ratios.push((phi * t).norm_squared() / tt);
    }
    let delta_hat = ratios.iter().fold(0.0f64, |m, r| m.max((r - 1.0).abs()));
    Ok(RipStats {
        ratios,
        delta_hat,
        holds: delta_hat < 1.0 / 3.0,
    })
}

/// [`quasi_rip_stats`] with the vectorized worlds as probes.
pub fn rip_stats_on_worlds(
    model: &LinearModel,
    worlds: &[crate::world::WorldTuple],
) -> Result<RipStats> {
    let probes: Vec<DVector<f64>> = worlds
        .iter()
        .map(|t| DVector::from_vec(vectorize(t)))
        .collect();
    quasi_rip_stats(model.phi(), &probes)
}
