//! Linearized contextual reasoning: a trained linear map from `vec(T)` to the
//! vectorized converged decoder.

pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod train;

pub use gradcheck::{check_gradients, gradient_gate, GradientReport};
pub use loss::{
    loss_eff, loss_misfit, loss_rip, objective, relative_error, LossGrad, LossParts, LossWeights,
    TrainingPair,
};
pub use model::{lcr_apply, lcr_apply_with_encoder, lcr_coders, LinearModel, ModelFile, Params};
pub use train::{
    dataset_dims, evaluate_losses, gen_training_set, quasi_rip_stats, rip_stats_on_worlds,
    train_lcr, EpochLoss, LearningCurve, Optimizer, RipStats, TrainConfig,
};
