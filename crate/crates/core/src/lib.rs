//! Semantics-native communication: contextual reasoning between a sender and a
//! receiver, its linearization, and Bayesian samplers that recover the hidden
//! context and priors from a noisy observed decoder.

pub mod error;
pub mod game;
pub mod inference;
pub mod lcr;
pub mod metrics;
pub mod reasoning;
pub mod rng;
pub mod world;

pub use error::{Result, SncError};
pub use inference::{tmh_run, ChainTrace, LikelihoodKind, PriorConfig, SamplerConfig};
pub use metrics::{InversionCriteria, OpCount};
pub use reasoning::{
    contextual_reasoning, effectiveness, naive_decoder, naive_encoder, Coder, Orientation,
    ReasoningConfig, ReasoningResult, Schedule,
};
pub use rng::{derive_seed, seeded, SeededRng};
pub use world::{
    devectorize, make_world, vectorize, Context, SimplexVector, WorldDims, WorldGenConfig,
    WorldTuple,
};
