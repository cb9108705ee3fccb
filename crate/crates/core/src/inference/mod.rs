//! Bayesian inversion of the decoder: priors, likelihoods, the two-stage
//! sampler, point estimates and enumeration oracles.

mod estimate;
mod likelihood;
mod oracle;
mod prior;
mod tmh;

pub use estimate::{estimate_from_trace, point_estimate, PointRule};
pub use likelihood::{
    incremental_residual, log_likelihood_icr, log_likelihood_ilcr, residual_loglik, Change,
    LikelihoodKind, LikelihoodSpec,
};
pub use oracle::{
    enumerate_context_posterior, enumerate_entry_posterior, enumerate_x_marginals,
    grid_posterior_mean_y, log_likelihood, log_posterior, map_oracle, simplex_grid, valid_contexts,
    ContextPosterior, MAX_MAP_ENTRIES, MAX_MARGINAL_ENTRIES,
};
pub use prior::{
    log_dirichlet, log_dirichlet_symmetric, log_prior, log_simplex_prior, log_x_entry, log_x_prior,
    PriorConfig, SimplexPrior, XPrior,
};
pub use tmh::{
    initial_context, mh_accept, observation_context, tmh_run, AcceptStats, Block, BlockStats,
    ChainTrace, Init, ProposalConfig, Sampler, SamplerConfig, SimplexProposal, TraceEvent,
    INIT_CANDIDATES,
};
