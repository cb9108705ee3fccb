use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Result, SncError};
use crate::world::{Context, WorldTuple};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum XPrior {
    Bernoulli {
        s: f64,
    },
    #[default]
    Uniform01,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SimplexPrior {
    Dirichlet {
        delta: f64,
    },
    #[default]
    UniformSimplex,
}

/// Independent priors on the context entries and on each prior vector.
/// Uniform components contribute a constant, reported as 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub x_prior: XPrior,
    pub y_prior: SimplexPrior,
    pub z_prior: SimplexPrior,
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        if let XPrior::Bernoulli { s } = self.x_prior {
            if !(s > 0.0 && s < 1.0) {
                return Err(SncError::Config(format!(
                    "Bernoulli prior needs s in (0,1), got {s}"
                )));
            }
        }
        for p in [self.y_prior, self.z_prior] {
            if let SimplexPrior::Dirichlet { delta } = p {
                if !(delta > 0.0) {
                    return Err(SncError::Config(format!(
                        "Dirichlet prior needs delta > 0, got {delta}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Log prior of a single entry value.
#[inline]
pub fn log_x_entry(p: XPrior, v: u8) -> f64 {
    match p {
        XPrior::Uniform01 => 0.0,
        XPrior::Bernoulli { s } => {
            if v == 1 {
                s.ln()
            } else {
                (1.0 - s).ln()
            }
        }
    }
}

pub fn log_x_prior(x: &Context, p: XPrior) -> f64 {
    match p {
        XPrior::Uniform01 => 0.0,
        XPrior::Bernoulli { .. } => x.as_col_major().iter().map(|&v| log_x_entry(p, v)).sum(),
    }
}

/// Log density of the symmetric Dirichlet(`delta`) at `v`.
pub fn log_dirichlet_symmetric(v: &[f64], delta: f64) -> f64 {
    let m = v.len() as f64;
    ln_gamma(m * delta) - m * ln_gamma(delta)
        + (delta - 1.0) * v.iter().map(|p| p.ln()).sum::<f64>()
}

/// Log density of Dirichlet(`alpha`) at `v`.
pub fn log_dirichlet(v: &[f64], alpha: &[f64]) -> f64 {
    let a0: f64 = alpha.iter().sum();
    let mut out = ln_gamma(a0);
    for (p, a) in v.iter().zip(alpha) {
        out += (a - 1.0) * p.ln() - ln_gamma(*a);
    }
    out
}

pub fn log_simplex_prior(v: &[f64], p: SimplexPrior) -> f64 {
    match p {
        SimplexPrior::UniformSimplex => 0.0,
        SimplexPrior::Dirichlet { delta } => {
            if delta == 1.0 {
                0.0
            } else {
                log_dirichlet_symmetric(v, delta)
            }
        }
    }
}

pub fn log_prior(t: &WorldTuple, cfg: &PriorConfig) -> f64 {
    log_x_prior(&t.context, cfg.x_prior)
        + log_simplex_prior(t.action_prior.probs(), cfg.y_prior)
        + log_simplex_prior(t.concept_prior.probs(), cfg.z_prior)
}
