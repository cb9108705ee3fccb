use std::fmt;
use std::str::FromStr;

use anyhow::{Context as _, Result};
use serde::{Deserialize, Serialize};
use snc_core::game::{SymbolDraw, SymbolSearch};
use snc_core::inference::{PointRule, PriorConfig, ProposalConfig};
use snc_core::lcr::TrainConfig;
use snc_core::metrics::InversionCriteria;
use snc_core::ReasoningConfig;

macro_rules! invalid {
    ($($t:tt)*) => {
        return Err(crate::ConfigError(format!($($t)*)).into())
    };
}

/// Version stamped into every JSON file the CLI writes.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Fig3,
    Fig4,
    Fig5a,
    Fig5b,
    Fig6,
    Fig7,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::Fig3,
        Preset::Fig4,
        Preset::Fig5a,
        Preset::Fig5b,
        Preset::Fig6,
        Preset::Fig7,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Fig3 => "fig3",
            Preset::Fig4 => "fig4",
            Preset::Fig5a => "fig5a",
            Preset::Fig5b => "fig5b",
            Preset::Fig6 => "fig6",
            Preset::Fig7 => "fig7",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                crate::ConfigError(format!(
                    "unknown preset `{s}` (expected one of fig3, fig4, fig5a, fig5b, fig6, fig7)"
                ))
                .into()
            })
    }
}

/// How chains pick their starting state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainStart {
    /// Uniform random valid context and priors.
    Random,
    /// Best of the observation's support and a few random contexts.
    #[default]
    Observation,
}

/// Sampler settings shared by every chain of an experiment; the seed of each
/// chain is derived from the master seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSettings {
    pub k: usize,
    pub k1: usize,
    pub k2: usize,
    pub burn_in: Option<usize>,
    #[serde(default = "default_true")]
    pub memoize: bool,
    #[serde(default)]
    pub start: ChainStart,
}

fn default_true() -> bool {
    true
}

impl Default for ChainSettings {
    fn default() -> Self {
        ChainSettings {
            k: 100,
            k1: 10,
            k2: 10,
            burn_in: None,
            memoize: true,
            start: ChainStart::Observation,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub format_version: u32,
    pub preset: Preset,
    /// Square world sizes swept.
    pub dims: Vec<usize>,
    pub sparsity: f64,
    pub sigma: f64,
    pub replications: usize,
    pub seed: u64,
    pub reasoning: ReasoningConfig,
    pub chain: ChainSettings,
    pub train: TrainConfig,
    pub train_size: usize,
    pub priors: PriorConfig,
    pub proposals: ProposalConfig,
    pub point_rule: PointRule,
    pub criteria: InversionCriteria,
    pub symbol_search: SymbolSearch,
    /// Arms to run; empty means every arm of the preset.
    #[serde(default)]
    pub methods: Vec<String>,
    /// fig3: recorded states for the exactness runs.
    pub exact_states: usize,
    /// fig3: checkpoints of K at which the RMSE is reported.
    pub k_checkpoints: Vec<usize>,
    /// fig3: starting temperature of the annealed burn-in of the exactness
    /// runs; `None` runs the plain chain throughout.
    #[serde(default)]
    pub exact_anneal_from: Option<f64>,
    /// fig3: MAP grid step (only on worlds small enough to enumerate).
    pub map_grid_step: f64,
    /// fig4: worlds per size used for the mean iteration count.
    pub iteration_worlds: usize,
    /// fig5a: sparsity levels.
    pub sparsity_sweep: Vec<f64>,
}

impl ExperimentConfig {
    pub fn preset(p: Preset) -> Self {
        let mut c = ExperimentConfig {
            format_version: FORMAT_VERSION,
            preset: p,
            dims: vec![4, 5, 6, 7, 8],
            sparsity: 0.3,
            sigma: 0.05,
            replications: 20,
            seed: 2024,
            reasoning: ReasoningConfig::default(),
            chain: ChainSettings::default(),
            train: TrainConfig::default(),
            train_size: 2000,
            priors: PriorConfig::default(),
            proposals: ProposalConfig::default(),
            point_rule: PointRule::default(),
            criteria: InversionCriteria::default(),
            symbol_search: SymbolSearch {
                rounds: 2000,
                draw: SymbolDraw::WithReplacement,
                ..SymbolSearch::default()
            },
            methods: Vec::new(),
            exact_states: 10_000,
            exact_anneal_from: Some(50.0),
            k_checkpoints: vec![10, 25, 50, 100],
            map_grid_step: 0.05,
            iteration_worlds: 200,
            sparsity_sweep: vec![0.2, 0.3, 0.4],
        };
        match p {
            Preset::Fig3 => c.dims = vec![2, 3, 4, 5, 6],
            Preset::Fig5a => {
                c.dims = vec![5];
                c.replications = 5;
            }
            Preset::Fig5b => {
                c.dims = vec![5];
                c.replications = 50;
            }
            _ => {}
        }
        c
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: ExperimentConfig = serde_json::from_str(s).context("parsing experiment config")?;
        Ok(c)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Field-level validation; the first failure is reported.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            invalid!(
                "format_version: expected {FORMAT_VERSION}, got {}",
                self.format_version
            );
        }
        if self.dims.is_empty() || self.dims.iter().any(|&d| d < 2) {
            invalid!("dims: need at least one size, each >= 2");
        }
        if !(self.sparsity > 0.0 && self.sparsity < 1.0) {
            invalid!("sparsity: must lie in (0, 1), got {}", self.sparsity);
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            invalid!("sigma: must be > 0, got {}", self.sigma);
        }
        if self.replications == 0 {
            invalid!("replications: must be >= 1");
        }
        self.reasoning.validate().context("reasoning")?;
        if self.chain.k == 0 || self.chain.k1 == 0 || self.chain.k2 == 0 {
            invalid!("chain: k, k1 and k2 must be >= 1");
        }
        if let Some(b) = self.chain.burn_in {
            if b >= self.chain.k {
                invalid!("chain.burn_in: {b} must be below k = {}", self.chain.k);
            }
        }
        self.train.validate().context("train")?;
        if self.train_size == 0 {
            invalid!("train_size: must be >= 1");
        }
        self.priors.validate().context("priors")?;
        self.proposals.validate().context("proposals")?;
        if !(self.criteria.prior_rmse_tol > 0.0) {
            invalid!("criteria.prior_rmse_tol: must be > 0");
        }
        let s = &self.symbol_search;
        if !(s.threshold > 0.0 && s.threshold < 1.0) || s.max_symbols == 0 || s.rounds == 0 {
            invalid!("symbol_search: threshold in (0,1), max_symbols and rounds >= 1");
        }
        if self.exact_states < 2 {
            invalid!("exact_states: must be >= 2");
        }
        if let Some(t0) = self.exact_anneal_from {
            if !(t0 >= 1.0 && t0.is_finite()) {
                invalid!("exact_anneal_from: must be a finite temperature >= 1, got {t0}");
            }
        }
        if self
            .k_checkpoints
            .iter()
            .any(|&k| k == 0 || k > self.chain.k)
        {
            invalid!("k_checkpoints: each must lie in 1..={}", self.chain.k);
        }
        if self.iteration_worlds == 0 {
            invalid!("iteration_worlds: must be >= 1");
        }
        if self.sparsity_sweep.iter().any(|s| !(*s > 0.0 && *s < 1.0)) {
            invalid!("sparsity_sweep: each value must lie in (0, 1)");
        }
        Ok(())
    }

    pub fn wants(&self, method: &str) -> bool {
        self.methods.is_empty() || self.methods.iter().any(|m| m == method)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for p in Preset::ALL {
            let c = ExperimentConfig::preset(p);
            c.validate().unwrap();
            let back = ExperimentConfig::from_json(&c.to_json().unwrap()).unwrap();
            assert_eq!(back, c);
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
    }

    #[test]
    fn validation_names_the_field() {
        let mut c = ExperimentConfig::preset(Preset::Fig3);
        c.sigma = 0.0;
        let e = c.validate().unwrap_err().to_string();
        assert!(e.starts_with("sigma"), "{e}");
    }
}
