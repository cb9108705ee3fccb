//! Referential-game simulation and construction of the observed decoder.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SncError};
use crate::reasoning::Coder;
use crate::world::WorldDims;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameRecord {
    pub target_action: usize,
    pub symbols_sent: Vec<usize>,
    pub action_taken: usize,
    pub success: bool,
}

/// Observed `(concept, action)` pairs.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSet {
    pub pairs: Vec<(usize, usize)>,
}

impl SampleSet {
    pub fn count(&self) -> usize {
        self.pairs.len()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    /// `count(c, a) / D`.
    JointByD,
    /// `count(c, a) / count(c)`; unobserved concepts give zero rows.
    #[default]
    RowConditional,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    FromSamples { d: usize, mode: NormalizationMode },
    Synthetic { sigma: f64 },
}

/// Real-valued observation of a decoder, column-major like [`Coder`].
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalDecoder {
    pub dims: WorldDims,
    pub entries: Vec<f64>,
    pub provenance: Provenance,
}

impl EmpiricalDecoder {
    #[inline]
    pub fn get(&self, c: usize, a: usize) -> f64 {
        self.entries[self.dims.idx(c, a)]
    }

    pub fn as_col_major(&self) -> &[f64] {
        &self.entries
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dims.num_concepts)
            .map(|c| (0..self.dims.num_actions).map(|a| self.get(c, a)).collect())
            .collect()
    }

    /// Exact observation of a decoder.
    pub fn noiseless(r: &Coder) -> Self {
        EmpiricalDecoder {
            dims: r.dims(),
            entries: r.as_col_major().to_vec(),
            provenance: Provenance::Synthetic { sigma: 0.0 },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma: f64,
}

impl NoiseModel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(SncError::Config(format!(
                "noise sigma must be >= 0, got {sigma}"
            )));
        }
        Ok(NoiseModel { sigma })
    }
}

/// Draw an index with probability proportional to `weights`.
pub fn sample_categorical<R: Rng + ?Sized>(
    weights: &[f64],
    rng: &mut R,
    what: &str,
) -> Result<usize> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(SncError::DegenerateDistribution(what.to_string()));
    }
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last = i;
            if u < acc {
                return Ok(i);
            }
        }
    }
    Ok(last)
}

fn check_pair(s: &Coder, r: &Coder, y: &[f64]) -> Result<()> {
    let d = s.dims();
    if r.dims() != d {
        return Err(SncError::DimMismatch {
            expected: d.entries(),
            actual: r.dims().entries(),
        });
    }
    if y.len() != d.num_actions {
        return Err(SncError::DimMismatch {
            expected: d.num_actions,
            actual: y.len(),
        });
    }
    Ok(())
}

fn round_for_target<R: Rng + ?Sized>(
    s: &Coder,
    r: &Coder,
    target: usize,
    rng: &mut R,
) -> Result<GameRecord> {
    let c = sample_categorical(s.column(target), rng, "encoder column")?;
    let a = sample_categorical(&r.row(c), rng, "decoder row")?;
    Ok(GameRecord {
        target_action: target,
        symbols_sent: vec![c],
        action_taken: a,
        success: a == target,
    })
}

/// One single-symbol round: `a* ~ y`, `c ~ S[., a*]`, `â ~ R[c, .]`.
pub fn play_round<R: Rng + ?Sized>(
    s: &Coder,
    r: &Coder,
    y: &[f64],
    rng: &mut R,
) -> Result<GameRecord> {
    check_pair(s, r, y)?;
    let target = sample_categorical(y, rng, "action prior")?;
    round_for_target(s, r, target, rng)
}

/// `D` independent `(symbol, action)` pairs.
pub fn collect_samples<R: Rng + ?Sized>(
    s: &Coder,
    r: &Coder,
    y: &[f64],
    d: usize,
    rng: &mut R,
) -> Result<SampleSet> {
    if d == 0 {
        return Err(SncError::Config("sample count must be >= 1".into()));
    }
    let pairs = (0..d)
        .map(|_| play_round(s, r, y, rng).map(|g| (g.symbols_sent[0], g.action_taken)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SampleSet { pairs })
}

pub fn empirical_decoder_from_samples(
    samples: &SampleSet,
    dims: WorldDims,
    mode: NormalizationMode,
) -> Result<EmpiricalDecoder> {
    let d = samples.count();
    if d == 0 {
        return Err(SncError::Config("empty sample set".into()));
    }
    let mut counts = vec![0.0; dims.entries()];
    let mut row_counts = vec![0.0; dims.num_concepts];
    for &(c, a) in &samples.pairs {
        if c >= dims.num_concepts || a >= dims.num_actions {
            return Err(SncError::Parse(format!("pair ({c}, {a}) outside {dims}")));
        }
        counts[dims.idx(c, a)] += 1.0;
        row_counts[c] += 1.0;
    }
    match mode {
        NormalizationMode::JointByD => counts.iter_mut().for_each(|v| *v /= d as f64),
        NormalizationMode::RowConditional => {
            for a in 0..dims.num_actions {
                for c in 0..dims.num_concepts {
                    if row_counts[c] > 0.0 {
                        counts[dims.idx(c, a)] /= row_counts[c];
                    }
                }
            }
        }
    }
    Ok(EmpiricalDecoder {
        dims,
        entries: counts,
        provenance: Provenance::FromSamples { d, mode },
    })
}

/// `R̄ = R* + N`, `N` i.i.d. `Normal(0, σ²)` per entry, no clamping.
pub fn synth_empirical_decoder<R: Rng + ?Sized>(
    r_star: &Coder,
    noise: NoiseModel,
    rng: &mut R,
) -> Result<EmpiricalDecoder> {
    let normal =
        Normal::new(0.0, noise.sigma).map_err(|e| SncError::Config(format!("noise model: {e}")))?;
    let entries = r_star
        .as_col_major()
        .iter()
        .map(|v| v + normal.sample(rng))
        .collect();
    Ok(EmpiricalDecoder {
        dims: r_star.dims(),
        entries,
        provenance: Provenance::Synthetic { sigma: noise.sigma },
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymbolDraw {
    #[default]
    WithReplacement,
    WithoutReplacement,
}

/// Receiver posterior over actions given several symbols: normalized product
/// of the decoder rows, uniform when the product vanishes.
pub fn product_posterior(r: &Coder, symbols: &[usize]) -> Vec<f64> {
    let na = r.dims().num_actions;
    let mut q = vec![1.0; na];
    for &c in symbols {
        for (a, v) in q.iter_mut().enumerate() {
            *v *= r.get(c, a);
        }
        // keep the product away from underflow without changing its ratios
        let m = q.iter().cloned().fold(0.0, f64::max);
        if m > 0.0 {
            q.iter_mut().for_each(|v| *v /= m);
        }
    }
    let sum: f64 = q.iter().sum();
    if sum > 0.0 {
        q.iter_mut().for_each(|v| *v /= sum);
    } else {
        q = vec![1.0 / na as f64; na];
    }
    q
}

fn multi_round_for_target<R: Rng + ?Sized>(
    s: &Coder,
    r: &Coder,
    target: usize,
    num_symbols: usize,
    draw: SymbolDraw,
    rng: &mut R,
) -> Result<GameRecord> {
    let mut col = s.column(target).to_vec();
    let mut symbols = Vec::with_capacity(num_symbols);
    for _ in 0..num_symbols {
        if draw == SymbolDraw::WithoutReplacement && col.iter().all(|v| *v <= 0.0) {
            break;
        }
        let c = sample_categorical(&col, rng, "encoder column")?;
        if draw == SymbolDraw::WithoutReplacement {
            col[c] = 0.0;
        }
        symbols.push(c);
    }
    let q = product_posterior(r, &symbols);
    let a = sample_categorical(&q, rng, "receiver posterior")?;
    Ok(GameRecord {
        target_action: target,
        symbols_sent: symbols,
        action_taken: a,
        success: a == target,
    })
}

/// A round with `num_symbols` symbols drawn from the target's encoder column.
pub fn multi_symbol_round<R: Rng + ?Sized>(
    s: &Coder,
    r: &Coder,
    y: &[f64],
    num_symbols: usize,
    draw: SymbolDraw,
    rng: &mut R,
) -> Result<GameRecord> {
    check_pair(s, r, y)?;
    if num_symbols == 0 {
        return Err(SncError::Config("at least one symbol per round".into()));
    }
    let target = sample_categorical(y, rng, "action prior")?;
    multi_round_for_target(s, r, target, num_symbols, draw, rng)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymbolSearch {
    pub threshold: f64,
    pub max_symbols: usize,
    pub rounds: usize,
    /// Fixed target action; `None` draws targets from the action prior.
    pub target: Option<usize>,
    pub draw: SymbolDraw,
}

impl Default for SymbolSearch {
    fn default() -> Self {
        SymbolSearch {
            threshold: 0.9,
            max_symbols: 8,
            rounds: 10_000,
            target: None,
            draw: SymbolDraw::WithReplacement,
        }
    }
}

/// Empirical success rate of `rounds` rounds with `num_symbols` symbols.
#[allow(clippy::too_many_arguments)]
pub fn success_rate<R: Rng + ?Sized>(
    s: &Coder,
    r: &Coder,
    y: &[f64],
    num_symbols: usize,
    rounds: usize,
    target: Option<usize>,
    draw: SymbolDraw,
    rng: &mut R,
) -> Result<f64> {
    check_pair(s, r, y)?;
    if rounds == 0 || num_symbols == 0 {
        return Err(SncError::Config("rounds and symbols must be >= 1".into()));
    }
    let mut wins = 0usize;
    for _ in 0..rounds {
        let tgt = match target {
            Some(a) => a,
            None => sample_categorical(y, rng, "action prior")?,
        };
        if multi_round_for_target(s, r, tgt, num_symbols, draw, rng)?.success {
            wins += 1;
        }
    }
    Ok(wins as f64 / rounds as f64)
}

/// Smallest symbol count whose empirical success reaches the threshold.
pub fn min_symbols_for_effectiveness<R: Rng + ?Sized>(
    s: &Coder,
    r: &Coder,
    y: &[f64],
    search: &SymbolSearch,
    rng: &mut R,
) -> Result<usize> {
    if !(search.threshold > 0.0 && search.threshold < 1.0) {
        return Err(SncError::Config("threshold must lie in (0, 1)".into()));
    }
    for l in 1..=search.max_symbols {
        let rate = success_rate(s, r, y, l, search.rounds, search.target, search.draw, rng)?;
        if rate >= search.threshold {
            return Ok(l);
        }
    }
    Err(SncError::NotReached(search.max_symbols))
}

/// Joint law of the observed `(symbol, action)` pair, `Σ_a* y_a* s[c,a*] r[c,a]`,
/// column-major.
pub fn pair_distribution(s: &Coder, r: &Coder, y: &[f64]) -> Result<Vec<f64>> {
    check_pair(s, r, y)?;
    let d = s.dims();
    let mut e = vec![0.0; d.entries()];
    for c in 0..d.num_concepts {
        let sent: f64 = (0..d.num_actions).map(|t| y[t] * s.get(c, t)).sum();
        for a in 0..d.num_actions {
            e[d.idx(c, a)] = sent * r.get(c, a);
        }
    }
    Ok(e)
}
