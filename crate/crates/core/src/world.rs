//! Worlds: binary context matrices plus action and concept priors.
//!
//! Matrices are stored column-major (`entries[c + a * num_concepts]`), which is
//! also the vectorization layout: `vec(T) = [vec(X); y; z]`.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SncError};

pub const SIMPLEX_TOL: f64 = 1e-9;
pub const RANK_TOL: f64 = 1e-9;
pub const WORLD_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WorldDims {
    pub num_concepts: usize,
    pub num_actions: usize,
}

impl WorldDims {
    pub fn new(num_concepts: usize, num_actions: usize) -> Result<Self> {
        let dims = WorldDims {
            num_concepts,
            num_actions,
        };
        dims.validate()?;
        Ok(dims)
    }

    pub fn square(n: usize) -> Result<Self> {
        Self::new(n, n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_concepts < 2 || self.num_actions < 2 {
            return Err(SncError::Config(format!(
                "dims must be at least 2x2, got {}x{}",
                self.num_concepts, self.num_actions
            )));
        }
        Ok(())
    }

    /// |C||A|
    pub fn entries(&self) -> usize {
        self.num_concepts * self.num_actions
    }

    /// Length of `vec(T)`: |C||A| + |A| + |C|.
    pub fn vec_len(&self) -> usize {
        self.entries() + self.num_actions + self.num_concepts
    }

    #[inline]
    pub fn idx(&self, c: usize, a: usize) -> usize {
        c + a * self.num_concepts
    }
}

impl fmt::Display for WorldDims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.num_concepts, self.num_actions)
    }
}

/// A violated context invariant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ContextViolation {
    NotBinary { concept: usize, action: usize },
    NoRelevantConcept(usize),
    DuplicateColumns(usize, usize),
    RankDeficient { rank: usize },
}

/// Binary concept-by-action relevance matrix.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Context {
    dims: WorldDims,
    entries: Vec<u8>,
}

impl Context {
    pub fn zeros(dims: WorldDims) -> Self {
        Context {
            dims,
            entries: vec![0; dims.entries()],
        }
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut x = Context::zeros(WorldDims::square(n)?);
        for i in 0..n {
            x.set(i, i, 1);
        }
        Ok(x)
    }

    /// Build from row-major rows (one row per concept).
    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let num_concepts = rows.len();
        let num_actions = rows.first().map_or(0, Vec::len);
        let dims = WorldDims::new(num_concepts, num_actions)?;
        let mut x = Context::zeros(dims);
        for (c, row) in rows.iter().enumerate() {
            if row.len() != num_actions {
                return Err(SncError::DimMismatch {
                    expected: num_actions,
                    actual: row.len(),
                });
            }
            for (a, &v) in row.iter().enumerate() {
                x.set(c, a, v);
            }
        }
        Ok(x)
    }

    /// Build from a column-major entry buffer.
    pub fn from_col_major(dims: WorldDims, entries: Vec<u8>) -> Result<Self> {
        if entries.len() != dims.entries() {
            return Err(SncError::DimMismatch {
                expected: dims.entries(),
                actual: entries.len(),
            });
        }
        Ok(Context { dims, entries })
    }

    pub fn dims(&self) -> WorldDims {
        self.dims
    }

    #[inline]
    pub fn get(&self, c: usize, a: usize) -> u8 {
        self.entries[self.dims.idx(c, a)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, a: usize, v: u8) {
        let i = self.dims.idx(c, a);
        self.entries[i] = v;
    }

    /// Flip entry `(c, a)` between 0 and 1.
    pub fn flip(&mut self, c: usize, a: usize) {
        let i = self.dims.idx(c, a);
        self.entries[i] = 1 - self.entries[i].min(1);
    }

    pub fn as_col_major(&self) -> &[u8] {
        &self.entries
    }

    pub fn column(&self, a: usize) -> &[u8] {
        let n = self.dims.num_concepts;
        &self.entries[a * n..(a + 1) * n]
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        (0..self.dims.num_concepts)
            .map(|c| (0..self.dims.num_actions).map(|a| self.get(c, a)).collect())
            .collect()
    }

    pub fn ones(&self) -> usize {
        self.entries.iter().filter(|&&v| v == 1).count()
    }

    /// Bit mask of the entries in column-major order; only defined for at most 64 entries.
    pub fn bitmask(&self) -> Option<u64> {
        if self.entries.len() > 64 {
            return None;
        }
        Some(
            self.entries
                .iter()
                .enumerate()
                .fold(0u64, |m, (i, &v)| m | ((v as u64 & 1) << i)),
        )
    }

    /// Real rank via Gaussian elimination with partial pivoting.
    pub fn rank(&self) -> usize {
        let rows = self.dims.num_concepts;
        let cols = self.dims.num_actions;
        let mut m: Vec<Vec<f64>> = (0..rows)
            .map(|c| (0..cols).map(|a| self.get(c, a) as f64).collect())
            .collect();
        let mut rank = 0;
        for col in 0..cols {
            if rank == rows {
                break;
            }
            let (pivot, best) = (rank..rows)
                .map(|r| (r, m[r][col].abs()))
                .fold((rank, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if best <= RANK_TOL {
                continue;
            }
            m.swap(rank, pivot);
            for r in 0..rows {
                if r != rank {
                    let f = m[r][col] / m[rank][col];
                    if f != 0.0 {
                        for k in col..cols {
                            m[r][k] -= f * m[rank][k];
                        }
                    }
                }
            }
            rank += 1;
        }
        rank
    }
}

/// Check the no-zero-column and distinct-column rules.
pub fn validate_context(x: &Context) -> Vec<ContextViolation> {
    validate_context_with(x, false)
}

/// As [`validate_context`], additionally checking full rank for square contexts
/// when `require_full_rank` is set.
pub fn validate_context_with(x: &Context, require_full_rank: bool) -> Vec<ContextViolation> {
    let dims = x.dims();
    let mut out = Vec::new();
    for a in 0..dims.num_actions {
        for c in 0..dims.num_concepts {
            if x.get(c, a) > 1 {
                out.push(ContextViolation::NotBinary {
                    concept: c,
                    action: a,
                });
            }
        }
    }
    for a in 0..dims.num_actions {
        if x.column(a).iter().all(|&v| v == 0) {
            out.push(ContextViolation::NoRelevantConcept(a));
        }
    }
    for a1 in 0..dims.num_actions {
        for a2 in a1 + 1..dims.num_actions {
            if x.column(a1) == x.column(a2) {
                out.push(ContextViolation::DuplicateColumns(a1, a2));
            }
        }
    }
    if require_full_rank && dims.num_concepts == dims.num_actions {
        let rank = x.rank();
        if rank < dims.num_actions {
            out.push(ContextViolation::RankDeficient { rank });
        }
    }
    out
}

/// Fast structural check used inside samplers.
pub fn is_valid_context(x: &Context) -> bool {
    let dims = x.dims();
    for a in 0..dims.num_actions {
        let col = x.column(a);
        if col.iter().all(|&v| v == 0) {
            return false;
        }
        for a2 in a + 1..dims.num_actions {
            if col == x.column(a2) {
                return false;
            }
        }
    }
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorRole {
    Action,
    Concept,
}

/// A point on the probability simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct SimplexVector {
    probs: Vec<f64>,
    role: PriorRole,
}

impl SimplexVector {
    pub fn new(probs: Vec<f64>, role: PriorRole) -> Result<Self> {
        if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(SncError::Config(format!(
                "{role:?} prior has a negative or non-finite entry"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(SncError::NotNormalized(sum));
        }
        Ok(SimplexVector { probs, role })
    }

    /// No validation; used when devectorizing raw vectors.
    pub fn new_unchecked(probs: Vec<f64>, role: PriorRole) -> Self {
        SimplexVector { probs, role }
    }

    pub fn uniform(dim: usize, role: PriorRole) -> Self {
        SimplexVector {
            probs: vec![1.0 / dim as f64; dim],
            role,
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn role(&self) -> PriorRole {
        self.role
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

impl std::ops::Index<usize> for SimplexVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.probs[i]
    }
}

/// `T = (X, y, z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldTuple {
    pub context: Context,
    pub action_prior: SimplexVector,
    pub concept_prior: SimplexVector,
}

impl WorldTuple {
    pub fn new(
        context: Context,
        action_prior: SimplexVector,
        concept_prior: SimplexVector,
    ) -> Result<Self> {
        let dims = context.dims();
        if action_prior.len() != dims.num_actions {
            return Err(SncError::DimMismatch {
                expected: dims.num_actions,
                actual: action_prior.len(),
            });
        }
        if concept_prior.len() != dims.num_concepts {
            return Err(SncError::DimMismatch {
                expected: dims.num_concepts,
                actual: concept_prior.len(),
            });
        }
        Ok(WorldTuple {
            context,
            action_prior,
            concept_prior,
        })
    }

    /// Context with uniform priors.
    pub fn with_uniform_priors(context: Context) -> Self {
        let dims = context.dims();
        WorldTuple {
            context,
            action_prior: SimplexVector::uniform(dims.num_actions, PriorRole::Action),
            concept_prior: SimplexVector::uniform(dims.num_concepts, PriorRole::Concept),
        }
    }

    pub fn dims(&self) -> WorldDims {
        self.context.dims()
    }

    /// The three-action, three-concept referential-game world
    /// (rabbit sitting / rabbit jumping / rabbit jumping into a ring).
    pub fn rabbit() -> Self {
        let x = Context::from_rows(&[vec![1, 1, 1], vec![0, 1, 1], vec![0, 0, 1]])
            .expect("static context");
        WorldTuple::with_uniform_priors(x)
    }
}

pub mod rabbit {
    //! Index names for [`super::WorldTuple::rabbit`].
    pub const C_RABBIT: usize = 0;
    pub const C_JUMPING: usize = 1;
    pub const C_RING: usize = 2;
    /// Rabbit sitting.
    pub const A_SITTING: usize = 0;
    /// Rabbit jumping.
    pub const A_JUMPING: usize = 1;
    /// Rabbit jumping into a ring.
    pub const A_RING: usize = 2;
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegenStrategy {
    /// Resample only the offending action columns.
    #[default]
    ColumnWise,
    /// Resample the whole matrix.
    FullMatrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldGenConfig {
    pub dims: WorldDims,
    pub sparsity: f64,
    pub dirichlet_action: f64,
    pub dirichlet_concept: f64,
    pub require_full_rank: bool,
    pub max_regen_attempts: usize,
    #[serde(default)]
    pub regen: RegenStrategy,
}

impl WorldGenConfig {
    pub fn new(dims: WorldDims, sparsity: f64) -> Self {
        WorldGenConfig {
            dims,
            sparsity,
            dirichlet_action: 1.0,
            dirichlet_concept: 1.0,
            require_full_rank: true,
            max_regen_attempts: 10_000,
            regen: RegenStrategy::ColumnWise,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        if !(self.sparsity > 0.0 && self.sparsity < 1.0) {
            return Err(SncError::Config(format!(
                "sparsity must lie in (0,1), got {}",
                self.sparsity
            )));
        }
        if !(self.dirichlet_action > 0.0) || !(self.dirichlet_concept > 0.0) {
            return Err(SncError::Config(
                "dirichlet parameters must be positive".into(),
            ));
        }
        if self.max_regen_attempts == 0 {
            return Err(SncError::Config("max_regen_attempts must be >= 1".into()));
        }
        Ok(())
    }
}

/// Draw every entry i.i.d. Bernoulli(s) with no validity filtering.
pub fn sample_context_raw<R: Rng + ?Sized>(dims: WorldDims, s: f64, rng: &mut R) -> Context {
    let entries = (0..dims.entries())
        .map(|_| u8::from(rng.random::<f64>() < s))
        .collect();
    Context { dims, entries }
}

/// Columns that break an invariant: zero columns, later duplicates, and (for
/// square full-rank contexts) columns in the span of earlier independent ones.
fn offending_columns(x: &Context, require_full_rank: bool) -> Vec<usize> {
    let dims = x.dims();
    let n = dims.num_concepts;
    let mut bad = vec![false; dims.num_actions];
    for a in 0..dims.num_actions {
        if x.column(a).iter().all(|&v| v == 0) {
            bad[a] = true;
            continue;
        }
        if (0..a).any(|b| !bad[b] && x.column(b) == x.column(a)) {
            bad[a] = true;
        }
    }
    if require_full_rank && dims.num_concepts == dims.num_actions {
        // Incremental elimination: reduced basis vectors with their pivot rows.
        let mut basis: Vec<(usize, Vec<f64>)> = Vec::new();
        for a in 0..dims.num_actions {
            if bad[a] {
                continue;
            }
            let mut v: Vec<f64> = x.column(a).iter().map(|&e| e as f64).collect();
            for (p, b) in &basis {
                let f = v[*p] / b[*p];
                if f != 0.0 {
                    for k in 0..n {
                        v[k] -= f * b[k];
                    }
                }
            }
            let (p, mag) = v
                .iter()
                .enumerate()
                .map(|(i, e)| (i, e.abs()))
                .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if mag <= RANK_TOL {
                bad[a] = true;
            } else {
                basis.push((p, v));
            }
        }
    }
    bad.iter()
        .enumerate()
        .filter_map(|(a, &b)| b.then_some(a))
        .collect()
}

/// Sample a valid context, regenerating offending columns as needed.
pub fn sample_context<R: Rng + ?Sized>(cfg: &WorldGenConfig, rng: &mut R) -> Result<Context> {
    cfg.validate()?;
    let dims = cfg.dims;
    let s = cfg.sparsity;
    let mut x = sample_context_raw(dims, s, rng);
    for _ in 0..cfg.max_regen_attempts {
        let bad = offending_columns(&x, cfg.require_full_rank);
        if bad.is_empty() {
            return Ok(x);
        }
        match cfg.regen {
            RegenStrategy::ColumnWise => {
                for a in bad {
                    for c in 0..dims.num_concepts {
                        x.set(c, a, u8::from(rng.random::<f64>() < s));
                    }
                }
            }
            RegenStrategy::FullMatrix => x = sample_context_raw(dims, s, rng),
        }
    }
    if offending_columns(&x, cfg.require_full_rank).is_empty() {
        return Ok(x);
    }
    Err(SncError::GenerationExhausted {
        attempts: cfg.max_regen_attempts,
    })
}

/// Raw gamma-ratio draw from a Dirichlet with the given concentrations.
pub(crate) fn sample_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    loop {
        let mut g: Vec<f64> = alpha
            .iter()
            .map(|&a| {
                Gamma::new(a, 1.0)
                    .expect("positive concentration")
                    .sample(rng)
            })
            .collect();
        let sum: f64 = g.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            g.iter_mut().for_each(|v| *v /= sum);
            return g;
        }
    }
}

/// Draw from the symmetric Dirichlet(`delta`) of order `dim`.
pub fn sample_simplex<R: Rng + ?Sized>(
    dim: usize,
    delta: f64,
    role: PriorRole,
    rng: &mut R,
) -> Result<SimplexVector> {
    if dim < 2 || !(delta > 0.0) {
        return Err(SncError::Config(format!(
            "simplex needs dim >= 2 and delta > 0 (got {dim}, {delta})"
        )));
    }
    Ok(SimplexVector::new_unchecked(
        sample_dirichlet(&vec![delta; dim], rng),
        role,
    ))
}

/// Context, then action prior, then concept prior, from one stream.
pub fn make_world<R: Rng + ?Sized>(cfg: &WorldGenConfig, rng: &mut R) -> Result<WorldTuple> {
    let context = sample_context(cfg, rng)?;
    let y = sample_simplex(
        cfg.dims.num_actions,
        cfg.dirichlet_action,
        PriorRole::Action,
        rng,
    )?;
    let z = sample_simplex(
        cfg.dims.num_concepts,
        cfg.dirichlet_concept,
        PriorRole::Concept,
        rng,
    )?;
    WorldTuple::new(context, y, z)
}

/// `[vec(X) column-major; y; z]`
pub fn vectorize(t: &WorldTuple) -> Vec<f64> {
    let mut v = Vec::with_capacity(t.dims().vec_len());
    v.extend(t.context.as_col_major().iter().map(|&e| e as f64));
    v.extend_from_slice(t.action_prior.probs());
    v.extend_from_slice(t.concept_prior.probs());
    v
}

pub fn devectorize(v: &[f64], dims: WorldDims) -> Result<WorldTuple> {
    if v.len() != dims.vec_len() {
        return Err(SncError::DimMismatch {
            expected: dims.vec_len(),
            actual: v.len(),
        });
    }
    let n = dims.entries();
    let mut entries = Vec::with_capacity(n);
    for &e in &v[..n] {
        if e == 0.0 {
            entries.push(0);
        } else if e == 1.0 {
            entries.push(1);
        } else {
            return Err(SncError::Parse(format!("non-binary context entry {e}")));
        }
    }
    let y = v[n..n + dims.num_actions].to_vec();
    let z = v[n + dims.num_actions..].to_vec();
    WorldTuple::new(
        Context::from_col_major(dims, entries)?,
        SimplexVector::new_unchecked(y, PriorRole::Action),
        SimplexVector::new_unchecked(z, PriorRole::Concept),
    )
}

/// On-disk world representation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldFile {
    pub format_version: u32,
    pub num_concepts: usize,
    pub num_actions: usize,
    /// Row-major, one row per concept.
    pub context: Vec<Vec<u8>>,
    pub action_prior: Vec<f64>,
    pub concept_prior: Vec<f64>,
    pub seed: Option<u64>,
}

impl WorldFile {
    pub fn from_world(t: &WorldTuple, seed: Option<u64>) -> Self {
        let dims = t.dims();
        WorldFile {
            format_version: WORLD_FORMAT_VERSION,
            num_concepts: dims.num_concepts,
            num_actions: dims.num_actions,
            context: t.context.to_rows(),
            action_prior: t.action_prior.probs().to_vec(),
            concept_prior: t.concept_prior.probs().to_vec(),
            seed,
        }
    }

    pub fn to_world(&self) -> Result<WorldTuple> {
        let x = Context::from_rows(&self.context)?;
        if x.dims() != WorldDims::new(self.num_concepts, self.num_actions)? {
            return Err(SncError::DimMismatch {
                expected: self.num_concepts * self.num_actions,
                actual: x.dims().entries(),
            });
        }
        WorldTuple::new(
            x,
            SimplexVector::new(self.action_prior.clone(), PriorRole::Action)?,
            SimplexVector::new(self.concept_prior.clone(), PriorRole::Concept)?,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
