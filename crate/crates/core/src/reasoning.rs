//! Naive semantic coding and the contextual-reasoning recursion.
//!
//! With log utilities `u_s = log(r p(c))` and `u_r = log(s p(a))` the softmax
//! recursion reduces to power-normalization:
//!
//! ```text
//! s[c,a] ∝_c (r[c,a] z[c])^θs        r[c,a] ∝_a (s[c,a] y[a])^θr
//! ```
//!
//! with `0^θ = 0`, so entries outside the context support stay exactly zero.
//! Each column (row) is divided by its largest weighted entry before the power
//! is taken; the ratio is unchanged and sharp fixed points cannot underflow a
//! whole column.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SncError};
use crate::metrics::ops::{self, NoTally, OpCount, OpTally};
use crate::world::{Context, WorldDims, WorldTuple};

/// Floor applied to linear-model decoder entries before exponentiation.
pub const CLAMP_EPS: f64 = 1e-12;
pub const CODER_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// Encoder: each action column is a distribution over concepts.
    ColumnStochastic,
    /// Decoder: each concept row is a distribution over actions.
    RowStochastic,
}

/// Stochastic concept-by-action matrix, stored column-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Coder {
    dims: WorldDims,
    entries: Vec<f64>,
    orientation: Orientation,
}

impl Coder {
    pub fn from_col_major(
        dims: WorldDims,
        entries: Vec<f64>,
        orientation: Orientation,
    ) -> Result<Self> {
        if entries.len() != dims.entries() {
            return Err(SncError::DimMismatch {
                expected: dims.entries(),
                actual: entries.len(),
            });
        }
        Ok(Coder {
            dims,
            entries,
            orientation,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], orientation: Orientation) -> Result<Self> {
        let dims = WorldDims::new(rows.len(), rows.first().map_or(0, Vec::len))?;
        let mut entries = vec![0.0; dims.entries()];
        for (c, row) in rows.iter().enumerate() {
            if row.len() != dims.num_actions {
                return Err(SncError::DimMismatch {
                    expected: dims.num_actions,
                    actual: row.len(),
                });
            }
            for (a, &v) in row.iter().enumerate() {
                entries[dims.idx(c, a)] = v;
            }
        }
        Ok(Coder {
            dims,
            entries,
            orientation,
        })
    }

    pub fn identity(n: usize, orientation: Orientation) -> Result<Self> {
        let dims = WorldDims::square(n)?;
        let mut entries = vec![0.0; dims.entries()];
        for i in 0..n {
            entries[dims.idx(i, i)] = 1.0;
        }
        Ok(Coder {
            dims,
            entries,
            orientation,
        })
    }

    /// Every entry equal to `1/n` (an `n x n` coder of either orientation).
    pub fn uniform(n: usize, orientation: Orientation) -> Result<Self> {
        let dims = WorldDims::square(n)?;
        Ok(Coder {
            dims,
            entries: vec![1.0 / n as f64; dims.entries()],
            orientation,
        })
    }

    pub fn dims(&self) -> WorldDims {
        self.dims
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    #[inline]
    pub fn get(&self, c: usize, a: usize) -> f64 {
        self.entries[self.dims.idx(c, a)]
    }

    pub fn as_col_major(&self) -> &[f64] {
        &self.entries
    }

    pub fn column(&self, a: usize) -> &[f64] {
        let n = self.dims.num_concepts;
        &self.entries[a * n..(a + 1) * n]
    }

    pub fn row(&self, c: usize) -> Vec<f64> {
        (0..self.dims.num_actions).map(|a| self.get(c, a)).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dims.num_concepts).map(|c| self.row(c)).collect()
    }

    /// Largest absolute entrywise difference.
    pub fn sup_diff(&self, other: &Coder) -> f64 {
        sup_diff(&self.entries, &other.entries)
    }

    /// Checks the orientation invariant; all-zero rows of a decoder are
    /// accepted (concepts with no relevant action are never decoded).
    pub fn is_stochastic(&self, tol: f64) -> bool {
        let d = self.dims;
        if self.entries.iter().any(|v| !(*v >= 0.0)) {
            return false;
        }
        match self.orientation {
            Orientation::ColumnStochastic => {
                (0..d.num_actions).all(|a| (self.column(a).iter().sum::<f64>() - 1.0).abs() <= tol)
            }
            Orientation::RowStochastic => (0..d.num_concepts).all(|c| {
                let s: f64 = self.row(c).iter().sum();
                s == 0.0 || (s - 1.0).abs() <= tol
            }),
        }
    }

    /// argmax over concepts of column `a`.
    pub fn argmax_in_column(&self, a: usize) -> usize {
        argmax(self.column(a))
    }

    /// argmax over actions of row `c`.
    pub fn argmax_in_row(&self, c: usize) -> usize {
        argmax(&self.row(c))
    }

    pub fn to_file(&self) -> CoderFile {
        CoderFile {
            format_version: CODER_FORMAT_VERSION,
            orientation: self.orientation,
            entries: self.to_rows(),
        }
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| {
            if x > best.1 {
                (i, x)
            } else {
                best
            }
        })
        .0
}

#[inline]
pub(crate) fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoderFile {
    pub format_version: u32,
    pub orientation: Orientation,
    /// Row-major.
    pub entries: Vec<Vec<f64>>,
}

impl CoderFile {
    pub fn to_coder(&self) -> Result<Coder> {
        Coder::from_rows(&self.entries, self.orientation)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// The decoder update uses the encoder computed in the same step.
    #[default]
    Alternating,
    /// Both updates use the previous step's matrices.
    Simultaneous,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReasoningConfig {
    pub theta_s: f64,
    pub theta_r: f64,
    pub tol: f64,
    pub max_iters: usize,
    #[serde(default)]
    pub schedule: Schedule,
}

impl Default for ReasoningConfig {
    fn default() -> Self {
        ReasoningConfig {
            theta_s: 1.1,
            theta_r: 1.1,
            tol: 1e-8,
            max_iters: 500,
            schedule: Schedule::Alternating,
        }
    }
}

impl ReasoningConfig {
    pub fn with_theta(theta: f64) -> Self {
        ReasoningConfig {
            theta_s: theta,
            theta_r: theta,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta_s >= 0.0) || !(self.theta_r >= 0.0) {
            return Err(SncError::Config("rationality must be >= 0".into()));
        }
        if !(self.tol > 0.0) || self.max_iters == 0 {
            return Err(SncError::Config(
                "tol must be > 0 and max_iters >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReasoningResult {
    pub encoder: Coder,
    pub decoder: Coder,
    pub iterations: usize,
    pub converged: bool,
    pub op_count: OpCount,
}

fn check_priors(dims: WorldDims, y: &[f64], z: &[f64]) -> Result<()> {
    if y.len() != dims.num_actions {
        return Err(SncError::DimMismatch {
            expected: dims.num_actions,
            actual: y.len(),
        });
    }
    if z.len() != dims.num_concepts {
        return Err(SncError::DimMismatch {
            expected: dims.num_concepts,
            actual: z.len(),
        });
    }
    Ok(())
}

fn naive_encoder_into<T: OpTally>(x: &Context, out: &mut [f64], tally: &mut T) -> Result<()> {
    let d = x.dims();
    let n = d.num_concepts;
    for a in 0..d.num_actions {
        let col = x.column(a);
        let mut sum = col[0] as f64;
        for &v in &col[1..] {
            sum += v as f64;
            tally.add();
        }
        if sum == 0.0 {
            return Err(SncError::InvalidContext(vec![
                crate::world::ContextViolation::NoRelevantConcept(a),
            ]));
        }
        for c in 0..n {
            out[a * n + c] = col[c] as f64 / sum;
            tally.div();
        }
    }
    Ok(())
}

fn naive_decoder_into<T: OpTally>(x: &Context, out: &mut [f64], tally: &mut T) {
    let d = x.dims();
    let n = d.num_concepts;
    for c in 0..n {
        let mut sum = x.get(c, 0) as f64;
        for a in 1..d.num_actions {
            sum += x.get(c, a) as f64;
            tally.add();
        }
        // Concept rows with no relevant action stay all-zero.
        let denom = sum.max(f64::MIN_POSITIVE);
        for a in 0..d.num_actions {
            out[a * n + c] = x.get(c, a) as f64 / denom;
            tally.div();
        }
    }
}

/// `s⁰`: normalize every context column.
pub fn naive_encoder(x: &Context) -> Result<Coder> {
    let d = x.dims();
    let mut e = vec![0.0; d.entries()];
    naive_encoder_into(x, &mut e, &mut NoTally)?;
    Coder::from_col_major(d, e, Orientation::ColumnStochastic)
}

/// `r⁰`: normalize every context row; all-zero rows stay zero.
pub fn naive_decoder(x: &Context) -> Coder {
    let d = x.dims();
    let mut e = vec![0.0; d.entries()];
    naive_decoder_into(x, &mut e, &mut NoTally);
    Coder {
        dims: d,
        entries: e,
        orientation: Orientation::RowStochastic,
    }
}

#[inline]
fn power(w: f64, theta: f64) -> f64 {
    if w > 0.0 {
        w.powf(theta)
    } else {
        0.0
    }
}

/// Encoder update from a decoder: column-wise power normalization.
fn encoder_update<T: OpTally>(
    d: WorldDims,
    dec: &[f64],
    z: &[f64],
    theta: f64,
    out: &mut [f64],
    tally: &mut T,
) -> Result<()> {
    let n = d.num_concepts;
    for a in 0..d.num_actions {
        let col = &dec[a * n..(a + 1) * n];
        let o = &mut out[a * n..(a + 1) * n];
        let mut m = 0.0f64;
        for c in 0..n {
            let w = col[c] * z[c];
            tally.mul();
            o[c] = w;
            if w > m {
                m = w;
            }
        }
        if !(m > 0.0) || !m.is_finite() {
            return Err(SncError::DegenerateColumn(a));
        }
        for v in o.iter_mut() {
            *v = power(*v / m, theta);
            tally.div();
            tally.exp();
        }
        let mut sum = o[0];
        for v in &o[1..] {
            sum += *v;
            tally.add();
        }
        for v in o.iter_mut() {
            *v /= sum;
            tally.div();
        }
    }
    Ok(())
}

/// Decoder update from an encoder: row-wise power normalization. Rows whose
/// encoder entries are all zero (concepts never sent) stay zero.
fn decoder_update<T: OpTally>(
    d: WorldDims,
    enc: &[f64],
    y: &[f64],
    theta: f64,
    out: &mut [f64],
    tally: &mut T,
) {
    let n = d.num_concepts;
    let na = d.num_actions;
    for c in 0..n {
        let mut m = 0.0f64;
        for a in 0..na {
            let w = enc[a * n + c] * y[a];
            tally.mul();
            out[a * n + c] = w;
            if w > m {
                m = w;
            }
        }
        let m = m.max(f64::MIN_POSITIVE);
        for a in 0..na {
            let v = &mut out[a * n + c];
            *v = power(*v / m, theta);
            tally.div();
            tally.exp();
        }
        let mut sum = out[c];
        for a in 1..na {
            sum += out[a * n + c];
            tally.add();
        }
        let sum = sum.max(f64::MIN_POSITIVE);
        for a in 0..na {
            out[a * n + c] /= sum;
            tally.div();
        }
    }
}

/// Scratch buffers reused across recursions of the same size.
#[derive(Clone, Debug)]
pub struct Workspace {
    enc: Vec<f64>,
    dec: Vec<f64>,
    prev_enc: Vec<f64>,
    prev_dec: Vec<f64>,
}

impl Workspace {
    pub fn new(d: WorldDims) -> Self {
        let n = d.entries();
        Workspace {
            enc: vec![0.0; n],
            dec: vec![0.0; n],
            prev_enc: vec![0.0; n],
            prev_dec: vec![0.0; n],
        }
    }

    fn fit(&mut self, d: WorldDims) {
        let n = d.entries();
        if self.enc.len() != n {
            *self = Workspace::new(d);
        }
    }

    pub fn encoder(&self) -> &[f64] {
        &self.enc
    }

    pub fn decoder(&self) -> &[f64] {
        &self.dec
    }
}

/// Outcome of a recursion run inside a [`Workspace`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunStats {
    pub iterations: usize,
    pub converged: bool,
}

fn step_into<T: OpTally>(
    d: WorldDims,
    ws: &mut Workspace,
    y: &[f64],
    z: &[f64],
    cfg: &ReasoningConfig,
    tally: &mut T,
) -> Result<()> {
    encoder_update(d, &ws.prev_dec, z, cfg.theta_s, &mut ws.enc, tally)?;
    let src = match cfg.schedule {
        Schedule::Alternating => &ws.enc,
        Schedule::Simultaneous => &ws.prev_enc,
    };
    decoder_update(d, src, y, cfg.theta_r, &mut ws.dec, tally);
    Ok(())
}

/// Run the recursion from the naive coders, leaving `S*`, `R*` in the workspace.
pub fn run_recursion<T: OpTally>(
    x: &Context,
    y: &[f64],
    z: &[f64],
    cfg: &ReasoningConfig,
    ws: &mut Workspace,
    tally: &mut T,
) -> Result<RunStats> {
    let d = x.dims();
    check_priors(d, y, z)?;
    ws.fit(d);
    naive_decoder_into(x, &mut ws.prev_dec, tally);
    naive_encoder_into(x, &mut ws.prev_enc, tally)?;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iters {
        step_into(d, ws, y, z, cfg, tally)?;
        iterations += 1;
        let mut change = 0.0f64;
        for (a, b) in ws.enc.iter().zip(&ws.prev_enc) {
            change = change.max((a - b).abs());
            tally.add();
        }
        for (a, b) in ws.dec.iter().zip(&ws.prev_dec) {
            change = change.max((a - b).abs());
            tally.add();
        }
        std::mem::swap(&mut ws.enc, &mut ws.prev_enc);
        std::mem::swap(&mut ws.dec, &mut ws.prev_dec);
        if change < cfg.tol {
            converged = true;
            break;
        }
    }
    // Latest iterates live in the `prev_*` buffers after the swap.
    std::mem::swap(&mut ws.enc, &mut ws.prev_enc);
    std::mem::swap(&mut ws.dec, &mut ws.prev_dec);
    Ok(RunStats {
        iterations,
        converged,
    })
}

/// One recursion step. Under [`Schedule::Alternating`] `prev_encoder` is unused.
pub fn cr_step(
    prev_encoder: &Coder,
    prev_decoder: &Coder,
    y: &[f64],
    z: &[f64],
    cfg: &ReasoningConfig,
) -> Result<(Coder, Coder)> {
    cr_step_counted(prev_encoder, prev_decoder, y, z, cfg, &mut NoTally)
}

pub fn cr_step_counted<T: OpTally>(
    prev_encoder: &Coder,
    prev_decoder: &Coder,
    y: &[f64],
    z: &[f64],
    cfg: &ReasoningConfig,
    tally: &mut T,
) -> Result<(Coder, Coder)> {
    let d = prev_decoder.dims;
    if prev_encoder.dims != d {
        return Err(SncError::DimMismatch {
            expected: d.entries(),
            actual: prev_encoder.dims.entries(),
        });
    }
    check_priors(d, y, z)?;
    let mut ws = Workspace::new(d);
    ws.prev_dec.copy_from_slice(&prev_decoder.entries);
    ws.prev_enc.copy_from_slice(&prev_encoder.entries);
    step_into(d, &mut ws, y, z, cfg, tally)?;
    Ok((
        Coder {
            dims: d,
            entries: ws.enc,
            orientation: Orientation::ColumnStochastic,
        },
        Coder {
            dims: d,
            entries: ws.dec,
            orientation: Orientation::RowStochastic,
        },
    ))
}

fn finish(d: WorldDims, ws: Workspace, stats: RunStats) -> ReasoningResult {
    ReasoningResult {
        encoder: Coder {
            dims: d,
            entries: ws.enc,
            orientation: Orientation::ColumnStochastic,
        },
        decoder: Coder {
            dims: d,
            entries: ws.dec,
            orientation: Orientation::RowStochastic,
        },
        iterations: stats.iterations,
        converged: stats.converged,
        op_count: ops::contextual_reasoning_ops(d, stats.iterations),
    }
}

/// `(S*, R*) = (𝒮(T), ℛ(T))`, iterating from the naive decoder until the
/// sup-norm change of both matrices drops below `tol`.
pub fn contextual_reasoning(t: &WorldTuple, cfg: &ReasoningConfig) -> Result<ReasoningResult> {
    contextual_reasoning_parts(
        &t.context,
        t.action_prior.probs(),
        t.concept_prior.probs(),
        cfg,
    )
}

pub fn contextual_reasoning_parts(
    x: &Context,
    y: &[f64],
    z: &[f64],
    cfg: &ReasoningConfig,
) -> Result<ReasoningResult> {
    let d = x.dims();
    let mut ws = Workspace::new(d);
    let stats = run_recursion(x, y, z, cfg, &mut ws, &mut NoTally)?;
    Ok(finish(d, ws, stats))
}

/// Same as [`contextual_reasoning`] but also returns the operation count
/// tallied at every arithmetic site.
pub fn contextual_reasoning_instrumented(
    t: &WorldTuple,
    cfg: &ReasoningConfig,
) -> Result<(ReasoningResult, OpCount)> {
    let d = t.dims();
    let mut ws = Workspace::new(d);
    let mut tally = OpCount::ZERO;
    let stats = run_recursion(
        &t.context,
        t.action_prior.probs(),
        t.concept_prior.probs(),
        cfg,
        &mut ws,
        &mut tally,
    )?;
    Ok((finish(d, ws, stats), tally))
}

/// Encoder half of one step applied to an arbitrary real decoder (column-major
/// buffer). Entries are floored at [`CLAMP_EPS`] before the power.
pub fn encoder_one_step_raw(
    d: WorldDims,
    decoder: &[f64],
    z: &[f64],
    theta_s: f64,
) -> Result<Vec<f64>> {
    if decoder.len() != d.entries() {
        return Err(SncError::DimMismatch {
            expected: d.entries(),
            actual: decoder.len(),
        });
    }
    if z.len() != d.num_concepts {
        return Err(SncError::DimMismatch {
            expected: d.num_concepts,
            actual: z.len(),
        });
    }
    let clamped: Vec<f64> = decoder.iter().map(|&r| r.max(CLAMP_EPS)).collect();
    let mut out = vec![0.0; d.entries()];
    encoder_update(d, &clamped, z, theta_s, &mut out, &mut NoTally)?;
    Ok(out)
}

pub fn encoder_one_step(decoder: &Coder, z: &[f64], theta_s: f64) -> Result<Coder> {
    let e = encoder_one_step_raw(decoder.dims, &decoder.entries, z, theta_s)?;
    Coder::from_col_major(decoder.dims, e, Orientation::ColumnStochastic)
}

/// Success probability of action `a` as target: `Σ_c s[c,a] r[c,a]`.
pub fn action_effectiveness(s: &Coder, r: &Coder, a: usize) -> f64 {
    s.column(a)
        .iter()
        .zip(r.column(a))
        .map(|(p, q)| p * q)
        .sum()
}

/// Single-symbol success probability `Σ_a y_a Σ_c s[c,a] r[c,a]`.
pub fn effectiveness(s: &Coder, r: &Coder, y: &[f64]) -> Result<f64> {
    let d = s.dims;
    if r.dims != d {
        return Err(SncError::DimMismatch {
            expected: d.entries(),
            actual: r.dims.entries(),
        });
    }
    if y.len() != d.num_actions {
        return Err(SncError::DimMismatch {
            expected: d.num_actions,
            actual: y.len(),
        });
    }
    Ok((0..d.num_actions)
        .map(|a| y[a] * action_effectiveness(s, r, a))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::world::{make_world, rabbit::*, WorldGenConfig};
    use approx::assert_abs_diff_eq;

    fn uniform(n: usize) -> Vec<f64> {
        vec![1.0 / n as f64; n]
    }

    /// Alternating column and row scaling, written without any of the
    /// recursion machinery.
    fn sinkhorn_pass(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let rows = m.len();
        let cols = m[0].len();
        let mut out = m.to_vec();
        for a in 0..cols {
            let s: f64 = (0..rows).map(|c| out[c][a]).sum();
            for row in out.iter_mut() {
                row[a] /= s;
            }
        }
        for row in out.iter_mut() {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        out
    }

    #[test]
    fn naive_coders_identity_and_rabbit() {
        let i2 = Context::identity(2).unwrap();
        assert_eq!(
            naive_encoder(&i2).unwrap().to_rows(),
            vec![vec![1.0, 0.0], vec![0.0, 1.0]]
        );
        let i3 = Context::identity(3).unwrap();
        assert_eq!(
            naive_decoder(&i3),
            Coder::identity(3, Orientation::RowStochastic).unwrap()
        );

        let t = WorldTuple::rabbit();
        let s0 = naive_encoder(&t.context).unwrap();
        for c in 0..3 {
            assert_abs_diff_eq!(s0.get(c, A_RING), 1.0 / 3.0, epsilon = 1e-15);
        }
        let r0 = naive_decoder(&t.context);
        assert_eq!(r0.row(C_RING), vec![0.0, 0.0, 1.0]);
        for a in 0..3 {
            assert_abs_diff_eq!(r0.get(C_RABBIT, a), 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn naive_encoder_rejects_zero_column() {
        let x = Context::from_rows(&[vec![1, 0], vec![1, 0]]).unwrap();
        assert!(matches!(
            naive_encoder(&x),
            Err(SncError::InvalidContext(_))
        ));
    }

    #[test]
    fn zero_concept_rows_stay_zero() {
        let x = Context::from_rows(&[vec![1, 0, 1], vec![0, 1, 1], vec![0, 0, 0]]).unwrap();
        let t = WorldTuple::with_uniform_priors(x);
        let r0 = naive_decoder(&t.context);
        assert_eq!(r0.row(2), vec![0.0; 3]);
        let res = contextual_reasoning(&t, &ReasoningConfig::default()).unwrap();
        assert_eq!(res.decoder.row(2), vec![0.0; 3]);
        assert!(res.decoder.is_stochastic(1e-9));
    }

    #[test]
    fn identity_is_a_fixed_point() {
        for theta in [0.5, 1.0, 1.1, 3.0] {
            let cfg = ReasoningConfig::with_theta(theta);
            let s = Coder::identity(3, Orientation::ColumnStochastic).unwrap();
            let r = Coder::identity(3, Orientation::RowStochastic).unwrap();
            let (s1, r1) = cr_step(&s, &r, &uniform(3), &uniform(3), &cfg).unwrap();
            assert_eq!(s1.as_col_major(), s.as_col_major());
            assert_eq!(r1.as_col_major(), r.as_col_major());

            let t = WorldTuple::with_uniform_priors(Context::identity(4).unwrap());
            let res = contextual_reasoning(&t, &cfg).unwrap();
            assert!(res.converged);
            assert!(res.iterations <= 2);
            assert_eq!(
                res.decoder.as_col_major(),
                Coder::identity(4, Orientation::RowStochastic)
                    .unwrap()
                    .as_col_major()
            );
        }
    }

    #[test]
    fn theta_one_step_is_a_sinkhorn_pass() {
        let cfg = ReasoningConfig::with_theta(1.0);
        let wc = WorldGenConfig::new(WorldDims::square(4).unwrap(), 0.5);
        for seed in 0..10 {
            let t = make_world(&wc, &mut seeded(seed)).unwrap();
            let r0 = naive_decoder(&t.context);
            let s0 = naive_encoder(&t.context).unwrap();
            let (_, r1) = cr_step(&s0, &r0, &uniform(4), &uniform(4), &cfg).unwrap();
            let oracle = sinkhorn_pass(&r0.to_rows());
            for c in 0..4 {
                for a in 0..4 {
                    assert_abs_diff_eq!(r1.get(c, a), oracle[c][a], epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn rabbit_first_step_prefers_jumping_for_a2() {
        let t = WorldTuple::rabbit();
        let cfg = ReasoningConfig::with_theta(1.1);
        let r0 = naive_decoder(&t.context);
        let s0 = naive_encoder(&t.context).unwrap();
        let (s1, _) = cr_step(
            &s0,
            &r0,
            t.action_prior.probs(),
            t.concept_prior.probs(),
            &cfg,
        )
        .unwrap();
        // (1/2 * 1/3)^1.1 vs (1/3 * 1/3)^1.1 before normalization
        let num_jump = (0.5f64 / 3.0).powf(1.1);
        let num_rabbit = (1.0f64 / 9.0).powf(1.1);
        assert!(num_jump > num_rabbit);
        assert!(s1.get(C_JUMPING, A_JUMPING) > s1.get(C_RABBIT, A_JUMPING));
        assert_abs_diff_eq!(
            s1.get(C_JUMPING, A_JUMPING) / s1.get(C_RABBIT, A_JUMPING),
            num_jump / num_rabbit,
            epsilon = 1e-12
        );
    }

    #[test]
    fn rabbit_rational_coders() {
        let t = WorldTuple::rabbit();
        let res = contextual_reasoning(&t, &ReasoningConfig::with_theta(1.1)).unwrap();
        assert_eq!(res.decoder.argmax_in_row(C_JUMPING), A_JUMPING);
        assert_eq!(res.encoder.argmax_in_column(A_JUMPING), C_JUMPING);
        assert!(res.encoder.is_stochastic(1e-9));
        assert!(res.decoder.is_stochastic(1e-9));
    }

    #[test]
    fn support_is_preserved() {
        let wc = WorldGenConfig::new(WorldDims::new(5, 4).unwrap(), 0.4);
        for seed in 0..20 {
            let t = make_world(&wc, &mut seeded(seed)).unwrap();
            let res = contextual_reasoning(&t, &ReasoningConfig::default()).unwrap();
            for c in 0..5 {
                for a in 0..4 {
                    if t.context.get(c, a) == 0 {
                        assert_eq!(res.encoder.get(c, a), 0.0);
                        assert_eq!(res.decoder.get(c, a), 0.0);
                    }
                }
            }
            assert!(res.encoder.is_stochastic(1e-9));
            assert!(res.decoder.is_stochastic(1e-9));
        }
    }

    #[test]
    fn converged_result_is_a_fixed_point() {
        let wc = WorldGenConfig::new(WorldDims::square(5).unwrap(), 0.35);
        let cfg = ReasoningConfig::default();
        for seed in 0..10 {
            let t = make_world(&wc, &mut seeded(seed)).unwrap();
            let res = contextual_reasoning(&t, &cfg).unwrap();
            if !res.converged {
                continue;
            }
            let (s, r) = cr_step(
                &res.encoder,
                &res.decoder,
                t.action_prior.probs(),
                t.concept_prior.probs(),
                &cfg,
            )
            .unwrap();
            assert!(s.sup_diff(&res.encoder) < cfg.tol);
            assert!(r.sup_diff(&res.decoder) < cfg.tol);
        }
    }

    #[test]
    fn simultaneous_schedule_also_converges_on_identity() {
        let cfg = ReasoningConfig {
            schedule: Schedule::Simultaneous,
            ..Default::default()
        };
        let t = WorldTuple::with_uniform_priors(Context::identity(3).unwrap());
        let res = contextual_reasoning(&t, &cfg).unwrap();
        assert!(res.converged);
    }

    #[test]
    fn deterministic_results() {
        let wc = WorldGenConfig::new(WorldDims::square(4).unwrap(), 0.4);
        let t = make_world(&wc, &mut seeded(3)).unwrap();
        let cfg = ReasoningConfig::default();
        assert_eq!(
            contextual_reasoning(&t, &cfg).unwrap(),
            contextual_reasoning(&t, &cfg).unwrap()
        );
    }

    #[test]
    fn effectiveness_closed_forms() {
        let i = Coder::identity(4, Orientation::ColumnStochastic).unwrap();
        let ir = Coder::identity(4, Orientation::RowStochastic).unwrap();
        assert_abs_diff_eq!(effectiveness(&i, &ir, &[0.1, 0.2, 0.3, 0.4]).unwrap(), 1.0);
        let us = Coder::uniform(4, Orientation::ColumnStochastic).unwrap();
        let ur = Coder::uniform(4, Orientation::RowStochastic).unwrap();
        assert_abs_diff_eq!(
            effectiveness(&us, &ur, &uniform(4)).unwrap(),
            0.25,
            epsilon = 1e-15
        );
        assert!(matches!(
            effectiveness(&us, &ur, &uniform(3)),
            Err(SncError::DimMismatch { .. })
        ));
    }

    #[test]
    fn encoder_one_step_cases() {
        let r = Coder::identity(3, Orientation::RowStochastic).unwrap();
        let s = encoder_one_step(&r, &uniform(3), 1.1).unwrap();
        for c in 0..3 {
            for a in 0..3 {
                assert_abs_diff_eq!(s.get(c, a), if c == a { 1.0 } else { 0.0 }, epsilon = 1e-9);
            }
        }

        let neg = Coder::from_rows(
            &[
                vec![0.7, -0.2, 0.5],
                vec![0.3, 0.6, -0.1],
                vec![-0.4, 0.2, 0.8],
            ],
            Orientation::RowStochastic,
        )
        .unwrap();
        let s = encoder_one_step(&neg, &uniform(3), 1.1).unwrap();
        assert!(s.is_stochastic(1e-12));
        assert!(s.get(2, 0) < 1e-12);

        let t = WorldTuple::rabbit();
        let cfg = ReasoningConfig::with_theta(1.1);
        let res = contextual_reasoning(&t, &cfg).unwrap();
        let s_tilde = encoder_one_step(&res.decoder, t.concept_prior.probs(), 1.1).unwrap();
        assert!(s_tilde.sup_diff(&res.encoder) < 1e-9);
    }

    #[test]
    fn instrumented_counts_match_formulas() {
        let cfg = ReasoningConfig::default();
        let wc = WorldGenConfig::new(WorldDims::square(3).unwrap(), 0.4);
        for seed in 0..5 {
            let t = make_world(&wc, &mut seeded(seed)).unwrap();
            let s0 = naive_encoder(&t.context).unwrap();
            let r0 = naive_decoder(&t.context);
            let mut tally = OpCount::ZERO;
            cr_step_counted(
                &s0,
                &r0,
                t.action_prior.probs(),
                t.concept_prior.probs(),
                &cfg,
                &mut tally,
            )
            .unwrap();
            assert_eq!(tally, ops::cr_step_ops(t.dims()));

            let (res, counted) = contextual_reasoning_instrumented(&t, &cfg).unwrap();
            assert_eq!(counted, res.op_count);
        }
    }
}
