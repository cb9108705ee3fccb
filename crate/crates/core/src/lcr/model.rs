use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SncError};
use crate::metrics::ops::{self, OpCount};
use crate::reasoning::{encoder_one_step_raw, Coder, Orientation};
use crate::world::{vectorize, WorldDims, WorldTuple};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const BLOB_MAGIC: &[u8; 4] = b"LCR1";

#[derive(Clone, Debug, PartialEq)]
pub enum Params {
    /// `Φ = W2 W1`, `W1: h x n_in`, `W2: n_out x h`.
    Factored {
        w1: DMatrix<f64>,
        w2: DMatrix<f64>,
    },
    Direct {
        phi: DMatrix<f64>,
    },
}

/// Linear map from `vec(T)` to `vec(R)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    dims: WorldDims,
    params: Params,
    phi: DMatrix<f64>,
}

impl LinearModel {
    pub fn n_in(dims: WorldDims) -> usize {
        dims.vec_len()
    }

    pub fn n_out(dims: WorldDims) -> usize {
        dims.entries()
    }

    pub fn from_params(dims: WorldDims, params: Params) -> Result<Self> {
        let (n_out, n_in) = (Self::n_out(dims), Self::n_in(dims));
        let phi = match &params {
            Params::Factored { w1, w2 } => {
                if w1.ncols() != n_in || w2.nrows() != n_out || w2.ncols() != w1.nrows() {
                    return Err(SncError::DimMismatch {
                        expected: n_out * n_in,
                        actual: w2.nrows() * w1.ncols(),
                    });
                }
                w2 * w1
            }
            Params::Direct { phi } => {
                if phi.shape() != (n_out, n_in) {
                    return Err(SncError::DimMismatch {
                        expected: n_out * n_in,
                        actual: phi.len(),
                    });
                }
                phi.clone()
            }
        };
        Ok(LinearModel { dims, params, phi })
    }

    pub fn direct(dims: WorldDims, phi: DMatrix<f64>) -> Result<Self> {
        Self::from_params(dims, Params::Direct { phi })
    }

    /// Gaussian initialization: `W1` entries with std `1/sqrt(n_in)`, `W2`
    /// entries with std `1/sqrt(h)`. `hidden = None` gives a direct map.
    pub fn random<R: Rng + ?Sized>(
        dims: WorldDims,
        hidden: Option<usize>,
        rng: &mut R,
    ) -> Result<Self> {
        let (n_out, n_in) = (Self::n_out(dims), Self::n_in(dims));
        let mut gauss = |rows: usize, cols: usize, fan_in: usize| {
            let nd = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("finite std");
            // fill row by row so the stream order matches the row-major file layout
            let mut m = DMatrix::zeros(rows, cols);
            for i in 0..rows {
                for j in 0..cols {
                    m[(i, j)] = nd.sample(rng);
                }
            }
            m
        };
        let params = match hidden {
            Some(0) => return Err(SncError::Config("hidden width must be >= 1".into())),
            Some(h) => {
                let w1 = gauss(h, n_in, n_in);
                let w2 = gauss(n_out, h, h);
                Params::Factored { w1, w2 }
            }
            None => Params::Direct {
                phi: gauss(n_out, n_in, n_in),
            },
        };
        Self::from_params(dims, params)
    }

    pub fn dims(&self) -> WorldDims {
        self.dims
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn hidden_width(&self) -> Option<usize> {
        match &self.params {
            Params::Factored { w1, .. } => Some(w1.nrows()),
            Params::Direct { .. } => None,
        }
    }

    /// Effective map (kept in sync with the parameters).
    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    /// Explicit `n_out x n_in` product.
    pub fn collapse(&self) -> DMatrix<f64> {
        self.phi.clone()
    }

    pub(crate) fn params_mut_and_sync<F: FnOnce(&mut Params)>(&mut self, f: F) {
        f(&mut self.params);
        self.phi = match &self.params {
            Params::Factored { w1, w2 } => w2 * w1,
            Params::Direct { phi } => phi.clone(),
        };
    }

    /// Apply through the factors without collapsing.
    pub fn apply_factored(&self, t: &DVector<f64>) -> DVector<f64> {
        match &self.params {
            Params::Factored { w1, w2 } => w2 * (w1 * t),
            Params::Direct { phi } => phi * t,
        }
    }

    pub fn apply_vec(&self, t: &[f64]) -> Result<Vec<f64>> {
        if t.len() != self.phi.ncols() {
            return Err(SncError::DimMismatch {
                expected: self.phi.ncols(),
                actual: t.len(),
            });
        }
        let mut out = vec![0.0; self.phi.nrows()];
        matvec_into(&self.phi, t, &mut out, &mut ops::NoTally);
        Ok(out)
    }

    /// Cost of one application of the collapsed map.
    pub fn apply_ops(&self) -> OpCount {
        ops::matvec_ops(self.phi.nrows(), self.phi.ncols())
    }

    pub fn to_file(&self) -> ModelFile {
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..m.nrows())
                .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
                .collect()
        };
        let (w1, w2, phi) = match &self.params {
            Params::Factored { w1, w2 } => (Some(rows(w1)), Some(rows(w2)), None),
            Params::Direct { phi } => (None, None, Some(rows(phi))),
        };
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            dims: self.dims,
            hidden_width: self.hidden_width(),
            w1,
            w2,
            phi,
            metadata: None,
        }
    }

    /// Little-endian blob: magic, `n_out`, `n_in`, `h` as u32, then `W1` and
    /// `W2` row-major (or `Φ` when `h = 0`).
    pub fn to_blob(&self) -> Vec<u8> {
        let (n_out, n_in) = (self.phi.nrows(), self.phi.ncols());
        let h = self.hidden_width().unwrap_or(0);
        let mut out = Vec::with_capacity(16 + 8 * (n_out * n_in + h * (n_in + n_out)));
        out.extend_from_slice(BLOB_MAGIC);
        for v in [n_out, n_in, h] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        let mut push = |m: &DMatrix<f64>| {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    out.extend_from_slice(&m[(i, j)].to_le_bytes());
                }
            }
        };
        match &self.params {
            Params::Factored { w1, w2 } => {
                push(w1);
                push(w2);
            }
            Params::Direct { phi } => push(phi),
        }
        out
    }

    pub fn from_blob(dims: WorldDims, bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != BLOB_MAGIC {
            return Err(SncError::Parse("missing LCR1 header".into()));
        }
        let word = |i: usize| {
            u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize
        };
        let (n_out, n_in, h) = (word(0), word(1), word(2));
        if n_out != Self::n_out(dims) || n_in != Self::n_in(dims) {
            return Err(SncError::DimMismatch {
                expected: Self::n_out(dims) * Self::n_in(dims),
                actual: n_out * n_in,
            });
        }
        let mut floats = bytes[16..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let expected = if h == 0 {
            n_out * n_in
        } else {
            h * n_in + n_out * h
        };
        if bytes.len() != 16 + 8 * expected {
            return Err(SncError::Parse(format!(
                "blob holds {} bytes, expected {}",
                bytes.len(),
                16 + 8 * expected
            )));
        }
        let mut take =
            |r: usize, c: usize| DMatrix::from_row_iterator(r, c, floats.by_ref().take(r * c));
        let params = if h == 0 {
            Params::Direct {
                phi: take(n_out, n_in),
            }
        } else {
            let w1 = take(h, n_in);
            let w2 = take(n_out, h);
            Params::Factored { w1, w2 }
        };
        Self::from_params(dims, params)
    }
}

/// `out = Φ t` on the column-major storage.
pub(crate) fn matvec_into<T: ops::OpTally>(
    phi: &DMatrix<f64>,
    t: &[f64],
    out: &mut [f64],
    tally: &mut T,
) {
    let n_out = phi.nrows();
    let data = phi.as_slice();
    out.iter_mut().for_each(|v| *v = 0.0);
    for (k, &tk) in t.iter().enumerate() {
        let col = &data[k * n_out..(k + 1) * n_out];
        if k == 0 {
            for (o, p) in out.iter_mut().zip(col) {
                *o = p * tk;
                tally.mul();
            }
        } else {
            for (o, p) in out.iter_mut().zip(col) {
                *o += p * tk;
                tally.mul();
                tally.add();
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub dims: WorldDims,
    pub hidden_width: Option<usize>,
    #[serde(rename = "W1", default, skip_serializing_if = "Option::is_none")]
    pub w1: Option<Vec<Vec<f64>>>,
    #[serde(rename = "W2", default, skip_serializing_if = "Option::is_none")]
    pub w2: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<Vec<Vec<f64>>>,
    /// Free-form record of how the model was trained.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Value>,
}

fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(SncError::Parse("ragged matrix".into()));
    }
    Ok(DMatrix::from_row_iterator(
        r,
        c,
        rows.iter().flatten().copied(),
    ))
}

impl ModelFile {
    pub fn to_model(&self) -> Result<LinearModel> {
        let params = match (&self.w1, &self.w2, &self.phi) {
            (Some(w1), Some(w2), _) => Params::Factored {
                w1: from_rows(w1)?,
                w2: from_rows(w2)?,
            },
            (None, None, Some(phi)) => Params::Direct {
                phi: from_rows(phi)?,
            },
            _ => return Err(SncError::Parse("model file needs W1 and W2, or phi".into())),
        };
        LinearModel::from_params(self.dims, params)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Linearized decoder `R̃ = reshape(Φ vec(t))`. Entries are unconstrained.
pub fn lcr_apply(model: &LinearModel, t: &WorldTuple) -> Result<Vec<f64>> {
    if t.dims() != model.dims {
        return Err(SncError::DimMismatch {
            expected: model.dims.vec_len(),
            actual: t.dims().vec_len(),
        });
    }
    model.apply_vec(&vectorize(t))
}

/// `R̃` together with `S̃`, the encoder half-step on the clamped `R̃`.
pub fn lcr_apply_with_encoder(
    model: &LinearModel,
    t: &WorldTuple,
    theta_s: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let r = lcr_apply(model, t)?;
    let s = encoder_one_step_raw(model.dims, &r, t.concept_prior.probs(), theta_s)?;
    Ok((r, s))
}

/// Coders usable in a game: `S̃` as computed, and `R̃` with negatives set to
/// zero and rows renormalized (rows with no positive entry stay zero).
pub fn lcr_coders(model: &LinearModel, t: &WorldTuple, theta_s: f64) -> Result<(Coder, Coder)> {
    let (r, s) = lcr_apply_with_encoder(model, t, theta_s)?;
    let d = model.dims;
    let mut dec: Vec<f64> = r.iter().map(|v| v.max(0.0)).collect();
    for c in 0..d.num_concepts {
        let sum: f64 = (0..d.num_actions).map(|a| dec[d.idx(c, a)]).sum();
        if sum > 0.0 {
            for a in 0..d.num_actions {
                dec[d.idx(c, a)] /= sum;
            }
        }
    }
    Ok((
        Coder::from_col_major(d, s, Orientation::ColumnStochastic)?,
        Coder::from_col_major(d, dec, Orientation::RowStochastic)?,
    ))
}
