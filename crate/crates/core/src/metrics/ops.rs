//! Arithmetic-operation accounting.
//!
//! Every exp, log and power counts as one operation, like a multiply. Hot
//! kernels are generic over [`OpTally`]: production calls pass [`NoTally`]
//! (compiled away) and report costs through the closed-form functions below,
//! while the debug path passes an [`OpCount`] that is bumped at every
//! arithmetic site. Tests assert the two agree exactly.

use std::ops::{Add, AddAssign, Mul};

use serde::{Deserialize, Serialize};

use crate::world::WorldDims;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OpCount {
    pub mults: u64,
    pub adds: u64,
    pub exps: u64,
    pub logs: u64,
    pub divs: u64,
}

impl OpCount {
    pub const ZERO: OpCount = OpCount {
        mults: 0,
        adds: 0,
        exps: 0,
        logs: 0,
        divs: 0,
    };

    pub fn total(&self) -> u64 {
        self.mults + self.adds + self.exps + self.logs + self.divs
    }
}

impl Add for OpCount {
    type Output = OpCount;
    fn add(self, o: OpCount) -> OpCount {
        OpCount {
            mults: self.mults + o.mults,
            adds: self.adds + o.adds,
            exps: self.exps + o.exps,
            logs: self.logs + o.logs,
            divs: self.divs + o.divs,
        }
    }
}

impl AddAssign for OpCount {
    fn add_assign(&mut self, o: OpCount) {
        *self = *self + o;
    }
}

impl Mul<u64> for OpCount {
    type Output = OpCount;
    fn mul(self, k: u64) -> OpCount {
        OpCount {
            mults: self.mults * k,
            adds: self.adds * k,
            exps: self.exps * k,
            logs: self.logs * k,
            divs: self.divs * k,
        }
    }
}

impl std::iter::Sum for OpCount {
    fn sum<I: Iterator<Item = OpCount>>(iter: I) -> OpCount {
        iter.fold(OpCount::ZERO, Add::add)
    }
}

pub trait OpTally {
    fn mul(&mut self);
    fn add(&mut self);
    fn exp(&mut self);
    fn log(&mut self);
    fn div(&mut self);
}

/// Discards everything.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoTally;

impl OpTally for NoTally {
    #[inline(always)]
    fn mul(&mut self) {}
    #[inline(always)]
    fn add(&mut self) {}
    #[inline(always)]
    fn exp(&mut self) {}
    #[inline(always)]
    fn log(&mut self) {}
    #[inline(always)]
    fn div(&mut self) {}
}

impl OpTally for OpCount {
    fn mul(&mut self) {
        self.mults += 1;
    }
    fn add(&mut self) {
        self.adds += 1;
    }
    fn exp(&mut self) {
        self.exps += 1;
    }
    fn log(&mut self) {
        self.logs += 1;
    }
    fn div(&mut self) {
        self.divs += 1;
    }
}

fn ca(d: WorldDims) -> (u64, u64) {
    (d.num_concepts as u64, d.num_actions as u64)
}

/// Column-normalizing the context.
pub fn naive_encoder_ops(d: WorldDims) -> OpCount {
    let (c, a) = ca(d);
    OpCount {
        adds: a * (c - 1),
        divs: c * a,
        ..OpCount::ZERO
    }
}

/// Row-normalizing the context.
pub fn naive_decoder_ops(d: WorldDims) -> OpCount {
    let (c, a) = ca(d);
    OpCount {
        adds: c * (a - 1),
        divs: c * a,
        ..OpCount::ZERO
    }
}

/// Encoder half of one recursion step: prior weighting, max scaling, power,
/// column sums and normalization.
pub fn encoder_half_ops(d: WorldDims) -> OpCount {
    let (c, a) = ca(d);
    OpCount {
        mults: c * a,
        adds: a * (c - 1),
        exps: c * a,
        logs: 0,
        divs: 2 * c * a,
    }
}

pub fn decoder_half_ops(d: WorldDims) -> OpCount {
    let (c, a) = ca(d);
    OpCount {
        mults: c * a,
        adds: c * (a - 1),
        exps: c * a,
        logs: 0,
        divs: 2 * c * a,
    }
}

pub fn cr_step_ops(d: WorldDims) -> OpCount {
    encoder_half_ops(d) + decoder_half_ops(d)
}

/// Sup-norm change of both matrices (one subtraction per entry each).
pub fn convergence_check_ops(d: WorldDims) -> OpCount {
    OpCount {
        adds: 2 * d.entries() as u64,
        ..OpCount::ZERO
    }
}

/// A full recursion that ran `iterations` steps.
pub fn contextual_reasoning_ops(d: WorldDims, iterations: usize) -> OpCount {
    naive_decoder_ops(d)
        + naive_encoder_ops(d)
        + (cr_step_ops(d) + convergence_check_ops(d)) * iterations as u64
}

/// `-||r - r_hat||^2 / (2 sigma^2)` given both vectors of length `n`.
pub fn residual_loglik_ops(n: usize) -> OpCount {
    let n = n as u64;
    OpCount {
        mults: n,
        adds: 2 * n - 1,
        divs: 1,
        ..OpCount::ZERO
    }
}

/// Dense matrix-vector product.
pub fn matvec_ops(n_out: usize, n_in: usize) -> OpCount {
    OpCount {
        mults: (n_out * n_in) as u64,
        adds: (n_out * (n_in - 1)) as u64,
        ..OpCount::ZERO
    }
}

/// Residual norm when the residual itself is already known.
pub fn norm_loglik_ops(n: usize) -> OpCount {
    let n = n as u64;
    OpCount {
        mults: n,
        adds: n - 1,
        divs: 1,
        ..OpCount::ZERO
    }
}

/// Incremental linear-model likelihood after `k` coordinates of `t` change:
/// coordinate deltas, residual column updates, then the squared norm.
pub fn incremental_loglik_ops(n_out: usize, k: usize) -> OpCount {
    let (n, k) = (n_out as u64, k as u64);
    OpCount {
        mults: k * n,
        adds: k + k * n,
        ..OpCount::ZERO
    } + norm_loglik_ops(n_out)
}

/// Full linear-model likelihood: product, residual, norm.
pub fn full_linear_loglik_ops(n_out: usize, n_in: usize) -> OpCount {
    matvec_ops(n_out, n_in) + residual_loglik_ops(n_out)
}

pub fn icr_loglik_ops(d: WorldDims, iterations: usize) -> OpCount {
    contextual_reasoning_ops(d, iterations) + residual_loglik_ops(d.entries())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_3x3_world() {
        let d = WorldDims::square(3).unwrap();
        let o = matvec_ops(d.entries(), d.vec_len());
        assert_eq!(o.mults, 135);
        assert_eq!(o.adds, 126);
        assert_eq!(o.total(), 261);
    }

    #[test]
    fn counts_merge_componentwise() {
        let a = OpCount {
            mults: 1,
            adds: 2,
            exps: 3,
            logs: 4,
            divs: 5,
        };
        assert_eq!((a + a).total(), 30);
        assert_eq!(a * 3, a + a + a);
        assert_eq!([a, a].into_iter().sum::<OpCount>(), a * 2);
    }
}
