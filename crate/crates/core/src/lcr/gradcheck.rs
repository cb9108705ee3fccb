//! Central finite-difference check of the analytic loss gradients.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::{loss_eff, loss_misfit, loss_rip, relative_error, TrainingPair};
use crate::error::{Result, SncError};
use crate::reasoning::{contextual_reasoning, ReasoningConfig};
use crate::rng::seeded;
use crate::world::{make_world, vectorize, WorldDims, WorldGenConfig};

pub const EFF_TOL: f64 = 1e-4;
pub const MIS_RIP_TOL: f64 = 1e-5;
pub const FD_STEP: f64 = 1e-6;

/// Worst per-entry relative error of each gradient.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub mis: f64,
    pub eff: f64,
    pub rip: f64,
}

impl GradientReport {
    pub fn passes(&self) -> bool {
        self.mis < MIS_RIP_TOL && self.rip < MIS_RIP_TOL && self.eff < EFF_TOL
    }

    fn worst(self, o: GradientReport) -> GradientReport {
        GradientReport {
            mis: self.mis.max(o.mis),
            eff: self.eff.max(o.eff),
            rip: self.rip.max(o.rip),
        }
    }
}

fn fd_worst<F: Fn(&DMatrix<f64>) -> Result<f64>>(
    phi: &DMatrix<f64>,
    grad: &DMatrix<f64>,
    f: F,
) -> Result<f64> {
    let mut p = phi.clone();
    let mut worst = 0.0f64;
    for j in 0..phi.ncols() {
        for i in 0..phi.nrows() {
            let v = phi[(i, j)];
            p[(i, j)] = v + FD_STEP;
            let up = f(&p)?;
            p[(i, j)] = v - FD_STEP;
            let down = f(&p)?;
            p[(i, j)] = v;
            worst = worst.max(relative_error(grad[(i, j)], (up - down) / (2.0 * FD_STEP)));
        }
    }
    Ok(worst)
}

/// Compare all three gradients at `phi` against central differences.
pub fn check_gradients(
    phi: &DMatrix<f64>,
    batch: &[TrainingPair],
    dims: WorldDims,
    theta_s: f64,
) -> Result<GradientReport> {
    let mis = loss_misfit(phi, batch)?;
    let eff = loss_eff(phi, batch, dims, theta_s)?;
    let rip = loss_rip(phi, batch)?;
    Ok(GradientReport {
        mis: fd_worst(phi, &mis.grad, |p| Ok(loss_misfit(p, batch)?.value))?,
        eff: fd_worst(phi, &eff.grad, |p| {
            Ok(loss_eff(p, batch, dims, theta_s)?.value)
        })?,
        rip: fd_worst(phi, &rip.grad, |p| Ok(loss_rip(p, batch)?.value))?,
    })
}

/// Run `probes` random (Φ, batch) checks on small worlds and fail unless every
/// gradient is within tolerance. Φ has positive entries so that no output
/// sits on the clamp floor of the effectiveness loss.
pub fn gradient_gate(
    dims: WorldDims,
    reasoning: &ReasoningConfig,
    probes: usize,
    seed: u64,
) -> Result<GradientReport> {
    let mut rng = seeded(seed);
    let wc = WorldGenConfig::new(dims, 0.4);
    let n_out = dims.entries();
    let n_in = dims.vec_len();
    let mut report = GradientReport::default();
    for _ in 0..probes {
        let scale = rng.random_range(0.05..0.5);
        let phi = DMatrix::from_fn(n_out, n_in, |_, _| scale * rng.random_range(0.1..1.0));
        let batch = (0..rng.random_range(1..=6))
            .map(|_| {
                let t = make_world(&wc, &mut rng)?;
                let r = contextual_reasoning(&t, reasoning)?.decoder;
                Ok(TrainingPair {
                    t: DVector::from_vec(vectorize(&t)),
                    r: DVector::from_column_slice(r.as_col_major()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        report = report.worst(check_gradients(&phi, &batch, dims, reasoning.theta_s)?);
    }
    if !report.passes() {
        return Err(SncError::GradientCheck(format!(
            "max relative errors mis {:.2e}, eff {:.2e}, rip {:.2e}",
            report.mis, report.eff, report.rip
        )));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gate_passes_on_small_worlds() {
        let d = WorldDims::square(3).unwrap();
        let r = gradient_gate(d, &ReasoningConfig::default(), 5, 11).unwrap();
        assert!(r.passes(), "{r:?}");
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let d = WorldDims::square(2).unwrap();
        let t = crate::world::WorldTuple::with_uniform_priors(
            crate::world::Context::identity(2).unwrap(),
        );
        let batch = vec![TrainingPair {
            t: DVector::from_vec(vectorize(&t)),
            r: DVector::from_vec(vec![1.0, 0.0, 0.0, 1.0]),
        }];
        let phi = DMatrix::from_element(4, 8, 0.2);
        let good = loss_misfit(&phi, &batch).unwrap().grad;
        assert!(
            fd_worst(&phi, &good, |p| Ok(loss_misfit(p, &batch)?.value)).unwrap() < MIS_RIP_TOL
        );
        let bad = good * 1.01;
        assert!(fd_worst(&phi, &bad, |p| Ok(loss_misfit(p, &batch)?.value)).unwrap() > MIS_RIP_TOL);
    }
}
