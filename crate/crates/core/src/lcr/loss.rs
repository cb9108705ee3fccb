//! Training losses for the linearized model. Every loss is averaged over the
//! batch and returned with its gradient with respect to the effective map `Φ`.
//! Each per-sample gradient has the rank-one form `g tᵀ`, so the same `g`
//! vectors also give the factor gradients through the product rule.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SncError};
use crate::reasoning::CLAMP_EPS;
use crate::world::WorldDims;

/// One vectorized training example: `t = vec(T)` and `r = vec(ℛ(T))`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub t: DVector<f64>,
    pub r: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: DMatrix<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_mis: f64,
    pub lambda_eff: f64,
    pub lambda_rip: f64,
    pub theta_s: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_mis: 0.8,
            lambda_eff: 0.2,
            lambda_rip: 0.1,
            theta_s: 1.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_mis < 0.0 || self.lambda_eff < 0.0 || self.lambda_rip < 0.0 {
            return Err(SncError::Config("loss weights must be >= 0".into()));
        }
        if (self.lambda_mis + self.lambda_eff - 1.0).abs() > 1e-12 {
            return Err(SncError::Config(format!(
                "lambda_mis + lambda_eff must equal 1, got {}",
                self.lambda_mis + self.lambda_eff
            )));
        }
        Ok(())
    }
}

/// Per-term batch means.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub mis: f64,
    pub eff: f64,
    pub rip: f64,
    pub total: f64,
}

fn check_batch(phi: &DMatrix<f64>, batch: &[TrainingPair]) -> Result<()> {
    if batch.is_empty() {
        return Err(SncError::Config("empty batch".into()));
    }
    for p in batch {
        if p.t.len() != phi.ncols() || p.r.len() != phi.nrows() {
            return Err(SncError::DimMismatch {
                expected: phi.ncols(),
                actual: p.t.len(),
            });
        }
    }
    Ok(())
}

/// `‖r - r̃‖²` and its gradient in `r̃`.
pub(crate) fn misfit_sample(rt: &DVector<f64>, r: &DVector<f64>) -> (f64, DVector<f64>) {
    let e = r - rt;
    (e.norm_squared(), -2.0 * e)
}

/// `Σ_a y_a (1 - Σ_c s̃ r̃)` and its gradient in `r̃`; `s̃` is the encoder
/// half-step on `max(r̃, ε)`.
pub(crate) fn eff_sample(
    dims: WorldDims,
    rt: &DVector<f64>,
    t: &DVector<f64>,
    theta: f64,
) -> Result<(f64, DVector<f64>)> {
    let n = dims.num_concepts;
    let na = dims.num_actions;
    let y = &t.as_slice()[n * na..n * na + na];
    let z = &t.as_slice()[n * na + na..];
    let mut g = DVector::zeros(rt.len());
    let mut loss = 0.0;
    let mut s = vec![0.0; n];
    for a in 0..na {
        let col = &rt.as_slice()[a * n..(a + 1) * n];
        let mut m = 0.0f64;
        for c in 0..n {
            s[c] = col[c].max(CLAMP_EPS) * z[c];
            m = m.max(s[c]);
        }
        if !(m > 0.0) {
            return Err(SncError::DegenerateColumn(a));
        }
        let mut sum = 0.0;
        for v in s.iter_mut() {
            *v = if *v > 0.0 { (*v / m).powf(theta) } else { 0.0 };
            sum += *v;
        }
        s.iter_mut().for_each(|v| *v /= sum);
        let e: f64 = s.iter().zip(col).map(|(p, r)| p * r).sum();
        loss += y[a] * (1.0 - e);
        for c in 0..n {
            let mut de = s[c];
            if col[c] > CLAMP_EPS {
                de += theta * s[c] * (col[c] - e) / col[c];
            }
            g[a * n + c] = -y[a] * de;
        }
    }
    Ok((loss, g))
}

/// `(‖r̃‖²/‖t‖² - 1)²` and its gradient in `r̃`.
pub(crate) fn rip_sample(rt: &DVector<f64>, t: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
    let tt = t.norm_squared();
    if tt == 0.0 {
        return Err(SncError::ZeroVector);
    }
    let rho = rt.norm_squared() / tt;
    Ok(((rho - 1.0).powi(2), rt * (4.0 * (rho - 1.0) / tt)))
}

fn average<F>(phi: &DMatrix<f64>, batch: &[TrainingPair], mut f: F) -> Result<LossGrad>
where
    F: FnMut(&TrainingPair, &DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    check_batch(phi, batch)?;
    let inv = 1.0 / batch.len() as f64;
    let mut grad = DMatrix::zeros(phi.nrows(), phi.ncols());
    let mut value = 0.0;
    for p in batch {
        let rt = phi * &p.t;
        let (v, g) = f(p, &rt)?;
        value += v;
        grad.ger(inv, &g, &p.t, 1.0);
    }
    Ok(LossGrad {
        value: value * inv,
        grad,
    })
}

pub fn loss_misfit(phi: &DMatrix<f64>, batch: &[TrainingPair]) -> Result<LossGrad> {
    average(phi, batch, |p, rt| Ok(misfit_sample(rt, &p.r)))
}

pub fn loss_eff(
    phi: &DMatrix<f64>,
    batch: &[TrainingPair],
    dims: WorldDims,
    theta_s: f64,
) -> Result<LossGrad> {
    average(phi, batch, |p, rt| eff_sample(dims, rt, &p.t, theta_s))
}

pub fn loss_rip(phi: &DMatrix<f64>, batch: &[TrainingPair]) -> Result<LossGrad> {
    average(phi, batch, |p, rt| rip_sample(rt, &p.t))
}

/// Weighted objective `λ_mis ℒ_mis + λ_eff ℒ_eff + λ₂ ℒ_RIP` in one pass.
/// Returns the parts and the gradient in `Φ`.
pub fn objective(
    phi: &DMatrix<f64>,
    batch: &[TrainingPair],
    dims: WorldDims,
    w: &LossWeights,
) -> Result<(LossParts, DMatrix<f64>)> {
    check_batch(phi, batch)?;
    let inv = 1.0 / batch.len() as f64;
    let mut grad = DMatrix::zeros(phi.nrows(), phi.ncols());
    let mut parts = LossParts::default();
    for p in batch {
        let rt = phi * &p.t;
        let (vm, gm) = misfit_sample(&rt, &p.r);
        let mut g = gm * w.lambda_mis;
        parts.mis += vm;
        if w.lambda_eff > 0.0 {
            let (ve, ge) = eff_sample(dims, &rt, &p.t, w.theta_s)?;
            g.axpy(w.lambda_eff, &ge, 1.0);
            parts.eff += ve;
        }
        if w.lambda_rip > 0.0 {
            let (vr, gr) = rip_sample(&rt, &p.t)?;
            g.axpy(w.lambda_rip, &gr, 1.0);
            parts.rip += vr;
        }
        grad.ger(inv, &g, &p.t, 1.0);
    }
    parts.mis *= inv;
    parts.eff *= inv;
    parts.rip *= inv;
    parts.total = w.lambda_mis * parts.mis + w.lambda_eff * parts.eff + w.lambda_rip * parts.rip;
    Ok((parts, grad))
}

/// Relative error used by the gradient checks: `|a - b| / max(|a|, |b|, 1e-3)`.
/// The floor keeps near-zero components from dominating.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reasoning::{contextual_reasoning, ReasoningConfig};
    use crate::rng::seeded;
    use crate::world::{make_world, vectorize, Context, WorldGenConfig, WorldTuple};
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn dims() -> WorldDims {
        WorldDims::square(3).unwrap()
    }

    fn batch(n: usize, seed: u64) -> Vec<TrainingPair> {
        let wc = WorldGenConfig::new(dims(), 0.4);
        let mut rng = seeded(seed);
        (0..n)
            .map(|_| {
                let t = make_world(&wc, &mut rng).unwrap();
                let r = contextual_reasoning(&t, &ReasoningConfig::default())
                    .unwrap()
                    .decoder;
                TrainingPair {
                    t: DVector::from_vec(vectorize(&t)),
                    r: DVector::from_column_slice(r.as_col_major()),
                }
            })
            .collect()
    }

    fn random_phi(seed: u64, scale: f64) -> DMatrix<f64> {
        let mut rng = seeded(seed);
        DMatrix::from_fn(9, 15, |_, _| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v * scale
        })
    }

    fn fd_check<F: Fn(&DMatrix<f64>) -> f64>(
        phi: &DMatrix<f64>,
        grad: &DMatrix<f64>,
        f: F,
        h: f64,
    ) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..phi.nrows() {
            for j in 0..phi.ncols() {
                let mut p = phi.clone();
                p[(i, j)] += h;
                let up = f(&p);
                p[(i, j)] -= 2.0 * h;
                let down = f(&p);
                let fd = (up - down) / (2.0 * h);
                worst = worst.max(relative_error(grad[(i, j)], fd));
            }
        }
        worst
    }

    #[test]
    fn misfit_examples_and_gradient() {
        let b = batch(6, 1);
        assert_eq!(
            loss_misfit(&DMatrix::zeros(9, 15), &b).unwrap().value,
            b.iter().map(|p| p.r.norm_squared()).sum::<f64>() / 6.0
        );
        let phi = random_phi(2, 0.3);
        let lg = loss_misfit(&phi, &b).unwrap();
        let worst = fd_check(&phi, &lg.grad, |p| loss_misfit(p, &b).unwrap().value, 1e-6);
        assert!(worst < 1e-5, "{worst}");
    }

    #[test]
    fn misfit_zero_on_exact_fit() {
        // Φ = [I | 0] reproduces r when r equals the context block of t
        let mut phi = DMatrix::zeros(9, 15);
        for i in 0..9 {
            phi[(i, i)] = 1.0;
        }
        let t = DVector::from_vec(vectorize(&WorldTuple::with_uniform_priors(
            Context::identity(3).unwrap(),
        )));
        let r = DVector::from_column_slice(&t.as_slice()[..9]);
        assert_eq!(
            loss_misfit(&phi, &[TrainingPair { t, r }]).unwrap().value,
            0.0
        );
    }

    #[test]
    fn eff_examples_and_gradient() {
        let t = WorldTuple::with_uniform_priors(Context::identity(3).unwrap());
        let tv = DVector::from_vec(vectorize(&t));
        let eye = DVector::from_column_slice(&tv.as_slice()[..9]);
        let (l, _) = eff_sample(dims(), &eye, &tv, 1.1).unwrap();
        assert_abs_diff_eq!(l, 0.0, epsilon = 1e-12);
        let uni = DVector::from_element(9, 1.0 / 3.0);
        let (l, _) = eff_sample(dims(), &uni, &tv, 1.1).unwrap();
        assert_abs_diff_eq!(l, 1.0 - 1.0 / 3.0, epsilon = 1e-12);

        let b = batch(6, 3);
        let mut rng = seeded(4);
        for probe in 0..5 {
            let phi = random_phi(10 + probe, 0.1 + 0.1 * rng.random::<f64>());
            let lg = loss_eff(&phi, &b, dims(), 1.1).unwrap();
            // keep probes whose outputs sit away from the clamp floor
            let near_clamp = b
                .iter()
                .any(|p| (&phi * &p.t).iter().any(|v| v.abs() < 1e-4));
            if near_clamp {
                continue;
            }
            let worst = fd_check(
                &phi,
                &lg.grad,
                |p| loss_eff(p, &b, dims(), 1.1).unwrap().value,
                1e-6,
            );
            assert!(worst < 1e-4, "{worst}");
        }
    }

    #[test]
    fn rip_examples_and_gradient() {
        let b = batch(6, 5);
        // Φ = [I | 0] preserves norms of vectors supported on the first 9 coords
        let mut phi = DMatrix::zeros(9, 15);
        for i in 0..9 {
            phi[(i, i)] = 1.0;
        }
        let only_x: Vec<TrainingPair> = b
            .iter()
            .map(|p| {
                let mut t = p.t.clone();
                t.as_mut_slice()[9..].iter_mut().for_each(|v| *v = 0.0);
                TrainingPair { t, r: p.r.clone() }
            })
            .collect();
        assert_eq!(loss_rip(&phi, &only_x).unwrap().value, 0.0);
        assert_abs_diff_eq!(
            loss_rip(&(phi * 2.0), &only_x).unwrap().value,
            9.0,
            epsilon = 1e-12
        );

        let phi = random_phi(6, 0.3);
        let lg = loss_rip(&phi, &b).unwrap();
        let worst = fd_check(&phi, &lg.grad, |p| loss_rip(p, &b).unwrap().value, 1e-6);
        assert!(worst < 1e-5, "{worst}");

        let zero = TrainingPair {
            t: DVector::zeros(15),
            r: DVector::zeros(9),
        };
        assert!(matches!(loss_rip(&phi, &[zero]), Err(SncError::ZeroVector)));
    }

    #[test]
    fn objective_is_the_weighted_sum() {
        let b = batch(5, 7);
        let phi = random_phi(8, 0.2);
        let w = LossWeights::default();
        let (parts, grad) = objective(&phi, &b, dims(), &w).unwrap();
        let m = loss_misfit(&phi, &b).unwrap();
        let e = loss_eff(&phi, &b, dims(), w.theta_s).unwrap();
        let r = loss_rip(&phi, &b).unwrap();
        assert_abs_diff_eq!(parts.mis, m.value, epsilon = 1e-12);
        assert_abs_diff_eq!(parts.eff, e.value, epsilon = 1e-12);
        assert_abs_diff_eq!(parts.rip, r.value, epsilon = 1e-12);
        let l1 = w.lambda_mis * m.value + w.lambda_eff * e.value;
        assert_eq!(parts.total, l1 + w.lambda_rip * r.value);
        let g = m.grad * w.lambda_mis + e.grad * w.lambda_eff + r.grad * w.lambda_rip;
        assert!((g - grad).amax() < 1e-12);
    }

    #[test]
    fn weights_must_sum_to_one() {
        let bad = LossWeights {
            lambda_mis: 0.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(LossWeights::default().validate().is_ok());
    }
}
