use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::tmh::ChainTrace;
use crate::error::{Result, SncError};
use crate::world::{Context, PriorRole, SimplexVector, WorldTuple};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointRule {
    LastState,
    /// Entrywise mean of X thresholded at 0.5; y, z sample means.
    #[default]
    PosteriorMeanThenRound,
    /// Most frequent X pattern; y, z averaged over the samples that share it.
    MarginalMode,
}

fn mean_simplex<'a>(
    it: impl Iterator<Item = &'a SimplexVector>,
    dim: usize,
    role: PriorRole,
) -> SimplexVector {
    let mut acc = vec![0.0; dim];
    for v in it {
        for (a, p) in acc.iter_mut().zip(v.probs()) {
            *a += p;
        }
    }
    let s: f64 = acc.iter().sum();
    acc.iter_mut().for_each(|a| *a /= s);
    SimplexVector::new_unchecked(acc, role)
}

/// Collapse post-burn-in samples into one world.
pub fn point_estimate(samples: &[WorldTuple], rule: PointRule) -> Result<WorldTuple> {
    let last = samples.last().ok_or(SncError::EmptyTrace)?;
    let d = last.dims();
    match rule {
        PointRule::LastState => Ok(last.clone()),
        PointRule::PosteriorMeanThenRound => {
            let n = samples.len() as f64;
            let mut ones = vec![0usize; d.entries()];
            for t in samples {
                for (o, &v) in ones.iter_mut().zip(t.context.as_col_major()) {
                    *o += v as usize;
                }
            }
            let x: Vec<u8> = ones.iter().map(|&k| (k as f64 / n >= 0.5) as u8).collect();
            Ok(WorldTuple {
                context: Context::from_col_major(d, x)?,
                action_prior: mean_simplex(
                    samples.iter().map(|t| &t.action_prior),
                    d.num_actions,
                    PriorRole::Action,
                ),
                concept_prior: mean_simplex(
                    samples.iter().map(|t| &t.concept_prior),
                    d.num_concepts,
                    PriorRole::Concept,
                ),
            })
        }
        PointRule::MarginalMode => {
            let mut counts: HashMap<&[u8], (usize, usize)> = HashMap::new();
            for (i, t) in samples.iter().enumerate() {
                let e = counts.entry(t.context.as_col_major()).or_insert((0, i));
                e.0 += 1;
            }
            // ties go to the pattern seen first
            let (&pattern, _) = counts
                .iter()
                .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
                .expect("non-empty");
            let same: Vec<&WorldTuple> = samples
                .iter()
                .filter(|t| t.context.as_col_major() == pattern)
                .collect();
            Ok(WorldTuple {
                context: Context::from_col_major(d, pattern.to_vec())?,
                action_prior: mean_simplex(
                    same.iter().map(|t| &t.action_prior),
                    d.num_actions,
                    PriorRole::Action,
                ),
                concept_prior: mean_simplex(
                    same.iter().map(|t| &t.concept_prior),
                    d.num_concepts,
                    PriorRole::Concept,
                ),
            })
        }
    }
}

/// [`point_estimate`] over the trace's post-burn-in states.
pub fn estimate_from_trace(trace: &ChainTrace, rule: PointRule) -> Result<WorldTuple> {
    point_estimate(trace.post_burn_in(), rule)
}
