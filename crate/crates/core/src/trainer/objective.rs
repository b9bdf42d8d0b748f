//! Group advantages and the three training losses.

use std::rc::Rc;

use serde::Serialize;

use crate::numerics::{NumericsError, Tape, Tensor, Var};
use crate::policy::SelectionMask;
use crate::scalar::Scalar;

/// Group-normalized advantages `(r − r̄) / (σ + ε)` with population `σ`.
/// A constant reward vector yields exact zeros.
pub fn advantages(rewards: &[f64], eps: f64) -> Vec<f64> {
    if rewards.is_empty() || rewards.iter().all(|&r| r == rewards[0]) {
        return vec![0.0; rewards.len()];
    }
    let (mean, std) = mean_std(rewards);
    rewards.iter().map(|r| (r - mean) / (std + eps)).collect()
}

/// Mean and population standard deviation, summed in index order.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// The `K` candidates of one instance with their rewards and advantages.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CandidateGroup {
    pub masks: Vec<SelectionMask>,
    pub rewards: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub advantages: Vec<f64>,
    /// `log π(b|F)` under the parameters that generated the group.
    pub log_probs: Vec<f64>,
}

impl CandidateGroup {
    pub fn new(
        masks: Vec<SelectionMask>,
        rewards: Vec<f64>,
        log_probs: Vec<f64>,
        eps: f64,
    ) -> Self {
        let (mean, std) = mean_std(&rewards);
        let advantages = advantages(&rewards, eps);
        Self {
            masks,
            rewards,
            mean,
            std,
            advantages,
            log_probs,
        }
    }

    /// Index of the best candidate: highest reward, then fewest frames, then
    /// earliest in the group.
    pub fn best(&self) -> usize {
        let mut best = 0;
        for i in 1..self.masks.len() {
            let better = match self.rewards[i].total_cmp(&self.rewards[best]) {
                std::cmp::Ordering::Greater => true,
                std::cmp::Ordering::Equal => self.masks[i].count() < self.masks[best].count(),
                std::cmp::Ordering::Less => false,
            };
            if better {
                best = i;
            }
        }
        best
    }
}

fn mask_var<'t, S: Scalar>(
    tape: &'t Tape<S>,
    p: Var<'t, S>,
    mask: &SelectionMask,
) -> Result<Var<'t, S>, NumericsError> {
    tape.bernoulli_log_prob(p, Rc::new(mask.bits().to_vec()))
}

/// `−(1/K) Σ_i A_i · log π(b_i)`.
pub fn grpo_loss<'t, S: Scalar>(
    tape: &'t Tape<S>,
    p: Var<'t, S>,
    masks: &[SelectionMask],
    advantages: &[f64],
) -> Result<Var<'t, S>, NumericsError> {
    let k = masks.len() as f64;
    let terms = masks
        .iter()
        .zip(advantages)
        .map(|(m, &a)| Ok(mask_var(tape, p, m)?.scale(S::of(-a / k))))
        .collect::<Result<Vec<_>, NumericsError>>()?;
    tape.add_n(&terms)
}

/// `−(1/K) Σ_i min(ρ_i A_i, clip(ρ_i, 1−c, 1+c) A_i)` with
/// `ρ_i = exp(log π(b_i) − old_i)`.
pub fn ppo_loss<'t, S: Scalar>(
    tape: &'t Tape<S>,
    p: Var<'t, S>,
    masks: &[SelectionMask],
    advantages: &[f64],
    old_log_probs: &[f64],
    clip: f64,
) -> Result<Var<'t, S>, NumericsError> {
    let k = masks.len() as f64;
    let (lo, hi) = (S::of(1.0 - clip), S::of(1.0 + clip));
    let mut terms = Vec::with_capacity(masks.len());
    for ((m, &a), &old) in masks.iter().zip(advantages).zip(old_log_probs) {
        let shift = tape.constant(Tensor::scalar(S::of(-old)));
        let ratio = mask_var(tape, p, m)?.add(shift)?.exp();
        let plain = ratio.scale(S::of(a));
        let clipped = ratio.clamp(lo, hi).scale(S::of(a));
        terms.push(plain.minimum(clipped)?.scale(S::of(-1.0 / k)));
    }
    tape.add_n(&terms)
}

/// Mean per-frame binary cross-entropy against `label`.
pub fn sft_loss<'t, S: Scalar>(
    tape: &'t Tape<S>,
    p: Var<'t, S>,
    label: &SelectionMask,
) -> Result<Var<'t, S>, NumericsError> {
    let t = label.len() as f64;
    Ok(mask_var(tape, p, label)?.scale(S::of(-1.0 / t)))
}

/// Fixed training signal for one instance, independent of the parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum LossTarget {
    Grpo {
        masks: Vec<SelectionMask>,
        advantages: Vec<f64>,
    },
    Ppo {
        masks: Vec<SelectionMask>,
        advantages: Vec<f64>,
        old_log_probs: Vec<f64>,
        clip: f64,
    },
    Sft {
        label: SelectionMask,
    },
}

impl LossTarget {
    pub fn loss<'t, S: Scalar>(
        &self,
        tape: &'t Tape<S>,
        p: Var<'t, S>,
    ) -> Result<Var<'t, S>, NumericsError> {
        match self {
            Self::Grpo { masks, advantages } => grpo_loss(tape, p, masks, advantages),
            Self::Ppo {
                masks,
                advantages,
                old_log_probs,
                clip,
            } => ppo_loss(tape, p, masks, advantages, old_log_probs, *clip),
            Self::Sft { label } => sft_loss(tape, p, label),
        }
    }
}
