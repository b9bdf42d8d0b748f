use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::{answer_request, reward_of, Dataset, Model, TrainError};
use crate::answerer::Answerer;
use crate::numerics::ParamStore;
use crate::policy::{select_top_k, SelectionMask};
use crate::rewards::{normalize, RewardConfig, RewardMode};
use crate::rng::{stream, STREAM_EVAL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Learned,
    Uniform,
    Random,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Random, Strategy::Uniform, Strategy::Learned];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Learned => "learned",
            Self::Uniform => "uniform",
            Self::Random => "random",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "learned" => Ok(Self::Learned),
            "uniform" => Ok(Self::Uniform),
            "random" => Ok(Self::Random),
            other => Err(format!(
                "unknown strategy `{other}` (expected learned, uniform or random)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub strategy: Strategy,
    pub budget: usize,
    pub instances: usize,
    pub mean_reward: f64,
    /// Share of answers matching the gold answer (the chosen option in
    /// multiple-choice mode).
    pub accuracy: f64,
    pub mean_frames: f64,
    pub mean_total_frames: f64,
    /// Mean of `100·(1 − selected/T)` over instances.
    pub reduction_pct: f64,
    /// Mean evidence coverage; present when every instance has oracle
    /// metadata.
    pub evidence_recall: Option<f64>,
}

/// `100·(1 − selected/total)`.
pub fn frame_reduction(selected: usize, total: usize) -> f64 {
    100.0 * (1.0 - selected as f64 / total as f64)
}

/// Evenly spaced indices `round(i·(T−1)/(k−1))`; the middle frame when
/// `k = 1`.
pub fn uniform_indices(frames: usize, k: usize) -> Vec<usize> {
    if k == 1 {
        return vec![(frames - 1) / 2];
    }
    let span = (frames - 1) as f64 / (k - 1) as f64;
    (0..k).map(|i| (i as f64 * span).round() as usize).collect()
}

/// `k` distinct indices drawn uniformly, sorted.
pub fn random_indices(frames: usize, k: usize, rng: &mut impl rand::Rng) -> Vec<usize> {
    let mut v = sample(rng, frames, k).into_vec();
    v.sort_unstable();
    v
}

/// Scores `strategy` at a fixed budget on every instance. Random selection
/// for instance `i` draws from the `eval` stream at index `i`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    model: &Model,
    params: &ParamStore<f64>,
    data: &Dataset,
    answerer: &dyn Answerer,
    reward: &RewardConfig,
    strategy: Strategy,
    budget: usize,
    seed: u64,
) -> Result<EvalReport, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let n = data.len();
    let (mut reward_sum, mut correct, mut frames, mut total, mut reduction) =
        (0.0, 0usize, 0usize, 0usize, 0.0);
    let mut recall = Some(0.0);
    for i in 0..n {
        let inst = data.instance(i);
        let t = data.grid(i).frames;
        if budget == 0 || budget > t {
            return Err(TrainError::Budget {
                k: budget,
                frames: t,
                id: inst.id.clone(),
            });
        }
        let mask = match strategy {
            Strategy::Learned => select_top_k(&model.probs(params, data.grid(i))?, budget)?,
            Strategy::Uniform => SelectionMask::from_indices(t, &uniform_indices(t, budget)),
            Strategy::Random => {
                let mut rng = stream(seed, STREAM_EVAL, i as u64);
                SelectionMask::from_indices(t, &random_indices(t, budget, &mut rng))
            }
        };
        let req = answer_request(inst, data.grid(i), &mask, false);
        let answer = answerer.answer(&req);
        let r = reward_of(inst, &answer, reward);
        reward_sum += r;
        let hit = match (&answer, reward.mode, &inst.options) {
            (Ok(_), RewardMode::MultipleChoice, Some(_)) => r == 1.0,
            (Ok(a), _, _) => normalize(a) == normalize(&inst.answer),
            (Err(_), _, _) => false,
        };
        correct += usize::from(hit);
        frames += mask.count();
        total += t;
        reduction += frame_reduction(mask.count(), t);
        recall = match (recall, &inst.oracle) {
            (Some(acc), Some(spec)) => Some(acc + spec.coverage(&req.frame_indices)),
            _ => None,
        };
    }
    let nf = n as f64;
    Ok(EvalReport {
        strategy,
        budget,
        instances: n,
        mean_reward: reward_sum / nf,
        accuracy: correct as f64 / nf,
        mean_frames: frames as f64 / nf,
        mean_total_frames: total as f64 / nf,
        reduction_pct: reduction / nf,
        evidence_recall: recall.map(|r| r / nf),
    })
}

/// Random, uniform and learned selection at one budget.
pub fn compare_strategies(
    model: &Model,
    params: &ParamStore<f64>,
    data: &Dataset,
    answerer: &dyn Answerer,
    reward: &RewardConfig,
    budget: usize,
    seed: u64,
) -> Result<Vec<EvalReport>, TrainError> {
    Strategy::ALL
        .iter()
        .map(|&s| evaluate(model, params, data, answerer, reward, s, budget, seed))
        .collect()
}
