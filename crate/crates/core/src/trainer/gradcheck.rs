//! Finite-difference checks of the three training losses through encoder
//! and policy on small random instances.

use rand::Rng;
use serde::Serialize;

use super::{advantages, instance_loss, LossTarget, Model, Objective, TrainConfig, TrainError};
use crate::encoder::TokenGrid;
use crate::numerics::{finite_diff_check, ParamStore};
use crate::policy::{mask_log_prob, SelectionMask};
use crate::rng::stream;

pub const STREAM_GRAD_CHECK: &str = "grad-check";
pub const GRAD_CHECK_STEP: f64 = 1e-5;
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckResult {
    pub seed: u64,
    pub objective: Objective,
    pub frames: usize,
    pub dim: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_param: String,
    pub coordinates: usize,
}

fn small_model_config(dim: usize, group_size: usize) -> TrainConfig {
    let mut c = TrainConfig::default();
    c.encoder.dim = dim;
    c.encoder.heads = 2;
    c.encoder.spatial_blocks = 1;
    c.encoder.temporal_blocks = 1;
    c.encoder.input_dim = 8;
    c.encoder.patches = 4;
    c.policy.input_dim = dim;
    c.policy.hidden = vec![dim];
    c.group_size = group_size;
    c
}

fn random_mask(t: usize, rng: &mut impl Rng) -> SelectionMask {
    SelectionMask::new((0..t).map(|_| rng.random_bool(0.5)).collect())
}

/// Checks every objective on one random instance with `T ∈ 4..=6`,
/// `D ∈ {8, 16}` and `K = 3` fixed masks and rewards.
pub fn check_objectives(seed: u64) -> Result<Vec<GradCheckResult>, TrainError> {
    let mut rng = stream(seed, STREAM_GRAD_CHECK, 0);
    let frames = rng.random_range(4..=6);
    let dim = if rng.random_bool(0.5) { 8 } else { 16 };
    let cfg = small_model_config(dim, 3);
    let model = Model::from_config(&cfg)?;
    let params: ParamStore<f64> = model.init_params(seed);
    let data = (0..frames * 4 * 8)
        .map(|_| rng.random_range(-1.0f32..1.0))
        .collect();
    let grid = TokenGrid::new(frames, 4, 8, data)?;

    let masks: Vec<SelectionMask> = (0..cfg.group_size)
        .map(|_| random_mask(frames, &mut rng))
        .collect();
    let rewards: Vec<f64> = masks.iter().map(|_| rng.random::<f64>()).collect();
    let adv = advantages(&rewards, cfg.adv_eps);
    let probs = model.probs(&params, &grid)?;
    // ratios near 1, with the first candidate pushed past the clip range
    let mut old_log_probs = Vec::with_capacity(masks.len());
    for (i, m) in masks.iter().enumerate() {
        let jitter = if i == 0 {
            0.5
        } else {
            rng.random_range(-0.1..0.1)
        };
        old_log_probs.push(mask_log_prob(m, &probs)? + jitter);
    }
    let label = random_mask(frames, &mut rng);

    let mut out = Vec::new();
    for objective in Objective::ALL {
        let target = match objective {
            Objective::Grpo => LossTarget::Grpo {
                masks: masks.clone(),
                advantages: adv.clone(),
            },
            Objective::Ppo => LossTarget::Ppo {
                masks: masks.clone(),
                advantages: adv.clone(),
                old_log_probs: old_log_probs.clone(),
                clip: cfg.ppo_clip,
            },
            Objective::Sft => LossTarget::Sft {
                label: label.clone(),
            },
        };
        let report = finite_diff_check(
            |tape, b| instance_loss(&model, tape, b, &grid, &target),
            &params,
            GRAD_CHECK_STEP,
        )?;
        out.push(GradCheckResult {
            seed,
            objective,
            frames,
            dim,
            max_rel_error: report.max_rel_error,
            max_abs_error: report.max_abs_error,
            worst_param: report.worst_param,
            coordinates: report.coordinates,
        });
    }
    Ok(out)
}
