//! GRPO training of the encoder and selection policy, PPO and SFT baselines,
//! evaluation, checkpoints, and the objective ablation.

mod ablation;
mod checkpoint;
mod eval;
mod gradcheck;
mod objective;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::thread;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::answerer::{AnswerRequest, Answerer, FrameEncoding, FramePayload, OracleAnswerer};
use crate::encoder::{patchify, Encoder, EncoderConfig, EncoderError, TokenGrid};
use crate::numerics::{
    adam_step, AdamConfig, AdamState, Bindings, NumericsError, ParamStore, Tape, Var,
};
use crate::policy::{
    mask_log_prob, selection_probs, Policy, PolicyConfig, PolicyError, SelectionMask,
    SelectionProbs,
};
use crate::rewards::{self, RewardConfig};
use crate::rng::{stream, STREAM_BATCH, STREAM_POLICY_INIT, STREAM_SWEEP};
use crate::scalar::Scalar;
use crate::synthdata::{QAInstance, SynthError};

pub use ablation::{
    run_ablation_objective, AblationConfig, AblationRow, AblationTable, SeedResult, Stat,
};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION};
pub use eval::{
    compare_strategies, evaluate, frame_reduction, random_indices, uniform_indices, EvalReport,
    Strategy,
};
pub use gradcheck::{
    check_objectives, GradCheckResult, GRAD_CHECK_STEP, GRAD_CHECK_TOLERANCE, STREAM_GRAD_CHECK,
};
pub use objective::{
    advantages, grpo_loss, mean_std, ppo_loss, sft_loss, CandidateGroup, LossTarget,
};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Data(#[from] SynthError),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("budget {k} exceeds the {frames} frames of instance `{id}`")]
    Budget { k: usize, frames: usize, id: String },
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u64, expected: u64 },
    #[error("corrupt checkpoint entry `{entry}`: {message}")]
    Corrupt { entry: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    #[default]
    Grpo,
    Ppo,
    Sft,
}

impl Objective {
    pub const ALL: [Objective; 3] = [Objective::Grpo, Objective::Ppo, Objective::Sft];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Grpo => "grpo",
            Self::Ppo => "ppo",
            Self::Sft => "sft",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "grpo" => Ok(Self::Grpo),
            "ppo" => Ok(Self::Ppo),
            "sft" => Ok(Self::Sft),
            other => Err(format!(
                "unknown objective `{other}` (expected grpo, ppo or sft)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Candidates per group, `K`.
    pub group_size: usize,
    pub batch_size: usize,
    /// Stability constant in the advantage denominator.
    pub adv_eps: f64,
    pub objective: Objective,
    pub max_steps: u64,
    pub eval_budget: usize,
    pub seed: u64,
    pub ppo_clip: f64,
    /// PPO splits each batch into this many sequential Adam updates.
    pub ppo_minibatches: usize,
    /// Threads used to query the answerer for one group.
    pub answer_workers: usize,
    /// Send per-frame token rows with each answer request.
    pub attach_frames: bool,
    pub adam: AdamConfig,
    pub reward: RewardConfig,
    pub encoder: EncoderConfig,
    pub policy: PolicyConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            batch_size: 8,
            adv_eps: 1e-8,
            objective: Objective::Grpo,
            max_steps: 2000,
            eval_budget: 4,
            seed: 0,
            ppo_clip: 0.2,
            ppo_minibatches: 2,
            answer_workers: 1,
            attach_frames: false,
            adam: AdamConfig::default(),
            reward: RewardConfig::default(),
            encoder: EncoderConfig::default(),
            policy: PolicyConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: String| Err(TrainError::Config(m));
        if self.group_size < 2 {
            return fail(format!(
                "group_size must be at least 2, got {}",
                self.group_size
            ));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if !(self.adam.lr > 0.0) {
            return fail(format!(
                "learning rate must be positive, got {}",
                self.adam.lr
            ));
        }
        if !(self.adv_eps > 0.0) {
            return fail("adv_eps must be positive".into());
        }
        if self.eval_budget == 0 {
            return fail("eval_budget must be positive".into());
        }
        if !(self.ppo_clip > 0.0 && self.ppo_clip < 1.0) {
            return fail(format!(
                "ppo_clip must lie in (0, 1), got {}",
                self.ppo_clip
            ));
        }
        if self.ppo_minibatches == 0 || self.ppo_minibatches > self.batch_size {
            return fail("ppo_minibatches must lie in 1..=batch_size".into());
        }
        if self.answer_workers == 0 {
            return fail("answer_workers must be positive".into());
        }
        if self.policy.input_dim != self.encoder.dim {
            return fail(format!(
                "policy input_dim {} must equal encoder dim {}",
                self.policy.input_dim, self.encoder.dim
            ));
        }
        self.reward.validate().map_err(TrainError::Config)?;
        self.encoder.validate()?;
        self.policy.validate()?;
        Ok(())
    }
}

/// Encoder followed by the frame-wise policy head.
#[derive(Clone, Debug)]
pub struct Model {
    pub encoder: Encoder,
    pub policy: Policy,
}

impl Model {
    pub fn new(encoder: EncoderConfig, policy: PolicyConfig) -> Result<Self, TrainError> {
        if policy.input_dim != encoder.dim {
            return Err(TrainError::Config(format!(
                "policy input_dim {} must equal encoder dim {}",
                policy.input_dim, encoder.dim
            )));
        }
        Ok(Self {
            encoder: Encoder::new(encoder)?,
            policy: Policy::new(policy)?,
        })
    }

    pub fn from_config(config: &TrainConfig) -> Result<Self, TrainError> {
        Self::new(config.encoder.clone(), config.policy.clone())
    }

    /// Encoder then policy parameters, drawn from the `policy-init` stream.
    pub fn init_params<S: Scalar>(&self, seed: u64) -> ParamStore<S> {
        let mut rng = stream(seed, STREAM_POLICY_INIT, 0);
        let mut params = self.encoder.init_params(&mut rng);
        params
            .extend(self.policy.init_params(&mut rng))
            .expect("encoder and policy names are disjoint");
        params
    }

    /// Whether a parameter receives gradients.
    pub fn is_trainable(&self, name: &str) -> bool {
        self.encoder.config.trainable || !name.starts_with(crate::encoder::PARAM_PREFIX)
    }

    /// Logits and clamped keep-probabilities, both `T × 1`, on `tape`.
    pub fn forward_parts<'t, S: Scalar>(
        &self,
        tape: &'t Tape<S>,
        params: &Bindings<'t, S>,
        grid: &TokenGrid,
    ) -> Result<(Var<'t, S>, Var<'t, S>), TrainError> {
        let features = self.encoder.forward(tape, params, grid)?;
        let logits = self.policy.logits(params, features)?;
        Ok((logits, self.policy.squash(logits)))
    }

    /// Keep-probabilities, `T × 1`, on `tape`.
    pub fn forward<'t, S: Scalar>(
        &self,
        tape: &'t Tape<S>,
        params: &Bindings<'t, S>,
        grid: &TokenGrid,
    ) -> Result<Var<'t, S>, TrainError> {
        Ok(self.forward_parts(tape, params, grid)?.1)
    }

    pub fn probs<S: Scalar>(
        &self,
        params: &ParamStore<S>,
        grid: &TokenGrid,
    ) -> Result<SelectionProbs, TrainError> {
        let tape = Tape::new();
        let bindings = params.bind(&tape, |_| false);
        let (logits, p) = self.forward_parts(&tape, &bindings, grid)?;
        Ok(selection_probs(p, logits))
    }
}

/// Instances with their token grids extracted once.
#[derive(Clone, Debug)]
pub struct Dataset {
    instances: Vec<QAInstance>,
    grids: Vec<TokenGrid>,
}

impl Dataset {
    pub fn new(instances: Vec<QAInstance>, patch_size: usize) -> Result<Self, TrainError> {
        let grids = instances
            .iter()
            .map(|i| patchify(&i.video, patch_size))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { instances, grids })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn instances(&self) -> &[QAInstance] {
        &self.instances
    }

    pub fn instance(&self, i: usize) -> &QAInstance {
        &self.instances[i]
    }

    pub fn grid(&self, i: usize) -> &TokenGrid {
        &self.grids[i]
    }

    /// Registry answerer over every instance that carries oracle metadata.
    pub fn oracle(&self) -> OracleAnswerer {
        let mut o = OracleAnswerer::new();
        for inst in &self.instances {
            if let Some(spec) = &inst.oracle {
                o.register(inst.id.clone(), spec.clone());
            }
        }
        o
    }
}

/// Builds the request for one candidate mask.
pub fn answer_request(
    inst: &QAInstance,
    grid: &TokenGrid,
    mask: &SelectionMask,
    attach_frames: bool,
) -> AnswerRequest {
    let indices = mask.selected();
    let mut req = AnswerRequest::new(inst.id.clone(), inst.question.clone(), indices.clone());
    req.options = inst.options.clone();
    if attach_frames {
        req.frames = Some(
            indices
                .iter()
                .map(|&t| FramePayload::Features(grid.frame(t).to_vec()))
                .collect(),
        );
        req.frame_encoding = Some(FrameEncoding::FeaturesF32);
    }
    req
}

/// Reward of an answer to `inst`; answerer failures score 0.
pub fn reward_of(
    inst: &QAInstance,
    answer: &Result<String, crate::answerer::AnswerError>,
    config: &RewardConfig,
) -> f64 {
    match answer {
        Ok(pred) => rewards::score(pred, &inst.answer, inst.options.as_deref(), config),
        Err(e) => {
            log::warn!("answerer failed on `{}`: {e}; scoring 0", inst.id);
            0.0
        }
    }
}

/// Queries the answerer for every request, in order, on up to `workers`
/// threads.
pub fn answer_all(
    answerer: &dyn Answerer,
    requests: &[AnswerRequest],
    workers: usize,
) -> Vec<Result<String, crate::answerer::AnswerError>> {
    if workers <= 1 || requests.len() <= 1 {
        return requests.iter().map(|r| answerer.answer(r)).collect();
    }
    let chunk = requests.len().div_ceil(workers);
    thread::scope(|s| {
        let handles: Vec<_> = requests
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || part.iter().map(|r| answerer.answer(r)).collect::<Vec<_>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("answerer thread panicked"))
            .collect()
    })
}

/// Per-step training record, one JSONL line each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub loss: f64,
    pub mean_reward: f64,
    pub mean_frames: f64,
    pub seed: u64,
}

pub struct Trainer<'a> {
    config: TrainConfig,
    model: Model,
    params: ParamStore<f64>,
    adam: AdamState<f64>,
    step: u64,
    answerer: &'a dyn Answerer,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, answerer: &'a dyn Answerer) -> Result<Self, TrainError> {
        config.validate()?;
        let model = Model::from_config(&config)?;
        let params = model.init_params(config.seed);
        let adam = AdamState::new(config.adam);
        Ok(Self {
            config,
            model,
            params,
            adam,
            step: 0,
            answerer,
        })
    }

    /// Resumes from a checkpoint. Without stored optimizer state Adam
    /// restarts from zero moments.
    pub fn from_checkpoint(
        ckpt: Checkpoint,
        answerer: &'a dyn Answerer,
    ) -> Result<Self, TrainError> {
        ckpt.config.validate()?;
        let model = Model::from_config(&ckpt.config)?;
        let adam = ckpt
            .adam
            .unwrap_or_else(|| AdamState::new(ckpt.config.adam));
        Ok(Self {
            config: ckpt.config,
            model,
            params: ckpt.params,
            adam,
            step: ckpt.step,
            answerer,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn params(&self) -> &ParamStore<f64> {
        &self.params
    }

    pub fn adam(&self) -> &AdamState<f64> {
        &self.adam
    }

    /// Swaps the reward used from the next step on, e.g. between curriculum
    /// phases.
    pub fn set_reward(&mut self, reward: RewardConfig) -> Result<(), TrainError> {
        reward.validate().map_err(TrainError::Config)?;
        self.config.reward = reward;
        Ok(())
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            seed: self.config.seed,
            step: self.step,
            config: self.config.clone(),
            params: self.params.clone(),
            adam: Some(self.adam.clone()),
        }
    }

    /// Batch indices for the current step; a pure function of seed and step.
    pub fn batch_indices(&self, n: usize) -> Vec<usize> {
        let mut rng = stream(self.config.seed, STREAM_BATCH, self.step);
        sample(&mut rng, n, self.config.batch_size.min(n)).into_vec()
    }

    /// Runs `steps` updates with the configured objective.
    pub fn train(
        &mut self,
        data: &Dataset,
        steps: u64,
        mut on_step: impl FnMut(&StepMetrics),
    ) -> Result<Vec<StepMetrics>, TrainError> {
        let mut out = Vec::with_capacity(steps as usize);
        for _ in 0..steps {
            let m = self.step_once(data)?;
            on_step(&m);
            out.push(m);
        }
        Ok(out)
    }

    pub fn step_once(&mut self, data: &Dataset) -> Result<StepMetrics, TrainError> {
        if data.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let batch = self.batch_indices(data.len());
        match self.config.objective {
            Objective::Grpo => self.grpo_step(data, &batch),
            Objective::Ppo => self.ppo_step(data, &batch),
            Objective::Sft => self.sft_step(data, &batch),
        }
    }

    /// Scores the sweep candidates of one instance.
    fn rollout(
        &self,
        data: &Dataset,
        i: usize,
        probs: &SelectionProbs,
        rng: &mut impl rand::Rng,
    ) -> Result<CandidateGroup, TrainError> {
        let (inst, grid) = (data.instance(i), data.grid(i));
        let masks = self
            .model
            .policy
            .candidate_sweep(probs, self.config.group_size, rng)?;
        let requests: Vec<AnswerRequest> = masks
            .iter()
            .map(|m| answer_request(inst, grid, m, self.config.attach_frames))
            .collect();
        let answers = answer_all(self.answerer, &requests, self.config.answer_workers);
        let rewards = answers
            .iter()
            .map(|a| reward_of(inst, a, &self.config.reward))
            .collect();
        let log_probs = masks
            .iter()
            .map(|m| mask_log_prob(m, probs))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(CandidateGroup::new(
            masks,
            rewards,
            log_probs,
            self.config.adv_eps,
        ))
    }

    fn apply(
        &mut self,
        tape: &Tape<f64>,
        bindings: &Bindings<'_, f64>,
        loss: Var<'_, f64>,
    ) -> Result<(), TrainError> {
        let grads = tape.backward(loss)?;
        self.params.zero_grads();
        self.params.accumulate(bindings, &grads);
        adam_step(&mut self.params, &mut self.adam)?;
        Ok(())
    }

    /// One forward per instance, group rollouts, then a single update on the
    /// batch-mean loss built by `target`.
    fn single_update_step(
        &mut self,
        data: &Dataset,
        batch: &[usize],
        target: impl Fn(&CandidateGroup) -> LossTarget,
    ) -> Result<StepMetrics, TrainError> {
        let tape = Tape::new();
        let model = &self.model;
        let bindings = self.params.bind(&tape, |n| model.is_trainable(n));
        let mut rng = stream(self.config.seed, STREAM_SWEEP, self.step);
        let mut terms = Vec::with_capacity(batch.len());
        let mut groups = Vec::with_capacity(batch.len());
        for &i in batch {
            let (logits, p) = self.model.forward_parts(&tape, &bindings, data.grid(i))?;
            let group = self.rollout(data, i, &selection_probs(p, logits), &mut rng)?;
            terms.push(target(&group).loss(&tape, p)?);
            groups.push(group);
        }
        let loss = tape.add_n(&terms)?.scale(1.0 / batch.len() as f64);
        let value = loss.item();
        self.apply(&tape, &bindings, loss)?;
        Ok(self.finish(value, &groups))
    }

    pub fn grpo_step(
        &mut self,
        data: &Dataset,
        batch: &[usize],
    ) -> Result<StepMetrics, TrainError> {
        self.single_update_step(data, batch, |g| LossTarget::Grpo {
            masks: g.masks.clone(),
            advantages: g.advantages.clone(),
        })
    }

    pub fn sft_step(&mut self, data: &Dataset, batch: &[usize]) -> Result<StepMetrics, TrainError> {
        self.single_update_step(data, batch, |g| LossTarget::Sft {
            label: g.masks[g.best()].clone(),
        })
    }

    /// Rolls out the whole batch under the current parameters, then takes one
    /// clipped-surrogate update per minibatch, in order.
    pub fn ppo_step(&mut self, data: &Dataset, batch: &[usize]) -> Result<StepMetrics, TrainError> {
        let mut rng = stream(self.config.seed, STREAM_SWEEP, self.step);
        let mut groups = Vec::with_capacity(batch.len());
        for &i in batch {
            let probs = self.model.probs(&self.params, data.grid(i))?;
            groups.push(self.rollout(data, i, &probs, &mut rng)?);
        }
        let chunk = batch.len().div_ceil(self.config.ppo_minibatches);
        let mut loss_sum = 0.0;
        let mut updates = 0;
        for (idx, grp) in batch.chunks(chunk).zip(groups.chunks(chunk)) {
            let tape = Tape::new();
            let model = &self.model;
            let bindings = self.params.bind(&tape, |n| model.is_trainable(n));
            let mut terms = Vec::with_capacity(idx.len());
            for (&i, g) in idx.iter().zip(grp) {
                let p = self.model.forward(&tape, &bindings, data.grid(i))?;
                let target = LossTarget::Ppo {
                    masks: g.masks.clone(),
                    advantages: g.advantages.clone(),
                    old_log_probs: g.log_probs.clone(),
                    clip: self.config.ppo_clip,
                };
                terms.push(target.loss(&tape, p)?);
            }
            let loss = tape.add_n(&terms)?.scale(1.0 / idx.len() as f64);
            loss_sum += loss.item();
            updates += 1;
            self.apply(&tape, &bindings, loss)?;
        }
        Ok(self.finish(loss_sum / updates as f64, &groups))
    }

    fn finish(&mut self, loss: f64, groups: &[CandidateGroup]) -> StepMetrics {
        self.step += 1;
        let n: usize = groups.iter().map(|g| g.masks.len()).sum();
        let reward: f64 = groups.iter().flat_map(|g| &g.rewards).sum();
        let frames: usize = groups
            .iter()
            .flat_map(|g| &g.masks)
            .map(SelectionMask::count)
            .sum();
        StepMetrics {
            step: self.step,
            loss,
            mean_reward: reward / n as f64,
            mean_frames: frames as f64 / n as f64,
            seed: self.config.seed,
        }
    }

    pub fn evaluate(
        &self,
        data: &Dataset,
        strategy: Strategy,
        budget: usize,
        seed: u64,
    ) -> Result<EvalReport, TrainError> {
        evaluate(
            &self.model,
            &self.params,
            data,
            self.answerer,
            &self.config.reward,
            strategy,
            budget,
            seed,
        )
    }
}

/// Loss of one instance under a fixed target, through encoder and policy.
pub fn instance_loss<'t, S: Scalar>(
    model: &Model,
    tape: &'t Tape<S>,
    params: &Bindings<'t, S>,
    grid: &TokenGrid,
    target: &LossTarget,
) -> Result<Var<'t, S>, TrainError> {
    let p = model.forward(tape, params, grid)?;
    Ok(target.loss(tape, p)?)
}
