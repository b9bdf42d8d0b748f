//! Training-objective ablation: each objective is trained on an
//! in-distribution synthetic split and scored on held-out ID and shifted
//! splits, across several seeds.

use serde::{Deserialize, Serialize};

use super::{evaluate, Dataset, Model, Objective, Strategy, TrainConfig, TrainError, Trainer};
use crate::answerer::OracleAnswerer;
use crate::synthdata::{split_ood, OodShift, SynthTaskConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub seeds: Vec<u64>,
    pub objectives: Vec<Objective>,
    pub steps: u64,
    pub n_train: usize,
    pub n_eval: usize,
    pub budget: usize,
    pub task: SynthTaskConfig,
    pub shift: OodShift,
    pub train: TrainConfig,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            seeds: (0..5).collect(),
            objectives: Objective::ALL.to_vec(),
            steps: 300,
            n_train: 500,
            n_eval: 100,
            budget: 4,
            task: SynthTaskConfig::default(),
            shift: OodShift {
                rotation_deg: 45.0,
                frames: None,
            },
            train: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub per_seed: Vec<f64>,
}

impl Stat {
    fn of(values: Vec<f64>) -> Self {
        let (mean, std) = super::mean_std(&values);
        Self {
            mean,
            std,
            per_seed: values,
        }
    }
}

/// One table row; `objective` is `untrained` for the initial policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub objective: String,
    pub id_reward: Stat,
    pub ood_reward: Stat,
    /// `100 · OOD reward / untrained OOD reward`, per seed.
    pub ood_retention_pct: Stat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub objective: String,
    pub id_reward: f64,
    pub ood_reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
    pub per_seed: Vec<SeedResult>,
}

impl AblationTable {
    pub fn row(&self, objective: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.objective == objective)
    }

    /// Plain-text table with mean ± std columns.
    pub fn render(&self) -> String {
        let mut s = format!(
            "{:<10} {:>17} {:>17} {:>17}\n",
            "objective", "ID reward", "OOD reward", "OOD retention %"
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{:<10} {:>8.4} ± {:<6.4} {:>8.4} ± {:<6.4} {:>8.2} ± {:<6.2}\n",
                r.objective,
                r.id_reward.mean,
                r.id_reward.std,
                r.ood_reward.mean,
                r.ood_reward.std,
                r.ood_retention_pct.mean,
                r.ood_retention_pct.std
            ));
        }
        s
    }
}

fn learned_reward(
    model: &Model,
    params: &crate::numerics::ParamStore<f64>,
    data: &Dataset,
    oracle: &OracleAnswerer,
    cfg: &TrainConfig,
    budget: usize,
) -> Result<f64, TrainError> {
    Ok(evaluate(
        model,
        params,
        data,
        oracle,
        &cfg.reward,
        Strategy::Learned,
        budget,
        cfg.seed,
    )?
    .mean_reward)
}

pub fn run_ablation_objective(config: &AblationConfig) -> Result<AblationTable, TrainError> {
    let mut per_seed = Vec::new();
    for &seed in &config.seeds {
        let task = SynthTaskConfig {
            seed,
            ..config.task.clone()
        };
        let (mut id_all, ood) = split_ood(
            &task,
            &config.shift,
            config.n_train + config.n_eval,
            config.n_eval,
        )?;
        let id_eval = id_all.split_off(config.n_train);
        let patch = config.train.encoder.patch_size;
        let train = Dataset::new(id_all, patch)?;
        let id_eval = Dataset::new(id_eval, patch)?;
        let ood = Dataset::new(ood, patch)?;
        let mut oracle = train.oracle();
        for d in [&id_eval, &ood] {
            for inst in d.instances() {
                if let Some(spec) = &inst.oracle {
                    oracle.register(inst.id.clone(), spec.clone());
                }
            }
        }

        let base_cfg = TrainConfig {
            seed,
            ..config.train.clone()
        };
        base_cfg.validate()?;
        let model = Model::from_config(&base_cfg)?;
        let init = model.init_params(seed);
        per_seed.push(SeedResult {
            seed,
            objective: "untrained".into(),
            id_reward: learned_reward(&model, &init, &id_eval, &oracle, &base_cfg, config.budget)?,
            ood_reward: learned_reward(&model, &init, &ood, &oracle, &base_cfg, config.budget)?,
        });
        for &objective in &config.objectives {
            let cfg = TrainConfig {
                objective,
                ..base_cfg.clone()
            };
            let mut trainer = Trainer::new(cfg.clone(), &oracle)?;
            trainer.train(&train, config.steps, |_| {})?;
            log::info!(
                "seed {seed}: trained {objective} for {} steps",
                config.steps
            );
            per_seed.push(SeedResult {
                seed,
                objective: objective.to_string(),
                id_reward: learned_reward(
                    &model,
                    trainer.params(),
                    &id_eval,
                    &oracle,
                    &cfg,
                    config.budget,
                )?,
                ood_reward: learned_reward(
                    &model,
                    trainer.params(),
                    &ood,
                    &oracle,
                    &cfg,
                    config.budget,
                )?,
            });
        }
    }

    let names: Vec<String> = std::iter::once("untrained".to_string())
        .chain(config.objectives.iter().map(|o| o.to_string()))
        .collect();
    let baseline: Vec<f64> = per_seed
        .iter()
        .filter(|r| r.objective == "untrained")
        .map(|r| r.ood_reward)
        .collect();
    let rows = names
        .into_iter()
        .map(|name| {
            let mine: Vec<&SeedResult> = per_seed.iter().filter(|r| r.objective == name).collect();
            let retention = mine
                .iter()
                .zip(&baseline)
                .map(|(r, b)| {
                    if *b > 0.0 {
                        100.0 * r.ood_reward / b
                    } else {
                        0.0
                    }
                })
                .collect();
            AblationRow {
                id_reward: Stat::of(mine.iter().map(|r| r.id_reward).collect()),
                ood_reward: Stat::of(mine.iter().map(|r| r.ood_reward).collect()),
                ood_retention_pct: Stat::of(retention),
                objective: name,
            }
        })
        .collect();
    Ok(AblationTable {
        seeds: config.seeds.clone(),
        rows,
        per_seed,
    })
}
