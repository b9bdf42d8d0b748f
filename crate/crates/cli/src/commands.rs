use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{anyhow, Context};
use serde_json::{json, Value};

use saf_core::answerer::{Answerer, OracleAnswerer, RemoteAnswerer};
use saf_core::numerics::ParamStore;
use saf_core::policy::select_top_k;
use saf_core::synthdata::{
    generate_synth, load_manifest, split_ood, write_manifest, OodShift, QAInstance,
};
use saf_core::trainer::{
    answer_request, check_objectives, compare_strategies, evaluate, load_checkpoint, reward_of,
    run_ablation_objective, save_checkpoint, Dataset, Model, TrainConfig, Trainer,
    GRAD_CHECK_TOLERANCE,
};

use crate::config::{Phase, RunConfig};
use crate::Failure;

type Outcome = Result<Value, Failure>;

fn usage(message: impl Into<String>) -> Failure {
    Failure::Usage(message.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

struct Data {
    train: Dataset,
    eval: Dataset,
}

fn dataset(instances: Vec<QAInstance>, cfg: &RunConfig) -> Result<Dataset, Failure> {
    Dataset::new(instances, cfg.train.encoder.patch_size).map_err(runtime)
}

fn manifest(path: &Path, cfg: &RunConfig) -> Result<Dataset, Failure> {
    let instances = load_manifest(path)
        .with_context(|| format!("loading {}", path.display()))
        .map_err(runtime)?;
    dataset(instances, cfg)
}

fn load_data(cfg: &RunConfig) -> Result<Data, Failure> {
    cfg.data.task.validate().map_err(|e| usage(e.to_string()))?;
    let d = &cfg.data;
    let (train, eval) = match (&d.manifest, &d.eval_manifest) {
        (Some(m), e) => (manifest(m, cfg)?, manifest(e.as_deref().unwrap_or(m), cfg)?),
        (None, Some(e)) => {
            let train = generate_synth(&d.task, d.n_train).map_err(runtime)?;
            (dataset(train, cfg)?, manifest(e, cfg)?)
        }
        (None, None) => {
            let (mut all, _) = split_ood(&d.task, &OodShift::default(), d.n_train + d.n_eval, 0)
                .map_err(runtime)?;
            let eval = all.split_off(d.n_train);
            (dataset(all, cfg)?, dataset(eval, cfg)?)
        }
    };
    Ok(Data { train, eval })
}

fn build_answerer(cfg: &RunConfig, sets: &[&Dataset]) -> Result<Box<dyn Answerer>, Failure> {
    if cfg.answerer == "oracle" {
        let mut oracle = OracleAnswerer::new();
        for d in sets {
            for inst in d.instances() {
                let spec = inst.oracle.clone().ok_or_else(|| {
                    usage(format!(
                        "instance `{}` has no oracle metadata; use --answerer remote:URL",
                        inst.id
                    ))
                })?;
                oracle.register(inst.id.clone(), spec);
            }
        }
        Ok(Box::new(oracle))
    } else if let Some(url) = cfg.answerer.strip_prefix("remote:") {
        if url.is_empty() {
            return Err(usage(
                "remote answerer needs a URL: remote:http://host:port",
            ));
        }
        Ok(Box::new(RemoteAnswerer::new(url, cfg.remote.clone())))
    } else {
        Err(usage(format!(
            "unknown answerer `{}` (expected oracle or remote:URL)",
            cfg.answerer
        )))
    }
}

fn validate_train(cfg: &TrainConfig) -> Result<(), Failure> {
    cfg.validate().map_err(|e| usage(e.to_string()))
}

fn out_dir(cfg: &RunConfig) -> Result<&Path, Failure> {
    fs::create_dir_all(&cfg.out)
        .with_context(|| format!("creating {}", cfg.out.display()))
        .map_err(runtime)?;
    Ok(&cfg.out)
}

/// Model and parameters from `cfg.checkpoint`, or a freshly initialized
/// model when none is given.
fn load_model(cfg: &RunConfig) -> Result<(Model, ParamStore<f64>), Failure> {
    match &cfg.checkpoint {
        Some(p) => {
            let ckpt = load_checkpoint(p).map_err(runtime)?;
            let model = Model::from_config(&ckpt.config).map_err(runtime)?;
            Ok((model, ckpt.params))
        }
        None => {
            log::warn!("no checkpoint given; using untrained parameters");
            validate_train(&cfg.train)?;
            let model = Model::from_config(&cfg.train).map_err(runtime)?;
            let params = model.init_params(cfg.train.seed);
            Ok((model, params))
        }
    }
}

pub fn gen_data(cfg: &RunConfig) -> Outcome {
    cfg.data.task.validate().map_err(|e| usage(e.to_string()))?;
    let instances = generate_synth(&cfg.data.task, cfg.data.n_train).map_err(runtime)?;
    let path = write_manifest(out_dir(cfg)?, &instances).map_err(runtime)?;
    Ok(json!({ "manifest": path, "instances": instances.len() }))
}

/// Runs the curriculum, writing metrics JSONL and the final checkpoint.
fn run_training<'a>(
    cfg: &RunConfig,
    data: &Data,
    answerer: &'a dyn Answerer,
) -> Result<(Trainer<'a>, Value), Failure> {
    let mut trainer = match &cfg.checkpoint {
        Some(p) => {
            let ckpt = load_checkpoint(p).map_err(runtime)?;
            log::info!("resuming from {} at step {}", p.display(), ckpt.step);
            Trainer::from_checkpoint(ckpt, answerer).map_err(runtime)?
        }
        None => Trainer::new(cfg.train.clone(), answerer).map_err(runtime)?,
    };
    let phases = if cfg.phases.is_empty() {
        vec![Phase {
            steps: cfg.train.max_steps,
            reward_mode: cfg.train.reward.mode,
            manifest: None,
        }]
    } else {
        cfg.phases.clone()
    };

    let out = out_dir(cfg)?;
    let metrics_path = out.join("metrics.jsonl");
    let file = File::create(&metrics_path)
        .with_context(|| format!("creating {}", metrics_path.display()))
        .map_err(runtime)?;
    let mut metrics = BufWriter::new(file);
    let mut last = None;
    for (i, phase) in phases.iter().enumerate() {
        let phase_data = match &phase.manifest {
            Some(p) => Some(manifest(p, cfg)?),
            None => None,
        };
        let train = phase_data.as_ref().unwrap_or(&data.train);
        let reward = saf_core::rewards::RewardConfig {
            mode: phase.reward_mode,
            ..trainer.config().reward.clone()
        };
        trainer
            .set_reward(reward)
            .map_err(|e| usage(e.to_string()))?;
        log::info!(
            "phase {i}: {} steps, {:?} reward",
            phase.steps,
            phase.reward_mode
        );
        let mut write_err = None;
        let steps = trainer
            .train(train, phase.steps, |m| {
                if m.step % 100 == 0 {
                    log::info!(
                        "step {} loss {:.4} reward {:.4}",
                        m.step,
                        m.loss,
                        m.mean_reward
                    );
                }
                let line = serde_json::to_string(m).expect("metrics serialize");
                if let Err(e) = writeln!(metrics, "{line}") {
                    write_err.get_or_insert(e);
                }
            })
            .map_err(runtime)?;
        if let Some(e) = write_err {
            return Err(runtime(
                anyhow!(e).context(format!("writing {}", metrics_path.display())),
            ));
        }
        last = steps.last().cloned().or(last);
    }
    metrics.flush().map_err(runtime)?;

    let ckpt_path = out.join("checkpoint.json");
    save_checkpoint(&trainer.checkpoint(), &ckpt_path).map_err(runtime)?;
    let summary = json!({
        "steps": trainer.steps_done(),
        "last": last,
        "checkpoint": ckpt_path,
        "metrics": metrics_path,
    });
    Ok((trainer, summary))
}

pub fn train(cfg: &RunConfig) -> Outcome {
    validate_train(&cfg.train)?;
    let data = load_data(cfg)?;
    let answerer = build_answerer(cfg, &[&data.train, &data.eval])?;
    let (trainer, mut summary) = run_training(cfg, &data, answerer.as_ref())?;
    let report = trainer
        .evaluate(&data.eval, cfg.eval.strategy, cfg.eval.budget, cfg.seed)
        .map_err(runtime)?;
    summary["eval"] = serde_json::to_value(report).expect("report serializes");
    Ok(summary)
}

pub fn eval(cfg: &RunConfig) -> Outcome {
    let data = load_data(cfg)?;
    let answerer = build_answerer(cfg, &[&data.eval])?;
    let (model, params) = load_model(cfg)?;
    let report = evaluate(
        &model,
        &params,
        &data.eval,
        answerer.as_ref(),
        &cfg.train.reward,
        cfg.eval.strategy,
        cfg.eval.budget,
        cfg.seed,
    )
    .map_err(budget_or_runtime)?;
    Ok(serde_json::to_value(report).expect("report serializes"))
}

fn budget_or_runtime(e: saf_core::trainer::TrainError) -> Failure {
    match e {
        saf_core::trainer::TrainError::Budget { .. } => usage(e.to_string()),
        other => runtime(other),
    }
}

/// Random, uniform and learned selection at one budget. Trains first when no
/// checkpoint is given.
pub fn ablate_selection(cfg: &RunConfig) -> Outcome {
    validate_train(&cfg.train)?;
    let data = load_data(cfg)?;
    let answerer = build_answerer(cfg, &[&data.train, &data.eval])?;
    let (model, params, trained) = match &cfg.checkpoint {
        Some(_) => {
            let (m, p) = load_model(cfg)?;
            (m, p, Value::Null)
        }
        None => {
            let (t, summary) = run_training(cfg, &data, answerer.as_ref())?;
            (t.model().clone(), t.params().clone(), summary)
        }
    };
    let rows = compare_strategies(
        &model,
        &params,
        &data.eval,
        answerer.as_ref(),
        &cfg.train.reward,
        cfg.eval.budget,
        cfg.seed,
    )
    .map_err(budget_or_runtime)?;
    println!(
        "{:<8} {:>7} {:>12} {:>9} {:>8} {:>8}",
        "strategy", "frames", "reduction %", "reward", "acc", "recall"
    );
    for r in &rows {
        let recall = r
            .evidence_recall
            .map_or("-".to_string(), |v| format!("{v:.3}"));
        println!(
            "{:<8} {:>7.1} {:>12.1} {:>9.4} {:>8.3} {:>8}",
            r.strategy.as_str(),
            r.mean_frames,
            r.reduction_pct,
            r.mean_reward,
            r.accuracy,
            recall
        );
    }
    Ok(json!({ "rows": rows, "training": trained }))
}

pub fn ablate_objective(cfg: &RunConfig) -> Outcome {
    validate_train(&cfg.ablation.train)?;
    cfg.ablation
        .task
        .validate()
        .map_err(|e| usage(e.to_string()))?;
    if cfg.ablation.seeds.is_empty() || cfg.ablation.objectives.is_empty() {
        return Err(usage("ablation needs at least one seed and one objective"));
    }
    let table = run_ablation_objective(&cfg.ablation).map_err(budget_or_runtime)?;
    print!("{}", table.render());
    let path = out_dir(cfg)?.join("ablation.json");
    let value = serde_json::to_value(&table).expect("table serializes");
    fs::write(&path, serde_json::to_string_pretty(&value).expect("json"))
        .with_context(|| format!("writing {}", path.display()))
        .map_err(runtime)?;
    Ok(json!({ "table": value, "path": path }))
}

/// Selects frames for every evaluation instance and records the answer.
pub fn infer(cfg: &RunConfig) -> Outcome {
    let data = load_data(cfg)?;
    let answerer = build_answerer(cfg, &[&data.eval])?;
    let (model, params) = load_model(cfg)?;
    let path = out_dir(cfg)?.join("predictions.jsonl");
    let mut out = BufWriter::new(
        File::create(&path)
            .with_context(|| format!("creating {}", path.display()))
            .map_err(runtime)?,
    );
    let mut total = 0.0;
    for i in 0..data.eval.len() {
        let inst = data.eval.instance(i);
        let grid = data.eval.grid(i);
        let probs = model.probs(&params, grid).map_err(runtime)?;
        let mask = select_top_k(&probs, cfg.eval.budget.min(grid.frames)).map_err(runtime)?;
        let req = answer_request(inst, grid, &mask, cfg.train.attach_frames);
        let answer = answerer.answer(&req);
        let reward = reward_of(inst, &answer, &cfg.train.reward);
        total += reward;
        let line = json!({
            "id": inst.id,
            "frames": req.frame_indices,
            "answer": answer.as_ref().ok(),
            "error": answer.as_ref().err().map(|e| e.to_string()),
            "reward": reward,
        });
        writeln!(out, "{line}").map_err(runtime)?;
    }
    out.flush().map_err(runtime)?;
    let n = data.eval.len();
    Ok(json!({
        "instances": n,
        "mean_reward": if n > 0 { total / n as f64 } else { 0.0 },
        "predictions": path,
    }))
}

pub fn check_grads(cfg: &RunConfig) -> Outcome {
    let mut worst = 0.0f64;
    let mut rows = Vec::new();
    for seed in cfg.seed..cfg.seed + cfg.grad_check.seeds {
        for r in check_objectives(seed).map_err(runtime)? {
            println!(
                "seed {:>3} {:<4} T={} D={:<2} max rel err {:.3e} ({})",
                r.seed,
                r.objective.as_str(),
                r.frames,
                r.dim,
                r.max_rel_error,
                r.worst_param
            );
            worst = worst.max(r.max_rel_error);
            rows.push(r);
        }
    }
    println!("max relative error {worst:.3e} (tolerance {GRAD_CHECK_TOLERANCE:e})");
    if worst > GRAD_CHECK_TOLERANCE {
        return Err(runtime(anyhow!(
            "gradient check failed: max relative error {worst:.3e} exceeds {GRAD_CHECK_TOLERANCE:e}"
        )));
    }
    Ok(json!({ "max_rel_error": worst, "checks": rows.len() }))
}
