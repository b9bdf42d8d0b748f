//! `saf`: train, evaluate and ablate learned frame selection.
//!
//! Exit status is 0 on success, 1 for invalid flags or configuration and 2
//! for failures while running. Successful runs end with a `RESULT {json}`
//! line on stdout.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use saf_core::trainer::{Objective, Strategy};

#[derive(Parser, Debug)]
#[command(
    name = "saf",
    version,
    about = "Learned frame selection for video question answering"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dotted override such as `train.adam.lr=0.001`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// `oracle` or `remote:URL`.
    #[arg(long, global = true)]
    answerer: Option<String>,
    #[arg(long, global = true)]
    objective: Option<Objective>,
    /// Frames kept at evaluation.
    #[arg(long, global = true)]
    budget: Option<usize>,
    /// Synthetic video length T.
    #[arg(long, global = true)]
    frames: Option<usize>,
    /// Candidates per group.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Instance count (gen-data, train) or seed count (check-grads).
    #[arg(long, global = true)]
    n: Option<u64>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    strategy: Option<Strategy>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Train encoder and policy; writes metrics.jsonl and checkpoint.json.
    Train,
    /// Score one selection strategy at the evaluation budget.
    Eval,
    /// Train each objective over several seeds and compare ID/OOD reward.
    AblateObjective,
    /// Compare random, uniform and learned selection at one budget.
    AblateSelection,
    /// Write a synthetic dataset as a JSONL manifest.
    GenData,
    /// Select frames and query the answerer for every evaluation instance.
    Infer,
    /// Finite-difference check of every training loss.
    CheckGrads,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Eval => "eval",
            Self::AblateObjective => "ablate-objective",
            Self::AblateSelection => "ablate-selection",
            Self::GenData => "gen-data",
            Self::Infer => "infer",
            Self::CheckGrads => "check-grads",
        }
    }
}

pub enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl Cli {
    fn overrides(&self) -> Result<Vec<(String, toml::Value)>, Failure> {
        let mut out = Vec::new();
        for raw in &self.overrides {
            let (k, v) = raw
                .split_once('=')
                .ok_or_else(|| Failure::Usage(format!("override `{raw}` is not KEY=VALUE")))?;
            out.push((k.trim().to_string(), config::parse_value(v.trim())));
        }
        let mut flag = |key: &str, v: toml::Value| out.push((key.to_string(), v));
        let int = |v: u64| toml::Value::Integer(v as i64);
        let text = |v: &str| toml::Value::String(v.to_string());
        if let Some(v) = self.seed {
            flag("seed", int(v));
        }
        if let Some(v) = &self.out {
            flag("out", text(&v.to_string_lossy()));
        }
        if let Some(v) = &self.answerer {
            flag("answerer", text(v));
        }
        if let Some(v) = self.objective {
            flag("train.objective", text(v.as_str()));
        }
        if let Some(v) = self.budget {
            flag("eval.budget", int(v as u64));
            flag("ablation.budget", int(v as u64));
        }
        if let Some(v) = self.frames {
            flag("data.task.frames", int(v as u64));
        }
        if let Some(v) = self.k {
            flag("train.group_size", int(v as u64));
        }
        if let Some(v) = self.n {
            let key = if self.command == Command::CheckGrads {
                "grad_check.seeds"
            } else {
                "data.n_train"
            };
            flag(key, int(v));
        }
        if let Some(v) = &self.checkpoint {
            flag("checkpoint", text(&v.to_string_lossy()));
        }
        if let Some(v) = self.strategy {
            flag("eval.strategy", text(v.as_str()));
        }
        Ok(out)
    }
}

fn run(cli: &Cli) -> Result<serde_json::Value, Failure> {
    let overrides = cli.overrides()?;
    let cfg = config::load(cli.config.as_deref(), &overrides).map_err(Failure::Usage)?;
    log::debug!("config: {cfg:?}");
    match cli.command {
        Command::Train => commands::train(&cfg),
        Command::Eval => commands::eval(&cfg),
        Command::AblateObjective => commands::ablate_objective(&cfg),
        Command::AblateSelection => commands::ablate_selection(&cfg),
        Command::GenData => commands::gen_data(&cfg),
        Command::Infer => commands::infer(&cfg),
        Command::CheckGrads => commands::check_grads(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SAF_LOG", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(mut result) => {
            if let Some(obj) = result.as_object_mut() {
                obj.insert("command".into(), cli.command.name().into());
            }
            println!("RESULT {result}");
            ExitCode::SUCCESS
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
