use std::path::{Path, PathBuf};

use clap::Args;
use hornn_core::engine::{evaluate, train_epoch, Sampling, Schedule, TrainConfig, TrainingSet};
use hornn_core::io::{load, load_model, save_checkpoint, save_model, TrainState};
use hornn_core::{Model, SequenceBatch};
use serde::{Deserialize, Serialize};

use crate::config::{chain, DataSource, ExperimentConfig, ScheduleKind};
use crate::error::{CliError, CliResult};
use crate::output::{ensure_dir, write_json};

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub unfold: Option<usize>,
    #[arg(long)]
    pub delay: Option<usize>,
    #[arg(long)]
    pub minibatch: Option<usize>,
    #[arg(long, value_parser = parse_sampling)]
    pub sampling: Option<Sampling>,
    #[arg(long)]
    pub init_scale: Option<f64>,
    #[arg(long, value_parser = parse_schedule)]
    pub schedule: Option<ScheduleKind>,
}

fn parse_sampling(s: &str) -> Result<Sampling, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("expected frame or utterance, got {s:?}"))
}

fn parse_schedule(s: &str) -> Result<ScheduleKind, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("expected newbob or constant, got {s:?}"))
}

/// One row of `train_log.csv`. Both metric pairs are measured after the
/// epoch's last update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: u64,
    pub lr: f64,
    pub train_ce: f64,
    pub train_facc: f64,
    pub valid_ce: f64,
    pub valid_facc: f64,
}

/// Loads a config, applies flag overrides and makes manifest paths
/// absolute. The learning rate defaults by activation unless given.
fn load_config(args: &TrainArgs) -> CliResult<ExperimentConfig> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", args.config.display())))?;
    let bad = |e: serde_json::Error| CliError::Config(format!("{}: {e}", args.config.display()));
    let value: serde_json::Value = serde_json::from_str(&text).map_err(bad)?;
    let lr_given = value.pointer("/train/learning_rate_init").is_some();
    let mut cfg: ExperimentConfig = serde_json::from_value(value).map_err(bad)?;
    if !lr_given {
        if let Some(top) = cfg.layers.last() {
            cfg.train.learning_rate_init = TrainConfig::default_learning_rate(top.config(1).activation);
        }
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.lr {
        cfg.train.learning_rate_init = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = Some(v);
    }
    if let Some(v) = args.unfold {
        cfg.train.unfold_steps = v;
    }
    if let Some(v) = args.delay {
        cfg.train.target_delay = v;
    }
    if let Some(v) = args.minibatch {
        cfg.train.minibatch_frames = v;
    }
    if let Some(v) = args.sampling {
        cfg.train.sampling = v;
    }
    if let Some(v) = args.init_scale {
        cfg.train.init_scale = v;
    }
    if let Some(v) = args.schedule {
        cfg.schedule = v;
    }
    let base = args.config.parent().unwrap_or_else(|| Path::new("."));
    let absolute = |src: &mut DataSource| {
        if let DataSource::Manifest { manifest } = src {
            *manifest = std::path::absolute(base.join(&*manifest)).unwrap_or_else(|_| base.join(&*manifest));
        }
    };
    absolute(&mut cfg.data.train);
    if let Some(v) = cfg.data.valid.as_mut() {
        absolute(v);
    }
    cfg.resolve()
}

struct Prepared {
    train: TrainingSet,
    valid: Option<TrainingSet>,
    input_dim: usize,
    classes: usize,
}

fn prepare(cfg: &ExperimentConfig) -> CliResult<Prepared> {
    let load = |src: &DataSource| -> CliResult<Vec<SequenceBatch>> {
        cfg.data.features.apply(src.load(Path::new("."))?)
    };
    let train_seqs = load(&cfg.data.train)?;
    let train = TrainingSet::new(&train_seqs, cfg.train.target_delay)?;
    let valid = cfg
        .data
        .valid
        .as_ref()
        .map(|v| TrainingSet::new(&load(v)?, cfg.train.target_delay).map_err(CliError::from))
        .transpose()?;
    if let Some(v) = &valid {
        if v.input_dim() != train.input_dim() || v.classes() != train.classes() {
            return Err(CliError::Config("validation data does not match the training data".into()));
        }
    }
    Ok(Prepared {
        input_dim: train.input_dim(),
        classes: train.classes(),
        train,
        valid,
    })
}

fn read_log(path: &Path, upto: u64) -> CliResult<Vec<LogRow>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for row in r.deserialize() {
        let row: LogRow = row?;
        if row.epoch <= upto {
            rows.push(row);
        }
    }
    Ok(rows)
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    epochs_run: u64,
    stopped_early: bool,
    last: Option<&'a LogRow>,
    model: PathBuf,
}

pub fn train(args: &TrainArgs) -> CliResult<()> {
    let cfg = load_config(args)?;
    let data = prepare(&cfg)?;
    let configs = chain(&cfg.layers, data.input_dim)?;

    let (mut model, state) = match &args.resume {
        Some(path) => {
            let (model, state) = load(path)?;
            let state = state.ok_or_else(|| {
                CliError::Config(format!("{} is a model file, not a checkpoint", path.display()))
            })?;
            if model.configs() != configs || model.classes() != data.classes {
                return Err(CliError::Config("checkpoint does not match the configured model".into()));
            }
            (model, state)
        }
        None => (
            Model::init(&configs, data.classes, cfg.seed(), cfg.train.init_scale)?,
            TrainState {
                epoch: 0,
                schedule: Schedule::new(cfg.train.learning_rate_init),
            },
        ),
    };
    cfg.train.validate_for(&model)?;

    ensure_dir(&args.out)?;
    write_json(&args.out.join("config.json"), &cfg)?;
    let log_path = args.out.join("train_log.csv");
    let mut log = if args.resume.is_some() {
        read_log(&log_path, state.epoch)?
    } else {
        Vec::new()
    };
    let mut schedule = state.schedule;
    let mut epoch = state.epoch;
    while epoch < cfg.epochs && !schedule.stopped {
        let lr = schedule.learning_rate;
        train_epoch(&mut model, &data.train, &cfg.train, &schedule, epoch)?;
        let tr = evaluate(&model, &data.train, &cfg.train)?;
        let va = match &data.valid {
            Some(v) => evaluate(&model, v, &cfg.train)?,
            None => tr,
        };
        epoch += 1;
        log.push(LogRow {
            epoch,
            lr,
            train_ce: tr.cross_entropy,
            train_facc: tr.accuracy,
            valid_ce: va.cross_entropy,
            valid_facc: va.accuracy,
        });
        match cfg.schedule {
            ScheduleKind::Newbob => {
                schedule.newbob_step(va.cross_entropy)?;
            }
            ScheduleKind::Constant => {
                schedule.rates.push(lr);
                schedule.losses.push(va.cross_entropy);
            }
        }
        crate::output::write_csv(&log_path, &log)?;
        save_checkpoint(
            &args.out.join("checkpoint.bin"),
            &model,
            &TrainState {
                epoch,
                schedule: schedule.clone(),
            },
        )?;
    }
    let model_path = args.out.join("model.bin");
    save_model(&model_path, &model)?;
    crate::output::write_csv(&log_path, &log)?;
    let summary = TrainSummary {
        epochs_run: epoch,
        stopped_early: schedule.stopped,
        last: log.last(),
        model: model_path,
    };
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Data manifest; defaults to the training data of `--config`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Experiment config supplying delay, window and feature settings,
    /// e.g. the `config.json` written by `train`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub delay: Option<usize>,
    #[arg(long)]
    pub unfold: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct EvalReport {
    frames: usize,
    cross_entropy: f64,
    accuracy: f64,
}

pub fn eval(args: &EvalArgs) -> CliResult<()> {
    let cfg = args.config.as_deref().map(ExperimentConfig::from_file).transpose()?;
    let mut train_cfg = cfg.as_ref().map(|c| c.train.clone()).unwrap_or_default();
    if let Some(v) = args.delay {
        train_cfg.target_delay = v;
    }
    if let Some(v) = args.unfold {
        train_cfg.unfold_steps = v;
    }
    train_cfg.validate()?;
    let base = args
        .config
        .as_deref()
        .and_then(Path::parent)
        .unwrap_or_else(|| Path::new("."))
        .to_path_buf();
    let seqs = match (&args.data, &cfg) {
        (Some(m), _) => hornn_core::data::read_manifest(m)?,
        (None, Some(c)) => c.data.train.load(&base)?,
        (None, None) => return Err(CliError::Config("give --data or --config".into())),
    };
    let seqs = match &cfg {
        Some(c) => c.data.features.apply(seqs)?,
        None => seqs,
    };
    let model = load_model(&args.model)?;
    let data = TrainingSet::new(&seqs, train_cfg.target_delay)?;
    let stats = evaluate(&model, &data, &train_cfg)?;
    let report = EvalReport {
        frames: stats.frames,
        cross_entropy: stats.cross_entropy,
        accuracy: stats.accuracy,
    };
    println!("{}", serde_json::to_string(&report)?);
    if let Some(dir) = &args.out {
        ensure_dir(dir)?;
        write_json(&dir.join("eval.json"), &report)?;
    }
    Ok(())
}
