use std::path::PathBuf;

use clap::{Args, ValueEnum};
use hornn_core::data::{generate, write_dataset};
use hornn_core::{TaskKind, TaskSpec};

use crate::config::Features;
use crate::error::{CliError, CliResult};
use crate::output::{ensure_dir, write_json};

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TaskName {
    DelayedRecall,
    ParityWindow,
    MarkovFrames,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// Task spec as JSON; replaces the task flags below.
    #[arg(long, conflicts_with = "task")]
    pub spec: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub task: Option<TaskName>,
    #[arg(long, default_value_t = 20)]
    pub lag: usize,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 4)]
    pub window: usize,
    #[arg(long, default_value_t = 4)]
    pub states: usize,
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = 60)]
    pub length: usize,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub segments: usize,
    #[arg(long)]
    pub deltas: bool,
    #[arg(long)]
    pub normalize: bool,
    /// Directory for the FSQ1 files, `manifest.txt` and `task.json`.
    #[arg(long)]
    pub out: PathBuf,
}

fn task_spec(args: &GenDataArgs) -> CliResult<TaskSpec> {
    if let Some(path) = &args.spec {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        return serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())));
    }
    let kind = match args.task {
        None => return Err(CliError::Config("give --task or --spec".into())),
        Some(TaskName::DelayedRecall) => TaskKind::DelayedRecall {
            lag: args.lag,
            classes: args.classes,
        },
        Some(TaskName::ParityWindow) => TaskKind::ParityWindow { window: args.window },
        Some(TaskName::MarkovFrames) => TaskKind::MarkovFrames {
            states: args.states,
            dim: args.dim,
        },
    };
    Ok(TaskSpec {
        segments: args.segments,
        ..TaskSpec::new(kind, args.length, args.count, args.seed)
    })
}

pub fn gen_data(args: &GenDataArgs) -> CliResult<()> {
    let spec = task_spec(args)?;
    spec.validate()?;
    let features = Features {
        deltas: args.deltas,
        normalize: args.normalize,
    };
    let seqs = features.apply(generate(&spec)?)?;
    ensure_dir(&args.out)?;
    let manifest = write_dataset(&args.out, &seqs)?;
    write_json(&args.out.join("task.json"), &spec)?;
    println!("{}", manifest.display());
    Ok(())
}
