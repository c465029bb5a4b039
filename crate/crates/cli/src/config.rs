//! Experiment configuration files.
//!
//! ```json
//! {
//!   "layers": [{ "kind": "hornn-sigmoid", "d_h": 32 }],
//!   "data": {
//!     "train": { "task": "delayed-recall", "lag": 2, "classes": 4, "length": 30, "count": 200, "seed": 1 },
//!     "valid": { "manifest": "valid/manifest.txt" }
//!   },
//!   "train": { "target_delay": 0, "sampling": "utterance", "unfold_steps": 30 },
//!   "epochs": 30,
//!   "seed": 3
//! }
//! ```
//!
//! A layer's input size is never written: the first layer takes the frame
//! dimension and each later layer the previous layer's output size.

use std::path::{Path, PathBuf};

use hornn_core::data::{delta_expand, generate, normalize, read_manifest};
use hornn_core::engine::TrainConfig;
use hornn_core::{Activation, CellConfig, CellKind, SequenceBatch, TaskSpec};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub kind: CellKind,
    pub d_h: usize,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub d_p: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation: Option<Activation>,
}

fn is_zero(v: &usize) -> bool {
    *v == 0
}

impl LayerSpec {
    pub fn config(&self, d_x: usize) -> CellConfig {
        let mut c = CellConfig::new(self.kind, d_x, self.d_h);
        c.d_p = self.d_p;
        c.n = self.n.unwrap_or(c.n);
        c.m = self.m.unwrap_or(c.m);
        c.activation = self.activation.unwrap_or(c.activation);
        c
    }
}

/// Chains layer specs into full configs starting from frame dimension `d_x`.
pub fn chain(layers: &[LayerSpec], d_x: usize) -> CliResult<Vec<CellConfig>> {
    let mut configs = Vec::with_capacity(layers.len());
    let mut input = d_x;
    for l in layers {
        let c = l.config(input);
        input = c.output_dim();
        configs.push(c);
    }
    hornn_core::engine::validate_chain(&configs)?;
    Ok(configs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DataSource {
    Manifest { manifest: PathBuf },
    Task(TaskSpec),
}

impl DataSource {
    /// Relative manifest paths resolve against `base`.
    pub fn load(&self, base: &Path) -> CliResult<Vec<SequenceBatch>> {
        match self {
            DataSource::Manifest { manifest } => Ok(read_manifest(&base.join(manifest))?),
            DataSource::Task(spec) => Ok(generate(spec)?),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Features {
    /// Append ±2-frame regression deltas.
    pub deltas: bool,
    /// Utterance mean removal and segment variance scaling, after deltas.
    pub normalize: bool,
}

impl Features {
    pub fn apply(&self, seqs: Vec<SequenceBatch>) -> CliResult<Vec<SequenceBatch>> {
        let seqs = if self.deltas {
            seqs.into_iter()
                .map(|s| {
                    Ok(SequenceBatch {
                        frames: delta_expand(&s.frames)?,
                        ..s
                    })
                })
                .collect::<CliResult<Vec<_>>>()?
        } else {
            seqs
        };
        Ok(if self.normalize { normalize(&seqs)? } else { seqs })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train: DataSource,
    /// Falls back to the training data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid: Option<DataSource>,
    #[serde(default)]
    pub features: Features,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    /// Halve on small validation gains, stop when gains vanish.
    #[default]
    Newbob,
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub layers: Vec<LayerSpec>,
    pub data: DataConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_epochs")]
    pub epochs: u64,
    #[serde(default)]
    pub schedule: ScheduleKind,
    /// Seeds both initialisation and shuffling; overrides `train.seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_epochs() -> u64 {
    20
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(self.train.seed)
    }

    /// Settles the seed into `train` and checks everything that does not
    /// depend on the data.
    pub fn resolve(mut self) -> CliResult<Self> {
        self.train.seed = self.seed();
        self.seed = Some(self.train.seed);
        if self.layers.is_empty() {
            return Err(CliError::Config("config needs at least one layer".into()));
        }
        if self.epochs == 0 {
            return Err(CliError::Config("epochs must be positive".into()));
        }
        self.train.validate()?;
        let lag = self.layers.iter().map(|l| l.config(1).max_lag()).max().unwrap_or(1);
        if self.train.unfold_steps < lag {
            return Err(CliError::Config(format!(
                "unfold window of {} steps is shorter than the model's lag {lag}",
                self.train.unfold_steps
            )));
        }
        if let DataSource::Task(spec) = &self.data.train {
            spec.validate()?;
            let d_x = if self.data.features.deltas { 2 * spec.frame_dim() } else { spec.frame_dim() };
            chain(&self.layers, d_x)?;
        }
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"{
        "layers": [{ "kind": "hornn-sigmoid", "d_h": 8 }, { "kind": "lstmp", "d_h": 6, "d_p": 3 }],
        "data": { "train": { "task": "delayed-recall", "lag": 2, "classes": 4, "length": 30, "count": 5, "seed": 1 },
                  "valid": { "manifest": "v/manifest.txt" } },
        "train": { "target_delay": 0 },
        "seed": 3
    }"#;

    #[test]
    fn example_parses_with_defaults() {
        let c: ExperimentConfig = serde_json::from_str(EXAMPLE).unwrap();
        let c = c.resolve().unwrap();
        assert_eq!(c.train.seed, 3);
        assert_eq!(c.train.unfold_steps, 20);
        assert_eq!(c.epochs, 20);
        assert_eq!(c.schedule, ScheduleKind::Newbob);
        assert!(matches!(c.data.valid, Some(DataSource::Manifest { .. })));
        let cfgs = chain(&c.layers, 4).unwrap();
        assert_eq!((cfgs[1].d_x, cfgs[1].d_p), (8, 3));
        assert_eq!((cfgs[0].n, cfgs[0].m), (2, 1));
    }

    #[test]
    fn short_unfold_window_is_rejected() {
        let mut c: ExperimentConfig = serde_json::from_str(EXAMPLE).unwrap();
        c.layers[0].n = Some(6);
        c.train.unfold_steps = 5;
        assert!(matches!(c.resolve(), Err(CliError::Config(_))));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let bad = EXAMPLE.replace("\"seed\": 3", "\"seeed\": 3");
        assert!(serde_json::from_str::<ExperimentConfig>(&bad).is_err());
    }

    #[test]
    fn round_trips_through_json() {
        let c: ExperimentConfig = serde_json::from_str(EXAMPLE).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
