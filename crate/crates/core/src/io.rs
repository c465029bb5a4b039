//! Model and checkpoint files.
//!
//! Layout: magic `HLP1`, a little-endian `u32` manifest length, the JSON
//! manifest, then every tensor as little-endian `f64` in manifest order.
//! Checkpoints append a `u32` length and a JSON training state.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cells::CellConfig;
use crate::engine::{Model, Schedule};
use crate::error::{Error, Result};
use crate::math::Activation;

const MAGIC: &[u8; 4] = b"HLP1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub layers: Vec<CellConfig>,
    pub classes: usize,
    pub head_activation: Activation,
    pub tensors: Vec<TensorEntry>,
}

impl Manifest {
    pub fn of(model: &Model) -> Self {
        Self {
            layers: model.configs(),
            classes: model.classes(),
            head_activation: model.head.activation,
            tensors: model
                .tensors()
                .iter()
                .map(|t| TensorEntry {
                    name: t.qualified_name(),
                    rows: t.view.rows,
                    cols: t.view.cols,
                })
                .collect(),
        }
    }
}

/// Training progress stored alongside a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Epochs completed.
    pub epoch: u64,
    pub schedule: Schedule,
}

fn push_block(out: &mut Vec<u8>, json: &[u8]) -> Result<()> {
    let len = u32::try_from(json.len()).map_err(|_| Error::Format("JSON block too large".into()))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(json);
    Ok(())
}

fn json_err(e: serde_json::Error) -> Error {
    Error::Format(e.to_string())
}

pub fn encode_model(model: &Model, state: Option<&TrainState>) -> Result<Vec<u8>> {
    let manifest = serde_json::to_vec(&Manifest::of(model)).map_err(json_err)?;
    let mut out = Vec::with_capacity(8 + manifest.len() + 8 * model.parameter_count());
    out.extend_from_slice(MAGIC);
    push_block(&mut out, &manifest)?;
    for t in model.tensors() {
        for v in t.view.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(state) = state {
        push_block(&mut out, &serde_json::to_vec(state).map_err(json_err)?)?;
    }
    Ok(out)
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8]> {
    let end = pos
        .checked_add(n)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Format(format!("model file truncated at byte {pos}")))?;
    let s = &bytes[*pos..end];
    *pos = end;
    Ok(s)
}

fn take_block<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    let len = u32::from_le_bytes(take(bytes, pos, 4)?.try_into().expect("4 bytes")) as usize;
    take(bytes, pos, len)
}

pub fn decode_model(bytes: &[u8]) -> Result<(Model, Option<TrainState>)> {
    let mut pos = 0;
    if take(bytes, &mut pos, 4)? != MAGIC {
        return Err(Error::Format("missing HLP1 magic".into()));
    }
    let manifest: Manifest = serde_json::from_slice(take_block(bytes, &mut pos)?).map_err(json_err)?;
    let mut model = Model::zeros(&manifest.layers, manifest.classes)?;
    if model.head.activation != manifest.head_activation || Manifest::of(&model) != manifest {
        return Err(Error::Format("manifest does not match its layer configs".into()));
    }
    for t in model.tensors_mut() {
        for v in t.view.data.iter_mut() {
            *v = f64::from_le_bytes(take(bytes, &mut pos, 8)?.try_into().expect("8 bytes"));
        }
    }
    let state = if pos == bytes.len() {
        None
    } else {
        let s = serde_json::from_slice(take_block(bytes, &mut pos)?).map_err(json_err)?;
        if pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - pos)));
        }
        Some(s)
    };
    Ok((model, state))
}

pub fn save_model(path: &Path, model: &Model) -> Result<()> {
    fs::write(path, encode_model(model, None)?)?;
    Ok(())
}

pub fn save_checkpoint(path: &Path, model: &Model, state: &TrainState) -> Result<()> {
    fs::write(path, encode_model(model, Some(state))?)?;
    Ok(())
}

/// Loads a model file or checkpoint, returning the training state if any.
pub fn load(path: &Path) -> Result<(Model, Option<TrainState>)> {
    decode_model(&fs::read(path)?)
}

pub fn load_model(path: &Path) -> Result<Model> {
    Ok(load(path)?.0)
}
