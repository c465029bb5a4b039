use std::fs;
use std::path::{Path, PathBuf};

use hornn_core::{Activation, CellKind};
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn out_file(out: &Option<PathBuf>, name: &str) -> CliResult<Option<PathBuf>> {
    match out {
        Some(dir) => {
            ensure_dir(dir)?;
            Ok(Some(dir.join(name)))
        }
        None => Ok(None),
    }
}

/// A cell kind with an optional activation override, written `kind` or
/// `kind:activation` (e.g. `rnn:relu`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KindSpec {
    pub kind: CellKind,
    pub activation: Option<Activation>,
}

impl KindSpec {
    pub fn parse(s: &str) -> CliResult<Self> {
        let (k, a) = match s.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (s, None),
        };
        let kind = CellKind::parse(k).ok_or_else(|| {
            let known: Vec<&str> = CellKind::ALL.iter().map(|k| k.name()).collect();
            CliError::Config(format!("unknown cell kind {k:?}; expected one of {}", known.join(", ")))
        })?;
        let activation = a
            .map(|a| Activation::parse(a).ok_or_else(|| CliError::Config(format!("unknown activation {a:?}"))))
            .transpose()?;
        Ok(Self { kind, activation })
    }

    pub fn label(&self) -> String {
        match self.activation {
            Some(a) if a != self.kind.default_activation() => format!("{}:{}", self.kind, a.name()),
            _ => self.kind.name().to_string(),
        }
    }
}
