//! Synthetic sequence tasks, the feature pipeline and the FSQ1 file format.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{derive_seed, Matrix, SeededRng};

/// One utterance: `T` frames with one label each.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBatch {
    pub frames: Matrix,
    /// Negative labels mark frames that carry no target.
    pub labels: Vec<i32>,
    pub classes: u32,
    pub utterance_id: String,
    pub segment_id: String,
}

impl SequenceBatch {
    pub fn new(
        frames: Matrix,
        labels: Vec<i32>,
        classes: u32,
        utterance_id: impl Into<String>,
        segment_id: impl Into<String>,
    ) -> Result<Self> {
        if labels.len() != frames.rows() {
            return Err(Error::shape("sequence labels", frames.rows(), labels.len()));
        }
        if classes < 2 {
            return Err(Error::config(format!("need at least 2 classes, got {classes}")));
        }
        if let Some(y) = labels.iter().find(|&&y| y >= classes as i32) {
            return Err(Error::config(format!("label {y} out of range for {classes} classes")));
        }
        Ok(Self {
            frames,
            labels,
            classes,
            utterance_id: utterance_id.into(),
            segment_id: segment_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "kebab-case")]
pub enum TaskKind {
    /// Label at `t` is the symbol shown `lag` frames earlier (0 before that).
    DelayedRecall { lag: usize, classes: usize },
    /// Label is the parity of the last `window` bits.
    ParityWindow { window: usize },
    /// Label is the hidden state of a sticky Markov chain with Gaussian
    /// emissions.
    MarkovFrames { states: usize, dim: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    #[serde(flatten)]
    pub kind: TaskKind,
    pub length: usize,
    pub count: usize,
    pub seed: u64,
    /// Utterances are assigned round-robin to this many segments.
    #[serde(default = "one")]
    pub segments: usize,
}

fn one() -> usize {
    1
}

/// Noise level of the recall encoding.
const RECALL_NOISE: f64 = 0.1;
const MARKOV_STAY: f64 = 0.9;
const MARKOV_NOISE: f64 = 0.5;

impl TaskSpec {
    pub fn new(kind: TaskKind, length: usize, count: usize, seed: u64) -> Self {
        Self {
            kind,
            length,
            count,
            seed,
            segments: 1,
        }
    }

    pub fn classes(&self) -> usize {
        match self.kind {
            TaskKind::DelayedRecall { classes, .. } => classes,
            TaskKind::ParityWindow { .. } => 2,
            TaskKind::MarkovFrames { states, .. } => states,
        }
    }

    pub fn frame_dim(&self) -> usize {
        match self.kind {
            TaskKind::DelayedRecall { classes, .. } => classes,
            TaskKind::ParityWindow { .. } => 1,
            TaskKind::MarkovFrames { dim, .. } => dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.length == 0 || self.count == 0 || self.segments == 0 {
            return Err(Error::config("length, count and segments must be positive"));
        }
        match self.kind {
            TaskKind::DelayedRecall { lag, classes } => {
                if lag >= self.length {
                    return Err(Error::config(format!(
                        "recall lag {lag} must be below sequence length {}",
                        self.length
                    )));
                }
                if classes < 2 {
                    return Err(Error::config("recall needs at least 2 classes"));
                }
            }
            TaskKind::ParityWindow { window } => {
                if window == 0 || window >= self.length {
                    return Err(Error::config(format!(
                        "parity window {window} must be in 1..{}",
                        self.length
                    )));
                }
            }
            TaskKind::MarkovFrames { states, dim } => {
                if states < 2 || dim == 0 {
                    return Err(Error::config("markov task needs >= 2 states and dim >= 1"));
                }
            }
        }
        Ok(())
    }
}

/// Values pass through `f32` so files round-trip bit-exactly.
fn q(x: f64) -> f64 {
    x as f32 as f64
}

/// Deterministic dataset for `task`; utterance `i` draws from its own stream.
pub fn generate(task: &TaskSpec) -> Result<Vec<SequenceBatch>> {
    task.validate()?;
    let t_len = task.length;
    let d = task.frame_dim();
    let c = task.classes();
    // Markov emission means are shared by all utterances.
    let means: Vec<Vec<f64>> = match task.kind {
        TaskKind::MarkovFrames { states, dim } => {
            let mut rng = SeededRng::new(derive_seed(task.seed, u64::MAX));
            (0..states).map(|_| (0..dim).map(|_| rng.normal()).collect()).collect()
        }
        _ => Vec::new(),
    };
    (0..task.count)
        .map(|i| {
            let mut rng = SeededRng::new(derive_seed(task.seed, i as u64));
            let mut frames = Matrix::zeros(t_len, d);
            let mut labels = vec![0i32; t_len];
            match task.kind {
                TaskKind::DelayedRecall { lag, classes } => {
                    let symbols: Vec<usize> = (0..t_len).map(|_| rng.below(classes)).collect();
                    for t in 0..t_len {
                        for k in 0..classes {
                            let hot = if k == symbols[t] { 1.0 } else { 0.0 };
                            frames.set(t, k, q(hot + RECALL_NOISE * rng.normal()));
                        }
                        labels[t] = if t >= lag { symbols[t - lag] as i32 } else { 0 };
                    }
                }
                TaskKind::ParityWindow { window } => {
                    let bits: Vec<u8> = (0..t_len).map(|_| rng.below(2) as u8).collect();
                    for t in 0..t_len {
                        frames.set(t, 0, f64::from(bits[t]));
                        let lo = (t + 1).saturating_sub(window);
                        let ones: u32 = bits[lo..=t].iter().map(|&b| u32::from(b)).sum();
                        labels[t] = (ones % 2) as i32;
                    }
                }
                TaskKind::MarkovFrames { states, dim } => {
                    let mut s = rng.below(states);
                    for t in 0..t_len {
                        if t > 0 && rng.unit() >= MARKOV_STAY {
                            s = (s + 1 + rng.below(states - 1)) % states;
                        }
                        for k in 0..dim {
                            frames.set(t, k, q(means[s][k] + MARKOV_NOISE * rng.normal()));
                        }
                        labels[t] = s as i32;
                    }
                }
            }
            SequenceBatch::new(
                frames,
                labels,
                c as u32,
                format!("utt{i:05}"),
                format!("seg{:03}", i % task.segments),
            )
        })
        .collect()
}

/// Appends regression deltas over a ±2 frame window, replicating edge
/// frames: `T x D` becomes `T x 2D`.
pub fn delta_expand(frames: &Matrix) -> Result<Matrix> {
    let (t_len, d) = frames.shape();
    if t_len == 0 {
        return Err(Error::config("delta_expand needs at least one frame"));
    }
    let at = |t: isize| frames.row(t.clamp(0, t_len as isize - 1) as usize);
    let denom = 2.0 * (1.0 + 4.0);
    let mut out = Matrix::zeros(t_len, 2 * d);
    for t in 0..t_len {
        let ti = t as isize;
        let row = out.row_mut(t);
        row[..d].copy_from_slice(frames.row(t));
        for k in 0..d {
            let mut acc = 0.0;
            for theta in 1..=2isize {
                acc += theta as f64 * (at(ti + theta)[k] - at(ti - theta)[k]);
            }
            row[d + k] = acc / denom;
        }
    }
    Ok(out)
}

/// Removes each utterance's per-dimension mean, then scales each segment
/// (grouped by `segment_id`) to unit pooled variance per dimension.
/// Dimensions with zero variance keep scale 1.
pub fn normalize(batches: &[SequenceBatch]) -> Result<Vec<SequenceBatch>> {
    let Some(first) = batches.first() else {
        return Ok(Vec::new());
    };
    let d = first.dim();
    if let Some(b) = batches.iter().find(|b| b.dim() != d) {
        return Err(Error::shape("normalize", d, format!("{}: {}", b.utterance_id, b.dim())));
    }
    let mut out: Vec<SequenceBatch> = batches.to_vec();
    for b in &mut out {
        let t_len = b.len();
        if t_len == 0 {
            continue;
        }
        for k in 0..d {
            let first = b.frames.get(0, k);
            if (0..t_len).all(|t| b.frames.get(t, k) == first) {
                (0..t_len).for_each(|t| b.frames.set(t, k, 0.0));
                continue;
            }
            let mean = (0..t_len).map(|t| b.frames.get(t, k)).sum::<f64>() / t_len as f64;
            (0..t_len).for_each(|t| b.frames.set(t, k, b.frames.get(t, k) - mean));
        }
    }
    let mut segments: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, b) in batches.iter().enumerate() {
        segments.entry(b.segment_id.as_str()).or_default().push(i);
    }
    for members in segments.values() {
        let n: usize = members.iter().map(|&i| out[i].len()).sum();
        if n == 0 {
            continue;
        }
        for k in 0..d {
            let ss: f64 = members
                .iter()
                .flat_map(|&i| (0..out[i].len()).map(move |t| (i, t)))
                .map(|(i, t)| out[i].frames.get(t, k).powi(2))
                .sum();
            let var = ss / n as f64;
            if var < 1e-24 {
                continue;
            }
            let sd = var.sqrt();
            for &i in members {
                for t in 0..out[i].len() {
                    let v = out[i].frames.get(t, k) / sd;
                    out[i].frames.set(t, k, v);
                }
            }
        }
    }
    Ok(out)
}

/// Pairs label `y_t` with frame `x_{t+delay}`; the last frame is repeated
/// for the final `delay` labels.
pub fn apply_delay(batch: &SequenceBatch, delay: usize) -> Result<SequenceBatch> {
    let t_len = batch.len();
    if delay >= t_len.max(1) {
        return Err(Error::config(format!(
            "delay {delay} must be below sequence length {t_len}"
        )));
    }
    let mut frames = Matrix::zeros(t_len, batch.dim());
    for t in 0..t_len {
        frames.row_mut(t).copy_from_slice(batch.frames.row((t + delay).min(t_len - 1)));
    }
    Ok(SequenceBatch {
        frames,
        ..batch.clone()
    })
}

const FSQ_MAGIC: &[u8; 4] = b"FSQ1";

fn u32_of(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("{what} {n} exceeds u32")))
}

/// FSQ1 encoding; frames are stored as `f32`.
pub fn encode_sequence(batch: &SequenceBatch) -> Result<Vec<u8>> {
    let (t_len, d) = batch.frames.shape();
    let mut out = Vec::with_capacity(16 + 4 * t_len * (d + 1));
    out.extend_from_slice(FSQ_MAGIC);
    for v in [u32_of(t_len, "T")?, u32_of(d, "D")?, batch.classes] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &x in batch.frames.as_slice() {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    for &y in &batch.labels {
        out.extend_from_slice(&y.to_le_bytes());
    }
    for s in [&batch.utterance_id, &batch.segment_id] {
        out.extend_from_slice(&u32_of(s.len(), "id length")?.to_le_bytes());
        out.extend_from_slice(s.as_bytes());
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn arr4(&mut self) -> Result<[u8; 4]> {
        Ok(self.take(4)?.try_into().expect("4 bytes"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.arr4()?))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Format(e.to_string()))
    }
}

pub fn decode_sequence(bytes: &[u8]) -> Result<SequenceBatch> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4)? != FSQ_MAGIC {
        return Err(Error::Format("missing FSQ1 magic".into()));
    }
    let t_len = c.u32()? as usize;
    let d = c.u32()? as usize;
    let classes = c.u32()?;
    let n = t_len
        .checked_mul(d)
        .ok_or_else(|| Error::Format("frame count overflows".into()))?;
    let mut data = Vec::with_capacity(n.min(bytes.len() / 4));
    for _ in 0..n {
        data.push(f64::from(f32::from_le_bytes(c.arr4()?)));
    }
    let labels = (0..t_len)
        .map(|_| Ok(i32::from_le_bytes(c.arr4()?)))
        .collect::<Result<Vec<_>>>()?;
    let utterance_id = c.string()?;
    let segment_id = c.string()?;
    if c.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    SequenceBatch::new(Matrix::new(t_len, d, data)?, labels, classes, utterance_id, segment_id)
}

pub fn write_sequence(path: &Path, batch: &SequenceBatch) -> Result<()> {
    fs::write(path, encode_sequence(batch)?)?;
    Ok(())
}

pub fn read_sequence(path: &Path) -> Result<SequenceBatch> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_sequence(&bytes)
}

/// Writes one FSQ1 file per utterance into `dir` plus `manifest.txt`
/// listing them; returns the manifest path.
pub fn write_dataset(dir: &Path, batches: &[SequenceBatch]) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let manifest = dir.join("manifest.txt");
    let mut listing = fs::File::create(&manifest)?;
    for (i, b) in batches.iter().enumerate() {
        let name = format!("{i:05}.fsq");
        write_sequence(&dir.join(&name), b)?;
        writeln!(listing, "{name}")?;
    }
    Ok(manifest)
}

/// Reads every file listed in a manifest; paths are relative to it.
pub fn read_manifest(manifest: &Path) -> Result<Vec<SequenceBatch>> {
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    fs::read_to_string(manifest)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| read_sequence(&base.join(l)))
        .collect()
}
