use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cells::Role;
use crate::data::SequenceBatch;
use crate::error::{Error, Result};
use crate::math::{derive_seed, Activation, SeededRng};

use super::backward::{bptt_backward, score, GradientSet};
use super::model::Model;
use super::schedule::Schedule;

/// How training samples are cut from utterances.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    /// One sample per labelled frame: the frame plus up to `unfold_steps - 1`
    /// frames of left context, run from zero state. Samples are shuffled
    /// across all utterances.
    Frame,
    /// One sample per utterance, unfolded over its full length. Needs
    /// `unfold_steps` to cover every utterance.
    Utterance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub unfold_steps: usize,
    /// Update-value clip at the reference minibatch size.
    pub clip_threshold: f64,
    pub clip_ref_batch: usize,
    /// Label `y_t` is paired with frame `x_{t+delay}`.
    pub target_delay: usize,
    pub learning_rate_init: f64,
    pub weight_decay: f64,
    pub minibatch_frames: usize,
    pub seed: u64,
    pub sampling: Sampling,
    /// Keep p-sigmoid amplitudes fixed.
    pub freeze_scale: bool,
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            unfold_steps: 20,
            clip_threshold: 0.32,
            clip_ref_batch: 800,
            target_delay: 5,
            learning_rate_init: 2e-3,
            weight_decay: 0.0,
            minibatch_frames: 800,
            seed: 0,
            sampling: Sampling::Frame,
            freeze_scale: false,
            init_scale: crate::cells::INIT_SCALE,
        }
    }
}

impl TrainConfig {
    /// 5e-4 for ReLU models, 2e-3 otherwise.
    pub fn default_learning_rate(activation: Activation) -> f64 {
        if activation == Activation::Relu {
            5e-4
        } else {
            2e-3
        }
    }

    /// Clip bound for a minibatch of `frames` frames, scaled linearly from
    /// the reference batch.
    pub fn clip_bound(&self, frames: usize) -> f64 {
        self.clip_threshold * frames as f64 / self.clip_ref_batch as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clip_threshold > 0.0) {
            return Err(Error::config("clip_threshold must be positive"));
        }
        if self.clip_ref_batch == 0 || self.minibatch_frames == 0 {
            return Err(Error::config("clip_ref_batch and minibatch_frames must be positive"));
        }
        if self.unfold_steps == 0 {
            return Err(Error::config("unfold_steps must be positive"));
        }
        if !(self.learning_rate_init >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::config("learning rate and weight decay must be non-negative"));
        }
        Ok(())
    }

    /// Also checks that the unfold window covers the model's longest lag.
    pub fn validate_for(&self, model: &Model) -> Result<()> {
        self.validate()?;
        let lag = model.max_lag();
        if self.unfold_steps < lag {
            return Err(Error::config(format!(
                "unfold window of {} steps is shorter than the model's lag {lag}",
                self.unfold_steps
            )));
        }
        Ok(())
    }
}

/// Applies `u = -lr (g + λ θ)` clamped to `[-τ, τ]` per component, with `τ`
/// from [`TrainConfig::clip_bound`]. Weight decay covers weight tensors
/// only. Returns the number of clamped components.
///
/// Non-finite gradients abort before any parameter changes.
pub fn clip_and_update(
    model: &mut Model,
    grads: &GradientSet,
    lr: f64,
    cfg: &TrainConfig,
    frames: usize,
) -> Result<usize> {
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    let tau = cfg.clip_bound(frames);
    let grad_model = grads.as_model();
    let mut clipped = 0;
    for (p, g) in model.tensors_mut().into_iter().zip(grad_model.tensors()) {
        let role = p.view.role;
        if role == Role::Scale && cfg.freeze_scale {
            continue;
        }
        let decay = if role == Role::Weight { cfg.weight_decay } else { 0.0 };
        for (theta, &grad) in p.view.data.iter_mut().zip(g.view.data) {
            let u = -lr * (grad + decay * *theta);
            let c = u.clamp(-tau, tau);
            if c != u {
                clipped += 1;
            }
            *theta += c;
        }
    }
    Ok(clipped)
}

#[derive(Clone, Debug)]
struct Utterance {
    frames: Vec<Vec<f64>>,
    targets: Vec<Option<usize>>,
}

/// Utterances with the target delay applied, ready for sampling.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    utts: Vec<Utterance>,
    input_dim: usize,
    classes: usize,
}

impl TrainingSet {
    /// Pairs each label with the frame `delay` steps later (last frame
    /// repeated at the end). Negative labels mark unscored frames.
    pub fn new(seqs: &[SequenceBatch], delay: usize) -> Result<Self> {
        let first = seqs
            .first()
            .ok_or_else(|| Error::config("dataset is empty"))?;
        let input_dim = first.dim();
        let classes = first.classes as usize;
        let mut utts = Vec::with_capacity(seqs.len());
        for s in seqs {
            if s.dim() != input_dim || s.classes as usize != classes {
                return Err(Error::shape(
                    "dataset",
                    format!("dim {input_dim}, {classes} classes"),
                    format!("{}: dim {}, {} classes", s.utterance_id, s.dim(), s.classes),
                ));
            }
            let delayed = if delay > 0 {
                crate::data::apply_delay(s, delay)?
            } else {
                s.clone()
            };
            utts.push(Utterance {
                frames: delayed.frames.row_vectors(),
                targets: delayed
                    .labels
                    .iter()
                    .map(|&y| usize::try_from(y).ok())
                    .collect(),
            });
        }
        Ok(Self {
            utts,
            input_dim,
            classes,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn utterances(&self) -> usize {
        self.utts.len()
    }

    pub fn labelled_frames(&self) -> usize {
        self.utts
            .iter()
            .map(|u| u.targets.iter().filter(|t| t.is_some()).count())
            .sum()
    }

    pub fn max_len(&self) -> usize {
        self.utts.iter().map(|u| u.frames.len()).max().unwrap_or(0)
    }

    fn check_model(&self, model: &Model) -> Result<()> {
        if model.input_dim() != self.input_dim {
            return Err(Error::shape("model input", model.input_dim(), self.input_dim));
        }
        if model.classes() != self.classes {
            return Err(Error::shape("model classes", model.classes(), self.classes));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
enum Sample {
    Frame { utt: usize, t: usize },
    Utterance { utt: usize },
}

#[derive(Clone, Debug, Default)]
struct Tally {
    loss: f64,
    correct: usize,
    frames: usize,
}

impl Tally {
    fn add(&mut self, other: &Tally) {
        self.loss += other.loss;
        self.correct += other.correct;
        self.frames += other.frames;
    }
}

/// Per-sample gradient (normalised by its sharing count) and tally.
fn sample_gradient(model: &Model, data: &TrainingSet, cfg: &TrainConfig, sample: Sample) -> Result<(GradientSet, Tally)> {
    let (frames, targets): (&[Vec<f64>], Vec<Option<usize>>) = match sample {
        Sample::Frame { utt, t } => {
            let u = &data.utts[utt];
            let start = (t + 1).saturating_sub(cfg.unfold_steps);
            let mut targets = vec![None; t + 1 - start];
            *targets.last_mut().expect("non-empty window") = u.targets[t];
            (&u.frames[start..=t], targets)
        }
        Sample::Utterance { utt } => {
            let u = &data.utts[utt];
            (&u.frames, u.targets.clone())
        }
    };
    let states = model.forward_where(frames, |i| targets[i].is_some())?;
    let b = bptt_backward(model, &states, &targets)?;
    Ok((
        b.grads.normalized(),
        Tally {
            loss: b.loss,
            correct: b.correct,
            frames: b.frames,
        },
    ))
}

/// Fixed-size chunks keep the reduction order independent of thread count.
const CHUNK: usize = 16;

fn minibatch_gradient(
    model: &Model,
    data: &TrainingSet,
    cfg: &TrainConfig,
    samples: &[Sample],
) -> Result<(GradientSet, Tally)> {
    let partials: Vec<Result<(GradientSet, Tally)>> = samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = GradientSet::zeros_for(model);
            let mut tally = Tally::default();
            for &s in chunk {
                let (g, t) = sample_gradient(model, data, cfg, s)?;
                acc.accumulate(&g);
                tally.add(&t);
            }
            Ok((acc, tally))
        })
        .collect();
    let mut total = GradientSet::zeros_for(model);
    let mut tally = Tally::default();
    for p in partials {
        let (g, t) = p?;
        total.accumulate(&g);
        tally.add(&t);
    }
    Ok((total, tally))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// Mean cross-entropy per labelled frame, measured during the epoch.
    pub cross_entropy: f64,
    pub accuracy: f64,
    pub frames: usize,
    pub updates: usize,
    pub clipped: usize,
}

fn shuffled_minibatches(data: &TrainingSet, cfg: &TrainConfig, epoch: u64) -> Result<Vec<Vec<Sample>>> {
    let mut rng = SeededRng::new(derive_seed(cfg.seed, 0x5EED_0000 + epoch));
    match cfg.sampling {
        Sampling::Frame => {
            let mut samples: Vec<Sample> = data
                .utts
                .iter()
                .enumerate()
                .flat_map(|(utt, u)| {
                    u.targets
                        .iter()
                        .enumerate()
                        .filter(|(_, y)| y.is_some())
                        .map(move |(t, _)| Sample::Frame { utt, t })
                })
                .collect();
            rng.shuffle(&mut samples);
            Ok(samples
                .chunks(cfg.minibatch_frames)
                .map(<[Sample]>::to_vec)
                .collect())
        }
        Sampling::Utterance => {
            if data.max_len() > cfg.unfold_steps {
                return Err(Error::config(format!(
                    "utterance sampling needs unfold_steps >= longest utterance ({} > {})",
                    data.max_len(),
                    cfg.unfold_steps
                )));
            }
            let mut order: Vec<usize> = (0..data.utts.len()).collect();
            rng.shuffle(&mut order);
            let mut batches = Vec::new();
            let mut current = Vec::new();
            let mut frames = 0;
            for utt in order {
                frames += data.utts[utt].targets.iter().filter(|y| y.is_some()).count();
                current.push(Sample::Utterance { utt });
                if frames >= cfg.minibatch_frames {
                    batches.push(std::mem::take(&mut current));
                    frames = 0;
                }
            }
            if !current.is_empty() {
                batches.push(current);
            }
            Ok(batches)
        }
    }
}

/// One pass over the data in shuffled minibatches, updating `model` after
/// each. Returns statistics gathered on the fly.
pub fn train_epoch(
    model: &mut Model,
    data: &TrainingSet,
    cfg: &TrainConfig,
    schedule: &Schedule,
    epoch: u64,
) -> Result<EpochStats> {
    cfg.validate_for(model)?;
    data.check_model(model)?;
    let batches = shuffled_minibatches(data, cfg, epoch)?;
    let mut tally = Tally::default();
    let mut updates = 0;
    let mut clipped = 0;
    for batch in &batches {
        let (grads, t) = minibatch_gradient(model, data, cfg, batch)?;
        clipped += clip_and_update(model, &grads, schedule.learning_rate, cfg, t.frames)?;
        tally.add(&t);
        updates += 1;
    }
    if tally.frames == 0 {
        return Err(Error::config("dataset has no labelled frames"));
    }
    Ok(EpochStats {
        cross_entropy: tally.loss / tally.frames as f64,
        accuracy: tally.correct as f64 / tally.frames as f64,
        frames: tally.frames,
        updates,
        clipped,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub frames: usize,
    pub cross_entropy: f64,
    pub accuracy: f64,
}

/// Frame-level cross-entropy and accuracy using the training window: each
/// frame sees at most `unfold_steps` frames of context from zero state.
pub fn evaluate(model: &Model, data: &TrainingSet, cfg: &TrainConfig) -> Result<EvalStats> {
    data.check_model(model)?;
    let window = cfg.unfold_steps;
    let tallies: Vec<Result<Tally>> = data
        .utts
        .par_iter()
        .map(|u| {
            let mut tally = Tally::default();
            if u.frames.len() <= window {
                let states = model.forward_where(&u.frames, |t| u.targets[t].is_some())?;
                let (loss, correct, frames) = score(&states, &u.targets);
                tally.add(&Tally {
                    loss,
                    correct,
                    frames,
                });
            } else {
                for t in 0..u.frames.len() {
                    if u.targets[t].is_none() {
                        continue;
                    }
                    let start = (t + 1).saturating_sub(window);
                    let last = t - start;
                    let states = model.forward_where(&u.frames[start..=t], |i| i == last)?;
                    let mut targets = vec![None; last + 1];
                    targets[last] = u.targets[t];
                    let (loss, correct, frames) = score(&states, &targets);
                    tally.add(&Tally {
                        loss,
                        correct,
                        frames,
                    });
                }
            }
            Ok(tally)
        })
        .collect();
    let mut total = Tally::default();
    for t in tallies {
        total.add(&t?);
    }
    if total.frames == 0 {
        return Err(Error::config("no labelled frames to evaluate"));
    }
    Ok(EvalStats {
        frames: total.frames,
        cross_entropy: total.loss / total.frames as f64,
        accuracy: total.correct as f64 / total.frames as f64,
    })
}
