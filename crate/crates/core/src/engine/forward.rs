use crate::cells::{CellParams, StepContext, StepTrace};
use crate::error::{Error, Result};
use crate::math::Matrix;

use super::model::{HeadParams, Model};

/// Everything one recurrent layer produced over an unfolded window.
#[derive(Clone, Debug)]
pub struct LayerStates {
    pub steps: Vec<StepTrace>,
}

impl LayerStates {
    /// Vector handed to the next layer at step `t` (projection if any).
    pub fn output(&self, t: usize) -> &[f64] {
        let s = &self.steps[t];
        s.p().unwrap_or_else(|| s.h())
    }

    pub fn h(&self, t: usize) -> &[f64] {
        self.steps[t].h()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct HeadStep {
    pub pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Retained forward state for backpropagation through time.
#[derive(Clone, Debug)]
pub struct UnfoldedStates {
    pub inputs: Vec<Vec<f64>>,
    pub layers: Vec<LayerStates>,
    /// Head evaluation per step; `None` where the head was skipped.
    pub head: Vec<Option<HeadStep>>,
}

impl UnfoldedStates {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn logits(&self, t: usize) -> Option<&[f64]> {
        self.head[t].as_ref().map(|h| h.logits.as_slice())
    }
}

/// Runs one layer over `inputs` from zero history.
pub fn layer_forward(params: &CellParams, inputs: &[Vec<f64>]) -> Result<LayerStates> {
    let c = params.config;
    let kind = c.kind;
    let zeros_h = vec![0.0; c.d_h];
    let zeros_p = vec![0.0; c.d_p];
    let mut steps: Vec<StepTrace> = Vec::with_capacity(inputs.len());
    for (t, x) in inputs.iter().enumerate() {
        let h_at = |k: usize| -> &[f64] {
            if t >= k {
                steps[t - k].h()
            } else {
                &zeros_h
            }
        };
        let p_at = |k: usize| -> &[f64] {
            if t >= k {
                steps[t - k].p().expect("projected kind")
            } else {
                &zeros_p
            }
        };
        let mut ctx = StepContext::new(x);
        if kind.is_projected() {
            ctx.p_prev = Some(p_at(1));
            if kind.is_high_order() {
                ctx.p_lag_n = Some(p_at(c.n));
            }
        } else {
            ctx.h_prev = Some(h_at(1));
            if kind.is_high_order() {
                ctx.h_lag_n = Some(h_at(c.n));
            }
        }
        if kind.has_shortcut() {
            ctx.h_lag_m = Some(h_at(c.m));
        }
        if kind.is_lstm() {
            ctx.c_prev = Some(if t >= 1 {
                steps[t - 1].c().expect("lstm")
            } else {
                &zeros_h
            });
        }
        let step = params.step(&ctx)?;
        steps.push(step);
    }
    Ok(LayerStates { steps })
}

pub(crate) fn head_forward(head: &HeadParams, input: &[f64]) -> HeadStep {
    let mut pre = head.hidden_b.to_vec();
    head.hidden_w.mul_acc(input, &mut pre);
    let mut hidden = vec![0.0; pre.len()];
    head.activation.apply(None, &pre, &mut hidden);
    let mut logits = head.out_b.to_vec();
    head.out_w.mul_acc(&hidden, &mut logits);
    HeadStep {
        pre,
        hidden,
        logits,
    }
}

impl Model {
    /// Unfolds the model over `frames` from zero initial state, evaluating
    /// the head at every step.
    pub fn forward(&self, frames: &[Vec<f64>]) -> Result<UnfoldedStates> {
        self.forward_where(frames, |_| true)
    }

    /// Like [`Model::forward`] but only evaluates the head where `head_at(t)`.
    pub fn forward_where(
        &self,
        frames: &[Vec<f64>],
        head_at: impl Fn(usize) -> bool,
    ) -> Result<UnfoldedStates> {
        let d_x = self.input_dim();
        if let Some((t, f)) = frames.iter().enumerate().find(|(_, f)| f.len() != d_x) {
            return Err(Error::shape(
                "unfold_forward",
                format!("model input {d_x}"),
                format!("frame {t} of dim {}", f.len()),
            ));
        }
        let mut layers: Vec<LayerStates> = Vec::with_capacity(self.layers.len());
        for (i, params) in self.layers.iter().enumerate() {
            let states = if i == 0 {
                layer_forward(params, frames)?
            } else {
                let prev = &layers[i - 1];
                let inputs: Vec<Vec<f64>> = (0..prev.len()).map(|t| prev.output(t).to_vec()).collect();
                layer_forward(params, &inputs)?
            };
            layers.push(states);
        }
        let top = layers.last().expect("at least one layer");
        let head = (0..frames.len())
            .map(|t| head_at(t).then(|| head_forward(&self.head, top.output(t))))
            .collect();
        Ok(UnfoldedStates {
            inputs: frames.to_vec(),
            layers,
            head,
        })
    }
}

/// Unfolded forward pass over a `T x d_x` frame matrix.
pub fn unfold_forward(model: &Model, frames: &Matrix) -> Result<UnfoldedStates> {
    model.forward(&frames.row_vectors())
}

/// Numerically stable `-log softmax(logits)[target]`.
pub fn cross_entropy(logits: &[f64], target: usize) -> f64 {
    log_sum_exp(logits) - logits[target]
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest logit (first on ties).
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
