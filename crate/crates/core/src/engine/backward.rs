//! Backpropagation through time over an unfolded window.
//!
//! Each hidden state collects gradient from every edge that reads it: the
//! next step, the lag-`n` step and, for shortcut kinds, the lag-`m` step.
//! Per-step contributions to shared parameters are summed; the sum is then
//! divided by the number of unfolded steps by [`GradientSet::normalize`].

use crate::cells::{CellParams, CellWeights, StepTrace, GATE_C, GATE_F, GATE_I, GATE_O};
use crate::error::{Error, Result};
use crate::math::{add_assign, sigmoid};

use super::forward::{log_sum_exp, softmax, LayerStates, UnfoldedStates};
use super::model::{HeadParams, Model};

/// Gradients mirroring a [`Model`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<CellParams>,
    pub head: HeadParams,
    /// Unfolded steps over which the recurrent parameters were shared.
    pub shares: usize,
}

impl GradientSet {
    pub fn zeros_for(model: &Model) -> Self {
        let z = model.zeros_like();
        Self {
            layers: z.layers,
            head: z.head,
            shares: 0,
        }
    }

    pub fn as_model(&self) -> Model {
        Model {
            layers: self.layers.clone(),
            head: self.head.clone(),
        }
    }

    /// Divides recurrent-layer gradients by the sharing count. The head is
    /// applied once per target frame and is left as is.
    pub fn normalize(&mut self) {
        if self.shares <= 1 {
            return;
        }
        let k = self.shares as f64;
        for layer in &mut self.layers {
            for t in layer.tensors_mut() {
                t.data.iter_mut().for_each(|g| *g /= k);
            }
        }
    }

    pub fn normalized(mut self) -> Self {
        self.normalize();
        self
    }

    /// Elementwise sum; the sharing count of `self` is kept.
    pub fn accumulate(&mut self, other: &GradientSet) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (ta, tb) in a.tensors_mut().into_iter().zip(b.tensors()) {
                add_assign(ta.data, tb.data);
            }
        }
        for (ta, tb) in self.head.tensors_mut().into_iter().zip(other.head.tensors()) {
            add_assign(ta.data, tb.data);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .flat_map(|l| l.tensors())
            .chain(self.head.tensors())
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Flat copy in [`Model::tensors`] order.
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.tensors())
            .chain(self.head.tensors())
            .flat_map(|t| t.data.iter().copied())
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct BackwardOptions {
    /// Keep the per-step parameter contributions of every layer.
    pub record_steps: bool,
}

#[derive(Clone, Debug)]
pub struct Backward {
    /// Raw (un-normalised) gradients of the summed cross-entropy.
    pub grads: GradientSet,
    /// Summed cross-entropy over target frames.
    pub loss: f64,
    pub correct: usize,
    pub frames: usize,
    /// `hidden[l][t]` is the total derivative `∂F/∂h_t` of layer `l`.
    pub hidden: Vec<Vec<Vec<f64>>>,
    /// `steps[l][j]` holds layer `l`'s contribution from step `T-1-j`
    /// (reverse time order, the order of accumulation).
    pub steps: Option<Vec<Vec<CellParams>>>,
}

fn check_targets(model: &Model, states: &UnfoldedStates, targets: &[Option<usize>]) -> Result<()> {
    if targets.len() != states.len() {
        return Err(Error::shape("bptt_backward targets", states.len(), targets.len()));
    }
    let classes = model.classes();
    for (t, target) in targets.iter().enumerate() {
        if let Some(y) = *target {
            if y >= classes {
                return Err(Error::config(format!(
                    "target {y} at frame {t} out of range for {classes} classes"
                )));
            }
            if states.head[t].is_none() {
                return Err(Error::config(format!(
                    "frame {t} has a target but the head was not evaluated"
                )));
            }
        }
    }
    if states.layers.len() != model.layers.len() {
        return Err(Error::shape("bptt_backward layers", model.layers.len(), states.layers.len()));
    }
    Ok(())
}

/// Loss, accuracy and head gradient; returns `∂F/∂out_t` of the top layer.
fn head_backward(
    head: &HeadParams,
    grads: &mut HeadParams,
    states: &UnfoldedStates,
    targets: &[Option<usize>],
) -> (Vec<Vec<f64>>, f64, usize, usize) {
    let top = states.layers.last().expect("at least one layer");
    let out_dim = head.input_dim();
    let mut d_out = vec![vec![0.0; out_dim]; states.len()];
    let mut loss = 0.0;
    let mut correct = 0;
    let mut frames = 0;
    let hidden = head.hidden_b.dim();
    let mut d_hidden = vec![0.0; hidden];
    let mut deriv = vec![0.0; hidden];
    for (t, target) in targets.iter().enumerate() {
        let Some(y) = *target else { continue };
        let step = states.head[t].as_ref().expect("checked");
        frames += 1;
        loss += log_sum_exp(&step.logits) - step.logits[y];
        if super::forward::argmax(&step.logits) == y {
            correct += 1;
        }
        let mut d_logits = softmax(&step.logits);
        d_logits[y] -= 1.0;
        grads.out_w.add_outer(&d_logits, &step.hidden);
        add_assign(&mut grads.out_b, &d_logits);
        d_hidden.fill(0.0);
        head.out_w.mul_t_acc(&d_logits, &mut d_hidden);
        head.activation.derivative(None, &step.pre, &mut deriv);
        let d_pre: Vec<f64> = d_hidden.iter().zip(&deriv).map(|(a, b)| a * b).collect();
        grads.hidden_w.add_outer(&d_pre, top.output(t));
        add_assign(&mut grads.hidden_b, &d_pre);
        head.hidden_w.mul_t_acc(&d_pre, &mut d_out[t]);
    }
    (d_out, loss, correct, frames)
}

struct LayerBackward {
    d_in: Option<Vec<Vec<f64>>>,
    hidden: Vec<Vec<f64>>,
    steps: Option<Vec<CellParams>>,
}

/// Backward through one layer. `grads` receives the summed contributions.
fn layer_backward(
    params: &CellParams,
    grads: &mut CellParams,
    states: &LayerStates,
    inputs: &[&[f64]],
    mut d_out: Vec<Vec<f64>>,
    want_d_in: bool,
    record: bool,
) -> LayerBackward {
    let cfg = params.config;
    let steps_n = states.len();
    let d_x = cfg.d_x;
    let d_h = cfg.d_h;
    let mut d_in = want_d_in.then(|| vec![vec![0.0; d_x]; steps_n]);
    let mut hidden = vec![Vec::new(); steps_n];
    let mut recorded = record.then(Vec::new);
    let mut step_grads = record.then(|| grads.zeros_like());

    match &params.weights {
        CellWeights::Elman(w) => {
            // `d_out[t]` doubles as the gradient of the recurrent vector
            // (h, or P h for projected kinds).
            let rec = |t: usize| -> &[f64] { states.output(t) };
            let mut d_short = vec![vec![0.0; d_h]; steps_n];
            let mut deriv = vec![0.0; d_h];
            for t in (0..steps_n).rev() {
                let StepTrace::Elman(s) = &states.steps[t] else {
                    unreachable!("elman weights")
                };
                let g = step_grads.as_mut().unwrap_or(&mut *grads);
                let CellWeights::Elman(gw) = &mut g.weights else {
                    unreachable!()
                };
                let d_rec = std::mem::take(&mut d_out[t]);
                let mut dh = std::mem::take(&mut d_short[t]);
                match (&w.proj, &mut gw.proj) {
                    (Some(p), Some(gp)) => {
                        p.mul_t_acc(&d_rec, &mut dh);
                        gp.add_outer(&d_rec, &s.h);
                    }
                    _ => add_assign(&mut dh, &d_rec),
                }
                cfg.activation
                    .derivative(params.scale.as_deref(), &s.pre, &mut deriv);
                let da: Vec<f64> = dh.iter().zip(&deriv).map(|(a, b)| a * b).collect();
                if let Some(gs) = g.scale.as_mut() {
                    for k in 0..d_h {
                        gs[k] += dh[k] * sigmoid(s.pre[k]);
                    }
                }
                add_assign(&mut gw.b, &da);
                gw.w.add_outer(&da, inputs[t]);
                if let Some(d_in) = d_in.as_mut() {
                    w.w.mul_t_acc(&da, &mut d_in[t]);
                }
                if t >= 1 {
                    gw.u1.add_outer(&da, rec(t - 1));
                    w.u1.mul_t_acc(&da, &mut d_out[t - 1]);
                }
                if let (Some(un), Some(gun)) = (&w.un, &mut gw.un) {
                    if t >= cfg.n {
                        gun.add_outer(&da, rec(t - cfg.n));
                        un.mul_t_acc(&da, &mut d_out[t - cfg.n]);
                    }
                }
                if cfg.kind.has_shortcut() && t >= cfg.m {
                    add_assign(&mut d_short[t - cfg.m], &da);
                }
                hidden[t] = dh;
                flush_step(grads, &mut step_grads, &mut recorded);
            }
        }
        CellWeights::Residual(w) => {
            let mut deriv = vec![0.0; d_h];
            for t in (0..steps_n).rev() {
                let StepTrace::Residual(s) = &states.steps[t] else {
                    unreachable!("residual weights")
                };
                let g = step_grads.as_mut().unwrap_or(&mut *grads);
                let CellWeights::Residual(gw) = &mut g.weights else {
                    unreachable!()
                };
                let dh = std::mem::take(&mut d_out[t]);
                cfg.activation.derivative(None, &s.pre, &mut deriv);
                let da: Vec<f64> = dh.iter().zip(&deriv).map(|(a, b)| a * b).collect();
                gw.u_d2.add_outer(&da, &s.inner);
                let mut dq = vec![0.0; d_h];
                w.u_d2.mul_t_acc(&da, &mut dq);
                cfg.activation.derivative(None, &s.inner_pre, &mut deriv);
                let dz: Vec<f64> = dq.iter().zip(&deriv).map(|(a, b)| a * b).collect();
                add_assign(&mut gw.b, &dz);
                gw.w.add_outer(&dz, inputs[t]);
                if let Some(d_in) = d_in.as_mut() {
                    w.w.mul_t_acc(&dz, &mut d_in[t]);
                }
                if t >= 1 {
                    gw.u_d1.add_outer(&dz, states.h(t - 1));
                    w.u_d1.mul_t_acc(&dz, &mut d_out[t - 1]);
                }
                if t >= cfg.m {
                    add_assign(&mut d_out[t - cfg.m], &da);
                }
                hidden[t] = dh;
                flush_step(grads, &mut step_grads, &mut recorded);
            }
        }
        CellWeights::Lstm(w) => {
            let zeros = vec![0.0; d_h];
            let mut dc_carry = vec![0.0; d_h];
            for t in (0..steps_n).rev() {
                let StepTrace::Lstm(s) = &states.steps[t] else {
                    unreachable!("lstm weights")
                };
                let c_prev: &[f64] = if t >= 1 {
                    states.steps[t - 1].c().expect("lstm")
                } else {
                    &zeros
                };
                let g = step_grads.as_mut().unwrap_or(&mut *grads);
                let CellWeights::Lstm(gw) = &mut g.weights else {
                    unreachable!()
                };
                let d_rec = std::mem::take(&mut d_out[t]);
                let dh = match (&w.proj, &mut gw.proj) {
                    (Some(p), Some(gp)) => {
                        gp.add_outer(&d_rec, &s.h);
                        let mut dh = vec![0.0; d_h];
                        p.mul_t_acc(&d_rec, &mut dh);
                        dh
                    }
                    _ => d_rec,
                };
                let mut dz = [
                    vec![0.0; d_h],
                    vec![0.0; d_h],
                    vec![0.0; d_h],
                    vec![0.0; d_h],
                ];
                let mut next_carry = vec![0.0; d_h];
                for k in 0..d_h {
                    let tc = s.c[k].tanh();
                    let d_o = dh[k] * tc;
                    dz[GATE_O][k] = d_o * s.o[k] * (1.0 - s.o[k]);
                    let dc = dc_carry[k]
                        + dh[k] * s.o[k] * (1.0 - tc * tc)
                        + w.peep[2][k] * dz[GATE_O][k];
                    dz[GATE_I][k] = dc * s.g[k] * s.i[k] * (1.0 - s.i[k]);
                    dz[GATE_C][k] = dc * s.i[k] * (1.0 - s.g[k] * s.g[k]);
                    dz[GATE_F][k] = dc * c_prev[k] * s.f[k] * (1.0 - s.f[k]);
                    next_carry[k] = dc * s.f[k]
                        + w.peep[0][k] * dz[GATE_I][k]
                        + w.peep[1][k] * dz[GATE_F][k];
                    gw.peep[0][k] += dz[GATE_I][k] * c_prev[k];
                    gw.peep[1][k] += dz[GATE_F][k] * c_prev[k];
                    gw.peep[2][k] += dz[GATE_O][k] * s.c[k];
                }
                for gate in 0..4 {
                    add_assign(&mut gw.b[gate], &dz[gate]);
                    gw.w[gate].add_outer(&dz[gate], inputs[t]);
                    if let Some(d_in) = d_in.as_mut() {
                        w.w[gate].mul_t_acc(&dz[gate], &mut d_in[t]);
                    }
                    if t >= 1 {
                        gw.u[gate].add_outer(&dz[gate], states.output(t - 1));
                        w.u[gate].mul_t_acc(&dz[gate], &mut d_out[t - 1]);
                    }
                }
                dc_carry = next_carry;
                hidden[t] = dh;
                flush_step(grads, &mut step_grads, &mut recorded);
            }
        }
    }
    LayerBackward {
        d_in,
        hidden,
        steps: recorded,
    }
}

fn flush_step(
    total: &mut CellParams,
    step: &mut Option<CellParams>,
    recorded: &mut Option<Vec<CellParams>>,
) {
    let (Some(step), Some(recorded)) = (step.as_mut(), recorded.as_mut()) else {
        return;
    };
    for (a, b) in total.tensors_mut().into_iter().zip(step.tensors()) {
        add_assign(a.data, b.data);
    }
    recorded.push(step.clone());
    for t in step.tensors_mut() {
        t.data.fill(0.0);
    }
}

/// Backpropagates `d_out` (gradients on the layer's output at each step)
/// through a single layer and returns `∂F/∂h_t` for every step.
pub(crate) fn layer_hidden_gradients(
    params: &CellParams,
    states: &LayerStates,
    inputs: &[&[f64]],
    d_out: Vec<Vec<f64>>,
) -> Vec<Vec<f64>> {
    let mut scratch = params.zeros_like();
    layer_backward(params, &mut scratch, states, inputs, d_out, false, false).hidden
}

/// Gradients of the summed cross-entropy over frames with a target.
pub fn bptt_backward(
    model: &Model,
    states: &UnfoldedStates,
    targets: &[Option<usize>],
) -> Result<Backward> {
    bptt_backward_with(model, states, targets, BackwardOptions::default())
}

pub fn bptt_backward_with(
    model: &Model,
    states: &UnfoldedStates,
    targets: &[Option<usize>],
    opts: BackwardOptions,
) -> Result<Backward> {
    check_targets(model, states, targets)?;
    let mut grads = GradientSet::zeros_for(model);
    grads.shares = states.len();
    let (mut d_out, loss, correct, frames) =
        head_backward(&model.head, &mut grads.head, states, targets);

    let n_layers = model.layers.len();
    let mut hidden = vec![Vec::new(); n_layers];
    let mut steps = opts.record_steps.then(|| vec![Vec::new(); n_layers]);
    for l in (0..n_layers).rev() {
        let inputs: Vec<&[f64]> = if l == 0 {
            states.inputs.iter().map(Vec::as_slice).collect()
        } else {
            let below = &states.layers[l - 1];
            (0..below.len()).map(|t| below.output(t)).collect()
        };
        let out = layer_backward(
            &model.layers[l],
            &mut grads.layers[l],
            &states.layers[l],
            &inputs,
            d_out,
            l > 0,
            opts.record_steps,
        );
        hidden[l] = out.hidden;
        if let (Some(all), Some(s)) = (steps.as_mut(), out.steps) {
            all[l] = s;
        }
        d_out = out.d_in.unwrap_or_default();
    }
    Ok(Backward {
        grads,
        loss,
        correct,
        frames,
        hidden,
        steps,
    })
}

/// Summed cross-entropy, correct count and frame count without gradients.
pub fn score(states: &UnfoldedStates, targets: &[Option<usize>]) -> (f64, usize, usize) {
    let mut loss = 0.0;
    let mut correct = 0;
    let mut frames = 0;
    for (t, target) in targets.iter().enumerate() {
        let (Some(y), Some(logits)) = (*target, states.logits(t)) else {
            continue;
        };
        frames += 1;
        loss += log_sum_exp(logits) - logits[y];
        if super::forward::argmax(logits) == y {
            correct += 1;
        }
    }
    (loss, correct, frames)
}
