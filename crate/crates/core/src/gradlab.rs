//! Gradient-flow diagnostics: finite-difference checks, gradient norm
//! against lag, and decay-rate comparison across architectures.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cells::{CellConfig, CellParams};
use crate::engine::backward::layer_hidden_gradients;
use crate::engine::{bptt_backward, layer_forward, Model};
use crate::error::{Error, Result};
use crate::math::{derive_seed, norm2, SeededRng};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckOptions {
    pub seed: u64,
    pub steps: usize,
    pub classes: usize,
    pub init_scale: f64,
    pub eps: f64,
    /// Adds 0.1 to one analytic entry so the check must fail.
    pub corrupt: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            steps: 12,
            classes: 3,
            init_scale: 1.0,
            eps: 1e-5,
            corrupt: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub name: String,
    /// `‖a - n‖ / max(‖n‖, 1e-8)` over the tensor.
    pub rel_err: f64,
    /// `max |a - n| / max(|n|, 1e-8)` over single entries. Central
    /// differences carry about 1e-10 absolute round-off, so entries below
    /// ~1e-4 can exceed 1e-6 here even when the gradient is right.
    pub max_entry_rel_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub config: CellConfig,
    pub seed: u64,
    /// Largest per-tensor relative error.
    pub max_rel_err: f64,
    pub max_entry_rel_err: f64,
    pub tensors: Vec<TensorCheck>,
}

/// Largest dims accepted by [`finite_diff_check`].
pub const MAX_CHECK_DH: usize = 16;
pub const MAX_CHECK_STEPS: usize = 32;

/// Compares BPTT gradients of the summed cross-entropy with central
/// differences over every parameter of a one-layer model with output head.
/// Inputs are standard normal and every frame carries a random target.
pub fn finite_diff_check(config: CellConfig, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    if config.d_h > MAX_CHECK_DH || opts.steps > MAX_CHECK_STEPS || opts.steps == 0 {
        return Err(Error::config(format!(
            "gradient check limited to d_h <= {MAX_CHECK_DH} and 1 <= T <= {MAX_CHECK_STEPS}"
        )));
    }
    let mut model = Model::init(&[config], opts.classes, opts.seed, opts.init_scale)?;
    let mut rng = SeededRng::new(derive_seed(opts.seed, 0xF1D0));
    let frames: Vec<Vec<f64>> = (0..opts.steps)
        .map(|_| (0..config.d_x).map(|_| rng.normal()).collect())
        .collect();
    let targets: Vec<Option<usize>> = (0..opts.steps).map(|_| Some(rng.below(opts.classes))).collect();

    let states = model.forward(&frames)?;
    let analytic = bptt_backward(&model, &states, &targets)?.grads.as_model();
    let loss = |m: &Model| -> Result<f64> {
        let s = m.forward(&frames)?;
        let l = bptt_backward(m, &s, &targets)?.loss;
        if l.is_finite() {
            Ok(l)
        } else {
            Err(Error::NonFinite("loss".into()))
        }
    };

    let names: Vec<String> = model.tensors().iter().map(|t| t.qualified_name()).collect();
    let sizes: Vec<usize> = model.tensors().iter().map(|t| t.view.data.len()).collect();
    let mut flat_analytic: Vec<Vec<f64>> = analytic.tensors().iter().map(|t| t.view.data.to_vec()).collect();
    if opts.corrupt {
        if let Some(first) = flat_analytic.iter_mut().find(|t| !t.is_empty()) {
            first[0] += 0.1;
        }
    }

    let mut tensors = Vec::with_capacity(names.len());
    for (ti, name) in names.into_iter().enumerate() {
        let mut numeric = vec![0.0; sizes[ti]];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = model.tensors()[ti].view.data[j];
            set_entry(&mut model, ti, j, orig + opts.eps);
            let up = loss(&model)?;
            set_entry(&mut model, ti, j, orig - opts.eps);
            let down = loss(&model)?;
            set_entry(&mut model, ti, j, orig);
            *slot = (up - down) / (2.0 * opts.eps);
        }
        let a = &flat_analytic[ti];
        let max_entry_rel_err = a
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).abs() / n.abs().max(1e-8))
            .fold(0.0, f64::max);
        let diff: Vec<f64> = a.iter().zip(&numeric).map(|(a, n)| a - n).collect();
        tensors.push(TensorCheck {
            name,
            rel_err: norm2(&diff) / norm2(&numeric).max(1e-8),
            max_entry_rel_err,
        });
    }
    Ok(GradCheckReport {
        config,
        seed: opts.seed,
        max_rel_err: tensors.iter().map(|t| t.rel_err).fold(0.0, f64::max),
        max_entry_rel_err: tensors.iter().map(|t| t.max_entry_rel_err).fold(0.0, f64::max),
        tensors,
    })
}

fn set_entry(model: &mut Model, tensor: usize, index: usize, value: f64) {
    model.tensors_mut()[tensor].view.data[index] = value;
}

/// Mean gradient norm against lag for one parameter set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagCurve {
    /// `g[k]` for `k = 0..=K`.
    pub g: Vec<f64>,
    /// Slope `λ` of the fit `log g(k) ≈ α - λ k`; `None` when degenerate.
    pub decay_rate: Option<f64>,
    pub seeds: Vec<u64>,
}

impl LagCurve {
    pub fn max_lag(&self) -> usize {
        self.g.len() - 1
    }
}

/// Injects a unit-norm gradient `1/√d` on the layer output at step `t` and
/// records `‖∂L_t/∂h_{t-k}‖₂` for `k = 0..=K`, averaged over `t = K..T-1`
/// so every lag uses the same set of steps. Parameters are read only.
pub fn lag_curve(params: &CellParams, probe: &[Vec<f64>], k_max: usize) -> Result<LagCurve> {
    let t_len = probe.len();
    if k_max >= t_len {
        return Err(Error::config(format!(
            "lag {k_max} must be below probe length {t_len}"
        )));
    }
    let states = layer_forward(params, probe)?;
    let inputs: Vec<&[f64]> = probe.iter().map(Vec::as_slice).collect();
    let out_dim = params.config.output_dim();
    let unit = 1.0 / (out_dim as f64).sqrt();
    let mut g = vec![0.0; k_max + 1];
    for t in k_max..t_len {
        let mut d_out = vec![vec![0.0; out_dim]; t_len];
        d_out[t].fill(unit);
        let hidden = layer_hidden_gradients(params, &states, &inputs, d_out);
        for (k, gk) in g.iter_mut().enumerate() {
            *gk += norm2(&hidden[t - k]);
        }
    }
    let count = (t_len - k_max) as f64;
    g.iter_mut().for_each(|x| *x /= count);
    Ok(LagCurve {
        decay_rate: fit_decay(&g, 2),
        g,
        seeds: Vec::new(),
    })
}

/// Least-squares slope of `-log g(k)` over `k = from..`, stopping at the
/// first zero or non-finite value. Needs at least two points.
pub fn fit_decay(g: &[f64], from: usize) -> Option<f64> {
    let pts: Vec<(f64, f64)> = g
        .iter()
        .enumerate()
        .skip(from)
        .take_while(|(_, &v)| v > 0.0 && v.is_finite())
        .map(|(k, &v)| (k as f64, v.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    Some(-sxy / sxx)
}

/// Standard-normal probe frames for `seed`.
pub fn probe_sequence(d_x: usize, t_len: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = SeededRng::new(derive_seed(seed, 0x9B0BE));
    (0..t_len).map(|_| (0..d_x).map(|_| rng.normal()).collect()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecaySetup {
    /// Probe length.
    pub steps: usize,
    pub max_lag: usize,
    pub init_scale: f64,
}

impl Default for DecaySetup {
    fn default() -> Self {
        Self {
            steps: 40,
            max_lag: 19,
            init_scale: crate::cells::INIT_SCALE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayEntry {
    pub config: CellConfig,
    pub curves: Vec<LagCurve>,
    /// Median of the fitted rates that exist.
    pub median_rate: Option<f64>,
    /// Seeds whose curve could not be fitted.
    pub degenerate: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayComparison {
    pub seeds: Vec<u64>,
    pub setup: DecaySetup,
    pub entries: Vec<DecayEntry>,
}

impl DecayComparison {
    /// Whether entry `a` decays no faster than entry `b` (median rates).
    pub fn decays_no_faster(&self, a: usize, b: usize) -> Option<bool> {
        Some(self.entries[a].median_rate? <= self.entries[b].median_rate?)
    }

    pub fn decays_slower(&self, a: usize, b: usize) -> Option<bool> {
        Some(self.entries[a].median_rate? < self.entries[b].median_rate?)
    }
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Lag curves for every config and seed with matched initialisation: seed
/// `s` draws parameters from the same streams and uses the same probe for
/// all configs.
pub fn decay_compare(configs: &[CellConfig], seeds: &[u64], setup: DecaySetup) -> Result<DecayComparison> {
    if seeds.len() < 3 {
        return Err(Error::config(format!("need at least 3 seeds, got {}", seeds.len())));
    }
    if setup.max_lag >= setup.steps {
        return Err(Error::config(format!(
            "lag {} must be below probe length {}",
            setup.max_lag, setup.steps
        )));
    }
    let entries = configs
        .iter()
        .map(|config| {
            config.validate()?;
            let curves = seeds
                .par_iter()
                .map(|&seed| {
                    let params = CellParams::init(*config, derive_seed(seed, 0), setup.init_scale)?;
                    let probe = probe_sequence(config.d_x, setup.steps, seed);
                    let mut curve = lag_curve(&params, &probe, setup.max_lag)?;
                    curve.seeds = vec![seed];
                    Ok(curve)
                })
                .collect::<Result<Vec<_>>>()?;
            let degenerate = curves
                .iter()
                .filter(|c| c.decay_rate.is_none())
                .map(|c| c.seeds[0])
                .collect();
            let median_rate = median(curves.iter().filter_map(|c| c.decay_rate).collect());
            Ok(DecayEntry {
                config: *config,
                curves,
                median_rate,
                degenerate,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DecayComparison {
        seeds: seeds.to_vec(),
        setup,
        entries,
    })
}
