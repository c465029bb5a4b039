//! Recurrent cell zoo: Elman RNN, high-order RNNs (plain and projected),
//! LSTM/LSTMP with diagonal peepholes, and a depth-2 residual RNN.
//!
//! Out-of-range history (`t - k < 1`) is always the zero vector, matching
//! `h_0 = 0`. Step functions never fill it in themselves; the caller passes
//! zeros.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{derive_seed, seeded_uniform, Activation, ActivationKind, Matrix, Vector};

/// Default initialisation half-width.
pub const INIT_SCALE: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellKind {
    Rnn,
    Lstm,
    Lstmp,
    /// `f(W x + U_1 h_{t-1} + U_n h_{t-n} + b)`
    HornnRelu,
    /// As [`CellKind::HornnRelu`] plus an unweighted `h_{t-m}` input.
    HornnSigmoid,
    HornnpRelu,
    HornnpSigmoid,
    /// `f(U_d2 f(W x + U_d1 h_{t-1} + b) + h_{t-m})`
    ResRnn,
}

impl CellKind {
    pub const ALL: [CellKind; 8] = [
        CellKind::Rnn,
        CellKind::Lstm,
        CellKind::Lstmp,
        CellKind::HornnRelu,
        CellKind::HornnSigmoid,
        CellKind::HornnpRelu,
        CellKind::HornnpSigmoid,
        CellKind::ResRnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CellKind::Rnn => "rnn",
            CellKind::Lstm => "lstm",
            CellKind::Lstmp => "lstmp",
            CellKind::HornnRelu => "hornn-relu",
            CellKind::HornnSigmoid => "hornn-sigmoid",
            CellKind::HornnpRelu => "hornnp-relu",
            CellKind::HornnpSigmoid => "hornnp-sigmoid",
            CellKind::ResRnn => "res-rnn",
        }
    }

    /// Parses a kind name. `hornn`/`hornnp` select the ReLU form.
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.to_ascii_lowercase().replace('_', "-");
        let kind = match s.as_str() {
            "rnn" => CellKind::Rnn,
            "lstm" => CellKind::Lstm,
            "lstmp" => CellKind::Lstmp,
            "hornn" | "hornn-relu" => CellKind::HornnRelu,
            "hornn-sigmoid" => CellKind::HornnSigmoid,
            "hornnp" | "hornnp-relu" => CellKind::HornnpRelu,
            "hornnp-sigmoid" => CellKind::HornnpSigmoid,
            "res-rnn" | "resrnn" => CellKind::ResRnn,
            _ => return None,
        };
        Some(kind)
    }

    pub fn is_projected(self) -> bool {
        matches!(
            self,
            CellKind::Lstmp | CellKind::HornnpRelu | CellKind::HornnpSigmoid
        )
    }

    pub fn is_lstm(self) -> bool {
        matches!(self, CellKind::Lstm | CellKind::Lstmp)
    }

    /// Has a weighted `h_{t-n}` connection.
    pub fn is_high_order(self) -> bool {
        matches!(
            self,
            CellKind::HornnRelu
                | CellKind::HornnSigmoid
                | CellKind::HornnpRelu
                | CellKind::HornnpSigmoid
        )
    }

    /// Has an unweighted `h_{t-m}` connection.
    pub fn has_shortcut(self) -> bool {
        matches!(
            self,
            CellKind::HornnSigmoid | CellKind::HornnpSigmoid | CellKind::ResRnn
        )
    }

    pub fn default_activation(self) -> Activation {
        match self {
            CellKind::Lstm | CellKind::Lstmp => Activation::Tanh,
            CellKind::HornnRelu | CellKind::HornnpRelu => Activation::Relu,
            _ => Activation::Sigmoid,
        }
    }
}

impl std::fmt::Display for CellKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Shape and hyper-parameters of one recurrent layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellConfig {
    pub kind: CellKind,
    pub d_x: usize,
    pub d_h: usize,
    /// Projection size; 0 for unprojected kinds.
    pub d_p: usize,
    /// High-order lag (weighted connection).
    pub n: usize,
    /// Shortcut lag (unweighted connection).
    pub m: usize,
    pub activation: Activation,
}

impl CellConfig {
    /// Config with the selected operating points: ReLU HORNNs use n=4,
    /// sigmoid HORNNs n=2 and m=1, residual RNNs m=1.
    pub fn new(kind: CellKind, d_x: usize, d_h: usize) -> Self {
        let n = match kind {
            CellKind::HornnRelu | CellKind::HornnpRelu => 4,
            _ => 2,
        };
        Self {
            kind,
            d_x,
            d_h,
            d_p: 0,
            n,
            m: 1,
            activation: kind.default_activation(),
        }
    }

    pub fn projected(kind: CellKind, d_x: usize, d_h: usize, d_p: usize) -> Self {
        Self {
            d_p,
            ..Self::new(kind, d_x, d_h)
        }
    }

    pub fn with_lags(mut self, n: usize, m: usize) -> Self {
        self.n = n;
        self.m = m;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.kind;
        if self.d_x == 0 || self.d_h == 0 {
            return Err(Error::config(format!(
                "{kind}: d_x and d_h must be positive (got {}, {})",
                self.d_x, self.d_h
            )));
        }
        if kind.is_projected() && self.d_p == 0 {
            return Err(Error::config(format!("{kind} needs d_p > 0")));
        }
        if !kind.is_projected() && self.d_p != 0 {
            return Err(Error::config(format!("{kind} takes no projection (d_p = {})", self.d_p)));
        }
        if kind.is_high_order() && self.n < 2 {
            return Err(Error::config(format!("{kind} needs n >= 2 (got {})", self.n)));
        }
        if kind.has_shortcut() && self.m < 1 {
            return Err(Error::config(format!("{kind} needs m >= 1")));
        }
        if kind.is_lstm() && self.activation != Activation::Tanh {
            return Err(Error::config(format!(
                "{kind} has fixed gate nonlinearities; activation must be tanh"
            )));
        }
        if kind == CellKind::ResRnn && self.activation == Activation::PSigmoid {
            return Err(Error::config("res-rnn does not support p-sigmoid"));
        }
        Ok(())
    }

    /// Size of the vector this layer hands to the next one.
    pub fn output_dim(&self) -> usize {
        if self.kind.is_projected() {
            self.d_p
        } else {
            self.d_h
        }
    }

    /// Longest history reach in steps.
    pub fn max_lag(&self) -> usize {
        let mut lag = 1;
        if self.kind.is_high_order() {
            lag = lag.max(self.n);
        }
        if self.kind.has_shortcut() {
            lag = lag.max(self.m);
        }
        lag
    }
}

/// Weights of the Elman-style kinds (RNN, HORNN, HORNNP).
///
/// For projected kinds `u1`/`un` are `U_p1`/`U_pn` (`d_h x d_p`) and act on
/// projected history `P h`.
#[derive(Clone, Debug, PartialEq)]
pub struct ElmanWeights {
    pub w: Matrix,
    pub u1: Matrix,
    pub un: Option<Matrix>,
    pub proj: Option<Matrix>,
    pub b: Vector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualWeights {
    pub w: Matrix,
    pub u_d1: Matrix,
    pub u_d2: Matrix,
    pub b: Vector,
}

/// Gate order is `[i, f, c, o]`; peepholes are `[V_i, V_f, V_o]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmWeights {
    pub w: [Matrix; 4],
    pub u: [Matrix; 4],
    pub peep: [Vector; 3],
    pub b: [Vector; 4],
    pub proj: Option<Matrix>,
}

pub const GATE_I: usize = 0;
pub const GATE_F: usize = 1;
pub const GATE_C: usize = 2;
pub const GATE_O: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub enum CellWeights {
    Elman(ElmanWeights),
    Residual(ResidualWeights),
    Lstm(LstmWeights),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Weight,
    Bias,
    /// p-sigmoid amplitude.
    Scale,
}

#[derive(Debug)]
pub struct TensorView<'a> {
    pub name: &'static str,
    pub role: Role,
    pub rows: usize,
    pub cols: usize,
    pub data: &'a [f64],
}

#[derive(Debug)]
pub struct TensorViewMut<'a> {
    pub name: &'static str,
    pub role: Role,
    pub rows: usize,
    pub cols: usize,
    pub data: &'a mut [f64],
}

/// Parameters of one recurrent layer.
#[derive(Clone, Debug, PartialEq)]
pub struct CellParams {
    pub config: CellConfig,
    pub weights: CellWeights,
    /// p-sigmoid β; present iff the activation is p-sigmoid.
    pub scale: Option<Vector>,
}

const GATE_NAMES_W: [&str; 4] = ["W_i", "W_f", "W_c", "W_o"];
const GATE_NAMES_U: [&str; 4] = ["U_i", "U_f", "U_c", "U_o"];
const GATE_NAMES_UP: [&str; 4] = ["U_pi", "U_pf", "U_pc", "U_po"];
const GATE_NAMES_B: [&str; 4] = ["b_i", "b_f", "b_c", "b_o"];
const PEEP_NAMES: [&str; 3] = ["V_i", "V_f", "V_o"];

impl CellParams {
    /// All-zero parameters (β = 1 for p-sigmoid).
    pub fn zeros(config: CellConfig) -> Result<Self> {
        Self::build(config, |rows, cols, _| Ok(Matrix::zeros(rows, cols)))
    }

    /// Uniform initialisation on `[-scale, scale)`; β starts at 1.
    ///
    /// Each slot draws from its own stream so that architectures sharing a
    /// slot (W, the first recurrent matrix, the bias) get identical values
    /// for identical seeds and shapes.
    pub fn init(config: CellConfig, seed: u64, scale: f64) -> Result<Self> {
        Self::build(config, |rows, cols, stream| {
            seeded_uniform(rows, cols, -scale, scale, derive_seed(seed, stream))
        })
    }

    fn build(
        config: CellConfig,
        make: impl Fn(usize, usize, u64) -> Result<Matrix>,
    ) -> Result<Self> {
        config.validate()?;
        let CellConfig {
            kind, d_x, d_h, d_p, ..
        } = config;
        let vector = |dim: usize, stream: u64| -> Result<Vector> {
            Ok(make(dim, 1, stream)?.as_slice().to_vec().into())
        };
        let weights = match kind {
            CellKind::Lstm | CellKind::Lstmp => {
                let rec = if kind.is_projected() { d_p } else { d_h };
                let mut w = Vec::with_capacity(4);
                let mut u = Vec::with_capacity(4);
                let mut b = Vec::with_capacity(4);
                let mut peep = Vec::with_capacity(3);
                for g in 0..4u64 {
                    w.push(make(d_h, d_x, 10 + g)?);
                    u.push(make(d_h, rec, 20 + g)?);
                }
                for g in 0..3u64 {
                    peep.push(vector(d_h, 30 + g)?);
                }
                for g in 0..4u64 {
                    b.push(vector(d_h, 40 + g)?);
                }
                let proj = if kind.is_projected() {
                    Some(make(d_p, d_h, 3)?)
                } else {
                    None
                };
                CellWeights::Lstm(LstmWeights {
                    w: w.try_into().expect("four gates"),
                    u: u.try_into().expect("four gates"),
                    peep: peep.try_into().expect("three peepholes"),
                    b: b.try_into().expect("four gates"),
                    proj,
                })
            }
            CellKind::ResRnn => CellWeights::Residual(ResidualWeights {
                w: make(d_h, d_x, 0)?,
                u_d1: make(d_h, d_h, 1)?,
                u_d2: make(d_h, d_h, 2)?,
                b: vector(d_h, 4)?,
            }),
            _ => {
                let rec = if kind.is_projected() { d_p } else { d_h };
                let w = make(d_h, d_x, 0)?;
                let u1 = make(d_h, rec, 1)?;
                let un = if kind.is_high_order() {
                    Some(make(d_h, rec, 2)?)
                } else {
                    None
                };
                let proj = if kind.is_projected() {
                    Some(make(d_p, d_h, 3)?)
                } else {
                    None
                };
                let b = vector(d_h, 4)?;
                CellWeights::Elman(ElmanWeights { w, u1, un, proj, b })
            }
        };
        let scale = (config.activation == Activation::PSigmoid).then(|| Vector::filled(d_h, 1.0));
        Ok(Self {
            config,
            weights,
            scale,
        })
    }

    pub fn kind(&self) -> CellKind {
        self.config.kind
    }

    /// Same shapes, all zeros (including β).
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data.fill(0.0);
        }
        z
    }

    /// Activation with its β attached.
    pub fn activation_kind(&self) -> ActivationKind {
        match self.config.activation {
            Activation::Sigmoid => ActivationKind::Sigmoid,
            Activation::Relu => ActivationKind::Relu,
            Activation::Tanh => ActivationKind::Tanh,
            Activation::PSigmoid => ActivationKind::PSigmoid(
                self.scale.clone().unwrap_or_else(|| Vector::filled(self.config.d_h, 1.0)),
            ),
        }
    }

    pub fn tensors(&self) -> Vec<TensorView<'_>> {
        fn m<'a>(name: &'static str, role: Role, x: &'a Matrix) -> TensorView<'a> {
            TensorView {
                name,
                role,
                rows: x.rows(),
                cols: x.cols(),
                data: x.as_slice(),
            }
        }
        fn v<'a>(name: &'static str, role: Role, x: &'a Vector) -> TensorView<'a> {
            TensorView {
                name,
                role,
                rows: x.dim(),
                cols: 1,
                data: x.as_slice(),
            }
        }
        let projected = self.config.kind.is_projected();
        let mut out = Vec::new();
        match &self.weights {
            CellWeights::Elman(e) => {
                out.push(m("W", Role::Weight, &e.w));
                let (n1, nn) = match (projected, e.un.is_some()) {
                    (true, _) => ("U_p1", "U_pn"),
                    (false, true) => ("U_1", "U_n"),
                    (false, false) => ("U", "U_n"),
                };
                out.push(m(n1, Role::Weight, &e.u1));
                if let Some(un) = &e.un {
                    out.push(m(nn, Role::Weight, un));
                }
                if let Some(p) = &e.proj {
                    out.push(m("P", Role::Weight, p));
                }
                out.push(v("b", Role::Bias, &e.b));
            }
            CellWeights::Residual(r) => {
                out.push(m("W", Role::Weight, &r.w));
                out.push(m("U_d1", Role::Weight, &r.u_d1));
                out.push(m("U_d2", Role::Weight, &r.u_d2));
                out.push(v("b", Role::Bias, &r.b));
            }
            CellWeights::Lstm(l) => {
                let unames = if projected { GATE_NAMES_UP } else { GATE_NAMES_U };
                for g in 0..4 {
                    out.push(m(GATE_NAMES_W[g], Role::Weight, &l.w[g]));
                    out.push(m(unames[g], Role::Weight, &l.u[g]));
                }
                for (name, p) in PEEP_NAMES.iter().zip(&l.peep) {
                    out.push(v(name, Role::Weight, p));
                }
                for g in 0..4 {
                    out.push(v(GATE_NAMES_B[g], Role::Bias, &l.b[g]));
                }
                if let Some(p) = &l.proj {
                    out.push(m("P", Role::Weight, p));
                }
            }
        }
        if let Some(s) = &self.scale {
            out.push(v("beta", Role::Scale, s));
        }
        out
    }

    /// Mutable views in the same order as [`CellParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<TensorViewMut<'_>> {
        fn m<'a>(name: &'static str, role: Role, x: &'a mut Matrix) -> TensorViewMut<'a> {
            let (rows, cols) = x.shape();
            TensorViewMut {
                name,
                role,
                rows,
                cols,
                data: x.as_mut_slice(),
            }
        }
        fn v<'a>(name: &'static str, role: Role, x: &'a mut Vector) -> TensorViewMut<'a> {
            let rows = x.dim();
            TensorViewMut {
                name,
                role,
                rows,
                cols: 1,
                data: x.as_mut_slice(),
            }
        }
        let projected = self.config.kind.is_projected();
        let mut out = Vec::new();
        match &mut self.weights {
            CellWeights::Elman(e) => {
                out.push(m("W", Role::Weight, &mut e.w));
                let (n1, nn) = match (projected, e.un.is_some()) {
                    (true, _) => ("U_p1", "U_pn"),
                    (false, true) => ("U_1", "U_n"),
                    (false, false) => ("U", "U_n"),
                };
                out.push(m(n1, Role::Weight, &mut e.u1));
                if let Some(un) = &mut e.un {
                    out.push(m(nn, Role::Weight, un));
                }
                if let Some(p) = &mut e.proj {
                    out.push(m("P", Role::Weight, p));
                }
                out.push(v("b", Role::Bias, &mut e.b));
            }
            CellWeights::Residual(r) => {
                out.push(m("W", Role::Weight, &mut r.w));
                out.push(m("U_d1", Role::Weight, &mut r.u_d1));
                out.push(m("U_d2", Role::Weight, &mut r.u_d2));
                out.push(v("b", Role::Bias, &mut r.b));
            }
            CellWeights::Lstm(l) => {
                let unames = if projected { GATE_NAMES_UP } else { GATE_NAMES_U };
                for ((g, w), u) in l.w.iter_mut().enumerate().zip(l.u.iter_mut()) {
                    out.push(m(GATE_NAMES_W[g], Role::Weight, w));
                    out.push(m(unames[g], Role::Weight, u));
                }
                for (name, p) in PEEP_NAMES.iter().zip(l.peep.iter_mut()) {
                    out.push(v(name, Role::Weight, p));
                }
                for (name, b) in GATE_NAMES_B.iter().zip(l.b.iter_mut()) {
                    out.push(v(name, Role::Bias, b));
                }
                if let Some(p) = &mut l.proj {
                    out.push(m("P", Role::Weight, p));
                }
            }
        }
        if let Some(s) = &mut self.scale {
            out.push(v("beta", Role::Scale, s));
        }
        out
    }

    /// Number of recurrent-layer scalars, excluding p-sigmoid β.
    pub fn element_count(&self) -> usize {
        self.tensors()
            .iter()
            .filter(|t| t.role != Role::Scale)
            .map(|t| t.data.len())
            .sum()
    }

    /// One step from an explicit context, keeping every intermediate.
    pub fn step(&self, ctx: &StepContext<'_>) -> Result<StepTrace> {
        let c = &self.config;
        check_len("x_t", ctx.x, c.d_x)?;
        let scale = self.scale.as_deref();
        match &self.weights {
            CellWeights::Elman(e) => {
                let (prev, lag_n, rec_dim) = if c.kind.is_projected() {
                    (ctx.p_prev, ctx.p_lag_n, c.d_p)
                } else {
                    (ctx.h_prev, ctx.h_lag_n, c.d_h)
                };
                let prev = require("previous state", prev, rec_dim)?;
                let lag_n = match e.un {
                    Some(_) => Some(require("lag-n state", lag_n, rec_dim)?),
                    None => None,
                };
                let lag_m = if c.kind.has_shortcut() {
                    Some(require("lag-m state", ctx.h_lag_m, c.d_h)?)
                } else {
                    None
                };
                Ok(StepTrace::Elman(elman_forward(
                    e,
                    c.activation,
                    scale,
                    ctx.x,
                    prev,
                    lag_n,
                    lag_m,
                )))
            }
            CellWeights::Residual(r) => {
                let prev = require("previous state", ctx.h_prev, c.d_h)?;
                let lag_m = require("lag-m state", ctx.h_lag_m, c.d_h)?;
                Ok(StepTrace::Residual(residual_forward(
                    r,
                    c.activation,
                    ctx.x,
                    prev,
                    lag_m,
                )))
            }
            CellWeights::Lstm(l) => {
                let prev = if c.kind.is_projected() {
                    require("previous projection", ctx.p_prev, c.d_p)?
                } else {
                    require("previous state", ctx.h_prev, c.d_h)?
                };
                let c_prev = require("previous cell", ctx.c_prev, c.d_h)?;
                Ok(StepTrace::Lstm(lstm_forward(l, ctx.x, prev, c_prev)))
            }
        }
    }
}

fn check_len(what: &'static str, v: &[f64], dim: usize) -> Result<()> {
    if v.len() != dim {
        return Err(Error::shape(what, format!("expected {dim}"), format!("got {}", v.len())));
    }
    Ok(())
}

fn require<'a>(what: &'static str, v: Option<&'a [f64]>, dim: usize) -> Result<&'a [f64]> {
    let v = v.ok_or_else(|| Error::config(format!("missing {what} (pass zeros when out of range)")))?;
    check_len(what, v, dim)?;
    Ok(v)
}

/// Inputs for one step. History entries are `None` only when the cell
/// kind does not read them.
#[derive(Clone, Copy, Debug, Default)]
pub struct StepContext<'a> {
    pub x: &'a [f64],
    pub h_prev: Option<&'a [f64]>,
    pub h_lag_n: Option<&'a [f64]>,
    pub h_lag_m: Option<&'a [f64]>,
    pub p_prev: Option<&'a [f64]>,
    pub p_lag_n: Option<&'a [f64]>,
    pub c_prev: Option<&'a [f64]>,
}

impl<'a> StepContext<'a> {
    pub fn new(x: &'a [f64]) -> Self {
        Self {
            x,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElmanStep {
    pub pre: Vec<f64>,
    pub h: Vec<f64>,
    pub p: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualStep {
    pub inner_pre: Vec<f64>,
    pub inner: Vec<f64>,
    pub pre: Vec<f64>,
    pub h: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmStep {
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    /// Cell candidate `tanh(..)`.
    pub g: Vec<f64>,
    pub o: Vec<f64>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
    pub p: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum StepTrace {
    Elman(ElmanStep),
    Residual(ResidualStep),
    Lstm(LstmStep),
}

impl StepTrace {
    pub fn h(&self) -> &[f64] {
        match self {
            StepTrace::Elman(s) => &s.h,
            StepTrace::Residual(s) => &s.h,
            StepTrace::Lstm(s) => &s.h,
        }
    }

    pub fn p(&self) -> Option<&[f64]> {
        match self {
            StepTrace::Elman(s) => s.p.as_deref(),
            StepTrace::Residual(_) => None,
            StepTrace::Lstm(s) => s.p.as_deref(),
        }
    }

    pub fn c(&self) -> Option<&[f64]> {
        match self {
            StepTrace::Lstm(s) => Some(&s.c),
            _ => None,
        }
    }
}

pub(crate) fn elman_forward(
    e: &ElmanWeights,
    act: Activation,
    scale: Option<&[f64]>,
    x: &[f64],
    prev: &[f64],
    lag_n: Option<&[f64]>,
    lag_m: Option<&[f64]>,
) -> ElmanStep {
    let mut pre = e.b.to_vec();
    e.w.mul_acc(x, &mut pre);
    e.u1.mul_acc(prev, &mut pre);
    if let (Some(un), Some(lag)) = (&e.un, lag_n) {
        un.mul_acc(lag, &mut pre);
    }
    if let Some(hm) = lag_m {
        crate::math::add_assign(&mut pre, hm);
    }
    let mut h = vec![0.0; pre.len()];
    act.apply(scale, &pre, &mut h);
    let p = e.proj.as_ref().map(|p| {
        let mut out = vec![0.0; p.rows()];
        p.mul_acc(&h, &mut out);
        out
    });
    ElmanStep { pre, h, p }
}

pub(crate) fn residual_forward(
    r: &ResidualWeights,
    act: Activation,
    x: &[f64],
    prev: &[f64],
    lag_m: &[f64],
) -> ResidualStep {
    let d_h = r.b.dim();
    let mut inner_pre = r.b.to_vec();
    r.w.mul_acc(x, &mut inner_pre);
    r.u_d1.mul_acc(prev, &mut inner_pre);
    let mut inner = vec![0.0; d_h];
    act.apply(None, &inner_pre, &mut inner);
    let mut pre = lag_m.to_vec();
    r.u_d2.mul_acc(&inner, &mut pre);
    let mut h = vec![0.0; d_h];
    act.apply(None, &pre, &mut h);
    ResidualStep {
        inner_pre,
        inner,
        pre,
        h,
    }
}

pub(crate) fn lstm_forward(l: &LstmWeights, x: &[f64], prev: &[f64], c_prev: &[f64]) -> LstmStep {
    use crate::math::sigmoid;
    let d_h = c_prev.len();
    let gate_pre = |g: usize| {
        let mut z = l.b[g].to_vec();
        l.w[g].mul_acc(x, &mut z);
        l.u[g].mul_acc(prev, &mut z);
        z
    };
    let mut zi = gate_pre(GATE_I);
    let mut zf = gate_pre(GATE_F);
    let zc = gate_pre(GATE_C);
    let mut zo = gate_pre(GATE_O);
    for k in 0..d_h {
        zi[k] += l.peep[0][k] * c_prev[k];
        zf[k] += l.peep[1][k] * c_prev[k];
    }
    let i: Vec<f64> = zi.iter().map(|&z| sigmoid(z)).collect();
    let f: Vec<f64> = zf.iter().map(|&z| sigmoid(z)).collect();
    let g: Vec<f64> = zc.iter().map(|z| z.tanh()).collect();
    let c: Vec<f64> = (0..d_h).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
    for k in 0..d_h {
        zo[k] += l.peep[2][k] * c[k];
    }
    let o: Vec<f64> = zo.iter().map(|&z| sigmoid(z)).collect();
    let h: Vec<f64> = (0..d_h).map(|k| o[k] * c[k].tanh()).collect();
    let p = l.proj.as_ref().map(|p| {
        let mut out = vec![0.0; p.rows()];
        p.mul_acc(&h, &mut out);
        out
    });
    LstmStep { i, f, g, o, c, h, p }
}

fn expect_kind(params: &CellParams, allowed: &[CellKind], op: &'static str) -> Result<()> {
    if allowed.contains(&params.kind()) {
        Ok(())
    } else {
        Err(Error::config(format!("{op} does not accept {}", params.kind())))
    }
}

/// `h_t = f(W x_t + U h_{t-1} + b)`.
pub fn rnn_step(params: &CellParams, ctx: &StepContext<'_>) -> Result<Vector> {
    expect_kind(params, &[CellKind::Rnn], "rnn_step")?;
    Ok(params.step(ctx)?.h().to_vec().into())
}

/// High-order step; the sigmoid form adds `h_{t-m}` unweighted.
pub fn hornn_step(params: &CellParams, ctx: &StepContext<'_>) -> Result<Vector> {
    expect_kind(
        params,
        &[CellKind::HornnRelu, CellKind::HornnSigmoid],
        "hornn_step",
    )?;
    Ok(params.step(ctx)?.h().to_vec().into())
}

/// Projected high-order step. Returns `(h_t, P h_t)`.
pub fn hornnp_step(params: &CellParams, ctx: &StepContext<'_>) -> Result<(Vector, Vector)> {
    expect_kind(
        params,
        &[CellKind::HornnpRelu, CellKind::HornnpSigmoid],
        "hornnp_step",
    )?;
    let trace = params.step(ctx)?;
    let p = trace.p().expect("projected kind").to_vec();
    Ok((trace.h().to_vec().into(), p.into()))
}

/// Peephole LSTM step. Returns `(h_t, c_t)`.
pub fn lstm_step(params: &CellParams, ctx: &StepContext<'_>) -> Result<(Vector, Vector)> {
    expect_kind(params, &[CellKind::Lstm], "lstm_step")?;
    let trace = params.step(ctx)?;
    Ok((
        trace.h().to_vec().into(),
        trace.c().expect("lstm").to_vec().into(),
    ))
}

/// Projected LSTM step. Returns `(h_t, c_t, P h_t)`.
pub fn lstmp_step(params: &CellParams, ctx: &StepContext<'_>) -> Result<(Vector, Vector, Vector)> {
    expect_kind(params, &[CellKind::Lstmp], "lstmp_step")?;
    let trace = params.step(ctx)?;
    Ok((
        trace.h().to_vec().into(),
        trace.c().expect("lstm").to_vec().into(),
        trace.p().expect("projected").to_vec().into(),
    ))
}

/// `h_t = f(U_d2 f(W x_t + U_d1 h_{t-1} + b) + h_{t-m})`.
pub fn resrnn_step(params: &CellParams, ctx: &StepContext<'_>) -> Result<Vector> {
    expect_kind(params, &[CellKind::ResRnn], "resrnn_step")?;
    Ok(params.step(ctx)?.h().to_vec().into())
}
