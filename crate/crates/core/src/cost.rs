//! Closed-form parameter and multiply-add counts.
//!
//! Recurrent-layer counts exclude p-sigmoid amplitudes, which are reported
//! separately as `scale_params`. Multiply-adds ignore element-wise work.

use serde::{Deserialize, Serialize};

use crate::cells::{CellConfig, CellKind};
use crate::engine::validate_chain;
use crate::error::Result;
use crate::math::Activation;

/// Recurrent-layer parameters of one layer.
pub fn param_count(config: &CellConfig) -> Result<u64> {
    config.validate()?;
    let (x, h, p) = (config.d_x as u64, config.d_h as u64, config.d_p as u64);
    Ok(match config.kind {
        CellKind::Rnn => (x + h) * h + h,
        CellKind::HornnRelu | CellKind::HornnSigmoid => (x + 2 * h) * h + h,
        CellKind::HornnpRelu | CellKind::HornnpSigmoid => h * p + (x + 2 * p) * h + h,
        CellKind::Lstm => 4 * (x + h) * h + 7 * h,
        CellKind::Lstmp => h * p + 4 * (x + p) * h + 7 * h,
        CellKind::ResRnn => (x + h) * h + h * h + h,
    })
}

/// p-sigmoid amplitudes of one layer (0 for other activations).
pub fn scale_param_count(config: &CellConfig) -> u64 {
    if config.activation == Activation::PSigmoid {
        config.d_h as u64
    } else {
        0
    }
}

/// Sum over a layer stack after checking the dimension chain.
pub fn stack_param_count(configs: &[CellConfig]) -> Result<u64> {
    validate_chain(configs)?;
    configs.iter().map(param_count).sum()
}

/// Multiply-adds per frame of the matrix products in one layer.
pub fn madds_per_frame(config: &CellConfig) -> Result<u64> {
    config.validate()?;
    let (x, h, p) = (config.d_x as u64, config.d_h as u64, config.d_p as u64);
    Ok(match config.kind {
        CellKind::Rnn => (x + h) * h,
        CellKind::HornnRelu | CellKind::HornnSigmoid | CellKind::ResRnn => (x + 2 * h) * h,
        CellKind::HornnpRelu | CellKind::HornnpSigmoid => (x + 3 * p) * h,
        CellKind::Lstm => 4 * (x + h) * h,
        CellKind::Lstmp => h * p + 4 * (x + p) * h,
    })
}

pub fn stack_madds_per_frame(configs: &[CellConfig]) -> Result<u64> {
    validate_chain(configs)?;
    configs.iter().map(madds_per_frame).sum()
}

/// HORNN over HORNNP parameter ratio next to the `2 d_h / 3 d_p` estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReductionRatio {
    pub unprojected: u64,
    pub projected: u64,
    pub exact: f64,
    pub approx: f64,
    /// `|exact - approx| / exact`
    pub rel_diff: f64,
}

pub fn reduction_ratio(d_x: usize, d_h: usize, d_p: usize) -> Result<ReductionRatio> {
    let unprojected = param_count(&CellConfig::new(CellKind::HornnRelu, d_x, d_h))?;
    let projected = param_count(&CellConfig::projected(CellKind::HornnpRelu, d_x, d_h, d_p))?;
    let exact = unprojected as f64 / projected as f64;
    let approx = 2.0 * d_h as f64 / (3.0 * d_p as f64);
    Ok(ReductionRatio {
        unprojected,
        projected,
        exact,
        approx,
        rel_diff: (exact - approx).abs() / exact,
    })
}

fn unprojected_twin(kind: CellKind) -> Option<CellKind> {
    match kind {
        CellKind::Lstmp => Some(CellKind::Lstm),
        CellKind::HornnpRelu => Some(CellKind::HornnRelu),
        CellKind::HornnpSigmoid => Some(CellKind::HornnSigmoid),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub kind: CellKind,
    pub d_x: usize,
    pub d_h: usize,
    pub d_p: usize,
    pub n: usize,
    pub m: usize,
    pub params: u64,
    pub madds: u64,
    pub scale_params: u64,
    /// Unprojected twin's count over this count, for projected kinds.
    pub reduction_ratio_vs_unprojected: Option<f64>,
}

impl LayerCost {
    pub fn of(config: &CellConfig) -> Result<Self> {
        let params = param_count(config)?;
        let ratio = unprojected_twin(config.kind)
            .map(|twin| {
                let c = CellConfig {
                    kind: twin,
                    d_p: 0,
                    ..*config
                };
                param_count(&c).map(|u| u as f64 / params as f64)
            })
            .transpose()?;
        Ok(Self {
            kind: config.kind,
            d_x: config.d_x,
            d_h: config.d_h,
            d_p: config.d_p,
            n: config.n,
            m: config.m,
            params,
            madds: madds_per_frame(config)?,
            scale_params: scale_param_count(config),
            reduction_ratio_vs_unprojected: ratio,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub params_recurrent: u64,
    pub madds_per_frame: u64,
    pub scale_params: u64,
    pub layers: Vec<LayerCost>,
}

impl CostReport {
    pub fn for_stack(configs: &[CellConfig]) -> Result<Self> {
        validate_chain(configs)?;
        let layers = configs.iter().map(LayerCost::of).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            params_recurrent: layers.iter().map(|l| l.params).sum(),
            madds_per_frame: layers.iter().map(|l| l.madds).sum(),
            scale_params: layers.iter().map(|l| l.scale_params).sum(),
            layers,
        })
    }
}

/// Millions with two decimals, e.g. `415500` -> `"0.42M"`.
pub fn display_millions(count: u64) -> String {
    format!("{:.2}M", count as f64 / 1e6)
}
