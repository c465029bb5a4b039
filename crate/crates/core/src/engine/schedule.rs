use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// NewBob-style learning-rate control driven by validation loss.
///
/// Before halving starts, an epoch whose relative improvement falls below
/// `ramp_threshold` halves the rate and latches halving mode. In halving
/// mode the rate halves every epoch until an improvement below
/// `stop_threshold` raises the stop flag.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub learning_rate: f64,
    pub ramp_threshold: f64,
    pub stop_threshold: f64,
    pub halving: bool,
    pub stopped: bool,
    /// Rate used in each completed epoch.
    pub rates: Vec<f64>,
    pub losses: Vec<f64>,
}

impl Schedule {
    pub const RAMP_THRESHOLD: f64 = 0.005;
    pub const STOP_THRESHOLD: f64 = 0.001;

    pub fn new(learning_rate: f64) -> Self {
        Self::with_thresholds(learning_rate, Self::RAMP_THRESHOLD, Self::STOP_THRESHOLD)
    }

    pub fn with_thresholds(learning_rate: f64, ramp_threshold: f64, stop_threshold: f64) -> Self {
        Self {
            learning_rate,
            ramp_threshold,
            stop_threshold,
            halving: false,
            stopped: false,
            rates: Vec::new(),
            losses: Vec::new(),
        }
    }

    pub fn epochs(&self) -> usize {
        self.losses.len()
    }

    /// Relative improvement of `loss` over the last recorded loss.
    pub fn improvement(&self, loss: f64) -> Option<f64> {
        let prev = *self.losses.last()?;
        Some(if prev.abs() > 0.0 {
            (prev - loss) / prev.abs()
        } else {
            prev - loss
        })
    }

    /// Records an epoch's validation loss and returns the rate for the next
    /// epoch together with the stop flag.
    pub fn newbob_step(&mut self, validation_loss: f64) -> Result<(f64, bool)> {
        if !validation_loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss {validation_loss}")));
        }
        let improvement = self.improvement(validation_loss);
        self.rates.push(self.learning_rate);
        self.losses.push(validation_loss);
        if let Some(imp) = improvement {
            if !self.halving {
                if imp < self.ramp_threshold {
                    self.halving = true;
                    self.learning_rate *= 0.5;
                }
            } else if imp < self.stop_threshold {
                self.stopped = true;
            } else {
                self.learning_rate *= 0.5;
            }
        }
        Ok((self.learning_rate, self.stopped))
    }
}
