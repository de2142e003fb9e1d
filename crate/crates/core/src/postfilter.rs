//! CDR-driven Wiener gain.

use serde::{Deserialize, Serialize};

use crate::cdr::CdrEstimatorKind;
use crate::error::{Error, Result};
use crate::filterbank::TfTensor;

pub const DEFAULT_GAIN_FLOOR: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostfilterConfig {
    pub mu: f64,
    pub g_min: f64,
    pub estimator: CdrEstimatorKind,
}

impl PostfilterConfig {
    /// Estimator with its tuned overestimation factor and a 0.1 gain floor.
    pub fn for_estimator(estimator: CdrEstimatorKind) -> Self {
        Self {
            mu: estimator.default_mu(),
            g_min: DEFAULT_GAIN_FLOOR,
            estimator,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return Err(Error::InvalidConfig(format!("mu {} must be finite and >= 0", self.mu)));
        }
        if !(self.g_min > 0.0 && self.g_min <= 1.0) {
            return Err(Error::InvalidConfig(format!("g_min {} outside (0, 1]", self.g_min)));
        }
        Ok(())
    }
}

impl Default for PostfilterConfig {
    fn default() -> Self {
        Self::for_estimator(CdrEstimatorKind::DoaDep)
    }
}

/// `max(1 - mu / (1 + CDR), G_min)`, never above one.
pub fn wiener_gain(cdr_bf: f64, cfg: &PostfilterConfig) -> f64 {
    (1.0 - cfg.mu / (1.0 + cdr_bf.max(0.0))).clamp(cfg.g_min, 1.0)
}

/// Scale every bin of a single-channel tensor by its gain (row-major
/// frames x bins).
pub fn apply(y_bf: &TfTensor, gains: &[f64]) -> Result<TfTensor> {
    if y_bf.channels() != 1 || gains.len() != y_bf.frames() * y_bf.bins() {
        return Err(Error::DimensionMismatch(format!(
            "{} gains for a {}x{}x{} tensor",
            gains.len(),
            y_bf.channels(),
            y_bf.frames(),
            y_bf.bins()
        )));
    }
    let mut out = y_bf.clone();
    for (v, &g) in out.as_mut_slice().iter_mut().zip(gains) {
        *v *= g;
    }
    Ok(out)
}
