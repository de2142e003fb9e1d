//! Coherent-to-diffuse power ratio (CDR) estimators for one microphone pair.
//!
//! Inputs are the estimated short-time coherence `gx`, the diffuse-noise
//! coherence model `gn` and, for the DOA-dependent estimators, the
//! direct-path coherence model `gs`. All estimators are total on the clamped
//! domain: singular denominators are floored at [`DENOM_EPS`] and results are
//! limited to `[0, CDR_MAX]`.

use std::fmt;
use std::str::FromStr;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper limit for any CDR estimate (40 dB).
pub const CDR_MAX: f64 = 1e4;
/// Smallest denominator magnitude used before clamping.
pub const DENOM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CdrEstimatorKind {
    DoaIndep,
    DoaDep,
    Thiergart,
    Jeub,
}

impl CdrEstimatorKind {
    pub const ALL: [CdrEstimatorKind; 4] = [
        CdrEstimatorKind::DoaIndep,
        CdrEstimatorKind::DoaDep,
        CdrEstimatorKind::Thiergart,
        CdrEstimatorKind::Jeub,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CdrEstimatorKind::DoaIndep => "doaindep",
            CdrEstimatorKind::DoaDep => "doadep",
            CdrEstimatorKind::Thiergart => "thiergart",
            CdrEstimatorKind::Jeub => "jeub",
        }
    }

    pub fn requires_doa(self) -> bool {
        matches!(self, CdrEstimatorKind::DoaDep | CdrEstimatorKind::Jeub)
    }

    /// Overestimation factor that worked best for this estimator on real
    /// multichannel recordings.
    pub fn default_mu(self) -> f64 {
        match self {
            CdrEstimatorKind::DoaIndep => 1.1,
            CdrEstimatorKind::DoaDep => 1.2,
            CdrEstimatorKind::Thiergart => 0.4,
            CdrEstimatorKind::Jeub => 0.8,
        }
    }

    /// Evaluate this estimator. `gs` is ignored by the DOA-independent ones.
    pub fn estimate(self, gx: Complex64, gn: f64, gs: Option<Complex64>) -> Result<CdrValue> {
        Ok(match self {
            CdrEstimatorKind::DoaIndep => cdr_doaindep(gx, gn),
            CdrEstimatorKind::Thiergart => cdr_thiergart(gx, gn),
            CdrEstimatorKind::DoaDep => cdr_doadep(gx, gn, gs.ok_or(Error::MissingDoa(self.name()))?),
            CdrEstimatorKind::Jeub => cdr_jeub(gx, gn, gs.ok_or(Error::MissingDoa(self.name()))?),
        })
    }
}

impl fmt::Display for CdrEstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CdrEstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownEstimator(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CdrValue {
    pub cdr: f64,
    pub clamped_high: bool,
    pub low_energy: bool,
}

impl CdrValue {
    fn from_raw(raw: f64) -> Self {
        if raw.is_nan() || raw > CDR_MAX {
            // NaN only arises from 0/0-type singular points on the guard.
            Self {
                cdr: CDR_MAX,
                clamped_high: true,
                low_energy: false,
            }
        } else {
            Self {
                cdr: raw.max(0.0),
                clamped_high: false,
                low_energy: false,
            }
        }
    }

    pub fn diffuseness(&self) -> f64 {
        diffuseness(self.cdr)
    }
}

fn guard_real(d: f64) -> f64 {
    if d.abs() < DENOM_EPS {
        if d > 0.0 {
            DENOM_EPS
        } else {
            -DENOM_EPS
        }
    } else {
        d
    }
}

fn guard_complex(d: Complex64, direction: Complex64) -> Complex64 {
    let mag = d.norm();
    if mag >= DENOM_EPS {
        d
    } else if mag > 0.0 {
        d * (DENOM_EPS / mag)
    } else {
        direction * DENOM_EPS
    }
}

/// DOA-independent estimator; uses only `Re{gx}` and `|gx|`.
pub fn cdr_doaindep(gx: Complex64, gn: f64) -> CdrValue {
    let re = gx.re;
    let mag2 = gx.norm_sqr();
    let gn2 = gn * gn;
    let radicand = gn2 * re * re - gn2 * mag2 + gn2 - 2.0 * gn * re + mag2;
    let numerator = gn * re - mag2 - radicand.max(0.0).sqrt();
    CdrValue::from_raw(numerator / guard_real(mag2 - 1.0))
}

/// DOA-dependent estimator.
pub fn cdr_doadep(gx: Complex64, gn: f64, gs: Complex64) -> CdrValue {
    let gn_c = Complex64::new(gn, 0.0);
    let scale = (1.0 - gn * gs.arg().cos()) / guard_real((gn_c - gs).norm());
    let inner = gs.conj() * (gn_c - gx) / guard_real((gs.conj() * gx).re - 1.0);
    CdrValue::from_raw(scale * inner.norm())
}

/// Reference estimator that takes the direct-path phase from `arg(gx)`.
pub fn cdr_thiergart(gx: Complex64, gn: f64) -> CdrValue {
    let unit = Complex64::from_polar(1.0, gx.arg());
    let denom = guard_complex(gx - unit, -unit);
    CdrValue::from_raw(((Complex64::new(gn, 0.0) - gx) / denom).re)
}

/// Reference DOA-dependent estimator with a real-valued projection on `gs`.
pub fn cdr_jeub(gx: Complex64, gn: f64, gs: Complex64) -> CdrValue {
    let projected = (gs.conj() * gx).re;
    CdrValue::from_raw((gn - projected) / guard_real(projected - 1.0))
}

/// Diffuseness `1 / (1 + CDR)`.
pub fn diffuseness(cdr: f64) -> f64 {
    1.0 / (1.0 + cdr)
}
