//! Array geometry, plane-wave TDOAs and the direct / diffuse coherence models.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SPEED_OF_SOUND: f64 = 343.0;

/// Five forward-facing microphones of a tablet-style array (meters).
pub const CHIME_FRONT5_JSON: &str = include_str!("../data/chime_front5.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    #[serde(default = "default_speed_of_sound")]
    pub speed_of_sound: f64,
    #[serde(rename = "positions_m")]
    pub positions: Vec<[f64; 3]>,
}

fn default_speed_of_sound() -> f64 {
    DEFAULT_SPEED_OF_SOUND
}

impl ArrayGeometry {
    pub fn new(positions: Vec<[f64; 3]>, speed_of_sound: f64) -> Result<Self> {
        let geometry = Self {
            speed_of_sound,
            positions,
        };
        geometry.validate()?;
        Ok(geometry)
    }

    /// Uniform linear array along the x-axis, centered on the origin.
    pub fn linear(count: usize, spacing: f64) -> Result<Self> {
        let offset = (count as f64 - 1.0) / 2.0;
        let positions = (0..count)
            .map(|i| [(i as f64 - offset) * spacing, 0.0, 0.0])
            .collect();
        Self::new(positions, DEFAULT_SPEED_OF_SOUND)
    }

    pub fn chime_front5() -> Self {
        Self::from_json(CHIME_FRONT5_JSON).expect("bundled geometry is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let geometry: Self = serde_json::from_str(text)?;
        geometry.validate()?;
        Ok(geometry)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("geometry serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.positions.is_empty() {
            return Err(Error::InvalidGeometry("no microphones".into()));
        }
        if !(self.speed_of_sound.is_finite() && self.speed_of_sound > 0.0) {
            return Err(Error::InvalidGeometry(format!(
                "speed of sound {} must be positive",
                self.speed_of_sound
            )));
        }
        if self.positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidGeometry("non-finite position".into()));
        }
        Ok(())
    }

    pub fn num_mics(&self) -> usize {
        self.positions.len()
    }

    pub fn distance(&self, p: usize, q: usize) -> f64 {
        let (a, b) = (self.positions[p], self.positions[q]);
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    }

    pub fn max_distance(&self) -> f64 {
        let n = self.num_mics();
        (0..n)
            .flat_map(|p| (p + 1..n).map(move |q| (p, q)))
            .map(|(p, q)| self.distance(p, q))
            .fold(0.0, f64::max)
    }

    fn check_index(&self, index: usize) -> Result<()> {
        if index >= self.num_mics() {
            Err(Error::ChannelOutOfRange {
                index,
                channels: self.num_mics(),
            })
        } else {
            Ok(())
        }
    }
}

/// Direction of arrival; azimuth from the positive x-axis, elevation
/// (polar angle) from the positive z-axis, both in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Doa {
    pub azimuth: f64,
    pub elevation: f64,
}

impl Doa {
    pub fn new(azimuth: f64, elevation: f64) -> Self {
        Self { azimuth, elevation }
    }

    pub fn from_degrees(azimuth: f64, elevation: f64) -> Self {
        Self::new(azimuth.to_radians(), elevation.to_radians())
    }

    /// Unit vector pointing from the source towards the origin.
    pub fn propagation_vector(&self) -> [f64; 3] {
        let (st, ct) = self.elevation.sin_cos();
        let (sp, cp) = self.azimuth.sin_cos();
        [-st * cp, -st * sp, -ct]
    }
}

/// TDOA of channel `n` relative to the origin, `a^T p_n / c`.
pub fn tdoa(geometry: &ArrayGeometry, doa: &Doa, n: usize) -> Result<f64> {
    geometry.check_index(n)?;
    let a = doa.propagation_vector();
    let p = geometry.positions[n];
    Ok((a[0] * p[0] + a[1] * p[1] + a[2] * p[2]) / geometry.speed_of_sound)
}

/// TDOAs of every channel.
pub fn tdoas(geometry: &ArrayGeometry, doa: &Doa) -> Vec<f64> {
    (0..geometry.num_mics())
        .map(|n| tdoa(geometry, doa, n).expect("index in range"))
        .collect()
}

/// Direct-path coherence `exp(j 2 pi f (tau_p - tau_q))` from a TDOA difference.
pub fn direct_coherence_from_tdoa(tdoa_diff: f64, freq: f64) -> Complex64 {
    Complex64::from_polar(1.0, 2.0 * PI * freq * tdoa_diff)
}

pub fn direct_coherence(
    geometry: &ArrayGeometry,
    doa: &Doa,
    pair: (usize, usize),
    freq: f64,
) -> Result<Complex64> {
    let (p, q) = pair;
    if p == q {
        return Err(Error::InvalidConfig(format!(
            "direct coherence needs two distinct channels, got ({p}, {q})"
        )));
    }
    let diff = tdoa(geometry, doa, p)? - tdoa(geometry, doa, q)?;
    Ok(direct_coherence_from_tdoa(diff, freq))
}

/// Spherically isotropic noise coherence `sin(x)/x` with `x = 2 pi f d / c`.
pub fn diffuse_coherence(distance: f64, freq: f64, speed_of_sound: f64) -> f64 {
    let x = 2.0 * PI * freq * distance / speed_of_sound;
    if x == 0.0 {
        1.0
    } else {
        x.sin() / x
    }
}

pub fn diffuse_coherence_matrix(geometry: &ArrayGeometry, freq: f64) -> DMatrix<f64> {
    let n = geometry.num_mics();
    DMatrix::from_fn(n, n, |p, q| {
        if p == q {
            1.0
        } else {
            diffuse_coherence(geometry.distance(p, q), freq, geometry.speed_of_sound)
        }
    })
}
