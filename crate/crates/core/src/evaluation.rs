//! Accuracy of the input CDR estimate against the CDR measured from the
//! separately known direct and diffuse components of a synthetic scene.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::aggregation::{average_diffuseness, input_cdr, PairSet};
use crate::cdr::{CdrEstimatorKind, CdrValue};
use crate::coherence::{PsdState, COHERENCE_EPS, WARMUP_FRAMES};
use crate::error::{Error, Result};
use crate::filterbank::{analyze, FilterbankConfig, TfTensor};
use crate::pipeline::Grid;
use crate::spatial::{diffuse_coherence, direct_coherence_from_tdoa, ArrayGeometry};

/// CDRs below this (-40 dB) are treated as equal when taking logarithms.
pub const CDR_DB_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationConfig {
    pub filterbank: FilterbankConfig,
    pub lambda: f64,
    /// Bins whose direct-path power is more than this many dB below the
    /// strongest bin are excluded.
    pub energy_range_db: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            filterbank: FilterbankConfig::default(),
            lambda: crate::coherence::DEFAULT_LAMBDA,
            energy_range_db: 40.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdrAccuracy {
    pub estimator: CdrEstimatorKind,
    /// Median of `10 log10(estimated / true)` over the evaluated bins.
    pub median_error_db: f64,
    /// Interquartile range of the same errors.
    pub iqr_db: f64,
    pub bins_used: usize,
}

fn channel_power(tf: &TfTensor) -> Grid {
    let (frames, bins) = (tf.frames(), tf.bins());
    let mut out = Grid::filled(frames, bins, 0.0);
    for l in 0..frames {
        for k in 0..bins {
            out.data[l * bins + k] = (0..tf.channels())
                .map(|c| tf.get(c, l, k).norm_sqr())
                .sum::<f64>()
                / tf.channels() as f64;
        }
    }
    out
}

/// Channel-averaged per-bin power of the direct and diffuse components.
pub fn component_power<S: AsRef<[f64]>>(
    direct: &[S],
    diffuse: &[S],
    cfg: &EvaluationConfig,
) -> Result<(Grid, Grid)> {
    let d = analyze(direct, &cfg.filterbank)?;
    let n = analyze(diffuse, &cfg.filterbank)?;
    if d.channels() != n.channels() || d.frames() != n.frames() {
        return Err(Error::DimensionMismatch(
            "direct and diffuse components differ in shape".into(),
        ));
    }
    Ok((channel_power(&d), channel_power(&n)))
}

/// Input CDR per frame and bin, estimated from the mixture with the
/// direct-path coherence implied by `tdoas`.
pub fn estimated_cdr<S: AsRef<[f64]>>(
    mixture: &[S],
    geometry: &ArrayGeometry,
    tdoas: &[f64],
    estimator: CdrEstimatorKind,
    cfg: &EvaluationConfig,
) -> Result<Grid> {
    if mixture.len() != geometry.num_mics() || tdoas.len() != geometry.num_mics() {
        return Err(Error::DimensionMismatch(format!(
            "{} channels and {} TDOAs for {} microphones",
            mixture.len(),
            tdoas.len(),
            geometry.num_mics()
        )));
    }
    let pairs = PairSet::all(geometry.num_mics())?;
    let tf = analyze(mixture, &cfg.filterbank)?;
    let fb = &cfg.filterbank;
    let bins = fb.bins();
    let limit = 1.0 - COHERENCE_EPS;
    let models: Vec<Vec<(f64, Complex64)>> = pairs
        .pairs()
        .iter()
        .map(|&(p, q)| {
            (0..bins)
                .map(|k| {
                    let f = fb.bin_frequency(k);
                    let gn = diffuse_coherence(geometry.distance(p, q), f, geometry.speed_of_sound)
                        .clamp(-limit, limit);
                    (gn, direct_coherence_from_tdoa(tdoas[p] - tdoas[q], f))
                })
                .collect()
        })
        .collect();
    let mut psd = PsdState::new(tf.channels(), bins, cfg.lambda)?;
    let mut out = Grid::filled(tf.frames(), bins, 0.0);
    let mut vals = vec![CdrValue::default(); pairs.len()];
    for l in 0..tf.frames() {
        psd.update(&tf.frame_slice(l))?;
        for k in 0..bins {
            for (i, &(p, q)) in pairs.pairs().iter().enumerate() {
                let (gn, gs) = models[i][k];
                let gx = psd.coherence(p, q, k, gn);
                vals[i] = estimator.estimate(gx.value, gn, Some(gs))?;
            }
            out.data[l * bins + k] = input_cdr(average_diffuseness(&vals)?);
        }
    }
    Ok(out)
}

/// Linearly interpolated quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn db(v: f64) -> f64 {
    10.0 * v.max(CDR_DB_FLOOR).log10()
}

/// Compare an estimated CDR grid with the component powers over bins past
/// the PSD warm-up that carry enough direct-path energy.
pub fn compare(
    estimator: CdrEstimatorKind,
    estimated: &Grid,
    direct_power: &Grid,
    diffuse_power: &Grid,
    energy_range_db: f64,
) -> Result<CdrAccuracy> {
    if estimated.frames != direct_power.frames
        || estimated.bins != direct_power.bins
        || direct_power.data.len() != diffuse_power.data.len()
    {
        return Err(Error::DimensionMismatch("grids differ in shape".into()));
    }
    let start = (WARMUP_FRAMES as usize).min(estimated.frames);
    let peak = direct_power.data[start * direct_power.bins..]
        .iter()
        .copied()
        .fold(0.0, f64::max);
    let threshold = peak * 10f64.powf(-energy_range_db / 10.0);
    let mut errors: Vec<f64> = (start * estimated.bins..estimated.data.len())
        .filter(|&i| direct_power.data[i] > threshold && direct_power.data[i] > 0.0)
        .map(|i| {
            let truth = direct_power.data[i] / diffuse_power.data[i].max(1e-300);
            db(estimated.data[i]) - db(truth)
        })
        .collect();
    if errors.is_empty() {
        return Err(Error::SilentSource);
    }
    errors.sort_by(f64::total_cmp);
    Ok(CdrAccuracy {
        estimator,
        median_error_db: quantile(&errors, 0.5),
        iqr_db: quantile(&errors, 0.75) - quantile(&errors, 0.25),
        bins_used: errors.len(),
    })
}

/// Estimation accuracy of one estimator on a scene given as components.
pub fn cdr_accuracy<S: AsRef<[f64]>>(
    direct: &[S],
    diffuse: &[S],
    geometry: &ArrayGeometry,
    tdoas: &[f64],
    estimator: CdrEstimatorKind,
    cfg: &EvaluationConfig,
) -> Result<CdrAccuracy> {
    let mixture: Vec<Vec<f64>> = direct
        .iter()
        .zip(diffuse)
        .map(|(d, n)| d.as_ref().iter().zip(n.as_ref()).map(|(a, b)| a + b).collect())
        .collect();
    let (pd, pn) = component_power(direct, diffuse, cfg)?;
    let est = estimated_cdr(&mixture, geometry, tdoas, estimator, cfg)?;
    compare(estimator, &est, &pd, &pn, cfg.energy_range_db)
}
