//! Synthetic sound fields with separated ground truth: a plane-wave target
//! and a spherically isotropic (sinc-coherent) noise field.
//!
//! Both components are generated with whole-signal transforms, independent of
//! the analysis filterbank. Diffuse noise mixes independent Gaussian spectra
//! with a per-bin symmetric square root of the diffuse coherence matrix;
//! steering applies exact fractional delays as phase ramps (circular).

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::{diffuse_coherence_matrix, tdoas, ArrayGeometry, Doa};

/// Mics closer than this are treated as coincident.
const COINCIDENT_DISTANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralShape {
    White,
    /// Long-term speech-like spectrum: high-passed at 100 Hz, flat to about
    /// 500 Hz, then falling at roughly 6 dB per octave.
    SpeechLike,
}

impl SpectralShape {
    pub fn amplitude(&self, freq: f64) -> f64 {
        let f = freq.abs();
        match self {
            SpectralShape::White => 1.0,
            SpectralShape::SpeechLike => {
                let highpass = (f / 100.0).powi(2) / (1.0 + (f / 100.0).powi(2));
                highpass / (1.0 + (f / 500.0).powi(2)).sqrt()
            }
        }
    }
}

fn bin_frequency(k: usize, n: usize, sample_rate: f64) -> f64 {
    k.min(n - k) as f64 * sample_rate / n as f64
}

fn signed_bin_frequency(k: usize, n: usize, sample_rate: f64) -> f64 {
    if k <= n / 2 {
        k as f64 * sample_rate / n as f64
    } else {
        (k as f64 - n as f64) * sample_rate / n as f64
    }
}

fn gaussian(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(&mut *rng)).collect()
}

fn forward(x: &[f64], planner: &mut FftPlanner<f64>) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

fn inverse_real(mut spec: Vec<Complex64>, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let n = spec.len();
    planner.plan_fft_inverse(n).process(&mut spec);
    spec.iter().map(|v| v.re / n as f64).collect()
}

/// Symmetric PSD square root; negative eigenvalues are clipped to zero.
fn psd_sqrt(m: DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m);
    let top = eig.eigenvalues.max();
    // Eigenvalues at rounding level belong to the null space.
    let roots = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues
            .iter()
            .map(|&v| if v > 1e-10 * top { v.sqrt() } else { 0.0 }),
    );
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Gaussian noise shaped by `shape`, unit-variance before shaping.
pub fn shaped_noise(
    num_samples: usize,
    sample_rate: f64,
    shape: SpectralShape,
    seed: u64,
) -> Result<Vec<f64>> {
    if num_samples == 0 {
        return Err(Error::EmptyInput);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut planner = FftPlanner::new();
    let mut spec = forward(&gaussian(num_samples, &mut rng), &mut planner);
    for (k, v) in spec.iter_mut().enumerate() {
        *v *= shape.amplitude(bin_frequency(k, num_samples, sample_rate));
    }
    Ok(inverse_real(spec, &mut planner))
}

/// Stationary speech-shaped noise normalized to unit RMS.
pub fn speech_shaped_source(num_samples: usize, sample_rate: f64, seed: u64) -> Result<Vec<f64>> {
    let mut x = shaped_noise(num_samples, sample_rate, SpectralShape::SpeechLike, seed)?;
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / num_samples as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v /= rms);
    }
    Ok(x)
}

/// Speech-shaped noise with a 4 Hz syllabic envelope, unit RMS.
pub fn modulated_speech_source(
    num_samples: usize,
    sample_rate: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut x = shaped_noise(num_samples, sample_rate, SpectralShape::SpeechLike, seed)?;
    let phase = (seed % 1000) as f64 * 0.001 * 2.0 * PI;
    for (i, v) in x.iter_mut().enumerate() {
        let t = i as f64 / sample_rate;
        let env = 0.55 + 0.45 * (2.0 * PI * 4.0 * t + phase).sin();
        *v *= env * env;
    }
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / num_samples as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v /= rms);
    }
    Ok(x)
}

fn normalize_rms(x: &mut [f64]) {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v /= rms);
    }
}

/// Amplitude of a three-formant vocal tract at `f`.
fn formant_gain(f: f64, formants: &[(f64, f64); 3]) -> f64 {
    formants
        .iter()
        .map(|&(fc, bw)| 1.0 / (1.0 + ((f - fc) / (0.5 * bw)).powi(2)))
        .sum::<f64>()
        + 0.02
}

/// Synthetic voiced speech: syllables of glottal harmonics shaped by random
/// formants, occasional fricatives, and pauses between words. Unit RMS.
pub fn voiced_speech_source(num_samples: usize, sample_rate: f64, seed: u64) -> Result<Vec<f64>> {
    if num_samples == 0 {
        return Err(Error::EmptyInput);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; num_samples];
    let fricative_band = shaped_noise(num_samples, sample_rate, SpectralShape::White, seed ^ 0xf51c)?;
    let ms = |v: f64| (v * 1e-3 * sample_rate) as usize;
    let mut pos = ms(rng.random_range(20.0..150.0));
    let mut in_word = 0;
    while pos < num_samples {
        let len = ms(rng.random_range(120.0..300.0)).min(num_samples - pos);
        let ramp = ms(20.0).min(len / 2).max(1);
        let level = rng.random_range(0.5..1.0);
        let env = |i: usize| {
            let a = (i.min(len - 1 - i) as f64 / ramp as f64).min(1.0);
            level * (0.5 - 0.5 * (PI * a).cos())
        };
        if rng.random_bool(0.8) {
            let f0_start: f64 = rng.random_range(90.0..220.0);
            let f0_end = f0_start * rng.random_range(0.8..1.2);
            let formants = [
                (rng.random_range(300.0..800.0), 80.0),
                (rng.random_range(900.0..2200.0), 120.0),
                (rng.random_range(2400.0..3200.0), 160.0),
            ];
            let harmonics = (0.45 * sample_rate / f0_start.min(f0_end)) as usize;
            let mut phase = 0.0;
            for i in 0..len {
                let f0 = f0_start + (f0_end - f0_start) * i as f64 / len as f64;
                phase += 2.0 * PI * f0 / sample_rate;
                let mut v = 0.0;
                for h in 1..=harmonics {
                    let f = h as f64 * f0;
                    if f >= 0.45 * sample_rate {
                        break;
                    }
                    v += formant_gain(f, &formants) * SpectralShape::SpeechLike.amplitude(f) * (h as f64 * phase).sin();
                }
                out[pos + i] += env(i) * v;
            }
        } else {
            // Fricative: differentiated noise emphasizes high frequencies.
            for i in 0..len {
                let j = pos + i;
                let prev = if j > 0 { fricative_band[j - 1] } else { 0.0 };
                out[j] += 0.15 * env(i) * (fricative_band[j] - prev);
            }
        }
        pos += len;
        in_word += 1;
        let gap = if in_word >= rng.random_range(3..7) {
            in_word = 0;
            rng.random_range(200.0..500.0)
        } else {
            rng.random_range(30.0..150.0)
        };
        pos += ms(gap);
    }
    normalize_rms(&mut out);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffuseNoise {
    pub channels: Vec<Vec<f64>>,
    /// Pairs of microphones at (numerically) the same position.
    pub coincident_pairs: Vec<(usize, usize)>,
}

/// Multichannel noise whose pairwise coherence follows the spherically
/// isotropic model of `geometry`.
pub fn synthesize_diffuse(
    geometry: &ArrayGeometry,
    num_samples: usize,
    sample_rate: f64,
    shape: SpectralShape,
    seed: u64,
) -> Result<DiffuseNoise> {
    geometry.validate()?;
    if num_samples == 0 {
        return Err(Error::EmptyInput);
    }
    let n = geometry.num_mics();
    let mut coincident_pairs = vec![];
    for p in 0..n {
        for q in p + 1..n {
            if geometry.distance(p, q) < COINCIDENT_DISTANCE {
                coincident_pairs.push((p, q));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut planner = FftPlanner::new();
    let spectra: Vec<Vec<Complex64>> = (0..n)
        .map(|_| forward(&gaussian(num_samples, &mut rng), &mut planner))
        .collect();
    let mut mixed = vec![vec![Complex64::new(0.0, 0.0); num_samples]; n];
    // Bins k and N-k share a frequency; reuse the square root.
    for k in 0..=num_samples / 2 {
        let f = bin_frequency(k, num_samples, sample_rate);
        let amp = shape.amplitude(f);
        let root = psd_sqrt(diffuse_coherence_matrix(geometry, f));
        let mirror = (num_samples - k) % num_samples;
        for bin in [k, mirror] {
            for p in 0..n {
                let mut acc = Complex64::new(0.0, 0.0);
                for (q, spec) in spectra.iter().enumerate() {
                    acc += spec[bin] * root[(p, q)];
                }
                mixed[p][bin] = acc * amp;
            }
        }
    }
    let channels = mixed
        .into_iter()
        .map(|spec| inverse_real(spec, &mut planner))
        .collect();
    Ok(DiffuseNoise {
        channels,
        coincident_pairs,
    })
}

/// Copies of `source` advanced by each channel's TDOA, i.e.
/// `exp(j 2 pi f tau_n)` applied to the source spectrum.
pub fn steer_source(source: &[f64], tdoas: &[f64], sample_rate: f64) -> Vec<Vec<f64>> {
    let n = source.len();
    let mut planner = FftPlanner::new();
    let spec = forward(source, &mut planner);
    tdoas
        .iter()
        .map(|&tau| {
            let shifted: Vec<Complex64> = spec
                .iter()
                .enumerate()
                .map(|(k, v)| {
                    let f = signed_bin_frequency(k, n, sample_rate);
                    v * Complex64::from_polar(1.0, 2.0 * PI * f * tau)
                })
                .collect();
            inverse_real(shifted, &mut planner)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandCdr {
    pub low_hz: f64,
    pub high_hz: f64,
    pub cdr_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub sample_rate: f64,
    pub noise_shape: SpectralShape,
    pub seed: u64,
    /// Number of uniform bands in the reported CDR profile.
    pub profile_bands: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000.0,
            noise_shape: SpectralShape::SpeechLike,
            seed: 0,
            profile_bands: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub mixture: Vec<Vec<f64>>,
    pub direct: Vec<Vec<f64>>,
    pub diffuse: Vec<Vec<f64>>,
    pub doa: Doa,
    pub tdoas: Vec<f64>,
    pub ddr_db: f64,
    pub config: SceneConfig,
    pub band_cdr: Vec<BandCdr>,
}

fn energy(channels: &[Vec<f64>]) -> f64 {
    channels
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        / channels.len() as f64
}

/// Broadband direct-to-diffuse ratio in dB, averaged over channels.
pub fn broadband_ddr_db(direct: &[Vec<f64>], diffuse: &[Vec<f64>]) -> f64 {
    10.0 * (energy(direct) / energy(diffuse)).log10()
}

fn band_profile(
    direct: &[f64],
    diffuse: &[f64],
    sample_rate: f64,
    bands: usize,
) -> Vec<BandCdr> {
    let n = direct.len();
    let mut planner = FftPlanner::new();
    let sd = forward(direct, &mut planner);
    let sn = forward(diffuse, &mut planner);
    let nyquist = sample_rate / 2.0;
    let width = nyquist / bands as f64;
    let mut dir_e = vec![0.0; bands];
    let mut dif_e = vec![0.0; bands];
    for k in 0..=n / 2 {
        let f = k as f64 * sample_rate / n as f64;
        let b = ((f / width) as usize).min(bands - 1);
        dir_e[b] += sd[k].norm_sqr();
        dif_e[b] += sn[k].norm_sqr();
    }
    (0..bands)
        .map(|b| BandCdr {
            low_hz: b as f64 * width,
            high_hz: (b + 1) as f64 * width,
            cdr_db: 10.0 * (dir_e[b].max(1e-300) / dif_e[b].max(1e-300)).log10(),
        })
        .collect()
}

/// Plane-wave target from `doa` plus diffuse noise scaled so the broadband
/// direct-to-diffuse ratio equals `target_ddr_db`.
pub fn synthesize_scene(
    geometry: &ArrayGeometry,
    doa: Doa,
    source: &[f64],
    target_ddr_db: f64,
    config: &SceneConfig,
) -> Result<SyntheticScene> {
    geometry.validate()?;
    if source.is_empty() {
        return Err(Error::EmptyInput);
    }
    if source.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("source contains non-finite samples".into()));
    }
    if source.iter().all(|&v| v == 0.0) {
        return Err(Error::SilentSource);
    }
    if !target_ddr_db.is_finite() {
        return Err(Error::InvalidConfig(format!("DDR {target_ddr_db} dB")));
    }
    let taus = tdoas(geometry, &doa);
    let direct = steer_source(source, &taus, config.sample_rate);
    let noise = synthesize_diffuse(
        geometry,
        source.len(),
        config.sample_rate,
        config.noise_shape,
        config.seed.wrapping_add(0x5eed),
    )?;
    let ratio = 10f64.powf(target_ddr_db / 10.0);
    let gain = (energy(&direct) / (energy(&noise.channels) * ratio)).sqrt();
    let diffuse: Vec<Vec<f64>> = noise
        .channels
        .into_iter()
        .map(|c| c.into_iter().map(|v| v * gain).collect())
        .collect();
    let mixture = direct
        .iter()
        .zip(&diffuse)
        .map(|(d, n)| d.iter().zip(n).map(|(a, b)| a + b).collect())
        .collect();
    let band_cdr = band_profile(
        &direct[0],
        &diffuse[0],
        config.sample_rate,
        config.profile_bands.max(1),
    );
    Ok(SyntheticScene {
        mixture,
        direct,
        diffuse,
        doa,
        tdoas: taus,
        ddr_db: target_ddr_db,
        config: config.clone(),
        band_cdr,
    })
}

/// JSON sidecar describing a written scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMetadata {
    pub doa_azimuth_deg: f64,
    pub doa_elevation_deg: f64,
    pub ddr_db: f64,
    pub measured_ddr_db: f64,
    pub seed: u64,
    pub sample_rate: f64,
    pub num_samples: usize,
    pub tdoas_s: Vec<f64>,
    pub geometry: ArrayGeometry,
    pub band_cdr: Vec<BandCdr>,
    pub mixture_file: String,
    pub direct_file: String,
    pub diffuse_file: String,
}

impl SceneMetadata {
    pub fn describe(scene: &SyntheticScene, geometry: &ArrayGeometry) -> Self {
        Self {
            doa_azimuth_deg: scene.doa.azimuth.to_degrees(),
            doa_elevation_deg: scene.doa.elevation.to_degrees(),
            ddr_db: scene.ddr_db,
            measured_ddr_db: broadband_ddr_db(&scene.direct, &scene.diffuse),
            seed: scene.config.seed,
            sample_rate: scene.config.sample_rate,
            num_samples: scene.mixture[0].len(),
            tdoas_s: scene.tdoas.clone(),
            geometry: geometry.clone(),
            band_cdr: scene.band_cdr.clone(),
            mixture_file: "mixture.wav".into(),
            direct_file: "direct.wav".into(),
            diffuse_file: "diffuse.wav".into(),
        }
    }

    pub fn doa(&self) -> Doa {
        Doa::from_degrees(self.doa_azimuth_deg, self.doa_elevation_deg)
    }
}
