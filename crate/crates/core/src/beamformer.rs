//! Weighted delay-and-sum beamforming with GCC-PHAT TDOA estimation.
//!
//! Sign convention: a channel with TDOA `tau_n` carries the target as
//! `exp(j 2 pi f tau_n) S(f)` in the time-frequency domain, i.e. the time
//! signal is advanced by `tau_n`. The beamformer coefficient is
//! `w_n exp(-j 2 pi f tau_n)`, so a plane wave from the steered direction
//! passes with unit gain when the channel gains sum to one.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filterbank::{check_channels, FilterbankConfig, TfTensor};
use crate::spatial::{tdoas, ArrayGeometry, Doa};

/// Mean-square level below which a segment counts as silent.
const SILENCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GccPhatResult {
    /// Delay of `sig_q` relative to `sig_p` in seconds.
    pub delay: f64,
    /// Integer lag of the correlation peak in samples, before interpolation.
    pub peak_lag: i64,
    /// Height of the normalized correlation peak in `[0, 1]`.
    pub confidence: f64,
}

fn mean_square(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

/// GCC-PHAT delay estimate restricted to `|delay| <= max_lag` seconds, with
/// parabolic peak interpolation.
pub fn gcc_phat_tdoa(
    sig_p: &[f64],
    sig_q: &[f64],
    max_lag: f64,
    sample_rate: f64,
) -> Result<GccPhatResult> {
    if sig_p.len() != sig_q.len() {
        return Err(Error::ChannelLengthMismatch {
            channel: 1,
            len: sig_q.len(),
            expected: sig_p.len(),
        });
    }
    let len = sig_p.len();
    let max_lag_samples = (max_lag * sample_rate).ceil().max(1.0) as usize;
    if len == 0 || len < 4 * max_lag_samples {
        return Err(Error::InputTooShort {
            len,
            min: 4 * max_lag_samples,
        });
    }
    if mean_square(sig_p) < SILENCE_FLOOR || mean_square(sig_q) < SILENCE_FLOOR {
        return Ok(GccPhatResult {
            delay: 0.0,
            peak_lag: 0,
            confidence: 0.0,
        });
    }
    let nfft = (2 * len).next_power_of_two();
    let mut planner = FftPlanner::new();
    let forward = planner.plan_fft_forward(nfft);
    let inverse = planner.plan_fft_inverse(nfft);
    let spectrum = |x: &[f64]| {
        let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
        for (b, &v) in buf.iter_mut().zip(x) {
            b.re = v;
        }
        forward.process(&mut buf);
        buf
    };
    let sp = spectrum(sig_p);
    let mut cross = spectrum(sig_q);
    for (c, p) in cross.iter_mut().zip(&sp) {
        *c *= p.conj();
    }
    let peak_mag = cross.iter().map(|c| c.norm()).fold(0.0, f64::max);
    for c in cross.iter_mut() {
        let mag = c.norm();
        *c = if mag > 1e-12 * peak_mag {
            *c / mag
        } else {
            Complex64::new(0.0, 0.0)
        };
    }
    inverse.process(&mut cross);
    let scale = 1.0 / nfft as f64;
    let corr = |lag: isize| cross[lag.rem_euclid(nfft as isize) as usize].re * scale;

    let max_lag_samples = max_lag_samples.min(len - 1) as isize;
    let (best_lag, best) = (-max_lag_samples..=max_lag_samples)
        .map(|lag| (lag, corr(lag)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty lag range");
    let mut frac = 0.0;
    if best_lag.abs() < max_lag_samples {
        let (left, right) = (corr(best_lag - 1), corr(best_lag + 1));
        let curvature = left - 2.0 * best + right;
        if curvature < 0.0 {
            frac = (0.5 * (left - right) / curvature).clamp(-0.5, 0.5);
        }
    }
    Ok(GccPhatResult {
        delay: (best_lag as f64 + frac) / sample_rate,
        peak_lag: best_lag as i64,
        confidence: best.clamp(0.0, 1.0),
    })
}

/// Segmentation of an utterance for TDOA estimation and channel weighting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    /// Segment length in samples.
    pub length: usize,
    /// Distance between segment starts in samples.
    pub hop: usize,
}

impl Segmentation {
    /// 500 ms segments every 250 ms.
    pub fn default_for(sample_rate: f64) -> Self {
        Self {
            length: (0.5 * sample_rate).round() as usize,
            hop: (0.25 * sample_rate).round() as usize,
        }
    }

    pub fn count(&self, len: usize) -> usize {
        if len <= self.length {
            1
        } else {
            (len - self.length).div_ceil(self.hop) + 1
        }
    }

    pub fn range(&self, segment: usize, len: usize) -> std::ops::Range<usize> {
        let start = (segment * self.hop).min(len);
        start..(start + self.length).min(len)
    }

    /// Segment whose center is closest to sample position `t`.
    pub fn segment_at(&self, t: f64, count: usize) -> usize {
        let s = ((t - self.length as f64 / 2.0) / self.hop as f64).round();
        s.clamp(0.0, (count.max(1) - 1) as f64) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdoaTrack {
    pub segmentation: Segmentation,
    /// Per segment, per channel TDOA in seconds (reference channel 0 is 0).
    pub tdoas: Vec<Vec<f64>>,
    /// Per segment confidence (mean GCC-PHAT peak over channels).
    pub confidence: Vec<f64>,
    /// Set when no segment was confident and the zero-TDOA track was used.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GccConfig {
    pub segmentation: Segmentation,
    /// Segments with confidence below this are re-estimated from neighbors.
    pub confidence_threshold: f64,
    /// Extra lag allowance beyond the array aperture, in seconds.
    pub lag_guard: f64,
}

impl GccConfig {
    pub fn default_for(sample_rate: f64) -> Self {
        Self {
            segmentation: Segmentation::default_for(sample_rate),
            confidence_threshold: 0.1,
            lag_guard: 2.0 / sample_rate,
        }
    }
}

/// GCC-PHAT TDOAs of every channel against channel 0, per segment.
pub fn estimate_tdoa_track<S: AsRef<[f64]>>(
    audio: &[S],
    geometry: &ArrayGeometry,
    sample_rate: f64,
    cfg: &GccConfig,
) -> Result<TdoaTrack> {
    let len = check_channels(audio)?;
    if audio.len() != geometry.num_mics() {
        return Err(Error::DimensionMismatch(format!(
            "{} channels for {} microphones",
            audio.len(),
            geometry.num_mics()
        )));
    }
    let seg = cfg.segmentation;
    let count = seg.count(len);
    let mut tdoas_out = Vec::with_capacity(count);
    let mut confidence = Vec::with_capacity(count);
    for s in 0..count {
        let range = seg.range(s, len);
        let reference = &audio[0].as_ref()[range.clone()];
        let mut taus = vec![0.0; audio.len()];
        let mut conf = 0.0;
        for n in 1..audio.len() {
            let max_lag = geometry.distance(0, n) / geometry.speed_of_sound + cfg.lag_guard;
            let other = &audio[n].as_ref()[range.clone()];
            let est = match gcc_phat_tdoa(reference, other, max_lag, sample_rate) {
                Ok(est) => est,
                Err(Error::InputTooShort { .. }) => GccPhatResult {
                    delay: 0.0,
                    peak_lag: 0,
                    confidence: 0.0,
                },
                Err(e) => return Err(e),
            };
            // Channel n lags the reference by tau_0 - tau_n = -tau_n.
            taus[n] = -est.delay;
            conf += est.confidence;
        }
        tdoas_out.push(taus);
        confidence.push(if audio.len() > 1 {
            conf / (audio.len() - 1) as f64
        } else {
            1.0
        });
    }
    Ok(TdoaTrack {
        segmentation: seg,
        tdoas: tdoas_out,
        confidence,
        fallback: false,
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Replace low-confidence segments by the per-channel median of up to two
/// confident neighbors on each side. With no confident segment at all the
/// track falls back to zero TDOAs and is flagged.
pub fn segment_tdoa_smoothing(track: &TdoaTrack, threshold: f64) -> Result<TdoaTrack> {
    if track.tdoas.is_empty() {
        return Err(Error::EmptyInput);
    }
    let confident: Vec<usize> = (0..track.tdoas.len())
        .filter(|&s| track.confidence[s] >= threshold)
        .collect();
    let mut out = track.clone();
    if confident.is_empty() {
        for t in out.tdoas.iter_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
        out.fallback = true;
        return Ok(out);
    }
    let channels = track.tdoas[0].len();
    for s in 0..track.tdoas.len() {
        if track.confidence[s] >= threshold {
            continue;
        }
        let split = confident.partition_point(|&c| c < s);
        let lo = split.saturating_sub(2);
        let hi = (split + 2).min(confident.len());
        let neighbors = &confident[lo..hi];
        for n in 0..channels {
            let mut vals: Vec<f64> = neighbors.iter().map(|&c| track.tdoas[c][n]).collect();
            out.tdoas[s][n] = median(&mut vals);
        }
    }
    Ok(out)
}

/// Per-segment channel gains and TDOAs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamformerWeights {
    pub segmentation: Segmentation,
    pub gains: Vec<Vec<f64>>,
    pub tdoas: Vec<Vec<f64>>,
}

impl BeamformerWeights {
    /// Time-invariant weights steered to a known direction.
    pub fn fixed(geometry: &ArrayGeometry, doa: &Doa, gains: Vec<f64>) -> Result<Self> {
        let w = Self {
            segmentation: Segmentation {
                length: usize::MAX,
                hop: usize::MAX,
            },
            gains: vec![gains],
            tdoas: vec![tdoas(geometry, doa)],
        };
        w.validate()?;
        Ok(w)
    }

    pub fn from_track(track: &TdoaTrack, gains: Vec<Vec<f64>>) -> Result<Self> {
        let w = Self {
            segmentation: track.segmentation,
            gains,
            tdoas: track.tdoas.clone(),
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.gains.is_empty() || self.gains.len() != self.tdoas.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} gain segments, {} TDOA segments",
                self.gains.len(),
                self.tdoas.len()
            )));
        }
        let channels = self.gains[0].len();
        for (g, t) in self.gains.iter().zip(&self.tdoas) {
            if g.len() != channels || t.len() != channels {
                return Err(Error::DimensionMismatch("ragged beamformer weights".into()));
            }
            if g.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
                return Err(Error::InvalidConfig("channel gains must be >= 0".into()));
            }
            let sum: f64 = g.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidConfig(format!("channel gains sum to {sum}")));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidConfig("non-finite TDOA".into()));
            }
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.gains[0].len()
    }

    pub fn segments(&self) -> usize {
        self.gains.len()
    }

    /// Segment in effect at sample position `t`.
    pub fn segment_at(&self, t: f64) -> usize {
        if self.segments() == 1 {
            0
        } else {
            self.segmentation.segment_at(t, self.segments())
        }
    }

    /// Complex coefficients `w_n exp(-j 2 pi f tau_n)` for one segment.
    pub fn coefficients(&self, segment: usize, freq: f64) -> Vec<Complex64> {
        self.gains[segment]
            .iter()
            .zip(&self.tdoas[segment])
            .map(|(&w, &tau)| Complex64::from_polar(w, -2.0 * PI * freq * tau))
            .collect()
    }
}

/// Uniform gains over active channels.
pub fn uniform_gains(active: &[bool]) -> Vec<f64> {
    let count = active.iter().filter(|&&a| a).count().max(1) as f64;
    active.iter().map(|&a| if a { 1.0 / count } else { 0.0 }).collect()
}

/// `|sum_n W_n h_n - 1|` for a plane wave matching `tdoas`.
pub fn distortionless_error(gains: &[f64], tdoas: &[f64], freq: f64) -> f64 {
    let response: Complex64 = gains
        .iter()
        .zip(tdoas)
        .map(|(&w, &tau)| {
            let coef = Complex64::from_polar(w, -2.0 * PI * freq * tau);
            let steer = Complex64::from_polar(1.0, 2.0 * PI * freq * tau);
            coef * steer
        })
        .sum();
    (response - 1.0).norm()
}

/// Beamform one frame: `sum_n W_n X_n` per bin.
pub fn steer_and_sum_frame(
    frame: &[&[Complex64]],
    coefficients: &[Vec<Complex64>],
    out: &mut [Complex64],
) {
    for (k, o) in out.iter_mut().enumerate() {
        *o = frame
            .iter()
            .zip(&coefficients[k])
            .map(|(x, w)| w * x[k])
            .sum();
    }
}

/// Per-bin coefficient table for one segment.
pub fn coefficient_table(
    weights: &BeamformerWeights,
    segment: usize,
    config: &FilterbankConfig,
) -> Vec<Vec<Complex64>> {
    (0..config.bins())
        .map(|k| weights.coefficients(segment, config.bin_frequency(k)))
        .collect()
}

/// Beamform a tensor produced by [`crate::filterbank::analyze`]. Frame `l`
/// uses the segment containing its window center.
pub fn steer_and_sum(
    frames: &TfTensor,
    weights: &BeamformerWeights,
    config: &FilterbankConfig,
) -> Result<TfTensor> {
    if frames.channels() != weights.channels() {
        return Err(Error::DimensionMismatch(format!(
            "{} channels, weights for {}",
            frames.channels(),
            weights.channels()
        )));
    }
    if frames.bins() != config.bins() {
        return Err(Error::DimensionMismatch(format!(
            "{} bins, configuration has {}",
            frames.bins(),
            config.bins()
        )));
    }
    let mut out = TfTensor::zeros(1, frames.frames(), frames.bins());
    let mut cached: Option<(usize, Vec<Vec<Complex64>>)> = None;
    for l in 0..frames.frames() {
        let center = (l * config.hop) as f64 + config.window_length as f64 / 2.0;
        let seg = weights.segment_at(center);
        if cached.as_ref().map(|c| c.0) != Some(seg) {
            cached = Some((seg, coefficient_table(weights, seg, config)));
        }
        let table = &cached.as_ref().expect("cached").1;
        steer_and_sum_frame(&frames.frame_slice(l), table, out.frame_mut(0, l));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreeningConfig {
    /// Maximum broadband energy deviation from the median channel, in dB.
    pub max_energy_deviation_db: f64,
    /// Minimum peak normalized cross-correlation with at least one other channel.
    pub min_correlation: f64,
}

impl Default for ScreeningConfig {
    fn default() -> Self {
        Self {
            max_energy_deviation_db: 20.0,
            min_correlation: 0.2,
        }
    }
}

/// Peak normalized cross-correlation between all channel pairs within
/// `max_lag` samples.
pub fn peak_correlations<S: AsRef<[f64]>>(audio: &[S], max_lag: usize) -> Result<Vec<Vec<f64>>> {
    let len = check_channels(audio)?;
    let n = audio.len();
    let nfft = (2 * len).next_power_of_two();
    let mut planner = FftPlanner::new();
    let forward = planner.plan_fft_forward(nfft);
    let inverse = planner.plan_fft_inverse(nfft);
    let mut spectra = Vec::with_capacity(n);
    let mut energies = Vec::with_capacity(n);
    for ch in audio {
        let ch = ch.as_ref();
        energies.push(ch.iter().map(|v| v * v).sum::<f64>());
        let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
        for (b, &v) in buf.iter_mut().zip(ch) {
            b.re = v;
        }
        forward.process(&mut buf);
        spectra.push(buf);
    }
    let mut out = vec![vec![1.0; n]; n];
    let max_lag = max_lag.min(len - 1) as isize;
    for p in 0..n {
        for q in p + 1..n {
            let denom = (energies[p] * energies[q]).sqrt();
            let value = if denom <= 0.0 {
                0.0
            } else {
                let mut cross: Vec<Complex64> = spectra[q]
                    .iter()
                    .zip(&spectra[p])
                    .map(|(a, b)| a * b.conj())
                    .collect();
                inverse.process(&mut cross);
                (-max_lag..=max_lag)
                    .map(|lag| cross[lag.rem_euclid(nfft as isize) as usize].re.abs())
                    .fold(0.0, f64::max)
                    / (nfft as f64 * denom)
            };
            out[p][q] = value;
            out[q][p] = value;
        }
    }
    Ok(out)
}

/// Flag channels whose level deviates strongly from the median channel or
/// that correlate with no other channel. If every channel would be dropped,
/// all are kept.
pub fn screen_channels<S: AsRef<[f64]>>(
    audio: &[S],
    max_lag: usize,
    cfg: &ScreeningConfig,
) -> Result<Vec<bool>> {
    check_channels(audio)?;
    let n = audio.len();
    if n < 2 {
        return Ok(vec![true; n]);
    }
    let levels: Vec<f64> = audio
        .iter()
        .map(|c| 10.0 * (mean_square(c.as_ref()) + 1e-300).log10())
        .collect();
    let med = median(&mut levels.clone());
    let corr = peak_correlations(audio, max_lag)?;
    let active: Vec<bool> = (0..n)
        .map(|p| {
            let level_ok = (levels[p] - med).abs() <= cfg.max_energy_deviation_db;
            let corr_ok = (0..n)
                .filter(|&q| q != p)
                .any(|q| corr[p][q] >= cfg.min_correlation);
            level_ok && corr_ok
        })
        .collect();
    if active.iter().filter(|&&a| a).count() < 2 {
        return Ok(vec![true; n]);
    }
    Ok(active)
}

/// Gains proportional to each active channel's mean peak correlation with
/// the other active channels.
pub fn correlation_gains<S: AsRef<[f64]>>(
    audio: &[S],
    active: &[bool],
    max_lag: usize,
) -> Result<Vec<f64>> {
    let corr = peak_correlations(audio, max_lag)?;
    let n = audio.len();
    let raw: Vec<f64> = (0..n)
        .map(|p| {
            if !active[p] {
                return 0.0;
            }
            let others: Vec<f64> = (0..n)
                .filter(|&q| q != p && active[q])
                .map(|q| corr[p][q])
                .collect();
            if others.is_empty() {
                1.0
            } else {
                others.iter().sum::<f64>() / others.len() as f64
            }
        })
        .collect();
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Ok(uniform_gains(active));
    }
    Ok(raw.iter().map(|v| v / total).collect())
}
