//! DFT filterbank analysis and synthesis.
//!
//! The analysis window may be longer than the transform. In that case each
//! windowed frame is time-aliased (folded) onto `fft_size` samples before the
//! transform, which yields a polyphase DFT filterbank. With
//! `window_length == fft_size` this reduces to an ordinary STFT.
//!
//! The synthesis window is the minimum-norm solution of the perfect
//! reconstruction conditions for the chosen analysis window, hop and folding
//! factor, so `synthesize(analyze(x))` reproduces `x` on the interior region
//! up to rounding.

use std::f64::consts::PI;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowShape {
    Hann,
    SqrtHann,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterbankConfig {
    pub window_length: usize,
    pub fft_size: usize,
    pub hop: usize,
    pub sample_rate: f64,
    pub window_shape: WindowShape,
}

impl Default for FilterbankConfig {
    /// Polyphase filterbank: window 1024, FFT 512, hop 128 at 16 kHz.
    fn default() -> Self {
        Self {
            window_length: 1024,
            fft_size: 512,
            hop: 128,
            sample_rate: 16_000.0,
            window_shape: WindowShape::Hann,
        }
    }
}

impl FilterbankConfig {
    /// Plain STFT fallback: window = FFT = 1024, hop 128 at 16 kHz.
    pub fn stft() -> Self {
        Self {
            window_length: 1024,
            fft_size: 1024,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.hop == 0 {
            return bad("hop must be positive".into());
        }
        if self.fft_size < self.hop {
            return bad(format!(
                "fft_size {} smaller than hop {}",
                self.fft_size, self.hop
            ));
        }
        if self.window_length < self.fft_size {
            return bad(format!(
                "window_length {} smaller than fft_size {}",
                self.window_length, self.fft_size
            ));
        }
        if !self.window_length.is_multiple_of(self.fft_size) {
            return bad(format!(
                "window_length {} is not a multiple of fft_size {}",
                self.window_length, self.fft_size
            ));
        }
        if !self.fft_size.is_multiple_of(2) {
            return bad("fft_size must be even".into());
        }
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return bad(format!("sample_rate {} must be positive", self.sample_rate));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Center frequency of bin `k` in Hz.
    pub fn bin_frequency(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate / self.fft_size as f64
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.bins()).map(|k| self.bin_frequency(k)).collect()
    }

    /// Frames produced by [`analyze`] for a signal of `len` samples.
    pub fn num_frames(&self, len: usize) -> usize {
        if len < self.window_length {
            0
        } else {
            (len - self.window_length) / self.hop + 1
        }
    }

    /// Output length of [`synthesize`] for `frames` frames.
    pub fn synthesis_len(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop + self.window_length
        }
    }

    /// Samples that are covered by every frame they overlap, i.e. free of
    /// edge effects after synthesis.
    pub fn interior_range(&self, frames: usize) -> Range<usize> {
        let start = self.window_length - self.hop;
        let end = frames * self.hop;
        start..end.max(start)
    }

    pub fn frame_rate(&self) -> f64 {
        self.sample_rate / self.hop as f64
    }
}

/// Complex time-frequency data, laid out channel-major then frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TfTensor {
    channels: usize,
    frames: usize,
    bins: usize,
    data: Vec<Complex64>,
}

impl TfTensor {
    pub fn zeros(channels: usize, frames: usize, bins: usize) -> Self {
        Self {
            channels,
            frames,
            bins,
            data: vec![Complex64::new(0.0, 0.0); channels * frames * bins],
        }
    }

    pub fn from_vec(
        channels: usize,
        frames: usize,
        bins: usize,
        data: Vec<Complex64>,
    ) -> Result<Self> {
        if data.len() != channels * frames * bins {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {channels}x{frames}x{bins} tensor",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            frames,
            bins,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    fn offset(&self, channel: usize, frame: usize) -> usize {
        (channel * self.frames + frame) * self.bins
    }

    pub fn get(&self, channel: usize, frame: usize, bin: usize) -> Complex64 {
        self.data[self.offset(channel, frame) + bin]
    }

    pub fn set(&mut self, channel: usize, frame: usize, bin: usize, value: Complex64) {
        let off = self.offset(channel, frame);
        self.data[off + bin] = value;
    }

    /// Spectrum of one channel at one frame.
    pub fn frame(&self, channel: usize, frame: usize) -> &[Complex64] {
        let off = self.offset(channel, frame);
        &self.data[off..off + self.bins]
    }

    pub fn frame_mut(&mut self, channel: usize, frame: usize) -> &mut [Complex64] {
        let off = self.offset(channel, frame);
        &mut self.data[off..off + self.bins]
    }

    /// Spectra of every channel at frame `frame`.
    pub fn frame_slice(&self, frame: usize) -> Vec<&[Complex64]> {
        (0..self.channels).map(|c| self.frame(c, frame)).collect()
    }

    /// Single-channel tensor holding channel `channel`.
    pub fn channel(&self, channel: usize) -> TfTensor {
        let start = self.offset(channel, 0);
        let end = start + self.frames * self.bins;
        TfTensor {
            channels: 1,
            frames: self.frames,
            bins: self.bins,
            data: self.data[start..end].to_vec(),
        }
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }
}

fn window(shape: WindowShape, len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| {
            let hann = 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos();
            match shape {
                WindowShape::Hann => hann,
                WindowShape::SqrtHann => hann.sqrt(),
            }
        })
        .collect()
}

/// Minimum-norm synthesis window for analysis window `h`.
///
/// For every residue `n0` modulo the hop, the taps `g[n0 + i*hop]` must satisfy
/// `sum_i g[m_i] h[m_i + r*fft_size] = delta(r)` for all alias orders `r`.
fn design_synthesis_window(h: &[f64], fft_size: usize, hop: usize) -> Result<Vec<f64>> {
    let len = h.len();
    let max_alias = ((len - 1) / fft_size) as isize;
    let mut g = vec![0.0; len];
    for n0 in 0..hop.min(len) {
        let taps: Vec<usize> = (n0..len).step_by(hop).collect();
        let orders: Vec<isize> = (-max_alias..=max_alias).collect();
        let a = DMatrix::from_fn(orders.len(), taps.len(), |row, col| {
            let idx = taps[col] as isize + orders[row] * fft_size as isize;
            if (0..len as isize).contains(&idx) {
                h[idx as usize]
            } else {
                0.0
            }
        });
        let target = DVector::from_iterator(
            orders.len(),
            orders.iter().map(|&r| if r == 0 { 1.0 } else { 0.0 }),
        );
        let pinv = a
            .clone()
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::InvalidConfig(format!("synthesis window design: {e}")))?;
        let solution = pinv * &target;
        let residual = (&a * &solution - &target).norm();
        if !residual.is_finite() || residual > 1e-8 {
            return Err(Error::InvalidConfig(format!(
                "no perfect-reconstruction synthesis window (residual {residual:.2e})"
            )));
        }
        for (&tap, &value) in taps.iter().zip(solution.iter()) {
            g[tap] = value;
        }
    }
    Ok(g)
}

/// Precomputed windows and FFT plans for one configuration.
#[derive(Clone)]
pub struct Filterbank {
    config: FilterbankConfig,
    analysis_window: Vec<f64>,
    synthesis_window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Filterbank {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Filterbank")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl Filterbank {
    pub fn new(config: FilterbankConfig) -> Result<Self> {
        config.validate()?;
        let analysis_window = window(config.window_shape, config.window_length);
        let synthesis_window =
            design_synthesis_window(&analysis_window, config.fft_size, config.hop)?;
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(config.fft_size);
        let inverse = planner.plan_fft_inverse(config.fft_size);
        Ok(Self {
            config,
            analysis_window,
            synthesis_window,
            forward,
            inverse,
        })
    }

    pub fn config(&self) -> &FilterbankConfig {
        &self.config
    }

    pub fn analysis_window(&self) -> &[f64] {
        &self.analysis_window
    }

    pub fn synthesis_window(&self) -> &[f64] {
        &self.synthesis_window
    }

    /// Window, fold and transform one frame of `window_length` samples.
    pub fn analyze_frame(&self, segment: &[f64], out: &mut [Complex64]) {
        let k = self.config.fft_size;
        debug_assert_eq!(segment.len(), self.config.window_length);
        debug_assert_eq!(out.len(), self.config.bins());
        let mut buf = vec![Complex64::new(0.0, 0.0); k];
        for (i, (&x, &w)) in segment.iter().zip(&self.analysis_window).enumerate() {
            buf[i % k].re += x * w;
        }
        self.forward.process(&mut buf);
        out.copy_from_slice(&buf[..out.len()]);
    }

    /// Inverse-transform one half spectrum, apply the synthesis window and
    /// add the result into `acc` (length `window_length`).
    pub fn synthesize_frame(&self, spectrum: &[Complex64], acc: &mut [f64]) {
        let k = self.config.fft_size;
        debug_assert_eq!(spectrum.len(), self.config.bins());
        let mut buf = vec![Complex64::new(0.0, 0.0); k];
        buf[..spectrum.len()].copy_from_slice(spectrum);
        // Hermitian completion; DC and Nyquist must be real for a real output.
        buf[0].im = 0.0;
        buf[k / 2].im = 0.0;
        for i in 1..k / 2 {
            buf[k - i] = buf[i].conj();
        }
        self.inverse.process(&mut buf);
        let scale = 1.0 / k as f64;
        for (m, (a, &g)) in acc.iter_mut().zip(&self.synthesis_window).enumerate() {
            *a += g * buf[m % k].re * scale;
        }
    }

    pub fn analyze<S: AsRef<[f64]>>(&self, audio: &[S]) -> Result<TfTensor> {
        let len = check_channels(audio)?;
        let cfg = &self.config;
        if len < cfg.window_length {
            return Err(Error::InputTooShort {
                len,
                min: cfg.window_length,
            });
        }
        let frames = cfg.num_frames(len);
        let mut tf = TfTensor::zeros(audio.len(), frames, cfg.bins());
        for (c, channel) in audio.iter().enumerate() {
            let channel = channel.as_ref();
            for l in 0..frames {
                let start = l * cfg.hop;
                self.analyze_frame(
                    &channel[start..start + cfg.window_length],
                    tf.frame_mut(c, l),
                );
            }
        }
        Ok(tf)
    }

    pub fn synthesize(&self, tf: &TfTensor) -> Result<Vec<f64>> {
        let cfg = &self.config;
        if tf.channels() != 1 {
            return Err(Error::DimensionMismatch(format!(
                "synthesis expects one channel, got {}",
                tf.channels()
            )));
        }
        if tf.bins() != cfg.bins() {
            return Err(Error::DimensionMismatch(format!(
                "tensor has {} bins, configuration expects {}",
                tf.bins(),
                cfg.bins()
            )));
        }
        let mut out = vec![0.0; cfg.synthesis_len(tf.frames())];
        for l in 0..tf.frames() {
            let start = l * cfg.hop;
            self.synthesize_frame(
                tf.frame(0, l),
                &mut out[start..start + cfg.window_length],
            );
        }
        Ok(out)
    }
}

/// Common length of all channels.
pub(crate) fn check_channels<S: AsRef<[f64]>>(audio: &[S]) -> Result<usize> {
    let first = audio.first().ok_or(Error::EmptyInput)?.as_ref().len();
    if first == 0 {
        return Err(Error::EmptyInput);
    }
    for (channel, ch) in audio.iter().enumerate() {
        let len = ch.as_ref().len();
        if len != first {
            return Err(Error::ChannelLengthMismatch {
                channel,
                len,
                expected: first,
            });
        }
    }
    Ok(first)
}

/// Analyze planar multichannel audio.
pub fn analyze<S: AsRef<[f64]>>(audio: &[S], config: &FilterbankConfig) -> Result<TfTensor> {
    Filterbank::new(config.clone())?.analyze(audio)
}

/// Resynthesize a single-channel tensor.
pub fn synthesize(tf: &TfTensor, config: &FilterbankConfig) -> Result<Vec<f64>> {
    Filterbank::new(config.clone())?.synthesize(tf)
}

/// Split an interleaved buffer into planar channels.
pub fn deinterleave(interleaved: &[f64], channels: usize) -> Result<Vec<Vec<f64>>> {
    if channels == 0 || !interleaved.len().is_multiple_of(channels) {
        return Err(Error::DimensionMismatch(format!(
            "{} samples cannot be split into {channels} channels",
            interleaved.len()
        )));
    }
    let mut out = vec![Vec::with_capacity(interleaved.len() / channels); channels];
    for frame in interleaved.chunks_exact(channels) {
        for (c, &s) in frame.iter().enumerate() {
            out[c].push(s);
        }
    }
    Ok(out)
}
