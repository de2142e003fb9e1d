//! Filterbank -> beamformer -> coherence / CDR -> postfilter -> synthesis.
//!
//! [`Enhancer`] is the frame-sequential core. It accepts audio in chunks of
//! any size and carries all recursive state across chunk boundaries, so
//! chunked and one-shot processing perform the same arithmetic. The output is
//! aligned with the input and has the same length: the input is padded with
//! `window_length - hop` leading zeros (dropped again on output) and with
//! trailing zeros on [`Enhancer::finish`], so every input sample is covered
//! by the full set of overlapping frames.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::aggregation::{
    average_cdr, average_diffuseness, beamformer_output_cdr, diffuse_array_gain, input_cdr,
    PairSet,
};
use crate::beamformer::{
    coefficient_table, correlation_gains, estimate_tdoa_track, screen_channels,
    segment_tdoa_smoothing, steer_and_sum_frame, uniform_gains, BeamformerWeights, GccConfig,
    ScreeningConfig, TdoaTrack,
};
use crate::cdr::CdrValue;
use crate::coherence::{PsdState, COHERENCE_EPS, DEFAULT_LAMBDA};
use crate::error::{Error, Result};
use crate::filterbank::{check_channels, Filterbank, FilterbankConfig};
use crate::postfilter::{wiener_gain, PostfilterConfig};
use crate::spatial::{
    diffuse_coherence, diffuse_coherence_matrix, direct_coherence_from_tdoa, ArrayGeometry, Doa,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoaSource {
    Fixed(Doa),
    GccPhat(GccConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingMode {
    Uniform,
    Correlation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairPolicy {
    All,
    Screened(ScreeningConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhancementConfig {
    pub filterbank: FilterbankConfig,
    pub postfilter: PostfilterConfig,
    pub lambda: f64,
    pub pair_policy: PairPolicy,
    pub doa_source: DoaSource,
    pub weighting: WeightingMode,
    /// Force `G = 1` everywhere (beamformer only).
    pub bypass_postfilter: bool,
    /// Record per-bin grids in the diagnostics.
    pub collect_diagnostics: bool,
}

impl Default for EnhancementConfig {
    fn default() -> Self {
        let filterbank = FilterbankConfig::default();
        let gcc = GccConfig::default_for(filterbank.sample_rate);
        Self {
            filterbank,
            postfilter: PostfilterConfig::default(),
            lambda: DEFAULT_LAMBDA,
            pair_policy: PairPolicy::All,
            doa_source: DoaSource::GccPhat(gcc),
            weighting: WeightingMode::Uniform,
            bypass_postfilter: false,
            collect_diagnostics: true,
        }
    }
}

impl EnhancementConfig {
    pub fn with_doa(doa: Doa) -> Self {
        Self {
            doa_source: DoaSource::Fixed(doa),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.filterbank.validate()?;
        self.postfilter.validate()?;
        if !(0.0..1.0).contains(&self.lambda) {
            return Err(Error::InvalidConfig(format!(
                "forgetting factor {} outside [0, 1)",
                self.lambda
            )));
        }
        if let DoaSource::GccPhat(g) = &self.doa_source {
            if g.segmentation.length == 0 || g.segmentation.hop == 0 {
                return Err(Error::InvalidConfig("empty TDOA segments".into()));
            }
        }
        Ok(())
    }
}

/// Row-major `frames x bins` grid of reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn new(bins: usize) -> Self {
        Self {
            frames: 0,
            bins,
            data: vec![],
        }
    }

    pub fn filled(frames: usize, bins: usize, value: f64) -> Self {
        Self {
            frames,
            bins,
            data: vec![value; frames * bins],
        }
    }

    pub fn row(&self, frame: usize) -> &[f64] {
        &self.data[frame * self.bins..(frame + 1) * self.bins]
    }

    pub fn get(&self, frame: usize, bin: usize) -> f64 {
        self.data[frame * self.bins + bin]
    }

    fn push_row(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.bins);
        self.data.extend_from_slice(row);
        self.frames += 1;
    }
}

/// Beamformer steering and channel selection for one utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamformerPlan {
    pub weights: BeamformerWeights,
    pub active: Vec<bool>,
    pub track: Option<TdoaTrack>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub frame_rate: f64,
    pub frequencies: Vec<f64>,
    /// Mean pairwise diffuseness.
    pub mean_diffuseness: Grid,
    pub cdr_in: Grid,
    /// Arithmetic mean of the pairwise CDRs, for comparison with `cdr_in`.
    pub cdr_in_direct_mean: Grid,
    pub cdr_bf: Grid,
    pub gain: Grid,
    /// Frames whose gains were forced to one during PSD warm-up.
    pub warmup_frames: usize,
    /// Pair estimates that fell back to the diffuse model on low energy.
    pub low_energy_estimates: usize,
    /// Bins whose output CDR hit the upper limit.
    pub clamped_bins: usize,
    /// Postfilter disabled because fewer than two channels are usable.
    pub postfilter_bypassed: bool,
    pub plan: BeamformerPlan,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Enhancement {
    pub output: Vec<f64>,
    pub diagnostics: Diagnostics,
}

/// Where the per-bin gains come from.
#[derive(Debug, Clone, PartialEq)]
pub enum GainSource {
    /// Estimate CDRs and compute Wiener gains.
    Estimated,
    /// Apply a previously recorded gain grid (missing frames use 1).
    Replay(Grid),
}

struct SegmentTables {
    segment: usize,
    coefficients: Vec<Vec<Complex64>>,
    inv_array_gain: Vec<f64>,
    /// Per pair, per bin direct-path coherence.
    direct: Vec<Vec<Complex64>>,
}

/// Frame-sequential enhancement engine.
pub struct Enhancer {
    cfg: EnhancementConfig,
    fb: Filterbank,
    plan: BeamformerPlan,
    pairs: Option<PairSet>,
    psd: PsdState,
    gains: GainSource,
    /// Per bin diffuse coherence matrix.
    jdiff: Vec<DMatrix<f64>>,
    /// Per pair, per bin diffuse coherence, limited to `1 - COHERENCE_EPS`.
    diffuse: Vec<Vec<f64>>,
    tables: Option<SegmentTables>,
    input: Vec<VecDeque<f64>>,
    ola: Vec<f64>,
    pad: usize,
    frames: usize,
    samples_in: usize,
    samples_out: usize,
    skip: usize,
    diag: Diagnostics,
}

impl Enhancer {
    pub fn new(
        geometry: &ArrayGeometry,
        cfg: &EnhancementConfig,
        plan: BeamformerPlan,
        gains: GainSource,
    ) -> Result<Self> {
        cfg.validate()?;
        geometry.validate()?;
        plan.weights.validate()?;
        let channels = geometry.num_mics();
        if plan.weights.channels() != channels || plan.active.len() != channels {
            return Err(Error::DimensionMismatch(format!(
                "beamformer plan for {} channels, geometry has {channels}",
                plan.weights.channels()
            )));
        }
        let fb = Filterbank::new(cfg.filterbank.clone())?;
        let fcfg = fb.config().clone();
        let bins = fcfg.bins();
        let pairs = PairSet::from_active(&plan.active).ok();
        let freqs = fcfg.frequencies();
        let jdiff: Vec<DMatrix<f64>> = freqs
            .iter()
            .map(|&f| diffuse_coherence_matrix(geometry, f))
            .collect();
        let limit = 1.0 - COHERENCE_EPS;
        let diffuse = pairs
            .as_ref()
            .map(|ps| {
                ps.pairs()
                    .iter()
                    .map(|&(p, q)| {
                        freqs
                            .iter()
                            .map(|&f| {
                                diffuse_coherence(geometry.distance(p, q), f, geometry.speed_of_sound)
                                    .clamp(-limit, limit)
                            })
                            .collect()
                    })
                    .collect()
            })
            .unwrap_or_default();
        let pad = fcfg.window_length - fcfg.hop;
        let bypassed = pairs.is_none();
        let diag = Diagnostics {
            frame_rate: fcfg.frame_rate(),
            frequencies: freqs,
            mean_diffuseness: Grid::new(bins),
            cdr_in: Grid::new(bins),
            cdr_in_direct_mean: Grid::new(bins),
            cdr_bf: Grid::new(bins),
            gain: Grid::new(bins),
            warmup_frames: 0,
            low_energy_estimates: 0,
            clamped_bins: 0,
            postfilter_bypassed: bypassed,
            plan: plan.clone(),
        };
        Ok(Self {
            psd: PsdState::new(channels, bins, cfg.lambda)?,
            cfg: cfg.clone(),
            fb,
            plan,
            pairs,
            gains,
            jdiff,
            diffuse,
            tables: None,
            input: vec![std::iter::repeat_n(0.0, pad).collect(); channels],
            ola: vec![0.0; fcfg.window_length],
            pad,
            frames: 0,
            samples_in: 0,
            samples_out: 0,
            skip: pad,
            diag,
        })
    }

    pub fn channels(&self) -> usize {
        self.input.len()
    }

    /// Feed planar samples; returns every output sample that became final.
    pub fn push<S: AsRef<[f64]>>(&mut self, chunk: &[S]) -> Result<Vec<f64>> {
        if chunk.len() != self.channels() {
            return Err(Error::DimensionMismatch(format!(
                "chunk has {} channels, expected {}",
                chunk.len(),
                self.channels()
            )));
        }
        let len = chunk.first().map_or(0, |c| c.as_ref().len());
        if len == 0 {
            return Ok(vec![]);
        }
        check_channels(chunk)?;
        for (buf, ch) in self.input.iter_mut().zip(chunk) {
            buf.extend(ch.as_ref().iter().copied());
        }
        self.samples_in += len;
        let mut out = vec![];
        self.drain_frames(&mut out)?;
        Ok(out)
    }

    /// Flush the remaining samples; returns the final output samples and the
    /// diagnostics.
    pub fn finish(mut self) -> Result<(Vec<f64>, Diagnostics)> {
        let cfg = self.fb.config().clone();
        let total_padded = self.samples_in + self.pad;
        let frames_needed = total_padded.div_ceil(cfg.hop);
        let needed_len = if frames_needed == 0 {
            0
        } else {
            (frames_needed - 1) * cfg.hop + cfg.window_length
        };
        let consumed = self.frames * cfg.hop;
        let have = consumed + self.input[0].len();
        if needed_len > have {
            for buf in self.input.iter_mut() {
                buf.extend(std::iter::repeat_n(0.0, needed_len - have));
            }
        }
        let mut out = vec![];
        self.drain_frames(&mut out)?;
        debug_assert_eq!(self.samples_out, self.samples_in);
        Ok((out, self.diag))
    }

    fn drain_frames(&mut self, out: &mut Vec<f64>) -> Result<()> {
        let cfg = self.fb.config().clone();
        while self.input[0].len() >= cfg.window_length {
            let frame_out = self.process_frame()?;
            for buf in self.input.iter_mut() {
                buf.drain(..cfg.hop);
            }
            let take_from = self.skip.min(frame_out.len());
            self.skip -= take_from;
            let emitted = &frame_out[take_from..];
            // Never emit past the input length (trailing padding).
            let room = self.samples_in.saturating_sub(self.samples_out);
            let n = emitted.len().min(room);
            out.extend_from_slice(&emitted[..n]);
            self.samples_out += n;
        }
        Ok(())
    }

    fn segment_tables(&mut self, segment: usize) -> &SegmentTables {
        let stale = self.tables.as_ref().is_none_or(|t| t.segment != segment);
        if stale {
            let fcfg = self.fb.config();
            let coefficients = coefficient_table(&self.plan.weights, segment, fcfg);
            let inv_array_gain = coefficients
                .iter()
                .zip(&self.jdiff)
                .map(|(w, j)| diffuse_array_gain(w, j).expect("dimensions checked"))
                .collect();
            let tdoas = &self.plan.weights.tdoas[segment];
            let direct = self
                .pairs
                .as_ref()
                .map(|ps| {
                    ps.pairs()
                        .iter()
                        .map(|&(p, q)| {
                            (0..fcfg.bins())
                                .map(|k| {
                                    direct_coherence_from_tdoa(
                                        tdoas[p] - tdoas[q],
                                        fcfg.bin_frequency(k),
                                    )
                                })
                                .collect()
                        })
                        .collect()
                })
                .unwrap_or_default();
            self.tables = Some(SegmentTables {
                segment,
                coefficients,
                inv_array_gain,
                direct,
            });
        }
        self.tables.as_ref().expect("tables built")
    }

    fn process_frame(&mut self) -> Result<Vec<f64>> {
        let cfg = self.fb.config().clone();
        let bins = cfg.bins();
        let channels = self.channels();
        let mut spectra = vec![vec![Complex64::new(0.0, 0.0); bins]; channels];
        let mut segment_buf = vec![0.0; cfg.window_length];
        for (buf, spec) in self.input.iter().zip(spectra.iter_mut()) {
            for (dst, src) in segment_buf.iter_mut().zip(buf.iter()) {
                *dst = *src;
            }
            self.fb.analyze_frame(&segment_buf, spec);
        }
        let frame_refs: Vec<&[Complex64]> = spectra.iter().map(|s| s.as_slice()).collect();

        // Window center in input-sample coordinates.
        let center = (self.frames * cfg.hop) as f64 + cfg.window_length as f64 / 2.0
            - self.pad as f64;
        let segment = self.plan.weights.segment_at(center);
        self.segment_tables(segment);
        let tables = self.tables.as_ref().expect("tables built");

        let mut y_bf = vec![Complex64::new(0.0, 0.0); bins];
        steer_and_sum_frame(&frame_refs, &tables.coefficients, &mut y_bf);
        let warming = self.psd.is_warming_up();
        self.psd.update(&frame_refs)?;

        let collect = self.cfg.collect_diagnostics;
        let mut gain_row = vec![1.0; bins];
        let mut d_row = vec![1.0; bins];
        let mut cdr_in_row = vec![0.0; bins];
        let mut cdr_mean_row = vec![0.0; bins];
        let mut cdr_bf_row = vec![0.0; bins];

        match (&self.gains, &self.pairs) {
            (GainSource::Replay(grid), _) => {
                if self.frames < grid.frames {
                    gain_row.copy_from_slice(grid.row(self.frames));
                }
            }
            (GainSource::Estimated, Some(pairs)) => {
                let estimator = self.cfg.postfilter.estimator;
                let mut pair_vals = vec![CdrValue::default(); pairs.len()];
                for k in 0..bins {
                    for (i, &(p, q)) in pairs.pairs().iter().enumerate() {
                        let gn = self.diffuse[i][k];
                        let gx = self.psd.coherence(p, q, k, gn);
                        let mut v = estimator.estimate(gx.value, gn, Some(tables.direct[i][k]))?;
                        v.low_energy = gx.low_energy;
                        if gx.low_energy {
                            self.diag.low_energy_estimates += 1;
                        }
                        pair_vals[i] = v;
                    }
                    let d = average_diffuseness(&pair_vals)?;
                    let cdr_in = input_cdr(d);
                    let out = beamformer_output_cdr(cdr_in, tables.inv_array_gain[k]);
                    if out.clamped_high {
                        self.diag.clamped_bins += 1;
                    }
                    d_row[k] = d;
                    cdr_in_row[k] = cdr_in;
                    cdr_bf_row[k] = out.cdr;
                    if collect {
                        cdr_mean_row[k] = average_cdr(&pair_vals)?;
                    }
                    if !self.cfg.bypass_postfilter && !warming {
                        gain_row[k] = wiener_gain(out.cdr, &self.cfg.postfilter);
                    }
                }
                if warming {
                    self.diag.warmup_frames += 1;
                }
            }
            (GainSource::Estimated, None) => {}
        }

        if collect {
            self.diag.mean_diffuseness.push_row(&d_row);
            self.diag.cdr_in.push_row(&cdr_in_row);
            self.diag.cdr_in_direct_mean.push_row(&cdr_mean_row);
            self.diag.cdr_bf.push_row(&cdr_bf_row);
            self.diag.gain.push_row(&gain_row);
        }

        for (y, g) in y_bf.iter_mut().zip(&gain_row) {
            *y *= *g;
        }
        self.fb.synthesize_frame(&y_bf, &mut self.ola);
        let hop = cfg.hop;
        let emitted: Vec<f64> = self.ola[..hop].to_vec();
        self.ola.copy_within(hop.., 0);
        let n = self.ola.len();
        self.ola[n - hop..].iter_mut().for_each(|v| *v = 0.0);
        self.frames += 1;
        Ok(emitted)
    }
}

fn check_audio<S: AsRef<[f64]>>(audio: &[S], geometry: &ArrayGeometry) -> Result<usize> {
    let len = check_channels(audio)?;
    if audio.len() != geometry.num_mics() {
        return Err(Error::DimensionMismatch(format!(
            "{} audio channels for {} microphones",
            audio.len(),
            geometry.num_mics()
        )));
    }
    Ok(len)
}

/// Channel screening, TDOAs and channel gains for one utterance.
pub fn plan_beamformer<S: AsRef<[f64]>>(
    audio: &[S],
    geometry: &ArrayGeometry,
    cfg: &EnhancementConfig,
) -> Result<BeamformerPlan> {
    cfg.validate()?;
    check_audio(audio, geometry)?;
    let fs = cfg.filterbank.sample_rate;
    let max_lag = (geometry.max_distance() / geometry.speed_of_sound * fs).ceil() as usize + 2;
    let active = match &cfg.pair_policy {
        PairPolicy::All => vec![true; audio.len()],
        PairPolicy::Screened(sc) => screen_channels(audio, max_lag, sc)?,
    };
    let gains_for = |segment_audio: &[&[f64]]| -> Result<Vec<f64>> {
        match cfg.weighting {
            WeightingMode::Uniform => Ok(uniform_gains(&active)),
            WeightingMode::Correlation => correlation_gains(segment_audio, &active, max_lag),
        }
    };
    match &cfg.doa_source {
        DoaSource::Fixed(doa) => {
            let all: Vec<&[f64]> = audio.iter().map(|c| c.as_ref()).collect();
            let weights = BeamformerWeights::fixed(geometry, doa, gains_for(&all)?)?;
            Ok(BeamformerPlan {
                weights,
                active,
                track: None,
            })
        }
        DoaSource::GccPhat(gcc) => {
            let raw = estimate_tdoa_track(audio, geometry, fs, gcc)?;
            let track = segment_tdoa_smoothing(&raw, gcc.confidence_threshold)?;
            let len = audio[0].as_ref().len();
            let gains = (0..track.tdoas.len())
                .map(|s| {
                    let range = track.segmentation.range(s, len);
                    let seg: Vec<&[f64]> = audio.iter().map(|c| &c.as_ref()[range.clone()]).collect();
                    gains_for(&seg)
                })
                .collect::<Result<Vec<_>>>()?;
            let weights = BeamformerWeights::from_track(&track, gains)?;
            Ok(BeamformerPlan {
                weights,
                active,
                track: Some(track),
            })
        }
    }
}

fn run<S: AsRef<[f64]>>(
    audio: &[S],
    geometry: &ArrayGeometry,
    cfg: &EnhancementConfig,
    plan: BeamformerPlan,
    gains: GainSource,
) -> Result<Enhancement> {
    let mut enhancer = Enhancer::new(geometry, cfg, plan, gains)?;
    let mut output = enhancer.push(audio)?;
    let (tail, diagnostics) = enhancer.finish()?;
    output.extend(tail);
    Ok(Enhancement {
        output,
        diagnostics,
    })
}

/// One-shot enhancement of planar multichannel audio.
pub fn enhance<S: AsRef<[f64]>>(
    audio: &[S],
    geometry: &ArrayGeometry,
    cfg: &EnhancementConfig,
) -> Result<Enhancement> {
    let plan = plan_beamformer(audio, geometry, cfg)?;
    run(audio, geometry, cfg, plan, GainSource::Estimated)
}

/// Enhancement processed in chunks of `chunk_len` samples.
pub fn enhance_chunked<S: AsRef<[f64]>>(
    audio: &[S],
    geometry: &ArrayGeometry,
    cfg: &EnhancementConfig,
    chunk_len: usize,
) -> Result<Enhancement> {
    if chunk_len == 0 {
        return Err(Error::InvalidConfig("chunk length must be positive".into()));
    }
    let len = check_audio(audio, geometry)?;
    let plan = plan_beamformer(audio, geometry, cfg)?;
    let mut enhancer = Enhancer::new(geometry, cfg, plan, GainSource::Estimated)?;
    let mut output = Vec::with_capacity(len);
    let mut start = 0;
    while start < len {
        let end = (start + chunk_len).min(len);
        let chunk: Vec<&[f64]> = audio.iter().map(|c| &c.as_ref()[start..end]).collect();
        output.extend(enhancer.push(&chunk)?);
        start = end;
    }
    let (tail, diagnostics) = enhancer.finish()?;
    output.extend(tail);
    Ok(Enhancement {
        output,
        diagnostics,
    })
}

/// Beamform `audio` with `plan` and apply a recorded gain grid. With a grid
/// of ones this is the beamformer-only output.
pub fn apply_gains<S: AsRef<[f64]>>(
    audio: &[S],
    geometry: &ArrayGeometry,
    cfg: &EnhancementConfig,
    plan: &BeamformerPlan,
    gains: &Grid,
) -> Result<Vec<f64>> {
    let cfg = EnhancementConfig {
        collect_diagnostics: false,
        ..cfg.clone()
    };
    Ok(run(audio, geometry, &cfg, plan.clone(), GainSource::Replay(gains.clone()))?.output)
}

/// Beamformer output without postfilter.
pub fn beamformer_only<S: AsRef<[f64]>>(
    audio: &[S],
    geometry: &ArrayGeometry,
    cfg: &EnhancementConfig,
    plan: &BeamformerPlan,
) -> Result<Vec<f64>> {
    apply_gains(audio, geometry, cfg, plan, &Grid::new(cfg.filterbank.bins()))
}
