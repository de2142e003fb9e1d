use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cdrpost_core::{
    enhance, CdrEstimatorKind, Diagnostics, Doa, DoaSource, EnhancementConfig, GccConfig, Grid,
    PairPolicy, PostfilterConfig, ScreeningConfig, WeightingMode,
};
use clap::ValueEnum;
use serde::Serialize;

use crate::{load_geometry, wav};

#[derive(Clone, Copy, ValueEnum)]
pub enum Weighting {
    Uniform,
    Correlation,
}

#[derive(clap::Args)]
pub struct Args {
    /// Input WAV (one multichannel file or one mono file per microphone), then the output WAV.
    #[arg(required = true, num_args = 2.., value_name = "PATHS")]
    paths: Vec<PathBuf>,
    /// CDR estimator: doaindep, doadep, thiergart or jeub.
    #[arg(long, default_value = "doadep")]
    estimator: CdrEstimatorKind,
    /// Overestimation factor [default: 1.1, 1.2, 0.4 or 0.8 depending on the estimator].
    #[arg(long)]
    mu: Option<f64>,
    /// Gain floor.
    #[arg(long, default_value_t = 0.1)]
    gmin: f64,
    /// Forgetting factor of the recursive PSD estimate.
    #[arg(long, default_value_t = 0.68)]
    lambda: f64,
    /// Array geometry JSON [default: bundled five-microphone array].
    #[arg(long)]
    geometry: Option<PathBuf>,
    /// Steering azimuth in degrees.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "estimate_doa")]
    doa_az: Option<f64>,
    /// Steering elevation in degrees from the array's z-axis.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "estimate_doa")]
    doa_el: Option<f64>,
    /// Track TDOAs with GCC-PHAT (the default when no direction is given).
    #[arg(long)]
    estimate_doa: bool,
    /// Output the beamformer signal without postfiltering.
    #[arg(long)]
    bypass_postfilter: bool,
    /// Drop channels that are far off in level or uncorrelated with the rest.
    #[arg(long)]
    screen_channels: bool,
    /// Channel weights of the beamformer.
    #[arg(long, value_enum, default_value = "uniform")]
    weighting: Weighting,
    /// Write D, CDR and gain grids plus the TDOA track to this directory.
    #[arg(long, value_name = "DIR")]
    dump_diagnostics: Option<PathBuf>,
    /// Recorded in the diagnostics header; processing itself is deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl Args {
    fn config(&self, sample_rate: f64) -> Result<EnhancementConfig> {
        let mut cfg = EnhancementConfig::default();
        cfg.filterbank.sample_rate = sample_rate;
        cfg.postfilter = PostfilterConfig {
            mu: self.mu.unwrap_or(self.estimator.default_mu()),
            g_min: self.gmin,
            estimator: self.estimator,
        };
        cfg.lambda = self.lambda;
        cfg.doa_source = match (self.doa_az, self.doa_el) {
            (None, None) => DoaSource::GccPhat(GccConfig::default_for(sample_rate)),
            (az, el) => DoaSource::Fixed(Doa::from_degrees(az.unwrap_or(0.0), el.unwrap_or(90.0))),
        };
        if self.screen_channels {
            cfg.pair_policy = PairPolicy::Screened(ScreeningConfig::default());
        }
        cfg.weighting = match self.weighting {
            Weighting::Uniform => WeightingMode::Uniform,
            Weighting::Correlation => WeightingMode::Correlation,
        };
        cfg.bypass_postfilter = self.bypass_postfilter;
        cfg.collect_diagnostics = self.dump_diagnostics.is_some();
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Serialize)]
struct GridFile<'a> {
    name: &'a str,
    file: String,
}

#[derive(Serialize)]
struct Header<'a> {
    frames: usize,
    bins: usize,
    dtype: &'static str,
    layout: &'static str,
    frame_rate_hz: f64,
    frequencies_hz: &'a [f64],
    grids: Vec<GridFile<'a>>,
    warmup_frames: usize,
    low_energy_estimates: usize,
    clamped_bins: usize,
    postfilter_bypassed: bool,
    config: &'a EnhancementConfig,
    seed: u64,
}

#[derive(Serialize)]
struct TdoaDump<'a> {
    segment_length: usize,
    segment_hop: usize,
    sample_rate: f64,
    active: &'a [bool],
    gains: &'a [Vec<f64>],
    tdoas_s: &'a [Vec<f64>],
    confidence: Option<&'a [f64]>,
    fallback: bool,
}

fn write_grid(path: &Path, grid: &Grid) -> Result<()> {
    let bytes: Vec<u8> = grid
        .data
        .iter()
        .flat_map(|&v| (v as f32).to_le_bytes())
        .collect();
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

fn dump(dir: &Path, diag: &Diagnostics, cfg: &EnhancementConfig, seed: u64) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let grids = [
        ("mean_diffuseness", &diag.mean_diffuseness),
        ("cdr_in", &diag.cdr_in),
        ("cdr_bf", &diag.cdr_bf),
        ("gain", &diag.gain),
    ];
    for (name, grid) in grids {
        write_grid(&dir.join(format!("{name}.f32")), grid)?;
    }
    let header = Header {
        frames: diag.gain.frames,
        bins: diag.gain.bins,
        dtype: "float32-le",
        layout: "row-major frames x bins",
        frame_rate_hz: diag.frame_rate,
        frequencies_hz: &diag.frequencies,
        grids: grids
            .iter()
            .map(|(name, _)| GridFile {
                name,
                file: format!("{name}.f32"),
            })
            .collect(),
        warmup_frames: diag.warmup_frames,
        low_energy_estimates: diag.low_energy_estimates,
        clamped_bins: diag.clamped_bins,
        postfilter_bypassed: diag.postfilter_bypassed,
        config: cfg,
        seed,
    };
    fs::write(dir.join("diagnostics.json"), serde_json::to_string_pretty(&header)?)?;
    let plan = &diag.plan;
    let tdoa = TdoaDump {
        segment_length: plan.weights.segmentation.length,
        segment_hop: plan.weights.segmentation.hop,
        sample_rate: cfg.filterbank.sample_rate,
        active: &plan.active,
        gains: &plan.weights.gains,
        tdoas_s: &plan.weights.tdoas,
        confidence: plan.track.as_ref().map(|t| t.confidence.as_slice()),
        fallback: plan.track.as_ref().is_some_and(|t| t.fallback),
    };
    fs::write(dir.join("tdoa.json"), serde_json::to_string_pretty(&tdoa)?)?;
    Ok(())
}

pub fn run(args: Args) -> Result<()> {
    let (output, inputs) = args.paths.split_last().expect("clap enforces two paths");
    let geometry = load_geometry(args.geometry.as_deref())?;
    let audio = wav::read(inputs)?;
    if audio.channels.len() != geometry.num_mics() {
        bail!(
            "input has {} channels but the geometry has {} microphones",
            audio.channels.len(),
            geometry.num_mics()
        );
    }
    let cfg = args.config(audio.sample_rate as f64)?;
    let result = enhance(&audio.channels, &geometry, &cfg)?;
    wav::write(output, &[&result.output], audio.sample_rate)?;
    if let Some(dir) = &args.dump_diagnostics {
        dump(dir, &result.diagnostics, &cfg, args.seed)?;
    }
    Ok(())
}
