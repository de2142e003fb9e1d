use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use cdrpost_core::scene::{
    modulated_speech_source, speech_shaped_source, synthesize_scene, voiced_speech_source,
    SceneConfig, SceneMetadata,
};
use cdrpost_core::Doa;
use clap::ValueEnum;

use crate::{load_geometry, wav};

#[derive(Clone, Copy, ValueEnum)]
pub enum Source {
    /// Stationary noise with a speech-like long-term spectrum.
    Speech,
    /// The same noise under a 4 Hz syllable envelope.
    Modulated,
    /// Harmonic syllables with formants, fricatives and pauses.
    Voiced,
}

#[derive(clap::Args)]
pub struct Args {
    /// Array geometry JSON [default: bundled five-microphone array].
    #[arg(long)]
    geometry: Option<PathBuf>,
    /// Broadband direct-to-diffuse ratio in dB.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    ddr_db: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Source azimuth in degrees.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    doa_az: f64,
    /// Source elevation in degrees from the array's z-axis.
    #[arg(long, default_value_t = 90.0, allow_hyphen_values = true)]
    doa_el: f64,
    /// Length in seconds.
    #[arg(long, default_value_t = 10.0, allow_hyphen_values = true)]
    duration: f64,
    #[arg(long, default_value_t = 16_000)]
    sample_rate: u32,
    #[arg(long, value_enum, default_value = "speech")]
    source: Source,
    /// Directory for mixture.wav, direct.wav, diffuse.wav and scene.json.
    #[arg(long, default_value = "scene")]
    out_dir: PathBuf,
}

pub fn run(args: Args) -> Result<()> {
    if !(args.duration.is_finite() && args.duration > 0.0) {
        bail!("duration must be positive, got {}", args.duration);
    }
    if !args.ddr_db.is_finite() {
        bail!("DDR must be finite, got {}", args.ddr_db);
    }
    if args.sample_rate == 0 {
        bail!("sample rate must be positive");
    }
    let geometry = load_geometry(args.geometry.as_deref())?;
    let fs_hz = args.sample_rate as f64;
    let len = (args.duration * fs_hz).round() as usize;
    if len == 0 {
        bail!("duration {} s is shorter than one sample", args.duration);
    }
    let source = match args.source {
        Source::Speech => speech_shaped_source(len, fs_hz, args.seed),
        Source::Modulated => modulated_speech_source(len, fs_hz, args.seed),
        Source::Voiced => voiced_speech_source(len, fs_hz, args.seed),
    }?;
    let cfg = SceneConfig {
        sample_rate: fs_hz,
        seed: args.seed,
        ..SceneConfig::default()
    };
    let doa = Doa::from_degrees(args.doa_az, args.doa_el);
    let scene = synthesize_scene(&geometry, doa, &source, args.ddr_db, &cfg)?;
    let meta = SceneMetadata::describe(&scene, &geometry);
    let dir = &args.out_dir;
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    wav::write(&dir.join(&meta.mixture_file), &scene.mixture, args.sample_rate)?;
    wav::write(&dir.join(&meta.direct_file), &scene.direct, args.sample_rate)?;
    wav::write(&dir.join(&meta.diffuse_file), &scene.diffuse, args.sample_rate)?;
    fs::write(dir.join("scene.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}
