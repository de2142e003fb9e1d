mod bench;
mod enhance;
mod synth;
mod wav;

use std::path::Path;
use std::process::ExitCode;

use anyhow::{Context, Result};
use cdrpost_core::ArrayGeometry;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cdrpost", version, about = "Beamforming and CDR-based postfiltering for microphone arrays")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Enhance a multichannel recording to a mono WAV.
    Enhance(enhance::Args),
    /// Generate a synthetic plane-wave plus diffuse-noise scene.
    Synth(synth::Args),
    /// Measure CDR estimation error on synthetic scenes.
    Bench(bench::Args),
}

/// Geometry from `path`, or the bundled five-microphone array.
pub fn load_geometry(path: Option<&Path>) -> Result<ArrayGeometry> {
    match path {
        Some(p) => ArrayGeometry::load(p).with_context(|| format!("geometry {}", p.display())),
        None => Ok(ArrayGeometry::chime_front5()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Enhance(args) => enhance::run(args),
        Command::Synth(args) => synth::run(args),
        Command::Bench(args) => bench::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
