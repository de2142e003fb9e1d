use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cdrpost_core::evaluation::{cdr_accuracy, EvaluationConfig};
use cdrpost_core::scene::{broadband_ddr_db, SceneMetadata};
use cdrpost_core::CdrEstimatorKind;
use serde::Serialize;

use crate::wav;

#[derive(clap::Args)]
pub struct Args {
    /// Scene directories (holding scene.json) or directories of scene directories.
    #[arg(required = true)]
    scenes: Vec<PathBuf>,
    /// Forgetting factors to evaluate, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0.68")]
    lambda: Vec<f64>,
    /// Estimators to evaluate, comma separated [default: all four].
    #[arg(long, value_delimiter = ',')]
    estimator: Vec<CdrEstimatorKind>,
    /// Bins more than this many dB below the strongest direct bin are ignored.
    #[arg(long, default_value_t = 40.0)]
    energy_range_db: f64,
    /// CSV destination [default: stdout].
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Serialize)]
struct Row {
    estimator: CdrEstimatorKind,
    true_cdr_db: f64,
    tdoa_us: f64,
    lambda: f64,
    median_err_db: f64,
    iqr_db: f64,
}

const SIDECAR: &str = "scene.json";

fn collect_scenes(roots: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut scenes = Vec::new();
    for root in roots {
        if root.join(SIDECAR).is_file() {
            scenes.push(root.clone());
            continue;
        }
        if !root.is_dir() {
            bail!("{} is not a scene directory", root.display());
        }
        let mut children: Vec<PathBuf> = fs::read_dir(root)
            .with_context(|| format!("cannot list {}", root.display()))?
            .map(|e| e.map(|e| e.path()))
            .collect::<io::Result<_>>()?;
        children.retain(|p| p.is_dir());
        children.sort();
        if children.is_empty() {
            bail!("no scenes in {} (missing {SIDECAR})", root.display());
        }
        for child in children {
            if !child.join(SIDECAR).is_file() {
                bail!("missing sidecar {}", child.join(SIDECAR).display());
            }
            scenes.push(child);
        }
    }
    Ok(scenes)
}

fn load_component(dir: &Path, file: &str, meta: &SceneMetadata) -> Result<Vec<Vec<f64>>> {
    let audio = wav::read(&[dir.join(file)])?;
    if audio.channels.len() != meta.geometry.num_mics() || audio.sample_rate as f64 != meta.sample_rate {
        bail!(
            "{}: {} channels at {} Hz disagree with the sidecar",
            dir.join(file).display(),
            audio.channels.len(),
            audio.sample_rate
        );
    }
    Ok(audio.channels)
}

fn max_pair_tdoa(tdoas: &[f64]) -> f64 {
    let hi = tdoas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = tdoas.iter().copied().fold(f64::INFINITY, f64::min);
    hi - lo
}

pub fn run(args: Args) -> Result<()> {
    let estimators = if args.estimator.is_empty() {
        CdrEstimatorKind::ALL.to_vec()
    } else {
        args.estimator.clone()
    };
    let scenes = collect_scenes(&args.scenes)?;
    let mut rows = Vec::new();
    for dir in &scenes {
        let path = dir.join(SIDECAR);
        let text =
            fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
        let meta: SceneMetadata =
            serde_json::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))?;
        let direct = load_component(dir, &meta.direct_file, &meta)?;
        let diffuse = load_component(dir, &meta.diffuse_file, &meta)?;
        let true_cdr_db = broadband_ddr_db(&direct, &diffuse);
        let tdoa_us = max_pair_tdoa(&meta.tdoas_s) * 1e6;
        for &lambda in &args.lambda {
            let mut cfg = EvaluationConfig {
                lambda,
                energy_range_db: args.energy_range_db,
                ..EvaluationConfig::default()
            };
            cfg.filterbank.sample_rate = meta.sample_rate;
            for &estimator in &estimators {
                let acc = cdr_accuracy(&direct, &diffuse, &meta.geometry, &meta.tdoas_s, estimator, &cfg)
                    .with_context(|| format!("{} with {estimator} at lambda {lambda}", dir.display()))?;
                rows.push(Row {
                    estimator,
                    true_cdr_db,
                    tdoa_us,
                    lambda,
                    median_err_db: acc.median_error_db,
                    iqr_db: acc.iqr_db,
                });
            }
        }
    }
    let sink: Box<dyn io::Write> = match &args.output {
        Some(p) => Box::new(fs::File::create(p).with_context(|| format!("cannot create {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    };
    let mut writer = csv::Writer::from_writer(sink);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}
