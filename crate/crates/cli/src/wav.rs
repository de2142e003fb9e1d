use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

/// Planar audio and its sample rate.
pub struct Audio {
    pub channels: Vec<Vec<f64>>,
    pub sample_rate: u32,
}

fn read_file(path: &Path) -> Result<Audio> {
    let mut reader =
        WavReader::open(path).with_context(|| format!("cannot read {}", path.display()))?;
    let spec = reader.spec();
    let n = spec.channels as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>(),
        (SampleFormat::Int, bits @ 8..=32) => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<Result<_, _>>()
        }
        (format, bits) => bail!("{}: unsupported {bits}-bit {format:?} samples", path.display()),
    }
    .with_context(|| format!("cannot decode {}", path.display()))?;
    let channels = cdrpost_core::filterbank::deinterleave(&interleaved, n)
        .with_context(|| format!("{}: truncated frame", path.display()))?;
    Ok(Audio {
        channels,
        sample_rate: spec.sample_rate,
    })
}

/// One interleaved multichannel file, or several mono files in channel order.
pub fn read(paths: &[PathBuf]) -> Result<Audio> {
    if let [path] = paths {
        return read_file(path);
    }
    let mut channels = Vec::with_capacity(paths.len());
    let mut rate = None;
    for path in paths {
        let audio = read_file(path)?;
        if audio.channels.len() != 1 {
            bail!(
                "{} has {} channels; multiple inputs must be mono",
                path.display(),
                audio.channels.len()
            );
        }
        match rate {
            None => rate = Some(audio.sample_rate),
            Some(r) if r != audio.sample_rate => bail!(
                "{} is sampled at {} Hz, expected {r} Hz",
                path.display(),
                audio.sample_rate
            ),
            _ => {}
        }
        channels.extend(audio.channels);
    }
    let len = channels[0].len();
    if let Some((i, c)) = channels.iter().enumerate().find(|(_, c)| c.len() != len) {
        bail!(
            "{} has {} samples, expected {len}",
            paths[i].display(),
            c.len()
        );
    }
    Ok(Audio {
        channels,
        sample_rate: rate.unwrap_or(16_000),
    })
}

/// Write planar samples as interleaved 32-bit float.
pub fn write<S: AsRef<[f64]>>(path: &Path, channels: &[S], sample_rate: u32) -> Result<()> {
    let spec = WavSpec {
        channels: channels.len() as u16,
        sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer =
        WavWriter::create(path, spec).with_context(|| format!("cannot create {}", path.display()))?;
    let len = channels.first().map_or(0, |c| c.as_ref().len());
    for t in 0..len {
        for c in channels {
            writer.write_sample(c.as_ref()[t] as f32)?;
        }
    }
    writer
        .finalize()
        .with_context(|| format!("cannot finish {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let chans = vec![vec![0.5, -0.25, 0.0], vec![0.1, 0.2, 0.3]];
        write(&path, &chans, 16_000).unwrap();
        let audio = read(&[path]).unwrap();
        assert_eq!(audio.sample_rate, 16_000);
        for (a, b) in audio.channels.iter().flatten().zip(chans.iter().flatten()) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }

    #[test]
    fn pcm16_is_scaled_to_unit_range() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 8_000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        for v in [i16::MIN, 0, 16_384] {
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();
        let audio = read(&[path]).unwrap();
        assert_eq!(audio.channels, vec![vec![-1.0, 0.0, 0.5]]);
    }

    #[test]
    fn mono_files_must_agree_in_length() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.wav");
        let b = dir.path().join("b.wav");
        write(&a, &[vec![0.0; 4]], 16_000).unwrap();
        write(&b, &[vec![0.0; 5]], 16_000).unwrap();
        let err = read(&[a, b.clone()]).err().unwrap();
        assert!(err.to_string().contains("b.wav"));
    }
}
