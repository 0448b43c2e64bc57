//! WAV reading (PCM16 or float-32, any channel count) and float-32 writing.

use std::path::Path;

use anyhow::{bail, Context, Result};
use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use rui_core::{AudioClip, Error, SAMPLE_RATE};

/// Loads a WAV file as a mono 16 kHz clip. Channels are averaged; PCM16 is
/// scaled by 1/32768.
pub fn load_wav(path: &Path) -> Result<AudioClip> {
    let mut reader =
        WavReader::open(path).with_context(|| format!("opening {}", path.display()))?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::Rate {
            found: spec.sample_rate,
        })
        .with_context(|| path.display().to_string());
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => bail!(
            "{}: unsupported codec {fmt:?} with {bits} bits per sample",
            path.display()
        ),
    };
    let ch = spec.channels.max(1) as usize;
    let samples: Vec<f32> = if ch == 1 {
        interleaved.into_iter().map(|v| v as f32).collect()
    } else {
        interleaved
            .chunks(ch)
            .map(|c| (c.iter().sum::<f64>() / ch as f64) as f32)
            .collect()
    };
    AudioClip::new(samples, spec.sample_rate).with_context(|| path.display().to_string())
}

/// Writes a mono float-32 WAV at the clip's sample rate.
pub fn save_wav(clip: &AudioClip, path: &Path) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate_hz,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut w =
        WavWriter::create(path, spec).with_context(|| format!("creating {}", path.display()))?;
    for &s in &clip.samples {
        w.write_sample(s)?;
    }
    w.finalize()
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
