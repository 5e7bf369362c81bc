//! 16-bit PCM WAV.
use std::path::Path;

use lightavseg_core::audio::{resample_to_16k, Waveform, SAMPLE_RATE};

use crate::error::{format_err, Result};

/// Reads 16-bit PCM (mono or stereo, stereo averaged) and resamples to 16 kHz.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut r = hound::WavReader::open(path).map_err(|e| format_err!("{}: {e}", path.display()))?;
    let spec = r.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(format_err!(
            "{}: only 16-bit PCM is supported, got {:?} {} bit",
            path.display(),
            spec.sample_format,
            spec.bits_per_sample
        ));
    }
    let channels = spec.channels as usize;
    if !(1..=2).contains(&channels) {
        return Err(format_err!("{}: {} channels, expected mono or stereo", path.display(), channels));
    }
    let raw = r
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| format_err!("{}: {e}", path.display()))?;
    let samples = raw.chunks(channels).map(|c| c.iter().sum::<f64>() / channels as f64).collect();
    let w = Waveform::new(samples, spec.sample_rate)?;
    if w.sample_rate() == SAMPLE_RATE {
        Ok(w)
    } else {
        Ok(resample_to_16k(&w)?)
    }
}

/// Writes mono 16-bit PCM. Samples are rounded to `k/32768` and clipped.
pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let err = |e: hound::Error| format_err!("{}: {e}", path.display());
    let mut out = hound::WavWriter::create(path, spec).map_err(err)?;
    for &s in w.samples() {
        let v = (s * 32768.0).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        out.write_sample(v).map_err(err)?;
    }
    out.finalize().map_err(err)
}
