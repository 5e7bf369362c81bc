//! Log-mel frontend: 16 kHz mono audio to one 96×64 window per visual frame.
//!
//! 25 ms Hann frames (400 samples) every 10 ms (160 samples), a 512-point FFT,
//! power spectrum, 64 triangular filters on the HTK mel scale between 125 Hz
//! and 7.5 kHz, then `ln(energy + 1e-10)`. Consecutive runs of 96 frames form a
//! window; window `i` is paired with visual frame `i`.
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{contract_err, Result};
use crate::rng::RngState;
use crate::tensor::Tensor;

pub const SAMPLE_RATE: u32 = 16_000;
pub const FRAME_LEN: usize = 400;
pub const HOP: usize = 160;
pub const FFT_SIZE: usize = 512;
pub const MEL_BINS: usize = 64;
pub const FRAMES_PER_WINDOW: usize = 96;
pub const MEL_LOW_HZ: f64 = 125.0;
pub const MEL_HIGH_HZ: f64 = 7500.0;
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(contract_err!("sample rate must be positive"));
        }
        if let Some(bad) = samples.iter().find(|s| !(s.abs() <= 1.0 + 1e-6)) {
            return Err(contract_err!("sample {} outside [-1, 1]", bad));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// Multiplies every sample by `gain`, failing if the result clips.
    pub fn scaled(&self, gain: f64) -> Result<Self> {
        Self::new(self.samples.iter().map(|s| s * gain).collect(), self.sample_rate_hz)
    }
}

/// Per-clip log-mel features, `[T, 96, 64]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    windows: Tensor,
    /// STFT frames that fell past the end of the audio and were filled with silence.
    pub padded_frames: usize,
}

impl Spectrogram {
    pub fn new(windows: Tensor, padded_frames: usize) -> Result<Self> {
        match windows.shape() {
            [_, FRAMES_PER_WINDOW, MEL_BINS] => Ok(Self {
                windows,
                padded_frames,
            }),
            s => Err(crate::error::dim_err!("spectrogram must be [T, 96, 64], got {:?}", s)),
        }
    }

    pub fn windows(&self) -> &Tensor {
        &self.windows
    }

    pub fn num_windows(&self) -> usize {
        self.windows.shape()[0]
    }

    pub fn is_padded(&self) -> bool {
        self.padded_frames > 0
    }

    /// Windows `[start, start+len)`.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        Ok(Self {
            windows: self.windows.slice_batch(start, len)?,
            padded_frames: 0,
        })
    }
}

/// Linear-interpolation resampling to 16 kHz. Output sample `k` reads the
/// source at position `k · rate / 16000`, clamped to the last sample.
pub fn resample_to_16k(w: &Waveform) -> Result<Waveform> {
    if w.samples.is_empty() {
        return Err(contract_err!("cannot resample an empty waveform"));
    }
    if w.sample_rate_hz < 8_000 {
        return Err(contract_err!("source rate {} Hz below 8 kHz", w.sample_rate_hz));
    }
    if w.sample_rate_hz == SAMPLE_RATE {
        return Ok(w.clone());
    }
    let n = w.samples.len();
    let ratio = w.sample_rate_hz as f64 / SAMPLE_RATE as f64;
    let out_len = ((n as u64 * SAMPLE_RATE as u64 + w.sample_rate_hz as u64 / 2) / w.sample_rate_hz as u64).max(1) as usize;
    let last = n - 1;
    let samples = (0..out_len)
        .map(|k| {
            let pos = k as f64 * ratio;
            let i = (libm::floor(pos) as usize).min(last);
            let j = (i + 1).min(last);
            let f = (pos - i as f64).clamp(0.0, 1.0);
            w.samples[i] * (1.0 - f) + w.samples[j] * f
        })
        .collect();
    Waveform::new(samples, SAMPLE_RATE)
}

/// In-place iterative radix-2 FFT. `re.len()` must be a power of two.
pub fn fft_in_place(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    debug_assert!(n.is_power_of_two() && im.len() == n);
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = -2.0 * PI / len as f64;
        for start in (0..n).step_by(len) {
            for k in 0..len / 2 {
                let (s, c) = libm::sincos(ang * k as f64);
                let (a, b) = (start + k, start + k + len / 2);
                let tr = re[b] * c - im[b] * s;
                let ti = re[b] * s + im[b] * c;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
            }
        }
        len <<= 1;
    }
}

/// `|FFT|²` of a zero-padded real frame, bins `0..=FFT_SIZE/2`.
pub fn power_spectrum(frame: &[f64]) -> Vec<f64> {
    let mut re = vec![0.0; FFT_SIZE];
    let mut im = vec![0.0; FFT_SIZE];
    re[..frame.len()].copy_from_slice(frame);
    fft_in_place(&mut re, &mut im);
    (0..=FFT_SIZE / 2).map(|k| re[k] * re[k] + im[k] * im[k]).collect()
}

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * libm::cos(2.0 * PI * n as f64 / len as f64))
        .collect()
}

pub fn hz_to_mel(hz: f64) -> f64 {
    1127.0 * libm::log(1.0 + hz / 700.0)
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (libm::exp(mel / 1127.0) - 1.0)
}

/// Triangular filters, `[64][257]`, peak weight one at each centre.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    weights: Vec<Vec<f64>>,
    edges_mel: Vec<f64>,
}

impl Default for MelFilterbank {
    fn default() -> Self {
        Self::new()
    }
}

impl MelFilterbank {
    pub fn new() -> Self {
        let (lo, hi) = (hz_to_mel(MEL_LOW_HZ), hz_to_mel(MEL_HIGH_HZ));
        let edges_mel: Vec<f64> = (0..MEL_BINS + 2)
            .map(|i| lo + (hi - lo) * i as f64 / (MEL_BINS + 1) as f64)
            .collect();
        let bins = FFT_SIZE / 2 + 1;
        let bin_mel: Vec<f64> = (0..bins)
            .map(|k| hz_to_mel(k as f64 * SAMPLE_RATE as f64 / FFT_SIZE as f64))
            .collect();
        let weights = (0..MEL_BINS)
            .map(|m| {
                let (l, c, r) = (edges_mel[m], edges_mel[m + 1], edges_mel[m + 2]);
                bin_mel
                    .iter()
                    .enumerate()
                    .map(|(k, &x)| {
                        if k == 0 {
                            return 0.0;
                        }
                        let up = (x - l) / (c - l);
                        let down = (r - x) / (r - c);
                        up.min(down).max(0.0)
                    })
                    .collect()
            })
            .collect();
        Self { weights, edges_mel }
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    /// Centre frequency of each filter in Hz.
    pub fn center_hz(&self) -> Vec<f64> {
        self.edges_mel[1..=MEL_BINS].iter().map(|&m| mel_to_hz(m)).collect()
    }

    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|row| row.iter().zip(power).map(|(w, p)| w * p).sum())
            .collect()
    }
}

/// Log-mel energies of every complete STFT frame, `frames × 64`.
pub fn log_mel_frames(w: &Waveform, bank: &MelFilterbank) -> Result<Vec<[f64; MEL_BINS]>> {
    if w.sample_rate_hz != SAMPLE_RATE {
        return Err(contract_err!("log_mel expects 16 kHz audio, got {} Hz", w.sample_rate_hz));
    }
    let window = hann(FRAME_LEN);
    let n = w.samples.len();
    let count = if n >= FRAME_LEN { 1 + (n - FRAME_LEN) / HOP } else { 0 };
    let mut frame = vec![0.0; FRAME_LEN];
    Ok((0..count)
        .map(|f| {
            let src = &w.samples[f * HOP..f * HOP + FRAME_LEN];
            for ((d, s), h) in frame.iter_mut().zip(src).zip(&window) {
                *d = s * h;
            }
            let mel = bank.apply(&power_spectrum(&frame));
            let mut out = [0.0; MEL_BINS];
            for (o, e) in out.iter_mut().zip(mel) {
                *o = libm::log(e + LOG_FLOOR);
            }
            out
        })
        .collect())
}

/// Number of windows for `w`: one per started second of audio, at least one.
pub fn window_count(w: &Waveform) -> usize {
    let sr = w.sample_rate_hz as usize;
    w.samples.len().div_ceil(sr).max(1)
}

/// Log-mel spectrogram with one window per second of audio.
pub fn log_mel(w: &Waveform) -> Result<Spectrogram> {
    log_mel_windows(w, window_count(w))
}

/// Log-mel spectrogram with exactly `windows` windows. Frames beyond the end
/// of the audio read as silence and are counted in `padded_frames`.
pub fn log_mel_windows(w: &Waveform, windows: usize) -> Result<Spectrogram> {
    if windows == 0 {
        return Err(contract_err!("log_mel needs at least one window"));
    }
    let bank = MelFilterbank::new();
    let frames = log_mel_frames(w, &bank)?;
    let silence = libm::log(LOG_FLOOR);
    let needed = windows * FRAMES_PER_WINDOW;
    let mut data = Vec::with_capacity(needed * MEL_BINS);
    for f in 0..needed {
        match frames.get(f) {
            Some(row) => data.extend_from_slice(row),
            None => data.extend(core::iter::repeat_n(silence, MEL_BINS)),
        }
    }
    let padded_frames = needed.saturating_sub(frames.len());
    Spectrogram::new(
        Tensor::new(vec![windows, FRAMES_PER_WINDOW, MEL_BINS], data)?,
        padded_frames,
    )
}

/// `amplitude · sin(2π f k / 16000)` plus optional Gaussian noise at the given
/// SNR (dB, relative to the tone's power). Samples are clamped to `[-1, 1]`.
pub fn synth_tone(
    freq_hz: f64,
    duration_s: f64,
    amplitude: f64,
    rng: &mut RngState,
    snr_db: Option<f64>,
) -> Result<Waveform> {
    if !(freq_hz > 0.0 && freq_hz < SAMPLE_RATE as f64 / 2.0) {
        return Err(contract_err!("tone frequency {} Hz outside (0, 8000)", freq_hz));
    }
    if !(0.0..=1.0).contains(&amplitude) || duration_s < 0.0 {
        return Err(contract_err!("invalid amplitude {} or duration {}", amplitude, duration_s));
    }
    let n = libm::round(duration_s * SAMPLE_RATE as f64) as usize;
    let sigma = snr_db.map(|snr| libm::sqrt(amplitude * amplitude / 2.0 / libm::pow(10.0, snr / 10.0)));
    let samples = (0..n)
        .map(|k| {
            let mut s = amplitude * libm::sin(2.0 * PI * freq_hz * k as f64 / SAMPLE_RATE as f64);
            if let Some(sigma) = sigma {
                s += sigma * rng.normal();
            }
            s.clamp(-1.0, 1.0)
        })
        .collect();
    Waveform::new(samples, SAMPLE_RATE)
}
