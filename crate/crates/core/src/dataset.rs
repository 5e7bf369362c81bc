//! Synthetic sounding-object scenes.
//!
//! Every scene holds up to two identical shapes, one per half of the frame.
//! A pure tone picks the sounding one through a slot→frequency table, so the
//! frames alone cannot tell which shape to segment.
use alloc::vec;
use alloc::vec::Vec;

use crate::audio::{log_mel_windows, synth_tone, Spectrogram, Waveform, MEL_BINS};
use crate::error::{contract_err, Result};
use crate::model::Batch;
use crate::rng::RngState;
use crate::tensor::Tensor;

pub const TONE_AMPLITUDE: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub n_scenes: usize,
    /// Square frame side.
    pub size: usize,
    /// Frames (and seconds of audio) per scene.
    pub frames: usize,
    /// 1 or 2.
    pub shapes: usize,
    /// Tone frequency in Hz for each shape slot.
    pub freq_table: Vec<f64>,
    /// Noise level of the tone; `None` for a clean tone.
    pub snr_db: Option<f64>,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n_scenes: 64,
            size: 64,
            frames: 1,
            shapes: 2,
            freq_table: vec![500.0, 2000.0],
            snr_db: Some(20.0),
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.shapes) {
            return Err(contract_err!("shapes per scene must be 1 or 2, got {}", self.shapes));
        }
        if self.size < 16 || self.frames == 0 {
            return Err(contract_err!("frame size {} (min 16) or frame count {} invalid", self.size, self.frames));
        }
        if self.freq_table.len() < self.shapes {
            return Err(contract_err!("{} frequencies for {} shape slots", self.freq_table.len(), self.shapes));
        }
        for (i, a) in self.freq_table.iter().enumerate() {
            if self.freq_table[..i].contains(a) {
                return Err(contract_err!("frequency table repeats {} Hz", a));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Rect,
    Circle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PlacedShape {
    pub kind: ShapeKind,
    pub cx: usize,
    pub cy: usize,
    /// Half-extent for rectangles, radius for circles.
    pub radius: usize,
}

impl PlacedShape {
    pub fn covers(&self, x: usize, y: usize) -> bool {
        let dx = x.abs_diff(self.cx);
        let dy = y.abs_diff(self.cy);
        match self.kind {
            ShapeKind::Rect => dx <= self.radius && dy <= self.radius,
            ShapeKind::Circle => dx * dx + dy * dy <= self.radius * self.radius,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneMeta {
    pub index: usize,
    pub shapes: Vec<PlacedShape>,
    pub sounding: usize,
    pub freq_hz: f64,
    pub color: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    /// `[T, 3, H, W]`, values `k/255`.
    pub frames: Tensor,
    /// `T` seconds at 16 kHz, values `k/32768`.
    pub waveform: Waveform,
    /// `[T, 1, H, W]` in `{0, 1}`.
    pub masks: Tensor,
    pub meta: SceneMeta,
}

impl Scene {
    pub fn spectrogram(&self) -> Result<Spectrogram> {
        log_mel_windows(&self.waveform, self.frames.shape()[0])
    }

    pub fn to_batch(&self) -> Result<Batch> {
        Batch::new(self.frames.clone(), &self.spectrogram()?, self.masks.clone())
    }
}

fn q8(v: f64) -> f64 {
    libm::round(v.clamp(0.0, 1.0) * 255.0) / 255.0
}

fn q16(v: f64) -> f64 {
    libm::round(v * 32768.0).clamp(-32768.0, 32767.0) / 32768.0
}

/// Scene `index` of `spec`.
pub fn generate_scene(spec: &DatasetSpec, index: usize) -> Result<Scene> {
    generate_scene_with(spec, index, None)
}

/// Like [`generate_scene`], optionally forcing the sounding slot. Frames do
/// not depend on the slot.
pub fn generate_scene_with(spec: &DatasetSpec, index: usize, sounding: Option<usize>) -> Result<Scene> {
    spec.validate()?;
    if index >= spec.n_scenes {
        return Err(contract_err!("scene index {} out of range for {} scenes", index, spec.n_scenes));
    }
    let mut rng = RngState::new(spec.seed).fork(index as u64);
    let drawn = rng.below(spec.shapes as u64) as usize;
    let sounding = sounding.unwrap_or(drawn);
    if sounding >= spec.shapes {
        return Err(contract_err!("sounding slot {} but only {} shapes", sounding, spec.shapes));
    }
    let s = spec.size;
    let kind = if rng.below(2) == 0 { ShapeKind::Rect } else { ShapeKind::Circle };
    let radius = s / 10 + rng.below((s / 16 + 1) as u64) as usize;
    let mut pick = |lo: usize, hi: usize| lo + rng.below((hi - lo + 1) as u64) as usize;
    let shapes: Vec<PlacedShape> = (0..spec.shapes)
        .map(|slot| {
            let (xlo, xhi) = match (spec.shapes, slot) {
                (1, _) => (radius, s - 1 - radius),
                (_, 0) => (radius, s / 2 - 1 - radius),
                _ => (s / 2 + radius, s - 1 - radius),
            };
            PlacedShape { kind, cx: pick(xlo, xhi), cy: pick(radius, s - 1 - radius), radius }
        })
        .collect();
    let color = [0.6 + 0.4 * rng.unit(), 0.6 * rng.unit(), 0.6 * rng.unit()];
    let tilt = [rng.uniform(-0.15, 0.15), rng.uniform(-0.15, 0.15)];

    let mut texture = rng.fork(1);
    let t = spec.frames;
    let mut frames = Tensor::zeros(&[t, 3, s, s]);
    let mut masks = Tensor::zeros(&[t, 1, s, s]);
    let fd = frames.data_mut();
    for y in 0..s {
        for x in 0..s {
            let ramp = 0.35 + tilt[0] * x as f64 / s as f64 + tilt[1] * y as f64 / s as f64;
            let bg: [f64; 3] = core::array::from_fn(|c| ramp + 0.05 * c as f64 + texture.uniform(-0.06, 0.06));
            let inside = shapes.iter().any(|sh| sh.covers(x, y));
            for c in 0..3 {
                let v = q8(if inside { color[c] } else { bg[c] });
                for f in 0..t {
                    fd[((f * 3 + c) * s + y) * s + x] = v;
                }
            }
        }
    }
    let md = masks.data_mut();
    for y in 0..s {
        for x in 0..s {
            if shapes[sounding].covers(x, y) {
                for f in 0..t {
                    md[(f * s + y) * s + x] = 1.0;
                }
            }
        }
    }

    let freq_hz = spec.freq_table[sounding];
    let mut noise = rng.fork(2);
    let tone = synth_tone(freq_hz, t as f64, TONE_AMPLITUDE, &mut noise, spec.snr_db)?;
    let waveform = Waveform::new(tone.samples().iter().map(|&v| q16(v)).collect(), tone.sample_rate())?;
    Ok(Scene {
        frames,
        waveform,
        masks,
        meta: SceneMeta { index, shapes, sounding, freq_hz, color },
    })
}

/// All scenes of `spec`, converted to model batches.
pub fn generate_batches(spec: &DatasetSpec) -> Result<Vec<Batch>> {
    (0..spec.n_scenes).map(|i| generate_scene(spec, i)?.to_batch()).collect()
}

/// Mel bin index nearest to each table frequency; handy for checking that
/// the tones are separable.
pub fn table_mel_bins(spec: &DatasetSpec) -> Vec<usize> {
    let centers = crate::audio::MelFilterbank::new().center_hz();
    spec.freq_table
        .iter()
        .map(|&f| {
            (0..MEL_BINS)
                .min_by(|&a, &b| (centers[a] - f).abs().total_cmp(&(centers[b] - f).abs()))
                .unwrap_or(0)
        })
        .collect()
}
