//! AVSBench-style directory layout:
//! `root/<video_id>/frames/%05d.png`, `root/<video_id>/audio.wav`,
//! `root/<video_id>/masks/%05d.png`.
use std::fs;
use std::path::{Path, PathBuf};

use lightavseg_core::audio::{log_mel_windows, Waveform};
use lightavseg_core::dataset::Scene;
use lightavseg_core::model::Batch;
use lightavseg_core::Tensor;

use crate::error::{format_err, io_err, Result};
use crate::image::{read_frame_png, read_mask_png, write_frame_png, write_mask_png};
use crate::wav::{read_wav, write_wav};

/// One video clip loaded from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub id: String,
    /// `[T, 3, H, W]`.
    pub frames: Tensor,
    pub waveform: Waveform,
    /// `[T, K, H, W]`.
    pub masks: Tensor,
}

impl Clip {
    pub fn from_scene(id: &str, s: &Scene) -> Self {
        Self { id: id.to_string(), frames: s.frames.clone(), waveform: s.waveform.clone(), masks: s.masks.clone() }
    }

    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    /// Pairs frame `t` with log-mel window `t`.
    pub fn to_batch(&self) -> Result<Batch> {
        let spec = log_mel_windows(&self.waveform, self.num_frames())?;
        Ok(Batch::new(self.frames.clone(), &spec, self.masks.clone())?)
    }
}

pub fn scene_id(index: usize) -> String {
    format!("scene_{index:05}")
}

/// Writes `clip` under `root/<clip.id>`. Binary masks go out as 0/255;
/// one-hot semantic masks as class indices.
pub fn write_clip(root: &Path, clip: &Clip) -> Result<()> {
    let dir = root.join(&clip.id);
    for sub in ["frames", "masks"] {
        let d = dir.join(sub);
        fs::create_dir_all(&d).map_err(io_err(&d))?;
    }
    let [t, k, h, w] = clip.masks.dims4()?;
    let indices = if k == 1 {
        clip.masks.clone()
    } else {
        let hw = h * w;
        let m = clip.masks.data();
        Tensor::from_fn(&[t, 1, h, w], |i| {
            let (f, p) = (i / hw, i % hw);
            (0..k).find(|&c| m[(f * k + c) * hw + p] > 0.0).map_or(0.0, |c| (c + 1) as f64)
        })
    };
    for f in 0..t {
        write_frame_png(&dir.join("frames").join(format!("{f:05}.png")), &clip.frames, f)?;
        write_mask_png(&dir.join("masks").join(format!("{f:05}.png")), &indices, f, k == 1)?;
    }
    write_wav(&dir.join("audio.wav"), &clip.waveform)
}

fn numbered_pngs(dir: &Path, id: &str, what: &str) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "png"))
        .collect();
    files.sort();
    for (i, p) in files.iter().enumerate() {
        let expect = format!("{i:05}.png");
        if p.file_name().is_none_or(|n| n.to_string_lossy() != expect) {
            return Err(format_err!("video `{id}`: {what} must be numbered {expect} onward, found {}", p.display()));
        }
    }
    Ok(files)
}

/// Reads one clip directory.
pub fn load_clip(dir: &Path, num_classes: usize) -> Result<Clip> {
    let id = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let frames = numbered_pngs(&dir.join("frames"), &id, "frames")?;
    let masks = numbered_pngs(&dir.join("masks"), &id, "masks")?;
    if frames.is_empty() {
        return Err(format_err!("video `{id}` has no frames"));
    }
    if frames.len() != masks.len() {
        return Err(format_err!("video `{id}` has {} frames but {} masks", frames.len(), masks.len()));
    }
    let load_all = |paths: &[PathBuf], f: &dyn Fn(&Path) -> Result<Tensor>| -> Result<Tensor> {
        let ts = paths.iter().map(|p| f(p)).collect::<Result<Vec<_>>>()?;
        let shape = ts[0].shape().to_vec();
        if let Some(t) = ts.iter().find(|t| t.shape() != shape.as_slice()) {
            return Err(format_err!("video `{id}`: image sizes differ ({:?} vs {:?})", shape, t.shape()));
        }
        let data = ts.iter().flat_map(|t| t.data().iter().copied()).collect();
        Ok(Tensor::new([&[ts.len()][..], &shape].concat(), data)?)
    };
    let frames = load_all(&frames, &read_frame_png)?;
    let masks = load_all(&masks, &|p| read_mask_png(p, num_classes))?;
    if frames.shape()[2..] != masks.shape()[2..] {
        return Err(format_err!(
            "video `{id}`: frame size {:?} differs from mask size {:?}",
            &frames.shape()[2..],
            &masks.shape()[2..]
        ));
    }
    let waveform = read_wav(&dir.join("audio.wav")).map_err(|e| format_err!("video `{id}`: {e}"))?;
    Ok(Clip { id, frames, waveform, masks })
}

/// Clip directories under `root` in name order; each is read on demand.
pub fn load_layout(root: &Path, num_classes: usize) -> Result<impl Iterator<Item = Result<Clip>>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(io_err(root))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs.into_iter().map(move |d| load_clip(&d, num_classes)))
}
