//! 8-bit PNG frames and masks.
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use lightavseg_core::Tensor;

use crate::error::{format_err, io_err, Result};

fn write_png(path: &Path, w: usize, h: usize, color: png::ColorType, data: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let err = |e: png::EncodingError| format_err!("{}: {e}", path.display());
    let mut writer = enc.write_header().map_err(err)?;
    writer.write_image_data(data).map_err(err)?;
    writer.finish().map_err(err)
}

/// Decoded 8-bit image: `(width, height, channels, bytes)`.
fn read_png(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let file = File::open(path).map_err(io_err(path))?;
    let err = |e: png::DecodingError| format_err!("{}: {e}", path.display());
    let mut dec = png::Decoder::new(std::io::BufReader::new(file));
    dec.set_transformations(png::Transformations::EXPAND);
    let mut reader = dec.read_info().map_err(err)?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(err)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(format_err!("{}: expected 8-bit samples, got {:?}", path.display(), info.bit_depth));
    }
    let channels = info.color_type.samples();
    buf.truncate(info.buffer_size());
    Ok((info.width as usize, info.height as usize, channels, buf))
}

fn to_u8(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Writes frame `t` of `[T, 3, H, W]` frames in `[0, 1]` as RGB8.
pub fn write_frame_png(path: &Path, frames: &Tensor, t: usize) -> Result<()> {
    let [_, c, h, w] = frames.dims4()?;
    if c != 3 {
        return Err(format_err!("frames must have 3 channels, got {c}"));
    }
    let hw = h * w;
    let base = t * 3 * hw;
    let d = frames.data();
    let bytes: Vec<u8> = (0..hw).flat_map(|i| (0..3).map(move |ch| to_u8(d[base + ch * hw + i]))).collect();
    write_png(path, w, h, png::ColorType::Rgb, &bytes)
}

/// Reads an RGB (or RGBA, alpha dropped) PNG as `[3, H, W]` with values `k/255`.
pub fn read_frame_png(path: &Path) -> Result<Tensor> {
    let (w, h, ch, bytes) = read_png(path)?;
    if ch < 3 {
        return Err(format_err!("{}: frames must be RGB, got {ch} channel(s)", path.display()));
    }
    let hw = h * w;
    Ok(Tensor::from_fn(&[3, h, w], |i| bytes[(i % hw) * ch + i / hw] as f64 / 255.0))
}

/// Writes frame `t` of a `[T, 1, H, W]` grid: 0/255 when `binary`, else the
/// raw values as class indices.
pub fn write_mask_png(path: &Path, masks: &Tensor, t: usize, binary: bool) -> Result<()> {
    let [_, k, h, w] = masks.dims4()?;
    if k != 1 {
        return Err(format_err!("mask grid must have one channel, got {k}"));
    }
    let hw = h * w;
    let bytes: Vec<u8> = masks.data()[t * hw..(t + 1) * hw]
        .iter()
        .map(|&v| if binary { if v > 0.0 { 255 } else { 0 } } else { v.round().clamp(0.0, 255.0) as u8 })
        .collect();
    write_png(path, w, h, png::ColorType::Grayscale, &bytes)
}

/// Reads a grayscale mask. With `num_classes == 1` pixels must be 0 or 255 and
/// the result is `[1, H, W]` in {0, 1}. Otherwise pixels are class indices
/// (0 = background) and the result is one-hot `[K, H, W]` over classes `1..=K`.
pub fn read_mask_png(path: &Path, num_classes: usize) -> Result<Tensor> {
    let (w, h, ch, bytes) = read_png(path)?;
    if ch != 1 {
        return Err(format_err!("{}: masks must be grayscale, got {ch} channels", path.display()));
    }
    let hw = h * w;
    if num_classes == 1 {
        if let Some(v) = bytes.iter().find(|&&v| v != 0 && v != 255) {
            return Err(format_err!("{}: binary mask holds value {v}, expected 0 or 255", path.display()));
        }
        return Ok(Tensor::from_fn(&[1, h, w], |i| (bytes[i] == 255) as u8 as f64));
    }
    if let Some(v) = bytes.iter().find(|&&v| v as usize > num_classes) {
        return Err(format_err!("{}: class index {v} exceeds {num_classes} classes", path.display()));
    }
    Ok(Tensor::from_fn(&[num_classes, h, w], |i| (bytes[i % hw] as usize == i / hw + 1) as u8 as f64))
}
