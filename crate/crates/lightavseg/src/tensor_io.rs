//! Flat little-endian binaries.
//!
//! `LMEL`: magic, `u32 T`, then `T·96·64` f32 (window, frame, mel bin).
//! `TNSR`: magic, `u32 rank`, `rank` × `u64` extents, then f64 data row-major.
use std::io::{Read, Write};

use lightavseg_core::audio::{Spectrogram, FRAMES_PER_WINDOW, MEL_BINS};
use lightavseg_core::Tensor;

use crate::error::{format_err, Result};

pub const LMEL_MAGIC: &[u8; 4] = b"LMEL";
pub const TNSR_MAGIC: &[u8; 4] = b"TNSR";

fn io(e: std::io::Error) -> crate::Error {
    format_err!("{e}")
}

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0; 4];
    r.read_exact(&mut b).map_err(io)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0; 8];
    r.read_exact(&mut b).map_err(io)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0; n * 8];
    r.read_exact(&mut buf).map_err(io)?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

pub(crate) fn expect_magic(r: &mut impl Read, magic: &[u8]) -> Result<()> {
    let mut b = vec![0; magic.len()];
    r.read_exact(&mut b).map_err(io)?;
    if b != magic {
        return Err(format_err!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&b),
            String::from_utf8_lossy(magic)
        ));
    }
    Ok(())
}

pub fn write_lmel(w: &mut impl Write, s: &Spectrogram) -> Result<()> {
    w.write_all(LMEL_MAGIC).map_err(io)?;
    w.write_all(&(s.num_windows() as u32).to_le_bytes()).map_err(io)?;
    let bytes: Vec<u8> = s.windows().data().iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    w.write_all(&bytes).map_err(io)
}

/// Reads an `LMEL` blob. Padding information is not stored, so
/// `padded_frames` is 0.
pub fn read_lmel(r: &mut impl Read) -> Result<Spectrogram> {
    expect_magic(r, LMEL_MAGIC)?;
    let t = read_u32(r)? as usize;
    let mut buf = vec![0; t * FRAMES_PER_WINDOW * MEL_BINS * 4];
    r.read_exact(&mut buf).map_err(io)?;
    let data = buf.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
    Ok(Spectrogram::new(Tensor::new(vec![t, FRAMES_PER_WINDOW, MEL_BINS], data)?, 0)?)
}

pub fn write_tensor(w: &mut impl Write, t: &Tensor) -> Result<()> {
    w.write_all(TNSR_MAGIC).map_err(io)?;
    write_shape_and_data(w, t)
}

pub(crate) fn write_shape_and_data(w: &mut impl Write, t: &Tensor) -> Result<()> {
    w.write_all(&(t.shape().len() as u32).to_le_bytes()).map_err(io)?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes()).map_err(io)?;
    }
    let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    w.write_all(&bytes).map_err(io)
}

pub fn read_tensor(r: &mut impl Read) -> Result<Tensor> {
    expect_magic(r, TNSR_MAGIC)?;
    read_shape_and_data(r)
}

pub(crate) fn read_shape_and_data(r: &mut impl Read) -> Result<Tensor> {
    let rank = read_u32(r)? as usize;
    if rank > 8 {
        return Err(format_err!("tensor rank {rank} is implausible"));
    }
    let shape = (0..rank).map(|_| read_u64(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let n = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .filter(|&n| n <= 1 << 32)
        .ok_or_else(|| format_err!("tensor shape {shape:?} is too large"))?;
    Ok(Tensor::new(shape, read_f64s(r, n)?)?)
}
